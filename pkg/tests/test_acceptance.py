import pytest

from app import acceptance
from app.acceptance import SCALES, SUITES, run_suites
from app.errors import ConfigError


def test_deterministic_suites_pass():
    results = run_suites("quick", seed=0, only=["modulus", "determinism", "continuity"])
    assert [r.name for r in results] == ["modulus", "determinism", "continuity"]
    for r in results:
        assert r.passed, r.detail
        assert r.seconds >= 0
        assert "seconds" not in r.to_dict()


def test_unknown_scale_and_suite():
    with pytest.raises(ConfigError):
        run_suites("huge")
    with pytest.raises(ConfigError) as exc:
        run_suites("quick", only=["modulus", "nope"])
    assert exc.value.payload["unknown"] == ["nope"]


def test_raising_suite_counts_as_failure(monkeypatch):
    def broken(scale, seed, parallelism):
        raise RuntimeError("boom")

    monkeypatch.setitem(acceptance.SUITES, "modulus", broken)
    [result] = run_suites("quick", only=["modulus"])
    assert not result.passed
    assert result.detail == {"error": "RuntimeError", "message": "boom"}
    assert result.to_dict()["name"] == "modulus"


def test_registry_covers_both_scales():
    assert set(SCALES) == {"quick", "full"}
    assert SCALES["full"].sweep_paths >= SCALES["quick"].sweep_paths
    assert "sweep" in SUITES and "rate" in SUITES
