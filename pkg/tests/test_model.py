import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.errors import ConfigError, ModelError
from app.model import (
    AssumptionProfile,
    ModelSpec,
    check_dissipativity,
    check_growth,
    describe,
    make_builtin,
    psi,
)


def test_make_builtin_defaults(lin1d):
    assert lin1d.name == "LIN1D"
    assert lin1d.params == {"a1": 0.5, "b1": -0.5, "s1": 1.0, "s2": 1.0}
    assert lin1d.assumptions.beta1 == 1.0
    assert lin1d.dim_slow == 1 and lin1d.dim_fast == 1


def test_make_builtin_overrides_params():
    model = make_builtin("lin1d", {"a1": 0.5, "b1": 0.5, "s2": 2.0})

    # fbar = (a1 + b1) x
    assert model.fbar_exact(np.array([[2.0]]))[0, 0] == pytest.approx(2.0)
    assert model.assumptions.gamma == 4.0


def test_make_builtin_rejects_unknown_model():
    with pytest.raises(ConfigError):
        make_builtin("DUFFING")


def test_make_builtin_rejects_unknown_param():
    with pytest.raises(ConfigError) as exc:
        make_builtin("LIN1D", {"c": 1.0})
    assert "allowed" in exc.value.payload


def test_make_builtin_rejects_negative_or_non_finite_amplitude():
    with pytest.raises(ConfigError):
        make_builtin("LIN1D", {"s1": -1.0})
    with pytest.raises(ConfigError):
        make_builtin("NONLIP1D", {"s2": math.inf})


def test_zero_noise_amplitude_is_allowed():
    model = make_builtin("LIN1D", {"s1": 0.0})
    sigma = model.sigma1(np.zeros((3, 1)))
    assert sigma.shape == (3, 1, 1)
    assert np.all(sigma == 0.0)


def test_coefficient_shapes(nonlip):
    x = np.linspace(-1, 1, 6).reshape(3, 2, 1)
    y = np.ones_like(x)
    assert nonlip.f1(x, y).shape == (3, 2, 1)
    assert nonlip.f2(x, y).shape == (3, 2, 1)
    assert nonlip.sigma2(x, y).shape == (3, 2, 1, 1)


def test_psi_values():
    assert psi(np.array([0.0]))[0] == 0.0
    assert psi(np.array([1.0]))[0] == pytest.approx(0.0)
    assert psi(np.array([0.5]))[0] == pytest.approx(0.5 * math.log(2.0))
    # below e^-cap10 the log is capped
    tiny = 1e-6
    assert psi(np.array([tiny]), cap10=10.0)[0] == pytest.approx(10.0 * tiny)


def test_nonlip_averaged_drift(nonlip):
    x = np.array([[0.5]])
    assert nonlip.fbar_exact(x)[0, 0] == pytest.approx(0.5 * math.log(2.0) + 0.5)


def test_describe_is_json_ready(lin1d):
    info = describe(lin1d)
    assert info["name"] == "LIN1D"
    assert info["assumptions"]["lambda"] == 0.0
    assert info["assumptions"]["eta"] == 0.1


def test_assumption_profile_rejects_eta_out_of_range():
    with pytest.raises(ValidationError):
        AssumptionProfile(beta1=1, beta2=1, gamma=1, lip_const_C=1, eta=0.5)


def test_dissipativity_holds_for_builtins(lin1d, nonlip):
    for model in (lin1d, nonlip):
        report = check_dissipativity(model, 2000, 5.0, seed=1)
        assert report.passed
        assert report.moment_passed
        assert report.max_violation <= 1e-12


def _expanding_model(lin1d):
    return ModelSpec(
        name="EXPANDING",
        dim_slow=1,
        dim_fast=1,
        f1=lin1d.f1,
        sigma1=lin1d.sigma1,
        f2=lambda x, y: y,
        sigma2=lin1d.sigma2,
        assumptions=lin1d.assumptions,
    )


def test_dissipativity_detects_expanding_fast_drift(lin1d):
    report = check_dissipativity(_expanding_model(lin1d), 500, 2.0, seed=0)

    assert not report.passed
    assert report.max_violation > 0
    assert set(report.worst_input) == {"x1", "x2", "y1", "y2"}


def test_dissipativity_reports_non_finite_coefficients(lin1d):
    broken = ModelSpec(
        name="BROKEN",
        dim_slow=1,
        dim_fast=1,
        f1=lin1d.f1,
        sigma1=lin1d.sigma1,
        f2=lambda x, y: np.full(np.broadcast_shapes(x.shape, y.shape), np.nan),
        sigma2=lin1d.sigma2,
        assumptions=lin1d.assumptions,
    )
    with pytest.raises(ModelError) as exc:
        check_dissipativity(broken, 10, 1.0, seed=0)
    assert "y1" in exc.value.payload


def test_dissipativity_rejects_bad_sampling(lin1d):
    with pytest.raises(ConfigError):
        check_dissipativity(lin1d, 0, 1.0, seed=0)
    with pytest.raises(ConfigError):
        check_dissipativity(lin1d, 10, -1.0, seed=0)


def test_check_growth(lin1d):
    result = check_growth(lin1d, 1000, 3.0, seed=0)
    assert result["passed"]
    assert result["estimated_constant"] <= 1.0
