import math

import numpy as np
import pytest
from scipy.stats import norm

from app.control import Control
from app.errors import ConfigError, NumericWarning
from app.mc import MIN_PATHS, TerminalEvent, estimate_event, ldp_sweep, weight_mean, write_sweep_csv
from app.sde import SimConfig


@pytest.fixture(name="coarse")
def coarse_fixture():
    return SimConfig(epsilon=0.1, delta=0.01, T=1.0, n_steps=20, seed=9)


def brownian_tail(b: float, epsilon: float) -> float:
    """P(sqrt(eps) W_1 >= b)."""
    return float(norm.sf(b / math.sqrt(epsilon)))


# ============================================================================
# Events
# ============================================================================

def test_event_membership():
    event = TerminalEvent([1.0], 0.5)
    np.testing.assert_array_equal(event.contains(np.array([[0.4], [0.5], [2.0]])), [False, True, True])
    assert TerminalEvent.whole_space().is_whole_space
    assert event.to_dict() == {"kind": "half-space", "a": [1.0], "b": 0.5}


def test_event_needs_both_parts():
    with pytest.raises(ConfigError):
        TerminalEvent([1.0])


# ============================================================================
# estimate_event
# ============================================================================

def test_whole_space_has_probability_one(lin1d, coarse):
    est = estimate_event(lin1d, coarse, TerminalEvent.whole_space(), MIN_PATHS)
    assert est.p_hat == 1.0
    assert est.se == 0.0
    assert est.hits == MIN_PATHS


def test_estimate_validation(lin1d, coarse):
    event = TerminalEvent.whole_space()
    with pytest.raises(ConfigError):
        estimate_event(lin1d, coarse, event, MIN_PATHS - 1)
    with pytest.raises(ConfigError):
        estimate_event(lin1d, coarse, event, MIN_PATHS, method="splitting")
    with pytest.raises(ConfigError):
        estimate_event(lin1d, coarse, event, MIN_PATHS, method="tilted")


def test_naive_estimate_of_gaussian_tail(decoupled):
    config = SimConfig(epsilon=0.5, delta=0.05, T=1.0, n_steps=20, seed=1)
    est = estimate_event(decoupled, config, TerminalEvent([1.0], 0.5), 4000)
    assert est.p_hat == pytest.approx(brownian_tail(0.5, 0.5), abs=4 * est.se)
    assert est.method == "naive"
    assert est.ess is None


def test_tilted_estimate_of_rare_tail(decoupled, coarse):
    tilt = Control.constant(1.0, 10, 1.0)
    est = estimate_event(decoupled, coarse, TerminalEvent([1.0], 1.0), 2000, method="tilted", tilt=tilt)
    exact = brownian_tail(1.0, 0.1)
    assert est.p_hat == pytest.approx(exact, abs=5 * est.se)
    assert est.se / est.p_hat < 0.1
    # about half the tilted paths land in the event
    assert 800 < est.hits < 1200
    assert est.ess > 50


def test_likelihood_ratio_has_unit_mean(lin1d, coarse):
    mean, se = weight_mean(lin1d, coarse, Control.constant(1.0, 10, 0.5), 2000)
    assert mean == pytest.approx(1.0, abs=5 * se)


def test_no_hits_warns(decoupled, coarse):
    with pytest.warns(NumericWarning):
        est = estimate_event(decoupled, coarse, TerminalEvent([1.0], 100.0), MIN_PATHS, method="tilted",
                             tilt=Control.zero(1.0, 10))
    assert est.p_hat == 0.0
    assert est.ess == 0.0


# ============================================================================
# ldp_sweep
# ============================================================================

def test_epsilons_must_decrease(lin1d, coarse):
    event = TerminalEvent.whole_space()
    with pytest.raises(ConfigError):
        ldp_sweep(lin1d, coarse, event, [0.1, 0.2], MIN_PATHS, 0.0, seed=0, method="naive")
    with pytest.raises(ConfigError):
        ldp_sweep(lin1d, coarse, event, [], MIN_PATHS, 0.0, seed=0, method="naive")


def test_single_rung_has_no_trend(lin1d, coarse):
    sweep = ldp_sweep(lin1d, coarse, TerminalEvent.whole_space(), [0.1], MIN_PATHS, 0.0, seed=0, method="naive")
    assert len(sweep.rows) == 1
    assert sweep.trend is None
    assert sweep.monotone is None
    assert sweep.rows[0]["delta"] == pytest.approx(0.01)
    assert sweep.final_gap == pytest.approx(0.0)


def test_unreachable_rung_is_not_estimable(decoupled, coarse):
    sweep = ldp_sweep(decoupled, coarse, TerminalEvent([1.0], 100.0), [0.2, 0.1], MIN_PATHS, 5000.0, seed=0,
                      method="naive")
    assert not any(r["estimable"] for r in sweep.rows)
    assert math.isnan(sweep.final_gap)
    assert sweep.trend is None


def test_tilted_sweep_approaches_the_rate(decoupled, coarse, tmp_path):
    tilt = Control.constant(1.0, 10, 1.0)
    sweep = ldp_sweep(decoupled, coarse, TerminalEvent([1.0], 1.0), [0.2, 0.1, 0.05], 4000, 0.5, seed=4,
                      delta_rule=lambda e: e / 10, tilt=tilt)
    exact = [e * math.log(brownian_tail(1.0, e)) for e in (0.2, 0.1, 0.05)]
    got = [r["eps_log_p"] for r in sweep.rows]
    np.testing.assert_allclose(got, exact, atol=0.025)
    assert [r["delta"] for r in sweep.rows] == pytest.approx([0.02, 0.01, 0.005])
    assert sweep.monotone
    assert sweep.final_gap == pytest.approx(abs(exact[-1] + 0.5), abs=0.02)

    path = write_sweep_csv(sweep, tmp_path / "sweep.csv")
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("epsilon,delta,p_hat,se,eps_log_p")
    assert sweep.summary()["monotone"] is True


def test_tilted_and_naive_agree_on_moderate_event(decoupled):
    config = SimConfig(epsilon=0.5, delta=0.05, T=1.0, n_steps=20, seed=6)
    event = TerminalEvent([1.0], 0.3)
    naive = estimate_event(decoupled, config, event, 4000)
    tilted = estimate_event(decoupled, config, event, 4000, method="tilted", tilt=Control.constant(1.0, 10, 0.3))
    assert abs(naive.p_hat - tilted.p_hat) <= 4 * math.hypot(naive.se, tilted.se)
    assert naive.p_hat > 0.01
