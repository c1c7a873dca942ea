import math

import numpy as np
import pytest

from app.averaging import AveragedDrift
from app.control import Control
from app.errors import ConfigError
from app.model import make_builtin
from app.ratefn import (
    PathTarget,
    RateProblem,
    TerminalHalfspace,
    TerminalPoint,
    constant,
    lq_rate,
    minimize_rate,
    rate_gradient_check,
    terminal_ramp,
    variational_check,
    zero,
)


def brownian_problem(constraint, M=4):
    model = make_builtin("LIN1D", {"a1": 0.0, "b1": 0.0})
    return RateProblem(AveragedDrift.analytic(model), model.sigma1, 0.0, constraint, T=1.0, M=M)


# ============================================================================
# Closed form
# ============================================================================

def test_lq_rate_without_drift():
    assert lq_rate(0.0, 1.0, 0.0, 1.0, 1.0) == pytest.approx(0.5)
    assert lq_rate(1.0, 3.0, 0.0, 2.0, 0.5) == pytest.approx(4.0 / (2 * 4.0 * 0.5))


def test_lq_rate_with_drift():
    c = -1.0
    expected = (0.5 - math.exp(-1.0)) ** 2 / (2 * (1 - math.exp(-2.0)) / 2)
    assert lq_rate(1.0, 0.5, c, 1.0, 1.0) == pytest.approx(expected)


def test_lq_rate_without_noise():
    assert lq_rate(1.0, 1.0, 0.0, 0.0, 1.0) == 0.0
    assert lq_rate(1.0, 2.0, 0.0, 0.0, 1.0) == math.inf


# ============================================================================
# Minimisation
# ============================================================================

def test_problem_defaults_and_validation():
    problem = brownian_problem(TerminalPoint(1.0))
    assert problem.level == 9
    assert problem.dt == pytest.approx(0.25)
    with pytest.raises(ConfigError):
        brownian_problem(TerminalPoint(1.0), M=0)
    with pytest.raises(ConfigError):
        TerminalPoint(1.0, tol=0.0)


def test_brownian_terminal_point():
    result = minimize_rate(brownian_problem(TerminalPoint(1.0)), starts=2, seed=0)
    assert result.feasible
    assert result.value == pytest.approx(0.5, abs=1e-3)
    assert result.residual <= 1e-4
    # the minimum-norm control is flat
    np.testing.assert_allclose(result.minimizer.hdot1[:, 0], 1.0, atol=1e-2)
    assert result.to_dict()["norm_sq"] == pytest.approx(1.0, abs=2e-3)


def test_linear_drift_matches_closed_form():
    model = make_builtin("LIN1D", {"a1": -0.5, "b1": -0.5})
    problem = RateProblem(AveragedDrift.analytic(model), model.sigma1, 1.0, TerminalPoint(0.5), T=1.0, M=8)
    result = minimize_rate(problem, starts=2, seed=1)
    assert result.value == pytest.approx(lq_rate(1.0, 0.5, -1.0, 1.0, 1.0), rel=1e-2)


def test_halfspace_target():
    result = minimize_rate(brownian_problem(TerminalHalfspace([1.0], 1.0)), starts=2, seed=0)
    assert result.value == pytest.approx(0.5, abs=1e-3)


def test_zero_control_shortcut():
    result = minimize_rate(brownian_problem(TerminalHalfspace([1.0], -1.0)), starts=0)
    assert result.value == 0.0
    assert result.winner is None
    assert result.minimizer.norm_sq == 0.0


def test_starts_must_be_positive_when_optimising():
    with pytest.raises(ConfigError):
        minimize_rate(brownian_problem(TerminalPoint(1.0)), starts=0)


def test_unreachable_target_has_infinite_rate():
    model = make_builtin("LIN1D", {"a1": 0.0, "b1": 0.0, "s1": 0.0})
    problem = RateProblem(AveragedDrift.analytic(model), model.sigma1, 0.0, TerminalPoint(1.0), T=1.0, M=2)
    result = minimize_rate(problem, starts=1)
    assert not result.feasible
    assert result.minimizer is None
    assert result.to_dict()["value"] == "inf"


def test_path_target():
    problem = brownian_problem(PathTarget(lambda t: t, tol=1e-2))
    result = minimize_rate(problem, starts=1, seed=2)
    assert result.feasible
    assert result.value == pytest.approx(0.5, abs=1e-2)


def test_gradient_check():
    problem = brownian_problem(TerminalPoint(1.0))
    report = rate_gradient_check(problem, Control(1.0, [0.2, 0.4, 0.6, 0.8]))
    assert report["max_relative_deviation"] < 1e-4
    with pytest.raises(ConfigError):
        rate_gradient_check(problem, Control(1.0, [0.2, 0.4, 0.6, 0.8]), step=1e-9)
    with pytest.raises(ConfigError):
        rate_gradient_check(problem, Control(1.0, [0.2, 0.4]))


# ============================================================================
# Variational representation
# ============================================================================

def test_variational_with_zero_functional(lin1d, sim):
    report = variational_check(lin1d, sim, zero(), [Control.zero(1.0, 10), Control.constant(1.0, 10, 0.5)],
                               n_paths=50, seed=1)
    assert report["lhs"] == pytest.approx(0.0, abs=1e-12)
    assert report["rhs"] == 0.0
    assert report["best"] == 0
    assert report["holds"]


def test_variational_with_constant_functional(lin1d, sim):
    report = variational_check(lin1d, sim, constant(0.7), [Control.zero(1.0, 10)], n_paths=50, seed=1)
    assert report["lhs"] == pytest.approx(0.7, abs=1e-12)
    assert report["lhs_se"] == 0.0
    assert report["rhs"] == pytest.approx(0.7)
    assert report["holds"]


def test_variational_inequality_with_ramp(lin1d, sim):
    controls = [Control.zero(1.0, 10), Control.constant(1.0, 10, 1.0)]
    report = variational_check(lin1d, sim, terminal_ramp(1.0), controls, n_paths=2000, seed=3)
    assert report["holds"]
    assert not report["lhs_unreliable"]
    assert len(report["candidates"]) == 2


def test_variational_needs_controls(lin1d, sim):
    with pytest.raises(ConfigError):
        variational_check(lin1d, sim, zero(), [], n_paths=10, seed=0)
