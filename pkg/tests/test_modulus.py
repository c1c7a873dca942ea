import math

import numpy as np
import pytest

from app.errors import ConfigError, DomainError
from app.modulus import (
    StepFunction,
    bihari_bound,
    bihari_exponent_bound,
    bihari_linear_bound,
    check_rho_properties,
    concavity_violation,
    modulus_spec,
    monotonicity_violation,
    rho,
)


def test_rho_below_and_above_eta():
    spec = modulus_spec(0.1)
    assert rho(spec, 0.05) == pytest.approx(0.05 * math.log(20.0))
    # tangent continuation beyond eta
    expected = 0.1 * math.log(10.0) + (math.log(10.0) - 1.0) * 0.4
    assert rho(spec, 0.5) == pytest.approx(expected)


def test_rho_is_continuous_at_eta():
    spec = modulus_spec(0.2)
    below = rho(spec, 0.2 * (1 - 1e-12))
    above = rho(spec, 0.2 * (1 + 1e-12))
    assert abs(above - below) <= 1e-10


def test_rho_at_zero_and_scalar_type():
    spec = modulus_spec(0.1)
    value = rho(spec, 0.0)
    assert value == 0.0
    assert isinstance(value, float)
    assert rho(spec, np.array([0.0, 0.01])).shape == (2,)


def test_rho_rejects_negative_and_nan():
    spec = modulus_spec(0.1)
    with pytest.raises(DomainError):
        rho(spec, -1e-3)
    with pytest.raises(DomainError):
        rho(spec, np.array([0.1, np.nan]))


def test_rho_zero_eta_is_square_of_root():
    spec = modulus_spec(0.1, "rho_0_eta")
    x = 0.0025
    assert rho(spec, x) == pytest.approx((0.05 * math.log(20.0)) ** 2)


def test_modulus_spec_rejects_eta_out_of_range():
    with pytest.raises(ConfigError):
        modulus_spec(0.5)
    with pytest.raises(ConfigError):
        modulus_spec(0.0)


def test_rho_is_concave_on_log_grid():
    grid = np.logspace(-8, 1, 10_000)
    assert concavity_violation(rho(modulus_spec(0.1), grid), grid) <= 1e-10


def test_concavity_and_monotonicity_helpers():
    grid = np.linspace(0.0, 1.0, 11)
    assert concavity_violation(grid ** 2, grid) > 0
    assert concavity_violation(np.sqrt(grid), grid) <= 0
    assert monotonicity_violation(np.array([1.0, 2.0, 1.5])) == pytest.approx(0.5)
    assert monotonicity_violation(np.array([1.0])) == 0.0


def test_check_rho_properties_passes():
    grid = np.logspace(-8, 1, 10_000)
    report = check_rho_properties(0.2, 0.1, 2.0, grid)

    assert report.passed
    assert report.monotonicity_violation <= 1e-12
    assert report.power_violation <= 1e-12
    # above eta the tangent continuation breaks the power inequality
    assert report.power_gap_above_eta > 0


def test_check_rho_properties_rejects_bad_inputs():
    grid = np.logspace(-3, 0, 10)
    with pytest.raises(ConfigError):
        check_rho_properties(0.1, 0.2, 2.0, grid)
    with pytest.raises(ConfigError):
        check_rho_properties(0.2, 0.1, 1.0, grid)
    with pytest.raises(ConfigError):
        check_rho_properties(0.2, 0.1, 2.0, [0.0, 0.5])


def test_step_function_integral():
    q = StepFunction([0.0, 0.5, 1.0], [1.0, 3.0])
    assert q.integral(1.0) == pytest.approx(2.0)
    assert q.integral(0.75) == pytest.approx(1.25)
    assert q.integral(0.0) == 0.0


def test_step_function_validation():
    with pytest.raises(ConfigError):
        StepFunction([0.0, 1.0], [1.0, 2.0])
    with pytest.raises(ConfigError):
        StepFunction([0.0, 1.0], [-1.0])


def test_bihari_bound_linear_matches_gronwall():
    curve = bihari_bound(1.0, 2.0, "linear", 1.0)
    assert curve.bound[0] == 1.0
    np.testing.assert_allclose(curve.bound, np.exp(2.0 * curve.times), rtol=1e-8)


def test_bihari_bound_with_step_forcing():
    q = StepFunction([0.0, 0.5, 1.0], [0.0, 2.0])
    curve = bihari_bound(0.5, q, "linear", 1.0, n_grid=4)
    np.testing.assert_allclose(curve.bound, 0.5 * np.exp(q.integral(curve.times)), rtol=1e-8)


def test_bihari_bound_matches_exponent_form():
    curve = bihari_bound(0.01, 1.0, modulus_spec(0.3), 1.0)
    np.testing.assert_allclose(curve.bound, bihari_exponent_bound(0.01, curve.forcing), atol=1e-6)
    assert curve.bound[-1] == pytest.approx(0.01 ** math.exp(-1.0), abs=1e-6)


def test_bihari_bound_for_squared_modulus():
    # below eta^2 the integral of 1 / rho_0_eta is -4 / log y
    curve = bihari_bound(1e-4, 1.0, modulus_spec(0.3, "rho_0_eta"), 1.0)
    expected = np.exp(1.0 / (1.0 / math.log(1e-4) - curve.times / 4.0))
    np.testing.assert_allclose(curve.bound, expected, rtol=1e-6)
    assert curve.bound[-1] < modulus_spec(0.3, "rho_0_eta").kink


def test_bihari_bound_zero_forcing_returns_f0():
    curve = bihari_bound(0.3, 0.0, modulus_spec(0.1), 2.0, n_grid=5)
    assert np.all(curve.bound == 0.3)


def test_bihari_bound_validation():
    with pytest.raises(ConfigError):
        bihari_bound(0.0, 1.0, "linear", 1.0)
    with pytest.raises(ConfigError):
        bihari_bound(1.0, 1.0, "linear", 0.0)
    with pytest.raises(ConfigError):
        bihari_bound(1.0, 1.0, "cubic", 1.0)


def test_bihari_linear_bound():
    value = bihari_linear_bound(0.01, 2.0, 1.0, 1.0)
    assert value == pytest.approx(2.0 * (0.01 + 0.01 ** math.exp(-1.0)))
    with pytest.raises(ConfigError):
        bihari_exponent_bound(1.5, 1.0)
