import dataclasses
import math

import numpy as np
import pandas as pd
import pytest

from app.control import Control
from app.errors import BlowUpError, ConfigError, DomainError
from app.model import make_builtin
from app.noise import NOISE_BLOCK
from app.sde import (
    SimConfig,
    draw_noise,
    frozen_common_noise,
    increment_moments,
    khasminskii_error,
    path_to_frame,
    simulate_auxiliary,
    simulate_controlled,
    simulate_coupled,
    simulate_flow,
    simulate_frozen,
    simulate_terminal,
    truncation_derivative,
    truncation_map,
    write_paths_csv,
)


# ============================================================================
# SimConfig
# ============================================================================

def test_delta_must_be_below_epsilon():
    with pytest.raises(ConfigError):
        SimConfig(epsilon=0.1, delta=0.1)
    with pytest.raises(ConfigError):
        SimConfig(epsilon=0.1, delta=-0.01)


def test_substep_count():
    assert SimConfig(epsilon=0.1, delta=0.01, T=1.0, n_steps=50).n_sub == 20
    assert SimConfig(epsilon=0.5, delta=0.3, T=1.0, n_steps=100).n_sub == 1


def test_block_steps():
    config = SimConfig(epsilon=0.1, delta=0.01, n_steps=50, khasminskii_delta=0.04)
    assert config.block_steps() == 2
    with pytest.raises(ConfigError):
        SimConfig(epsilon=0.1, delta=0.01, n_steps=50).block_steps()
    with pytest.raises(ConfigError):
        SimConfig(epsilon=0.1, delta=0.01, n_steps=50, khasminskii_delta=0.03).block_steps()
    with pytest.raises(ConfigError):
        SimConfig(epsilon=0.1, delta=0.01, n_steps=50, khasminskii_delta=2.0).block_steps()


# ============================================================================
# Coupled and controlled engines
# ============================================================================

def test_coupled_shapes(lin1d, sim):
    sample = simulate_coupled(lin1d, sim, 0.5, -0.5, n_paths=7)
    assert sample.slow.shape == (7, 51, 1)
    assert sample.fast.shape == (7, 51, 1)
    assert sample.log_weight is None
    np.testing.assert_array_equal(sample.slow[:, 0, 0], 0.5)
    np.testing.assert_array_equal(sample.fast[:, 0, 0], -0.5)


def test_same_seed_same_paths(lin1d, sim):
    a = simulate_coupled(lin1d, sim, 0.0, 0.0, n_paths=5)
    b = simulate_coupled(lin1d, sim, 0.0, 0.0, n_paths=5)
    np.testing.assert_array_equal(a.slow, b.slow)
    np.testing.assert_array_equal(a.fast, b.fast)


def test_parallelism_does_not_change_paths(lin1d):
    config = SimConfig(epsilon=0.1, delta=0.01, T=0.1, n_steps=5, seed=3)
    n = NOISE_BLOCK + 10
    serial = simulate_coupled(lin1d, config, 0.0, 0.0, n_paths=n, parallelism=1)
    threaded = simulate_coupled(lin1d, config, 0.0, 0.0, n_paths=n, parallelism=4)
    np.testing.assert_array_equal(serial.slow, threaded.slow)
    np.testing.assert_array_equal(serial.fast, threaded.fast)


def test_first_paths_do_not_depend_on_batch_size(lin1d, sim):
    small = simulate_coupled(lin1d, sim, 0.0, 0.0, n_paths=3)
    large = simulate_coupled(lin1d, sim, 0.0, 0.0, n_paths=20)
    np.testing.assert_array_equal(small.slow, large.slow[:3])


def test_decoupled_slow_path_is_scaled_noise(decoupled, sim):
    sample = simulate_coupled(decoupled, sim, 0.0, 0.0, n_paths=4)
    noise = draw_noise(sim, 4)
    expected = math.sqrt(sim.epsilon) * noise.slow.sum(axis=0)
    np.testing.assert_allclose(sample.terminal_slow, expected, atol=1e-12)


def test_zero_control_has_zero_log_weight(lin1d, sim):
    sample = simulate_controlled(lin1d, sim, 0.0, 0.0, Control.zero(sim.T, 10), n_paths=6)
    np.testing.assert_array_equal(sample.log_weight, 0.0)
    plain = simulate_coupled(lin1d, sim, 0.0, 0.0, n_paths=6)
    np.testing.assert_allclose(sample.slow, plain.slow, atol=1e-12)


def test_constant_slow_control_shifts_decoupled_path(decoupled, sim, unit_control):
    controlled = simulate_controlled(decoupled, sim, 0.0, 0.0, unit_control, n_paths=5)
    plain = simulate_coupled(decoupled, sim, 0.0, 0.0, n_paths=5)
    # f1 = 0 and sigma1 = 1, so the control adds h1(t) = t
    np.testing.assert_allclose(controlled.slow[..., 0] - plain.slow[..., 0], np.broadcast_to(sim.times, (5, 51)),
                               atol=1e-10)


def test_log_weight_matches_girsanov_sum(decoupled, sim, unit_control):
    sample = simulate_controlled(decoupled, sim, 0.0, 0.0, unit_control, n_paths=5)
    noise = draw_noise(sim, 5)
    w_T = noise.slow.sum(axis=0)[:, 0]
    expected = -w_T / math.sqrt(sim.epsilon) - sim.T / (2 * sim.epsilon)
    np.testing.assert_allclose(sample.log_weight, expected, atol=1e-10)


def test_terminal_matches_full_paths(lin1d, sim, unit_control):
    sample = simulate_controlled(lin1d, sim, 0.2, 0.0, unit_control, n_paths=8)
    terminal, log_w = simulate_terminal(lin1d, sim, 0.2, 0.0, 8, control=unit_control)
    np.testing.assert_allclose(terminal, sample.terminal_slow, atol=1e-12)
    np.testing.assert_allclose(log_w, sample.log_weight, atol=1e-12)
    terminal, log_w = simulate_terminal(lin1d, sim, 0.2, 0.0, 8)
    assert log_w is None


def test_mismatched_control_dimension(lin1d, sim):
    control = Control(sim.T, np.zeros((10, 2)))
    with pytest.raises(ConfigError):
        simulate_controlled(lin1d, sim, 0.0, 0.0, control)


def test_bad_initial_state(lin1d, sim):
    with pytest.raises(ConfigError):
        simulate_coupled(lin1d, sim, [0.0, 1.0], 0.0)
    with pytest.raises(ConfigError):
        simulate_coupled(lin1d, sim, np.inf, 0.0)
    with pytest.raises(ConfigError):
        simulate_coupled(lin1d, sim, 0.0, 0.0, n_paths=0)


def test_blow_up_reports_last_finite_step(lin1d, sim):
    explosive = dataclasses.replace(lin1d, f1=lambda x, y: 1e3 * x)
    with pytest.raises(BlowUpError) as exc:
        simulate_coupled(explosive, sim, 1.0, 0.0, n_paths=2)
    assert 0 < exc.value.last_finite_index < sim.n_steps
    assert exc.value.payload["last_finite_index"] == exc.value.last_finite_index


# ============================================================================
# Auxiliary process
# ============================================================================

def test_auxiliary_needs_block_length(lin1d, sim, unit_control):
    controlled = simulate_controlled(lin1d, sim, 0.0, 0.0, unit_control, n_paths=2)
    with pytest.raises(ConfigError):
        simulate_auxiliary(lin1d, sim, 0.0, 0.0, unit_control, controlled)


def test_auxiliary_slow_path_is_noise_free(decoupled, unit_control):
    config = SimConfig(epsilon=0.1, delta=0.01, T=1.0, n_steps=50, khasminskii_delta=0.1, seed=1)
    controlled = simulate_controlled(decoupled, config, 0.0, 0.0, unit_control, n_paths=3)
    auxiliary = simulate_auxiliary(decoupled, config, 0.0, 0.0, unit_control, controlled)
    assert auxiliary.meta["block_steps"] == 5
    np.testing.assert_allclose(auxiliary.slow[..., 0], np.broadcast_to(config.times, (3, 51)), atol=1e-12)


def test_khasminskii_error_report(lin1d, unit_control):
    config = SimConfig(epsilon=0.1, delta=0.01, T=1.0, n_steps=50, khasminskii_delta=0.1, seed=2)
    report = khasminskii_error(lin1d, config, 0.0, 0.0, unit_control, n_paths=50)
    assert report["scale"] == pytest.approx(0.1 + 0.01 / 0.1)
    assert report["y_gap"] >= 0.0
    assert report["x_gap_sup"] >= 0.0
    assert report["n_paths"] == 50


# ============================================================================
# Frozen process
# ============================================================================

def test_noise_free_frozen_process_relaxes_geometrically():
    model = make_builtin("LIN1D", {"s2": 0.0})
    sample = simulate_frozen(model, 1.0, 3.0, T=1.0, n_steps=10, seed=0, n_paths=2)
    expected = 1.0 + 2.0 * (1.0 - 0.1) ** np.arange(11)
    np.testing.assert_allclose(sample.fast[0, :, 0], expected, atol=1e-12)
    np.testing.assert_array_equal(sample.slow, 1.0)


def test_common_noise_pairs_broadcast(lin1d):
    times, fast = frozen_common_noise(lin1d, [[1.0]], [[2.0], [-2.0]], T=1.0, n_steps=20, seed=4, n_paths=3)
    assert fast.shape == (3, 2, 21, 1)
    assert times[-1] == pytest.approx(1.0)
    # same noise, linear drift: the gap contracts deterministically
    gap = fast[:, 0, :, 0] - fast[:, 1, :, 0]
    np.testing.assert_allclose(gap, np.broadcast_to(4.0 * 0.95 ** np.arange(21), (3, 21)), atol=1e-12)


def test_common_noise_rejects_unpaired_grids(lin1d):
    with pytest.raises(ConfigError):
        frozen_common_noise(lin1d, [[0.0], [1.0]], [[0.0], [1.0], [2.0]], T=1.0, n_steps=10, seed=0, n_paths=1)
    with pytest.raises(ConfigError):
        frozen_common_noise(lin1d, [[0.0]], [[0.0]], T=0.0, n_steps=10, seed=0, n_paths=1)


# ============================================================================
# Truncation map and flow moments
# ============================================================================

def test_truncation_map_values():
    assert truncation_map(0.1) == 0.1
    assert truncation_map(2.5) == 1.0
    assert truncation_map(2.0) == pytest.approx(1.0)
    assert truncation_map(0.25) == pytest.approx(0.25)
    grid = np.linspace(0.0, 3.0, 301)
    values = truncation_map(grid)
    assert np.all(np.diff(values) >= 0)


def test_truncation_derivative_bounds_and_consistency():
    grid = np.linspace(0.0, 3.0, 301)
    d = truncation_derivative(grid)
    assert np.all(d >= 0) and np.all(d <= 1 + 1e-12)
    x, h = 1.0, 1e-6
    fd = (truncation_map(x + h) - truncation_map(x - h)) / (2 * h)
    assert fd == pytest.approx(truncation_derivative(x), abs=1e-6)


def test_truncation_map_rejects_negative():
    with pytest.raises(DomainError):
        truncation_map(-0.1)


def test_flow_moments_of_additive_noise(decoupled, sim):
    # f1 = 0: separations are preserved exactly under shared noise
    moments = simulate_flow(decoupled, sim, [0.0, 0.05, 0.15], 0.0, n_paths=10, p=4.0)
    assert moments.pairs == [(0, 1), (0, 2), (1, 2)]
    np.testing.assert_allclose(moments.separation, [0.05, 0.15, 0.1], atol=1e-12)
    np.testing.assert_allclose(moments.moment, moments.separation ** 4, rtol=1e-8)
    assert moments.slope() == pytest.approx(4.0, abs=1e-6)
    assert list(moments.to_frame().columns) == ["i", "j", "separation", "moment", "se"]


# ============================================================================
# Noise access and path statistics
# ============================================================================

def test_draw_noise_shapes_and_variance(sim):
    noise = draw_noise(sim, 2000)
    assert noise.slow.shape == (50, 2000, 1)
    assert noise.fast.shape == (50, 20, 2000, 1)
    assert noise.n_paths == 2000 and noise.n_sub == 20
    assert np.mean(noise.slow ** 2) == pytest.approx(sim.step, rel=0.05)
    assert np.mean(noise.fast ** 2) == pytest.approx(sim.step / 20, rel=0.05)


def test_brownian_increment_slope(decoupled, sim):
    sample = simulate_coupled(decoupled, sim, 0.0, 0.0, n_paths=2000)
    result = increment_moments(sample, [1, 2, 4, 8])
    assert result["slope"] == pytest.approx(1.0, abs=0.1)
    with pytest.raises(ConfigError):
        increment_moments(sample, [0])


def test_path_frame_and_csv_are_deterministic(lin1d, sim, tmp_path):
    sample = simulate_coupled(lin1d, sim, 0.0, 0.0, n_paths=2)
    frame = path_to_frame(sample)
    assert list(frame.columns) == ["path", "t", "X1", "Y1"]
    assert len(frame) == 2 * 51
    assert len(path_to_frame(sample, path_index=1)) == 51

    first = write_paths_csv(sample, tmp_path / "a.csv")
    again = simulate_coupled(lin1d, sim, 0.0, 0.0, n_paths=2)
    second = write_paths_csv(again, tmp_path / "b.csv")
    assert first.read_bytes() == second.read_bytes()
    loaded = pd.read_csv(first)
    np.testing.assert_allclose(loaded["X1"].to_numpy(), frame["X1"].to_numpy(), rtol=1e-11)
