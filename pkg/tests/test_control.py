import numpy as np
import pytest

from app.control import Control
from app.errors import ConfigError, DomainError


def test_norm_of_constant_control():
    control = Control.constant(2.0, 8, 1.5, 0.5)
    # (1.5^2 + 0.5^2) * 2
    assert control.norm_sq == pytest.approx(5.0)
    assert control.in_ball(2.3)
    assert not control.in_ball(2.2)


def test_zero_control():
    control = Control.zero(1.0, 5)
    assert control.norm_sq == 0.0
    assert control.M == 5
    assert control.dim_slow == 1 and control.dim_fast == 1


def test_control_arrays_are_read_only_copies():
    values = np.ones((4, 1))
    control = Control(1.0, values)
    values[0, 0] = 9.0
    assert control.hdot1[0, 0] == 1.0
    with pytest.raises(ValueError):
        control.hdot1[0, 0] = 2.0


def test_nan_control_is_rejected():
    with pytest.raises(DomainError) as exc:
        Control(1.0, [0.0, np.nan, 1.0])
    assert exc.value.payload["first_nan_interval"] == 1


def test_invalid_horizon_and_mismatched_channels():
    with pytest.raises(ConfigError):
        Control(0.0, [1.0])
    with pytest.raises(ConfigError):
        Control(1.0, [1.0, 2.0], [1.0, 2.0, 3.0])


def test_h1_is_exact_piecewise_linear():
    control = Control(1.0, [2.0, -1.0])
    values = control.h1([0.0, 0.25, 0.5, 0.75, 1.0])[:, 0]
    np.testing.assert_allclose(values, [0.0, 0.5, 1.0, 0.75, 0.5])


def test_steps_for_repeats_intervals():
    control = Control(1.0, [1.0, 2.0])
    hdot1, hdot2 = control.steps_for(4, 1.0)
    np.testing.assert_array_equal(hdot1[:, 0], [1.0, 1.0, 2.0, 2.0])
    assert hdot2.shape == (4, 1)


def test_steps_for_rejects_incompatible_grid():
    control = Control(1.0, [1.0, 2.0, 3.0])
    with pytest.raises(ConfigError):
        control.steps_for(10, 1.0)
    with pytest.raises(ConfigError):
        control.steps_for(9, 2.0)


def test_refine_keeps_norm_and_path():
    control = Control(1.0, [1.0, -2.0, 0.5])
    fine = control.refine(4)
    assert fine.M == 12
    assert fine.norm_sq == pytest.approx(control.norm_sq)
    t = np.linspace(0, 1, 13)
    np.testing.assert_allclose(fine.h1(t), control.h1(t), atol=1e-12)


def test_perturb_and_distance():
    base = Control.constant(1.0, 4, 1.0)
    direction = Control(1.0, [1.0, -1.0, 1.0, -1.0])
    moved = base.perturb(direction, 0.5)
    assert base.distance(moved) == pytest.approx(0.5)
    # distance works across different grids
    assert base.distance(Control.constant(1.0, 3, 1.0)) == pytest.approx(0.0)


def test_mollify_converges_to_control():
    control = Control(1.0, [0.0, 0.0, 1.0, 1.0])
    gaps = [control.distance(control.mollify(w)) for w in (0.2, 0.1, 0.05, 0.025)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    with pytest.raises(ConfigError):
        control.mollify(0.0)


def test_truncate_after():
    control = Control.constant(1.0, 4, 1.0)
    cut = control.truncate_after(0.5)
    np.testing.assert_array_equal(cut.hdot1[:, 0], [1.0, 1.0, 0.0, 0.0])


def test_csv_round_trip(tmp_path):
    control = Control(2.0, [[0.5], [1.0], [-0.25]], [[0.1], [0.2], [0.3]])
    path = control.to_csv(tmp_path / "control.csv")

    loaded = Control.from_csv(path, 2.0)
    np.testing.assert_allclose(loaded.hdot1, control.hdot1, rtol=1e-12)
    np.testing.assert_allclose(loaded.hdot2, control.hdot2, rtol=1e-12)


def test_frame_without_hdot1_columns():
    import pandas as pd

    with pytest.raises(ConfigError):
        Control.from_frame(pd.DataFrame({"interval": [0], "hdot2_1": [1.0]}), 1.0)


def test_csv_missing_or_empty_file(tmp_path):
    with pytest.raises(ConfigError):
        Control.from_csv(tmp_path / "absent.csv", 1.0)
    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(ConfigError):
        Control.from_csv(empty, 1.0)
