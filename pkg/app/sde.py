"""
Time-stepping engines for the slow-fast system and its relatives.

All engines are Euler-Maruyama on a uniform slow grid. The fast component is
sub-stepped max(1, ceil(10 h / delta)) times per slow step, with the slow
state held at its value from the start of the step. Noise comes from
app.noise in a fixed consumption order, so every engine run with the same
seed sees the same Brownian increments.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator

from app.control import Control
from app.errors import BlowUpError, ConfigError, DomainError
from app.export import write_frame_csv
from app.model import ModelSpec
from app.noise import NoisePath, NoiseStream, run_blocks, stack_blocks
from app.stats import loglog_slope, mean_se

logger = logging.getLogger(__name__)

BLOWUP_LIMIT = 1e12
SUBSTEP_FACTOR = 10
GRID_TOL = 1e-9


class SimConfig(BaseModel):
    """Scale parameters and grid of one simulation."""

    model_config = ConfigDict(frozen=True)

    epsilon: float
    delta: float
    T: float = 1.0
    n_steps: int = 100
    khasminskii_delta: Optional[float] = None
    seed: int = 0

    @model_validator(mode="after")
    def _check_scales(self):
        if not (self.epsilon > 0 and self.delta > 0):
            raise ConfigError("epsilon and delta must be positive", {"epsilon": self.epsilon, "delta": self.delta})
        if not self.delta < self.epsilon:
            raise ConfigError("delta must be smaller than epsilon", {"epsilon": self.epsilon, "delta": self.delta})
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ConfigError("horizon T must be positive", {"T": self.T})
        if self.n_steps < 1:
            raise ConfigError("n_steps must be at least 1", {"n_steps": self.n_steps})
        if self.khasminskii_delta is not None and not self.khasminskii_delta > 0:
            raise ConfigError("khasminskii_delta must be positive", {"khasminskii_delta": self.khasminskii_delta})
        return self

    @property
    def step(self) -> float:
        return self.T / self.n_steps

    @property
    def n_sub(self) -> int:
        """Fast substeps per slow step."""
        return max(1, math.ceil(SUBSTEP_FACTOR * self.step / self.delta - GRID_TOL))

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)

    def block_steps(self) -> int:
        """Number of slow steps per Khasminskii block."""
        delta_block = self.khasminskii_delta
        if delta_block is None:
            raise ConfigError("khasminskii_delta is required for the auxiliary process")
        if delta_block > self.T + GRID_TOL:
            raise ConfigError("khasminskii_delta exceeds the horizon", {"khasminskii_delta": delta_block, "T": self.T})
        ratio = delta_block / self.step
        m = int(round(ratio))
        if m < 1 or abs(ratio - m) > GRID_TOL * max(1.0, ratio):
            raise ConfigError(
                "khasminskii_delta must be a whole number of slow steps",
                {"khasminskii_delta": delta_block, "step": self.step},
            )
        return m


@dataclass
class PathSample:
    """
    A batch of realized trajectories on the slow grid.

    slow has shape (n_paths, n_steps + 1, dim_slow), fast the same with dim_fast.
    """

    times: np.ndarray
    slow: np.ndarray
    fast: np.ndarray
    kind: str
    seed: int
    config: Optional[SimConfig] = None
    log_weight: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.slow.shape[0]

    @property
    def terminal_slow(self) -> np.ndarray:
        return self.slow[:, -1, :]


def as_state(value, d: int, what: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.shape != (d,):
        raise ConfigError(f"{what} must have {d} components", {"shape": list(arr.shape)})
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{what} must be finite", {what: arr.tolist()})
    return arr


def as_states(values, d: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim <= 1 and d == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != d or arr.shape[0] == 0:
        raise ConfigError(f"{what} must be a non-empty list of {d}-dimensional states")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{what} must be finite")
    return arr


def _apply(matrix: np.ndarray, vector: np.ndarray) -> np.ndarray:
    return np.matmul(matrix, vector[..., None])[..., 0]


def _check_state(k: int, first_path: int, *states: np.ndarray):
    for s in states:
        if not np.all(np.isfinite(s)) or np.max(np.abs(s)) > BLOWUP_LIMIT:
            raise BlowUpError("simulated state left the finite range", last_finite_index=k, payload={"first_path": first_path})


def _fast_substep(model: ModelSpec, x, Y, dw, u2, hf: float, delta: float, ctrl_scale: float):
    s2 = model.sigma2(x, Y)
    return Y + model.f2(x, Y) * (hf / delta) + _apply(s2, dw) / math.sqrt(delta) + _apply(s2, u2) * (hf * ctrl_scale)


def _run_slow_fast(model: ModelSpec, config: SimConfig, x0s: np.ndarray, y0s: np.ndarray,
                   hdot1: np.ndarray, hdot2: np.ndarray, first_path: int, n_block: int,
                   record_path: bool, with_weight: bool):
    """One block of the (controlled) slow-fast system; states carry an initial-condition axis."""
    h, n_sub = config.step, config.n_sub
    hf = h / n_sub
    eps, delta = config.epsilon, config.delta
    sqrt_eps = math.sqrt(eps)
    ctrl_scale = 1.0 / math.sqrt(delta * eps)

    stream = NoiseStream(config.seed, first_path, n_block, model.dim_slow, model.dim_fast, h, n_sub)
    X = np.repeat(x0s[None], n_block, axis=0)
    Y = np.repeat(y0s[None], n_block, axis=0)
    if record_path:
        xs = np.empty((config.n_steps + 1,) + X.shape)
        ys = np.empty((config.n_steps + 1,) + Y.shape)
        xs[0], ys[0] = X, Y
    log_w = np.zeros(n_block) if with_weight else None

    for k in range(config.n_steps):
        dw1, dw2 = stream.next_step()
        u1, u2 = hdot1[k], hdot2[k]
        drift = np.zeros_like(X)
        for j in range(n_sub):
            drift += model.f1(X, Y) * hf
            Y = _fast_substep(model, X, Y, dw2[j][:, None, :], u2, hf, delta, ctrl_scale)
        s1 = model.sigma1(X)
        X = X + drift + _apply(s1, u1) * h + sqrt_eps * _apply(s1, dw1[:, None, :])
        if with_weight:
            log_w -= (dw1 @ u1 + dw2.sum(axis=0) @ u2) / sqrt_eps + (u1 @ u1 + u2 @ u2) * h / (2.0 * eps)
        _check_state(k, first_path, X, Y)
        if record_path:
            xs[k + 1], ys[k + 1] = X, Y

    if record_path:
        return np.moveaxis(xs, 0, 2), np.moveaxis(ys, 0, 2), log_w
    return X, Y, log_w


def _control_steps(model: ModelSpec, config: SimConfig, control: Optional[Control]):
    if control is None:
        return np.zeros((config.n_steps, model.dim_slow)), np.zeros((config.n_steps, model.dim_fast))
    if control.dim_slow != model.dim_slow or control.dim_fast != model.dim_fast:
        raise ConfigError("control dimensions do not match the model")
    return control.steps_for(config.n_steps, config.T)


def _simulate(model: ModelSpec, config: SimConfig, x0, y0, n_paths: int, control: Optional[Control],
              kind: str, parallelism: int) -> PathSample:
    if n_paths < 1:
        raise ConfigError("n_paths must be at least 1", {"n_paths": n_paths})
    x0s = as_state(x0, model.dim_slow, "x0")[None]
    y0s = as_state(y0, model.dim_fast, "y0")[None]
    hdot1, hdot2 = _control_steps(model, config, control)
    with_weight = control is not None

    parts = run_blocks(
        lambda b, start, n: _run_slow_fast(model, config, x0s, y0s, hdot1, hdot2, start, n, True, with_weight),
        n_paths,
        parallelism,
    )
    slow = stack_blocks([p[0][:, 0] for p in parts], 0)
    fast = stack_blocks([p[1][:, 0] for p in parts], 0)
    log_w = stack_blocks([p[2] for p in parts], 0) if with_weight else None
    logger.debug("%s: %d paths, %d steps x %d substeps", kind, n_paths, config.n_steps, config.n_sub)
    return PathSample(config.times, slow, fast, kind, config.seed, config, log_w)


def simulate_coupled(model: ModelSpec, config: SimConfig, x0, y0, n_paths: int = 1,
                     parallelism: int = 1) -> PathSample:
    """Simulate the slow-fast system itself."""
    return _simulate(model, config, x0, y0, n_paths, None, "coupled", parallelism)


def simulate_controlled(model: ModelSpec, config: SimConfig, x0, y0, control: Control, n_paths: int = 1,
                        parallelism: int = 1) -> PathSample:
    """
    Simulate the controlled system.

    The slow drift gains sigma1(X) hdot1 and the fast drift gains
    sigma2(X, Y) hdot2 / sqrt(delta * epsilon). The returned sample carries
    the log likelihood ratio -(1/sqrt(eps)) int hdot.dW - (1/2eps) int |hdot|^2
    of the uncontrolled law against the controlled one, path by path.
    """
    return _simulate(model, config, x0, y0, n_paths, control, "controlled", parallelism)


def simulate_terminal(model: ModelSpec, config: SimConfig, x0, y0, n_paths: int, control: Optional[Control] = None,
                      parallelism: int = 1) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Terminal slow states (n_paths, dim_slow) without storing paths, plus the
    log likelihood ratios when a control is given.
    """
    if n_paths < 1:
        raise ConfigError("n_paths must be at least 1", {"n_paths": n_paths})
    x0s = as_state(x0, model.dim_slow, "x0")[None]
    y0s = as_state(y0, model.dim_fast, "y0")[None]
    hdot1, hdot2 = _control_steps(model, config, control)
    with_weight = control is not None
    parts = run_blocks(
        lambda b, start, n: _run_slow_fast(model, config, x0s, y0s, hdot1, hdot2, start, n, False, with_weight),
        n_paths,
        parallelism,
    )
    terminal = stack_blocks([p[0][:, 0] for p in parts], 0)
    log_w = stack_blocks([p[2] for p in parts], 0) if with_weight else None
    return terminal, log_w


def simulate_auxiliary(model: ModelSpec, config: SimConfig, x0, y0, control: Control, frozen_slow: PathSample,
                       parallelism: int = 1) -> PathSample:
    """
    Simulate the block-frozen auxiliary process.

    The fast component is driven by the controlled slow path sampled at the
    start of its Khasminskii block, with the same fast noise as the controlled
    run of the same seed. The slow component has no noise.
    """
    m = config.block_steps()
    if frozen_slow.slow.shape[1] != config.n_steps + 1:
        raise ConfigError("frozen slow path is not on the simulation grid")
    x0v = as_state(x0, model.dim_slow, "x0")
    y0v = as_state(y0, model.dim_fast, "y0")
    hdot1, _ = _control_steps(model, config, control)
    h, n_sub = config.step, config.n_sub
    hf = h / n_sub
    ctrl_scale = 1.0 / math.sqrt(config.delta * config.epsilon)
    zero_u2 = np.zeros(model.dim_fast)

    def block_fn(b: int, start: int, n: int):
        stream = NoiseStream(config.seed, start, n, model.dim_slow, model.dim_fast, h, n_sub)
        xhat = frozen_slow.slow[start:start + n, :, None, :]
        X = np.repeat(x0v[None, None], n, axis=0)
        Y = np.repeat(y0v[None, None], n, axis=0)
        xs = np.empty((config.n_steps + 1,) + X.shape)
        ys = np.empty((config.n_steps + 1,) + Y.shape)
        xs[0], ys[0] = X, Y
        for k in range(config.n_steps):
            _, dw2 = stream.next_step()
            xb = xhat[:, (k // m) * m]
            drift = np.zeros_like(X)
            for j in range(n_sub):
                drift += model.f1(xb, Y) * hf
                Y = _fast_substep(model, xb, Y, dw2[j][:, None, :], zero_u2, hf, config.delta, ctrl_scale)
            X = X + drift + _apply(model.sigma1(X), hdot1[k]) * h
            _check_state(k, start, X, Y)
            xs[k + 1], ys[k + 1] = X, Y
        return np.moveaxis(xs, 0, 2)[:, 0], np.moveaxis(ys, 0, 2)[:, 0]

    parts = run_blocks(block_fn, frozen_slow.n_paths, parallelism)
    slow = stack_blocks([p[0] for p in parts], 0)
    fast = stack_blocks([p[1] for p in parts], 0)
    return PathSample(config.times, slow, fast, "auxiliary", config.seed, config, meta={"block_steps": m})


def khasminskii_error(model: ModelSpec, config: SimConfig, x0, y0, control: Control, n_paths: int,
                      parallelism: int = 1) -> dict:
    """
    Monte Carlo estimates of E int_0^T |Yhat - Ytilde|^2 dt and sup_t E |Xhat_t - Xtilde_t|^2.

    Returns:
        Dictionary with both estimates, the standard error of the first and
        the scale Delta + delta / epsilon they are compared against
    """
    controlled = simulate_controlled(model, config, x0, y0, control, n_paths, parallelism)
    auxiliary = simulate_auxiliary(model, config, x0, y0, control, controlled, parallelism)
    dy2 = np.sum((controlled.fast - auxiliary.fast) ** 2, axis=-1)
    integrals = np.trapezoid(dy2, dx=config.step, axis=1)
    y_gap, y_se = mean_se(integrals)
    dx2 = np.sum((controlled.slow - auxiliary.slow) ** 2, axis=-1).mean(axis=0)
    result = {
        "khasminskii_delta": config.khasminskii_delta,
        "delta": config.delta,
        "epsilon": config.epsilon,
        "scale": config.khasminskii_delta + config.delta / config.epsilon,
        "y_gap": float(y_gap),
        "y_gap_se": float(y_se),
        "x_gap_sup": float(np.max(dx2)),
        "n_paths": n_paths,
    }
    logger.info("khasminskii error at scale %.4g: %.4e", result["scale"], result["y_gap"])
    return result


def _run_frozen(model: ModelSpec, xs: np.ndarray, ys: np.ndarray, T: float, n_steps: int, seed: int,
                first_path: int, n_block: int) -> np.ndarray:
    h = T / n_steps
    stream = NoiseStream(seed, first_path, n_block, 0, model.dim_fast, h, 1)
    X = np.broadcast_to(xs, (n_block,) + xs.shape)
    Y = np.repeat(ys[None], n_block, axis=0)
    out = np.empty((n_steps + 1,) + Y.shape)
    out[0] = Y
    for k in range(n_steps):
        _, dw = stream.next_step()
        s2 = model.sigma2(X, Y)
        Y = Y + model.f2(X, Y) * h + _apply(s2, dw[0][:, None, :])
        _check_state(k, first_path, Y)
        out[k + 1] = Y
    return np.moveaxis(out, 0, 2)


def _check_frozen_grid(T: float, n_steps: int, n_paths: int):
    if not T > 0:
        raise ConfigError("horizon T must be positive", {"T": T})
    if n_steps < 1:
        raise ConfigError("n_steps must be at least 1", {"n_steps": n_steps})
    if n_paths < 1:
        raise ConfigError("n_paths must be at least 1", {"n_paths": n_paths})


def frozen_common_noise(model: ModelSpec, xs, ys, T: float, n_steps: int, seed: int, n_paths: int,
                        parallelism: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Frozen processes for several (x, y0) pairs driven by one noise path each.

    Returns:
        (times, fast) with fast of shape (n_paths, n_pairs, n_steps + 1, dim_fast)
    """
    _check_frozen_grid(T, n_steps, n_paths)
    xs = as_states(xs, model.dim_slow, "xs")
    ys = as_states(ys, model.dim_fast, "ys")
    if xs.shape[0] != ys.shape[0]:
        if xs.shape[0] == 1:
            xs = np.repeat(xs, ys.shape[0], axis=0)
        elif ys.shape[0] == 1:
            ys = np.repeat(ys, xs.shape[0], axis=0)
        else:
            raise ConfigError("xs and ys must pair up", {"n_x": xs.shape[0], "n_y": ys.shape[0]})
    parts = run_blocks(
        lambda b, start, n: _run_frozen(model, xs, ys, T, n_steps, seed, start, n),
        n_paths,
        parallelism,
    )
    return np.linspace(0.0, T, n_steps + 1), stack_blocks(parts, 0)


def simulate_frozen(model: ModelSpec, x_frozen, y0, T: float, n_steps: int, seed: int, n_paths: int = 1,
                    parallelism: int = 1) -> PathSample:
    """Fast dynamics at unit scale with the slow state held at x_frozen."""
    x = as_state(x_frozen, model.dim_slow, "x_frozen")
    y = as_state(y0, model.dim_fast, "y0")
    times, fast = frozen_common_noise(model, x[None], y[None], T, n_steps, seed, n_paths, parallelism)
    fast = fast[:, 0]
    slow = np.broadcast_to(x, (fast.shape[0], fast.shape[1], model.dim_slow)).copy()
    return PathSample(times, slow, fast, "frozen", seed, meta={"x_frozen": x.tolist()})


def truncation_map(x):
    """
    Smooth monotone cap: identity below 1/4, constant 1 from 2 on.

    In between, a quintic whose derivative falls from 1 to 0 with zero
    curvature at both ends, so the map is C^2 with 0 <= f' <= 1.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise DomainError("truncation map needs non-negative arguments")
    s = np.clip((arr - 0.25) / 1.75, 0.0, 1.0)
    blend = 0.25 + 1.75 * (s - (12.0 / 7.0) * s ** 3 + (11.0 / 7.0) * s ** 4 - (3.0 / 7.0) * s ** 5)
    out = np.where(arr < 0.25, arr, np.where(arr >= 2.0, 1.0, blend))
    return float(out) if out.ndim == 0 else out


def truncation_derivative(x):
    arr = np.asarray(x, dtype=float)
    s = np.clip((arr - 0.25) / 1.75, 0.0, 1.0)
    blend = (1.0 - s) ** 2 * (1.0 + 2.0 * s - (15.0 / 7.0) * s ** 2)
    out = np.where(arr < 0.25, 1.0, np.where(arr >= 2.0, 0.0, blend))
    return float(out) if out.ndim == 0 else out


@dataclass
class FlowMoments:
    """Truncated distance moments E[f(|X_T(x_i) - X_T(x_j)|)^p] for pairs of initial points."""

    x0_grid: np.ndarray
    pairs: List[Tuple[int, int]]
    separation: np.ndarray
    moment: np.ndarray
    se: np.ndarray
    p: float
    n_paths: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "i": [i for i, _ in self.pairs],
            "j": [j for _, j in self.pairs],
            "separation": self.separation,
            "moment": self.moment,
            "se": self.se,
        })

    def slope(self) -> float:
        """Log-log slope of the moment against the initial separation."""
        return loglog_slope(self.separation, self.moment)


def simulate_flow(model: ModelSpec, config: SimConfig, x0_grid, y0, n_paths: int, p: float = 4.0,
                  pairs: Optional[List[Tuple[int, int]]] = None, parallelism: int = 1) -> FlowMoments:
    """
    Run every initial condition of x0_grid under shared noise and collect
    truncated distance moments at time T.

    Args:
        pairs: index pairs to report; all i < j by default
    """
    if n_paths < 1:
        raise ConfigError("n_paths must be at least 1", {"n_paths": n_paths})
    xs = as_states(x0_grid, model.dim_slow, "x0_grid")
    y0v = as_state(y0, model.dim_fast, "y0")
    ys = np.repeat(y0v[None], xs.shape[0], axis=0)
    hdot1, hdot2 = _control_steps(model, config, None)

    parts = run_blocks(
        lambda b, start, n: _run_slow_fast(model, config, xs, ys, hdot1, hdot2, start, n, False, False)[0],
        n_paths,
        parallelism,
    )
    terminal = stack_blocks(parts, 0)
    if pairs is None:
        pairs = [(i, j) for i in range(xs.shape[0]) for j in range(i + 1, xs.shape[0])]
    moments, ses, seps = [], [], []
    for i, j in pairs:
        dist = np.linalg.norm(terminal[:, i] - terminal[:, j], axis=-1)
        mean, se = mean_se(truncation_map(dist) ** p)
        moments.append(float(mean))
        ses.append(float(se))
        seps.append(float(np.linalg.norm(xs[i] - xs[j])))
    return FlowMoments(xs, list(pairs), np.array(seps), np.array(moments), np.array(ses), p, n_paths)


def draw_noise(config: SimConfig, n_paths: int, dim_slow: int = 1, dim_fast: int = 1) -> NoisePath:
    """Materialise the increments the engines consume for this config and seed."""
    if n_paths < 1:
        raise ConfigError("n_paths must be at least 1", {"n_paths": n_paths})

    def block_fn(b: int, start: int, n: int):
        stream = NoiseStream(config.seed, start, n, dim_slow, dim_fast, config.step, config.n_sub)
        steps = [stream.next_step() for _ in range(config.n_steps)]
        return np.stack([s[0] for s in steps]), np.stack([s[1] for s in steps])

    parts = run_blocks(block_fn, n_paths)
    return NoisePath(
        slow=stack_blocks([p[0] for p in parts], 1),
        fast=stack_blocks([p[1] for p in parts], 2),
        seed=config.seed,
        step=config.step,
    )


def sup_moment(sample: PathSample) -> Tuple[float, float]:
    """E sup_t |X_t|^2 with its standard error."""
    sup = np.max(np.sum(sample.slow ** 2, axis=-1), axis=1)
    mean, se = mean_se(sup)
    return float(mean), float(se)


def increment_moments(sample: PathSample, lags: List[int]) -> dict:
    """
    E |X_{t+lag} - X_t|^2 averaged over t and paths, for lags given in steps.

    Returns:
        Dictionary with lag times, moments and their log-log slope
    """
    step = sample.times[1] - sample.times[0]
    moments = []
    for lag in lags:
        if lag < 1 or lag >= sample.slow.shape[1]:
            raise ConfigError("lag outside the path grid", {"lag": lag})
        diff = sample.slow[:, lag:] - sample.slow[:, :-lag]
        moments.append(float(np.mean(np.sum(diff ** 2, axis=-1))))
    lag_times = np.asarray(lags, dtype=float) * step
    return {"lag": lag_times.tolist(), "moment": moments, "slope": loglog_slope(lag_times, moments)}


def path_to_frame(sample: PathSample, path_index: Optional[int] = None) -> pd.DataFrame:
    """Long-format table (path, t, X1.., Y1..) of one path or all of them."""
    indices = range(sample.n_paths) if path_index is None else [path_index]
    frames = []
    for i in indices:
        data = {"path": np.full(sample.times.size, i), "t": sample.times}
        for j in range(sample.slow.shape[-1]):
            data[f"X{j + 1}"] = sample.slow[i, :, j]
        for j in range(sample.fast.shape[-1]):
            data[f"Y{j + 1}"] = sample.fast[i, :, j]
        frames.append(pd.DataFrame(data))
    return pd.concat(frames, ignore_index=True)


def write_paths_csv(sample: PathSample, path: Union[str, Path], path_index: Optional[int] = None) -> Path:
    return write_frame_csv(path_to_frame(sample, path_index), path)
