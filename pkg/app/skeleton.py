"""
The skeleton map S(h): solutions of dX = fbar(X) dt + sigma1(X) hdot1 dt.

Solutions are built on dyadic grids s_k = k T / 2^n with explicit Euler steps
whose control increments h1(s_{k+1}) - h1(s_k) are exact. Levels are refined
until two consecutive Richardson combinations 2 X^n - X^{n-1} agree to the
tolerance; running out of levels first raises NumericError.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.averaging import AveragedDrift
from app.control import Control
from app.errors import ConfigError, NumericError
from app.model import ModelSpec
from app.sde import as_states
from app.stats import loglog_slope

logger = logging.getLogger(__name__)

BASE_LEVEL = 4
DEFAULT_LEVELS = 12
DYADIC_TOL = 1e-8
GEOMETRIC_RATIO = 0.75
BLOWUP_LIMIT = 1e12

Sigma = Callable[[np.ndarray], np.ndarray]


@dataclass
class SkeletonSolution:
    """
    Richardson-combined skeleton path(s) 2 X^n - X^(n-1) on the grid of level n - 1.

    path is (n_times, d) for one initial point and (n_x0, n_times, d) for a field.
    error_estimate is the sup gap between the last two combinations (or the raw
    gap when that is smaller); raw_error is sup|X^n - X^(n-1)| at the last level.
    """

    times: np.ndarray
    path: np.ndarray
    level: int
    error_estimate: float
    converged: bool = True
    history: List[dict] = field(default_factory=list)
    raw_error: float = math.nan

    def terminal(self) -> np.ndarray:
        return self.path[..., -1, :]

    def to_frame(self) -> pd.DataFrame:
        paths = self.path if self.path.ndim == 3 else self.path[None]
        frames = []
        for i, p in enumerate(paths):
            data = {"x0_index": np.full(self.times.size, i), "t": self.times}
            for j in range(p.shape[-1]):
                data[f"X{j + 1}"] = p[:, j]
            frames.append(pd.DataFrame(data))
        return pd.concat(frames, ignore_index=True)


def overlap_matrix(T: float, M: int, N: int) -> np.ndarray:
    """
    (N, M) matrix of overlap lengths between N uniform steps and M control intervals.

    Multiplying it with hdot (M, d) gives the exact h1 increments over the N steps.
    """
    fine = np.linspace(0.0, T, N + 1)
    coarse = np.linspace(0.0, T, M + 1)
    lo = np.maximum(fine[:-1, None], coarse[None, :-1])
    hi = np.minimum(fine[1:, None], coarse[None, 1:])
    return np.clip(hi - lo, 0.0, None)


def euler_paths(drift: Callable[[np.ndarray], np.ndarray], sigma1: Sigma, increments: np.ndarray,
                x0s: np.ndarray, T: float) -> np.ndarray:
    """
    Batched Euler solutions.

    Args:
        increments: (B, N, d) control increments per step
        x0s: (B, d) initial points

    Returns:
        (B, N + 1, d) paths
    """
    B, N, d = increments.shape
    dt = T / N
    out = np.empty((B, N + 1, d))
    X = np.array(x0s, dtype=float)
    out[:, 0] = X
    for k in range(N):
        X = X + np.asarray(drift(X)) * dt + np.matmul(sigma1(X), increments[:, k, :, None])[..., 0]
        out[:, k + 1] = X
    if not np.all(np.isfinite(out)) or np.max(np.abs(out)) > BLOWUP_LIMIT:
        raise NumericError("skeleton path left the finite range", {"steps": N})
    return out


def _level_paths(drift, sigma1, control: Control, x0s: np.ndarray, level: int) -> np.ndarray:
    N = 2 ** level
    inc = overlap_matrix(control.T, control.M, N) @ control.hdot1
    inc = np.broadcast_to(inc, (x0s.shape[0],) + inc.shape)
    return euler_paths(drift, sigma1, inc, x0s, control.T)


def richardson_path(drift, sigma1: Sigma, control: Control, x0s, level: int) -> np.ndarray:
    """2 X^level - X^(level-1) on the grid of level - 1; shape (n_x0, 2^(level-1) + 1, d)."""
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    fine = _level_paths(drift, sigma1, control, x0s, level)
    coarse = _level_paths(drift, sigma1, control, x0s, level - 1)
    return 2.0 * fine[:, ::2] - coarse


def _solve(drift, sigma1: Sigma, control: Control, x0s: np.ndarray, n_levels: int,
           base_level: int, tol: float) -> SkeletonSolution:
    if n_levels < 2:
        raise ConfigError("n_levels must be at least 2", {"n_levels": n_levels})

    history = []
    prev_path = None
    prev_rich = None
    result = None
    estimate = math.inf
    raw = math.inf
    for level in range(base_level, base_level + n_levels):
        path = _level_paths(drift, sigma1, control, x0s, level)
        if prev_path is None:
            prev_path = path
            continue
        raw = float(np.max(np.abs(path[:, ::2] - prev_path)))
        rich = 2.0 * path[:, ::2] - prev_path
        entry = {"level": level, "raw_diff": raw}
        if prev_rich is not None:
            estimate = float(np.max(np.abs(rich[:, ::2] - prev_rich)))
            entry["richardson_diff"] = estimate
        history.append(entry)
        result = (level, rich)
        prev_path, prev_rich = path, rich
        if estimate < tol or raw < tol:
            estimate = min(estimate, raw)
            break

    level, rich = result
    if not estimate < tol:
        raws = [h["raw_diff"] for h in history]
        ratio = raws[-1] / raws[-2] if len(raws) > 1 and raws[-2] > 0 else None
        raise NumericError(
            "dyadic refinement did not reach the tolerance",
            {"tol": tol, "error_estimate": estimate, "last_ratio": ratio,
             "geometric": ratio is not None and ratio <= GEOMETRIC_RATIO, "history": history},
        )
    logger.debug("skeleton accepted at level %d, error %.3e", level, estimate)
    times = np.linspace(0.0, control.T, rich.shape[1])
    return SkeletonSolution(times, rich, level, estimate, True, history, raw)


def solve_skeleton(drift: AveragedDrift, sigma1: Sigma, control: Control, x0, n_levels: int = DEFAULT_LEVELS,
                   base_level: int = BASE_LEVEL, tol: float = DYADIC_TOL) -> SkeletonSolution:
    """
    Solve the skeleton equation from one initial point by dyadic refinement.

    Args:
        drift: averaged drift fbar
        sigma1: slow diffusion map
        control: Cameron-Martin control (only hdot1 enters)
        x0: initial slow state
        n_levels: number of dyadic levels to try, starting at 2^base_level steps
        tol: refinement stops once the error estimate falls below it

    Returns:
        SkeletonSolution with the Richardson-combined path and the level history

    Raises:
        NumericError: the tolerance was not met within n_levels (payload carries the history)
    """
    x0s = as_states(np.atleast_1d(np.asarray(x0, dtype=float))[None], control.dim_slow, "x0")
    solution = _solve(drift, sigma1, control, x0s, n_levels, base_level, tol)
    solution.path = solution.path[0]
    solution.path[0] = x0s[0]
    return solution


def _resolve(drift_or_model: Union[AveragedDrift, ModelSpec], sigma1: Optional[Sigma]):
    if isinstance(drift_or_model, ModelSpec):
        return AveragedDrift.analytic(drift_or_model), sigma1 or drift_or_model.sigma1
    if sigma1 is None:
        raise ConfigError("sigma1 is required when passing a drift")
    return drift_or_model, sigma1


def skeleton_map_S(drift_or_model: Union[AveragedDrift, ModelSpec], control: Control, x0_grid,
                   n_levels: int = DEFAULT_LEVELS, sigma1: Optional[Sigma] = None,
                   tol: float = DYADIC_TOL) -> SkeletonSolution:
    """S(h)(t, x) on the solution grid for every x in x0_grid; path is (n_x0, n_times, d)."""
    drift, sigma1 = _resolve(drift_or_model, sigma1)
    x0s = as_states(x0_grid, control.dim_slow, "x0_grid")
    return _solve(drift, sigma1, control, x0s, n_levels, BASE_LEVEL, tol)


def time_modulus_slope(path: np.ndarray, times: np.ndarray, lags: Optional[Sequence[int]] = None) -> float:
    """
    Log-log slope of sup_t |X_{t+lag} - X_t| against the lag time.

    A path with |X_t - X_s| <= C |t - s|^(1/2) has slope at least about 1/2.
    """
    path = np.asarray(path, dtype=float)
    if path.ndim == 1:
        path = path[:, None]
    n = path.shape[0]
    if lags is None:
        lags = [2 ** k for k in range(int(math.log2(max(n - 1, 1))) - 1) if 2 ** k < n]
    dt = times[1] - times[0]
    sups = [float(np.max(np.linalg.norm(path[lag:] - path[:-lag], axis=-1))) for lag in lags]
    return loglog_slope(np.asarray(lags) * dt, sups)


def mollified_sequence(control: Control, widths: Sequence[float]) -> List[Control]:
    return [control.mollify(w) for w in widths]


def perturbed_sequence(control: Control, direction: Control, ns: Sequence[int]) -> List[Control]:
    """h + direction / n for each n, with direction scaled to unit norm."""
    if direction.norm_sq == 0:
        raise ConfigError("perturbation direction must be non-zero")
    unit = 1.0 / direction.norm
    return [control.perturb(direction, unit / n) for n in ns]


def check_skeleton_continuity(drift: AveragedDrift, sigma1: Sigma, controls: Sequence[Control], limit: Control,
                              x0, tol: float = 1e-10, level: int = 10, norm_bound: Optional[float] = None) -> dict:
    """
    Report sup-norm gaps ||S(h_n) - S(h)|| along a sequence h_n -> h and the
    time modulus of S(h).

    Args:
        norm_bound: N with every control (limit included) in B_N; defaults to
            the largest norm of the family

    Returns:
        Dictionary with the gaps, whether they decrease (up to tol), the
        shared norm bound, the time-modulus slope and the overall pass flag
    """
    x0s = as_states(np.atleast_1d(np.asarray(x0, dtype=float))[None], limit.dim_slow, "x0")
    base = richardson_path(drift, sigma1, limit, x0s, level)[0]
    gaps = []
    norms = []
    for c in controls:
        path = richardson_path(drift, sigma1, c, x0s, level)[0]
        gaps.append(float(np.max(np.abs(path - base))))
        norms.append(c.norm)
    decreasing = all(b <= a + tol for a, b in zip(gaps, gaps[1:]))
    bound = max(norms + [limit.norm]) if norm_bound is None else float(norm_bound)
    within = all(n <= bound * (1 + 1e-12) for n in norms + [limit.norm])
    times = np.linspace(0.0, limit.T, base.shape[0])
    slope = time_modulus_slope(base, times)
    report = {
        "gaps": gaps,
        "control_norms": norms,
        "norm_bound": bound,
        "within_bound": within,
        "decreasing": decreasing,
        "time_modulus_slope": slope,
        "slope_ok": bool(slope >= 0.4),
    }
    report["passed"] = bool(decreasing and within and report["slope_ok"])
    return report
