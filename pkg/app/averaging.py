"""
Averaged drift and invariant-measure statistics of the frozen process.

The averaged drift fbar(x) is the integral of f1(x, .) against the invariant
measure mu_x of the frozen fast dynamics; here it is estimated by time
averages of f1(x, Y_t^x) after a burn-in, replicated over independent paths.
"""

import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.interpolate import interp1d

from app.errors import ConfigError, NumericWarning
from app.export import read_frame_csv, write_frame_csv
from app.model import ModelSpec
from app.noise import derive_seed
from app.sde import as_state, as_states, frozen_common_noise
from app.stats import mean_se

logger = logging.getLogger(__name__)

DEFAULT_STEP = 0.01
UNDERFLOW_FLOOR = 1e-300


class AveragedDrift:
    """
    Evaluable averaged drift with provenance.

    Tabulated drifts (one slow dimension) interpolate linearly between grid
    points and extrapolate the end segments.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], provenance: Dict,
                 grid: Optional[np.ndarray] = None, values: Optional[np.ndarray] = None,
                 se: Optional[np.ndarray] = None):
        self._fn = fn
        self.provenance = provenance
        self.grid = grid
        self.values = values
        self.se = se

    def __call__(self, x) -> np.ndarray:
        return self._fn(np.asarray(x, dtype=float))

    @property
    def is_tabulated(self) -> bool:
        return self.grid is not None

    @classmethod
    def analytic(cls, model: ModelSpec) -> "AveragedDrift":
        if model.fbar_exact is None:
            raise ConfigError(f"model {model.name} has no closed-form averaged drift")
        return cls(model.fbar_exact, {"kind": "analytic", "model": model.name, "params": dict(model.params)})

    @classmethod
    def tabulated(cls, grid, values, se=None, provenance: Optional[Dict] = None) -> "AveragedDrift":
        grid = np.asarray(grid, dtype=float).reshape(-1)
        values = np.asarray(values, dtype=float).reshape(-1)
        if grid.size != values.size or grid.size == 0:
            raise ConfigError("drift table needs matching, non-empty grid and values")
        order = np.argsort(grid)
        grid, values = grid[order], values[order]
        se = None if se is None else np.asarray(se, dtype=float).reshape(-1)[order]
        if grid.size == 1:
            fn = lambda x: np.full_like(x, values[0])
        else:
            table = interp1d(grid, values, kind="linear", fill_value="extrapolate", assume_sorted=True)
            fn = lambda x: table(x[..., 0])[..., None]
        return cls(fn, provenance or {"kind": "table"}, grid, values, se)

    @classmethod
    def constant(cls, value: float, dim: int = 1) -> "AveragedDrift":
        return cls(lambda x: np.full(x.shape[:-1] + (dim,), float(value)), {"kind": "constant", "value": value})

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], name: str = "function") -> "AveragedDrift":
        return cls(fn, {"kind": name})

    def to_frame(self) -> pd.DataFrame:
        if not self.is_tabulated:
            raise ConfigError("only tabulated drifts can be exported")
        se = self.se if self.se is not None else np.full(self.grid.size, np.nan)
        return pd.DataFrame({"x": self.grid, "fbar": self.values, "se": se})

    def to_csv(self, path: Union[str, Path]) -> Path:
        return write_frame_csv(self.to_frame(), path)

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "AveragedDrift":
        frame = read_frame_csv(path, "drift")
        missing = {"x", "fbar"} - set(frame.columns)
        if missing:
            raise ConfigError("drift table is missing columns", {"missing": sorted(missing)})
        se = frame["se"].to_numpy() if "se" in frame.columns else None
        return cls.tabulated(frame["x"].to_numpy(), frame["fbar"].to_numpy(), se, {"kind": "table", "source": str(path)})

    def __repr__(self):
        return f"AveragedDrift({json.dumps(self.provenance, sort_keys=True, default=str)})"


def _window(model: ModelSpec, T_burn: Optional[float], T_avg: float, h: float):
    if not T_avg > 0:
        raise ConfigError("T_avg must be positive", {"T_avg": T_avg})
    if T_burn is None:
        T_burn = 10.0 / model.assumptions.beta1
    if T_burn < 0:
        raise ConfigError("T_burn must be non-negative", {"T_burn": T_burn})
    n_burn = int(round(T_burn / h))
    n_total = n_burn + max(1, int(round(T_avg / h)))
    return T_burn, n_burn, n_total


def _check_reps(n_reps: int):
    if n_reps < 1:
        raise ConfigError("n_reps must be at least 1", {"n_reps": n_reps})


def _time_average(model: ModelSpec, x: np.ndarray, y0: np.ndarray, fn, T_burn: Optional[float], T_avg: float,
                  n_reps: int, seed: int, h: float, parallelism: int):
    """Per-replicate time averages of fn(x, Y_t) over the averaging window."""
    T_burn, n_burn, n_total = _window(model, T_burn, T_avg, h)
    _, fast = frozen_common_noise(model, x[None], y0[None], n_total * h, n_total, seed, n_reps, parallelism)
    window = fast[:, 0, n_burn:n_total]
    xb = np.broadcast_to(x, window.shape[:-1] + (model.dim_slow,))
    return np.mean(fn(xb, window), axis=1), T_burn


def estimate_fbar(model: ModelSpec, x_grid, T_burn: Optional[float], T_avg: float, n_reps: int, seed: int,
                  y0=None, h: float = DEFAULT_STEP, parallelism: int = 1) -> AveragedDrift:
    """
    Estimate fbar on a grid of slow states by replicated ergodic averages.

    Args:
        x_grid: slow states (one dimension for a tabulated result)
        T_burn: burn-in time (default 10 / beta1)
        T_avg: averaging window length
        n_reps: independent replicates per grid point
        seed: base seed; grid point i uses derive_seed(seed, i)

    Returns:
        Tabulated AveragedDrift with per-point standard errors
    """
    _check_reps(n_reps)
    xs = as_states(x_grid, model.dim_slow, "x_grid")
    if model.dim_slow != 1:
        raise ConfigError("tabulated averaged drift supports one slow dimension")
    y0v = np.zeros(model.dim_fast) if y0 is None else as_state(y0, model.dim_fast, "y0")

    means, ses = [], []
    burn = None
    for i, x in enumerate(xs):
        averages, burn = _time_average(model, x, y0v, model.f1, T_burn, T_avg, n_reps, derive_seed(seed, i), h,
                                       parallelism)
        m, s = mean_se(averages)
        means.append(float(m[0]))
        ses.append(float(s[0]))
        logger.debug("fbar(%g) = %.6g +- %.2g", x[0], means[-1], ses[-1])

    provenance = {
        "kind": "ergodic-average",
        "model": model.name,
        "T_burn": burn,
        "T_avg": T_avg,
        "n_reps": n_reps,
        "seed": seed,
        "step": h,
    }
    return AveragedDrift.tabulated(xs[:, 0], means, ses, provenance)


def invariant_moments(model: ModelSpec, x, p: int, T_burn: Optional[float], T_avg: float, n_reps: int, seed: int,
                      y0=None, h: float = DEFAULT_STEP, parallelism: int = 1) -> dict:
    """Estimate int |y|^p mu_x(dy) for p in {2, 4}."""
    if p not in (2, 4):
        raise ConfigError("only p = 2 and p = 4 are supported", {"p": p})
    _check_reps(n_reps)
    xv = as_state(x, model.dim_slow, "x")
    y0v = np.zeros(model.dim_fast) if y0 is None else as_state(y0, model.dim_fast, "y0")
    power = lambda _, y: np.sum(y * y, axis=-1) ** (p // 2)
    averages, burn = _time_average(model, xv, y0v, power, T_burn, T_avg, n_reps, seed, h, parallelism)
    mean, se = mean_se(averages)
    return {"x": xv.tolist(), "p": p, "mean": float(mean), "se": float(se), "T_burn": burn, "n_reps": n_reps}


@dataclass
class ErgodicityReport:
    """Fitted contraction of the frozen process and its stationary second moment."""

    rate: float
    beta1: float
    envelope_ratio: float
    n_points: int
    stationary_moment: float
    stationary_se: float
    burn_in: float

    @property
    def rate_ok(self) -> bool:
        return self.rate >= self.beta1

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "beta1": self.beta1,
            "rate_ok": self.rate_ok,
            "envelope_ratio": self.envelope_ratio,
            "n_points": self.n_points,
            "stationary_moment": self.stationary_moment,
            "stationary_se": self.stationary_se,
            "burn_in": self.burn_in,
        }


def fit_contraction(model: ModelSpec, x, y1, y2, T: float, n_paths: int, seed: int, h: float = DEFAULT_STEP,
                    parallelism: int = 1) -> ErgodicityReport:
    """
    Fit log E|Y_t^x(y1) - Y_t^x(y2)|^2 = a - r t under common noise.

    The envelope ratio is max_t E|dY_t|^2 / (|y1 - y2|^2 e^{-beta1 t}); it
    stays at or below 1 when the contraction bound holds.
    """
    if not T > 0:
        raise ConfigError("T must be positive", {"T": T})
    xv = as_state(x, model.dim_slow, "x")
    a = as_state(y1, model.dim_fast, "y1")
    b = as_state(y2, model.dim_fast, "y2")
    if np.array_equal(a, b):
        raise ConfigError("y1 and y2 must differ")

    n_steps = max(1, int(round(T / h)))
    times, fast = frozen_common_noise(model, np.vstack([xv, xv]), np.vstack([a, b]), T, n_steps, seed, n_paths,
                                      parallelism)
    dist2 = np.mean(np.sum((fast[:, 0] - fast[:, 1]) ** 2, axis=-1), axis=0)
    usable = np.isfinite(dist2) & (dist2 > UNDERFLOW_FLOOR)
    n_points = int(usable.sum())
    if n_points < 3:
        warnings.warn(f"contraction fit uses only {n_points} points before underflow", NumericWarning)
        logger.warning("degenerate contraction fit: %d usable points", n_points)
    if n_points >= 2:
        slope, _ = np.polyfit(times[usable], np.log(dist2[usable]), 1)
        rate = float(-slope)
    else:
        rate = float("nan")

    beta1 = model.assumptions.beta1
    envelope = dist2[usable] / (np.sum((a - b) ** 2) * np.exp(-beta1 * times[usable]))
    half = n_steps // 2
    stationary, st_se = mean_se(np.mean(np.sum(fast[:, 0, half:] ** 2, axis=-1), axis=1))
    return ErgodicityReport(
        rate=rate,
        beta1=beta1,
        envelope_ratio=float(np.max(envelope)),
        n_points=n_points,
        stationary_moment=float(stationary),
        stationary_se=float(st_se),
        burn_in=float(times[half]),
    )


def fbar_modulus(drift: AveragedDrift, separations: Sequence[float], x_grid=None) -> Dict[float, float]:
    """
    Empirical gamma(a) = sup over 0 < |x1 - x2| <= a of |fbar(x1) - fbar(x2)| / |x1 - x2|.

    Uses the drift's own table when it has one, otherwise x_grid (default a
    uniform grid on [-2, 2]). Separations without any pair are left out.
    """
    if x_grid is None:
        grid = drift.grid if drift.is_tabulated else np.linspace(-2.0, 2.0, 401)
    else:
        grid = np.asarray(x_grid, dtype=float).reshape(-1)
    values = drift(grid[:, None])[:, 0]
    dx = np.abs(grid[:, None] - grid[None, :])
    df = np.abs(values[:, None] - values[None, :])
    positive = dx > 0
    ratio = np.where(positive, df / np.where(positive, dx, 1.0), 0.0)

    table = {}
    for a in separations:
        mask = positive & (dx <= a * (1 + 1e-12))
        if mask.any():
            table[float(a)] = float(np.max(ratio[mask]))
    return table


def averaging_gap(model: ModelSpec, x, y, times: Sequence[float], n_paths: int, seed: int,
                  fbar: Optional[AveragedDrift] = None, h: float = DEFAULT_STEP, parallelism: int = 1) -> List[dict]:
    """
    Estimate |E f1(x, Y_t^x(y)) - fbar(x)| at the requested times.

    Returns:
        One row per time with the gap and its standard error
    """
    xv = as_state(x, model.dim_slow, "x")
    yv = as_state(y, model.dim_fast, "y")
    fbar = fbar or AveragedDrift.analytic(model)
    times = np.asarray(times, dtype=float)
    if times.size == 0 or np.any(times <= 0):
        raise ConfigError("times must be positive")
    n_steps = int(round(times.max() / h))
    grid, fast = frozen_common_noise(model, xv[None], yv[None], n_steps * h, n_steps, seed, n_paths, parallelism)
    target = np.asarray(fbar(xv[None]))[0]
    rows = []
    for t in times:
        k = int(round(t / h))
        y_t = fast[:, 0, k]
        vals = model.f1(np.broadcast_to(xv, (y_t.shape[0], model.dim_slow)), y_t)
        mean, se = mean_se(vals)
        rows.append({
            "t": float(grid[k]),
            "gap": float(np.linalg.norm(mean - target)),
            "se": float(np.linalg.norm(se)),
        })
    return rows
