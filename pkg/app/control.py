"""
Cameron-Martin controls with piecewise-constant derivative.

h = (h1, h2) with hdot1, hdot2 constant on M uniform intervals of [0, T];
h1 is therefore piecewise linear and its integrals are exact.
"""

import math
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from app.errors import ConfigError, DomainError
from app.export import read_frame_csv, write_frame_csv


def _as_rows(values, M: Optional[int], what: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim == 0:
        if M is None:
            raise ConfigError(f"{what}: scalar needs an interval count")
        arr = np.full((M, 1), float(arr))
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ConfigError(f"{what} must have shape (M, d)", {"shape": list(arr.shape)})
    if np.any(np.isnan(arr)):
        raise DomainError(f"{what} contains NaN", {"first_nan_interval": int(np.argwhere(np.isnan(arr))[0][0])})
    if np.any(~np.isfinite(arr)):
        raise DomainError(f"{what} contains an infinite value")
    return arr


class Control:
    """
    Piecewise-constant control derivative on a uniform grid.

    Attributes:
        T: horizon
        hdot1: (M, dim_slow) slow-channel derivative samples
        hdot2: (M, dim_fast) fast-channel derivative samples
        norm_sq: cached sum |hdot_i|^2 * T / M
    """

    def __init__(self, T: float, hdot1, hdot2=None, dim_fast: int = 1):
        if not T > 0 or not math.isfinite(T):
            raise ConfigError("control horizon must be positive", {"T": T})
        self.T = float(T)
        self.hdot1 = _as_rows(hdot1, None, "hdot1")
        M = self.hdot1.shape[0]
        if hdot2 is None:
            self.hdot2 = np.zeros((M, dim_fast))
        else:
            self.hdot2 = _as_rows(hdot2, M, "hdot2")
            if self.hdot2.shape[0] != M:
                raise ConfigError("hdot1 and hdot2 need the same number of intervals")
        self.hdot1.setflags(write=False)
        self.hdot2.setflags(write=False)
        self.norm_sq = float(np.sum(self.hdot1 ** 2) + np.sum(self.hdot2 ** 2)) * self.dt

    @property
    def M(self) -> int:
        return self.hdot1.shape[0]

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def dim_slow(self) -> int:
        return self.hdot1.shape[1]

    @property
    def dim_fast(self) -> int:
        return self.hdot2.shape[1]

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm_sq)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.M + 1)

    @classmethod
    def zero(cls, T: float, M: int, dim_slow: int = 1, dim_fast: int = 1) -> "Control":
        return cls(T, np.zeros((M, dim_slow)), np.zeros((M, dim_fast)))

    @classmethod
    def constant(cls, T: float, M: int, v1, v2=0.0, dim_slow: int = 1, dim_fast: int = 1) -> "Control":
        """Constant derivatives v1 (slow) and v2 (fast) on M intervals."""
        return cls(
            T,
            np.broadcast_to(np.asarray(v1, dtype=float), (M, dim_slow)),
            np.broadcast_to(np.asarray(v2, dtype=float), (M, dim_fast)),
        )

    def in_ball(self, N: float) -> bool:
        """Membership in B_N = {||h||^2 <= N^2}."""
        return self.norm_sq <= N * N

    def interval_index(self, t) -> np.ndarray:
        idx = np.floor(np.asarray(t, dtype=float) / self.dt).astype(int)
        return np.clip(idx, 0, self.M - 1)

    def h1(self, t) -> np.ndarray:
        """Exact value of h1(t) = int_0^t hdot1, for t of shape (n,); returns (n, dim_slow)."""
        t = np.clip(np.atleast_1d(np.asarray(t, dtype=float)), 0.0, self.T)
        cum = np.vstack([np.zeros((1, self.dim_slow)), np.cumsum(self.hdot1 * self.dt, axis=0)])
        idx = np.minimum(np.floor(t / self.dt).astype(int), self.M - 1)
        return cum[idx] + self.hdot1[idx] * (t - idx * self.dt)[:, None]

    def steps_for(self, n_steps: int, T: float):
        """
        Per-step derivative samples for a simulation grid of n_steps on [0, T].

        Raises:
            ConfigError: horizons differ or n_steps is not a multiple of M
        """
        if abs(T - self.T) > 1e-12 * max(1.0, T):
            raise ConfigError("control horizon does not match the simulation horizon", {"control_T": self.T, "T": T})
        if n_steps % self.M:
            raise ConfigError(
                "control intervals must be a whole number of simulation steps",
                {"M": self.M, "n_steps": n_steps},
            )
        k = n_steps // self.M
        return np.repeat(self.hdot1, k, axis=0), np.repeat(self.hdot2, k, axis=0)

    def refine(self, k: int) -> "Control":
        """Split every interval into k equal parts with the same derivative."""
        if k < 1:
            raise ConfigError("refinement factor must be at least 1", {"k": k})
        return Control(self.T, np.repeat(self.hdot1, k, axis=0), np.repeat(self.hdot2, k, axis=0))

    def perturb(self, direction: "Control", scale: float) -> "Control":
        """self + scale * direction (same grid)."""
        if direction.M != self.M or direction.T != self.T:
            raise ConfigError("perturbation direction must share the control grid")
        return Control(self.T, self.hdot1 + scale * direction.hdot1, self.hdot2 + scale * direction.hdot2)

    def mollify(self, width: float) -> "Control":
        """
        Box-kernel average of the derivative over a window of the given width.

        The grid is refined first so the window spans several intervals; as
        width -> 0 the result converges to self in the Cameron-Martin norm.
        """
        if not width > 0:
            raise ConfigError("mollifier width must be positive", {"width": width})
        r = max(1, math.ceil(8.0 * self.dt / width))
        fine = self.refine(r)
        k = max(1, int(round(width / fine.dt)))
        kernel = np.ones(k)

        def smooth(a: np.ndarray) -> np.ndarray:
            out = np.empty_like(a)
            counts = np.convolve(np.ones(a.shape[0]), kernel, mode="same")
            for j in range(a.shape[1]):
                out[:, j] = np.convolve(a[:, j], kernel, mode="same") / counts
            return out

        return Control(self.T, smooth(fine.hdot1), smooth(fine.hdot2))

    def truncate_after(self, t: float) -> "Control":
        """Zero the derivative on every interval that starts at or after t."""
        starts = self.edges[:-1]
        keep = (starts < t - 1e-12)[:, None]
        return Control(self.T, np.where(keep, self.hdot1, 0.0), np.where(keep, self.hdot2, 0.0))

    def distance(self, other: "Control") -> float:
        """Cameron-Martin distance ||self - other|| on a common refinement."""
        if other.T != self.T:
            raise ConfigError("controls live on different horizons")
        m = math.lcm(self.M, other.M)
        a, b = self.refine(m // self.M), other.refine(m // other.M)
        diff = np.sum((a.hdot1 - b.hdot1) ** 2) + np.sum((a.hdot2 - b.hdot2) ** 2)
        return math.sqrt(diff * a.dt)

    def to_frame(self) -> pd.DataFrame:
        data = {"interval": np.arange(self.M), "t_start": self.edges[:-1]}
        for j in range(self.dim_slow):
            data[f"hdot1_{j + 1}"] = self.hdot1[:, j]
        for j in range(self.dim_fast):
            data[f"hdot2_{j + 1}"] = self.hdot2[:, j]
        return pd.DataFrame(data)

    def to_csv(self, path: Union[str, Path]) -> Path:
        return write_frame_csv(self.to_frame(), path)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, T: float) -> "Control":
        cols1 = sorted((c for c in frame.columns if c.startswith("hdot1_")), key=lambda c: int(c.split("_")[1]))
        cols2 = sorted((c for c in frame.columns if c.startswith("hdot2_")), key=lambda c: int(c.split("_")[1]))
        if not cols1:
            raise ConfigError("control table has no hdot1 columns", {"columns": list(frame.columns)})
        frame = frame.sort_values("interval") if "interval" in frame.columns else frame
        hdot2 = frame[cols2].to_numpy(dtype=float) if cols2 else None
        return cls(T, frame[cols1].to_numpy(dtype=float), hdot2)

    @classmethod
    def from_csv(cls, path: Union[str, Path], T: float) -> "Control":
        return cls.from_frame(read_frame_csv(path, "control"), T)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Control):
            return NotImplemented
        return (
            self.T == other.T
            and np.array_equal(self.hdot1, other.hdot1)
            and np.array_equal(self.hdot2, other.hdot2)
        )

    __hash__ = None

    def __repr__(self):
        return f"Control(T={self.T}, M={self.M}, norm_sq={self.norm_sq:.6g})"
