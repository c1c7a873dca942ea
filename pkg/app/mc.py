"""
Rare-event probabilities of terminal slow-state events across an epsilon ladder.

Tilted estimates simulate the controlled system along a rate-minimising
control and reweight every path by its Girsanov likelihood ratio.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.control import Control
from app.errors import ConfigError, NumericWarning
from app.export import write_frame_csv
from app.model import ModelSpec
from app.noise import derive_seed
from app.sde import SimConfig, simulate_terminal
from app.stats import effective_sample_size, mean_se, trend_violation

logger = logging.getLogger(__name__)

MIN_PATHS = 100
UNESTIMABLE_BELOW = 1e-9


class TerminalEvent:
    """Either the whole space or the half-space a . X_T >= b."""

    def __init__(self, a=None, b: Optional[float] = None):
        if (a is None) != (b is None):
            raise ConfigError("a half-space event needs both a and b")
        self.a = None if a is None else np.atleast_1d(np.asarray(a, dtype=float))
        self.b = None if b is None else float(b)

    @classmethod
    def whole_space(cls) -> "TerminalEvent":
        return cls()

    @property
    def is_whole_space(self) -> bool:
        return self.a is None

    def contains(self, terminal: np.ndarray) -> np.ndarray:
        if self.is_whole_space:
            return np.ones(terminal.shape[0], dtype=bool)
        return terminal @ self.a >= self.b

    def to_dict(self) -> dict:
        if self.is_whole_space:
            return {"kind": "whole-space"}
        return {"kind": "half-space", "a": self.a.tolist(), "b": self.b}

    def __repr__(self):
        return f"TerminalEvent({self.to_dict()})"


@dataclass
class EventEstimate:
    p_hat: float
    se: float
    n_paths: int
    method: str
    hits: int
    ess: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "p_hat": self.p_hat,
            "se": self.se,
            "n_paths": self.n_paths,
            "method": self.method,
            "hits": self.hits,
            "ess": self.ess,
        }


def estimate_event(model: ModelSpec, config: SimConfig, event: TerminalEvent, n_paths: int, method: str = "naive",
                   tilt: Optional[Control] = None, x0=0.0, y0=0.0, parallelism: int = 1) -> EventEstimate:
    """
    Estimate P(X_T in event).

    Args:
        method: "naive" (indicator mean) or "tilted" (controlled paths with
            likelihood-ratio weights)
        tilt: control driving the tilted paths

    Returns:
        EventEstimate with standard error and, for tilted runs, the effective
        sample size of the weighted hits
    """
    if n_paths < MIN_PATHS:
        raise ConfigError(f"n_paths must be at least {MIN_PATHS}", {"n_paths": n_paths})
    if method not in ("naive", "tilted"):
        raise ConfigError("method must be 'naive' or 'tilted'", {"method": method})
    if method == "tilted" and tilt is None:
        raise ConfigError("tilted estimation needs a tilt control")

    control = tilt if method == "tilted" else None
    terminal, log_w = simulate_terminal(model, config, x0, y0, n_paths, control, parallelism)
    hits = event.contains(terminal)

    if method == "naive":
        p_hat, se = mean_se(hits.astype(float))
        return EventEstimate(float(p_hat), float(se), n_paths, method, int(hits.sum()))

    weighted = np.where(hits, np.exp(log_w), 0.0)
    p_hat, se = mean_se(weighted)
    ess = effective_sample_size(log_w[hits]) if hits.any() else 0.0
    if ess == 0.0:
        warnings.warn("tilted estimate has zero effective sample size", NumericWarning)
        logger.warning("zero effective sample size at epsilon=%g", config.epsilon)
    return EventEstimate(float(p_hat), float(se), n_paths, method, int(hits.sum()), ess)


def weight_mean(model: ModelSpec, config: SimConfig, tilt: Control, n_paths: int, x0=0.0, y0=0.0,
                parallelism: int = 1) -> tuple:
    """Mean likelihood ratio over tilted paths (1 in expectation) with its standard error."""
    _, log_w = simulate_terminal(model, config, x0, y0, n_paths, tilt, parallelism)
    mean, se = mean_se(np.exp(log_w))
    return float(mean), float(se)


@dataclass
class LdpSweep:
    """Per-epsilon estimates of eps log P against the reference rate."""

    event: TerminalEvent
    I_ref: float
    rows: List[dict] = field(default_factory=list)
    trend: Optional[float] = None

    @property
    def monotone(self) -> Optional[bool]:
        return None if self.trend is None else bool(self.trend <= 0.0)

    @property
    def final_gap(self) -> float:
        return self.rows[-1]["gap"] if self.rows else float("nan")

    def to_frame(self) -> pd.DataFrame:
        columns = ["epsilon", "delta", "p_hat", "se", "eps_log_p", "eps_log_p_se", "gap", "method", "n_paths", "hits",
                   "ess", "estimable"]
        return pd.DataFrame(self.rows, columns=columns)

    def summary(self) -> dict:
        return {
            "event": self.event.to_dict(),
            "I_ref": self.I_ref,
            "epsilons": [r["epsilon"] for r in self.rows],
            "gaps": [r["gap"] for r in self.rows],
            "trend_violation": self.trend,
            "monotone": self.monotone,
            "final_gap": self.final_gap,
        }


def default_delta(epsilon: float) -> float:
    return epsilon * epsilon


def ldp_sweep(model: ModelSpec, base_config: SimConfig, event: TerminalEvent, epsilons: Sequence[float],
              n_paths: int, I_ref: float, seed: int, delta_rule: Callable[[float], float] = default_delta,
              method: str = "tilted", tilt: Optional[Control] = None, x0=0.0, y0=0.0,
              parallelism: int = 1) -> LdpSweep:
    """
    Estimate eps log P(X_T in event) along a decreasing epsilon ladder.

    The trend statistic is the largest increase of |eps log P + I_ref|
    between consecutive rungs beyond one standard-error band; it is <= 0
    when the gap shrinks along the ladder.
    """
    eps = np.asarray(epsilons, dtype=float)
    if eps.size == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
        raise ConfigError("epsilons must be positive and strictly decreasing", {"epsilons": eps.tolist()})

    sweep = LdpSweep(event=event, I_ref=float(I_ref))
    for i, e in enumerate(eps):
        config = base_config.model_copy(update={"epsilon": float(e), "delta": float(delta_rule(e)),
                                                "seed": derive_seed(seed, i)})
        # revalidate the scale ordering
        config = SimConfig(**config.model_dump())
        est = estimate_event(model, config, event, n_paths, method, tilt, x0, y0, parallelism)
        estimable = est.hits > 0 and est.p_hat >= UNESTIMABLE_BELOW
        if estimable:
            eps_log_p = float(e * math.log(est.p_hat))
            band = float(e * est.se / est.p_hat)
            gap = abs(eps_log_p + I_ref)
        else:
            eps_log_p = band = gap = float("nan")
        sweep.rows.append({
            "epsilon": float(e),
            "delta": config.delta,
            "p_hat": est.p_hat,
            "se": est.se,
            "eps_log_p": eps_log_p,
            "eps_log_p_se": band,
            "gap": gap,
            "method": method,
            "n_paths": n_paths,
            "hits": est.hits,
            "ess": est.ess,
            "estimable": estimable,
        })
        logger.info("epsilon %.4g: p=%.3e eps log p=%.4f", e, est.p_hat, eps_log_p)

    usable = [r for r in sweep.rows if r["estimable"]]
    if len(usable) >= 2:
        sweep.trend = trend_violation([r["gap"] for r in usable], [r["eps_log_p_se"] for r in usable])
    return sweep


def write_sweep_csv(sweep: LdpSweep, path: Union[str, Path]) -> Path:
    return write_frame_csv(sweep.to_frame(), path)
