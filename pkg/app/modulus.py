"""
The rho_eta modulus family and a Bihari comparison-bound evaluator.

rho_eta(x) = x log(1/x) for x <= eta, continued by its tangent line at eta
for x > eta. rho_0_eta(x) = rho_eta(sqrt(x))^2.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Literal, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator
from scipy import integrate, optimize

from app.errors import ConfigError, DomainError, NumericError

logger = logging.getLogger(__name__)

QUAD_EPSABS = 1e-10
BISECT_XTOL = 1e-12
PROPERTY_TOL = 1e-12


class ModulusSpec(BaseModel):
    """One member of the modulus family."""

    model_config = ConfigDict(frozen=True)

    eta: float
    kind: Literal["rho_eta", "rho_0_eta"] = "rho_eta"

    @model_validator(mode="after")
    def _eta_in_range(self):
        if not 0.0 < self.eta < 1.0 / math.e:
            raise ValueError(f"eta must lie in (0, 1/e), got {self.eta}")
        return self

    @property
    def kink(self) -> float:
        """Point where the modulus switches branch."""
        return self.eta if self.kind == "rho_eta" else self.eta ** 2


def modulus_spec(eta: float, kind: str = "rho_eta") -> ModulusSpec:
    """Build a ModulusSpec, turning validation failures into ConfigError."""
    try:
        return ModulusSpec(eta=eta, kind=kind)
    except ValidationError as exc:
        raise ConfigError("invalid modulus", {"eta": eta, "kind": kind, "errors": str(exc)})


def _rho_eta(eta: float, x: np.ndarray) -> np.ndarray:
    log_inv_eta = -math.log(eta)
    # x log(1/x) -> 0 as x -> 0
    safe = np.where(x > 0, x, 1.0)
    small = np.where(x > 0, -safe * np.log(safe), 0.0)
    large = eta * log_inv_eta + (log_inv_eta - 1.0) * (x - eta)
    return np.where(x <= eta, small, large)


def rho(spec: ModulusSpec, x):
    """
    Evaluate the modulus at x (scalar or array).

    Raises:
        DomainError: x negative or NaN
    """
    arr = np.asarray(x, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise DomainError("modulus argument must be a non-negative number", {"x": np.atleast_1d(arr).tolist()[:10]})

    if spec.kind == "rho_eta":
        out = _rho_eta(spec.eta, arr)
    else:
        out = _rho_eta(spec.eta, np.sqrt(arr)) ** 2
    return float(out) if out.ndim == 0 else out


def concavity_violation(values: np.ndarray, grid: np.ndarray) -> float:
    """Largest increase between successive chord slopes (<= 0 for concave data)."""
    values = np.asarray(values, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if grid.size < 3:
        return 0.0
    slopes = np.diff(values) / np.diff(grid)
    return float(np.max(np.diff(slopes)))


def monotonicity_violation(values: np.ndarray) -> float:
    """Largest decrease between successive values (<= 0 for non-decreasing data)."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(np.max(-np.diff(values)))


@dataclass
class RhoPropertyReport:
    eta1: float
    eta2: float
    p: float
    monotonicity_violation: float
    power_violation: float
    power_gap_above_eta: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "eta1": self.eta1,
            "eta2": self.eta2,
            "p": self.p,
            "monotonicity_violation": self.monotonicity_violation,
            "power_violation": self.power_violation,
            "power_gap_above_eta": self.power_gap_above_eta,
            "passed": self.passed,
        }


def check_rho_properties(eta1: float, eta2: float, p: float, grid: Sequence[float]) -> RhoPropertyReport:
    """
    Check that rho_eta decreases in eta and the power inequality
    x^p rho_eta(x) <= rho_eta(x^(1+p)) / (1+p).

    The power inequality is asserted where x <= eta (there both sides agree);
    above eta it fails for the tangent continuation, so its gap is only reported.
    """
    if not (1.0 > eta1 > eta2 > 0.0) or eta1 >= 1.0 / math.e:
        raise ConfigError("need 1/e > eta1 > eta2 > 0", {"eta1": eta1, "eta2": eta2})
    if not p > 1:
        raise ConfigError("p must be greater than 1", {"p": p})
    x = np.asarray(grid, dtype=float)
    if x.size == 0 or np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise ConfigError("grid must be non-empty and strictly positive")

    big = modulus_spec(eta1)
    small = modulus_spec(eta2)
    mono = float(np.max(rho(big, x) - rho(small, x)))

    inside_gaps, outside_gaps = [], []
    for spec in (big, small):
        gap = x ** p * rho(spec, x) - rho(spec, x ** (1.0 + p)) / (1.0 + p)
        inside = x <= spec.eta
        if inside.any():
            inside_gaps.append(float(np.max(gap[inside])))
        if (~inside).any():
            outside_gaps.append(float(np.max(gap[~inside])))
    power_violation = max(inside_gaps, default=0.0)

    report = RhoPropertyReport(
        eta1=eta1,
        eta2=eta2,
        p=p,
        monotonicity_violation=mono,
        power_violation=power_violation,
        power_gap_above_eta=max(outside_gaps, default=0.0),
        passed=mono <= PROPERTY_TOL and power_violation <= PROPERTY_TOL,
    )
    logger.debug("rho properties: %s", report.to_dict())
    return report


class StepFunction:
    """
    Piecewise-constant non-negative forcing q on [0, T].

    ``edges`` has one more entry than ``values``; q = values[i] on [edges[i], edges[i+1]).
    """

    def __init__(self, edges: Sequence[float], values: Sequence[float]):
        self.edges = np.asarray(edges, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.edges.size != self.values.size + 1 or self.values.size == 0:
            raise ConfigError("step function needs len(edges) == len(values) + 1")
        if np.any(np.diff(self.edges) <= 0):
            raise ConfigError("step function edges must be increasing")
        if np.any(self.values < 0) or np.any(~np.isfinite(self.values)):
            raise ConfigError("step function values must be finite and non-negative")

    @classmethod
    def constant(cls, value: float, T: float) -> "StepFunction":
        return cls([0.0, T], [value])

    def integral(self, t) -> np.ndarray:
        """Exact integral of q over [0, t]."""
        t = np.asarray(t, dtype=float)
        lengths = np.clip(t[..., None] - self.edges[:-1], 0.0, np.diff(self.edges))
        return np.sum(lengths * self.values, axis=-1)


@dataclass
class BihariCurve:
    times: np.ndarray
    bound: np.ndarray
    forcing: np.ndarray

    def to_dict(self) -> dict:
        return {"t": self.times.tolist(), "bound": self.bound.tolist(), "Q": self.forcing.tolist()}


RhoLike = Union[ModulusSpec, Literal["linear"], Callable[[float], float]]


def _as_callable(rho_like: RhoLike) -> Callable[[float], float]:
    if isinstance(rho_like, ModulusSpec):
        return lambda y: float(rho(rho_like, y))
    if rho_like == "linear":
        return lambda y: y
    if callable(rho_like):
        return rho_like
    raise ConfigError(f"unsupported modulus {rho_like!r}")


def _quad(fn: Callable[[float], float], a: float, b: float, points) -> float:
    if b < a:
        return -_quad(fn, b, a, points)
    pts = [p for p in points if a < p < b] or None
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, abserr = integrate.quad(fn, a, b, epsabs=QUAD_EPSABS, points=pts, limit=200)
        except integrate.IntegrationWarning as exc:
            raise NumericError("quadrature did not converge", {"a": a, "b": b, "message": str(exc)})
    return value


def bihari_bound(f0: float, q: Union[StepFunction, float], rho_like: RhoLike, T: float,
                 n_grid: int = 50) -> BihariCurve:
    """
    Evaluate the comparison bound g^-1(g(f0) + int_0^t q) on a uniform grid.

    Args:
        f0: initial value, > 0
        q: step function (or constant) forcing
        rho_like: ModulusSpec, "linear" or any positive non-decreasing callable
        T: horizon
        n_grid: number of grid intervals

    Returns:
        BihariCurve sampled on n_grid + 1 points
    """
    if not f0 > 0:
        raise ConfigError("f0 must be positive", {"f0": f0})
    if not T > 0:
        raise ConfigError("T must be positive", {"T": T})
    if not isinstance(q, StepFunction):
        q = StepFunction.constant(float(q), T)

    fn = _as_callable(rho_like)
    eta = rho_like.eta if isinstance(rho_like, ModulusSpec) else 0.1
    x0 = eta / 2.0
    breaks = [rho_like.kink] if isinstance(rho_like, ModulusSpec) else []
    inv = lambda y: 1.0 / fn(y)

    def g(x: float) -> float:
        return _quad(inv, x0, x, breaks)

    times = np.linspace(0.0, T, n_grid + 1)
    forcing = q.integral(times)
    g_f0 = g(f0)
    bound = np.empty_like(times)
    hi = f0
    for i, Q in enumerate(forcing):
        if Q == 0.0:
            bound[i] = f0
            continue
        target = g_f0 + Q
        while g(hi) < target:
            hi *= 2.0
            if hi > 1e300:
                raise NumericError("comparison bound escapes to infinity", {"t": float(times[i])})
        bound[i] = optimize.bisect(lambda x: g(x) - target, f0, hi, xtol=BISECT_XTOL)

    logger.debug("bihari bound f0=%g T=%g -> %g", f0, T, bound[-1])
    return BihariCurve(times=times, bound=bound, forcing=forcing)


def bihari_exponent_bound(f0: float, Q) -> np.ndarray:
    """Closed form f0^exp(-Q), valid for f0 < eta under the rho_eta modulus."""
    if not 0 < f0 < 1:
        raise ConfigError("exponent-form bound needs 0 < f0 < 1", {"f0": f0})
    return f0 ** np.exp(-np.asarray(Q, dtype=float))


def bihari_linear_bound(f0: float, C: float, delta: float, T: float) -> float:
    """C (f0 + f0^exp(-delta T)), the form of the bound for forcing delta * rho_eta."""
    if not f0 > 0:
        raise ConfigError("f0 must be positive", {"f0": f0})
    return C * (f0 + f0 ** math.exp(-delta * T))
