"""
Slow-fast system definitions and the analytically solvable built-in models.

Coefficient maps are vectorised: ``f1(x, y)`` takes arrays shaped (..., d) and
returns (..., d); ``sigma1(x)`` and ``sigma2(x, y)`` return (..., d, d).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.errors import ConfigError, ModelError
from app.noise import derive_rng

logger = logging.getLogger(__name__)

DriftMap = Callable[[np.ndarray, np.ndarray], np.ndarray]
SlowDiffusion = Callable[[np.ndarray], np.ndarray]
FastDiffusion = Callable[[np.ndarray, np.ndarray], np.ndarray]

BUILTIN_DEFAULTS: Dict[str, Dict[str, float]] = {
    "LIN1D": {"a1": 0.5, "b1": -0.5, "s1": 1.0, "s2": 1.0},
    "NONLIP1D": {"s1": 1.0, "s2": 1.0, "cap10": 10.0},
}

VIOLATION_TOL = 1e-12


class AssumptionProfile(BaseModel):
    """Constants of the standing assumptions on one slow-fast system."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    beta1: float = Field(gt=0)
    beta2: float = Field(gt=0)
    gamma: float = Field(ge=0)
    lip_const_C: float = Field(ge=0)
    lam: float = Field(default=0.0, ge=0, alias="lambda")
    eta: float

    @model_validator(mode="after")
    def _eta_in_range(self):
        if not 0.0 < self.eta < 1.0 / math.e:
            raise ValueError(f"eta must lie in (0, 1/e), got {self.eta}")
        return self


@dataclass(frozen=True)
class ModelSpec:
    """One slow-fast system: four coefficient maps plus assumption constants."""

    name: str
    dim_slow: int
    dim_fast: int
    f1: DriftMap
    sigma1: SlowDiffusion
    f2: DriftMap
    sigma2: FastDiffusion
    assumptions: AssumptionProfile
    params: Dict[str, float] = field(default_factory=dict)
    # closed-form averaged drift, when the invariant measure is known
    fbar_exact: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.dim_slow < 1 or self.dim_fast < 1:
            raise ConfigError("model dimensions must be positive", {"model": self.name})


def _scalar_matrix(s: float, prefix: tuple, d: int) -> np.ndarray:
    return np.broadcast_to(s * np.eye(d), prefix + (d, d))


def psi(x: np.ndarray, cap10: float = 10.0) -> np.ndarray:
    """x * log(1 / (|x| v e^-cap10)), the non-Lipschitz drift of NONLIP1D."""
    x = np.asarray(x, dtype=float)
    return -x * np.log(np.maximum(np.abs(x), math.exp(-cap10)))


def _fast_relaxation(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return -(y - x)


def _lin1d(a1: float, b1: float, s1: float, s2: float) -> ModelSpec:
    c = a1 + b1
    return ModelSpec(
        name="LIN1D",
        dim_slow=1,
        dim_fast=1,
        f1=lambda x, y: a1 * x + b1 * y,
        sigma1=lambda x: _scalar_matrix(s1, np.shape(x)[:-1], 1),
        f2=_fast_relaxation,
        sigma2=lambda x, y: _scalar_matrix(s2, np.broadcast_shapes(np.shape(x), np.shape(y))[:-1], 1),
        assumptions=AssumptionProfile(
            beta1=1.0, beta2=1.0, gamma=max(1.0, s2 * s2), lip_const_C=1.0, lam=0.0, eta=0.1
        ),
        params={"a1": a1, "b1": b1, "s1": s1, "s2": s2},
        fbar_exact=lambda x: c * np.asarray(x, dtype=float),
    )


def _nonlip1d(s1: float, s2: float, cap10: float) -> ModelSpec:
    return ModelSpec(
        name="NONLIP1D",
        dim_slow=1,
        dim_fast=1,
        f1=lambda x, y: psi(x, cap10) + y,
        sigma1=lambda x: _scalar_matrix(s1, np.shape(x)[:-1], 1),
        f2=_fast_relaxation,
        sigma2=lambda x, y: _scalar_matrix(s2, np.broadcast_shapes(np.shape(x), np.shape(y))[:-1], 1),
        # lambda = 0 is a modelling choice for the log-modulus drift
        assumptions=AssumptionProfile(
            beta1=1.0, beta2=1.0, gamma=max(1.0, s2 * s2), lip_const_C=1.0, lam=0.0, eta=0.1
        ),
        params={"s1": s1, "s2": s2, "cap10": cap10},
        # mu_x is Normal(x, s2^2 / 2), so the y-average of f1 is psi(x) + x
        fbar_exact=lambda x: psi(x, cap10) + np.asarray(x, dtype=float),
    )


def make_builtin(name: str, params: Optional[Dict[str, float]] = None) -> ModelSpec:
    """
    Build a built-in model by name.

    Args:
        name: LIN1D or NONLIP1D
        params: overrides of the default parameters

    Returns:
        ModelSpec with analytically derived assumption constants
    """
    key = name.upper()
    if key not in BUILTIN_DEFAULTS:
        raise ConfigError(f"unknown model '{name}'", {"known": sorted(BUILTIN_DEFAULTS)})

    merged = dict(BUILTIN_DEFAULTS[key])
    for k, v in (params or {}).items():
        if k not in merged:
            raise ConfigError(f"unknown parameter '{k}' for {key}", {"allowed": sorted(merged)})
        merged[k] = v

    for k, v in merged.items():
        try:
            v = float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"parameter '{k}' is not a number", {"value": repr(v)})
        if not math.isfinite(v):
            raise ConfigError(f"parameter '{k}' must be finite", {"value": v})
        merged[k] = v

    # zero amplitudes switch a noise channel off; negative ones are meaningless
    for k in ("s1", "s2"):
        if merged[k] < 0:
            raise ConfigError(f"noise amplitude '{k}' must be non-negative", {"value": merged[k]})

    try:
        if key == "LIN1D":
            return _lin1d(merged["a1"], merged["b1"], merged["s1"], merged["s2"])
        if merged["cap10"] <= 0:
            raise ConfigError("cap10 must be positive", {"value": merged["cap10"]})
        return _nonlip1d(merged["s1"], merged["s2"], merged["cap10"])
    except ValidationError as exc:
        raise ConfigError("invalid assumption constants", {"errors": exc.errors()})


def describe(model: ModelSpec) -> dict:
    """JSON-ready summary of a model for manifests."""
    return {
        "name": model.name,
        "dim_slow": model.dim_slow,
        "dim_fast": model.dim_fast,
        "params": dict(model.params),
        "assumptions": model.assumptions.model_dump(by_alias=True),
    }


@dataclass
class DissipativityReport:
    """Outcome of the sampled dissipativity check."""

    samples: int
    box_radius: float
    max_violation: float
    worst_input: Dict[str, list]
    moment_violation: float
    passed: bool
    moment_passed: bool

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "box_radius": self.box_radius,
            "max_violation": self.max_violation,
            "worst_input": self.worst_input,
            "moment_violation": self.moment_violation,
            "passed": self.passed,
            "moment_passed": self.moment_passed,
        }


def _hs_norm_sq(m: np.ndarray) -> np.ndarray:
    return np.sum(m * m, axis=(-2, -1))


def _require_finite(values: np.ndarray, inputs: Dict[str, np.ndarray], what: str):
    bad = ~np.isfinite(values.reshape(values.shape[0], -1)).all(axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise ModelError(
            f"{what} returned a non-finite value",
            {name: arr[i].tolist() for name, arr in inputs.items()},
        )


def check_dissipativity(model: ModelSpec, sample_count: int, box_radius: float, seed: int) -> DissipativityReport:
    """
    Sample the one-sided dissipativity inequality on a box.

    Checks 2<y1-y2, f2(x1,y1)-f2(x2,y2)> + ||s2(x1,y1)-s2(x1,y2)||^2
    <= -beta1 |y1-y2|^2 + C |x1-x2|^2 on uniform random tuples, and reports
    the companion moment inequality 2<y,f2(x,y)> + ||s2(x,y)||^2
    <= -beta2 |y|^2 + gamma (1+|x|^2) alongside.
    """
    if sample_count < 1:
        raise ConfigError("sample_count must be at least 1", {"sample_count": sample_count})
    if not box_radius > 0:
        raise ConfigError("box_radius must be positive", {"box_radius": box_radius})

    rng = derive_rng(seed, 0)
    n, dx, dy = sample_count, model.dim_slow, model.dim_fast
    x1 = rng.uniform(-box_radius, box_radius, (n, dx))
    x2 = rng.uniform(-box_radius, box_radius, (n, dx))
    y1 = rng.uniform(-box_radius, box_radius, (n, dy))
    y2 = rng.uniform(-box_radius, box_radius, (n, dy))
    inputs = {"x1": x1, "x2": x2, "y1": y1, "y2": y2}

    f_a = np.asarray(model.f2(x1, y1), dtype=float)
    f_b = np.asarray(model.f2(x2, y2), dtype=float)
    s_a = np.asarray(model.sigma2(x1, y1), dtype=float)
    s_b = np.asarray(model.sigma2(x1, y2), dtype=float)
    for values, what in ((f_a, "f2"), (f_b, "f2"), (s_a, "sigma2"), (s_b, "sigma2")):
        _require_finite(values, inputs, what)

    a = model.assumptions
    dy_ = y1 - y2
    dx_ = x1 - x2
    lhs = 2.0 * np.sum(dy_ * (f_a - f_b), axis=-1) + _hs_norm_sq(s_a - s_b)
    rhs = -a.beta1 * np.sum(dy_ * dy_, axis=-1) + a.lip_const_C * np.sum(dx_ * dx_, axis=-1)
    violation = lhs - rhs
    worst = int(np.argmax(violation))

    moment_lhs = 2.0 * np.sum(y1 * f_a, axis=-1) + _hs_norm_sq(s_a)
    moment_rhs = -a.beta2 * np.sum(y1 * y1, axis=-1) + a.gamma * (1.0 + np.sum(x1 * x1, axis=-1))
    moment_violation = float(np.max(moment_lhs - moment_rhs))

    max_violation = float(violation[worst])
    report = DissipativityReport(
        samples=n,
        box_radius=float(box_radius),
        max_violation=max_violation,
        worst_input={k: v[worst].tolist() for k, v in inputs.items()},
        moment_violation=moment_violation,
        passed=max_violation <= VIOLATION_TOL,
        moment_passed=moment_violation <= VIOLATION_TOL,
    )
    logger.info("dissipativity %s: max violation %.3e over %d samples", model.name, max_violation, n)
    return report


def check_growth(model: ModelSpec, sample_count: int, box_radius: float, seed: int,
                 const: Optional[float] = None) -> dict:
    """
    Sample sup_y ||sigma2(x,y)||^2 <= C (1 + |x|^2).

    Returns:
        Dictionary with the estimated constant and the pass flag against
        ``const`` (default: the model's gamma)
    """
    if sample_count < 1:
        raise ConfigError("sample_count must be at least 1", {"sample_count": sample_count})
    rng = derive_rng(seed, 1)
    x = rng.uniform(-box_radius, box_radius, (sample_count, model.dim_slow))
    y = rng.uniform(-box_radius, box_radius, (sample_count, model.dim_fast))
    s = np.asarray(model.sigma2(x, y), dtype=float)
    _require_finite(s, {"x": x, "y": y}, "sigma2")
    ratio = _hs_norm_sq(s) / (1.0 + np.sum(x * x, axis=-1))
    limit = model.assumptions.gamma if const is None else const
    estimate = float(np.max(ratio))
    return {"estimated_constant": estimate, "constant": limit, "passed": estimate <= limit + VIOLATION_TOL}
