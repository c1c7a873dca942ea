"""
Rate function I = 1/2 inf ||h||^2 over controls steering the skeleton into a
target set, and a Monte Carlo check of the variational representation
-eps log E exp(-F / eps) <= E[1/2 ||h||^2 + F(controlled path)].
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from app.averaging import AveragedDrift
from app.control import Control
from app.errors import ConfigError, NumericError
from app.model import ModelSpec
from app.noise import derive_rng, derive_seed
from app.sde import SimConfig, simulate_controlled, simulate_coupled
from app.skeleton import euler_paths, overlap_matrix
from app.stats import effective_sample_size, mean_se

logger = logging.getLogger(__name__)

MU_SCHEDULE = (1e1, 1e2, 1e3, 1e4, 1e5, 1e6)
FD_STEP = 1e-6
DEFAULT_STARTS = 8
MIN_ESS_FRACTION = 0.01


class TerminalPoint:
    """X_T = z up to tol."""

    kind = "terminal-point"

    def __init__(self, z, tol: float = 1e-4):
        if not tol > 0:
            raise ConfigError("tolerance must be positive", {"tol": tol})
        self.z = np.atleast_1d(np.asarray(z, dtype=float))
        self.tol = tol

    def penalty(self, paths: np.ndarray, times: np.ndarray) -> np.ndarray:
        return np.sum((paths[:, -1] - self.z) ** 2, axis=-1)

    def residual(self, paths: np.ndarray, times: np.ndarray) -> np.ndarray:
        return np.linalg.norm(paths[:, -1] - self.z, axis=-1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "z": self.z.tolist(), "tol": self.tol}


class TerminalHalfspace:
    """a . X_T >= b up to tol."""

    kind = "terminal-halfspace"

    def __init__(self, a, b: float, tol: float = 1e-4):
        if not tol > 0:
            raise ConfigError("tolerance must be positive", {"tol": tol})
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        self.b = float(b)
        self.tol = tol

    def _shortfall(self, paths):
        return np.maximum(0.0, self.b - paths[:, -1] @ self.a)

    def penalty(self, paths, times):
        return self._shortfall(paths) ** 2

    def residual(self, paths, times):
        return self._shortfall(paths)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a.tolist(), "b": self.b, "tol": self.tol}


class PathTarget:
    """sup_t |X_t - f(t)| <= tol; the penalty is the time-averaged squared distance."""

    kind = "path-target"

    def __init__(self, f: Callable[[np.ndarray], np.ndarray], tol: float = 1e-2):
        if not tol > 0:
            raise ConfigError("tolerance must be positive", {"tol": tol})
        self.f = f
        self.tol = tol

    def _target(self, times):
        target = np.asarray(self.f(times), dtype=float)
        return target[:, None] if target.ndim == 1 else target

    def penalty(self, paths, times):
        return np.mean(np.sum((paths - self._target(times)) ** 2, axis=-1), axis=1)

    def residual(self, paths, times):
        return np.max(np.linalg.norm(paths - self._target(times), axis=-1), axis=1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "tol": self.tol}


Constraint = Union[TerminalPoint, TerminalHalfspace, PathTarget]


@dataclass
class RateProblem:
    """Minimum-norm control problem for one initial point."""

    drift: AveragedDrift
    sigma1: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    constraint: Constraint
    T: float = 1.0
    M: int = 20
    norm_cap: float = 4.0
    level: Optional[int] = None

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError("M must be at least 1", {"M": self.M})
        if not self.T > 0:
            raise ConfigError("T must be positive", {"T": self.T})
        if not self.norm_cap > 0:
            raise ConfigError("norm cap must be positive", {"norm_cap": self.norm_cap})
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if self.level is None:
            self.level = max(9, math.ceil(math.log2(8 * self.M)))

    @property
    def dim(self) -> int:
        return self.x0.size

    @property
    def dt(self) -> float:
        return self.T / self.M


@dataclass
class RateResult:
    value: float
    minimizer: Optional[Control]
    residual: float
    iterations: int
    winner: Optional[int]
    mu: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.value)

    def to_dict(self) -> dict:
        return {
            "value": self.value if self.feasible else "inf",
            "residual": self.residual,
            "iterations": self.iterations,
            "winner": self.winner,
            "mu": self.mu,
            "norm_sq": None if self.minimizer is None else self.minimizer.norm_sq,
            "diagnostics": self.diagnostics,
        }


def lq_rate(x0: float, z: float, c: float, s1: float, T: float) -> float:
    """
    Closed-form rate of reaching X_T = z for dX = c X dt + s1 hdot dt.

    I = (z - x0 e^{cT})^2 / (2 s1^2 (e^{2cT} - 1) / (2c)), with the c -> 0
    limit (z - x0)^2 / (2 s1^2 T).
    """
    gap = z - x0 * math.exp(c * T)
    reach = T if abs(c) < 1e-12 else math.expm1(2.0 * c * T) / (2.0 * c)
    var = s1 * s1 * reach
    if var == 0.0:
        return 0.0 if gap == 0.0 else math.inf
    return gap * gap / (2.0 * var)


class _Objective:
    """Penalised objective over the flattened hdot1 parameters."""

    def __init__(self, problem: RateProblem):
        self.problem = problem
        N = 2 ** problem.level
        self.fine = overlap_matrix(problem.T, problem.M, N)
        self.coarse = overlap_matrix(problem.T, problem.M, N // 2)
        self.times = np.linspace(0.0, problem.T, N // 2 + 1)
        self.n_params = problem.M * problem.dim

    def paths(self, thetas: np.ndarray) -> np.ndarray:
        """Richardson-combined skeleton paths for a batch of parameter vectors (B, P)."""
        p = self.problem
        hdot = thetas.reshape(thetas.shape[0], p.M, p.dim)
        x0s = np.broadcast_to(p.x0, (thetas.shape[0], p.dim))
        fine = euler_paths(p.drift, p.sigma1, np.einsum("nm,bmd->bnd", self.fine, hdot), x0s, p.T)
        coarse = euler_paths(p.drift, p.sigma1, np.einsum("nm,bmd->bnd", self.coarse, hdot), x0s, p.T)
        return 2.0 * fine[:, ::2] - coarse

    def penalty(self, thetas: np.ndarray) -> np.ndarray:
        return self.problem.constraint.penalty(self.paths(thetas), self.times)

    def residual(self, theta: np.ndarray) -> float:
        return float(self.problem.constraint.residual(self.paths(theta[None]), self.times)[0])

    def norm_part(self, theta: np.ndarray) -> float:
        return 0.5 * float(theta @ theta) * self.problem.dt

    def value(self, theta: np.ndarray, mu: float) -> float:
        return self.norm_part(theta) + mu * float(self.penalty(theta[None])[0])

    def gradient(self, theta: np.ndarray, mu: float, step: float = FD_STEP) -> np.ndarray:
        grad = theta * self.problem.dt
        if mu == 0.0:
            return grad
        eye = np.eye(self.n_params) * step
        batch = np.vstack([theta + eye, theta - eye])
        pen = self.penalty(batch)
        fd = (pen[: self.n_params] - pen[self.n_params:]) / (2.0 * step)
        if not np.all(np.isfinite(fd)):
            raise NumericError("non-finite penalty gradient", {"control": theta.tolist()})
        return grad + mu * fd

    def control(self, theta: np.ndarray) -> Control:
        p = self.problem
        return Control(p.T, theta.reshape(p.M, p.dim))


def _random_start(problem: RateProblem, seed: int, index: int) -> np.ndarray:
    """Uniform draw from the Cameron-Martin ball of radius N/2."""
    rng = derive_rng(seed, index)
    P = problem.M * problem.dim
    direction = rng.standard_normal(P)
    direction /= np.linalg.norm(direction)
    radius = 0.5 * problem.norm_cap * rng.uniform() ** (1.0 / P)
    return direction * radius / math.sqrt(problem.dt)


def _run_start(objective: _Objective, theta0: np.ndarray, tol: float) -> dict:
    theta = theta0
    iterations = 0
    residual = math.inf
    mu_used = None
    for mu in MU_SCHEDULE:
        res = optimize.minimize(
            objective.value,
            theta,
            args=(mu,),
            jac=objective.gradient,
            method="BFGS",
            options={"gtol": 1e-8, "maxiter": 400},
        )
        theta = res.x
        iterations += int(res.nit)
        mu_used = mu
        residual = objective.residual(theta)
        if residual <= tol:
            break
    return {"theta": theta, "iterations": iterations, "residual": residual, "mu": mu_used}


def minimize_rate(problem: RateProblem, starts: int = DEFAULT_STARTS, seed: int = 0,
                  parallelism: int = 1) -> RateResult:
    """
    Minimise 1/2 ||h||^2 subject to the problem's constraint.

    Each start runs quasi-Newton descent on 1/2 ||h||^2 + mu * penalty with mu
    escalated until the residual meets the tolerance. The best feasible start
    wins; with no feasible start the value is +inf.
    """
    objective = _Objective(problem)
    tol = problem.constraint.tol
    zero = np.zeros(objective.n_params)
    zero_residual = objective.residual(zero)
    if zero_residual <= tol:
        logger.info("zero control meets the constraint")
        return RateResult(0.0, objective.control(zero), zero_residual, 0, None, None, {"starts": 0})
    if starts < 1:
        raise ConfigError("starts must be at least 1", {"starts": starts})

    thetas = [_random_start(problem, seed, i) for i in range(starts)]
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            runs = list(pool.map(lambda t: _run_start(objective, t, tol), thetas))
    else:
        runs = [_run_start(objective, t, tol) for t in thetas]

    feasible = [(0.5 * float(r["theta"] @ r["theta"]) * problem.dt, i) for i, r in enumerate(runs)
                if r["residual"] <= tol]
    diagnostics = {
        "starts": starts,
        "residuals": [r["residual"] for r in runs],
        "iterations": [r["iterations"] for r in runs],
    }
    if not feasible:
        logger.warning("no start met the constraint (best residual %.3e)", min(diagnostics["residuals"]))
        best = min(range(starts), key=lambda i: runs[i]["residual"])
        return RateResult(math.inf, None, runs[best]["residual"], sum(diagnostics["iterations"]), None,
                          runs[best]["mu"], diagnostics)

    _, winner = min(feasible)
    run = runs[winner]
    control = objective.control(run["theta"])
    result = RateResult(
        value=0.5 * control.norm_sq,
        minimizer=control,
        residual=run["residual"],
        iterations=run["iterations"],
        winner=winner,
        mu=run["mu"],
        diagnostics=diagnostics,
    )
    logger.info("rate %.6g from start %d (residual %.2e)", result.value, winner, result.residual)
    return result


def rate_gradient_check(problem: RateProblem, control: Control, step: float = 1e-6,
                        mu: float = MU_SCHEDULE[0]) -> dict:
    """
    Compare a central finite-difference gradient of the full objective with
    the gradient the optimizer uses.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ConfigError("step must lie in [1e-7, 1e-3]", {"step": step})
    objective = _Objective(problem)
    theta = np.asarray(control.hdot1, dtype=float).reshape(-1)
    if theta.size != objective.n_params:
        raise ConfigError("control does not match the problem grid")
    internal = objective.gradient(theta, mu)
    fd = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        fd[i] = (objective.value(theta + e, mu) - objective.value(theta - e, mu)) / (2.0 * step)
    deviation = float(np.max(np.abs(fd - internal)) / max(1.0, float(np.max(np.abs(internal)))))
    return {"step": step, "mu": mu, "max_relative_deviation": deviation}


@dataclass
class Functional:
    """Bounded path functional F(X) evaluated on slow paths (n_paths, n_times, d)."""

    name: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __call__(self, slow: np.ndarray, times: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(slow, times), dtype=float)


def zero() -> Functional:
    return Functional("zero", lambda slow, times: np.zeros(slow.shape[0]))


def constant(c: float) -> Functional:
    return Functional(f"constant({c})", lambda slow, times: np.full(slow.shape[0], float(c)))


def terminal_ramp(level: float = 1.0) -> Functional:
    """F(X) = min(1, max(0, level - X_T)) on the first slow component."""
    return Functional(f"terminal_ramp({level})", lambda slow, times: np.clip(level - slow[:, -1, 0], 0.0, 1.0))


FUNCTIONALS = {"zero": zero, "constant": constant, "terminal_ramp": terminal_ramp}


def variational_check(model: ModelSpec, config: SimConfig, F: Functional, controls: Sequence[Control], n_paths: int,
                      seed: int, x0=0.0, y0=0.0, parallelism: int = 1) -> dict:
    """
    Estimate both sides of the variational representation.

    The left side -eps log E exp(-F / eps) uses uncontrolled paths; each
    supplied control gives an upper candidate 1/2 ||h||^2 + E F(controlled).
    """
    if not controls:
        raise ConfigError("at least one control is required")
    eps = config.epsilon
    base = config.model_copy(update={"seed": seed})
    sample = simulate_coupled(model, base, x0, y0, n_paths, parallelism)
    values = F(sample.slow, sample.times)

    a = -values / eps
    log_mean = logsumexp(a) - math.log(n_paths)
    lhs = -eps * log_mean
    w = np.exp(a - a.max())
    lhs_se = eps * float(np.std(w, ddof=1) / (math.sqrt(n_paths) * np.mean(w))) if n_paths > 1 else 0.0
    ess = effective_sample_size(a)
    unreliable = ess < MIN_ESS_FRACTION * n_paths

    candidates = []
    for i, control in enumerate(controls):
        cfg = config.model_copy(update={"seed": derive_seed(seed, i + 1)})
        controlled = simulate_controlled(model, cfg, x0, y0, control, n_paths, parallelism)
        mean, se = mean_se(F(controlled.slow, controlled.times))
        candidates.append({
            "index": i,
            "norm_sq": control.norm_sq,
            "value": 0.5 * control.norm_sq + float(mean),
            "se": float(se),
        })

    best = min(candidates, key=lambda c: c["value"])
    slack = 3.0 * math.sqrt(lhs_se ** 2 + best["se"] ** 2) + 1e-12
    report = {
        "functional": F.name,
        "epsilon": eps,
        "lhs": float(lhs),
        "lhs_se": lhs_se,
        "lhs_ess": ess,
        "lhs_unreliable": bool(unreliable),
        "candidates": candidates,
        "best": best["index"],
        "rhs": best["value"],
        "holds": bool(lhs <= best["value"] + slack),
    }
    logger.info("variational check %s at eps=%g: lhs %.4f rhs %.4f", F.name, eps, lhs, best["value"])
    return report
