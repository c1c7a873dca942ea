"""
Property suites run by the ``check`` command.

Each suite returns (passed, detail) and is timed by ``run_suites``. The
"quick" scale keeps Monte Carlo budgets small enough for a laptop; "full"
uses the budgets the thresholds were calibrated for.
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from app.averaging import AveragedDrift, averaging_gap, estimate_fbar, fit_contraction, invariant_moments
from app.control import Control
from app.errors import ConfigError
from app.export import FLOAT_FORMAT
from app.mc import TerminalEvent, estimate_event, ldp_sweep, weight_mean
from app.model import check_dissipativity, check_growth, make_builtin
from app.modulus import (
    bihari_bound,
    bihari_exponent_bound,
    check_rho_properties,
    concavity_violation,
    modulus_spec,
    rho,
)
from app.noise import NOISE_BLOCK, derive_seed
from app.ratefn import (
    RateProblem,
    TerminalHalfspace,
    TerminalPoint,
    constant,
    lq_rate,
    minimize_rate,
    rate_gradient_check,
    terminal_ramp,
    variational_check,
    zero,
)
from app.sde import (
    SimConfig,
    frozen_common_noise,
    increment_moments,
    khasminskii_error,
    path_to_frame,
    simulate_controlled,
    simulate_coupled,
    simulate_flow,
    simulate_frozen,
    sup_moment,
)
from app.skeleton import check_skeleton_continuity, perturbed_sequence, solve_skeleton, time_modulus_slope
from app.stats import loglog_slope, mean_se

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Scale:
    frozen_paths: int
    invariant_reps: int
    invariant_T_avg: float
    fbar_reps: int
    fbar_T_avg: float
    se_budgets: Tuple[int, ...]
    khasminskii_paths: int
    rate_starts: int
    variational_paths: int
    sweep_paths: int
    flow_paths: int
    mc_paths: int


SCALES = {
    "quick": Scale(
        frozen_paths=2000,
        invariant_reps=50,
        invariant_T_avg=20.0,
        fbar_reps=40,
        fbar_T_avg=10.0,
        se_budgets=(10, 40, 160, 640),
        khasminskii_paths=200,
        rate_starts=3,
        variational_paths=2000,
        sweep_paths=4000,
        flow_paths=200,
        mc_paths=4000,
    ),
    "full": Scale(
        frozen_paths=10_000,
        invariant_reps=200,
        invariant_T_avg=50.0,
        fbar_reps=100,
        fbar_T_avg=20.0,
        se_budgets=(25, 100, 400, 1600),
        khasminskii_paths=1000,
        rate_starts=8,
        variational_paths=20_000,
        sweep_paths=20_000,
        flow_paths=2000,
        mc_paths=20_000,
    ),
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict
    seconds: float

    def to_dict(self) -> dict:
        """Reported outcome, without timing."""
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def _within(value: float, target: float, se: float, k: float = 3.0, floor: float = 0.0) -> bool:
    return abs(value - target) <= k * se + floor


def _linear(c: float) -> AveragedDrift:
    return AveragedDrift.from_function(lambda x: c * x, f"linear({c})")


def modulus_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    grid = np.logspace(-8, 1, 10_000)
    spec = modulus_spec(0.1)
    jump = abs(float(rho(spec, spec.eta * (1 + 1e-12))) - float(rho(spec, spec.eta * (1 - 1e-12))))
    concavity = concavity_violation(rho(spec, grid), grid)
    props = check_rho_properties(0.2, 0.1, 2.0, grid)

    growth = 2.0
    gronwall = bihari_bound(1.0, growth, "linear", 1.0)
    gronwall_err = float(np.max(np.abs(gronwall.bound / np.exp(growth * gronwall.times) - 1.0)))

    curve = bihari_bound(0.01, 1.0, modulus_spec(0.3), 1.0)
    exponent_err = float(np.max(np.abs(curve.bound - bihari_exponent_bound(0.01, curve.forcing))))

    detail = {
        "continuity_jump": jump,
        "concavity_violation": concavity,
        "properties": props.to_dict(),
        "gronwall_relative_error": gronwall_err,
        "exponent_form_error": exponent_err,
    }
    passed = jump <= 1e-10 and concavity <= 1e-10 and props.passed and gronwall_err <= 1e-8 and exponent_err <= 1e-6
    return passed, detail


def frozen_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    model = make_builtin("LIN1D")
    report = fit_contraction(model, 0.0, -1.0, 1.0, 3.0, scale.frozen_paths, seed, parallelism=parallelism)

    x, y0 = 1.0, 2.0
    a = model.assumptions
    h = 0.01
    sample = simulate_frozen(model, x, y0, 2.0, 200, derive_seed(seed, 1), scale.frozen_paths, parallelism)
    moments = []
    for t in (0.5, 1.0, 2.0):
        k = int(round(t / h))
        m, se = mean_se(np.sum(sample.fast[:, k] ** 2, axis=-1))
        bound = math.exp(-a.beta2 * t) * y0 ** 2 + a.gamma / a.beta2 * (1 + x ** 2)
        moments.append({"t": t, "moment": float(m), "se": float(se), "bound": bound,
                        "holds": bool(m <= bound + 3 * se)})

    # Lipschitz dependence on the frozen slow state
    _, fast = frozen_common_noise(model, [[0.0], [0.5]], [[0.0], [0.0]], 2.0, 200, derive_seed(seed, 2), 100,
                                  parallelism)
    lip = float(np.max(np.abs(fast[:, 0] - fast[:, 1]))) / 0.5

    detail = {"contraction": report.to_dict(), "moments": moments, "lipschitz_ratio": lip}
    passed = (
        abs(report.rate - 2.0) <= 0.1
        and report.envelope_ratio <= 1.0 + 1e-9
        and all(m["holds"] for m in moments)
        and lip <= a.lip_const_C + 1e-9
    )
    return passed, detail


def invariant_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    model = make_builtin("LIN1D")
    rows = []
    for i, (x, target) in enumerate(((0.0, 0.5), (1.0, 1.5))):
        est = invariant_moments(model, x, 2, None, scale.invariant_T_avg, scale.invariant_reps, derive_seed(seed, i),
                                parallelism=parallelism)
        est["target"] = target
        est["holds"] = _within(est["mean"], target, est["se"])
        rows.append(est)
    return all(r["holds"] for r in rows), {"moments": rows}


def averaged_drift_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    model = make_builtin("LIN1D", {"a1": 0.5, "b1": 0.5})
    grid = [-1.0, -0.5, 0.0, 0.5, 1.0]
    drift = estimate_fbar(model, grid, None, scale.fbar_T_avg, scale.fbar_reps, seed, parallelism=parallelism)
    points_ok = [bool(_within(v, g, s)) for g, v, s in zip(drift.grid, drift.values, drift.se)]

    ses = []
    for i, n in enumerate(scale.se_budgets):
        d = estimate_fbar(model, [0.5], 2.0, 5.0, n, derive_seed(seed, 100 + i), parallelism=parallelism)
        ses.append(float(d.se[0]))
    slope = loglog_slope(scale.se_budgets, ses)

    detail = {"table": drift.to_frame().to_dict(orient="list"), "points_ok": points_ok, "se_budgets": list(scale.se_budgets),
              "se": ses, "se_slope": slope}
    return all(points_ok) and abs(slope + 0.5) <= 0.15, detail


def khasminskii_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    model = make_builtin("LIN1D")
    control = Control.constant(1.0, 10, 0.0, 0.5)
    rows = []
    i = 0
    for delta in (0.0025, 0.01):
        for block in (0.02, 0.04, 0.08):
            config = SimConfig(epsilon=0.5, delta=delta, T=1.0, n_steps=100, khasminskii_delta=block,
                               seed=derive_seed(seed, i))
            rows.append(khasminskii_error(model, config, 0.0, 0.0, control, scale.khasminskii_paths, parallelism))
            i += 1
    slope = loglog_slope([r["scale"] for r in rows], [r["y_gap"] for r in rows])
    return abs(slope - 1.0) <= 0.25, {"design": rows, "slope": slope}


def skeleton_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    lin = make_builtin("LIN1D")
    sol = solve_skeleton(_linear(1.0), lin.sigma1, Control.zero(1.0, 8), 1.0)
    exact_err = abs(float(sol.terminal()[0]) - math.e)
    raws = [h["raw_diff"] for h in sol.history]
    ratios = [b / a for a, b in zip(raws, raws[1:]) if a > 0]
    slope = time_modulus_slope(sol.path, sol.times)

    ramp = solve_skeleton(AveragedDrift.analytic(lin), lin.sigma1, Control.constant(1.0, 10, 1.0), 0.0)
    ramp_err = abs(float(ramp.terminal()[0]) - 1.0)

    detail = {
        "level": sol.level,
        "terminal_error": exact_err,
        "raw_ratios": ratios,
        "time_modulus_slope": slope,
        "controlled_terminal_error": ramp_err,
    }
    passed = exact_err <= 1e-6 and max(ratios, default=0.0) <= 0.75 and slope >= 0.4 and ramp_err <= 1e-6
    return passed, detail


def rate_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    sigma1 = make_builtin("LIN1D").sigma1
    rows = []
    for c in (0.0, -1.0, 1.0):
        problem = RateProblem(_linear(c), sigma1, 0.0, TerminalPoint(1.0), T=1.0, M=20)
        result = minimize_rate(problem, scale.rate_starts, seed, parallelism)
        oracle = lq_rate(0.0, 1.0, c, 1.0, 1.0)
        ok = abs(result.value - oracle) <= 1e-3 if c == 0.0 else abs(result.value / oracle - 1.0) <= 0.01
        rows.append({"c": c, "value": result.value, "oracle": oracle, "residual": result.residual, "holds": bool(ok)})

    refinement = []
    for M in (5, 10, 20):
        problem = RateProblem(_linear(1.0), sigma1, 0.0, TerminalPoint(1.0), T=1.0, M=M, level=9)
        refinement.append(minimize_rate(problem, scale.rate_starts, seed, parallelism).value)
    # finer control grids contain coarser ones; slack covers the constraint tolerance
    monotone = all(b <= a + 2e-4 for a, b in zip(refinement, refinement[1:]))

    gradient = rate_gradient_check(
        RateProblem(_linear(1.0), sigma1, 0.0, TerminalPoint(1.0), T=1.0, M=20), Control.constant(1.0, 20, 0.8)
    )
    detail = {"lq": rows, "refinement": refinement, "refinement_monotone": monotone, "gradient": gradient}
    passed = all(r["holds"] for r in rows) and monotone and gradient["max_relative_deviation"] <= 1e-4
    return passed, detail


def variational_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    model = make_builtin("LIN1D")
    controls = [Control.zero(1.0, 10), Control.constant(1.0, 10, 0.5), Control.constant(1.0, 10, 1.0)]
    n = scale.variational_paths
    config = SimConfig(epsilon=0.5, delta=0.25, T=1.0, n_steps=50, seed=seed)

    equalities = []
    for F in (zero(), constant(0.7)):
        report = variational_check(model, config, F, controls, n, seed, parallelism=parallelism)
        best = report["candidates"][report["best"]]
        exact = abs(report["lhs"] - report["rhs"]) <= 3 * math.hypot(report["lhs_se"], best["se"]) + 1e-12
        equalities.append({"functional": F.name, "lhs": report["lhs"], "rhs": report["rhs"], "exact": bool(exact)})

    bounds = []
    for i, eps in enumerate((0.5, 0.2)):
        cfg = SimConfig(epsilon=eps, delta=eps * eps, T=1.0, n_steps=50, seed=seed)
        report = variational_check(model, cfg, terminal_ramp(1.0), controls, n, derive_seed(seed, i), parallelism=parallelism)
        bounds.append({k: report[k] for k in ("epsilon", "lhs", "lhs_se", "rhs", "holds", "lhs_unreliable")})

    passed = all(e["exact"] for e in equalities) and all(b["holds"] for b in bounds)
    return passed, {"equality_cases": equalities, "bounds": bounds}


def sweep_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    model = make_builtin("LIN1D", {"a1": 0.0, "b1": 0.0})
    problem = RateProblem(AveragedDrift.analytic(model), model.sigma1, 0.0, TerminalHalfspace([1.0], 1.0), T=1.0, M=10)
    rate = minimize_rate(problem, scale.rate_starts, seed, parallelism)
    base = SimConfig(epsilon=0.5, delta=0.25, T=1.0, n_steps=50, seed=seed)
    event = TerminalEvent([1.0], 1.0)
    sweep = ldp_sweep(model, base, event, [0.5, 0.2, 0.1, 0.05], scale.sweep_paths, 0.5, seed, method="tilted",
                      tilt=rate.minimizer, parallelism=parallelism)

    # the decoupled model has an exact Gaussian tail
    tails = []
    for row in sweep.rows:
        exact = float(norm.sf(1.0 / math.sqrt(row["epsilon"])))
        tails.append({"epsilon": row["epsilon"], "p_hat": row["p_hat"], "exact": exact,
                      "holds": bool(_within(row["p_hat"], exact, row["se"]))})

    detail = {"rate": rate.value, "summary": sweep.summary(), "tails": tails}
    passed = (
        abs(rate.value - 0.5) <= 1e-3
        and bool(sweep.monotone)
        and sweep.final_gap <= 0.15
        and all(t["holds"] for t in tails)
    )
    return passed, detail


def flow_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    model = make_builtin("NONLIP1D")
    config = SimConfig(epsilon=0.01, delta=0.001, T=0.5, n_steps=50, seed=seed)
    separations = [0.0625, 0.125, 0.25, 0.5]
    grid = [1.0] + [1.0 + s for s in separations]
    flow = simulate_flow(model, config, grid, 0.0, scale.flow_paths, p=4.0,
                         pairs=[(0, j) for j in range(1, len(grid))], parallelism=parallelism)
    slope = flow.slope()
    return slope >= 2.0, {"moments": flow.to_frame().to_dict(orient="list"), "slope": slope}


def determinism_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    model = make_builtin("LIN1D")
    config = SimConfig(epsilon=0.1, delta=0.01, T=0.5, n_steps=20, seed=seed)
    n = NOISE_BLOCK + 50
    runs = [
        simulate_coupled(model, config, 0.0, 0.0, n, parallelism=1),
        simulate_coupled(model, config, 0.0, 0.0, n, parallelism=max(2, parallelism)),
        simulate_coupled(model, config, 0.0, 0.0, n, parallelism=1),
    ]
    arrays_equal = all(np.array_equal(runs[0].slow, r.slow) and np.array_equal(runs[0].fast, r.fast) for r in runs)
    texts = [path_to_frame(r, n - 1).to_csv(index=False, float_format=FLOAT_FORMAT) for r in runs]
    bytes_equal = len(set(texts)) == 1
    return arrays_equal and bytes_equal, {"arrays_equal": arrays_equal, "csv_equal": bytes_equal, "n_paths": n}


def assumptions_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    detail = {}
    passed = True
    for name in ("LIN1D", "NONLIP1D"):
        model = make_builtin(name)
        diss = check_dissipativity(model, 5000, 5.0, seed)
        growth = check_growth(model, 5000, 5.0, seed)
        detail[name] = {"dissipativity": diss.to_dict(), "growth": growth}
        passed = passed and diss.passed and growth["passed"]
    return passed, detail


def a_priori_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    model = make_builtin("LIN1D")
    control = Control.constant(1.0, 10, 1.0)
    sups = []
    for i, eps in enumerate((0.4, 0.2, 0.1)):
        cfg = SimConfig(epsilon=eps, delta=eps * eps, T=1.0, n_steps=50, seed=derive_seed(seed, i))
        m, se = sup_moment(simulate_controlled(model, cfg, 0.0, 0.0, control, scale.mc_paths // 4, parallelism))
        sups.append({"epsilon": eps, "sup_moment": m, "se": se})
    stable = all(b["sup_moment"] <= a["sup_moment"] + 3 * math.hypot(a["se"], b["se"]) for a, b in zip(sups, sups[1:]))

    cfg = SimConfig(epsilon=0.5, delta=0.05, T=1.0, n_steps=100, seed=derive_seed(seed, 10))
    sample = simulate_controlled(model, cfg, 0.0, 0.0, control, scale.mc_paths // 4, parallelism)
    increments = increment_moments(sample, [1, 2, 4, 8])
    passed = stable and abs(increments["slope"] - 1.0) <= 0.15
    return passed, {"sup_moments": sups, "stable": stable, "increments": increments}


def averaging_gap_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    model = make_builtin("LIN1D")
    h = 0.01
    x, y = 0.0, 2.0
    rows = averaging_gap(model, x, y, [0.5, 1.0, 2.0], scale.mc_paths, seed, h=h, parallelism=parallelism)
    b1 = model.params["b1"]
    for row in rows:
        # Euler mean of the frozen OU process
        row["expected"] = abs(b1) * abs(y - x) * (1.0 - h) ** round(row["t"] / h)
        row["holds"] = bool(_within(row["gap"], row["expected"], row["se"]))
    decreasing = all(b["gap"] <= a["gap"] for a, b in zip(rows, rows[1:]))
    return decreasing and all(r["holds"] for r in rows), {"rows": rows, "decreasing": decreasing}


def continuity_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    model = make_builtin("NONLIP1D")
    limit = Control.constant(1.0, 8, 1.0)
    direction = Control(1.0, np.sin(np.linspace(0.0, 2 * math.pi, 8, endpoint=False)) + 0.5)
    controls = perturbed_sequence(limit, direction, [1, 2, 4, 8, 16])
    report = check_skeleton_continuity(AveragedDrift.analytic(model), model.sigma1, controls, limit, 0.5)
    return report["passed"], report


def tilting_suite(scale: Scale, seed: int, parallelism: int) -> Tuple[bool, dict]:
    model = make_builtin("LIN1D", {"a1": 0.0, "b1": 0.0})
    config = SimConfig(epsilon=0.5, delta=0.25, T=1.0, n_steps=50, seed=seed)
    tilt = Control.constant(1.0, 10, 0.3)
    event = TerminalEvent([1.0], 0.3)
    naive = estimate_event(model, config, event, scale.mc_paths, "naive", parallelism=parallelism)
    tilted_cfg = config.model_copy(update={"seed": derive_seed(seed, 1)})
    tilted = estimate_event(model, tilted_cfg, event, scale.mc_paths, "tilted", tilt, parallelism=parallelism)
    agree = abs(naive.p_hat - tilted.p_hat) <= 3 * math.hypot(naive.se, tilted.se)

    w_cfg = config.model_copy(update={"seed": derive_seed(seed, 2)})
    w_mean, w_se = weight_mean(model, w_cfg, Control.constant(1.0, 10, 1.0), scale.mc_paths, parallelism=parallelism)
    weights_ok = _within(w_mean, 1.0, w_se)
    detail = {"naive": naive.to_dict(), "tilted": tilted.to_dict(), "agree": bool(agree),
              "weight_mean": w_mean, "weight_se": w_se}
    return bool(agree and weights_ok), detail


Suite = Callable[[Scale, int, int], Tuple[bool, dict]]

SUITES: Dict[str, Suite] = {
    "modulus": modulus_suite,
    "frozen": frozen_suite,
    "invariant": invariant_suite,
    "averaged_drift": averaged_drift_suite,
    "khasminskii": khasminskii_suite,
    "skeleton": skeleton_suite,
    "rate": rate_suite,
    "variational": variational_suite,
    "sweep": sweep_suite,
    "flow": flow_suite,
    "determinism": determinism_suite,
    "assumptions": assumptions_suite,
    "a_priori": a_priori_suite,
    "averaging_gap": averaging_gap_suite,
    "continuity": continuity_suite,
    "tilting": tilting_suite,
}


def run_suites(scale: str = "quick", seed: int = 0, parallelism: int = 1,
               only: Optional[Sequence[str]] = None) -> List[CheckResult]:
    """Run the selected suites in registry order; a suite that raises counts as failed."""
    if scale not in SCALES:
        raise ConfigError(f"unknown scale {scale!r}", {"choices": sorted(SCALES)})
    names = list(SUITES) if only is None else list(only)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ConfigError("unknown check suites", {"unknown": unknown, "choices": list(SUITES)})

    results = []
    for name in names:
        start = time.perf_counter()
        try:
            passed, detail = SUITES[name](SCALES[scale], seed, parallelism)
        except Exception as exc:  # noqa: BLE001 - reported as a failed suite
            logger.exception("suite %s raised", name)
            passed, detail = False, {"error": type(exc).__name__, "message": str(exc)}
        elapsed = time.perf_counter() - start
        results.append(CheckResult(name, bool(passed), detail, elapsed))
        logger.info("suite %s: %s in %.1fs", name, "pass" if passed else "FAIL", elapsed)
    return results
