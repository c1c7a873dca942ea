"""Skeleton and rate-function commands."""

from typing import Optional

from app.averaging import AveragedDrift
from app.commands import CommandResult, RunContext, command
from app.export import write_frame_csv, write_json
from app.model import ModelSpec
from app.ratefn import RateProblem, TerminalHalfspace, TerminalPoint, lq_rate, minimize_rate
from app.skeleton import skeleton_map_S


def load_drift(model: ModelSpec, csv: Optional[str]) -> AveragedDrift:
    """A tabulated drift from csv when given, otherwise the model's closed form."""
    if csv:
        return AveragedDrift.from_csv(csv)
    return AveragedDrift.analytic(model)


def build_problem(ctx: RunContext, model: ModelSpec) -> RateProblem:
    section = ctx.config.rate
    if section.constraint == "point":
        constraint = TerminalPoint(section.z, section.tol)
    else:
        constraint = TerminalHalfspace([section.a], section.b, section.tol)
    return RateProblem(load_drift(model, section.drift_csv), model.sigma1, section.x0, constraint, T=section.T,
                       M=section.M, norm_cap=section.norm_cap, level=section.level)


@command("skeleton")
def skeleton(ctx: RunContext) -> CommandResult:
    """Solve the skeleton equation from every configured initial point."""
    cfg = ctx.config
    section = cfg.skeleton
    model = cfg.build_model()
    drift = load_drift(model, section.drift_csv)
    control = section.control.build(cfg.sim.T)
    solution = skeleton_map_S(drift, control, section.x0, section.n_levels, sigma1=model.sigma1, tol=section.tol)
    summary = {
        "level": solution.level,
        "error_estimate": solution.error_estimate,
        "raw_error": solution.raw_error,
        "converged": solution.converged,
        "terminal": solution.terminal().tolist(),
        "control_norm_sq": control.norm_sq,
        "history": solution.history,
    }
    outputs = [
        write_frame_csv(solution.to_frame(), ctx.path("skeleton.csv")),
        write_json(summary, ctx.path("skeleton.json")),
    ]
    print(f"✓ skeleton level {solution.level}, error estimate {solution.error_estimate:.2e}")
    return CommandResult(outputs=[str(o) for o in outputs], summary=summary)


def _lq_oracle(ctx: RunContext, model: ModelSpec) -> Optional[float]:
    """Closed-form rate for LIN1D terminal-point problems with the analytic drift."""
    section = ctx.config.rate
    if model.name != "LIN1D" or section.constraint != "point" or section.drift_csv:
        return None
    p = model.params
    return lq_rate(section.x0, section.z, p["a1"] + p["b1"], p["s1"], section.T)


@command("rate")
def rate(ctx: RunContext) -> CommandResult:
    """Minimise the control energy needed to meet the configured constraint."""
    cfg = ctx.config
    model = cfg.build_model()
    problem = build_problem(ctx, model)
    result = minimize_rate(problem, cfg.rate.starts, ctx.seed, ctx.parallelism)

    summary = result.to_dict()
    summary["constraint"] = problem.constraint.to_dict()
    oracle = _lq_oracle(ctx, model)
    if oracle is not None:
        summary["oracle"] = oracle
    outputs = [write_json(summary, ctx.path("rate.json"))]
    if result.minimizer is not None:
        outputs.append(result.minimizer.to_csv(ctx.path("control.csv")))

    if result.feasible:
        print(f"✓ I = {result.value:.6f} (residual {result.residual:.2e}, start {result.winner})")
    else:
        print(f"❌ constraint not reachable (best residual {result.residual:.2e})")
    if oracle is not None:
        print(f"  closed form: {oracle:.6f}")
    return CommandResult(outputs=[str(o) for o in outputs], summary=summary)
