"""Epsilon-ladder sweep command."""

from app.commands import CommandResult, RunContext, command
from app.commands.rate import load_drift
from app.config import delta_rule
from app.control import Control
from app.export import write_json
from app.mc import TerminalEvent, ldp_sweep, write_sweep_csv
from app.ratefn import RateProblem, TerminalHalfspace, minimize_rate


@command("sweep")
def sweep(ctx: RunContext) -> CommandResult:
    """
    Estimate eps log P(X_T in event) along the configured ladder.

    The reference rate and the tilt both come from the rate minimiser for the
    event's half-space unless I_ref is given and sampling is naive.
    """
    cfg = ctx.config
    section = cfg.sweep
    model = cfg.build_model()
    base = cfg.sim_config()

    if section.event == "whole-space":
        event = TerminalEvent.whole_space()
        I_ref, tilt, rate_value = 0.0, Control.zero(base.T, cfg.rate.M), 0.0
    else:
        event = TerminalEvent([section.event_a], section.event_b)
        tilt, rate_value = None, None
        if section.I_ref is None or section.method == "tilted":
            problem = RateProblem(load_drift(model, cfg.rate.drift_csv), model.sigma1, section.x0,
                                  TerminalHalfspace([section.event_a], section.event_b, cfg.rate.tol),
                                  T=base.T, M=cfg.rate.M, norm_cap=cfg.rate.norm_cap, level=cfg.rate.level)
            result = minimize_rate(problem, cfg.rate.starts, ctx.seed, ctx.parallelism)
            tilt, rate_value = result.minimizer, result.value
        I_ref = section.I_ref if section.I_ref is not None else rate_value

    result = ldp_sweep(model, base, event, section.epsilons, section.n_paths, I_ref, ctx.seed,
                       delta_rule=delta_rule(section.delta_exponent), method=section.method, tilt=tilt,
                       x0=section.x0, y0=section.y0, parallelism=ctx.parallelism)
    summary = result.summary()
    summary["rate_value"] = rate_value
    outputs = [
        write_sweep_csv(result, ctx.path("sweep.csv")),
        write_json(summary, ctx.path("sweep.json")),
    ]

    print(f"{'epsilon':>10} {'p_hat':>12} {'eps log p':>12} {'gap':>10}")
    for row in result.rows:
        print(f"{row['epsilon']:>10.4g} {row['p_hat']:>12.4e} {row['eps_log_p']:>12.5f} {row['gap']:>10.5f}")
    if result.monotone is not None:
        marker = "✓" if result.monotone else "❌"
        print(f"{marker} gap trend statistic {result.trend:.4g}")
    return CommandResult(outputs=[str(o) for o in outputs], summary=summary)
