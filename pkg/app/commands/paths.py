"""Path-level commands: simulate, frozen and flow."""

import numpy as np
import pandas as pd

from app.averaging import fit_contraction
from app.commands import CommandResult, RunContext, command
from app.export import write_frame_csv, write_json
from app.sde import (
    frozen_common_noise,
    simulate_auxiliary,
    simulate_controlled,
    simulate_coupled,
    simulate_flow,
    sup_moment,
    write_paths_csv,
)


@command("simulate")
def simulate(ctx: RunContext) -> CommandResult:
    """Simulate coupled, controlled or auxiliary paths and export them."""
    cfg = ctx.config
    section = cfg.simulate
    model = cfg.build_model()
    sim = cfg.sim_config()
    outputs = []

    if section.kind == "coupled":
        sample = simulate_coupled(model, sim, section.x0, section.y0, section.n_paths, ctx.parallelism)
    else:
        control = section.control.build(sim.T)
        sample = simulate_controlled(model, sim, section.x0, section.y0, control, section.n_paths, ctx.parallelism)
        weights = pd.DataFrame({"path": np.arange(sample.n_paths), "log_weight": sample.log_weight})
        outputs.append(write_frame_csv(weights, ctx.path("weights.csv")))
        if section.kind == "auxiliary":
            outputs.append(write_paths_csv(sample, ctx.path("controlled_paths.csv")))
            sample = simulate_auxiliary(model, sim, section.x0, section.y0, control, sample, ctx.parallelism)

    outputs.append(write_paths_csv(sample, ctx.path("paths.csv")))
    sup, sup_se = sup_moment(sample)
    terminal = sample.terminal_slow
    summary = {
        "kind": sample.kind,
        "n_paths": sample.n_paths,
        "n_sub": sim.n_sub,
        "terminal_mean": terminal.mean(axis=0).tolist(),
        "sup_moment": sup,
        "sup_moment_se": sup_se,
    }
    print(f"Simulated {sample.n_paths} {sample.kind} path(s), {sim.n_steps} steps x {sim.n_sub} fast substeps")
    print(f"E sup|X|^2 = {sup:.6g} +- {sup_se:.2g}")
    return CommandResult(outputs=[str(o) for o in outputs], summary=summary)


@command("frozen")
def frozen(ctx: RunContext) -> CommandResult:
    """Frozen fast dynamics from several starts under shared noise."""
    cfg = ctx.config
    section = cfg.frozen
    model = cfg.build_model()
    ys = [[y] for y in section.y0]
    times, fast = frozen_common_noise(model, [[section.x]], ys, section.T, section.n_steps, ctx.seed,
                                      section.n_paths, ctx.parallelism)

    n_paths, n_pairs, n_times, _ = fast.shape
    frame = pd.DataFrame({
        "path": np.repeat(np.arange(n_paths), n_pairs * n_times),
        "start": np.tile(np.repeat(np.arange(n_pairs), n_times), n_paths),
        "t": np.tile(times, n_paths * n_pairs),
        "Y1": fast[..., 0].reshape(-1),
    })
    outputs = [write_frame_csv(frame, ctx.path("frozen.csv"))]
    summary = {"x": section.x, "y0": section.y0, "n_paths": n_paths, "T": section.T}

    if section.contraction_pair:
        y1, y2 = section.contraction_pair
        report = fit_contraction(model, section.x, y1, y2, section.T, section.n_paths, ctx.seed,
                                 h=section.T / section.n_steps, parallelism=ctx.parallelism)
        outputs.append(write_json(report.to_dict(), ctx.path("ergodicity.json")))
        summary["contraction"] = report.to_dict()
        marker = "✓" if report.rate_ok else "❌"
        print(f"{marker} contraction rate {report.rate:.4f} (beta1 = {report.beta1})")

    print(f"Frozen process at x = {section.x}: {n_pairs} start(s), {n_paths} path(s)")
    return CommandResult(outputs=[str(o) for o in outputs], summary=summary)


@command("flow")
def flow(ctx: RunContext) -> CommandResult:
    """Truncated distance moments of the stochastic flow at time T."""
    cfg = ctx.config
    section = cfg.flow
    model = cfg.build_model()
    moments = simulate_flow(model, cfg.sim_config(), section.x0_grid, section.y0, section.n_paths, section.p,
                            parallelism=ctx.parallelism)
    slope = moments.slope()
    summary = {"p": section.p, "n_paths": section.n_paths, "pairs": len(moments.pairs), "slope": slope}
    outputs = [
        write_frame_csv(moments.to_frame(), ctx.path("flow.csv")),
        write_json(summary, ctx.path("flow.json")),
    ]
    print(f"Flow moments for {len(moments.pairs)} pair(s); log-log slope {slope:.3f}")
    return CommandResult(outputs=[str(o) for o in outputs], summary=summary)
