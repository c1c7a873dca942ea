"""Acceptance suite command."""

from app.acceptance import run_suites
from app.commands import CommandResult, RunContext, command
from app.errors import AcceptanceFailure
from app.export import write_json


@command("check")
def check(ctx: RunContext) -> CommandResult:
    """Run the property suites, print a pass/fail table and write check.json."""
    section = ctx.config.check
    results = run_suites(section.scale, ctx.seed, ctx.parallelism, section.suites)
    failed = [r.name for r in results if not r.passed]
    report = {"scale": section.scale, "passed": not failed, "suites": [r.to_dict() for r in results]}
    path = write_json(report, ctx.path("check.json"))

    print(f"{'suite':<16} {'result':<8} {'seconds':>8}")
    print("-" * 34)
    for r in results:
        print(f"{r.name:<16} {'✓ pass' if r.passed else '❌ FAIL':<8} {r.seconds:>8.1f}")
    print("-" * 34)
    print(f"{len(results) - len(failed)}/{len(results)} suites passed")

    if failed:
        raise AcceptanceFailure("acceptance suites failed", {"failed": failed, "report": str(path)})
    return CommandResult(outputs=[str(path)], summary={"scale": section.scale, "suites": len(results)})
