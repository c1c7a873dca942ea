#!/usr/bin/env python3
"""
Slow-fast LDP experiment runner
-------------------------------
Runs one command against a TOML experiment config and writes its artifacts to
<out_dir>/<config hash prefix>/ together with config.json and manifest.json.
Every run is also recorded in <out_dir>/runs.db.

Usage:
    python main.py simulate --config configs/lin1d_simulate.toml
    python main.py rate --config configs/lq_rate.toml --seed 3
    python main.py check --config configs/check.toml --parallelism 4

Exit codes: 0 ok, 2 config error, 3 numeric error, 4 acceptance failure.
"""

import argparse
import json
import logging
import sys
import time
from typing import List, Optional

from sqlmodel import Session

from app.commands import COMMANDS, RunContext
from app.config import config_dump, config_hash, load_config, run_dir
from app.database import create_db_and_tables, get_engine, record_run
from app.errors import SlowFastError
from app.export import write_json, write_manifest
from app.models import RunRecord

logger = logging.getLogger("slowfast")

STATUS_BY_EXIT = {0: "ok", 2: "config-error", 3: "numeric-error", 4: "failed"}


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Slow-fast SDE large-deviation experiments")
    parser.add_argument("command", choices=sorted(COMMANDS), help="What to run")
    parser.add_argument("--config", "-c", default=None, help="Path to a TOML experiment config")
    parser.add_argument("--seed", type=int, default=None, help="Override the config seed")
    parser.add_argument("--parallelism", "-j", type=int, default=None, help="Worker threads (never changes results)")
    parser.add_argument("--out", default=None, help="Output root directory")
    parser.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return parser.parse_args(argv)


def _report_error(exc: SlowFastError):
    print(f"❌ {type(exc).__name__}: {exc.detail}", file=sys.stderr)
    if exc.payload:
        print(json.dumps(exc.payload, indent=2, sort_keys=True, default=str), file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = parse_args(argv)
    overrides = {"seed": args.seed, "parallelism": args.parallelism, "out_dir": args.out, "log_level": args.log_level}
    try:
        config = load_config(args.config, overrides=overrides)
    except SlowFastError as exc:
        _report_error(exc)
        return exc.exit_code

    logging.basicConfig(level=config.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    digest = config_hash(config)
    out = run_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    write_json(config_dump(config), out / "config.json")

    print("=" * 60)
    print(f"{args.command.upper()}  model={config.model.name}  seed={config.seed}")
    print(f"Config hash: {digest[:12]}   Output: {out}")
    print("=" * 60)

    start = time.perf_counter()
    exit_code = 0
    detail = None
    outputs: List[str] = []
    try:
        result = COMMANDS[args.command](RunContext(config, out))
        outputs = result.outputs
    except SlowFastError as exc:
        _report_error(exc)
        write_json(exc.to_dict(), out / "error.json")
        exit_code, detail = exc.exit_code, exc.detail
    wall_time = time.perf_counter() - start
    status = STATUS_BY_EXIT.get(exit_code, "failed")

    write_manifest(out, args.command, digest, config.seed, wall_time, outputs, status)
    engine = get_engine(config.out_dir)
    create_db_and_tables(engine)
    with Session(engine) as session:
        record_run(session, RunRecord(
            command=args.command,
            config_hash=digest,
            seed=config.seed,
            parallelism=config.parallelism,
            status=status,
            exit_code=exit_code,
            wall_time=wall_time,
            output_dir=str(out),
            detail=detail,
        ))

    print("=" * 60)
    print(f"{'✓' if exit_code == 0 else '❌'} {args.command} finished in {wall_time:.1f}s ({status})")
    print("=" * 60)
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
