"""
Command registry for the command-line entry point.

Each command module registers plain functions with ``@command(name)``; a
command receives the validated config and its run directory and returns a
CommandResult.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List

from pydantic import BaseModel, Field

from app.config import ExperimentConfig


class CommandResult(BaseModel):
    """Artifacts written by a command and a JSON-ready summary."""
    outputs: List[str] = Field(default_factory=list)
    summary: dict = Field(default_factory=dict)


@dataclass
class RunContext:
    config: ExperimentConfig
    out: Path

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def parallelism(self) -> int:
        return self.config.parallelism

    def path(self, name: str) -> Path:
        return self.out / name


Handler = Callable[[RunContext], CommandResult]

COMMANDS: Dict[str, Handler] = {}


def command(name: str) -> Callable[[Handler], Handler]:
    def register(fn: Handler) -> Handler:
        COMMANDS[name] = fn
        return fn
    return register


# Register handlers
from app.commands import average, check, paths, rate, sweep  # noqa: E402,F401
