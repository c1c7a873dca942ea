"""
Experiment configuration.

A run is described by one TOML file whose sections are validated by the
schemas below. Any key can be overridden from the environment:

    SLOWFAST_SIM__EPSILON=0.05      -> [sim] epsilon = 0.05
    SLOWFAST_SEED=7                 -> seed = 7
    SLOWFAST_RATE__T=2              -> [rate] T = 2

Key segments match field names case-insensitively.

Values are parsed as TOML literals, falling back to plain strings.
"""

import hashlib
import json
import logging
import os
import re
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, List, Literal, Mapping, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.control import Control
from app.errors import ConfigError
from app.model import ModelSpec, make_builtin
from app.sde import SimConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "SLOWFAST_"
HASH_EXCLUDED = {"parallelism", "out_dir", "log_level"}
TOML_POSITION = re.compile(r"at line (\d+), column (\d+)")


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(Section):
    name: Literal["LIN1D", "NONLIP1D"] = "LIN1D"
    params: Dict[str, float] = Field(default_factory=dict)

    def build(self) -> ModelSpec:
        return make_builtin(self.name, self.params)


class SimSection(Section):
    epsilon: float = 0.1
    delta: float = 0.01
    T: float = 1.0
    n_steps: int = 100
    khasminskii_delta: Optional[float] = None

    def build(self, seed: int) -> SimConfig:
        return SimConfig(seed=seed, **self.model_dump())


class ControlSection(Section):
    """Piecewise-constant hdot samples, one per interval, or a control CSV."""

    hdot1: List[float] = Field(default_factory=lambda: [0.0])
    hdot2: Optional[List[float]] = None
    csv: Optional[str] = None

    def build(self, T: float) -> Control:
        if self.csv:
            return Control.from_csv(self.csv, T)
        return Control(T, self.hdot1, self.hdot2)


class SimulateSection(Section):
    kind: Literal["coupled", "controlled", "auxiliary"] = "coupled"
    n_paths: int = Field(default=1, ge=1)
    x0: float = 0.0
    y0: float = 0.0
    control: ControlSection = Field(default_factory=ControlSection)


class FrozenSection(Section):
    x: float = 0.0
    y0: List[float] = Field(default_factory=lambda: [0.0])
    T: float = 5.0
    n_steps: int = 500
    n_paths: int = Field(default=100, ge=1)
    contraction_pair: Optional[List[float]] = None


class AverageSection(Section):
    x_grid: List[float] = Field(default_factory=lambda: [-1.0, -0.5, 0.0, 0.5, 1.0])
    T_burn: Optional[float] = None
    T_avg: float = 20.0
    n_reps: int = Field(default=50, ge=2)
    h: float = 0.01
    moment_p: Optional[Literal[2, 4]] = None


class SkeletonSection(Section):
    x0: List[float] = Field(default_factory=lambda: [0.0])
    n_levels: int = Field(default=12, ge=2)
    tol: float = Field(default=1e-8, gt=0.0)
    drift_csv: Optional[str] = None
    control: ControlSection = Field(default_factory=ControlSection)


class RateSection(Section):
    x0: float = 0.0
    T: float = 1.0
    M: int = Field(default=20, ge=1)
    norm_cap: float = 4.0
    constraint: Literal["point", "halfspace"] = "point"
    z: float = 1.0
    a: float = 1.0
    b: float = 1.0
    tol: float = 1e-4
    starts: int = Field(default=8, ge=1)
    level: Optional[int] = None
    drift_csv: Optional[str] = None


class SweepSection(Section):
    epsilons: List[float] = Field(default_factory=lambda: [0.5, 0.2, 0.1, 0.05])
    delta_exponent: float = Field(default=2.0, gt=1.0)
    n_paths: int = Field(default=10_000, ge=100)
    method: Literal["naive", "tilted"] = "tilted"
    event: Literal["halfspace", "whole-space"] = "halfspace"
    event_a: float = 1.0
    event_b: float = 1.0
    I_ref: Optional[float] = None
    x0: float = 0.0
    y0: float = 0.0


class FlowSection(Section):
    x0_grid: List[float] = Field(default_factory=lambda: [1.0, 1.0625, 1.125, 1.25, 1.5])
    y0: float = 0.0
    n_paths: int = Field(default=2000, ge=1)
    p: float = Field(default=4.0, ge=1.0)


class CheckSection(Section):
    scale: Literal["quick", "full"] = "quick"
    suites: Optional[List[str]] = None


class ExperimentConfig(Section):
    seed: int = 0
    parallelism: int = Field(default=1, ge=1)
    out_dir: str = "runs"
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    model: ModelSection = Field(default_factory=ModelSection)
    sim: SimSection = Field(default_factory=SimSection)
    simulate: SimulateSection = Field(default_factory=SimulateSection)
    frozen: FrozenSection = Field(default_factory=FrozenSection)
    average: AverageSection = Field(default_factory=AverageSection)
    skeleton: SkeletonSection = Field(default_factory=SkeletonSection)
    rate: RateSection = Field(default_factory=RateSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    flow: FlowSection = Field(default_factory=FlowSection)
    check: CheckSection = Field(default_factory=CheckSection)

    def sim_config(self) -> SimConfig:
        return self.sim.build(self.seed)

    def build_model(self) -> ModelSpec:
        return self.model.build()


def _parse_literal(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _field_path(parts: List[str]) -> List[str]:
    """Map upper-case variable segments onto declared field names (sim.T, rate.M, sweep.I_ref)."""
    schema: Optional[type] = ExperimentConfig
    names = []
    for part in parts:
        fields = schema.model_fields if schema is not None else {}
        name = next((f for f in fields if f.lower() == part.lower()), part.lower())
        names.append(name)
        annotation = fields[name].annotation if name in fields else None
        schema = annotation if isinstance(annotation, type) and issubclass(annotation, BaseModel) else None
    return names


def env_overrides(env: Mapping[str, str]) -> dict:
    """Nested override dictionary from SLOWFAST_* variables."""
    out: dict = {}
    for key in sorted(env):
        if not key.startswith(ENV_PREFIX):
            continue
        parts = _field_path([p for p in key[len(ENV_PREFIX):].split("__") if p])
        if not parts:
            continue
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _parse_literal(env[key])
    return out


def _merge(base: dict, update: dict) -> dict:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _toml_position(exc: tomllib.TOMLDecodeError) -> dict:
    """Line and column of a TOML syntax error, from the exception or its message."""
    line, column = getattr(exc, "lineno", None), getattr(exc, "colno", None)
    if line is None:
        match = TOML_POSITION.search(str(exc))
        if match:
            line, column = int(match.group(1)), int(match.group(2))
    return {"line": line, "column": column}


def _validation_detail(exc: ValidationError) -> List[dict]:
    return [{"field": ".".join(str(p) for p in e["loc"]), "error": e["msg"]} for e in exc.errors()]


def parse_config(raw: dict, env: Optional[Mapping[str, str]] = None,
                 overrides: Optional[dict] = None) -> ExperimentConfig:
    data = _merge(raw, env_overrides(env or {}))
    data = _merge(data, {k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError("invalid configuration", {"errors": _validation_detail(exc)}) from exc


def load_config(path: Optional[Union[str, Path]], env: Optional[Mapping[str, str]] = None,
                overrides: Optional[dict] = None) -> ExperimentConfig:
    """
    Read, merge and validate an experiment config.

    Args:
        path: TOML file, or None for defaults only
        env: environment mapping (defaults to os.environ)
        overrides: top-level keys from command-line flags; None values are ignored

    Raises:
        ConfigError: unreadable file, TOML syntax error (with line and column)
            or schema violation (with field paths)
    """
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"TOML syntax error in {path}: {exc}", _toml_position(exc)) from exc
    config = parse_config(raw, os.environ if env is None else env, overrides)
    logger.debug("loaded config from %s", path)
    return config


def config_dump(config: ExperimentConfig) -> dict:
    return config.model_dump(mode="json")


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON dump, ignoring keys that cannot change numbers."""
    payload = json.dumps(config.model_dump(mode="json", exclude=HASH_EXCLUDED), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def run_dir(config: ExperimentConfig) -> Path:
    return Path(config.out_dir) / config_hash(config)[:12]


def delta_rule(exponent: float):
    """epsilon -> epsilon ** exponent."""
    return lambda eps: float(np.power(eps, exponent))
