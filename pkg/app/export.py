"""
Artifact writers. CSV files use a fixed float format and JSON files sorted
keys so identical runs give identical bytes.
"""

import json
import logging
import math
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import pandas as pd

from app import __version__
from app.errors import ConfigError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12e"
TRACKED_PACKAGES = ("numpy", "scipy", "pandas", "pydantic", "sqlmodel")


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def to_json(data: Dict[str, Any]) -> str:
    return json.dumps(_jsonable(data), sort_keys=True, indent=2) + "\n"


def write_json(data: Dict[str, Any], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(data), encoding="utf-8")
    logger.debug("wrote %s", path)
    return path


def read_frame_csv(path: Union[str, Path], what: str) -> pd.DataFrame:
    """Read an input table; a missing or malformed file is a config error."""
    try:
        return pd.read_csv(path)
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ConfigError(f"cannot read {what} table {path}", {"path": str(path), "error": str(exc)}) from exc


def write_frame_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.debug("wrote %s (%d rows)", path, len(frame))
    return path


def library_versions() -> Dict[str, str]:
    versions = {"slowfast-ldp": __version__}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "missing"
    return versions


def write_manifest(out: Union[str, Path], command: str, config_hash: str, seed: int, wall_time: float,
                   outputs, status: str = "ok") -> Path:
    """manifest.json: everything needed to reproduce the run besides config.json."""
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "status": status,
        "outputs": sorted(str(o) for o in outputs),
        "versions": library_versions(),
        "wall_time": round(wall_time, 3),
    }
    return write_json(manifest, Path(out) / "manifest.json")
