"""
Error types shared by every module.

Each error carries a human-readable ``detail`` and a JSON-ready ``payload``,
plus the process exit code the command line maps it to.
"""

from typing import Any, Dict, Optional


class SlowFastError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3

    def __init__(self, detail: str, payload: Optional[Dict[str, Any]] = None):
        super().__init__(detail)
        self.detail = detail
        self.payload = payload or {}

    def to_dict(self) -> dict:
        """Convert to dictionary for the run manifest / stderr report."""
        return {
            "error": type(self).__name__,
            "detail": self.detail,
            "exit_code": self.exit_code,
            "payload": self.payload,
        }


class ConfigError(SlowFastError):
    """Invalid parameters, grids or orderings."""

    exit_code = 2


class DomainError(SlowFastError):
    """Argument outside the domain of a function."""

    exit_code = 2


class ModelError(SlowFastError):
    """A coefficient map produced a non-finite value."""

    exit_code = 3


class NumericError(SlowFastError):
    """Quadrature, refinement or optimizer failure."""

    exit_code = 3


class BlowUpError(NumericError):
    """A simulated state left the finite range."""

    def __init__(self, detail: str, last_finite_index: int, payload: Optional[Dict[str, Any]] = None):
        payload = dict(payload or {})
        payload["last_finite_index"] = last_finite_index
        super().__init__(detail, payload)
        self.last_finite_index = last_finite_index


class AcceptanceFailure(SlowFastError):
    """At least one acceptance suite failed."""

    exit_code = 4


class NumericWarning(UserWarning):
    """Degenerate but recoverable numeric situation."""
