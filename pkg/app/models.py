from datetime import datetime, timezone
from typing import Optional

from sqlmodel import Field, SQLModel


def _now() -> datetime:
    return datetime.now(timezone.utc)


class RunRecord(SQLModel, table=True):
    """One CLI invocation and where its artifacts went."""
    __tablename__ = "runs"

    id: Optional[int] = Field(default=None, primary_key=True)
    command: str = Field(index=True, max_length=20)
    config_hash: str = Field(index=True, max_length=64)
    seed: int
    parallelism: int = Field(default=1)
    status: str = Field(default="ok", max_length=20)  # ok, config-error, numeric-error, failed
    exit_code: int = Field(default=0)
    wall_time: float = Field(default=0.0)
    output_dir: Optional[str] = Field(default=None, max_length=500)
    detail: Optional[str] = Field(default=None, max_length=2000)
    created_at: datetime = Field(default_factory=_now)
