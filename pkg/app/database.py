from pathlib import Path
from typing import Generator, List, Optional, Union

from sqlalchemy.engine import Engine
from sqlmodel import Session, SQLModel, create_engine, select

from app.models import RunRecord

REGISTRY_NAME = "runs.db"


def get_engine(path: Union[str, Path], echo: bool = False) -> Engine:
    """SQLite engine for the run registry at path (a directory or a .db file)."""
    path = Path(path)
    if path.suffix != ".db":
        path = path / REGISTRY_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    return create_engine(f"sqlite:///{path}", echo=echo, connect_args={"check_same_thread": False})


def create_db_and_tables(engine: Engine):
    """Create database tables."""
    SQLModel.metadata.create_all(engine)


def get_session(engine: Engine) -> Generator[Session, None, None]:
    with Session(engine) as session:
        yield session


def record_run(session: Session, record: RunRecord) -> RunRecord:
    session.add(record)
    session.commit()
    session.refresh(record)
    return record


def list_runs(session: Session, command: Optional[str] = None, config_hash: Optional[str] = None) -> List[RunRecord]:
    """Runs in insertion order, optionally filtered by command or config hash."""
    statement = select(RunRecord)
    if command is not None:
        statement = statement.where(RunRecord.command == command)
    if config_hash is not None:
        statement = statement.where(RunRecord.config_hash == config_hash)
    return list(session.exec(statement.order_by(RunRecord.id)).all())
