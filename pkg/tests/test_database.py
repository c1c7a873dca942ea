from sqlmodel import Session

from app.database import create_db_and_tables, get_engine, list_runs, record_run
from app.models import RunRecord


def test_record_and_list_runs(session):
    record_run(session, RunRecord(command="simulate", config_hash="a" * 64, seed=0))
    record_run(session, RunRecord(command="rate", config_hash="b" * 64, seed=1, wall_time=2.5))
    failed = record_run(session, RunRecord(command="simulate", config_hash="a" * 64, seed=0, status="config-error",
                                           exit_code=2, detail="delta must be smaller than epsilon"))

    assert failed.id is not None
    assert failed.created_at is not None

    runs = list_runs(session)
    assert [r.command for r in runs] == ["simulate", "rate", "simulate"]

    simulate_runs = list_runs(session, command="simulate")
    assert len(simulate_runs) == 2
    assert simulate_runs[1].exit_code == 2

    by_hash = list_runs(session, config_hash="b" * 64)
    assert len(by_hash) == 1
    assert by_hash[0].wall_time == 2.5


def test_registry_file_lives_in_output_directory(tmp_path):
    engine = get_engine(tmp_path / "out")
    create_db_and_tables(engine)
    with Session(engine) as session:
        record_run(session, RunRecord(command="check", config_hash="c" * 64, seed=3))
    assert (tmp_path / "out" / "runs.db").is_file()

    engine = get_engine(tmp_path / "registry.db")
    create_db_and_tables(engine)
    assert (tmp_path / "registry.db").is_file()
