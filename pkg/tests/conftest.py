import pytest
from sqlmodel import Session, SQLModel, create_engine
from sqlmodel.pool import StaticPool

from app.control import Control
from app.model import make_builtin
from app.sde import SimConfig

# Create in-memory database for testing
TEST_DATABASE_URL = "sqlite:///:memory:"

engine = create_engine(
    TEST_DATABASE_URL,
    connect_args={"check_same_thread": False},
    poolclass=StaticPool,
)


@pytest.fixture(name="session")
def session_fixture():
    SQLModel.metadata.create_all(engine)
    with Session(engine) as session:
        yield session
    SQLModel.metadata.drop_all(engine)


@pytest.fixture(name="lin1d")
def lin1d_fixture():
    return make_builtin("LIN1D")


@pytest.fixture(name="decoupled")
def decoupled_fixture():
    """LIN1D with f1 = 0, so X_T = sqrt(eps) W_T exactly."""
    return make_builtin("LIN1D", {"a1": 0.0, "b1": 0.0})


@pytest.fixture(name="nonlip")
def nonlip_fixture():
    return make_builtin("NONLIP1D")


@pytest.fixture(name="sim")
def sim_fixture():
    return SimConfig(epsilon=0.1, delta=0.01, T=1.0, n_steps=50, seed=42)


@pytest.fixture(name="unit_control")
def unit_control_fixture():
    return Control.constant(1.0, 10, 1.0)


@pytest.fixture(name="write_config")
def write_config_fixture(tmp_path):
    """Write TOML text to a temporary config file and return its path."""
    def write(text: str, name: str = "experiment.toml"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return write
