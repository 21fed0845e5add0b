import os
import tempfile

# The registry database must point somewhere disposable before app.config is imported.
_DB_DIR = tempfile.mkdtemp(prefix="modelgif-tests-")
os.environ["DATABASE_URL"] = f"sqlite:///{_DB_DIR}/registry.db"
os.environ.setdefault("MODELGIF_LOG_LEVEL", "WARNING")

import numpy as np
import pytest

from app.datasets import rotated_boundary_task
from app.model_zoo import ArchSpec
from app.tensor_core import DiffModel, Layer, LayerKind


def linear_model(weights, bias: float = 0.0) -> DiffModel:
    """M(x) = w . x + b as a one-unit dense head."""
    w = np.asarray(weights, dtype=np.float32).reshape(-1, 1)
    return DiffModel((w.shape[0],), (Layer(LayerKind.DENSE, (w, np.array([bias], dtype=np.float32))),))


def tanh_mlp(seed: int = 0, inputs: int = 4, hidden=(8,), outputs: int = 3) -> DiffModel:
    return ArchSpec(kind="mlp", input_shape=(inputs,), hidden=tuple(hidden), outputs=outputs,
                    activation="tanh").build(seed)


def relu_mlp(seed: int = 0, inputs: int = 4, hidden=(8,), outputs: int = 3) -> DiffModel:
    return ArchSpec(kind="mlp", input_shape=(inputs,), hidden=tuple(hidden), outputs=outputs,
                    activation="relu").build(seed)


def reference_output(model: DiffModel, x: np.ndarray) -> float:
    """Independent float64 forward pass and scalarization of one MLP input."""
    h = np.asarray(x, dtype=np.float64).reshape(1, -1)
    for layer in model.layers:
        if layer.kind == LayerKind.DENSE:
            w, b = (p.astype(np.float64) for p in layer.params)
            h = h @ w + b
        elif layer.kind == LayerKind.TANH:
            h = np.tanh(h)
        elif layer.kind == LayerKind.RELU:
            h = np.maximum(h, 0.0)
        elif layer.kind == LayerKind.FLATTEN:
            h = h.reshape(1, -1)
        else:
            raise NotImplementedError(layer.kind)
    return float(h[0, 0]) if h.shape[1] == 1 else float(np.linalg.norm(h[0]))


def central_difference(model: DiffModel, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step.flat[i] = h
        grad.flat[i] = (reference_output(model, x + step) - reference_output(model, x - step)) / (2 * h)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def boundary_task():
    return rotated_boundary_task(30.0, 200, seed=3)


@pytest.fixture
def db_session():
    from sqlalchemy.orm import sessionmaker

    from app import models  # noqa: F401
    from app.database import Base, make_engine

    engine = make_engine(f"sqlite:///{tempfile.mkdtemp(prefix='modelgif-db-')}/test.db")
    Base.metadata.create_all(bind=engine)
    session = sessionmaker(autocommit=False, autoflush=False, bind=engine)()
    try:
        yield session
    finally:
        session.close()
        engine.dispose()


@pytest.fixture
def client(db_session):
    from fastapi.testclient import TestClient

    from app.database import get_db
    from main import app

    def override_get_db():
        yield db_session

    app.dependency_overrides[get_db] = override_get_db
    with TestClient(app) as test_client:
        yield test_client
    app.dependency_overrides.clear()
