import numpy as np
import pytest

from app.formats import save_fingerprint, save_refset, save_text
from app.gif_engine import fingerprint
from app.model_zoo import LineageKind, ZooEntry, ZooManifest
from app.models import ArtifactKind, ExperimentKind
from app.reference_sampler import sample_given
from app.registry import Registry
from tests.conftest import linear_model

RUN_ID = "RUN-TEST"


def _refs():
    return sample_given(np.random.default_rng(0).uniform(0.1, 1, size=(3, 2)))


@pytest.fixture
def registered_run(db_session, tmp_path):
    registry = Registry(db_session)
    registry.open_run(RUN_ID, ExperimentKind.FINGERPRINT_ONLY, 0xAB, tmp_path)
    refs = _refs()
    models = {"east": linear_model([1.0, 0.0]), "north": linear_model([0.0, 1.0])}
    for model_id, model in models.items():
        path = save_fingerprint(tmp_path / f"{model_id}.mgif", fingerprint(model, refs, steps=4, model_id=model_id))
        registry.record_artifact(RUN_ID, ArtifactKind.FINGERPRINT, path, 0xAB, model_id)
    coarse = fingerprint(models["east"], refs, steps=8, model_id="coarse")
    registry.record_artifact(RUN_ID, ArtifactKind.FINGERPRINT,
                             save_fingerprint(tmp_path / "coarse.mgif", coarse), 0xAB, "coarse")
    manifest = ZooManifest([ZooEntry(model_id, LineageKind.INDEPENDENT, None, 1, 0) for model_id in models])
    registry.record_models(RUN_ID, manifest, {})
    registry.record_artifact(RUN_ID, ArtifactKind.REPORT, save_text(tmp_path / "taskrel.txt", "spearman=0.9\n"), 0xAB)
    return registry


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok", "format_version": 1}


def test_runs_and_models(client, registered_run):
    runs = client.get("/runs/").json()
    assert [run["id"] for run in runs] == [RUN_ID]
    assert runs[0]["config_hash"] == "00000000000000ab"
    models = client.get(f"/runs/{RUN_ID}/models").json()
    assert [m["model_id"] for m in models] == ["east", "north"]
    assert client.get("/runs/RUN-NOPE").status_code == 404


def test_fingerprint_listing(client, registered_run):
    names = [a["name"] for a in client.get(f"/runs/{RUN_ID}/fingerprints").json()]
    assert names == ["east.mgif", "north.mgif", "coarse.mgif"]


def test_distance_between_registered_fingerprints(client, registered_run):
    response = client.post("/distances/", json={"run_id": RUN_ID, "first": "east", "second": "north"})
    assert response.status_code == 200
    body = response.json()
    assert body["distance"] == pytest.approx(3.0)
    assert body["affinity"] == pytest.approx(0.5)
    assert body["curves"] == 3


def test_distance_errors(client, registered_run):
    incomparable = client.post("/distances/", json={"run_id": RUN_ID, "first": "east", "second": "coarse"})
    assert incomparable.status_code == 409
    missing = client.post("/distances/", json={"run_id": RUN_ID, "first": "east", "second": "west"})
    assert missing.status_code == 404
    reserved = client.post("/distances/", json={"run_id": RUN_ID, "first": "east", "second": "north",
                                                "metric": "frechet"})
    assert reserved.status_code == 422


def test_reports(client, registered_run):
    response = client.get(f"/runs/{RUN_ID}/reports/taskrel.txt")
    assert response.status_code == 200
    assert response.text == "spearman=0.9\n"
    assert client.get(f"/runs/{RUN_ID}/reports/absent.txt").status_code == 404


def test_ig_cosine_needs_the_registered_reference_set(client, registered_run, tmp_path):
    request = {"run_id": RUN_ID, "first": "east", "second": "north", "metric": "ig-cosine"}
    missing = client.post("/distances/", json=request)
    assert missing.status_code == 422
    assert "reference set" in missing.json()["detail"]

    registered_run.record_artifact(RUN_ID, ArtifactKind.REFSET, save_refset(tmp_path / "refset.mgrs", _refs()), 0xAB)
    response = client.post("/distances/", json=request)
    assert response.status_code == 200
    body = response.json()
    assert body["metric"] == "ig-cosine"
    assert body["distance"] == pytest.approx(3.0)
    assert body["affinity"] == pytest.approx(0.5)
