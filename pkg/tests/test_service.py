import numpy as np
import pytest
from fastapi.testclient import TestClient

from dpmask.dataset import toy_mixture_spec
from dpmask.service.app import create_app
from dpmask.service.schemas import DatasetPayload, MixtureSpecModel


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


@pytest.fixture(scope="module")
def data(client):
    spec = MixtureSpecModel.from_spec(toy_mixture_spec(60, (0, 1))).model_dump()
    resp = client.post("/synth", json={"mixture": spec, "seed": 1})
    assert resp.status_code == 200
    return resp.json()["dataset"]


def test_health(client):
    assert client.get("/health").json()["status"] == "ok"


def test_synth_defaults_to_toy(client):
    body = client.post("/synth", json={}).json()["dataset"]
    assert len(body["labels"]) == 100 and body["n_classes"] == 3
    again = client.post("/synth", json={}).json()["dataset"]
    assert body == again


def test_train_and_eval(client, data):
    resp = client.post("/train", json={"dataset": data, "normalize": "max"})
    assert resp.status_code == 200
    body = resp.json()
    assert body["residual_norm"] <= 1e-8
    model = body["model"]
    assert model["mode"] == "binary" and model["d"] == 2 and model["scale"] > 0
    acc = client.post("/eval", json={"model": model, "dataset": data}).json()
    assert acc["n"] == 60 and acc["accuracy"] > 0.8


def test_mask_round_trip(client, data):
    req = {"dataset": data, "epsilon": 1e9, "seed": 3, "verbose": True}
    body = client.post("/mask", json=req).json()
    assert body["final_mean_residual"] <= 1e-3
    assert body["dataset"]["labels"] == data["labels"]
    assert body["warnings"] == []
    assert body["diagnostics"][-1]["n"] == 60
    assert client.post("/mask", json=req).json() == body


def test_mask_multiclass_is_flagged(client):
    data = client.post("/synth", json={"n": 30}).json()["dataset"]
    body = client.post("/mask", json={"dataset": data, "epsilon": 5.0}).json()
    assert any("heuristic" in w for w in body["warnings"])


def test_perturb(client, data):
    body = client.post("/perturb", json={"dataset": data, "epsilon": 1e9}).json()
    x = np.array(DatasetPayload.model_validate(body["dataset"]).features)
    np.testing.assert_allclose(x * body["scale"], data["features"], atol=1e-5)


def test_sweep_and_bound_check(client):
    spec = MixtureSpecModel.from_spec(toy_mixture_spec(100, (0, 1))).model_dump()
    cfg = {"mixture": spec, "ns": [30], "epsilons": [2.0], "repetitions": 2, "validation_size": 100}
    recs = client.post("/sweep", json=cfg).json()["records"]
    assert [r["method"] for r in recs] == ["mdg", "input_perturb", "output_perturb"]
    assert all(r["reps"] == 2 for r in recs)
    rep = client.post("/bound-check", json={"method": "output_perturb", "config": cfg}).json()
    assert rep["n"] == 30 and rep["epsilon"] == 2.0 and len(rep["gaps"]) == 2


@pytest.mark.parametrize(
    "path,body",
    [
        ("/mask", {"dataset": {"features": [[1.0]], "labels": [0]}, "epsilon": -1}),
        ("/mask", {"dataset": {"features": [[1.0]], "labels": [0]}, "epsilon": 1, "bogus": 1}),
        ("/train", {"dataset": {"features": [], "labels": []}}),
        ("/sweep", {"ns": []}),
    ],
)
def test_schema_errors_are_422(client, path, body):
    assert client.post(path, json=body).status_code == 422


@pytest.mark.parametrize(
    "path,body",
    [
        ("/train", {"dataset": {"features": [[1.0], [1.0, 2.0]], "labels": [0, 1]}}),
        ("/perturb", {"dataset": {"features": [[3.0]], "labels": [0]}, "epsilon": 1, "normalize": "none"}),
        ("/sweep", {"csv_path": "/nonexistent.csv", "ns": [10], "epsilons": [1.0], "repetitions": 1}),
        ("/train", {"dataset": {"features": [[1.0]], "labels": [3]}}),
    ],
)
def test_domain_errors_are_400(client, path, body):
    resp = client.post(path, json=body)
    assert resp.status_code == 400
    assert resp.json()["detail"]
