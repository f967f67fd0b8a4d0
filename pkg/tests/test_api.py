"""Query server endpoints."""

import pytest
from fastapi.testclient import TestClient

from gann.api import QueryService, create_app
from gann.build import build_index
from gann.data import brute_force_knn, save_vecs
from gann.models import BuildAlgo, DCMode
from gann.seeds import save_bundle


@pytest.fixture
def service(small_set, small_params):
    result = build_index(small_set, small_params)
    return QueryService(result.index, result.seed_index, small_set)


@pytest.fixture
def client(service):
    return TestClient(create_app(service))


def test_root_and_health(client, small_set):
    assert client.get("/").json()["status"] == "active"
    health = client.get("/health").json()
    assert health["status"] == "healthy"
    assert (health["index"], health["nodes"], health["dim"], health["seeds"]) == ("flat", small_set.n, 8, "ks")


def test_search(client, small_set, queries):
    q = queries[0]
    response = client.post("/search", json={"vector": q.tolist(), "k": 5, "beam_l": 64})
    assert response.status_code == 200
    body = response.json()
    assert len(body["ids"]) == len(body["distances"]) == 5
    assert body["distances"] == sorted(body["distances"])
    assert body["ids"][0] == brute_force_knn(small_set, q, 1)[0].node
    assert body["distance_calcs"] > 0


def test_wrong_dimension_is_a_bad_request(client):
    response = client.post("/search", json={"vector": [0.1, 0.2]})
    assert response.status_code == 400
    assert response.json()["error"] == "DimensionMismatchError"


def test_beam_narrower_than_k_is_a_bad_request(client, queries):
    response = client.post("/search", json={"vector": queries[0].tolist(), "k": 20, "beam_l": 5})
    assert response.status_code == 400
    assert response.json()["error"] == "ParameterError"


def test_malformed_body_is_rejected(client):
    assert client.post("/search", json={"vector": [], "k": 0}).status_code == 422


def test_service_from_files(tmp_path, small_set, small_params, queries):
    result = build_index(small_set, small_params.model_copy(update={"leaf_size": 100}), BuildAlgo.DC, DCMode.SEPARATE)
    save_bundle(result.index, result.seed_index, tmp_path / "dc.gann")
    save_vecs(tmp_path / "base.fvecs", small_set.values)
    service = QueryService.from_files(tmp_path / "dc.gann", tmp_path / "base.fvecs")
    assert service.kind == "partitioned-separate"
    client = TestClient(create_app(service))
    response = client.post("/search", json={"vector": queries[3].tolist(), "k": 3, "beam_l": 10, "nprobe": 2})
    assert response.status_code == 200
    assert len(response.json()["ids"]) == 3
