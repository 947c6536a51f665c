"""
HTTP API: routing, status codes and response shapes
"""

import json
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.services.casestudies import CASESTUDIES, program1_source

CASESTUDIES_DIR = Path(__file__).parent / "casestudies"


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


def load(name: str):
    return json.loads((CASESTUDIES_DIR / name).read_text())


def test_root_and_health(client):
    r = client.get("/")
    assert r.status_code == 200
    assert r.json()["endpoints"]["verify"] == "/verify"
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json()["status"] == "healthy"


def test_unknown_endpoint(client):
    r = client.get("/nowhere")
    assert r.status_code == 404
    assert r.json()["detail"] == "Endpoint not found"


def test_list_casestudies(client):
    r = client.get("/casestudies")
    assert r.status_code == 200
    names = {c["name"] for c in r.json()}
    assert set(CASESTUDIES) <= names
    filter_entry = next(c for c in r.json() if c["name"] == "filter")
    assert filter_entry["parameters"] == ["B", "method", "precision"]


def test_unknown_casestudy(client):
    r = client.post("/casestudies/nonesuch", json={})
    assert r.status_code == 404
    assert "nonesuch" in r.json()["detail"]


def test_casestudy_rejects_unknown_parameters(client):
    r = client.post("/casestudies/program3", json={"parameters": {"M": 10}})
    assert r.status_code == 400


def test_compile(client):
    r = client.post("/models/compile", json={"source": program1_source(), "name": "division"})
    assert r.status_code == 200
    body = r.json()
    assert body["name"] == "division"
    assert body["variables"] == ["dd", "dr", "q", "r"]


def test_compile_error_is_a_bad_request(client):
    r = client.post("/models/compile", json={"source": "int x;\nx = 1 @ 2;\n"})
    assert r.status_code == 400


def test_cycles(client):
    r = client.post("/models/cycles", json={"model": load("euclid_reduced.json")})
    assert r.status_code == 200
    body = r.json()
    assert body["nodes"] == 3
    assert body["cycles"] == [["F2->F2#1"], ["F2->F2#2"]]


def test_cycles_need_a_graph(client):
    r = client.post("/models/cycles", json={"model": load("example2_milm.json")})
    assert r.status_code == 400


def test_check_certificate(client):
    payload = {"model": load("program3.json"), "certificate": load("program3_certificate.json")}
    r = client.post("/verify/check-cert", json=payload)
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "certified"
    assert [v["property"] for v in body["verdicts"]] == ["certificate", "unreachability"]


def test_invalid_model_is_rejected(client):
    r = client.post("/verify", json={"model": {"name": "x", "variables": ["x"]}})
    assert r.status_code == 400
    r = client.post("/verify", json={"method": "joint"})
    assert r.status_code == 422
