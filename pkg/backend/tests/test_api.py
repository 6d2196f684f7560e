from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from app.main import CORS_ORIGINS_ENV, app, create_app
from app.services.llm_client import API_KEY_ENV


@pytest.fixture()
def client():
    return TestClient(app)


def box(x0, y0, x1, y1):
    return {"x_min": x0, "y_min": y0, "x_max": x1, "y_max": y1}


def test_health(client):
    assert client.get("/api/health").json() == {"status": "ok"}


def test_cors_origins_come_from_env(monkeypatch):
    preflight = {"Origin": "http://viewer.local", "Access-Control-Request-Method": "POST"}
    plain = TestClient(create_app()).options("/api/eval/captions", headers=preflight)
    assert "access-control-allow-origin" not in plain.headers

    monkeypatch.setenv(CORS_ORIGINS_ENV, "http://viewer.local, http://other.local")
    res = TestClient(create_app()).options("/api/eval/captions", headers=preflight)
    assert res.status_code == 200
    assert res.headers["access-control-allow-origin"] == "http://viewer.local"


def test_caption_detections_spatial(client):
    body = {"objects": [{"class_label": "ship", "box": box(440, 10, 480, 40)}], "width": 512, "height": 512}
    res = client.post("/api/caption/detections", json=body)
    assert res.status_code == 200
    assert res.json() == {"caption": "There is 1 ship in the top-right corner of the image.", "method": "a2c_spatial"}


def test_caption_detections_counts(client):
    objects = [{"class_label": "ship", "box": box(0, 0, 5, 5)}] * 3
    res = client.post("/api/caption/detections", json={"objects": objects, "width": 64, "height": 64, "spatial": False})
    assert res.json()["caption"] == "There are 3 ships in this image."


def test_caption_detections_rejects_bad_size(client):
    res = client.post("/api/caption/detections", json={"objects": [], "width": 0, "height": 64})
    assert res.status_code == 422


def test_caption_proportions(client):
    res = client.post("/api/caption/proportions", json={"proportions": {"water": 60.0, "forest": 40.0}})
    assert res.json()["caption"] == (
        "This image contains water and forest. Water accounts for 60% and forest accounts for 40%."
    )
    assert res.json()["method"] == "sa2c"


def test_caption_proportions_bad_threshold(client):
    res = client.post("/api/caption/proportions", json={"proportions": {"water": 100.0}, "threshold_percent": 0})
    assert res.status_code == 422


def test_rewrite_rule(client):
    res = client.post("/api/rewrite/rule", json={"caption": "A gray ship near white docks"})
    assert res.json() == {"caption": "A ship near docks", "method": "rule_rewrite"}


def test_rewrite_prompt(client):
    res = client.post("/api/rewrite/prompt", json={"caption": "A gray ship.", "n_examples": 2, "seed": 4})
    data = res.json()
    assert data["examples"] == 2
    assert data["prompt"].endswith("Input: A gray ship.\nOutput:")


def test_rewrite_prompt_too_many_examples(client):
    res = client.post("/api/rewrite/prompt", json={"caption": "A ship.", "n_examples": 51})
    assert res.status_code == 422


def test_eval_captions(client):
    items = [{"id": "1", "candidate": "a ship near the dock", "references": ["a ship near the dock"]},
             {"id": "2", "candidate": "forest beside a river", "references": ["forest beside a river"]}]
    res = client.post("/api/eval/captions", json={"items": items})
    data = res.json()
    assert res.status_code == 200
    assert data["BLEU-4"] == pytest.approx(1.0)
    assert data["CIDEr"] == pytest.approx(10.0)
    assert data["SPICE"] == "not computed"


def test_eval_captions_empty(client):
    assert client.post("/api/eval/captions", json={"items": []}).status_code == 422


def test_eval_retrieval(client):
    scores = [[1.0 if i == j else 0.0 for j in range(10)] for i in range(10)]
    data = client.post("/api/eval/retrieval", json={"scores": scores}).json()
    assert data["i2t-R@1"] == 100.0
    assert data["Mean Recall"] == 100.0


def test_eval_retrieval_small_matrix(client):
    assert client.post("/api/eval/retrieval", json={"scores": [[1.0]]}).status_code == 422


def test_llm_status_without_key(client, monkeypatch):
    monkeypatch.delenv(API_KEY_ENV, raising=False)
    assert client.get("/api/llm/status").json()["ok"] is False
