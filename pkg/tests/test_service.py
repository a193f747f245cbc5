import json
import time

import pytest
from fastapi.testclient import TestClient

from autoopt.agents import RuleBasedAgents
from autoopt.assets import asset_text
from autoopt.moo import SolverParams
from autoopt.pipeline import Phase, Session
from autoopt.scene import load_scene
from autoopt.service import SessionStore, create_app, session_from_dict, session_to_dict

CLEAR_INSTRUCTION = "I will touch the Map; put it on the desk."


@pytest.fixture
def scenes(tmp_path):
    (tmp_path / "office.json").write_text(asset_text("office.json"))
    return tmp_path


@pytest.fixture
def client(scenes, tmp_path):
    app = create_app(
        scenes,
        agents=RuleBasedAgents(),
        solver=SolverParams(population=16, generations=4),
        store_dir=tmp_path / "store",
        background=False,
    )
    return TestClient(app)


def wait_ready(client, sid, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        doc = client.get(f"/api/sessions/{sid}").json()
        if doc["status"] in ("ready", "error", "clarifying", "finalized"):
            return doc
        time.sleep(0.05)
    raise TimeoutError("session never became ready")


class TestBasics:
    def test_list_scenes(self, client):
        docs = client.get("/api/scenes").json()
        assert docs[0]["id"] == "office"
        assert "Map" in docs[0]["widgets"]

    def test_get_scene(self, client):
        doc = client.get("/api/scenes/office").json()
        assert doc["id"] == "office"
        assert len(doc["objects"]) == 3

    def test_unknown_scene_404_shape(self, client):
        resp = client.get("/api/scenes/submarine")
        assert resp.status_code == 404
        body = resp.json()
        assert body["code"] == "not_found"
        assert body["path"] == "/api/scenes/submarine"

    def test_create_session(self, client):
        resp = client.post("/api/sessions", json={"scene_id": "office"})
        assert resp.status_code == 201
        assert resp.json()["status"] == "idle"

    def test_create_session_unknown_scene(self, client):
        resp = client.post("/api/sessions", json={"scene_id": "nope"})
        assert resp.status_code == 404

    def test_get_unknown_session(self, client):
        resp = client.get("/api/sessions/ghost")
        assert resp.status_code == 404


class TestScriptedFlow:
    def test_full_flow(self, client):
        sid = client.post("/api/sessions", json={"scene_id": "office"}).json()["id"]

        resp = client.post(
            f"/api/sessions/{sid}/instruction", json={"text": "Place the map.", "token": "t1"}
        ).json()
        assert resp["status"] == "clarifying"
        assert resp["question"]

        resp = client.post(
            f"/api/sessions/{sid}/answer",
            json={"text": "I will touch it; keep it near the desk.", "token": "t2"},
        ).json()
        assert resp["status"] == "optimizing"
        doc = wait_ready(client, sid)
        assert doc["status"] == "ready"

        cands = client.get(f"/api/sessions/{sid}/candidates").json()
        assert len(cands) >= 1
        assert sum(1 for c in cands if c["recommended"]) == 1
        assert all(c["feasible"] for c in cands)

        resp = client.post(
            f"/api/sessions/{sid}/select", json={"index": "auto", "token": "t3"}
        ).json()
        assert resp["status"] == "finalized"
        layout = resp["final_layout"]
        map_pos = layout["Map"]

        target = [map_pos[0], map_pos[1] + 0.1, map_pos[2]]
        resp = client.post(
            f"/api/sessions/{sid}/adjust",
            json={"widget": "Map", "position": target, "token": "t4"},
        ).json()
        assert resp["metrics"]["number_of_adjustments"] == 1
        assert abs(resp["metrics"]["adjustment_distance"] - 0.1) < 1e-9

        metrics = client.get(f"/api/sessions/{sid}/metrics").json()
        assert metrics["number_of_adjustments"] == 1

    def test_answer_without_question_409(self, client):
        sid = client.post("/api/sessions", json={"scene_id": "office"}).json()["id"]
        resp = client.post(f"/api/sessions/{sid}/answer", json={"text": "hello", "token": "x"})
        assert resp.status_code == 409
        assert resp.json()["code"] == "invalid_state"


class TestIdempotency:
    def test_instruction_retry_with_same_token(self, client):
        sid = client.post("/api/sessions", json={"scene_id": "office"}).json()["id"]
        first = client.post(
            f"/api/sessions/{sid}/instruction", json={"text": "Place the map.", "token": "tok"}
        ).json()
        again = client.post(
            f"/api/sessions/{sid}/instruction", json={"text": "Place the map.", "token": "tok"}
        ).json()
        assert first == again
        doc = client.get(f"/api/sessions/{sid}").json()
        assert doc["history"] == ["Place the map."]

    def test_adjust_retry_does_not_double_count(self, client):
        sid = client.post("/api/sessions", json={"scene_id": "office"}).json()["id"]
        client.post(
            f"/api/sessions/{sid}/instruction", json={"text": CLEAR_INSTRUCTION, "token": "a"}
        )
        wait_ready(client, sid)
        client.post(f"/api/sessions/{sid}/select", json={"index": "auto", "token": "b"})
        pos = client.get(f"/api/sessions/{sid}").json()["final_layout"]["Map"]
        target = [pos[0] + 0.1, pos[1], pos[2]]
        r1 = client.post(
            f"/api/sessions/{sid}/adjust",
            json={"widget": "Map", "position": target, "token": "move-1"},
        ).json()
        r2 = client.post(
            f"/api/sessions/{sid}/adjust",
            json={"widget": "Map", "position": target, "token": "move-1"},
        ).json()
        assert r1 == r2
        assert r2["metrics"]["number_of_adjustments"] == 1


class TestPersistence:
    def test_store_round_trip_identity(self):
        session = Session(id="abc", scene_id="office")
        session.history = ["hello"]
        session.log("instruction", text="hello")
        doc = session_to_dict(session)
        assert session_to_dict(session_from_dict(doc)) == doc

    def test_reload_after_restart(self, scenes, tmp_path):
        store = tmp_path / "store"
        app1 = create_app(
            scenes,
            agents=RuleBasedAgents(),
            solver=SolverParams(population=16, generations=4),
            store_dir=store,
            background=False,
        )
        c1 = TestClient(app1)
        sid = c1.post("/api/sessions", json={"scene_id": "office"}).json()["id"]
        c1.post(f"/api/sessions/{sid}/instruction", json={"text": CLEAR_INSTRUCTION, "token": "a"})
        wait_ready(c1, sid)
        before = c1.get(f"/api/sessions/{sid}").json()

        app2 = create_app(
            scenes,
            agents=RuleBasedAgents(),
            solver=SolverParams(population=16, generations=4),
            store_dir=store,
            background=False,
        )
        c2 = TestClient(app2)
        after = c2.get(f"/api/sessions/{sid}").json()
        assert after == before

    def test_store_atomic_files(self, tmp_path):
        store = SessionStore(tmp_path)
        session = Session(id="abc", scene_id="office")
        store.save(session)
        store.save(session)
        assert store.list_ids() == ["abc"]
        loaded, tokens = store.load("abc")
        assert loaded.id == "abc"
        assert tokens == {}


class TestBackgroundMode:
    def test_polling_reaches_ready(self, scenes, tmp_path):
        app = create_app(
            scenes,
            agents=RuleBasedAgents(),
            solver=SolverParams(population=16, generations=4),
            store_dir=tmp_path / "store",
            background=True,
        )
        client = TestClient(app)
        sid = client.post("/api/sessions", json={"scene_id": "office"}).json()["id"]
        resp = client.post(
            f"/api/sessions/{sid}/instruction",
            json={"text": CLEAR_INSTRUCTION, "token": "bg"},
        ).json()
        assert resp["status"] == "optimizing"
        doc = wait_ready(client, sid)
        assert doc["status"] == "ready"
        assert len(doc["candidates"]) >= 1
