import json
import sys
from decimal import Decimal
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from conftest import make_config
from helpers import single_step_doc, solution_doc, subproblem_block
from mathdivide.dataset import Corpus, Problem
from mathdivide.llm_gateway import MockGateway, MockStep
from mathdivide.orchestrator import auto_feedback, run_batch, run_session
from mathdivide.service_api import create_app
from mathdivide.storage import RunStore, UnknownRun, session_from_record, session_to_record

GOOD_DOC = single_step_doc(16, 2)
WRONG_DOC = single_step_doc(15, 2)


def _problem(i: int) -> Problem:
    return Problem(
        id=f"p{i:05d}",
        statement=f"Problem {i}: a farm collects 16 eggs per box across 2 boxes. Total?",
        gold_raw="#### 32",
        gold_value=Decimal(32),
    )


def _write_script_book(path: Path, scripts: dict) -> str:
    payload = {
        "scripts": {
            pid: [{"match": step.match, "response": step.response} for step in steps]
            for pid, steps in scripts.items()
        }
    }
    path.write_text(json.dumps(payload))
    return str(path)


def _seed_run(tmp_path: Path, *, mode="interactive", run_id="run-a"):
    """Create a persisted run: p00000 parked pending, p00001 solved."""
    scripts = {
        "p00000": [MockStep("any", WRONG_DOC), MockStep("Check the calculations", GOOD_DOC)],
        "p00001": [MockStep("any", GOOD_DOC)],
    }
    book_path = _write_script_book(tmp_path / f"{run_id}-scripts.json", scripts)
    config = make_config(run_id=run_id, mode=mode, mock_script_path=book_path)
    corpus = Corpus(problems=(_problem(0), _problem(1)), source_path="memory")
    store = RunStore(tmp_path / "runs")
    store.create_run(config)

    local_book = {pid: list(steps) for pid, steps in scripts.items()}
    feedback = None if mode == "interactive" else (lambda s, a: None)

    def provider(problem):
        return MockGateway(local_book[problem.id])

    run_batch(corpus, config, provider,
              on_session=lambda s: store.persist_session(run_id, s))
    return store, config


class TestPersistence:
    def test_roundtrip_equality(self, tmp_path, problem, mock_config):
        gateway = MockGateway([MockStep("any", WRONG_DOC), MockStep("any", GOOD_DOC)])
        session = run_session(problem, mock_config, gateway, lambda s, a: auto_feedback(a))
        record = session_to_record(session)
        restored = session_from_record(json.loads(json.dumps(record)))
        assert session_to_record(restored) == record
        assert restored.verdict == session.verdict
        assert restored.attempts[-1].computed.keys() == session.attempts[-1].computed.keys()

    def test_persist_twice_identical_bytes(self, tmp_path, problem, mock_config):
        store = RunStore(tmp_path)
        store.create_run(make_config(run_id="r1"))
        gateway = MockGateway([MockStep("any", GOOD_DOC)])
        session = run_session(problem, mock_config, gateway, None)
        store.persist_session("r1", session)
        path = tmp_path / "r1" / "sessions" / "p00000.json"
        first = path.read_bytes()
        store.persist_session("r1", session)
        assert path.read_bytes() == first

    def test_unwritable_dir_raises_storage_error(self, problem, mock_config):
        from mathdivide.storage import persist_session, StorageError

        session = run_session(problem, mock_config, MockGateway([MockStep("any", GOOD_DOC)]), None)
        with pytest.raises((StorageError, OSError)):
            persist_session("/proc/definitely-not-writable", session)

    def test_report_recomputed_from_files(self, tmp_path):
        store, config = _seed_run(tmp_path, mode="auto", run_id="run-auto")
        report = store.report("run-auto")
        assert report.totals["problems"] == 2
        # auto mode: p00000 solves after one "Check the calculations" round
        assert report.totals["solved"] == 2
        assert report.refinement_histogram["1"] == 1
        assert report.refinement_histogram["0"] == 1

    def test_unknown_run(self, tmp_path):
        store = RunStore(tmp_path)
        with pytest.raises(UnknownRun):
            store.report("missing")


@pytest.fixture
def seeded_client(tmp_path):
    store, config = _seed_run(tmp_path)
    app = create_app(tmp_path / "runs")
    return TestClient(app), store, config


class TestServiceApi:
    def test_list_runs(self, seeded_client):
        client, _, _ = seeded_client
        runs = client.get("/api/runs").json()
        assert len(runs) == 1
        assert runs[0]["run_id"] == "run-a"
        assert runs[0]["totals"]["problems"] == 2

    def test_run_report(self, seeded_client):
        client, _, _ = seeded_client
        report = client.get("/api/runs/run-a").json()
        assert report["totals"]["pending"] == 1
        assert report["totals"]["solved"] == 1
        assert client.get("/api/runs/run-b").status_code == 404

    def test_sessions_filter(self, seeded_client):
        client, _, _ = seeded_client
        solved = client.get("/api/runs/run-a/sessions", params={"verdict": "solved"}).json()
        assert [s["problem_id"] for s in solved] == ["p00001"]

    def test_session_detail(self, seeded_client):
        client, _, _ = seeded_client
        payload = client.get("/api/sessions/run-a:p00000").json()
        assert payload["verdict"] == "pending"
        assert payload["pending_feedback"] is True
        assert payload["max_refinements"] == 3
        assert payload["attempts"][0]["comparison"] == "mismatch"
        assert client.get("/api/sessions/run-a:zzz").status_code == 404

    def test_pending_queue_lists_only_cap_eligible(self, seeded_client):
        client, _, _ = seeded_client
        pending = client.get("/api/feedback/pending").json()
        assert [item["problem_id"] for item in pending] == ["p00000"]
        assert pending[0]["max_attempts"] == 4
        assert pending[0]["attempts_total"] == 1

    def test_byte_stable_responses(self, seeded_client):
        client, _, _ = seeded_client
        first = client.get("/api/sessions/run-a:p00000").content
        second = client.get("/api/sessions/run-a:p00000").content
        assert first == second

    def test_health(self, seeded_client):
        client, _, _ = seeded_client
        payload = client.get("/api/health").json()
        assert payload["status"] == "ok"
        assert isinstance(payload["interpreter_available"], bool)


class TestRefineEndpoint:
    def test_check_calculations_resumes_and_persists_exact_message(self, seeded_client):
        client, store, _ = seeded_client
        response = client.post(
            "/api/sessions/run-a:p00000/refine",
            json={"feedback_id": "fb-1", "kind": "check_calculations"},
        )
        assert response.status_code == 202
        body = response.json()
        assert body["verdict"] == "solved"
        assert body["refinements_used"] == 1
        session = store.load_session("run-a", "p00000")
        assert session.refinements[0].message == "Check the calculations"
        assert session.verdict == "solved"

    def test_idempotent_replay(self, seeded_client):
        client, store, _ = seeded_client
        request = {"feedback_id": "fb-dup", "kind": "check_calculations"}
        first = client.post("/api/sessions/run-a:p00000/refine", json=request)
        second = client.post("/api/sessions/run-a:p00000/refine", json=request)
        assert first.status_code == second.status_code == 202
        assert first.json() == second.json()
        session = store.load_session("run-a", "p00000")
        assert session.refinements_used == 1

    def test_cap_reached_409(self, tmp_path):
        scripts = {"p00000": [MockStep("any", WRONG_DOC)] * 5}
        book_path = _write_script_book(tmp_path / "scripts.json", scripts)
        config = make_config(run_id="run-cap", mode="interactive", mock_script_path=book_path)
        store = RunStore(tmp_path / "runs")
        store.create_run(config)
        corpus = Corpus(problems=(_problem(0),), source_path="memory")
        run_batch(corpus, config, lambda p: MockGateway(list(scripts[p.id])),
                  on_session=lambda s: store.persist_session("run-cap", s))
        client = TestClient(create_app(tmp_path / "runs"))
        for i in range(3):
            response = client.post(
                "/api/sessions/run-cap:p00000/refine",
                json={"feedback_id": f"fb-{i}", "kind": "check_calculations"},
            )
            assert response.status_code == 202
        blocked = client.post(
            "/api/sessions/run-cap:p00000/refine",
            json={"feedback_id": "fb-final", "kind": "check_calculations"},
        )
        assert blocked.status_code == 409
        assert "cap" in blocked.json()["error"]
        pending = client.get("/api/feedback/pending").json()
        assert pending == []

    def test_unknown_subproblem_422(self, seeded_client):
        client, _, _ = seeded_client
        response = client.post(
            "/api/sessions/run-a:p00000/refine",
            json={"feedback_id": "fb-9", "kind": "flag_subproblem", "flagged_indices": [9]},
        )
        assert response.status_code == 422
        assert "9" in response.json()["error"]

    def test_custom_requires_message(self, seeded_client):
        client, _, _ = seeded_client
        response = client.post(
            "/api/sessions/run-a:p00000/refine",
            json={"feedback_id": "fb-c", "kind": "custom"},
        )
        assert response.status_code == 422

    def test_solved_session_409(self, seeded_client):
        client, _, _ = seeded_client
        response = client.post(
            "/api/sessions/run-a:p00001/refine",
            json={"feedback_id": "fb-s", "kind": "check_calculations"},
        )
        assert response.status_code == 409

    def test_unknown_session_404(self, seeded_client):
        client, _, _ = seeded_client
        response = client.post(
            "/api/sessions/run-a:none/refine",
            json={"feedback_id": "fb-x", "kind": "check_calculations"},
        )
        assert response.status_code == 404
