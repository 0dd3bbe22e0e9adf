"""HTTP service backing the review console.

Serves persisted runs and sessions as canonical JSON, exposes the queue
of interactive sessions parked for human feedback, and resumes a session
when feedback is submitted. Refinement submissions are idempotent via a
client-supplied feedback_id, and mutations are serialized per session:
a session is a linear dialogue, so there is never more than one writer.
"""

from __future__ import annotations

import socket
import threading
from pathlib import Path

from fastapi import FastAPI, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .canon import canonical_json
from .llm_gateway import HttpGateway
from .orchestrator import (
    VERDICT_PENDING,
    Session,
    apply_refinement,
)
from .prompting import RefinementPrompt, UnknownSubproblemIndex
from .sandbox_executor import probe_interpreter
from .storage import (
    RunStore,
    StorageError,
    UnknownRun,
    UnknownSession,
    session_to_record,
    _attempt_to_record,
)

DEFAULT_BIND = "127.0.0.1:8077"


class BindError(Exception):
    pass


class RefineRequest(BaseModel):
    feedback_id: str
    kind: str
    flagged_indices: list[int] | None = None
    message: str | None = None


def _json_response(payload, status_code: int = 200) -> Response:
    return Response(
        content=canonical_json(payload),
        status_code=status_code,
        media_type="application/json",
    )


def _error_response(status_code: int, reason: str) -> Response:
    return _json_response({"error": reason}, status_code=status_code)


def _excerpt(text: str, limit: int = 140) -> str:
    flattened = " ".join(text.split())
    return flattened if len(flattened) <= limit else flattened[: limit - 1] + "…"


def _session_id(run_id: str, problem_id: str) -> str:
    return f"{run_id}:{problem_id}"


def _session_summary(run_id: str, session: Session) -> dict:
    last = session.attempts[-1] if session.attempts else None
    return {
        "session_id": _session_id(run_id, session.problem.id),
        "run_id": run_id,
        "problem_id": session.problem.id,
        "problem_excerpt": _excerpt(session.problem.statement),
        "verdict": session.verdict,
        "refinements_used": session.refinements_used,
        "attempts": len(session.attempts),
        "last_comparison": last.comparison if last else None,
    }


def _is_pending(session: Session, max_refinements: int) -> bool:
    return (
        session.mode == "interactive"
        and session.verdict == VERDICT_PENDING
        and bool(session.attempts)
        and session.attempts[-1].comparison != "match"
        and session.refinements_used < max_refinements
    )


def create_app(run_root: str | Path, static_dir: str | Path | None = None) -> FastAPI:
    store = RunStore(run_root)
    app = FastAPI(title="mathdivide review service")
    session_locks: dict[str, threading.Lock] = {}
    locks_guard = threading.Lock()

    def _lock_for(session_id: str) -> threading.Lock:
        with locks_guard:
            return session_locks.setdefault(session_id, threading.Lock())

    def _find_event(run_id: str, feedback_id: str) -> dict | None:
        path = store.run_dir(run_id) / "events.jsonl"
        if not path.exists():
            return None
        import json as _json

        found = None
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                event = _json.loads(line)
                if (
                    event.get("event") == "refinement_submitted"
                    and event.get("feedback_id") == feedback_id
                ):
                    found = event
        return found

    @app.get("/api/runs")
    def list_runs():
        summaries = []
        for run_id in store.run_ids():
            report = store.report(run_id)
            summaries.append(
                {
                    "run_id": run_id,
                    "totals": report.totals,
                    "accuracy_percent": report.accuracy_percent,
                    "oracle_only": report.oracle_only,
                }
            )
        return _json_response(summaries)

    @app.get("/api/runs/{run_id}")
    def get_run(run_id: str):
        try:
            report = store.report(run_id)
        except UnknownRun:
            return _error_response(404, f"unknown run {run_id}")
        return _json_response(report.to_full_dict())

    @app.get("/api/runs/{run_id}/sessions")
    def list_sessions(run_id: str, verdict: str | None = None):
        try:
            sessions = store.load_sessions(run_id)
        except UnknownRun:
            return _error_response(404, f"unknown run {run_id}")
        summaries = [
            _session_summary(run_id, s)
            for s in sessions
            if verdict is None or s.verdict == verdict
        ]
        return _json_response(summaries)

    @app.get("/api/sessions/{session_id}")
    def get_session(session_id: str):
        run_id, _, problem_id = session_id.partition(":")
        if not problem_id:
            return _error_response(404, "session id must be <run_id>:<problem_id>")
        try:
            session = store.load_session(run_id, problem_id)
            config = store.config_for(run_id)
        except (UnknownRun, UnknownSession):
            return _error_response(404, f"unknown session {session_id}")
        payload = session_to_record(session)
        payload["session_id"] = session_id
        payload["run_id"] = run_id
        payload["max_refinements"] = config.max_refinements
        payload["pending_feedback"] = _is_pending(session, config.max_refinements)
        return _json_response(payload)

    @app.get("/api/feedback/pending")
    def pending_feedback():
        items = []
        for run_id in store.run_ids():
            config = store.config_for(run_id)
            for session in store.load_sessions(run_id):
                if not _is_pending(session, config.max_refinements):
                    continue
                last = session.attempts[-1]
                items.append(
                    {
                        "session_id": _session_id(run_id, session.problem.id),
                        "run_id": run_id,
                        "problem_id": session.problem.id,
                        "problem_excerpt": _excerpt(session.problem.statement),
                        "created_at": session.created_at,
                        "attempts_total": len(session.attempts),
                        "max_attempts": config.max_refinements + 1,
                        "attempt_snapshot": _attempt_to_record(last),
                    }
                )
        items.sort(key=lambda item: (item["created_at"], item["session_id"]))
        return _json_response(items)

    @app.post("/api/sessions/{session_id}/refine")
    def refine(session_id: str, request: RefineRequest):
        run_id, _, problem_id = session_id.partition(":")
        if not problem_id:
            return _error_response(404, "session id must be <run_id>:<problem_id>")
        try:
            config = store.config_for(run_id)
        except UnknownRun:
            return _error_response(404, f"unknown run {run_id}")

        with _lock_for(session_id):
            replay = _find_event(run_id, request.feedback_id)
            if replay is not None:
                return _json_response(replay["result"], status_code=202)

            try:
                session = store.load_session(run_id, problem_id)
            except (UnknownRun, UnknownSession):
                return _error_response(404, f"unknown session {session_id}")

            if session.verdict == "solved":
                return _error_response(409, "session already solved")
            if session.verdict in ("unsolved", "error") or (
                session.refinements_used >= config.max_refinements
            ):
                return _error_response(409, "refinement cap reached")

            try:
                ref = _build_refinement(request)
            except ValueError as exc:
                return _error_response(422, str(exc))

            last_parsed = session.attempts[-1].parsed if session.attempts else None
            if ref.kind == "flag_subproblem":
                known = {sp.index for sp in (last_parsed.subproblems if last_parsed else ())}
                unknown = [i for i in ref.flagged_indices if i not in known]
                if unknown:
                    return _error_response(
                        422, f"unknown subproblem index {unknown[0]}"
                    )

            gateway = _gateway_for(store, run_id, config, session)
            try:
                session = apply_refinement(session, ref, config, gateway)
            except UnknownSubproblemIndex as exc:
                return _error_response(422, str(exc))

            # Durability before acknowledgement: the session record hits
            # disk before the UI ever sees the new attempt.
            store.persist_session(run_id, session)
            result = _session_summary(run_id, session)
            store.append_event(
                run_id,
                {
                    "event": "refinement_submitted",
                    "feedback_id": request.feedback_id,
                    "session_id": session_id,
                    "kind": ref.kind,
                    "flagged_indices": list(ref.flagged_indices),
                    "message": ref.message,
                    "result": result,
                },
            )
            return _json_response(result, status_code=202)

    @app.get("/api/health")
    def health():
        probe = probe_interpreter()
        return _json_response({"status": "ok", "interpreter_available": probe.available})

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="console")

    return app


def _build_refinement(request: RefineRequest) -> RefinementPrompt:
    if request.kind == "check_calculations":
        return RefinementPrompt.check_calculations()
    if request.kind == "flag_subproblem":
        if not request.flagged_indices:
            raise ValueError("flag_subproblem requires flagged_indices")
        return RefinementPrompt.flag_subproblem(tuple(request.flagged_indices))
    if request.kind == "custom":
        if not (request.message or "").strip():
            raise ValueError("custom feedback requires a message")
        return RefinementPrompt.custom(request.message.strip())
    raise ValueError(f"unknown refinement kind {request.kind!r}")


def _gateway_for(store: RunStore, run_id: str, config, session: Session):
    if config.backend.kind == "mock":
        book = store.mock_book_for(run_id)
        if book is None:
            raise StorageError("mock run has no script book")
        # Each prior attempt consumed one scripted completion.
        return book.gateway_for(session.problem.id, skip=len(session.attempts))
    return HttpGateway(config.backend)


def serve(run_dir: str, bind: str = DEFAULT_BIND, static_dir: str | None = None):
    """Run the review service until interrupted."""
    import uvicorn

    host, _, port_text = bind.partition(":")
    port = int(port_text or "8077")
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.bind((host, port))
    except OSError as exc:
        raise BindError(f"cannot bind {bind}: {exc}") from exc
    finally:
        probe.close()

    app = create_app(run_dir, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
