"""On-disk run storage.

A run is a plain directory: ``run.json`` (config snapshot and metadata),
``sessions/<problem_id>.json`` (one canonical-JSON record per session),
and an append-only ``events.jsonl``. No database: a run is a few hundred
small files that diff cleanly and can be inspected by hand.

Session writes are atomic (temp file + rename) and canonical (sorted
keys, fixed separators), so persisting the same state twice produces
identical bytes.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from pathlib import Path

from .canon import canonical_json, decimal_from_json, decimal_to_json
from .dataset import Problem
from .llm_gateway import MockScriptBook
from .orchestrator import (
    Attempt,
    RunConfig,
    Session,
    SubproblemOutcome,
    config_from_snapshot,
    config_snapshot,
)
from .prompting import RefinementPrompt
from .reporting import RunReport, build_report
from .response_parser import (
    CodeSnippet,
    NumberOrRef,
    StructuredSolution,
    Subproblem,
)
from .sandbox_executor import ExecutionResult


class StorageError(Exception):
    pass


class UnknownRun(StorageError):
    pass


class UnknownSession(StorageError):
    pass


# --- record conversion -------------------------------------------------

def _solution_to_record(solution: StructuredSolution) -> dict:
    return {
        "subproblems": [
            {
                "index": sp.index,
                "description": sp.description,
                "expression": sp.expression_src,
                "bindings": [
                    {
                        "name": name,
                        "literal": decimal_to_json(value.literal),
                        "ref": value.ref,
                    }
                    for name, value in sp.bindings
                ],
                "depends_on": list(sp.depends_on),
                "claimed_value": decimal_to_json(sp.claimed_value),
                "code": {
                    "language_tag": sp.code.language_tag,
                    "source": sp.code.source,
                    "entry_function": sp.code.entry_function,
                    "parameters": list(sp.code.parameters),
                },
            }
            for sp in solution.subproblems
        ],
        "final_answer_claimed": decimal_to_json(solution.final_answer_claimed),
        "raw_text": solution.raw_text,
    }


def _solution_from_record(record: dict) -> StructuredSolution:
    subproblems = []
    for sp in record["subproblems"]:
        bindings = tuple(
            (
                b["name"],
                NumberOrRef(literal=decimal_from_json(b["literal"]), ref=b["ref"]),
            )
            for b in sp["bindings"]
        )
        code = CodeSnippet(
            language_tag=sp["code"]["language_tag"],
            source=sp["code"]["source"],
            entry_function=sp["code"]["entry_function"],
            parameters=tuple(sp["code"]["parameters"]),
        )
        subproblems.append(
            Subproblem(
                index=sp["index"],
                description=sp["description"],
                expression_src=sp["expression"],
                code=code,
                bindings=bindings,
                depends_on=tuple(sp["depends_on"]),
                claimed_value=decimal_from_json(sp["claimed_value"]),
            )
        )
    return StructuredSolution(
        subproblems=tuple(subproblems),
        final_answer_claimed=decimal_from_json(record["final_answer_claimed"]),
        raw_text=record.get("raw_text", ""),
    )


def _exec_to_record(result: ExecutionResult | None) -> dict | None:
    if result is None:
        return None
    return {
        "status": result.status,
        "value": decimal_to_json(result.value),
        "stdout_tail": result.stdout_tail,
        "stderr_tail": result.stderr_tail,
        "duration": result.duration,
    }


def _exec_from_record(record: dict | None) -> ExecutionResult | None:
    if record is None:
        return None
    return ExecutionResult(
        status=record["status"],
        value=decimal_from_json(record["value"]),
        stdout_tail=record["stdout_tail"],
        stderr_tail=record["stderr_tail"],
        duration=record["duration"],
    )


def _outcome_to_record(outcome: SubproblemOutcome) -> dict:
    return {
        "index": outcome.index,
        "exec": _exec_to_record(outcome.exec_result),
        "oracle_value": decimal_to_json(outcome.oracle_value),
        "oracle_error": outcome.oracle_error,
        "resolved_value": decimal_to_json(outcome.resolved_value),
        "cross_check": outcome.cross_check,
    }


def _outcome_from_record(record: dict) -> SubproblemOutcome:
    return SubproblemOutcome(
        index=record["index"],
        exec_result=_exec_from_record(record["exec"]),
        oracle_value=decimal_from_json(record["oracle_value"]),
        oracle_error=record["oracle_error"],
        resolved_value=decimal_from_json(record["resolved_value"]),
        cross_check=record["cross_check"],
    )


def _attempt_to_record(attempt: Attempt) -> dict:
    return {
        "turn_index": attempt.turn_index,
        "prompt_sent": attempt.prompt_sent,
        "raw_response": attempt.raw_response,
        "parsed": _solution_to_record(attempt.parsed) if attempt.parsed else None,
        "parse_error": attempt.parse_error,
        "computed": {
            str(index): _outcome_to_record(outcome)
            for index, outcome in sorted(attempt.computed.items())
        },
        "composed_answer": decimal_to_json(attempt.composed_answer),
        "comparison": attempt.comparison,
        "flags": list(attempt.flags),
    }


def _attempt_from_record(record: dict) -> Attempt:
    return Attempt(
        turn_index=record["turn_index"],
        prompt_sent=record["prompt_sent"],
        raw_response=record["raw_response"],
        parsed=_solution_from_record(record["parsed"]) if record["parsed"] else None,
        parse_error=record["parse_error"],
        computed={
            int(index): _outcome_from_record(outcome)
            for index, outcome in record["computed"].items()
        },
        composed_answer=decimal_from_json(record["composed_answer"]),
        comparison=record["comparison"],
        flags=tuple(record.get("flags", ())),
    )


def _refinement_to_record(ref: RefinementPrompt) -> dict:
    return {
        "kind": ref.kind,
        "flagged_indices": list(ref.flagged_indices),
        "message": ref.message,
    }


def _refinement_from_record(record: dict) -> RefinementPrompt:
    return RefinementPrompt(
        kind=record["kind"],
        flagged_indices=tuple(record["flagged_indices"]),
        message=record["message"],
    )


def session_to_record(session: Session) -> dict:
    return {
        "problem": {
            "id": session.problem.id,
            "statement": session.problem.statement,
            "gold_raw": session.problem.gold_raw,
            "gold_value": decimal_to_json(session.problem.gold_value),
        },
        "attempts": [_attempt_to_record(a) for a in session.attempts],
        "refinements": [_refinement_to_record(r) for r in session.refinements],
        "verdict": session.verdict,
        "refinements_used": session.refinements_used,
        "mode": session.mode,
        "error_detail": session.error_detail,
        "created_at": session.created_at,
    }


def session_from_record(record: dict) -> Session:
    problem = Problem(
        id=record["problem"]["id"],
        statement=record["problem"]["statement"],
        gold_raw=record["problem"]["gold_raw"],
        gold_value=decimal_from_json(record["problem"]["gold_value"]),
    )
    return Session(
        problem=problem,
        attempts=[_attempt_from_record(a) for a in record["attempts"]],
        refinements=[_refinement_from_record(r) for r in record["refinements"]],
        verdict=record["verdict"],
        mode=record["mode"],
        error_detail=record["error_detail"],
        created_at=record.get("created_at", ""),
    )


# --- run directory layout ----------------------------------------------

def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise StorageError(f"cannot write {path}: {exc}") from exc


class RunStore:
    """All reads and writes for one directory of runs."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    # A directory is a run if it holds run.json; the root itself may be
    # a single run, or a parent containing many.
    def run_dirs(self) -> list[Path]:
        if (self.root / "run.json").exists():
            return [self.root]
        if not self.root.exists():
            return []
        return sorted(
            (d for d in self.root.iterdir() if d.is_dir() and (d / "run.json").exists()),
            key=lambda d: d.name,
        )

    def run_ids(self) -> list[str]:
        return [self.run_meta_for_dir(d)["run_id"] for d in self.run_dirs()]

    def run_dir(self, run_id: str) -> Path:
        for d in self.run_dirs():
            if self.run_meta_for_dir(d)["run_id"] == run_id:
                return d
        raise UnknownRun(run_id)

    @staticmethod
    def run_meta_for_dir(d: Path) -> dict:
        try:
            with open(d / "run.json", encoding="utf-8") as fh:
                return json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise StorageError(f"unreadable run.json in {d}: {exc}") from exc

    def create_run(self, config: RunConfig, run_dir: Path | None = None) -> Path:
        d = run_dir if run_dir is not None else self.root / config.run_id
        meta = {
            "run_id": config.run_id,
            "config_snapshot": config_snapshot(config),
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        _atomic_write(d / "run.json", canonical_json(meta))
        (d / "sessions").mkdir(parents=True, exist_ok=True)
        self.append_event(config.run_id, {"event": "run_created", "run_id": config.run_id})
        return d

    def persist_session(self, run_id: str, session: Session):
        d = self.run_dir(run_id)
        record = session_to_record(session)
        _atomic_write(d / "sessions" / f"{session.problem.id}.json", canonical_json(record))

    def load_session(self, run_id: str, problem_id: str) -> Session:
        d = self.run_dir(run_id)
        path = d / "sessions" / f"{problem_id}.json"
        if not path.exists():
            raise UnknownSession(f"{run_id}:{problem_id}")
        with open(path, encoding="utf-8") as fh:
            return session_from_record(json.load(fh))

    def load_sessions(self, run_id: str) -> list[Session]:
        d = self.run_dir(run_id)
        sessions_dir = d / "sessions"
        if not sessions_dir.exists():
            return []
        sessions = []
        for path in sorted(sessions_dir.glob("*.json")):
            with open(path, encoding="utf-8") as fh:
                sessions.append(session_from_record(json.load(fh)))
        return sessions

    def append_event(self, run_id: str, event: dict):
        d = self.run_dir(run_id)
        payload = dict(event)
        payload.setdefault("ts", time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()))
        line = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        with open(d / "events.jsonl", "a", encoding="utf-8") as fh:
            fh.write(line + "\n")

    def report(self, run_id: str) -> RunReport:
        """Recompute the report from the persisted session files."""
        d = self.run_dir(run_id)
        meta = self.run_meta_for_dir(d)
        sessions = self.load_sessions(run_id)
        snapshot = meta.get("config_snapshot", {})
        oracle_only = bool(snapshot.get("no_exec", False))
        return build_report(
            run_id=run_id,
            config_snapshot=snapshot,
            sessions=sessions,
            oracle_only=oracle_only,
            wall_time=0.0,
        )

    def config_for(self, run_id: str) -> RunConfig:
        meta = self.run_meta_for_dir(self.run_dir(run_id))
        return config_from_snapshot(meta["config_snapshot"])

    def mock_book_for(self, run_id: str) -> MockScriptBook | None:
        config = self.config_for(run_id)
        if config.backend.kind != "mock" or not config.mock_script_path:
            return None
        return MockScriptBook.load(config.mock_script_path)


def persist_session(run_dir: str | Path, session: Session):
    """Write one session record under an existing run directory."""
    d = Path(run_dir)
    record = session_to_record(session)
    _atomic_write(d / "sessions" / f"{session.problem.id}.json", canonical_json(record))
