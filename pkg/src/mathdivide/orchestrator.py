"""The pipeline state machine.

One session drives one problem through: render prompt, get a completion,
parse it (strict grammar first, prose salvage second), solve subproblems
in dependency order with both the sandboxed code path and the expression
oracle, compose the final answer, compare against gold, and loop through
refinement prompts up to the configured cap. Batch mode runs sessions on
a worker pool and aggregates a report.

The gold answer is compared only harness-side; it never appears in any
prompt.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable

from . import reporting
from .dataset import Corpus, Problem
from .llm_gateway import BackendConfig, ChatTurn, GatewayError
from .prompting import (
    FORMAT_REPAIR_MESSAGE,
    RefinementPrompt,
    render_initial_prompt,
    render_refinement_prompt,
)
from .response_parser import ParseError, StructuredSolution, parse_solution, fallback_final_answer
from .sandbox_executor import ExecLimits, ExecutionResult, execute_snippet, probe_interpreter
from . import algebra

DEFAULT_MAX_REFINEMENTS = 3
ANSWER_REL_TOLERANCE = Decimal("1e-6")
CROSS_CHECK_TOLERANCE = Decimal("1e-9")

COMPARISON_MATCH = "match"
COMPARISON_MISMATCH = "mismatch"
COMPARISON_NO_ANSWER = "no_answer"

VERDICT_SOLVED = "solved"
VERDICT_UNSOLVED = "unsolved"
VERDICT_ERROR = "error"
VERDICT_PENDING = "pending"  # interactive session parked for human feedback


@dataclass(frozen=True)
class RunConfig:
    run_id: str
    backend: BackendConfig
    template_id: str = "mathdivide_v1"
    max_refinements: int = DEFAULT_MAX_REFINEMENTS
    mode: str = "auto"  # auto | interactive
    workers: int = 4
    interpreter: str = "python3"
    exec_limits: ExecLimits = ExecLimits()
    no_exec: bool = False
    dataset_path: str = ""
    offset: int = 0
    limit: int | None = None
    mock_script_path: str | None = None

    def __post_init__(self):
        if self.mode not in ("auto", "interactive"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.max_refinements < 0:
            raise ValueError("max_refinements must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class SubproblemOutcome:
    index: int
    exec_result: ExecutionResult | None
    oracle_value: Decimal | None
    oracle_error: str | None
    resolved_value: Decimal | None
    cross_check: str  # agree | disagree | exec_only | oracle_only | neither


@dataclass(frozen=True)
class Attempt:
    turn_index: int
    prompt_sent: str
    raw_response: str
    parsed: StructuredSolution | None
    parse_error: str | None
    computed: dict[int, SubproblemOutcome]
    composed_answer: Decimal | None
    comparison: str
    flags: tuple[str, ...] = ()


@dataclass
class Session:
    problem: Problem
    attempts: list[Attempt] = field(default_factory=list)
    refinements: list[RefinementPrompt] = field(default_factory=list)
    verdict: str = VERDICT_PENDING
    mode: str = "auto"
    error_detail: str | None = None
    created_at: str = ""

    @property
    def refinements_used(self) -> int:
        return len(self.refinements)

    @property
    def terminal(self) -> bool:
        return self.verdict in (VERDICT_SOLVED, VERDICT_UNSOLVED, VERDICT_ERROR)


FeedbackSource = Callable[[Session, Attempt], RefinementPrompt | None]


def answers_match(s: Decimal, z: Decimal) -> bool:
    """Composed answer vs gold, within 1e-6 relative (floored at 1 absolute)."""
    return abs(s - z) <= ANSWER_REL_TOLERANCE * max(Decimal(1), abs(z))


def _values_agree(a: Decimal, b: Decimal) -> bool:
    return abs(a - b) <= max(CROSS_CHECK_TOLERANCE, CROSS_CHECK_TOLERANCE * abs(b))


def exec_enabled(config: RunConfig) -> bool:
    if config.no_exec:
        return False
    return probe_interpreter(config.interpreter).available


def _resolve_bindings(
    sp, computed: dict[int, SubproblemOutcome]
) -> dict[str, Decimal] | None:
    env: dict[str, Decimal] = {}
    for name, value in sp.bindings:
        if value.literal is not None:
            env[name] = value.literal
        else:
            outcome = computed.get(value.ref)
            if outcome is None or outcome.resolved_value is None:
                return None
            env[name] = outcome.resolved_value
    return env


def _solve_one(sp, env: dict[str, Decimal] | None, config: RunConfig, run_exec: bool) -> SubproblemOutcome:
    if env is None:
        # An upstream dependency failed to resolve; nothing to compute with.
        return SubproblemOutcome(sp.index, None, None, "unresolved dependency", None, "neither")

    oracle_value: Decimal | None = None
    oracle_error: str | None = None
    try:
        oracle_value = algebra.eval_expr(algebra.parse_expr(sp.expression_src), env)
    except algebra.AlgebraError as exc:
        oracle_error = str(exc)

    exec_result: ExecutionResult | None = None
    if run_exec:
        exec_result = execute_snippet(
            sp.code, env, limits=config.exec_limits, interpreter=config.interpreter
        )
        if exec_result.status == "interpreter_missing":
            exec_result = None

    exec_value = exec_result.value if exec_result else None
    if exec_value is not None and oracle_value is not None:
        cross = "agree" if _values_agree(exec_value, oracle_value) else "disagree"
    elif exec_value is not None:
        cross = "exec_only"
    elif oracle_value is not None:
        cross = "oracle_only"
    else:
        cross = "neither"

    resolved = exec_value if exec_value is not None else oracle_value
    return SubproblemOutcome(sp.index, exec_result, oracle_value, oracle_error, resolved, cross)


def solve_subproblems(
    solution: StructuredSolution,
    config: RunConfig,
    run_exec: bool,
    order: list[int] | None = None,
) -> dict[int, SubproblemOutcome]:
    """Evaluate every subproblem, dependencies first.

    ``order`` overrides the default index order for testing; it must be a
    permutation that respects the dependency edges.
    """
    by_index = {sp.index: sp for sp in solution.subproblems}
    sequence = order if order is not None else sorted(by_index)
    if sorted(sequence) != sorted(by_index):
        raise ValueError("order must cover every subproblem exactly once")
    computed: dict[int, SubproblemOutcome] = {}
    for index in sequence:
        sp = by_index[index]
        if any(dep not in computed for dep in sp.depends_on):
            raise ValueError(f"subproblem {index} evaluated before its dependencies")
        computed[index] = _solve_one(sp, _resolve_bindings(sp, computed), config, run_exec)
    return computed


def _compose(
    solution: StructuredSolution, computed: dict[int, SubproblemOutcome]
) -> tuple[Decimal | None, tuple[str, ...]]:
    flags: list[str] = []
    if solution.subproblems:
        depended = {d for sp in solution.subproblems for d in sp.depends_on}
        sinks = [sp.index for sp in solution.subproblems if sp.index not in depended]
        if len(sinks) > 1:
            flags.append("ambiguous_sinks")
        target = max(sinks)
        resolved_indices = [i for i in sorted(computed) if computed[i].resolved_value is not None]
        if resolved_indices:
            chosen = target if target in resolved_indices else resolved_indices[-1]
            if chosen != target:
                flags.append("sink_unresolved")
            value = computed[chosen].resolved_value
            claimed = solution.final_answer_claimed
            if claimed is not None and not answers_match(claimed, value):
                flags.append("composition_conflict")
            return value, tuple(flags)
    if solution.final_answer_claimed is not None:
        return solution.final_answer_claimed, tuple(flags)
    return None, tuple(flags)


def compose_final(
    solution: StructuredSolution, computed: dict[int, SubproblemOutcome]
) -> Decimal | None:
    """Pick the final answer: computed values outrank the model's claim."""
    value, _ = _compose(solution, computed)
    return value


def build_attempt(
    turn_index: int,
    prompt_sent: str,
    raw_response: str,
    problem: Problem,
    config: RunConfig,
    run_exec: bool,
) -> Attempt:
    parsed: StructuredSolution | None = None
    parse_error: str | None = None
    flags: list[str] = []
    try:
        parsed = parse_solution(raw_response)
    except ParseError as exc:
        parse_error = f"{type(exc).__name__}: {exc}"
        salvaged = fallback_final_answer(raw_response)
        if salvaged is not None:
            parsed = StructuredSolution((), salvaged, raw_response)
            flags.append("fallback_parse")

    computed: dict[int, SubproblemOutcome] = {}
    composed: Decimal | None = None
    if parsed is not None:
        if parsed.subproblems:
            computed = solve_subproblems(parsed, config, run_exec)
        composed, compose_flags = _compose(parsed, computed)
        flags.extend(compose_flags)

    if composed is None:
        comparison = COMPARISON_NO_ANSWER
    elif answers_match(composed, problem.gold_value):
        comparison = COMPARISON_MATCH
    else:
        comparison = COMPARISON_MISMATCH

    return Attempt(
        turn_index=turn_index,
        prompt_sent=prompt_sent,
        raw_response=raw_response,
        parsed=parsed,
        parse_error=parse_error,
        computed=computed,
        composed_answer=composed,
        comparison=comparison,
        flags=tuple(flags),
    )


def auto_feedback(last: Attempt) -> RefinementPrompt:
    """Synthesize the refinement a reviewer would send for this attempt.

    Priority: components whose two evaluation routes disagree (or whose
    code failed outright) get flagged; an unparseable response gets the
    format-repair nudge; otherwise a clean-but-wrong answer gets the
    canonical calculation check.
    """
    if last.comparison == COMPARISON_MATCH:
        raise ValueError("no feedback needed for a matching attempt")
    suspect = sorted(
        o.index
        for o in last.computed.values()
        if o.cross_check == "disagree"
        or (o.exec_result is not None and o.exec_result.status != "ok")
    )
    if suspect:
        return RefinementPrompt.flag_subproblem(suspect)
    if last.parse_error is not None:
        return RefinementPrompt.custom(FORMAT_REPAIR_MESSAGE)
    return RefinementPrompt.check_calculations()


def _history_from_session(session: Session) -> list[ChatTurn]:
    history: list[ChatTurn] = []
    for attempt in session.attempts:
        history.append(ChatTurn("user", attempt.prompt_sent))
        history.append(ChatTurn("assistant", attempt.raw_response))
    return history


def _advance(session: Session, config: RunConfig) -> bool:
    """Set the verdict after an attempt; True while the loop may continue."""
    last = session.attempts[-1]
    if last.comparison == COMPARISON_MATCH:
        session.verdict = VERDICT_SOLVED
        return False
    if session.refinements_used >= config.max_refinements:
        session.verdict = VERDICT_UNSOLVED
        return False
    session.verdict = VERDICT_PENDING
    return True


def run_session(
    problem: Problem,
    config: RunConfig,
    gateway,
    feedback_source: FeedbackSource | None,
) -> Session:
    """Run one problem to a verdict, or park it awaiting human feedback.

    ``feedback_source`` returning a prompt keeps the loop going; None (or
    a None return) leaves the session pending for the review service to
    resume. Transport failures become an error verdict, never exceptions.
    """
    session = Session(
        problem=problem,
        mode=config.mode,
        created_at=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    )
    run_exec = exec_enabled(config)
    bundle = render_initial_prompt(problem, config.template_id)
    prompt = bundle.rendered_text
    history: list[ChatTurn] = []

    while True:
        history.append(ChatTurn("user", prompt))
        try:
            completion = gateway.complete(history)
        except GatewayError as exc:
            session.verdict = VERDICT_ERROR
            session.error_detail = f"{type(exc).__name__}: {exc}"
            return session
        attempt = build_attempt(
            len(session.attempts), prompt, completion.content, problem, config, run_exec
        )
        session.attempts.append(attempt)
        history.append(ChatTurn("assistant", completion.content))

        if not _advance(session, config):
            return session
        if feedback_source is None:
            return session  # parked for interactive feedback
        ref = feedback_source(session, attempt)
        if ref is None:
            if session.mode == "auto":
                session.verdict = VERDICT_UNSOLVED
            return session
        session.refinements.append(ref)
        prompt = render_refinement_prompt(ref, attempt.parsed)


def apply_refinement(session: Session, ref: RefinementPrompt, config: RunConfig, gateway) -> Session:
    """Resume a parked session with one human-chosen refinement."""
    if session.terminal:
        raise ValueError("session is already terminal")
    if session.refinements_used >= config.max_refinements:
        raise ValueError("refinement cap reached")
    last = session.attempts[-1]
    prompt = render_refinement_prompt(ref, last.parsed)
    history = _history_from_session(session)
    history.append(ChatTurn("user", prompt))
    session.refinements.append(ref)
    try:
        completion = gateway.complete(history)
    except GatewayError as exc:
        session.verdict = VERDICT_ERROR
        session.error_detail = f"{type(exc).__name__}: {exc}"
        return session
    attempt = build_attempt(
        len(session.attempts), prompt, completion.content, session.problem, config,
        exec_enabled(config),
    )
    session.attempts.append(attempt)
    _advance(session, config)
    return session


def _auto_source(session: Session, last: Attempt) -> RefinementPrompt | None:
    return auto_feedback(last)


def run_batch(
    corpus: Corpus,
    config: RunConfig,
    gateway_provider: Callable[[Problem], object],
    on_session: Callable[[Session], None] | None = None,
):
    """Run every problem in the corpus and aggregate a report.

    Sessions are independent; auto mode fans them out over a worker pool,
    interactive mode runs initial attempts sequentially and parks each
    mismatch for the review console. ``on_session`` (typically the
    persistence hook) fires as each session finishes, in corpus order.
    """
    from concurrent.futures import ThreadPoolExecutor

    if not len(corpus):
        raise ValueError("corpus is empty")

    feedback = _auto_source if config.mode == "auto" else None
    workers = config.workers if config.mode == "auto" else 1
    started = time.monotonic()

    def _one(problem: Problem) -> Session:
        return run_session(problem, config, gateway_provider(problem), feedback)

    if workers == 1:
        sessions = [_one(p) for p in corpus.problems]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            sessions = list(pool.map(_one, corpus.problems))

    if on_session:
        for session in sessions:
            on_session(session)

    return reporting.build_report(
        run_id=config.run_id,
        config_snapshot=config_snapshot(config),
        sessions=sessions,
        oracle_only=not exec_enabled(config),
        wall_time=time.monotonic() - started,
    )


def config_snapshot(config: RunConfig) -> dict:
    """JSON-ready snapshot of the run configuration."""
    return {
        "run_id": config.run_id,
        "backend": {
            "kind": config.backend.kind,
            "base_url": config.backend.base_url,
            "model": config.backend.model,
            "timeout": config.backend.timeout,
            "max_retries": config.backend.max_retries,
            "temperature": config.backend.temperature,
        },
        "template_id": config.template_id,
        "max_refinements": config.max_refinements,
        "mode": config.mode,
        "workers": config.workers,
        "interpreter": config.interpreter,
        "exec_timeout": config.exec_limits.timeout,
        "exec_memory_bytes": config.exec_limits.memory_bytes,
        "no_exec": config.no_exec,
        "dataset_path": config.dataset_path,
        "offset": config.offset,
        "limit": config.limit,
        "mock_script_path": config.mock_script_path,
    }


def config_from_snapshot(snapshot: dict) -> RunConfig:
    backend = snapshot.get("backend", {})
    return RunConfig(
        run_id=snapshot["run_id"],
        backend=BackendConfig(
            kind=backend.get("kind", "mock"),
            base_url=backend.get("base_url", ""),
            model=backend.get("model", ""),
            timeout=backend.get("timeout", 60.0),
            max_retries=backend.get("max_retries", 2),
            temperature=backend.get("temperature", 0.0),
        ),
        template_id=snapshot.get("template_id", "mathdivide_v1"),
        max_refinements=snapshot.get("max_refinements", DEFAULT_MAX_REFINEMENTS),
        mode=snapshot.get("mode", "auto"),
        workers=snapshot.get("workers", 4),
        interpreter=snapshot.get("interpreter", "python3"),
        exec_limits=ExecLimits(
            timeout=snapshot.get("exec_timeout", 5.0),
            memory_bytes=snapshot.get("exec_memory_bytes", 256 * 1024 * 1024),
        ),
        no_exec=snapshot.get("no_exec", False),
        dataset_path=snapshot.get("dataset_path", ""),
        offset=snapshot.get("offset", 0),
        limit=snapshot.get("limit"),
        mock_script_path=snapshot.get("mock_script_path"),
    )
