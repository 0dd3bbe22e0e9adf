"""Command-line entry points: run a benchmark batch, serve the review
console, or print a stored run's report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dataset import DatasetError, load_corpus
from .llm_gateway import BackendConfig, HttpGateway, MockScriptBook
from .orchestrator import RunConfig, run_batch
from .sandbox_executor import ExecLimits
from .storage import RunStore


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mathdivide")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a benchmark batch")
    run.add_argument("--dataset", required=True, help="JSONL benchmark file")
    run.add_argument("--offset", type=int, default=0)
    run.add_argument("--limit", type=int, default=None)
    run.add_argument("--gold-delimiter", default="####")
    run.add_argument("--backend", default="mock",
                     choices=["openai_compatible", "ollama", "mock"])
    run.add_argument("--base-url", default="")
    run.add_argument("--model", default="")
    run.add_argument("--temperature", type=float, default=0.0)
    run.add_argument("--max-retries", type=int, default=2)
    run.add_argument("--request-timeout", type=float, default=60.0)
    run.add_argument("--mock-script", default=None, help="JSON script book for the mock backend")
    run.add_argument("--template", default="mathdivide_v1",
                     choices=["mathdivide_v1", "baseline_single_shot"])
    run.add_argument("--max-refinements", type=int, default=3)
    run.add_argument("--mode", default="auto", choices=["auto", "interactive"])
    run.add_argument("--workers", type=int, default=4)
    run.add_argument("--interpreter", default="python3")
    run.add_argument("--exec-timeout", type=float, default=5.0)
    run.add_argument("--exec-memory", type=int, default=256, help="MiB")
    run.add_argument("--no-exec", action="store_true",
                     help="skip code execution; rely on the expression oracle")
    run.add_argument("--out", required=True, help="run directory to create")

    serve = sub.add_parser("serve", help="serve the review console and API")
    serve.add_argument("--run-dir", required=True)
    serve.add_argument("--bind", default="127.0.0.1:8077")
    serve.add_argument("--static-dir", default=None,
                       help="console bundle directory (defaults to frontend/dist if present)")

    report = sub.add_parser("report", help="print a stored run's report")
    report.add_argument("--run-dir", required=True)
    report.add_argument("--run-id", default=None)
    return parser


def _cmd_run(args) -> int:
    out_dir = Path(args.out)
    if out_dir.exists() and any(out_dir.iterdir()):
        print(f"error: output directory {out_dir} is not empty", file=sys.stderr)
        return 2

    backend = BackendConfig(
        kind=args.backend,
        base_url=args.base_url,
        model=args.model,
        timeout=args.request_timeout,
        max_retries=args.max_retries,
        temperature=args.temperature,
    )
    config = RunConfig(
        run_id=out_dir.name,
        backend=backend,
        template_id=args.template,
        max_refinements=args.max_refinements,
        mode=args.mode,
        workers=args.workers,
        interpreter=args.interpreter,
        exec_limits=ExecLimits(
            timeout=args.exec_timeout,
            memory_bytes=args.exec_memory * 1024 * 1024,
        ),
        no_exec=args.no_exec,
        dataset_path=args.dataset,
        offset=args.offset,
        limit=args.limit,
        mock_script_path=args.mock_script,
    )

    try:
        corpus = load_corpus(args.dataset, offset=args.offset, limit=args.limit,
                             delimiter=args.gold_delimiter)
    except (DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not len(corpus):
        print("error: selected slice is empty", file=sys.stderr)
        return 2

    if args.backend == "mock":
        if not args.mock_script:
            print("error: --mock-script is required with the mock backend", file=sys.stderr)
            return 2
        book = MockScriptBook.load(args.mock_script)
        gateway_provider = lambda problem: book.gateway_for(problem.id)
    else:
        shared = HttpGateway(backend)
        gateway_provider = lambda problem: shared

    store = RunStore(out_dir.parent if out_dir.parent != Path("") else Path("."))
    store.create_run(config, run_dir=out_dir)

    def _persist(session):
        store.persist_session(config.run_id, session)
        store.append_event(config.run_id, {
            "event": "session_persisted",
            "session_id": f"{config.run_id}:{session.problem.id}",
            "verdict": session.verdict,
        })

    report = run_batch(corpus, config, gateway_provider, on_session=_persist)

    print(json.dumps(report.to_full_dict(), indent=2, sort_keys=True))
    pending = report.totals.get("pending", 0)
    if pending:
        print(
            f"\n{pending} session(s) await feedback; run: mathdivide serve --run-dir {out_dir}",
            file=sys.stderr,
        )
    return 0


def _cmd_serve(args) -> int:
    from .service_api import BindError, serve

    static_dir = args.static_dir
    if static_dir is None:
        default_dist = Path(__file__).resolve().parents[2].parent / "frontend" / "dist"
        if default_dist.is_dir():
            static_dir = str(default_dist)
    try:
        serve(args.run_dir, bind=args.bind, static_dir=static_dir)
    except BindError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _cmd_report(args) -> int:
    store = RunStore(args.run_dir)
    run_ids = store.run_ids()
    if not run_ids:
        print("error: no runs found", file=sys.stderr)
        return 2
    run_id = args.run_id or run_ids[0]
    report = store.report(run_id)
    print(json.dumps(report.to_full_dict(), indent=2, sort_keys=True))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "serve":
        return _cmd_serve(args)
    return _cmd_report(args)


if __name__ == "__main__":
    sys.exit(main())
