"""Out-of-process execution of generated code snippets.

Model-generated code is untrusted: it runs under an external interpreter
in its own process group, with a fresh temp working directory, a wiped
environment, CPU/memory/file-size limits, and a hard wall-clock timeout
that kills the whole group. The snippet's entry function is called with
the expression bindings as positional arguments and the return value is
reported on a sentinel-marked stdout line; nothing else the process
prints is trusted.
"""

from __future__ import annotations

import os
import resource
import shutil
import signal
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass
from decimal import Decimal

from .canon import format_decimal
from .dataset import UnparseableNumber, normalize_number
from .response_parser import CodeSnippet

RESULT_SENTINEL = "<<MATHDIVIDE_RESULT>>"
SUPPORTED_LANGUAGE_TAGS = frozenset({"python", "py", ""})
DEFAULT_TIMEOUT = 5.0
DEFAULT_MEMORY_BYTES = 256 * 1024 * 1024
KILL_GRACE_SECONDS = 1.0
_CAPTURE_CAP = 64 * 1024
_TAIL_CAP = 4 * 1024
_FSIZE_CAP = 64 * 1024 * 1024


@dataclass(frozen=True)
class ExecLimits:
    timeout: float = DEFAULT_TIMEOUT
    memory_bytes: int = DEFAULT_MEMORY_BYTES


@dataclass(frozen=True)
class ExecutionResult:
    status: str  # ok | timeout | nonzero_exit | bad_output | interpreter_missing
    value: Decimal | None
    stdout_tail: str
    stderr_tail: str
    duration: float

    def __post_init__(self):
        if (self.value is not None) != (self.status == "ok"):
            raise ValueError("value must be present exactly when status is ok")


@dataclass(frozen=True)
class InterpreterProbe:
    available: bool
    version: str | None = None


_probe_lock = threading.Lock()
_probe_cache: dict[str, InterpreterProbe] = {}
_probe_spawns = 0


def probe_spawn_count() -> int:
    """Number of actual probe subprocess spawns (cache misses)."""
    return _probe_spawns


def reset_probe_cache():
    global _probe_spawns
    with _probe_lock:
        _probe_cache.clear()
        _probe_spawns = 0


def probe_interpreter(interpreter: str = "python3") -> InterpreterProbe:
    """Check that the interpreter can run a trivial print; cached per process."""
    global _probe_spawns
    with _probe_lock:
        if interpreter in _probe_cache:
            return _probe_cache[interpreter]
        _probe_spawns += 1
        resolved = shutil.which(interpreter) or interpreter
        try:
            check = subprocess.run(
                [resolved, "-c", "print('ok')"],
                capture_output=True, text=True, timeout=10,
            )
            version_run = subprocess.run(
                [resolved, "--version"],
                capture_output=True, text=True, timeout=10,
            )
        except (OSError, subprocess.SubprocessError):
            probe = InterpreterProbe(available=False)
        else:
            if check.returncode == 0 and check.stdout.strip() == "ok":
                version = (version_run.stdout or version_run.stderr).strip() or None
                probe = InterpreterProbe(available=True, version=version)
            else:
                probe = InterpreterProbe(available=False)
        _probe_cache[interpreter] = probe
        return probe


def _decimal_literal(value: Decimal) -> str:
    # Rendered into the driver as a plain int or float literal.
    return format_decimal(value)


def _build_driver(snippet: CodeSnippet, args: dict[str, Decimal]) -> str:
    call_args = ", ".join(_decimal_literal(args[name]) for name in snippet.parameters)
    return (
        f"{snippet.source}\n\n"
        "import sys as _md_sys\n"
        f"_md_ret = {snippet.entry_function}({call_args})\n"
        f"_md_sys.stdout.write('\\n{RESULT_SENTINEL}' + repr(_md_ret) + '\\n')\n"
    )


def _tail_of_file(path: str, cap: int = _CAPTURE_CAP) -> str:
    try:
        with open(path, "rb") as fh:
            fh.seek(0, os.SEEK_END)
            size = fh.tell()
            fh.seek(max(0, size - cap))
            return fh.read().decode("utf-8", errors="replace")
    except OSError:
        return ""


def _parse_sentinel(stdout_text: str) -> Decimal | None:
    value = None
    for line in stdout_text.splitlines():
        pos = line.find(RESULT_SENTINEL)
        if pos < 0:
            continue
        payload = line[pos + len(RESULT_SENTINEL):]
        try:
            value = normalize_number(payload)
        except UnparseableNumber:
            value = None
    return value


def execute_snippet(
    snippet: CodeSnippet,
    args: dict[str, Decimal],
    limits: ExecLimits = ExecLimits(),
    interpreter: str = "python3",
) -> ExecutionResult:
    """Run the snippet's entry function on the given bindings, isolated.

    Failures surface through the result status, never as exceptions:
    the process group is killed on timeout, a missing or garbled sentinel
    line is bad_output, and a dead interpreter is interpreter_missing.
    """
    if tuple(args.keys()) != snippet.parameters:
        raise ValueError("args must match snippet parameters in order")
    if snippet.language_tag.lower() not in SUPPORTED_LANGUAGE_TAGS:
        raise ValueError(f"unsupported language tag {snippet.language_tag!r}")

    probe = probe_interpreter(interpreter)
    if not probe.available:
        return ExecutionResult("interpreter_missing", None, "", "", 0.0)
    resolved = shutil.which(interpreter) or interpreter

    workdir = tempfile.mkdtemp(prefix="mathdivide-exec-")
    memory_bytes = limits.memory_bytes

    def _child_setup():
        os.setsid()  # own process group, so the timeout kill reaps descendants
        try:
            resource.setrlimit(resource.RLIMIT_AS, (memory_bytes, memory_bytes))
        except (ValueError, OSError):
            pass
        try:
            resource.setrlimit(resource.RLIMIT_FSIZE, (_FSIZE_CAP, _FSIZE_CAP))
        except (ValueError, OSError):
            pass

    try:
        driver_path = os.path.join(workdir, "driver.py")
        with open(driver_path, "w", encoding="utf-8") as fh:
            fh.write(_build_driver(snippet, args))
        stdout_path = os.path.join(workdir, "stdout.txt")
        stderr_path = os.path.join(workdir, "stderr.txt")

        started = time.monotonic()
        try:
            with open(stdout_path, "wb") as out_fh, open(stderr_path, "wb") as err_fh:
                proc = subprocess.Popen(
                    [resolved, driver_path],
                    cwd=workdir,
                    env={"PATH": "/usr/bin:/bin", "PYTHONIOENCODING": "utf-8"},
                    stdin=subprocess.DEVNULL,
                    stdout=out_fh,
                    stderr=err_fh,
                    preexec_fn=_child_setup,
                )
        except OSError:
            return ExecutionResult("interpreter_missing", None, "", "", 0.0)

        timed_out = False
        try:
            proc.wait(timeout=limits.timeout)
        except subprocess.TimeoutExpired:
            timed_out = True
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            proc.wait()
        duration = time.monotonic() - started

        stdout_text = _tail_of_file(stdout_path)
        stderr_text = _tail_of_file(stderr_path)
        stdout_tail = stdout_text[-_TAIL_CAP:]
        stderr_tail = stderr_text[-_TAIL_CAP:]

        if timed_out:
            return ExecutionResult("timeout", None, stdout_tail, stderr_tail, duration)
        if proc.returncode != 0:
            return ExecutionResult("nonzero_exit", None, stdout_tail, stderr_tail, duration)
        value = _parse_sentinel(stdout_text)
        if value is None:
            return ExecutionResult("bad_output", None, stdout_tail, stderr_tail, duration)
        return ExecutionResult("ok", value, stdout_tail, stderr_tail, duration)
    finally:
        shutil.rmtree(workdir, ignore_errors=True)
