"""Chat-completion gateway.

One interface over three backends: OpenAI-compatible HTTP, Ollama HTTP,
and a deterministic scripted mock for tests. HTTP calls retry transport
failures and retryable status codes (429 and 5xx) with exponential
backoff; other 4xx responses fail immediately. Streaming is disabled
everywhere because the parser consumes complete documents.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field

import httpx

API_KEY_ENV = "MATHDIVIDE_API_KEY"
DEFAULT_TIMEOUT = 60.0
DEFAULT_IN_FLIGHT_CAP = 4
RETRYABLE_STATUS = frozenset({429} | set(range(500, 600)))


class GatewayError(Exception):
    pass


class Timeout(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class ApiError(GatewayError):
    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body[:200]


class RetriesExhausted(GatewayError):
    def __init__(self, attempts: int, last: Exception):
        super().__init__(f"gave up after {attempts} attempts: {last}")
        self.attempts = attempts
        self.last = last


class MockScriptError(GatewayError):
    """The scripted mock ran out of steps or a matcher did not apply."""


@dataclass(frozen=True)
class ChatTurn:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError("user/assistant turns must have content")


@dataclass(frozen=True)
class BackendConfig:
    kind: str  # openai_compatible | ollama | mock
    base_url: str = ""
    model: str = ""
    timeout: float = DEFAULT_TIMEOUT
    max_retries: int = 2
    temperature: float = 0.0
    retry_backoff: float = 0.25  # seconds; doubles per retry

    def __post_init__(self):
        if self.kind not in ("openai_compatible", "ollama", "mock"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind != "mock":
            if not self.base_url:
                raise ValueError("base_url required for HTTP backends")
            if not self.model:
                raise ValueError("model required for HTTP backends")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")


@dataclass(frozen=True)
class CompletionResult:
    content: str
    latency: float
    backend_meta: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class MockStep:
    """One scripted exchange: matcher is "any" or a substring of the last user turn."""

    match: str
    response: str


def estimate_tokens(text: str) -> int:
    """Deterministic upper-bound token estimate: ceil(len/3)."""
    return math.ceil(len(text) / 3)


def _validate_history(history: list[ChatTurn]):
    if not history:
        raise ValueError("history must be non-empty")
    if history[-1].role != "user":
        raise ValueError("last turn must be from the user")


class MockGateway:
    """Deterministic scripted backend; steps are consumed sequentially."""

    def __init__(self, steps: list[MockStep] | tuple[MockStep, ...]):
        self._steps = deque(steps)

    def complete(self, history: list[ChatTurn]) -> CompletionResult:
        _validate_history(history)
        if not self._steps:
            raise MockScriptError("mock script exhausted")
        step = self._steps.popleft()
        if step.match != "any" and step.match not in history[-1].content:
            raise MockScriptError(
                f"mock script expected {step.match!r} in the last user turn"
            )
        return CompletionResult(content=step.response, latency=0.0, backend_meta={"backend": "mock"})


class HttpGateway:
    """Shared HTTP backend with a bounded number of in-flight requests."""

    def __init__(self, config: BackendConfig, in_flight_cap: int = DEFAULT_IN_FLIGHT_CAP):
        if config.kind == "mock":
            raise ValueError("use MockGateway for the mock backend")
        self.config = config
        self._slots = threading.BoundedSemaphore(in_flight_cap)

    def _request_spec(self, history: list[ChatTurn]) -> tuple[str, dict, dict]:
        messages = [{"role": t.role, "content": t.content} for t in history]
        if self.config.kind == "openai_compatible":
            url = self.config.base_url.rstrip("/") + "/v1/chat/completions"
            payload = {
                "model": self.config.model,
                "messages": messages,
                "temperature": self.config.temperature,
            }
            headers = {}
            api_key = os.environ.get(API_KEY_ENV, "")
            if api_key:
                headers["Authorization"] = f"Bearer {api_key}"
            return url, payload, headers
        url = self.config.base_url.rstrip("/") + "/api/chat"
        payload = {
            "model": self.config.model,
            "messages": messages,
            "stream": False,
            "options": {"temperature": self.config.temperature},
        }
        return url, payload, {}

    def _extract_content(self, data: dict) -> tuple[str, dict[str, str]]:
        meta: dict[str, str] = {}
        if "model" in data:
            meta["model"] = str(data["model"])
        usage = data.get("usage")
        if isinstance(usage, dict):
            for key in ("prompt_tokens", "completion_tokens", "total_tokens"):
                if key in usage:
                    meta[key] = str(usage[key])
        try:
            if self.config.kind == "openai_compatible":
                return data["choices"][0]["message"]["content"], meta
            return data["message"]["content"], meta
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc

    def complete(self, history: list[ChatTurn]) -> CompletionResult:
        _validate_history(history)
        url, payload, headers = self._request_spec(history)
        attempts = 1 + self.config.max_retries
        last_error: Exception | None = None
        started = time.monotonic()
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.config.retry_backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    response = httpx.post(
                        url, json=payload, headers=headers, timeout=self.config.timeout
                    )
            except httpx.TimeoutException as exc:
                last_error = Timeout(str(exc))
                continue
            except httpx.HTTPError as exc:
                last_error = TransportError(str(exc))
                continue
            if response.status_code in RETRYABLE_STATUS:
                last_error = ApiError(response.status_code, response.text)
                continue
            if response.status_code >= 400:
                raise ApiError(response.status_code, response.text)
            try:
                data = response.json()
            except json.JSONDecodeError as exc:
                raise TransportError(f"response is not JSON: {exc}") from exc
            content, meta = self._extract_content(data)
            return CompletionResult(
                content=content,
                latency=time.monotonic() - started,
                backend_meta=meta,
            )
        assert last_error is not None
        if self.config.max_retries == 0:
            raise last_error
        raise RetriesExhausted(attempts, last_error)


Gateway = MockGateway | HttpGateway


def complete(
    config: BackendConfig,
    history: list[ChatTurn],
    mock_steps: list[MockStep] | None = None,
) -> CompletionResult:
    """One-shot completion against a fresh gateway.

    For the mock backend the script starts at its head on every call;
    multi-turn scripted dialogues should hold a MockGateway instance so
    steps are consumed across turns.
    """
    if config.kind == "mock":
        return MockGateway(mock_steps or []).complete(history)
    return HttpGateway(config).complete(history)


class MockScriptBook:
    """Per-problem mock scripts, loadable from a JSON file.

    File shape: {"scripts": {"<problem_id>": [{"match": ..., "response": ...}]},
    "default": [...]}. Each session gets its own copy, so consumption in
    one session never affects another.
    """

    def __init__(self, scripts: dict[str, list[MockStep]], default: list[MockStep] | None = None):
        self._scripts = {k: list(v) for k, v in scripts.items()}
        self._default = list(default or [])

    @classmethod
    def load(cls, path: str) -> "MockScriptBook":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        scripts = {
            pid: [MockStep(match=s.get("match", "any"), response=s["response"]) for s in steps]
            for pid, steps in data.get("scripts", {}).items()
        }
        default = [
            MockStep(match=s.get("match", "any"), response=s["response"])
            for s in data.get("default", [])
        ]
        return cls(scripts, default)

    def steps_for(self, problem_id: str) -> list[MockStep]:
        return list(self._scripts.get(problem_id, self._default))

    def gateway_for(self, problem_id: str, skip: int = 0) -> MockGateway:
        return MockGateway(self.steps_for(problem_id)[skip:])
