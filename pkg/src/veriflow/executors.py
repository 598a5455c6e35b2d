"""Task executors and prompt assembly.

Three interchangeable executor families sit behind one protocol:

* :class:`HttpExecutor` talks to a chat-completions endpoint.
* :class:`ScriptedExecutor` replays canned outputs keyed by
  ``(node_id, call_index)`` — deterministic fuel for simulations and tests.
* :class:`FunctionExecutor` computes outputs as a pure function of
  ``(node_id, prompt)``, which is how a temperature-0 model behaves; use it
  whenever two schedules must agree byte-for-byte on outputs.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence

import requests

from .graph import TaskNode, WorkflowGraph


class ExecutorError(Exception):
    pass


class ProviderError(ExecutorError):
    """The HTTP provider failed after all retries."""


class ScriptExhausted(ExecutorError):
    """A scripted executor ran out of entries for a node."""


class MissingParentOutput(ExecutorError):
    """Prompt assembly needed an upstream output that does not exist yet."""


@dataclass(frozen=True)
class ExecRequest:
    node_id: str
    prompt: str
    role: str = "executor"
    temperature: float = 0.0
    top_p: float = 1.0

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")


@dataclass(frozen=True)
class ExecResult:
    output: str
    latency: float
    prompt_tokens: int
    output_tokens: int
    provider: str = "executor"


class Executor(Protocol):
    def execute(self, request: ExecRequest) -> ExecResult: ...


def execute(request: ExecRequest, executor: Executor) -> ExecResult:
    """Run one request on one executor handle."""
    return executor.execute(request)


def gather_upstream(
    graph: WorkflowGraph, node_id: str, outputs: Mapping[str, str]
) -> list[tuple[str, str]]:
    """Collect (parent_id, output) pairs for a node, in stored edge order.

    Raises :class:`MissingParentOutput` if any parent has not produced an
    output yet — callers schedule nodes only when this cannot happen, so the
    error indicates a scheduling bug rather than a user mistake.
    """
    gathered = []
    for parent in graph.parents(node_id):
        if parent not in outputs:
            raise MissingParentOutput(f"node {node_id!r} needs output of {parent!r}")
        gathered.append((parent, outputs[parent]))
    return gathered


def build_prompt(node: TaskNode | str, upstream: Sequence[tuple[str, str]]) -> str:
    """Concatenate a node's objective with its upstream context blocks.

    ``node`` may be the node itself or a bare objective string.
    """
    objective = getattr(node, "objective", node)
    parts = [objective]
    for parent_id, text in upstream:
        parts.append(f"Output of {parent_id}:\n{text}")
    return "\n\n".join(parts)


def node_prompt(graph: WorkflowGraph, node_id: str, outputs: Mapping[str, str]) -> str:
    return build_prompt(graph.node(node_id), gather_upstream(graph, node_id, outputs))


@dataclass
class ScriptEntry:
    output: str
    latency: float = 0.0
    prompt_tokens: int = 0
    output_tokens: int = 0


class ScriptedExecutor:
    """Replays a per-node list of :class:`ScriptEntry` in call order.

    Thread-safe: the call counter is guarded so wall-clock runs consume
    entries in a single global order.
    """

    def __init__(
        self, script: Mapping[str, Sequence[ScriptEntry]], provider: str = "script"
    ) -> None:
        self._script = {k: list(v) for k, v in script.items()}
        self._cursor: dict[str, int] = {k: 0 for k in self._script}
        self._lock = threading.Lock()
        self.provider = provider
        self.calls: list[tuple[str, int]] = []

    def execute(self, request: ExecRequest) -> ExecResult:
        with self._lock:
            entries = self._script.get(request.node_id)
            index = self._cursor.get(request.node_id, 0)
            if not entries or index >= len(entries):
                raise ScriptExhausted(
                    f"no scripted entry for node {request.node_id!r} at call index {index}"
                )
            self._cursor[request.node_id] = index + 1
            self.calls.append((request.node_id, index))
            entry = entries[index]
        return ExecResult(
            output=entry.output,
            latency=entry.latency,
            prompt_tokens=entry.prompt_tokens,
            output_tokens=entry.output_tokens,
            provider=self.provider,
        )


class FunctionExecutor:
    """Deterministic executor: output = fn(node_id, prompt).

    Latency is a constant or a (node_id, prompt) -> float callable. Token
    counts default to whitespace token counts of prompt and output.
    """

    def __init__(
        self,
        fn: Callable[[str, str], str],
        latency: float | Callable[[str, str], float] = 0.0,
        provider: str = "function",
    ) -> None:
        self._fn = fn
        self._latency = latency
        self._lock = threading.Lock()
        self.provider = provider
        self.calls: list[str] = []

    def execute(self, request: ExecRequest) -> ExecResult:
        output = self._fn(request.node_id, request.prompt)
        if callable(self._latency):
            latency = self._latency(request.node_id, request.prompt)
        else:
            latency = self._latency
        with self._lock:
            self.calls.append(request.node_id)
        return ExecResult(
            output=output,
            latency=latency,
            prompt_tokens=len(request.prompt.split()),
            output_tokens=len(output.split()),
            provider=self.provider,
        )


API_KEY_ENV = "SHERLOCK_API_KEY"
CHAT_COMPLETIONS_PATH = "/v1/chat/completions"


@dataclass
class HttpExecutorConfig:
    base_url: str
    model: str
    timeout: float = 120.0
    max_retries: int = 2
    backoff: float = 1.0
    api_key: str | None = None


class HttpExecutor:
    """Chat-completions client with bounded retry.

    POSTs to ``<base_url>/v1/chat/completions``. The API key comes from the
    ``SHERLOCK_API_KEY`` environment variable unless the config carries one
    explicitly.
    """

    def __init__(self, config: HttpExecutorConfig, session: requests.Session | None = None) -> None:
        self._config = config
        self._session = session or requests.Session()

    def execute(self, request: ExecRequest) -> ExecResult:
        cfg = self._config
        url = cfg.base_url.rstrip("/") + CHAT_COMPLETIONS_PATH
        key = cfg.api_key or os.environ.get(API_KEY_ENV, "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {
            "model": cfg.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "top_p": request.top_p,
        }
        last_error: Exception | None = None
        for attempt in range(cfg.max_retries + 1):
            started = time.monotonic()
            try:
                response = self._session.post(url, json=body, headers=headers, timeout=cfg.timeout)
                response.raise_for_status()
                payload = response.json()
                content = payload["choices"][0]["message"]["content"]
                usage = payload.get("usage", {})
                return ExecResult(
                    output=content,
                    latency=time.monotonic() - started,
                    prompt_tokens=int(usage.get("prompt_tokens", 0)),
                    output_tokens=int(usage.get("completion_tokens", 0)),
                    provider=cfg.model,
                )
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                if attempt < cfg.max_retries:
                    time.sleep(cfg.backoff * (2**attempt))
        raise ProviderError(
            f"provider call failed after {cfg.max_retries + 1} attempts: {last_error}"
        ) from last_error


def _echo_fn(node_id: str, prompt: str) -> str:
    # Pass the most recent upstream content through; entry nodes echo their
    # objective. Faults injected upstream therefore propagate to the output.
    marker = "Output of "
    index = prompt.rfind(marker)
    if index == -1:
        return prompt.splitlines()[0]
    block = prompt[index:]
    _, _, rest = block.partition(":\n")
    return rest.split("\n\n")[0] if rest else block


def _digest_fn(node_id: str, prompt: str) -> str:
    import hashlib

    digest = hashlib.blake2b(f"{node_id}|{prompt}".encode("utf-8"), digest_size=8).hexdigest()
    return f"{node_id}:{digest}"


BUILTIN_EXECUTORS: dict[str, Callable[[], FunctionExecutor]] = {
    "echo": lambda: FunctionExecutor(_echo_fn, latency=1.0, provider="echo"),
    "digest": lambda: FunctionExecutor(_digest_fn, latency=1.0, provider="digest"),
}


def make_builtin_executor(name: str) -> FunctionExecutor:
    try:
        factory = BUILTIN_EXECUTORS[name]
    except KeyError:
        raise ExecutorError(f"unknown builtin executor {name!r}") from None
    return factory()
