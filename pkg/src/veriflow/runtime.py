"""Workflow execution engine.

Runs a workflow DAG under one of three modes:

* ``no_verify`` — plain dataflow execution.
* ``sequential`` — verified nodes block their descendants until the verifier
  returns; a revision marks the node failed and completes it with the
  corrected output before anything downstream starts.
* ``speculative`` — descendants may start inside a verifier's latency window
  using the unverified output; if the verifier keeps the output the
  speculative work is committed, otherwise it is invalidated, charged as
  wasted cost, and re-executed against the corrected output.

Per node (and per attempt, after an invalidation) every state change goes
through a small finite-state machine, so any externally observed history is a
path in the transition table by construction.

The default clock is virtual: executor and verifier results are computed
eagerly when work is launched, and a discrete-event heap advances simulated
time (ties pop in submit order). Same inputs and seed give byte-identical
traces. The wall clock runs the same bookkeeping over a thread pool with
measured latencies; it is best-effort and its speculation windows come from
online estimates rather than exact values.
"""

from __future__ import annotations

import heapq
import threading
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from queue import Queue
from typing import Any, Callable, Mapping, Protocol

from .costs import CostConfig, CostEntry, CostLedger, gpu_cost, tally_call
from .executors import ExecRequest, Executor, build_prompt, gather_upstream
from .graph import TaskNode, WorkflowGraph
from .placement import PlacementPlan
from .selector import SelectorPolicy, TabularPolicy
from .similarity import RollbackDecision, TaskCategory, decide_rollback
from .speculation import NodeCostEstimate, SpeculationPlan, plan_speculation
from .verifiers import (
    ExecutorPool,
    OutcomeVerdict,
    VerifierKind,
    VerifierOutcome,
    VerifierTask,
    run_verifier,
)


class EngineError(Exception):
    pass


class IllegalTransition(EngineError):
    """An FSM input was applied in a state that does not accept it."""


class NodeState(str, Enum):
    WAITING = "waiting"
    RUNNING = "running"
    VERIFYING = "verifying"
    COMPLETED = "completed"
    FAILED = "failed"


class FsmInput(str, Enum):
    RUN = "run"
    VERIFY = "verify"
    NO_VERIFY = "no-verify"
    SUCCESS = "success"
    FAIL = "fail"
    RERUN = "rerun"


TRANSITIONS: Mapping[tuple[NodeState, FsmInput], NodeState] = {
    (NodeState.WAITING, FsmInput.RUN): NodeState.RUNNING,
    (NodeState.RUNNING, FsmInput.VERIFY): NodeState.VERIFYING,
    (NodeState.RUNNING, FsmInput.NO_VERIFY): NodeState.COMPLETED,
    (NodeState.VERIFYING, FsmInput.SUCCESS): NodeState.COMPLETED,
    (NodeState.VERIFYING, FsmInput.FAIL): NodeState.FAILED,
    (NodeState.FAILED, FsmInput.RERUN): NodeState.COMPLETED,
}


def transition(state: NodeState, fsm_input: FsmInput) -> NodeState:
    """Look up the FSM table; anything not listed is illegal."""
    try:
        return TRANSITIONS[(state, fsm_input)]
    except KeyError:
        raise IllegalTransition(
            f"({state.value}, {fsm_input.value}) is not a legal transition"
        ) from None


class ExecutionMode(str, Enum):
    NO_VERIFY = "no_verify"
    SEQUENTIAL = "sequential"
    SPECULATIVE = "speculative"


class SelectionStrategy(Protocol):
    def choose(self, node: TaskNode, prompt: str) -> VerifierKind: ...


@dataclass(frozen=True)
class StaticSelection:
    kind: VerifierKind

    def choose(self, node: TaskNode, prompt: str) -> VerifierKind:
        return self.kind


class TabularSelection:
    def __init__(self, policy: TabularPolicy | None = None) -> None:
        self._policy = policy or TabularPolicy()

    def choose(self, node: TaskNode, prompt: str) -> VerifierKind:
        return self._policy.select(node.category)


class PolicySelection:
    """Selection through a learned policy's argmax."""

    def __init__(self, policy: SelectorPolicy) -> None:
        self._policy = policy

    def choose(self, node: TaskNode, prompt: str) -> VerifierKind:
        _, kind = self._policy.select(prompt)
        return kind


class VerifierRunner(Protocol):
    def run(self, kind: VerifierKind, task: VerifierTask, parallel: bool) -> VerifierOutcome: ...


class PipelineVerifierRunner:
    """Default runner: executes the real verification pipelines."""

    def __init__(self, pool: ExecutorPool) -> None:
        self._pool = pool

    def run(self, kind: VerifierKind, task: VerifierTask, parallel: bool) -> VerifierOutcome:
        return run_verifier(kind, task, self._pool, parallel=parallel)


class LatencyEstimator:
    """Per-key latency estimates seeded from known values, updated by EMA."""

    def __init__(
        self,
        initial: Mapping[str, float] | None = None,
        default: float = 0.0,
        alpha: float = 0.5,
    ) -> None:
        self._estimates = dict(initial or {})
        self._default = default
        self._alpha = alpha

    def estimate(self, key: str) -> float:
        return self._estimates.get(key, self._default)

    def observe(self, key: str, latency: float) -> None:
        if key in self._estimates:
            self._estimates[key] = self._alpha * latency + (1 - self._alpha) * self._estimates[key]
        else:
            self._estimates[key] = latency


@dataclass
class NodeRecord:
    """Mutable execution state of one node.

    ``attempt`` increments when speculative work is invalidated; each attempt
    owns a fresh FSM incarnation whose history is recorded separately in
    ``histories[attempt]`` as (from, input, to) triples.
    """

    node_id: str
    attempt: int = 0
    state: NodeState = NodeState.WAITING
    output: str | None = None
    prompt: str | None = None
    context: str = ""
    spec_deps: set[str] = field(default_factory=set)
    started_speculatively: bool = False
    committed_event_sent: bool = False
    verifier_kind: VerifierKind | None = None
    verifier_outcome: VerifierOutcome | None = None
    cost_entries: list[CostEntry] = field(default_factory=list)
    histories: list[list[tuple[str, str, str]]] = field(default_factory=lambda: [[]])

    def apply(self, fsm_input: FsmInput) -> NodeState:
        new_state = transition(self.state, fsm_input)
        self.histories[self.attempt].append((self.state.value, fsm_input.value, new_state.value))
        self.state = new_state
        return new_state

    def invalidate(self) -> None:
        """Throw this attempt away: charge its costs as wasted and start a
        fresh FSM incarnation."""
        for entry in self.cost_entries:
            entry.wasted = True
        self.cost_entries = []
        self.attempt += 1
        self.histories.append([])
        self.state = NodeState.WAITING
        self.output = None
        self.prompt = None
        self.context = ""
        self.spec_deps = set()
        self.started_speculatively = False
        self.committed_event_sent = False
        self.verifier_kind = None
        self.verifier_outcome = None


@dataclass(frozen=True)
class RollbackEvent:
    failed_node: str
    invalidated: tuple[str, ...]
    corrected_output: str
    timestamp: float


@dataclass
class RunMetrics:
    t_exec: float = 0.0
    t_vrf: float = 0.0
    rollbacks: int = 0
    wasted_cost: float = 0.0
    total_cost: float = 0.0
    final_output: str = ""


@dataclass
class RunResult:
    metrics: RunMetrics
    records: dict[str, NodeRecord]
    trace: list[dict]
    ledger: CostLedger
    plans: list[SpeculationPlan]
    rollback_events: list[RollbackEvent]
    mode: ExecutionMode


@dataclass
class _Window:
    """An open verifier window: closes at ``end``; ``plan`` is None outside
    speculative mode."""

    end: float
    plan: SpeculationPlan | None


class _VirtualRunner:
    """Discrete-event core: work is evaluated eagerly at submit time and its
    completion is scheduled ``latency`` later; ties pop in submit order."""

    def __init__(self) -> None:
        self.now = 0.0
        self._heap: list[tuple[float, int, str, str, int, Any]] = []
        self._seq = 0

    def submit(
        self, kind: str, node_id: str, attempt: int, fn: Callable[[], tuple[Any, float]]
    ) -> None:
        payload, latency = fn()
        heapq.heappush(self._heap, (self.now + latency, self._seq, kind, node_id, attempt, payload))
        self._seq += 1

    def next_event(self) -> tuple[float, str, str, int, Any] | None:
        if not self._heap:
            return None
        t, _, kind, node_id, attempt, payload = heapq.heappop(self._heap)
        self.now = t
        return t, kind, node_id, attempt, payload


class _WallRunner:
    """Thread-pool twin of the virtual runner with measured timestamps."""

    def __init__(self, max_workers: int = 8) -> None:
        self._pool = ThreadPoolExecutor(max_workers=max_workers)
        self._queue: "Queue[tuple[float, str, str, int, Any]]" = Queue()
        self._outstanding = 0
        self._lock = threading.Lock()
        self._t0 = _time.monotonic()
        self.now = 0.0

    def submit(
        self, kind: str, node_id: str, attempt: int, fn: Callable[[], tuple[Any, float]]
    ) -> None:
        with self._lock:
            self._outstanding += 1

        def _task() -> None:
            try:
                payload, _ = fn()
            except Exception as exc:  # re-raised when the event is processed
                payload = exc
            self._queue.put((_time.monotonic() - self._t0, kind, node_id, attempt, payload))

        self._pool.submit(_task)

    def next_event(self) -> tuple[float, str, str, int, Any] | None:
        with self._lock:
            if self._outstanding == 0:
                self._pool.shutdown(wait=False)
                return None
        item = self._queue.get()
        with self._lock:
            self._outstanding -= 1
        self.now = item[0]
        if isinstance(item[4], Exception):
            raise item[4]
        return item


def run_workflow(
    graph: WorkflowGraph,
    executors: Executor | ExecutorPool,
    placement: PlacementPlan | None = None,
    selection: SelectionStrategy | VerifierKind | None = None,
    mode: ExecutionMode = ExecutionMode.SEQUENTIAL,
    *,
    budget: float | None = None,
    match_rate: float = 0.8,
    cost_config: CostConfig | None = None,
    thresholds: Mapping[TaskCategory, float] | None = None,
    rollback_policy: str = "selective",
    verifier_runner: VerifierRunner | None = None,
    latency_estimates: Mapping[str, float] | None = None,
    verifier_latency_estimates: Mapping[str, float] | None = None,
    spec_cost_estimates: Mapping[str, NodeCostEstimate] | None = None,
    clock: str = "virtual",
    seed: int = 0,
) -> RunResult:
    """Execute ``graph`` and return metrics, per-node records, a trace, and
    the cost ledger.

    Args:
        graph: validated workflow DAG.
        executors: the executor (or role pool) running node objectives.
        placement: which nodes carry verifiers; ignored in ``no_verify`` mode.
        selection: verifier choice per verified node — a strategy object, a
            fixed :class:`VerifierKind`, or None for the category table.
        mode: ``no_verify`` | ``sequential`` | ``speculative``.
        budget: speculation budget per verifier window (None = unlimited).
            An over-budget plan only disables speculation at that node.
        match_rate: planning estimate of how often verifiers keep outputs.
        rollback_policy: ``selective`` (similarity-gated keep) or ``always``.
        verifier_runner: override for how verifier outcomes are produced;
            defaults to running the real pipelines against ``executors``.
        latency_estimates / verifier_latency_estimates: seeds for the
            speculation planner (virtual runs know verifier latency exactly).
        spec_cost_estimates: per-node cost estimates for budget checks;
            derived from latency estimates when absent.
        clock: ``virtual`` (deterministic, simulated time) or ``wall``.
        seed: forwarded to runners that expose ``reset(seed)``.

    Metrics: ``t_exec`` is the completion time of the last node execution
    (reruns included); ``t_vrf`` is the completion time of the last event of
    any kind, so it is never smaller than ``t_exec``.
    """
    mode = ExecutionMode(mode)
    if rollback_policy not in ("selective", "always"):
        raise ValueError(f"unknown rollback policy {rollback_policy!r}")
    if clock not in ("virtual", "wall"):
        raise ValueError(f"unknown clock {clock!r}")
    pool = executors if isinstance(executors, ExecutorPool) else ExecutorPool(executors)
    if verifier_runner is None:
        verifier_runner = PipelineVerifierRunner(pool)
    reset = getattr(verifier_runner, "reset", None)
    if callable(reset):
        reset(seed)
    if selection is None:
        selection_strategy: SelectionStrategy = TabularSelection()
    elif isinstance(selection, VerifierKind):
        selection_strategy = StaticSelection(selection)
    else:
        selection_strategy = selection
    cost_config = cost_config or CostConfig()
    verified: frozenset[str] = frozenset()
    if mode is not ExecutionMode.NO_VERIFY and placement is not None:
        verified = frozenset(placement.selected)
    exec_est = LatencyEstimator(latency_estimates)
    vrf_est = LatencyEstimator(verifier_latency_estimates)
    runner: _VirtualRunner | _WallRunner = _VirtualRunner() if clock == "virtual" else _WallRunner()
    virtual = clock == "virtual"

    records = {node.id: NodeRecord(node_id=node.id) for node in graph.nodes}
    ledger = CostLedger()
    trace: list[dict] = []
    plans: list[SpeculationPlan] = []
    rollback_events: list[RollbackEvent] = []
    windows: dict[str, _Window] = {}
    metrics = RunMetrics()

    def emit(t: float, node_id: str, event: str, detail: dict) -> None:
        trace.append({"t": t, "node": node_id, "event": event, "detail": detail})

    def emit_transition(t: float, record: NodeRecord, extra: dict | None = None) -> None:
        src, fsm_input, dst = record.histories[record.attempt][-1]
        detail = {"from": src, "input": fsm_input, "to": dst, "attempt": record.attempt}
        if extra:
            detail.update(extra)
        emit(t, record.node_id, "state-transition", detail)

    def outputs_view() -> dict[str, str]:
        return {
            nid: r.output
            for nid, r in records.items()
            if r.output is not None and r.state in (NodeState.VERIFYING, NodeState.COMPLETED)
        }

    def spec_estimates_for(node_ids: list[str]) -> dict[str, NodeCostEstimate]:
        if spec_cost_estimates is not None:
            return {
                nid: spec_cost_estimates.get(nid, NodeCostEstimate(exec_cost=0.0))
                for nid in node_ids
            }
        # Rough plan-time proxy: tokens a call would push at this latency.
        token_rate = cost_config.throughput_max * cost_config.cluster_utilization_avg
        estimates: dict[str, NodeCostEstimate] = {}
        for nid in node_ids:
            exec_cost = gpu_cost(cost_config, "executor", int(exec_est.estimate(nid) * token_rate))
            vrf_cost = 0.0
            if nid in verified:
                vrf_cost = gpu_cost(cost_config, "executor", int(vrf_est.estimate(nid) * token_rate))
            estimates[nid] = NodeCostEstimate(exec_cost=exec_cost, verifier_cost=vrf_cost)
        return estimates

    def try_start(node_id: str, t: float) -> None:
        record = records[node_id]
        if record.state is not NodeState.WAITING:
            return
        parent_records = [records[p] for p in graph.parents(node_id)]
        for parent in parent_records:
            if parent.output is None or parent.state not in (
                NodeState.VERIFYING,
                NodeState.COMPLETED,
            ):
                return
        deps: set[str] = set()
        for parent in parent_records:
            deps |= parent.spec_deps
            if parent.state is NodeState.VERIFYING:
                deps.add(parent.node_id)
        if deps:
            if mode is not ExecutionMode.SPECULATIVE:
                return
            for dep in deps:
                window = windows.get(dep)
                # Start strictly inside every open window, and only under an
                # approved plan: an unaffordable window blocks its children
                # until the verdict lands.
                if window is None or window.plan is None or not window.plan.approved:
                    return
                if not (t < window.end):
                    return
        speculative = bool(deps)
        upstream = gather_upstream(graph, node_id, outputs_view())
        prompt = build_prompt(graph.node(node_id), upstream)
        record.prompt = prompt
        record.context = "\n\n".join(f"Output of {pid}:\n{text}" for pid, text in upstream)
        record.spec_deps = set(deps)
        record.started_speculatively = speculative
        record.apply(FsmInput.RUN)
        extra: dict = {"speculative": speculative}
        if speculative:
            extra["deps"] = sorted(deps)
        emit_transition(t, record, extra)
        attempt = record.attempt
        executor = pool.get("executor")

        def _execute() -> tuple[Any, float]:
            result = executor.execute(ExecRequest(node_id=node_id, prompt=prompt))
            if virtual:
                entry = tally_call(
                    "exec",
                    node_id,
                    attempt,
                    "executor",
                    result.prompt_tokens,
                    result.output_tokens,
                    cost_config,
                )
                record.cost_entries.append(ledger.add(entry))
            return result, result.latency

        runner.submit("exec", node_id, attempt, _execute)

    def maybe_commit(record: NodeRecord, t: float) -> None:
        if (
            record.started_speculatively
            and not record.spec_deps
            and record.state is NodeState.COMPLETED
            and not record.committed_event_sent
        ):
            record.committed_event_sent = True
            emit(t, record.node_id, "commit", {"attempt": record.attempt})

    def resolve_commit(node_id: str, t: float) -> None:
        """``node_id`` is now trustworthy: clear it from speculative
        dependency sets, surface commits, and wake up its children."""
        for record in records.values():
            if node_id in record.spec_deps:
                record.spec_deps.discard(node_id)
                maybe_commit(record, t)
        for child in graph.children(node_id):
            try_start(child, t)

    def start_verification(record: NodeRecord, t: float) -> None:
        node = graph.node(record.node_id)
        kind = selection_strategy.choose(node, record.prompt or node.objective)
        record.verifier_kind = kind
        task = VerifierTask(
            node_id=record.node_id,
            question=record.prompt or node.objective,
            original=record.output or "",
            context=record.context,
        )
        attempt = record.attempt

        if virtual:
            outcome = verifier_runner.run(kind, task, False)
            for call in outcome.calls:
                entry = tally_call(
                    "verifier",
                    record.node_id,
                    attempt,
                    call.role,
                    call.result.prompt_tokens,
                    call.result.output_tokens,
                    cost_config,
                )
                record.cost_entries.append(ledger.add(entry))
            window_latency = outcome.latency
            vrf_est.observe(record.node_id, outcome.latency)

            def _verify() -> tuple[Any, float]:
                return outcome, window_latency

        else:
            window_latency = vrf_est.estimate(record.node_id)

            def _verify() -> tuple[Any, float]:
                wall_outcome = verifier_runner.run(kind, task, True)
                return wall_outcome, wall_outcome.latency

        plan: SpeculationPlan | None = None
        if mode is ExecutionMode.SPECULATIVE:
            descendants = sorted(graph.descendants(record.node_id))
            plan = plan_speculation(
                graph,
                record.node_id,
                {nid: exec_est.estimate(nid) for nid in descendants},
                window_latency,
                match_rate,
                spec_estimates_for(descendants),
                budget,
            )
            plans.append(plan)
            emit(
                t,
                record.node_id,
                "spec-start",
                {
                    "attempt": attempt,
                    "eligible": sorted(plan.eligible),
                    "expected_cost": plan.expected_cost,
                    "budget": budget,
                    "approved": plan.approved,
                    "window_end": t + window_latency,
                },
            )
        windows[record.node_id] = _Window(end=t + window_latency, plan=plan)
        runner.submit("vrf", record.node_id, attempt, _verify)
        if plan is not None and plan.approved:
            for child in graph.children(record.node_id):
                try_start(child, t)

    def handle_exec_done(t: float, node_id: str, attempt: int, result: Any) -> None:
        record = records[node_id]
        if record.attempt != attempt or record.state is not NodeState.RUNNING:
            if not virtual:
                # the thread did real work even though the attempt is stale
                entry = tally_call(
                    "exec",
                    node_id,
                    attempt,
                    "executor",
                    result.prompt_tokens,
                    result.output_tokens,
                    cost_config,
                )
                entry.wasted = True
                ledger.add(entry)
            return
        if not virtual:
            entry = tally_call(
                "exec",
                node_id,
                attempt,
                "executor",
                result.prompt_tokens,
                result.output_tokens,
                cost_config,
            )
            record.cost_entries.append(ledger.add(entry))
        metrics.t_exec = max(metrics.t_exec, t)
        metrics.t_vrf = max(metrics.t_vrf, t)
        exec_est.observe(node_id, result.latency)
        record.output = result.output
        if node_id in verified:
            record.apply(FsmInput.VERIFY)
            emit_transition(t, record)
            start_verification(record, t)
        else:
            record.apply(FsmInput.NO_VERIFY)
            emit_transition(t, record)
            maybe_commit(record, t)
            for child in graph.children(node_id):
                try_start(child, t)

    def handle_vrf_done(t: float, node_id: str, attempt: int, outcome: VerifierOutcome) -> None:
        record = records[node_id]
        if record.attempt != attempt or record.state is not NodeState.VERIFYING:
            if not virtual:
                for call in outcome.calls:
                    entry = tally_call(
                        "verifier",
                        node_id,
                        attempt,
                        call.role,
                        call.result.prompt_tokens,
                        call.result.output_tokens,
                        cost_config,
                    )
                    entry.wasted = True
                    ledger.add(entry)
            return
        if not virtual:
            for call in outcome.calls:
                entry = tally_call(
                    "verifier",
                    node_id,
                    attempt,
                    call.role,
                    call.result.prompt_tokens,
                    call.result.output_tokens,
                    cost_config,
                )
                record.cost_entries.append(ledger.add(entry))
            vrf_est.observe(node_id, outcome.latency)
        metrics.t_vrf = max(metrics.t_vrf, t)
        record.verifier_outcome = outcome
        windows.pop(node_id, None)
        if outcome.verdict is OutcomeVerdict.KEPT:
            record.apply(FsmInput.SUCCESS)
            emit_transition(t, record)
            maybe_commit(record, t)
            resolve_commit(node_id, t)
            return
        # the verifier revised the output
        node = graph.node(node_id)
        if rollback_policy == "always":
            decision = RollbackDecision.ROLLBACK
        else:
            decision = decide_rollback(
                node.category, record.output or "", outcome.revised_output, thresholds
            )
        if decision is RollbackDecision.KEEP:
            record.output = outcome.revised_output
            record.apply(FsmInput.SUCCESS)
            emit_transition(t, record, {"revision_kept": True})
            maybe_commit(record, t)
            resolve_commit(node_id, t)
            return
        record.apply(FsmInput.FAIL)
        emit_transition(t, record)
        invalidated = sorted(r.node_id for r in records.values() if node_id in r.spec_deps)
        for nid in invalidated:
            windows.pop(nid, None)
            records[nid].invalidate()
        record.output = outcome.revised_output
        record.apply(FsmInput.RERUN)
        emit_transition(t, record)
        metrics.rollbacks += 1
        rollback_events.append(
            RollbackEvent(
                failed_node=node_id,
                invalidated=tuple(invalidated),
                corrected_output=outcome.revised_output,
                timestamp=t,
            )
        )
        emit(
            t,
            node_id,
            "rollback",
            {
                "attempt": record.attempt,
                "invalidated": invalidated,
                "corrected_output": outcome.revised_output,
            },
        )
        resolve_commit(node_id, t)

    for node in graph.nodes:
        try_start(node.id, runner.now)
    while True:
        event = runner.next_event()
        if event is None:
            break
        t, kind, node_id, attempt, payload = event
        if kind == "exec":
            handle_exec_done(t, node_id, attempt, payload)
        else:
            handle_vrf_done(t, node_id, attempt, payload)

    incomplete = [nid for nid, r in records.items() if r.state is not NodeState.COMPLETED]
    if incomplete:
        raise EngineError(f"run ended with incomplete nodes: {sorted(incomplete)}")
    metrics.total_cost = ledger.total
    metrics.wasted_cost = ledger.wasted_total()
    metrics.final_output = records[graph.terminal_id].output or ""
    return RunResult(
        metrics=metrics,
        records=records,
        trace=trace,
        ledger=ledger,
        plans=plans,
        rollback_events=rollback_events,
        mode=mode,
    )
