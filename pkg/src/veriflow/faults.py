"""Fault injection and vulnerability estimation.

Three fault classes model how agentic pipelines actually break, weighted by
their observed frequency in failure studies:

* prompt replacement (0.2863) — the node's directive is swapped out,
* context drop (0.1868) — part or all of the upstream history disappears,
* output replacement (0.5269) — the node's answer is corrupted directly.

A node's vulnerability is the mean final-answer damage over a fault list,
where damage compares the faulted terminal output against the fault-free one
and every downstream node is re-executed so corruption propagates.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Mapping, Protocol, Sequence

from .executors import ExecRequest, Executor, build_prompt, gather_upstream
from .graph import WorkflowGraph
from .prompts import fill, load_prompt
from .verifiers import UnparseableVerdict, Verdict, parse_verdict


class FaultError(Exception):
    pass


class NoUpstreamContext(FaultError):
    """Context-drop faults cannot target a node without parents."""


class FaultClass(str, Enum):
    PROMPT_REPLACEMENT = "prompt_replacement"
    CONTEXT_DROP = "context_drop"
    OUTPUT_REPLACEMENT = "output_replacement"


FaultDistribution = Mapping[FaultClass, float]

#: Observed relative frequencies; they sum to exactly 1.0 and sampling walks
#: the CDF in FaultClass declaration order.
FAULT_FREQUENCIES: FaultDistribution = {
    FaultClass.PROMPT_REPLACEMENT: 0.2863,
    FaultClass.CONTEXT_DROP: 0.1868,
    FaultClass.OUTPUT_REPLACEMENT: 0.5269,
}


def validate_distribution(dist: FaultDistribution) -> FaultDistribution:
    total = 0.0
    for fault_class in FaultClass:
        weight = dist.get(fault_class, 0.0)
        if weight <= 0:
            raise ValueError(f"weight for {fault_class.value} must be positive")
        total += weight
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"fault weights must sum to 1, got {total}")
    return dist


def sample_fault(rng: random.Random, dist: FaultDistribution | None = None) -> FaultClass:
    """Draw a fault class; the CDF is walked in FaultClass declaration order."""
    if dist is None:
        dist = FAULT_FREQUENCIES
    else:
        validate_distribution(dist)
    u = rng.random()
    cumulative = 0.0
    classes = list(FaultClass)
    for fault_class in classes:
        cumulative += dist.get(fault_class, 0.0)
        if u < cumulative:
            return fault_class
    return classes[-1]


@dataclass(frozen=True)
class FaultSpec:
    """One concrete fault: where, what kind, and the payload.

    ``payload`` is replacement text for prompt/output faults and a drop
    fraction in [0, 1] for context drops.
    """

    node_id: str
    fault_class: FaultClass
    payload: str | float

    def __post_init__(self) -> None:
        if self.fault_class is FaultClass.CONTEXT_DROP:
            if not isinstance(self.payload, (int, float)) or not 0.0 <= float(self.payload) <= 1.0:
                raise ValueError("context drop payload must be a fraction in [0, 1]")
        elif not isinstance(self.payload, str):
            raise ValueError(f"{self.fault_class.value} payload must be replacement text")


class Scorer(Protocol):
    def __call__(self, reference: str, candidate: str) -> float: ...


def exact_match_delta(reference: str, candidate: str) -> float:
    """Damage is 0 when the faulted answer matches the clean one, else 1."""
    return 0.0 if reference == candidate else 1.0


class LlmScorer:
    """Equivalence scorer backed by a model call; damage = 1 - correctness."""

    def __init__(self, executor: Executor, role: str = "judge") -> None:
        self._executor = executor
        self._role = role

    def __call__(self, reference: str, candidate: str) -> float:
        prompt = fill(
            load_prompt("scorer"),
            {"GROUND_TRUTH": reference, "PREDICTION": candidate},
        )
        last_error: UnparseableVerdict | None = None
        for _ in range(2):
            result = self._executor.execute(
                ExecRequest(node_id="scorer", prompt=prompt, role=self._role)
            )
            try:
                token = parse_verdict(result.output)
            except UnparseableVerdict as exc:
                last_error = exc
                continue
            if token is Verdict.CORRECT:
                return 0.0
            if token is Verdict.INCORRECT:
                return 1.0
            last_error = UnparseableVerdict(f"scorer answered {token.value}, not Correct/Incorrect")
        raise last_error if last_error is not None else UnparseableVerdict("scorer gave no verdict")


def execute_baseline(graph: WorkflowGraph, executor: Executor) -> dict[str, str]:
    """Fault-free topological execution; returns every node's output."""
    outputs: dict[str, str] = {}
    for node_id in graph.topo_order():
        prompt = build_prompt(graph.node(node_id), gather_upstream(graph, node_id, outputs))
        outputs[node_id] = executor.execute(ExecRequest(node_id=node_id, prompt=prompt)).output
    return outputs


def _execute_node(
    graph: WorkflowGraph,
    executor: Executor,
    node_id: str,
    outputs: Mapping[str, str],
    objective: str | None = None,
    upstream: Sequence[tuple[str, str]] | None = None,
) -> str:
    if objective is None:
        objective = graph.node(node_id).objective
    if upstream is None:
        upstream = gather_upstream(graph, node_id, outputs)
    prompt = build_prompt(objective, upstream)
    return executor.execute(ExecRequest(node_id=node_id, prompt=prompt)).output


def inject_fault(
    graph: WorkflowGraph,
    executor: Executor,
    baseline: Mapping[str, str],
    fault: FaultSpec,
) -> dict[str, str]:
    """Apply one fault at its target node; downstream is left untouched.

    Returns a copy of ``baseline`` where only the target's output reflects
    the fault: prompt replacement re-executes the node with the payload as
    its objective, context drop re-executes it with the earliest ``floor(
    fraction * n)`` upstream entries removed, output replacement substitutes
    the payload directly without re-executing.
    """
    if fault.node_id not in graph:
        raise KeyError(fault.node_id)
    outputs = dict(baseline)
    node_id = fault.node_id
    if fault.fault_class is FaultClass.PROMPT_REPLACEMENT:
        outputs[node_id] = _execute_node(
            graph, executor, node_id, outputs, objective=str(fault.payload)
        )
    elif fault.fault_class is FaultClass.CONTEXT_DROP:
        upstream = gather_upstream(graph, node_id, outputs)
        if not upstream:
            raise NoUpstreamContext(f"node {node_id!r} has no upstream context to drop")
        dropped = math.floor(float(fault.payload) * len(upstream))
        outputs[node_id] = _execute_node(
            graph, executor, node_id, outputs, upstream=upstream[dropped:]
        )
    else:  # output replacement: the node itself is not re-executed
        outputs[node_id] = str(fault.payload)
    return outputs


def run_with_fault(
    graph: WorkflowGraph,
    executor: Executor,
    baseline: Mapping[str, str],
    fault: FaultSpec,
) -> str:
    """Inject one fault and propagate it: every descendant of the target is
    re-executed against the updated outputs. Returns the faulted terminal
    output.

    Requires a deterministic executor (same prompt, same answer) so that the
    only difference from the baseline is the fault itself.
    """
    outputs = inject_fault(graph, executor, baseline, fault)
    position = {nid: i for i, nid in enumerate(graph.topo_order())}
    for descendant in sorted(graph.descendants(fault.node_id), key=position.__getitem__):
        outputs[descendant] = _execute_node(graph, executor, descendant, outputs)
    return outputs[graph.terminal_id]


@dataclass(frozen=True)
class VulnerabilityEstimate:
    node_id: str
    estimate: float
    deltas: tuple[float, ...]


def estimate_vulnerability(
    graph: WorkflowGraph,
    node_id: str,
    faults: Sequence[FaultSpec],
    executor: Executor,
    scorer: Scorer = exact_match_delta,
    baseline: Mapping[str, str] | None = None,
) -> VulnerabilityEstimate:
    """Mean damage of a fault list targeting one node.

    The mean makes the estimate invariant to the order of the fault list.
    """
    if not faults:
        raise ValueError("need at least one fault")
    for fault in faults:
        if fault.node_id != node_id:
            raise ValueError(f"fault targets {fault.node_id!r}, expected {node_id!r}")
    if baseline is None:
        baseline = execute_baseline(graph, executor)
    reference = baseline[graph.terminal_id]
    deltas = tuple(
        scorer(reference, run_with_fault(graph, executor, baseline, fault)) for fault in faults
    )
    return VulnerabilityEstimate(
        node_id=node_id, estimate=sum(deltas) / len(deltas), deltas=deltas
    )


def load_payload_corpus(path: str | None = None) -> list[str]:
    """Read a payload corpus (JSON array of strings); default: the bundled one."""
    if path is None:
        raw = (
            resources.files("veriflow").joinpath("data").joinpath("payloads.json").read_text("utf-8")
        )
    else:
        with open(path, "r", encoding="utf-8") as handle:
            raw = handle.read()
    corpus = json.loads(raw)
    if not isinstance(corpus, list) or not all(isinstance(p, str) for p in corpus):
        raise ValueError("payload corpus must be a JSON array of strings")
    return corpus


@dataclass(frozen=True)
class FaultTrial:
    node_id: str
    fault: FaultSpec
    delta: float


@dataclass(frozen=True)
class VulnerabilityReport:
    per_node: Mapping[str, float]
    trials: tuple[FaultTrial, ...]
    seed: int
    trials_per_node: int

    def to_records(self) -> list[dict]:
        records: list[dict] = [
            {
                "node": t.node_id,
                "class": t.fault.fault_class.value,
                "payload": t.fault.payload,
                "delta": t.delta,
            }
            for t in self.trials
        ]
        records.append(
            {
                "summary": True,
                "per_node": dict(self.per_node),
                "seed": self.seed,
                "trials_per_node": self.trials_per_node,
            }
        )
        return records


def _draw_fault(
    rng: random.Random,
    graph: WorkflowGraph,
    node_id: str,
    corpus: Sequence[str],
    dist: FaultDistribution | None = None,
) -> FaultSpec:
    is_initial = not graph.parents(node_id)
    while True:
        fault_class = sample_fault(rng, dist)
        if fault_class is FaultClass.CONTEXT_DROP and is_initial:
            # No history to drop at an entry node; draw a different class.
            continue
        break
    if fault_class is FaultClass.CONTEXT_DROP:
        # "Partial or full" history loss.
        return FaultSpec(node_id, fault_class, rng.choice([0.5, 1.0]))
    if fault_class is FaultClass.OUTPUT_REPLACEMENT:
        # The empty answer is a legitimate corrupted output.
        return FaultSpec(node_id, fault_class, rng.choice([*corpus, ""]))
    return FaultSpec(node_id, fault_class, rng.choice(list(corpus)))


def run_campaign(
    graph: WorkflowGraph,
    executor: Executor,
    targets: Sequence[str] | None = None,
    trials_per_node: int = 20,
    seed: int = 0,
    payloads: Sequence[str] | None = None,
    scorer: Scorer = exact_match_delta,
    frequencies: FaultDistribution | None = None,
) -> VulnerabilityReport:
    """Estimate per-node vulnerability with randomized fault trials.

    Each trial owns its own RNG stream (``seed + global_trial_index``), so
    reports are reproducible and individual trials can be replayed in
    isolation.
    """
    if targets is None:
        targets = list(graph.topo_order())
    for target in targets:
        if target not in graph:
            raise KeyError(target)
    corpus = list(payloads) if payloads is not None else load_payload_corpus()
    if not corpus:
        raise ValueError("payload corpus is empty")
    if frequencies is not None:
        validate_distribution(frequencies)
    baseline = execute_baseline(graph, executor)
    reference = baseline[graph.terminal_id]
    trials: list[FaultTrial] = []
    per_node: dict[str, float] = {}
    trial_index = 0
    for target in targets:
        deltas: list[float] = []
        for _ in range(trials_per_node):
            rng = random.Random(seed + trial_index)
            trial_index += 1
            fault = _draw_fault(rng, graph, target, corpus, frequencies)
            final = run_with_fault(graph, executor, baseline, fault)
            delta = scorer(reference, final)
            deltas.append(delta)
            trials.append(FaultTrial(node_id=target, fault=fault, delta=delta))
        per_node[target] = sum(deltas) / len(deltas)
    return VulnerabilityReport(
        per_node=per_node,
        trials=tuple(trials),
        seed=seed,
        trials_per_node=trials_per_node,
    )
