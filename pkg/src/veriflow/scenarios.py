"""Self-contained runnable scenarios: a workflow plus scripted executors and
scripted verifier behaviors, loadable from bundled package data or a JSON
file.

Scenarios make runs reproducible without any model endpoint: node outputs
come from a fixed table (so reruns after a rollback are deterministic), and
verifier verdicts are scripted per node — ``keep``, ``revise``, or
``stochastic`` with a seeded match rate.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .executors import FunctionExecutor, ExecResult
from .graph import WorkflowGraph, load_workflow, topo_profile
from .placement import PlacementPlan, place_verifiers
from .runtime import ExecutionMode, RunResult, StaticSelection, run_workflow
from .verifiers import (
    ExecutorPool,
    OutcomeVerdict,
    VerifierCall,
    VerifierKind,
    VerifierFamily,
    VerifierOutcome,
    VerifierTask,
)


class UnknownScenario(KeyError):
    pass


BUNDLED_SCENARIOS = ("chain3", "chain3_rollback", "diamond")

_DEFAULT_BEHAVIOR: Mapping[str, Any] = {"action": "keep", "latency": 0.0}


class ScriptedVerifierRunner:
    """Verifier runner with per-node scripted behaviors.

    Behavior dicts:

    * ``{"action": "keep", "latency": s}`` — verdict Kept.
    * ``{"action": "revise", "latency": s, "revised_output": text}`` —
      verdict Revised with the given correction (default
      ``"corrected:" + original``).
    * ``{"action": "stochastic", "match_rate": p, "latency": s, ...}`` —
      keeps with probability ``p`` from a seeded stream; call
      :meth:`reset` to rewind the stream (the engine does this per run).
    """

    def __init__(
        self,
        behaviors: Mapping[str, Mapping[str, Any]] | None = None,
        default: Mapping[str, Any] | None = None,
        seed: int = 0,
        match_rate: float | None = None,
    ) -> None:
        self._behaviors = dict(behaviors or {})
        self._default = dict(default) if default is not None else dict(_DEFAULT_BEHAVIOR)
        self._rng = random.Random(seed)
        self.latency_scale = 1.0
        # When set, every node keeps with this probability, overriding the
        # scripted actions — lets a sweep drive the match rate as one knob.
        self.match_rate = match_rate
        self.runs: list[tuple[str, str]] = []

    def reset(self, seed: int) -> None:
        self._rng = random.Random(seed)
        self.runs = []

    def run(self, kind: VerifierKind, task: VerifierTask, parallel: bool) -> VerifierOutcome:
        behavior = self._behaviors.get(task.node_id, self._default)
        action = behavior.get("action", "keep")
        if self.match_rate is not None:
            action = "keep" if self._rng.random() < self.match_rate else "revise"
        elif action == "stochastic":
            action = "keep" if self._rng.random() < float(behavior.get("match_rate", 1.0)) else "revise"
        if action == "keep":
            revised = task.original
        elif action == "revise":
            revised = str(behavior.get("revised_output", f"corrected:{task.original}"))
        else:
            raise ValueError(f"unknown scripted verifier action {action!r}")
        latency = float(behavior.get("latency", 0.0)) * self.latency_scale
        result = ExecResult(
            output=revised,
            latency=latency,
            prompt_tokens=int(behavior.get("prompt_tokens", 0)),
            output_tokens=int(behavior.get("output_tokens", 0)),
            provider="scripted-verifier",
        )
        verdict = OutcomeVerdict.KEPT if revised == task.original else OutcomeVerdict.REVISED
        self.runs.append((task.node_id, verdict.value))
        return VerifierOutcome(
            kind=kind,
            verdict=verdict,
            revised_output=revised,
            calls=(VerifierCall("judge", result),),
            latency=latency,
            detail={"scripted": True},
        )


@dataclass
class Scenario:
    """A parsed scenario document plus factories for its fresh run state."""

    name: str
    graph: WorkflowGraph
    outputs: Mapping[str, str]
    exec_latencies: Mapping[str, float]
    default_exec_latency: float
    verifier_behaviors: Mapping[str, Mapping[str, Any]]
    verifier_default: Mapping[str, Any] | None
    placement_ids: tuple[str, ...] | None
    placement_k: int | None
    latency_estimates: Mapping[str, float]
    verifier_latency_estimates: Mapping[str, float]
    defaults: Mapping[str, Any] = field(default_factory=dict)
    description: str = ""

    def build_executor(self) -> FunctionExecutor:
        outputs = dict(self.outputs)
        latencies = dict(self.exec_latencies)
        default_latency = self.default_exec_latency

        def _fn(node_id: str, prompt: str) -> str:
            try:
                return outputs[node_id]
            except KeyError:
                raise KeyError(f"scenario has no output for node {node_id!r}") from None

        def _latency(node_id: str, prompt: str) -> float:
            return latencies.get(node_id, default_latency)

        return FunctionExecutor(_fn, latency=_latency, provider="scenario")

    def build_runner(
        self, latency_scale: float = 1.0, match_rate: float | None = None
    ) -> ScriptedVerifierRunner:
        runner = ScriptedVerifierRunner(
            self.verifier_behaviors, self.verifier_default, match_rate=match_rate
        )
        runner.latency_scale = latency_scale
        return runner

    def placement(self, k: int | None = None) -> PlacementPlan:
        if k is None and self.placement_ids is not None:
            return PlacementPlan(selected=self.placement_ids, budget=len(self.placement_ids))
        budget = k if k is not None else (self.placement_k or 0)
        return place_verifiers(self.graph, topo_profile(self.graph), budget)


def _parse_scenario(raw: Mapping[str, Any], name: str) -> Scenario:
    graph = load_workflow(raw["workflow"])
    executor = raw.get("executor", {})
    latency_field = executor.get("latency", 0.0)
    if isinstance(latency_field, Mapping):
        default_latency = float(latency_field.get("default", 0.0))
        exec_latencies = {
            str(k): float(v) for k, v in latency_field.items() if k != "default"
        }
    else:
        default_latency = float(latency_field)
        exec_latencies = {}
    verifier = raw.get("verifier", {})
    placement = raw.get("placement")
    placement_ids: tuple[str, ...] | None = None
    placement_k: int | None = None
    if isinstance(placement, list):
        placement_ids = tuple(str(p) for p in placement)
    elif placement is not None:
        placement_k = int(placement)
    estimates = {
        str(k): float(v) for k, v in raw.get("latency_estimates", {}).items()
    }
    if not estimates:
        estimates = {node.id: exec_latencies.get(node.id, default_latency) for node in graph.nodes}
    vrf_estimates = {
        str(k): float(v) for k, v in raw.get("verifier_latency_estimates", {}).items()
    }
    if not vrf_estimates:
        vrf_estimates = {
            str(node_id): float(behavior.get("latency", 0.0))
            for node_id, behavior in verifier.get("behaviors", {}).items()
        }
    return Scenario(
        name=str(raw.get("name", name)),
        graph=graph,
        outputs={str(k): str(v) for k, v in executor.get("outputs", {}).items()},
        exec_latencies=exec_latencies,
        default_exec_latency=default_latency,
        verifier_behaviors=verifier.get("behaviors", {}),
        verifier_default=verifier.get("default"),
        placement_ids=placement_ids,
        placement_k=placement_k,
        latency_estimates=estimates,
        verifier_latency_estimates=vrf_estimates,
        defaults=raw.get("defaults", {}),
        description=str(raw.get("description", "")),
    )


def load_scenario(name_or_path: str) -> Scenario:
    """Load a bundled scenario by name or any scenario JSON by path."""
    path = Path(name_or_path)
    if path.suffix == ".json" or path.exists():
        raw = json.loads(path.read_text("utf-8"))
        return _parse_scenario(raw, path.stem)
    if name_or_path in BUNDLED_SCENARIOS:
        text = (
            resources.files("veriflow")
            .joinpath("data")
            .joinpath("scenarios")
            .joinpath(f"{name_or_path}.json")
            .read_text("utf-8")
        )
        return _parse_scenario(json.loads(text), name_or_path)
    raise UnknownScenario(
        f"{name_or_path!r} is neither a scenario file nor one of {BUNDLED_SCENARIOS}"
    )


def run_scenario(
    scenario: Scenario,
    mode: ExecutionMode | str | None = None,
    *,
    budget: float | None | str = "default",
    k: int | None = None,
    clock: str = "virtual",
    seed: int | None = None,
    match_rate: float | None = None,
    rollback_policy: str = "selective",
    verifier_latency_scale: float = 1.0,
    stochastic_match_rate: float | None = None,
) -> RunResult:
    """Run a scenario with fresh executor and verifier state.

    ``budget`` defaults to the scenario's own default; pass None explicitly
    for an unlimited budget. ``stochastic_match_rate`` overrides the scripted
    verdicts with seeded keep/revise draws at that rate.
    """
    defaults = scenario.defaults
    resolved_mode = ExecutionMode(mode or defaults.get("mode", "sequential"))
    resolved_budget = defaults.get("budget") if budget == "default" else budget
    resolved_seed = int(defaults.get("seed", 0)) if seed is None else seed
    resolved_match = (
        float(defaults.get("match_rate", 0.8)) if match_rate is None else match_rate
    )
    executor = scenario.build_executor()
    runner = scenario.build_runner(
        latency_scale=verifier_latency_scale, match_rate=stochastic_match_rate
    )
    vrf_estimates = {
        node_id: latency * verifier_latency_scale
        for node_id, latency in scenario.verifier_latency_estimates.items()
    }
    return run_workflow(
        scenario.graph,
        ExecutorPool(executor),
        placement=scenario.placement(k),
        selection=StaticSelection(VerifierKind(VerifierFamily.SELF_REFINE)),
        mode=resolved_mode,
        budget=None if resolved_budget is None else float(resolved_budget),
        match_rate=resolved_match,
        rollback_policy=rollback_policy,
        verifier_runner=runner,
        latency_estimates=scenario.latency_estimates,
        verifier_latency_estimates=vrf_estimates,
        clock=clock,
        seed=resolved_seed,
    )
