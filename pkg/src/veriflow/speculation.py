"""Speculation policy: which descendants fit inside a verifier's window, and
whether the expected cost of running them ahead of the verdict is affordable.

While a node's verifier runs for ``verifier_latency`` seconds, descendants
whose cumulative level-by-level execution time fits strictly inside that
window can run ahead speculatively. Levels are longest-path distances from
the verifying node, and each level contributes the slowest node on it (the
level runs in parallel).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .graph import WorkflowGraph


class BudgetExceeded(Exception):
    """Expected speculation cost is over budget.

    Raised only by :meth:`SpeculationPlan.require_approved`; the scheduler
    never lets this abort a run — an unapproved plan just means the node's
    descendants wait for the verdict like in sequential mode.
    """


@dataclass(frozen=True)
class NodeCostEstimate:
    """Expected dollar cost of executing and verifying one node."""

    exec_cost: float
    verifier_cost: float = 0.0

    @property
    def total(self) -> float:
        return self.exec_cost + self.verifier_cost


@dataclass(frozen=True)
class SpeculationPlan:
    """Outcome of planning speculation for one verifying node."""

    verifying_node: str
    eligible: frozenset[str]
    expected_cost: float
    budget: float | None
    approved: bool
    window: float = 0.0
    levels: Mapping[int, tuple[str, ...]] = field(default_factory=dict)

    def require_approved(self) -> "SpeculationPlan":
        if not self.approved:
            raise BudgetExceeded(
                f"speculation at {self.verifying_node!r} expects "
                f"{self.expected_cost:.6f} against budget {self.budget}"
            )
        return self


def _levels_below(graph: WorkflowGraph, node_id: str) -> dict[int, list[str]]:
    """Longest-path level of each descendant, measured from ``node_id``."""
    descendants = graph.descendants(node_id)
    depth: dict[str, int] = {node_id: 0}
    for nid in graph.topo_order():
        if nid not in descendants:
            continue
        upstream = [p for p in graph.parents(nid) if p in depth]
        depth[nid] = max(depth[p] for p in upstream) + 1
    levels: dict[int, list[str]] = {}
    for nid in descendants:
        levels.setdefault(depth[nid], []).append(nid)
    for ids in levels.values():
        ids.sort()
    return levels


def eligible_spec_set(
    graph: WorkflowGraph,
    verifying_node: str,
    exec_latencies: Mapping[str, float],
    verifier_latency: float,
    profile: object | None = None,
) -> frozenset[str]:
    """Descendants whose level-cumulative execution time fits strictly
    inside the verifier window.

    A descendant at level ``l`` is eligible iff the sum over levels 1..l of
    the slowest per-level latency is strictly less than
    ``verifier_latency``. Eligibility is therefore a union of whole levels.

    ``profile`` is accepted for signature parity with callers that carry a
    topology profile around; levels here are relative to the verifying node,
    so the global profile adds nothing and the argument is ignored.
    """
    levels = _levels_below(graph, verifying_node)
    eligible: set[str] = set()
    cumulative = 0.0
    for level in sorted(levels):
        cumulative += max(exec_latencies[nid] for nid in levels[level])
        if cumulative < verifier_latency:
            eligible.update(levels[level])
        else:
            break
    return frozenset(eligible)


def expected_spec_cost(
    match_rate: float, costs: Mapping[str, NodeCostEstimate]
) -> float:
    """Expected wasted spend: with probability (1 - match_rate) the verifier
    revises and every speculative execution plus its verification is thrown
    away."""
    if not 0.0 <= match_rate <= 1.0:
        raise ValueError("match_rate must be within [0, 1]")
    return (1.0 - match_rate) * sum(c.total for c in costs.values())


def plan_speculation(
    graph: WorkflowGraph,
    verifying_node: str,
    exec_latencies: Mapping[str, float],
    verifier_latency: float,
    match_rate: float,
    cost_estimates: Mapping[str, NodeCostEstimate],
    budget: float | None,
) -> SpeculationPlan:
    """Build the speculation plan for one verifier window.

    A plan over budget is simply not approved — speculation at this node is
    skipped and the run continues conservatively.
    """
    eligible = eligible_spec_set(graph, verifying_node, exec_latencies, verifier_latency)
    relevant = {nid: cost_estimates[nid] for nid in eligible if nid in cost_estimates}
    for nid in eligible:
        if nid not in cost_estimates:
            relevant[nid] = NodeCostEstimate(exec_cost=0.0)
    cost = expected_spec_cost(match_rate, relevant)
    approved = budget is None or cost <= budget
    levels = {
        level: tuple(ids)
        for level, ids in _levels_below(graph, verifying_node).items()
    }
    return SpeculationPlan(
        verifying_node=verifying_node,
        eligible=eligible,
        expected_cost=cost,
        budget=budget,
        approved=approved,
        window=verifier_latency,
        levels=levels,
    )
