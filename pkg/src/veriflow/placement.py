"""Budgeted verifier placement.

With only ``k`` verifiers to spend, cover the positions where an unchecked
error is most damaging: the terminal node (it is the answer), then the entry
nodes (errors there poison everything downstream), then join points in
decreasing fan-in order.
"""

from __future__ import annotations

from dataclasses import dataclass

from .graph import NodeRole, TopoProfile, WorkflowGraph


@dataclass(frozen=True)
class PlacementPlan:
    """Which nodes get a verifier. ``budget`` is the requested k."""

    selected: tuple[str, ...]
    budget: int

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.selected


def verifier_priority(graph: WorkflowGraph, profile: TopoProfile) -> list[str]:
    """Full priority order: terminal, entries (by id), joins by fan-in.

    Ties among intermediates break toward the lexicographically smaller id so
    the order is total and reproducible.
    """
    terminal = graph.terminal_id
    initials = sorted(
        nid for nid, topo in profile.nodes.items() if topo.role == NodeRole.INITIAL
    )
    intermediates = [
        (nid, topo)
        for nid, topo in profile.nodes.items()
        if topo.role == NodeRole.INTERMEDIATE
    ]
    intermediates.sort(key=lambda item: (-item[1].fan_in, item[0]))
    return [terminal, *initials, *[nid for nid, _ in intermediates]]


def place_verifiers(graph: WorkflowGraph, profile: TopoProfile, k: int) -> PlacementPlan:
    """Select ``min(k, n)`` verifier positions following the priority order.

    The selection is prefix-monotone: the plan for budget k is always a
    prefix of the plan for budget k+1.
    """
    if k < 0:
        raise ValueError("verifier budget must be non-negative")
    priority = verifier_priority(graph, profile)
    return PlacementPlan(selected=tuple(priority[:k]), budget=k)
