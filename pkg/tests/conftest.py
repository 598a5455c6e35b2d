"""Shared helpers: random workflow generation and independent oracles.

The oracles here deliberately use different algorithms than the package
(full-table LCS, recursive longest-path levels) so agreement means
something.
"""

from __future__ import annotations

import random

from veriflow.graph import TaskNode, WorkflowGraph
from veriflow.similarity import TaskCategory

CATEGORIES = tuple(TaskCategory)


def make_random_dag(rng: random.Random, max_nodes: int = 12, extra_edge_p: float = 0.25) -> WorkflowGraph:
    """Random single-terminal DAG with 2..max_nodes nodes.

    Nodes are created in topological order; every non-initial node gets one
    parent among its predecessors, extra forward edges are sprinkled in, and
    stray sinks are wired into the last node so exactly one terminal remains.
    """
    n = rng.randint(2, max_nodes)
    ids = [f"t{i}" for i in range(n)]
    nodes = tuple(
        TaskNode(
            id=ids[i],
            objective=f"objective {i}",
            agent=f"Agent {i % 4}",
            category=rng.choice(CATEGORIES),
            uses_tools=bool(rng.getrandbits(1)),
        )
        for i in range(n)
    )
    edges: set[tuple[str, str]] = set()
    for i in range(1, n):
        edges.add((ids[rng.randrange(i)], ids[i]))
    for i in range(n - 1):
        for j in range(i + 1, n):
            if rng.random() < extra_edge_p:
                edges.add((ids[i], ids[j]))
    has_child = {parent for parent, _ in edges}
    for i in range(n - 1):
        if ids[i] not in has_child:
            edges.add((ids[i], ids[n - 1]))
    return WorkflowGraph(nodes=nodes, edges=tuple(sorted(edges)))


def ref_lcs(a: list[str], b: list[str]) -> int:
    # Classic full-table LCS, O(len(a)*len(b)) memory.
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[len(a)][len(b)]


def brute_force_eligible(
    graph: WorkflowGraph,
    verifying_node: str,
    exec_latencies: dict[str, float],
    verifier_latency: float,
) -> frozenset[str]:
    """Reference eligibility: whole-level prefixes of the descendant cone
    whose cumulative max-latency-per-level stays strictly under the
    verifier latency. Levels via recursive longest path from the verified
    node."""
    descendants = graph.descendants(verifying_node)
    if not descendants:
        return frozenset()

    def level_of(node_id: str) -> int:
        # longest path from verifying_node; only defined on its cone
        best = 0
        for parent in graph.parents(node_id):
            if parent == verifying_node:
                best = max(best, 1)
            elif parent in descendants:
                best = max(best, level_of(parent) + 1)
        return best

    by_level: dict[int, list[str]] = {}
    for node_id in descendants:
        by_level.setdefault(level_of(node_id), []).append(node_id)

    eligible: set[str] = set()
    cumulative = 0.0
    for level in range(1, max(by_level) + 1):
        members = by_level.get(level, [])
        if not members:
            continue
        cumulative += max(exec_latencies.get(m, 0.0) for m in members)
        if cumulative < verifier_latency:
            eligible.update(members)
        else:
            break
    return frozenset(eligible)
