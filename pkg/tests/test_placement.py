from __future__ import annotations

import random

import pytest

from conftest import make_random_dag
from veriflow.graph import load_workflow, topo_profile
from veriflow.placement import place_verifiers, verifier_priority


def _graph():
    # two entries, a join, and a terminal
    return load_workflow(
        {
            "nodes": [
                {"id": n, "objective": f"do {n}", "agent": "Agent 0", "category": "instruction", "uses_tools": False}
                for n in ("e1", "e2", "join", "tail")
            ],
            "edges": [["e1", "join"], ["e2", "join"], ["join", "tail"]],
        }
    )


def test_priority_order_terminal_then_initials_then_joins():
    graph = _graph()
    order = verifier_priority(graph, topo_profile(graph))
    assert order == ["tail", "e1", "e2", "join"]


def test_placement_prefixes():
    graph = _graph()
    profile = topo_profile(graph)
    assert place_verifiers(graph, profile, 0).selected == ()
    assert place_verifiers(graph, profile, 1).selected == ("tail",)
    assert place_verifiers(graph, profile, 2).selected == ("tail", "e1")
    # budget larger than the graph selects every node once
    assert place_verifiers(graph, profile, 99).selected == ("tail", "e1", "e2", "join")


def test_negative_budget_rejected():
    graph = _graph()
    with pytest.raises(ValueError):
        place_verifiers(graph, topo_profile(graph), -1)


def test_plan_membership():
    graph = _graph()
    plan = place_verifiers(graph, topo_profile(graph), 2)
    assert "tail" in plan and "join" not in plan
    assert plan.budget == 2


def test_invariants_on_random_dags():
    rng = random.Random(23)
    for _ in range(100):
        graph = make_random_dag(rng)
        profile = topo_profile(graph)
        n = len(graph.nodes)
        previous: tuple[str, ...] = ()
        for k in range(n + 1):
            plan = place_verifiers(graph, profile, k)
            assert len(plan.selected) == min(k, n)
            # prefix-monotone in k
            assert plan.selected[: len(previous)] == previous
            previous = plan.selected
        full = place_verifiers(graph, profile, n).selected
        terminal = graph.terminal_id
        initials = sorted(nid for nid in (node.id for node in graph.nodes) if not graph.parents(nid) )
        assert full[0] == terminal
        assert list(full[1 : 1 + len(initials)]) == initials
        rest = full[1 + len(initials) :]
        fan_in = {nid: len(graph.parents(nid)) for nid in rest}
        for left, right in zip(rest, rest[1:]):
            assert (-fan_in[left], left) <= (-fan_in[right], right)
