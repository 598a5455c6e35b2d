"""Workflow graphs: parsing, validation, and topology queries.

A workflow is a DAG of task nodes. Documents arrive as JSON with a ``nodes``
array and an ``edges`` array of ``[parent, child]`` pairs; validation rejects
anything that is not a connected-enough, single-terminal DAG before the rest
of the system ever sees it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .similarity import TaskCategory


class GraphError(Exception):
    """Base class for workflow validation failures."""


class MalformedDocument(GraphError):
    """The document does not conform to the workflow schema."""


class DuplicateNodeId(GraphError):
    pass


class UnknownEdgeEndpoint(GraphError):
    pass


class CycleDetected(GraphError):
    pass


class MultipleTerminals(GraphError):
    pass


class NoTerminal(GraphError):
    pass


@dataclass(frozen=True)
class TaskNode:
    """One unit of work in a workflow."""

    id: str
    objective: str
    agent: str
    category: TaskCategory
    uses_tools: bool = False


class NodeRole:
    INITIAL = "initial"
    INTERMEDIATE = "intermediate"
    TERMINAL = "terminal"


@dataclass(frozen=True)
class NodeTopo:
    """Per-node topology facts derived once at load time."""

    fan_in: int
    fan_out: int
    depth: int
    role: str


@dataclass(frozen=True)
class TopoProfile:
    """Topology summary for a whole graph.

    ``depth`` is the length of the longest path from any entry node, so
    parallel branches that rejoin report the join at the deeper level.
    """

    nodes: Mapping[str, NodeTopo]

    def depth_levels(self) -> dict[int, list[str]]:
        levels: dict[int, list[str]] = {}
        for node_id, topo in self.nodes.items():
            levels.setdefault(topo.depth, []).append(node_id)
        for ids in levels.values():
            ids.sort()
        return levels


@dataclass(frozen=True)
class WorkflowGraph:
    """Immutable DAG of :class:`TaskNode`. Safe to share across threads."""

    nodes: tuple[TaskNode, ...]
    edges: tuple[tuple[str, str], ...]
    _by_id: dict[str, TaskNode] = field(repr=False, compare=False, default_factory=dict)
    _parents: dict[str, tuple[str, ...]] = field(repr=False, compare=False, default_factory=dict)
    _children: dict[str, tuple[str, ...]] = field(repr=False, compare=False, default_factory=dict)
    _topo: tuple[str, ...] = field(repr=False, compare=False, default=())

    def __post_init__(self) -> None:
        by_id: dict[str, TaskNode] = {}
        for node in self.nodes:
            if node.id in by_id:
                raise DuplicateNodeId(f"duplicate node id: {node.id!r}")
            by_id[node.id] = node
        parents: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        children: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for parent, child in self.edges:
            if parent not in by_id:
                raise UnknownEdgeEndpoint(f"edge references unknown node {parent!r}")
            if child not in by_id:
                raise UnknownEdgeEndpoint(f"edge references unknown node {child!r}")
            parents[child].append(parent)
            children[parent].append(child)
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_parents", {k: tuple(v) for k, v in parents.items()})
        object.__setattr__(self, "_children", {k: tuple(v) for k, v in children.items()})
        object.__setattr__(self, "_topo", tuple(self._topological_order()))
        terminals = [n.id for n in self.nodes if not self._children[n.id]]
        if not terminals:
            raise NoTerminal("workflow has no terminal node")
        if len(terminals) > 1:
            raise MultipleTerminals(f"workflow has multiple terminal nodes: {terminals}")

    def _topological_order(self) -> list[str]:
        # Kahn's algorithm; ties broken by node declaration order so the
        # result is stable for a given document.
        indegree = {n.id: len(self._parents[n.id]) for n in self.nodes}
        order: list[str] = []
        ready = [n.id for n in self.nodes if indegree[n.id] == 0]
        while ready:
            node_id = ready.pop(0)
            order.append(node_id)
            for child in self._children[node_id]:
                indegree[child] -= 1
                if indegree[child] == 0:
                    ready.append(child)
        if len(order) != len(self.nodes):
            stuck = sorted(n for n, d in indegree.items() if d > 0)
            raise CycleDetected(f"cycle detected involving nodes {stuck}")
        return order

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._by_id

    def node(self, node_id: str) -> TaskNode:
        return self._by_id[node_id]

    def parents(self, node_id: str) -> tuple[str, ...]:
        return self._parents[node_id]

    def children(self, node_id: str) -> tuple[str, ...]:
        return self._children[node_id]

    def topo_order(self) -> tuple[str, ...]:
        return self._topo

    @property
    def initial_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes if not self._parents[n.id])

    @property
    def terminal_id(self) -> str:
        return next(n.id for n in self.nodes if not self._children[n.id])

    def descendants(self, node_id: str) -> set[str]:
        if node_id not in self._by_id:
            raise KeyError(node_id)
        seen: set[str] = set()
        frontier = list(self._children[node_id])
        while frontier:
            current = frontier.pop()
            if current in seen:
                continue
            seen.add(current)
            frontier.extend(self._children[current])
        return seen

    def ancestors(self, node_id: str) -> set[str]:
        if node_id not in self._by_id:
            raise KeyError(node_id)
        seen: set[str] = set()
        frontier = list(self._parents[node_id])
        while frontier:
            current = frontier.pop()
            if current in seen:
                continue
            seen.add(current)
            frontier.extend(self._parents[current])
        return seen


_REQUIRED_NODE_FIELDS = ("id", "objective", "agent", "category", "uses_tools")


def _parse_node(raw: Any, index: int) -> TaskNode:
    if not isinstance(raw, dict):
        raise MalformedDocument(f"nodes[{index}] is not an object")
    for field_name in _REQUIRED_NODE_FIELDS:
        if field_name not in raw:
            raise MalformedDocument(f"nodes[{index}] missing field {field_name!r}")
    node_id = raw["id"]
    objective = raw["objective"]
    agent = raw["agent"]
    uses_tools = raw["uses_tools"]
    if not isinstance(node_id, str) or not node_id:
        raise MalformedDocument(f"nodes[{index}].id must be a non-empty string")
    if not isinstance(objective, str) or not objective:
        raise MalformedDocument(f"nodes[{index}].objective must be a non-empty string")
    if not isinstance(agent, str):
        raise MalformedDocument(f"nodes[{index}].agent must be a string")
    if not isinstance(uses_tools, bool):
        raise MalformedDocument(f"nodes[{index}].uses_tools must be a boolean")
    try:
        category = TaskCategory(raw["category"])
    except ValueError:
        raise MalformedDocument(
            f"nodes[{index}].category must be one of "
            f"{[c.value for c in TaskCategory]}, got {raw['category']!r}"
        ) from None
    return TaskNode(id=node_id, objective=objective, agent=agent, category=category, uses_tools=uses_tools)


def load_workflow(document: str | bytes | Mapping[str, Any]) -> WorkflowGraph:
    """Parse and validate a workflow document.

    Accepts JSON text or an already-parsed mapping. Raises
    :class:`MalformedDocument` for schema problems and the more specific
    :class:`GraphError` subclasses for structural ones.
    """
    if isinstance(document, (str, bytes)):
        try:
            payload = json.loads(document)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"document is not valid JSON: {exc}") from exc
    else:
        payload = document
    if not isinstance(payload, dict):
        raise MalformedDocument("document root must be an object")
    raw_nodes = payload.get("nodes")
    raw_edges = payload.get("edges")
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise MalformedDocument("document must contain a non-empty 'nodes' array")
    if not isinstance(raw_edges, list):
        raise MalformedDocument("document must contain an 'edges' array")
    nodes = tuple(_parse_node(raw, i) for i, raw in enumerate(raw_nodes))
    edges: list[tuple[str, str]] = []
    for i, raw in enumerate(raw_edges):
        if (
            not isinstance(raw, (list, tuple))
            or len(raw) != 2
            or not all(isinstance(endpoint, str) for endpoint in raw)
        ):
            raise MalformedDocument(f"edges[{i}] must be a [parent, child] pair of node ids")
        edges.append((raw[0], raw[1]))
    return WorkflowGraph(nodes=nodes, edges=tuple(edges))


def load_workflow_file(path: str) -> WorkflowGraph:
    with open(path, "r", encoding="utf-8") as handle:
        return load_workflow(handle.read())


def workflow_to_document(graph: WorkflowGraph) -> dict[str, Any]:
    """Inverse of :func:`load_workflow`, useful for round-tripping."""
    return {
        "nodes": [
            {
                "id": n.id,
                "objective": n.objective,
                "agent": n.agent,
                "category": n.category.value,
                "uses_tools": n.uses_tools,
            }
            for n in graph.nodes
        ],
        "edges": [[parent, child] for parent, child in graph.edges],
    }


def topo_profile(graph: WorkflowGraph) -> TopoProfile:
    """Compute fan-in/fan-out/depth/role for every node.

    Depth is the longest-path distance from any entry node (entries sit at
    depth 0), computed in one topological sweep.
    """
    depth: dict[str, int] = {}
    for node_id in graph.topo_order():
        parents = graph.parents(node_id)
        depth[node_id] = 0 if not parents else max(depth[p] for p in parents) + 1
    terminal = graph.terminal_id
    result: dict[str, NodeTopo] = {}
    for node in graph.nodes:
        fan_in = len(graph.parents(node.id))
        fan_out = len(graph.children(node.id))
        if node.id == terminal:
            role = NodeRole.TERMINAL
        elif fan_in == 0:
            role = NodeRole.INITIAL
        else:
            role = NodeRole.INTERMEDIATE
        result[node.id] = NodeTopo(fan_in=fan_in, fan_out=fan_out, depth=depth[node.id], role=role)
    return TopoProfile(nodes=result)
