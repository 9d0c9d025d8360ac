"""Task graph model: validation, orderings, dependency closures, critical path."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, List, Mapping, Optional, Tuple, Union

import networkx as nx
from jsonschema import Draft202012Validator

from agentgraph.errors import (
    CycleError,
    DanglingEdgeError,
    DuplicateEdgeError,
    DuplicateIdError,
    ParseError,
)

GraphDocument = Union[str, bytes, Mapping[str, Any]]

# ---------- Document schema ----------
_ID = {"anyOf": [{"type": "string", "minLength": 1}, {"type": "integer"}]}

GRAPH_SCHEMA = {
    "type": "object",
    "required": ["nodes", "edges"],
    "properties": {
        "nodes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "label"],
                "properties": {"id": _ID, "label": {"type": "string", "minLength": 1}},
            },
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to"],
                "properties": {"from": _ID, "to": _ID},
            },
        },
    },
}

_validator = Draft202012Validator(GRAPH_SCHEMA)


def id_key(node_id: str) -> Tuple:
    """Natural sort key: digit runs compare as numbers ("task_2" < "task_10")."""
    parts = re.split(r"(\d+)", node_id)
    return tuple((0, int(p), "") if p.isdigit() else (1, 0, p) for p in parts)


# ---------- Domain types ----------
@dataclass(frozen=True)
class TaskNode:
    id: str
    label: str


@dataclass(frozen=True)
class TaskEdge:
    source: str
    target: str


@dataclass(frozen=True)
class TaskGraph:
    nodes: Tuple[TaskNode, ...] = ()
    edges: Tuple[TaskEdge, ...] = ()

    @property
    def node_ids(self) -> List[str]:
        return [n.id for n in self.nodes]

    def label_of(self, node_id: str) -> str:
        for node in self.nodes:
            if node.id == node_id:
                return node.label
        raise KeyError(node_id)

    def labels(self) -> Dict[str, str]:
        return {n.id: n.label for n in self.nodes}

    def edge_pairs(self) -> List[Tuple[str, str]]:
        return [(e.source, e.target) for e in self.edges]

    def digraph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for node in self.nodes:
            g.add_node(node.id, label=node.label)
        g.add_edges_from(self.edge_pairs())
        return g

    def roots(self) -> List[str]:
        targets = {e.target for e in self.edges}
        return sorted((n.id for n in self.nodes if n.id not in targets), key=id_key)


@dataclass(frozen=True)
class DependencyView:
    direct_predecessors: Mapping[str, FrozenSet[str]]
    ancestors: Mapping[str, FrozenSet[str]]

    def descendants_of(self, node_id: str) -> FrozenSet[str]:
        return frozenset(n for n, anc in self.ancestors.items() if node_id in anc)


# ---------- Validation ----------
def _coerce_id(value: Any) -> str:
    return str(value)


def _load_document(document: GraphDocument) -> Mapping[str, Any]:
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise ParseError(f"graph document is not valid JSON: {e}") from e
    if not isinstance(document, Mapping):
        raise ParseError("graph document must be an object")
    if "task_graph" in document and "nodes" not in document:
        document = document["task_graph"]
        if not isinstance(document, Mapping):
            raise ParseError("'task_graph' must be an object")
    return document


def validate(graph_document: GraphDocument) -> TaskGraph:
    """Parse a graph document (bare or wrapped in "task_graph") into a TaskGraph."""
    doc = _load_document(graph_document)
    errors = sorted(_validator.iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        first = errors[0]
        where = "/".join(str(p) for p in first.path) or "<root>"
        raise ParseError(f"invalid graph document at {where}: {first.message}")

    nodes: List[TaskNode] = []
    seen = set()
    for raw in doc["nodes"]:
        node_id = _coerce_id(raw["id"])
        if node_id in seen:
            raise DuplicateIdError(f"duplicate node id {node_id!r}")
        seen.add(node_id)
        nodes.append(TaskNode(id=node_id, label=raw["label"]))

    edges: List[TaskEdge] = []
    pairs = set()
    for raw in doc["edges"]:
        source, target = _coerce_id(raw["from"]), _coerce_id(raw["to"])
        for endpoint in (source, target):
            if endpoint not in seen:
                raise DanglingEdgeError(f"edge {source}->{target} references unknown node {endpoint!r}")
        if source == target:
            raise CycleError([source])
        if (source, target) in pairs:
            raise DuplicateEdgeError(f"duplicate edge {source}->{target}")
        pairs.add((source, target))
        edges.append(TaskEdge(source=source, target=target))

    graph = TaskGraph(nodes=tuple(nodes), edges=tuple(edges))
    g = graph.digraph()
    if not nx.is_directed_acyclic_graph(g):
        cycle = nx.find_cycle(g)
        raise CycleError([u for u, _ in cycle])
    return graph


def build_graph(nodes: List[Tuple[Any, str]], edges: List[Tuple[Any, Any]]) -> TaskGraph:
    """Shorthand used by the dataset builders and tests."""
    return validate({
        "nodes": [{"id": i, "label": label} for i, label in nodes],
        "edges": [{"from": u, "to": v} for u, v in edges],
    })


def serialize(graph: TaskGraph) -> Dict[str, Any]:
    return {
        "task_graph": {
            "nodes": [{"id": n.id, "label": n.label} for n in graph.nodes],
            "edges": [{"from": e.source, "to": e.target} for e in graph.edges],
        }
    }


def dumps(graph: TaskGraph) -> str:
    return json.dumps(serialize(graph), indent=2, ensure_ascii=False) + "\n"


# ---------- Orderings and closures ----------
def topological_order(g: TaskGraph) -> List[str]:
    return list(nx.lexicographical_topological_sort(g.digraph(), key=id_key))


def dependency_view(g: TaskGraph) -> DependencyView:
    dg = g.digraph()
    direct = {n: frozenset(dg.predecessors(n)) for n in dg.nodes}
    ancestors = {n: frozenset(nx.ancestors(dg, n)) for n in dg.nodes}
    return DependencyView(direct_predecessors=direct, ancestors=ancestors)


def critical_path(g: TaskGraph, weights: Optional[Mapping[str, float]] = None) -> Tuple[List[str], float]:
    """Maximum-weight directed path; ties go to the lexicographically smallest id sequence.

    Ids compare as plain strings here ("task_10" < "task_2"), unlike the
    natural ordering used for scheduling.
    """
    weights = weights or {}
    for node_id, w in weights.items():
        if w < 0:
            raise ValueError(f"negative weight {w} for node {node_id!r}")
    if not g.nodes:
        return [], 0.0

    dg = g.digraph()
    # best path *starting* at each node, filled in reverse topological order
    best: Dict[str, Tuple[float, List[str]]] = {}
    for node in reversed(topological_order(g)):
        w = float(weights.get(node, 1.0))
        length, path = w, [node]
        for succ in dg.successors(node):
            s_len, s_path = best[succ]
            cand_len, cand_path = w + s_len, [node] + s_path
            if cand_len > length or (cand_len == length and cand_path < path):
                length, path = cand_len, cand_path
        best[node] = (length, path)

    length, path = None, None
    for node in sorted(best):
        cand_len, cand_path = best[node]
        if length is None or cand_len > length or (cand_len == length and cand_path < path):
            length, path = cand_len, cand_path
    return path, length


def complexity_score(g: TaskGraph) -> int:
    return len(g.nodes) + len(g.edges)
