"""Shortest-path and connectivity analytics over a graph view.

Distances and components use the undirected skeleton (chain mining elsewhere
stays directed); the average shortest path is taken over ordered pairs of
distinct nodes inside the largest connected component, and the report records
that pair basis explicitly.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .errors import ValidationError
from .kg import KnowledgeGraph

PATH_BASIS = "ordered pairs of distinct nodes in the largest undirected component"


@dataclass
class TopologyReport:
    node_count: int
    edge_count: int
    largest_component_size: int
    average_shortest_path: float | None
    path_basis: str = PATH_BASIS
    component_count: int = 0
    pruned_count: int = 0

    def to_record(self) -> dict:
        return {
            "node_count": self.node_count,
            "edge_count": self.edge_count,
            "largest_component_size": self.largest_component_size,
            "average_shortest_path": None
            if self.average_shortest_path is None
            else round(self.average_shortest_path, 6),
            "path_basis": self.path_basis,
            "component_count": self.component_count,
            "pruned_count": self.pruned_count,
        }


def _require_present(graph: KnowledgeGraph, entity_id: str) -> None:
    entity = graph.entities.get(entity_id)
    if entity is None:
        raise ValidationError(f"unknown entity id {entity_id!r}")
    if entity.is_pruned:
        raise ValidationError(f"entity {entity_id!r} is pruned in the {graph.view} view")


def bfs_hops(graph: KnowledgeGraph, source: str) -> dict[str, int]:
    """Undirected hop distances from a source to every reachable present node."""
    _require_present(graph, source)
    distances = {source: 0}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        for neighbor in graph.undirected_neighbors(node):
            if neighbor not in distances and graph.present(neighbor):
                distances[neighbor] = distances[node] + 1
                queue.append(neighbor)
    return distances


def shortest_path_hops(graph: KnowledgeGraph, u: str, v: str) -> int | None:
    """Undirected hop count between two present nodes; None when unreachable."""
    _require_present(graph, u)
    _require_present(graph, v)
    if u == v:
        return 0
    return bfs_hops(graph, u).get(v)


def connected_components(graph: KnowledgeGraph) -> list[list[str]]:
    """Undirected components over present nodes, largest first then by id."""
    remaining = set(graph.present_ids())
    components: list[list[str]] = []
    while remaining:
        start = min(remaining)
        seen = bfs_hops(graph, start)
        component = sorted(seen)
        components.append(component)
        remaining -= set(component)
    components.sort(key=lambda c: (-len(c), c[0]))
    return components


def topology_report(graph: KnowledgeGraph) -> TopologyReport:
    present = graph.present_ids()
    if not present:
        raise ValidationError("topology report of an empty graph")
    components = connected_components(graph)
    largest = components[0]
    asp: float | None = None
    if len(largest) >= 2:
        total = 0
        count = 0
        for node in largest:
            for distance in bfs_hops(graph, node).values():
                if distance > 0:
                    total += distance
                    count += 1
        asp = total / count
    return TopologyReport(
        node_count=len(present),
        edge_count=len(graph.edges),
        largest_component_size=len(largest),
        average_shortest_path=asp,
        component_count=len(components),
        pruned_count=sum(1 for e in graph.entities.values() if e.is_pruned),
    )


@dataclass
class SweepResult:
    k_values: list[float | None] = field(default_factory=list)
    reports: list[TopologyReport] = field(default_factory=list)

    def to_record(self) -> list[dict]:
        rows = []
        for k, report in zip(self.k_values, self.reports):
            row = {"k": "inf" if k is None else k}
            row.update(report.to_record())
            rows.append(row)
        return rows


def shatter_sweep(graph: KnowledgeGraph, ks: list[float | None], stoplist: set[str] | None = None, stoplist_id: str = "") -> SweepResult:
    """Topology reports for a sequence of frequency thresholds (None = off)."""
    from .kg import shatter  # local import keeps module load acyclic

    result = SweepResult()
    for k in ks:
        view = shatter(graph, k, stoplist=stoplist, stoplist_id=stoplist_id)
        result.k_values.append(k)
        if view.present_ids():
            result.reports.append(topology_report(view))
        else:
            result.reports.append(
                TopologyReport(
                    node_count=0,
                    edge_count=0,
                    largest_component_size=0,
                    average_shortest_path=None,
                    component_count=0,
                    pruned_count=len(view.entities),
                )
            )
    return result
