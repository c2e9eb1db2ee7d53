"""Frequency-indexed entity/edge store with an original and a shattered view.

The shattered view prunes entities whose node frequency exceeds the threshold
k (or that match the stop-entity list) and drops every incident edge, severing
generic-hub shortcuts while the original view stays available for ablation.
"""

from __future__ import annotations

import logging
import math
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path

from .align import ThetaSchedule, fuzzy_merge, DEFAULT_THETA
from .corpus import normalize_for_match
from .errors import ValidationError
from .seeding import stable_text_digest

logger = logging.getLogger(__name__)


@dataclass
class Entity:
    entity_id: str
    canonical_name: str
    aliases: set[str] = field(default_factory=set)
    frequency: int = 0
    is_pruned: bool = False
    prune_reason: str | None = None  # None | "over_k" | "stoplist"

    def surfaces(self) -> list[str]:
        return [self.canonical_name, *sorted(self.aliases)]


@dataclass(frozen=True)
class Evidence:
    chunk_id: str
    sentence_span: tuple[int, int]
    page_anchor: int


@dataclass(frozen=True)
class Triplet:
    head: str  # entity_id
    relation: str
    tail: str  # entity_id
    evidence: Evidence
    confidence: float = 1.0
    source_node_id: str = ""  # tree node the extraction ran on

    def __post_init__(self):
        if self.head == self.tail:
            raise ValidationError(f"self-loop triplet on {self.head}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError("confidence must be in [0, 1]")


class KnowledgeGraph:
    """Entity and edge store with adjacency and surface indexes."""

    def __init__(
        self,
        view: str = "original",
        k_threshold: float | None = None,
        stoplist_id: str = "",
    ):
        if view not in ("original", "shattered"):
            raise ValidationError(f"unknown graph view: {view!r}")
        self.view = view
        self.k_threshold = k_threshold  # None means unbounded
        self.stoplist_id = stoplist_id
        self.entities: dict[str, Entity] = {}
        self.edges: list[Triplet] = []
        self._out: dict[str, list[int]] = {}
        self._in: dict[str, list[int]] = {}
        self._surface_index: dict[str, str] = {}

    # -- entities -----------------------------------------------------------

    def add_entity(self, canonical_name: str) -> Entity:
        normalized = normalize_for_match(canonical_name)
        if not normalized:
            raise ValidationError("entity canonical name must be non-empty")
        existing = self._surface_index.get(normalized)
        if existing is not None:
            return self.entities[existing]
        entity_id = f"e{len(self.entities):05d}"
        entity = Entity(entity_id=entity_id, canonical_name=canonical_name.strip())
        self.entities[entity_id] = entity
        self._surface_index[normalized] = entity_id
        self._out.setdefault(entity_id, [])
        self._in.setdefault(entity_id, [])
        return entity

    def add_alias(self, entity_id: str, alias: str) -> None:
        entity = self.require(entity_id)
        cleaned = alias.strip()
        if normalize_for_match(cleaned) == normalize_for_match(entity.canonical_name):
            return
        entity.aliases.add(cleaned)
        self._surface_index.setdefault(normalize_for_match(cleaned), entity_id)

    def require(self, entity_id: str) -> Entity:
        entity = self.entities.get(entity_id)
        if entity is None:
            raise ValidationError(f"unknown entity id {entity_id!r}")
        return entity

    def resolve_surface(self, surface: str) -> str | None:
        return self._surface_index.get(normalize_for_match(surface))

    def surface_vocabulary(self) -> dict[str, str]:
        """surface form -> entity_id over canonical names and aliases."""
        vocab: dict[str, str] = {}
        for entity in self.entities.values():
            for surface in entity.surfaces():
                vocab.setdefault(surface, entity.entity_id)
        return vocab

    def present(self, entity_id: str) -> bool:
        entity = self.entities.get(entity_id)
        return entity is not None and not entity.is_pruned

    def present_ids(self) -> list[str]:
        return sorted(e.entity_id for e in self.entities.values() if not e.is_pruned)

    # -- edges --------------------------------------------------------------

    def add_edge(self, triplet: Triplet) -> None:
        self.require(triplet.head)
        self.require(triplet.tail)
        index = len(self.edges)
        self.edges.append(triplet)
        self._out.setdefault(triplet.head, []).append(index)
        self._in.setdefault(triplet.tail, []).append(index)

    def out_edges(self, entity_id: str) -> list[Triplet]:
        return [self.edges[i] for i in self._out.get(entity_id, [])]

    def in_edges(self, entity_id: str) -> list[Triplet]:
        return [self.edges[i] for i in self._in.get(entity_id, [])]

    def undirected_neighbors(self, entity_id: str) -> list[str]:
        seen = {self.edges[i].tail for i in self._out.get(entity_id, [])}
        seen.update(self.edges[i].head for i in self._in.get(entity_id, []))
        return sorted(seen)

    # -- snapshots ----------------------------------------------------------

    def copy(self, view: str | None = None) -> "KnowledgeGraph":
        clone = KnowledgeGraph(
            view=view or self.view, k_threshold=self.k_threshold, stoplist_id=self.stoplist_id
        )
        for entity_id in sorted(self.entities):
            entity = self.entities[entity_id]
            clone.entities[entity_id] = replace(entity, aliases=set(entity.aliases))
            clone._out.setdefault(entity_id, [])
            clone._in.setdefault(entity_id, [])
        clone._surface_index = dict(self._surface_index)
        for edge in self.edges:
            clone.add_edge(edge)
        return clone


def load_stoplist(path: str | Path) -> tuple[set[str], str]:
    """One term per line, UTF-8, '#' comments; returns (terms, stoplist_id)."""
    raw = Path(path).read_text(encoding="utf-8")
    terms = set()
    for line in raw.splitlines():
        term = line.split("#", 1)[0].strip()
        if term:
            terms.add(normalize_for_match(unicodedata.normalize("NFC", term)))
    return terms, stable_text_digest(raw)[:16]


def entity_frequencies(
    triplets: list[Triplet],
    counting_unit: str = "tree_nodes",
    known_ids: set[str] | None = None,
) -> dict[str, int]:
    """Occurrence counts per entity: distinct tree nodes or raw mentions."""
    if counting_unit not in ("tree_nodes", "mentions"):
        raise ValidationError(f"unknown counting unit: {counting_unit!r}")
    if known_ids is not None:
        for triplet in triplets:
            for entity_id in (triplet.head, triplet.tail):
                if entity_id not in known_ids:
                    raise ValidationError(f"unresolved entity id {entity_id!r} in triplet")
    if counting_unit == "mentions":
        counts: dict[str, int] = {}
        for triplet in triplets:
            counts[triplet.head] = counts.get(triplet.head, 0) + 1
            counts[triplet.tail] = counts.get(triplet.tail, 0) + 1
        return counts
    nodes_by_entity: dict[str, set[str]] = {}
    for triplet in triplets:
        for entity_id in (triplet.head, triplet.tail):
            nodes_by_entity.setdefault(entity_id, set()).add(triplet.source_node_id)
    return {entity_id: len(nodes) for entity_id, nodes in nodes_by_entity.items()}


def apply_frequencies(graph: KnowledgeGraph, counting_unit: str = "tree_nodes") -> None:
    counts = entity_frequencies(graph.edges, counting_unit, known_ids=set(graph.entities))
    for entity in graph.entities.values():
        entity.frequency = counts.get(entity.entity_id, 0)


def shatter(
    graph: KnowledgeGraph,
    k: float | None,
    stoplist: set[str] | None = None,
    stoplist_id: str = "",
) -> KnowledgeGraph:
    """Return the shattered view: entities over the frequency threshold or on
    the stoplist are marked pruned and lose every incident edge. The original
    graph is left untouched."""
    stoplist = stoplist or set()
    threshold = math.inf if k is None else float(k)
    if threshold <= 0:
        raise ValidationError("k threshold must be positive")

    shattered = KnowledgeGraph(view="shattered", k_threshold=None if k is None else k, stoplist_id=stoplist_id)
    for entity_id in sorted(graph.entities):
        entity = graph.entities[entity_id]
        surfaces = {normalize_for_match(s) for s in entity.surfaces()}
        reason: str | None = None
        if surfaces & stoplist:
            reason = "stoplist"
        elif entity.frequency > threshold:
            reason = "over_k"
        shattered.entities[entity_id] = replace(
            entity,
            aliases=set(entity.aliases),
            is_pruned=reason is not None,
            prune_reason=reason,
        )
        shattered._out.setdefault(entity_id, [])
        shattered._in.setdefault(entity_id, [])
    shattered._surface_index = dict(graph._surface_index)
    for edge in graph.edges:
        if shattered.entities[edge.head].is_pruned or shattered.entities[edge.tail].is_pruned:
            continue
        shattered.add_edge(edge)
    return shattered


@dataclass
class RawTriplet:
    """Extraction output before surfaces are resolved to entity ids."""

    head_surface: str
    relation: str
    tail_surface: str
    evidence: Evidence
    source_node_id: str
    confidence: float = 1.0


@dataclass
class AssemblyReport:
    accepted_edges: int = 0
    merged_aliases: int = 0
    dropped_self_loops: int = 0


def assemble_graph(
    raw_triplets: list[RawTriplet],
    theta_schedule: ThetaSchedule = DEFAULT_THETA,
    counting_unit: str = "tree_nodes",
) -> tuple[KnowledgeGraph, AssemblyReport]:
    """Resolve surfaces (exact, then fuzzy) into a graph and index frequencies.

    Fuzzy-merged variants are recorded as aliases of the winning entity, so
    every surface that ever appeared resolves to some entity afterwards.
    """
    graph = KnowledgeGraph(view="original")
    report = AssemblyReport()

    def resolve(surface: str) -> str:
        entity_id = graph.resolve_surface(surface)
        if entity_id is not None:
            return entity_id
        frequencies = {e.entity_id: e.frequency for e in graph.entities.values()}
        names = {e.entity_id: e.canonical_name for e in graph.entities.values()}
        merged = fuzzy_merge(
            surface,
            graph.surface_vocabulary(),
            theta_schedule,
            frequencies=frequencies,
            canonical_names=names,
        )
        if merged is not None:
            graph.add_alias(merged, surface)
            report.merged_aliases += 1
            return merged
        return graph.add_entity(surface).entity_id

    for raw in raw_triplets:
        head_id = resolve(raw.head_surface)
        tail_id = resolve(raw.tail_surface)
        if head_id == tail_id:
            report.dropped_self_loops += 1
            logger.debug("dropped self-loop after merge: %r", raw.head_surface)
            continue
        graph.add_edge(
            Triplet(
                head=head_id,
                relation=raw.relation,
                tail=tail_id,
                evidence=raw.evidence,
                confidence=raw.confidence,
                source_node_id=raw.source_node_id,
            )
        )
        report.accepted_edges += 1

    apply_frequencies(graph, counting_unit)
    return graph, report
