"""Masked vignette synthesis over completed reasoning chains.

The bridge entity must never appear in the question text (it may appear in
the rationale); violations trigger regeneration and, past the retry budget,
a discard with a recorded reason. Options mix the true target, the sibling
hard negative, and fillers drawn from entities topologically far from the
source, shuffled by a per-item seed."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

import random

from . import prompts
from .chains import ReasoningChain
from .corpus import Chunk, SentenceStore, normalize_for_match
from .errors import ItemDiscardedError, ProviderError, ValidationError
from .kg import KnowledgeGraph
from .providers import ChatRequest, ChatService
from .seeding import derive_seed
from .topology import bfs_hops

logger = logging.getLogger(__name__)

GENERATION_RETRIES = 2  # regeneration attempts after the first try
FILLER_MIN_DISTANCE = 3
PROMPT_VERSION = "vignette-v1"

_OBJECT = re.compile(r"\{.*\}", re.DOTALL)


@dataclass
class QAItem:
    qa_id: str
    language: str
    difficulty: str
    clinical_task: str
    question: str
    options: list[str]
    answer_index: int
    hard_negative_index: int
    masked_entity: dict  # {"canonical": str, "aliases": [str, ...]}
    rationale: str
    evidence_anchors: list[dict]
    chain_ref: str
    generation_metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.options)
        if not 0 <= self.answer_index < n or not 0 <= self.hard_negative_index < n:
            raise ValidationError(f"{self.qa_id}: option indexes out of bounds")
        if self.answer_index == self.hard_negative_index:
            raise ValidationError(f"{self.qa_id}: answer and hard negative coincide")

    def masked_surfaces(self) -> list[str]:
        return [self.masked_entity["canonical"], *self.masked_entity.get("aliases", [])]


def verify_masking(item: QAItem) -> list[str]:
    """Surface forms of the masked entity found in the question text.

    Containment is checked on the normalized (casefolded, NFC, whitespace
    collapsed) strings, question text only: the rationale legitimately names
    the bridge. Empty list means the item passes."""
    question = normalize_for_match(item.question)
    violations = []
    for surface in item.masked_surfaces():
        if normalize_for_match(surface) in question:
            violations.append(surface)
    return violations


def parse_json_object(text: str) -> dict | None:
    try:
        value = json.loads(text)
        return value if isinstance(value, dict) else None
    except json.JSONDecodeError:
        pass
    match = _OBJECT.search(text)
    if match:
        try:
            value = json.loads(match.group(0))
            return value if isinstance(value, dict) else None
        except json.JSONDecodeError:
            return None
    return None


def _anchor_record(kind: str, chunk_id: str, span: tuple[int, int], page: int) -> dict:
    return {"hop": kind, "chunk_id": chunk_id, "sentence_span": list(span), "page_anchor": page}


def select_fillers(
    chain: ReasoningChain,
    graph: KnowledgeGraph,
    count: int,
    rng: random.Random,
) -> list[str]:
    """Entity ids at undirected distance >= FILLER_MIN_DISTANCE from the
    source (unreachable counts as far), excluding the chain's own nodes."""
    if count <= 0:
        return []
    distances = bfs_hops(graph, chain.a)
    excluded = {chain.a, chain.e_bridge, chain.b, chain.e_sib, chain.b_prime}
    candidates = [
        entity_id
        for entity_id in graph.present_ids()
        if entity_id not in excluded
        and distances.get(entity_id, FILLER_MIN_DISTANCE) >= FILLER_MIN_DISTANCE
    ]
    if len(candidates) < count:
        raise ItemDiscardedError(
            f"chain {chain.key}: only {len(candidates)} filler candidates for {count} slots",
            reason="insufficient_fillers",
        )
    return rng.sample(candidates, count)


def synthesize_item(
    chain: ReasoningChain,
    graph: KnowledgeGraph,
    chunk_store: dict[str, Chunk],
    sentence_store: SentenceStore,
    chat: ChatService,
    qa_id: str,
    n_options: int = 4,
    language: str = "EN",
    rng_seed: int = 0,
    difficulty: str = "hard",
    model_name: str = "default",
    temperature: float = 0.7,
) -> QAItem:
    """Synthesize one masked multiple-choice item from a completed chain."""
    if n_options < 3:
        raise ValidationError("n_options must be >= 3 (target, hard negative, filler)")
    if not chain.complete:
        raise ValidationError(f"chain {chain.key} has no hard negative yet")

    bridge = graph.require(chain.e_bridge)
    source = graph.require(chain.a)
    target = graph.require(chain.b)
    hard_negative = graph.require(chain.b_prime)

    def span_text(evidence) -> str:
        chunk = chunk_store.get(evidence.chunk_id)
        if chunk is None:
            raise ItemDiscardedError(
                f"chain {chain.key}: evidence chunk {evidence.chunk_id} unresolvable",
                reason="unresolvable_evidence",
            )
        return sentence_store.span_text(chunk.doc_id, tuple(evidence.sentence_span))

    evidence_hop1 = span_text(chain.evidence_hop1)
    evidence_hop2 = span_text(chain.evidence_hop2)

    rng = random.Random(derive_seed(rng_seed, "options"))
    fillers = select_fillers(chain, graph, n_options - 2, rng)
    option_names = [target.canonical_name, hard_negative.canonical_name] + [
        graph.require(f).canonical_name for f in fillers
    ]
    order = list(range(n_options))
    rng.shuffle(order)
    options = [option_names[i] for i in order]
    answer_index = options.index(target.canonical_name)
    hard_negative_index = options.index(hard_negative.canonical_name)

    masked = {"canonical": bridge.canonical_name, "aliases": sorted(bridge.aliases)}
    prompt = prompts.render_vignette_prompt(
        context_entity=source.canonical_name,
        bridge_entity=bridge.canonical_name,
        target_entity=target.canonical_name,
        evidence_hop1=evidence_hop1,
        evidence_hop2=evidence_hop2,
        forbidden_terms=[masked["canonical"], *masked["aliases"]],
    )

    attempts = 0
    last_violations: list[str] = []
    for attempt in range(1 + GENERATION_RETRIES):
        attempts = attempt + 1
        request = ChatRequest.user(
            prompt,
            temperature=temperature,
            model_name=model_name,
            seed=derive_seed(rng_seed, f"attempt{attempt}"),
        )
        try:
            response = chat.complete(request)
        except ProviderError as exc:
            raise ItemDiscardedError(
                f"chain {chain.key}: provider failure during synthesis: {exc}",
                reason="provider_error",
            ) from exc
        payload = parse_json_object(response)
        if payload is None or "question" not in payload or "rationale" not in payload:
            last_violations = ["<unparseable generation>"]
            continue
        item = QAItem(
            qa_id=qa_id,
            language=language,
            difficulty=difficulty,
            clinical_task="unadjudicated",
            question=str(payload["question"]).strip(),
            options=options,
            answer_index=answer_index,
            hard_negative_index=hard_negative_index,
            masked_entity=masked,
            rationale=str(payload["rationale"]).strip(),
            evidence_anchors=[
                _anchor_record("hop1", chain.evidence_hop1.chunk_id, chain.evidence_hop1.sentence_span, chain.evidence_hop1.page_anchor),
                _anchor_record("hop2", chain.evidence_hop2.chunk_id, chain.evidence_hop2.sentence_span, chain.evidence_hop2.page_anchor),
            ],
            chain_ref=chain.key,
            generation_metadata={
                "model": model_name,
                "temperature": temperature,
                "seed": rng_seed,
                "prompt_version": PROMPT_VERSION,
                "attempts": attempts,
            },
        )
        violations = verify_masking(item)
        if not violations:
            return item
        last_violations = violations
        logger.debug("chain %s attempt %d leaked %s; regenerating", chain.key, attempts, violations)

    raise ItemDiscardedError(
        f"chain {chain.key}: masking violated after {attempts} attempts ({last_violations})",
        reason="masking_violation" if last_violations != ["<unparseable generation>"] else "unparseable_generation",
    )


@dataclass
class Discard:
    chain_key: str
    reason: str
    detail: str


def synthesize_dataset(
    chains: list[ReasoningChain],
    graph: KnowledgeGraph,
    chunk_store: dict[str, Chunk],
    sentence_store: SentenceStore,
    chat: ChatService,
    master_seed: int = 0,
    n_options: int = 4,
    language: str = "EN",
    difficulty: str = "hard",
    model_name: str = "default",
    temperature: float = 0.7,
    qa_prefix: str = "qa",
) -> tuple[list[QAItem], list[Discard]]:
    """Synthesize items for every completed chain; discards carry reasons."""
    items: list[QAItem] = []
    discards: list[Discard] = []
    for index, chain in enumerate(chains):
        qa_id = f"{qa_prefix}{index:05d}"
        try:
            items.append(
                synthesize_item(
                    chain,
                    graph,
                    chunk_store,
                    sentence_store,
                    chat,
                    qa_id=qa_id,
                    n_options=n_options,
                    language=language,
                    rng_seed=derive_seed(master_seed, "synthesize", chain.key),
                    difficulty=difficulty,
                    model_name=model_name,
                    temperature=temperature,
                )
            )
        except ItemDiscardedError as exc:
            discards.append(Discard(chain_key=chain.key, reason=exc.reason, detail=str(exc)))
            logger.info("discarded chain %s: %s", chain.key, exc.reason)
    return items, discards
