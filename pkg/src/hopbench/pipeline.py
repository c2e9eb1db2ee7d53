"""Resumable pipeline stages over a single run directory.

Each stage validates its upstream artifacts (by presence and manifest
digest), computes, writes outputs atomically, and records itself in the run
manifest. Re-running an unchanged stage is a no-op; a changed config digest
is refused without --force. Artifacts carry no timestamps, so identical
configs and seeds reproduce byte-identical files."""

from __future__ import annotations

import json
import logging
import os
import re
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .adjudicate import adjudicate_quality
from .chains import MiningLimits, ReasoningChain, mine_chains, sample_hard_negative
from .config import PipelineConfig
from .corpus import (
    Chunk,
    Document,
    Sentence,
    SentenceStore,
    consecutive_distances,
    load_document,
    nearest_rank_percentile,
    semantic_chunk,
    split_sentences,
)
from .errors import (
    AdjudicationError,
    DependencyError,
    NoHardNegativeError,
    ValidationError,
)
from .evaluation import (
    EvalOutcome,
    behavioral_report,
    evaluate_dataset,
    make_mock_eval_transport,
    RagAwareEvalTransport,
)
from .extract import extract_tree
from .jsonl import IncrementalWriter, load, snapshot
from .kg import (
    Entity,
    Evidence,
    KnowledgeGraph,
    Triplet,
    apply_frequencies,
    assemble_graph,
    load_stoplist,
    shatter,
)
from .manifest import RunManifest
from .providers import (
    ChatService,
    EmbeddingService,
    EmbeddingVector,
    HttpChatTransport,
    HttpEmbeddingTransport,
    MockChatTransport,
    MockEmbeddingTransport,
    ResponseCache,
    parallel_map,
)
from .rag import CorpusIndex, RagContext, RetrievalConfig, TokenOverlapReranker, build_rag_context
from .seeding import derive_seed
from .synthesis import QAItem, synthesize_dataset
from .topology import shatter_sweep, topology_report
from .tree import SummaryTree, SummaryTreeNode, TreeBuildConfig, build_summary_tree

logger = logging.getLogger(__name__)

ARTIFACT_PRODUCERS = {
    "documents.jsonl": "ingest",
    "sentences.jsonl": "ingest",
    "chunks.jsonl": "chunk",
    "tree.jsonl": "tree",
    "gmm_report.json": "tree",
    "graph_raw.jsonl": "extract",
    "graph.jsonl": "shatter",
    "topology_report.json": "shatter",
    "chains.jsonl": "mine",
    "dataset.jsonl": "synthesize",
    "discards.jsonl": "synthesize",
    "adjudications.jsonl": "adjudicate",
    "stats_report.json": "stats",
}


# ---------------------------------------------------------------------------
# Provider wiring
# ---------------------------------------------------------------------------


def make_chat_service(config: PipelineConfig) -> ChatService:
    cache = ResponseCache(config.cache_dir) if config.cache_dir else None
    if config.provider_mode == "mock":
        return ChatService(MockChatTransport(seed=config.seed), cache=cache)
    return ChatService(HttpChatTransport(config.chat_base_url, config.api_key_env), cache=cache)


def make_embedding_service(config: PipelineConfig) -> EmbeddingService:
    cache = ResponseCache(config.cache_dir) if config.cache_dir else None
    if config.provider_mode == "mock":
        return EmbeddingService(
            MockEmbeddingTransport(config.mock_embed_dim, seed=config.seed), cache=cache
        )
    return EmbeddingService(
        HttpEmbeddingTransport(config.embed_base_url, config.embed_model, config.api_key_env),
        cache=cache,
    )


def make_adjudication_ensemble(config: PipelineConfig) -> tuple[list[ChatService], list[str]]:
    services = []
    for name in config.adjudication_ensemble:
        if config.provider_mode == "mock":
            services.append(ChatService(MockChatTransport(seed=derive_seed(config.seed, "judge", name))))
        else:
            services.append(ChatService(HttpChatTransport(config.chat_base_url, config.api_key_env)))
    return services, list(config.adjudication_ensemble)


# ---------------------------------------------------------------------------
# Record conversion
# ---------------------------------------------------------------------------


def _embedding_to_record(vector: EmbeddingVector) -> dict:
    return {
        "values": list(vector.values),
        "dimension": vector.dimension,
        "source_text_hash": vector.source_text_hash,
    }


def _embedding_from_record(record: dict) -> EmbeddingVector:
    return EmbeddingVector(
        values=tuple(record["values"]),
        dimension=record["dimension"],
        source_text_hash=record["source_text_hash"],
    )


def sentence_to_record(sentence: Sentence) -> dict:
    return {
        "doc_id": sentence.doc_id,
        "page_number": sentence.page_number,
        "sentence_index": sentence.sentence_index,
        "text": sentence.text,
    }


def sentence_from_record(record: dict) -> Sentence:
    return Sentence(
        doc_id=record["doc_id"],
        page_number=record["page_number"],
        sentence_index=record["sentence_index"],
        text=record["text"],
    )


def chunk_to_record(chunk: Chunk) -> dict:
    return {
        "chunk_id": chunk.chunk_id,
        "doc_id": chunk.doc_id,
        "sentence_span": list(chunk.sentence_span),
        "text": chunk.text,
        "page_anchor": chunk.page_anchor,
        "embedding": _embedding_to_record(chunk.embedding),
    }


def chunk_from_record(record: dict) -> Chunk:
    return Chunk(
        chunk_id=record["chunk_id"],
        doc_id=record["doc_id"],
        sentence_span=tuple(record["sentence_span"]),
        text=record["text"],
        page_anchor=record["page_anchor"],
        embedding=_embedding_from_record(record["embedding"]),
    )


def tree_node_to_record(node: SummaryTreeNode) -> dict:
    return {
        "node_id": node.node_id,
        "level": node.level,
        "member_ids": {k: round(v, 9) for k, v in sorted(node.member_ids.items())},
        "summary_text": node.summary_text,
        "cluster_model_ref": node.cluster_model_ref,
    }


def tree_from_records(records: list[dict]) -> SummaryTree:
    tree = SummaryTree()
    for record in records:
        tree.add(
            SummaryTreeNode(
                node_id=record["node_id"],
                level=record["level"],
                member_ids=dict(record["member_ids"]),
                summary_text=record["summary_text"],
                cluster_model_ref=record.get("cluster_model_ref"),
            )
        )
    tree.validate()
    return tree


def _evidence_to_record(evidence: Evidence) -> dict:
    return {
        "chunk_id": evidence.chunk_id,
        "sentence_span": list(evidence.sentence_span),
        "page_anchor": evidence.page_anchor,
    }


def _evidence_from_record(record: dict) -> Evidence:
    return Evidence(
        chunk_id=record["chunk_id"],
        sentence_span=tuple(record["sentence_span"]),
        page_anchor=record["page_anchor"],
    )


def graph_to_records(graph: KnowledgeGraph, frequency_unit: str) -> list[dict]:
    records = [
        {
            "kind": "meta",
            "view": graph.view,
            "k_threshold": graph.k_threshold,
            "stoplist_id": graph.stoplist_id,
            "frequency_unit": frequency_unit,
        }
    ]
    for entity_id in sorted(graph.entities):
        entity = graph.entities[entity_id]
        records.append(
            {
                "kind": "entity",
                "entity_id": entity.entity_id,
                "canonical_name": entity.canonical_name,
                "aliases": sorted(entity.aliases),
                "frequency": entity.frequency,
                "is_pruned": entity.is_pruned,
                "prune_reason": entity.prune_reason,
            }
        )
    for edge in graph.edges:
        records.append(
            {
                "kind": "edge",
                "head": edge.head,
                "relation": edge.relation,
                "tail": edge.tail,
                "evidence": _evidence_to_record(edge.evidence),
                "confidence": edge.confidence,
                "source_node_id": edge.source_node_id,
            }
        )
    return records


def graph_from_records(records: list[dict]) -> tuple[KnowledgeGraph, str]:
    """Rebuild a graph (entities keep their ids and prune flags; all stored
    edges are attached). Returns (graph, frequency_unit)."""
    meta = records[0]
    if meta.get("kind") != "meta":
        raise ValidationError("graph snapshot must start with a meta record")
    graph = KnowledgeGraph(
        view=meta.get("view", "original"),
        k_threshold=meta.get("k_threshold"),
        stoplist_id=meta.get("stoplist_id", ""),
    )
    from .corpus import normalize_for_match

    for record in records[1:]:
        if record["kind"] == "entity":
            entity = Entity(
                entity_id=record["entity_id"],
                canonical_name=record["canonical_name"],
                aliases=set(record["aliases"]),
                frequency=record["frequency"],
                is_pruned=record["is_pruned"],
                prune_reason=record.get("prune_reason"),
            )
            graph.entities[entity.entity_id] = entity
            graph._out.setdefault(entity.entity_id, [])
            graph._in.setdefault(entity.entity_id, [])
            for surface in entity.surfaces():
                graph._surface_index.setdefault(normalize_for_match(surface), entity.entity_id)
        elif record["kind"] == "edge":
            graph.add_edge(
                Triplet(
                    head=record["head"],
                    relation=record["relation"],
                    tail=record["tail"],
                    evidence=_evidence_from_record(record["evidence"]),
                    confidence=record["confidence"],
                    source_node_id=record.get("source_node_id", ""),
                )
            )
    return graph, meta.get("frequency_unit", "tree_nodes")


def shattered_from_flags(annotated: KnowledgeGraph) -> KnowledgeGraph:
    """Materialize the shattered view from stored prune flags."""
    view = annotated.copy(view="shattered")
    view.edges = []
    view._out = {entity_id: [] for entity_id in view.entities}
    view._in = {entity_id: [] for entity_id in view.entities}
    for edge in annotated.edges:
        if view.entities[edge.head].is_pruned or view.entities[edge.tail].is_pruned:
            continue
        view.add_edge(edge)
    return view


def original_from_flags(annotated: KnowledgeGraph) -> KnowledgeGraph:
    """Materialize the original view: same edges, prune flags cleared."""
    view = annotated.copy(view="original")
    for entity in view.entities.values():
        entity.is_pruned = False
        entity.prune_reason = None
    return view


def chain_to_record(chain: ReasoningChain) -> dict:
    return {
        "a": chain.a,
        "e_bridge": chain.e_bridge,
        "b": chain.b,
        "relation_hop1": chain.relation_hop1,
        "relation_hop2": chain.relation_hop2,
        "evidence_hop1": _evidence_to_record(chain.evidence_hop1),
        "evidence_hop2": _evidence_to_record(chain.evidence_hop2),
        "e_sib": chain.e_sib,
        "b_prime": chain.b_prime,
        "relation_sibling": chain.relation_sibling,
        "evidence_sibling": None
        if chain.evidence_sibling is None
        else _evidence_to_record(chain.evidence_sibling),
    }


def chain_from_record(record: dict) -> ReasoningChain:
    return ReasoningChain(
        a=record["a"],
        e_bridge=record["e_bridge"],
        b=record["b"],
        relation_hop1=record["relation_hop1"],
        relation_hop2=record["relation_hop2"],
        evidence_hop1=_evidence_from_record(record["evidence_hop1"]),
        evidence_hop2=_evidence_from_record(record["evidence_hop2"]),
        e_sib=record.get("e_sib"),
        b_prime=record.get("b_prime"),
        relation_sibling=record.get("relation_sibling"),
        evidence_sibling=None
        if record.get("evidence_sibling") is None
        else _evidence_from_record(record["evidence_sibling"]),
    )


def qa_item_to_record(item: QAItem) -> dict:
    return {
        "qa_id": item.qa_id,
        "language": item.language,
        "difficulty": item.difficulty,
        "clinical_task": item.clinical_task,
        "question": item.question,
        "options": list(item.options),
        "answer_index": item.answer_index,
        "hard_negative_index": item.hard_negative_index,
        "masked_entity": item.masked_entity,
        "rationale": item.rationale,
        "evidence_anchors": item.evidence_anchors,
        "chain_ref": item.chain_ref,
        "generation_metadata": item.generation_metadata,
    }


def qa_item_from_record(record: dict) -> QAItem:
    return QAItem(
        qa_id=record["qa_id"],
        language=record["language"],
        difficulty=record["difficulty"],
        clinical_task=record["clinical_task"],
        question=record["question"],
        options=list(record["options"]),
        answer_index=record["answer_index"],
        hard_negative_index=record["hard_negative_index"],
        masked_entity=record["masked_entity"],
        rationale=record["rationale"],
        evidence_anchors=record["evidence_anchors"],
        chain_ref=record["chain_ref"],
        generation_metadata=record.get("generation_metadata", {}),
    )


def outcome_from_record(record: dict) -> EvalOutcome:
    return EvalOutcome(
        model_id=record["model_id"],
        qa_id=record["qa_id"],
        mode=record["mode"],
        raw_response=record["raw_response"],
        parsed_choice=record["parsed_choice"],
        correct=record["correct"],
    )


# ---------------------------------------------------------------------------
# Stage plumbing
# ---------------------------------------------------------------------------


@dataclass
class StageResult:
    stage: str
    status: str  # ok | skipped
    outputs: dict[str, Path]
    stats: dict


@contextmanager
def run_lock(run_dir: Path):
    """One command at a time per run directory."""
    run_dir.mkdir(parents=True, exist_ok=True)
    lock_path = run_dir / ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ValidationError(
            f"run directory is locked ({lock_path}); another command may be running"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


def _write_json(path: Path, payload: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _producer_of(name: str) -> str:
    if name.startswith("outcomes_"):
        return "evaluate"
    if name.startswith("report_"):
        return "report"
    return ARTIFACT_PRODUCERS.get(name, "ingest")


def _check_inputs(run_dir: Path, names: list[str]) -> dict[str, Path]:
    inputs = {}
    for name in names:
        path = run_dir / name
        if not path.exists():
            producer = _producer_of(name)
            raise DependencyError(
                f"missing {name}; run `hopbench {producer}` first", required_command=producer
            )
        inputs[name] = path
    return inputs


def _stage(
    run_dir: str | Path,
    config: PipelineConfig,
    stage: str,
    input_names: list[str],
    output_names: list[str],
    compute: Callable[[dict[str, Path], dict[str, Path]], dict],
    force: bool = False,
) -> StageResult:
    run_dir = Path(run_dir)
    digest = config.digest()
    with run_lock(run_dir):
        manifest = RunManifest.load(run_dir)
        if manifest is None:
            manifest = RunManifest(run_id=f"run-{digest[:12]}", config_digest=digest)
        manifest.check_config(digest, force=force)

        inputs = _check_inputs(run_dir, input_names)
        outputs = {name: run_dir / name for name in output_names}
        if manifest.is_noop(stage, digest, inputs, outputs):
            logger.info("%s: inputs and outputs unchanged; no-op", stage)
            manifest.save(run_dir)
            return StageResult(stage=stage, status="skipped", outputs=outputs, stats={})

        started = time.time()
        stats = compute(inputs, outputs)
        manifest.record_stage(stage, digest, inputs, outputs, started, stats=stats)
        manifest.save(run_dir)
        return StageResult(stage=stage, status="ok", outputs=outputs, stats=stats)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def run_ingest(run_dir: str | Path, config: PipelineConfig, force: bool = False) -> StageResult:
    if not config.corpus_paths:
        raise ValidationError("config.corpus_paths is empty")

    def compute(_inputs, outputs):
        documents: list[Document] = []
        sentences: list[Sentence] = []
        for path in config.corpus_paths:
            document = load_document(path, language=config.language)
            documents.append(document)
            sentences.extend(split_sentences(document))
        doc_ids = [d.doc_id for d in documents]
        if len(set(doc_ids)) != len(doc_ids):
            raise ValidationError(f"duplicate doc ids in corpus: {doc_ids}")
        snapshot(
            [
                {
                    "doc_id": d.doc_id,
                    "language": d.language,
                    "source_path": d.source_path,
                    "pages": [p.page_number for p in d.pages],
                }
                for d in documents
            ],
            outputs["documents.jsonl"],
            schema="documents",
        )
        snapshot(
            [sentence_to_record(s) for s in sentences], outputs["sentences.jsonl"], schema="sentences"
        )
        return {"documents": len(documents), "sentences": len(sentences)}

    return _stage(run_dir, config, "ingest", [], ["documents.jsonl", "sentences.jsonl"], compute, force)


def run_chunk(run_dir: str | Path, config: PipelineConfig, force: bool = False) -> StageResult:
    embedder = make_embedding_service(config)

    def compute(inputs, outputs):
        sentences = [sentence_from_record(r) for r in load(inputs["sentences.jsonl"], "sentences")]
        by_doc: dict[str, list[Sentence]] = {}
        for sentence in sentences:
            by_doc.setdefault(sentence.doc_id, []).append(sentence)
        embeddings_by_doc = {
            doc_id: embedder.embed_texts([s.text for s in doc_sentences])
            for doc_id, doc_sentences in sorted(by_doc.items())
        }
        global_tau = None
        if config.global_threshold:
            all_distances = []
            for doc_id, doc_sentences in sorted(by_doc.items()):
                all_distances.extend(consecutive_distances(embeddings_by_doc[doc_id]))
            if all_distances:
                global_tau = nearest_rank_percentile(all_distances, config.chunk_percentile)
        chunks: list[Chunk] = []
        for doc_id, doc_sentences in sorted(by_doc.items()):
            chunks.extend(
                semantic_chunk(
                    doc_sentences,
                    embeddings_by_doc[doc_id],
                    percentile=config.chunk_percentile,
                    max_sentences=config.max_sentences_per_chunk,
                    threshold=global_tau,
                )
            )
        snapshot([chunk_to_record(c) for c in chunks], outputs["chunks.jsonl"], schema="chunks")
        return {"chunks": len(chunks), "global_threshold": global_tau}

    return _stage(run_dir, config, "chunk", ["sentences.jsonl"], ["chunks.jsonl"], compute, force)


def run_tree(run_dir: str | Path, config: PipelineConfig, force: bool = False) -> StageResult:
    chat = make_chat_service(config)
    embedder = make_embedding_service(config)

    def compute(inputs, outputs):
        chunks = [chunk_from_record(r) for r in load(inputs["chunks.jsonl"], "chunks")]
        tree = build_summary_tree(
            chunks,
            chat,
            embedder,
            TreeBuildConfig(
                target_dim=config.target_dim,
                k_max=config.gmm_k_max,
                n_restarts=config.gmm_restarts,
                membership_floor=config.membership_floor,
                max_levels=config.max_levels,
                chat_model=config.chat_model,
            ),
            seed=derive_seed(config.seed, "tree"),
        )
        ordered = sorted(tree.nodes.values(), key=lambda n: (n.level, n.node_id))
        snapshot([tree_node_to_record(n) for n in ordered], outputs["tree.jsonl"], schema="tree")
        _write_json(outputs["gmm_report.json"], {"levels": tree.level_reports})
        return {"nodes": len(tree.nodes), "levels": tree.max_level()}

    return _stage(run_dir, config, "tree", ["chunks.jsonl"], ["tree.jsonl", "gmm_report.json"], compute, force)


def run_extract(run_dir: str | Path, config: PipelineConfig, force: bool = False) -> StageResult:
    chat = make_chat_service(config)

    def compute(inputs, outputs):
        chunks = [chunk_from_record(r) for r in load(inputs["chunks.jsonl"], "chunks")]
        sentences = [sentence_from_record(r) for r in load(inputs["sentences.jsonl"], "sentences")]
        tree = tree_from_records(load(inputs["tree.jsonl"], "tree"))
        store = SentenceStore(sentences)
        raw, reports, failed = extract_tree(
            tree, chunks, chat, store, model_name=config.chat_model, seed=config.seed
        )
        graph, assembly = assemble_graph(
            raw, config.theta_schedule(), counting_unit=config.frequency_unit
        )
        snapshot(
            graph_to_records(graph, config.frequency_unit), outputs["graph_raw.jsonl"], schema="graph"
        )
        rejected = sum(r.rejected for r in reports)
        return {
            "raw_triplets": len(raw),
            "rejected_triplets": rejected,
            "failed_nodes": failed,
            "entities": len(graph.entities),
            "edges": len(graph.edges),
            "merged_aliases": assembly.merged_aliases,
            "dropped_self_loops": assembly.dropped_self_loops,
        }

    return _stage(
        run_dir,
        config,
        "extract",
        ["tree.jsonl", "chunks.jsonl", "sentences.jsonl"],
        ["graph_raw.jsonl"],
        compute,
        force,
    )


def run_shatter(run_dir: str | Path, config: PipelineConfig, force: bool = False) -> StageResult:
    def compute(inputs, outputs):
        graph, frequency_unit = graph_from_records(load(inputs["graph_raw.jsonl"], "graph"))
        stop_terms: set[str] = set()
        stoplist_id = ""
        if config.stoplist_path:
            stop_terms, stoplist_id = load_stoplist(config.stoplist_path)
        apply_frequencies(graph, frequency_unit)
        view = shatter(graph, config.k_threshold, stoplist=stop_terms, stoplist_id=stoplist_id)
        # Persist prune flags alongside the full original edge set so both
        # views can be materialized from one file.
        annotated = graph.copy()
        for entity_id, entity in view.entities.items():
            annotated.entities[entity_id].is_pruned = entity.is_pruned
            annotated.entities[entity_id].prune_reason = entity.prune_reason
        annotated.k_threshold = view.k_threshold
        annotated.stoplist_id = stoplist_id
        snapshot(
            graph_to_records(annotated, frequency_unit), outputs["graph.jsonl"], schema="graph"
        )
        report = {
            "k_threshold": "inf" if config.k_threshold is None else config.k_threshold,
            "stoplist_id": stoplist_id,
            "original": topology_report(graph).to_record(),
            "shattered": topology_report(view).to_record()
            if view.present_ids()
            else {"node_count": 0},
        }
        _write_json(outputs["topology_report.json"], report)
        pruned = [e for e in view.entities.values() if e.is_pruned]
        return {
            "pruned": len(pruned),
            "pruned_over_k": sum(1 for e in pruned if e.prune_reason == "over_k"),
            "pruned_stoplist": sum(1 for e in pruned if e.prune_reason == "stoplist"),
            "edges_kept": len(view.edges),
        }

    return _stage(
        run_dir,
        config,
        "shatter",
        ["graph_raw.jsonl"],
        ["graph.jsonl", "topology_report.json"],
        compute,
        force,
    )


def run_mine(run_dir: str | Path, config: PipelineConfig, force: bool = False) -> StageResult:
    def compute(inputs, outputs):
        annotated, _unit = graph_from_records(load(inputs["graph.jsonl"], "graph"))
        view = shattered_from_flags(annotated)
        limits = MiningLimits(per_source_cap=config.per_source_cap)
        mined = mine_chains(view, limits)
        completed: list[ReasoningChain] = []
        no_sibling = 0
        for chain in mined:
            try:
                completed.append(
                    sample_hard_negative(chain, view, derive_seed(config.seed, "sibling", chain.key))
                )
            except NoHardNegativeError:
                no_sibling += 1
        snapshot([chain_to_record(c) for c in completed], outputs["chains.jsonl"], schema="chains")
        return {"mined": len(mined), "completed": len(completed), "no_sibling": no_sibling}

    return _stage(run_dir, config, "mine", ["graph.jsonl"], ["chains.jsonl"], compute, force)


def run_synthesize(run_dir: str | Path, config: PipelineConfig, force: bool = False) -> StageResult:
    chat = make_chat_service(config)

    def compute(inputs, outputs):
        annotated, _unit = graph_from_records(load(inputs["graph.jsonl"], "graph"))
        view = shattered_from_flags(annotated)
        chains = [chain_from_record(r) for r in load(inputs["chains.jsonl"], "chains")]
        chunks = [chunk_from_record(r) for r in load(inputs["chunks.jsonl"], "chunks")]
        sentences = [sentence_from_record(r) for r in load(inputs["sentences.jsonl"], "sentences")]
        items, discards = synthesize_dataset(
            chains,
            view,
            {c.chunk_id: c for c in chunks},
            SentenceStore(sentences),
            chat,
            master_seed=config.seed,
            n_options=config.n_options,
            language=config.language,
            difficulty=config.difficulty,
            model_name=config.chat_model,
            temperature=config.synthesis_temperature,
        )
        snapshot([qa_item_to_record(i) for i in items], outputs["dataset.jsonl"], schema="dataset")
        snapshot(
            [{"chain_ref": d.chain_key, "reason": d.reason, "detail": d.detail} for d in discards],
            outputs["discards.jsonl"],
            schema="discards",
        )
        reasons: dict[str, int] = {}
        for discard in discards:
            reasons[discard.reason] = reasons.get(discard.reason, 0) + 1
        return {"items": len(items), "discards": len(discards), "discard_reasons": reasons}

    return _stage(
        run_dir,
        config,
        "synthesize",
        ["chains.jsonl", "graph.jsonl", "chunks.jsonl", "sentences.jsonl"],
        ["dataset.jsonl", "discards.jsonl"],
        compute,
        force,
    )


def run_adjudicate(run_dir: str | Path, config: PipelineConfig, force: bool = False) -> StageResult:
    ensemble, names = make_adjudication_ensemble(config)

    def compute(inputs, outputs):
        items = [qa_item_from_record(r) for r in load(inputs["dataset.jsonl"], "dataset")]

        def judge(item: QAItem):
            try:
                return adjudicate_quality(item, ensemble, names)
            except AdjudicationError as exc:
                logger.warning("%s", exc)
                return None

        verdicts = parallel_map(judge, items, max_workers=config.max_parallel)
        records = [v.to_record() for v in verdicts if v is not None]
        snapshot(records, outputs["adjudications.jsonl"], schema="adjudications")
        return {"scored": len(records), "unscored": len(items) - len(records)}

    return _stage(
        run_dir, config, "adjudicate", ["dataset.jsonl"], ["adjudications.jsonl"], compute, force
    )


def run_stats(run_dir: str | Path, config: PipelineConfig, force: bool = False) -> StageResult:
    from .textstats import compute_overlap_stats

    embedder = make_embedding_service(config)
    has_adjudications = (Path(run_dir) / "adjudications.jsonl").exists()
    input_names = ["dataset.jsonl", "chunks.jsonl", "sentences.jsonl"]
    if has_adjudications:
        input_names.append("adjudications.jsonl")

    def compute(inputs, outputs):
        items = [qa_item_from_record(r) for r in load(inputs["dataset.jsonl"], "dataset")]
        chunks = [chunk_from_record(r) for r in load(inputs["chunks.jsonl"], "chunks")]
        sentences = [sentence_from_record(r) for r in load(inputs["sentences.jsonl"], "sentences")]
        adjudications = None
        if has_adjudications:
            adjudications = {
                r["qa_id"]: r for r in load(inputs["adjudications.jsonl"], "adjudications")
            }
        stats = compute_overlap_stats(
            items,
            {c.chunk_id: c for c in chunks},
            SentenceStore(sentences),
            embedder,
            adjudications=adjudications,
        )
        payload = stats.to_record()
        payload["config_digest"] = config.digest()
        _write_json(outputs["stats_report.json"], payload)
        return {"total": stats.total, "excluded": stats.excluded}

    return _stage(
        run_dir,
        config,
        "stats",
        input_names,
        ["stats_report.json"],
        compute,
        force,
    )


def sanitize_model_id(model: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", model)


def outcomes_name(model: str, mode: str) -> str:
    return f"outcomes_{sanitize_model_id(model)}_{mode}.jsonl"


def build_eval_chat_service(
    config: PipelineConfig,
    model: str,
    items: list[QAItem],
    mode: str,
    golden_texts: dict[str, str] | None = None,
) -> ChatService:
    if model.startswith("mock:"):
        transport = make_mock_eval_transport(model, items, seed=config.seed)
        if mode == "rag" and golden_texts and model.split(":", 1)[1] in ("uniform", "hash"):
            transport = RagAwareEvalTransport(items, transport, golden_texts)
        return ChatService(transport)
    cache = ResponseCache(config.cache_dir) if config.cache_dir else None
    return ChatService(HttpChatTransport(config.chat_base_url, config.api_key_env), cache=cache)


def run_evaluate(
    run_dir: str | Path,
    config: PipelineConfig,
    model: str,
    mode: str = "zero_shot",
    force: bool = False,
) -> StageResult:
    if mode not in ("zero_shot", "rag"):
        raise ValidationError(f"unknown evaluation mode: {mode!r}")
    embedder = make_embedding_service(config)
    out_name = outcomes_name(model, mode)
    stage_name = f"evaluate:{sanitize_model_id(model)}:{mode}"

    def compute(inputs, outputs):
        items = [qa_item_from_record(r) for r in load(inputs["dataset.jsonl"], "dataset")]
        if not items:
            raise ValidationError("dataset is empty; nothing to evaluate")
        contexts: dict[str, RagContext] | None = None
        golden_texts: dict[str, str] = {}
        if mode == "rag":
            chunks = [chunk_from_record(r) for r in load(inputs["chunks.jsonl"], "chunks")]
            index = CorpusIndex(chunks)
            retrieval = RetrievalConfig(
                coarse_pool_size=config.coarse_pool,
                rerank_keep=config.rerank_keep,
                context_size=config.context_k,
            )
            reranker = TokenOverlapReranker() if config.use_reranker else None
            contexts = {}
            for item in items:
                context = build_rag_context(
                    item, index, embedder, retrieval, seed=config.seed, reranker=reranker
                )
                contexts[item.qa_id] = context
                golden_texts[item.qa_id] = context.documents[context.golden_position]

        out_path = outputs[out_name]
        done: set[str] = set()
        if out_path.exists():
            done = {r["qa_id"] for r in load(out_path, "outcomes")}
            if done:
                logger.info("resuming %s: %d outcomes already recorded", out_name, len(done))
        writer = IncrementalWriter(out_path, schema="outcomes")
        chat = build_eval_chat_service(config, model, items, mode, golden_texts)
        outcomes = evaluate_dataset(
            items,
            chat,
            model_id=model,
            mode=mode,
            contexts=contexts,
            outcome_sink=lambda o: writer.append(o.to_record()),
            skip_qa_ids=done,
        )
        return {"evaluated": len(outcomes), "resumed_existing": len(done)}

    input_names = ["dataset.jsonl"] + (["chunks.jsonl"] if mode == "rag" else [])
    return _stage(run_dir, config, stage_name, input_names, [out_name], compute, force)


def run_report(run_dir: str | Path, config: PipelineConfig, model: str, force: bool = False) -> StageResult:
    run_path = Path(run_dir)
    zero_name = outcomes_name(model, "zero_shot")
    rag_name = outcomes_name(model, "rag")
    report_name = f"report_{sanitize_model_id(model)}.json"
    stage_name = f"report:{sanitize_model_id(model)}"
    has_rag = (run_path / rag_name).exists()
    input_names = ["dataset.jsonl", zero_name] + ([rag_name] if has_rag else [])

    def compute(inputs, outputs):
        items = [qa_item_from_record(r) for r in load(inputs["dataset.jsonl"], "dataset")]
        zero = [outcome_from_record(r) for r in load(inputs[zero_name], "outcomes")]
        rag = None
        if has_rag:
            rag = [outcome_from_record(r) for r in load(inputs[rag_name], "outcomes")]
        report = behavioral_report(model, zero, items, rag_outcomes=rag)
        payload = report.to_record()
        payload["config_digest"] = config.digest()
        _write_json(outputs[report_name], payload)
        print(report.table())
        return {"total_errors": report.total_errors, "unparseable": report.unparseable_count}

    return _stage(run_dir, config, stage_name, input_names, [report_name], compute, force)


def run_shatter_sweep(
    run_dir: str | Path, config: PipelineConfig, ks: list[float | None], force: bool = False
) -> StageResult:
    def compute(inputs, outputs):
        graph, frequency_unit = graph_from_records(load(inputs["graph_raw.jsonl"], "graph"))
        apply_frequencies(graph, frequency_unit)
        stop_terms: set[str] = set()
        stoplist_id = ""
        if config.stoplist_path:
            stop_terms, stoplist_id = load_stoplist(config.stoplist_path)
        sweep = shatter_sweep(graph, ks, stoplist=stop_terms, stoplist_id=stoplist_id)
        report_path = outputs["topology_report.json"]
        payload = {}
        if report_path.exists():
            payload = json.loads(report_path.read_text(encoding="utf-8"))
        payload["sweep"] = sweep.to_record()
        _write_json(report_path, payload)
        return {"k_values": ["inf" if k is None else k for k in ks]}

    return _stage(
        run_dir, config, "shatter-sweep", ["graph_raw.jsonl"], ["topology_report.json"], compute, force
    )
