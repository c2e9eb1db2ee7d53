"""Retrieval-augmented context assembly.

Two-stage retrieval: a coarse cosine pass over the chunk index picks a
candidate pool, an optional reranker keeps the most relevant subset, and the
final context embeds the golden paragraph (the hop evidence that names the
masked bridge) at a seeded-random position among the top-ranked distractor
passages."""

from __future__ import annotations

import os
import random
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
import requests

from .corpus import Chunk
from .errors import StageError, ValidationError
from .providers import EmbeddingService
from .seeding import derive_seed
from .synthesis import QAItem
from .textstats import tokenize

DEFAULT_COARSE_POOL = 50
DEFAULT_RERANK_KEEP = 15
DEFAULT_CONTEXT_SIZE = 5


@dataclass(frozen=True)
class RetrievalConfig:
    coarse_pool_size: int = DEFAULT_COARSE_POOL
    rerank_keep: int = DEFAULT_RERANK_KEEP
    context_size: int = DEFAULT_CONTEXT_SIZE

    def __post_init__(self):
        if self.context_size < 1:
            raise ValidationError("context_size must be >= 1")
        if self.rerank_keep < 1 or self.coarse_pool_size < 1:
            raise ValidationError("retrieval pool sizes must be >= 1")


@dataclass
class RagContext:
    qa_id: str
    documents: list[str]
    golden_position: int
    retrieval_config: dict

    def to_record(self) -> dict:
        return {
            "qa_id": self.qa_id,
            "documents": self.documents,
            "golden_position": self.golden_position,
            "retrieval_config": self.retrieval_config,
        }


class Reranker(Protocol):
    provider_id: str

    def scores(self, query: str, passages: Sequence[str]) -> list[float]: ...


class TokenOverlapReranker:
    """Offline reranker: scores passages by query-token overlap."""

    provider_id = "rerank:token-overlap"

    def scores(self, query: str, passages: Sequence[str]) -> list[float]:
        query_tokens = set(tokenize(query))
        out = []
        for passage in passages:
            tokens = set(tokenize(passage))
            out.append(len(query_tokens & tokens) / (len(query_tokens) or 1))
        return out


class HttpReranker:
    """Cross-encoder rerank endpoint: POST {query, documents} -> {scores}."""

    def __init__(self, base_url: str, model_name: str = "default", api_key_env: str = "HOPBENCH_API_KEY"):
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.api_key_env = api_key_env
        self.provider_id = f"rerank:http:{self.base_url}:{model_name}"

    def scores(self, query: str, passages: Sequence[str]) -> list[float]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        response = requests.post(
            f"{self.base_url}/rerank",
            json={"model": self.model_name, "query": query, "documents": list(passages)},
            headers=headers,
            timeout=60,
        )
        response.raise_for_status()
        return [float(s) for s in response.json()["scores"]]


class CorpusIndex:
    """Chunk embeddings stacked for cosine ranking."""

    def __init__(self, chunks: list[Chunk]):
        if not chunks:
            raise ValidationError("corpus index needs at least one chunk")
        self.chunks = list(chunks)
        matrix = np.stack([c.embedding.as_array() for c in chunks])
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        self._matrix = matrix / norms
        self._by_id = {c.chunk_id: c for c in chunks}

    def __len__(self) -> int:
        return len(self.chunks)

    def chunk(self, chunk_id: str) -> Chunk | None:
        return self._by_id.get(chunk_id)

    def rank(self, query_vector: np.ndarray, top_k: int) -> list[Chunk]:
        query = np.asarray(query_vector, dtype=np.float64)
        norm = np.linalg.norm(query)
        if norm > 0:
            query = query / norm
        scores = self._matrix @ query
        order = np.argsort(-scores, kind="stable")[:top_k]
        return [self.chunks[int(i)] for i in order]


def build_rag_context(
    item: QAItem,
    index: CorpusIndex,
    embedder: EmbeddingService,
    config: RetrievalConfig = RetrievalConfig(),
    seed: int = 0,
    reranker: Reranker | None = None,
) -> RagContext:
    """Assemble the k-document context with the golden paragraph embedded.

    The golden paragraph is the hop-2 evidence chunk (it states the masked
    bridge and the target). The remaining k-1 slots take the highest-ranked
    non-golden passages; the insertion position is seeded-uniform."""
    k = config.context_size
    if len(index) < k:
        raise ValidationError(f"corpus has {len(index)} chunks, fewer than context size {k}")

    golden_anchor = item.evidence_anchors[-1]
    golden_chunk = index.chunk(golden_anchor["chunk_id"])
    if golden_chunk is None:
        raise StageError(f"{item.qa_id}: golden paragraph {golden_anchor['chunk_id']} unresolvable")
    golden_text = golden_chunk.text

    query_vector = embedder.embed_texts([item.question])[0].as_array()
    candidates = index.rank(query_vector, config.coarse_pool_size)
    if reranker is not None:
        scores = reranker.scores(item.question, [c.text for c in candidates])
        ranked = [c for _, c in sorted(zip(scores, candidates), key=lambda t: -t[0])]
    else:
        ranked = candidates
    kept = ranked[: config.rerank_keep]

    distractors = [c for c in kept if c.chunk_id != golden_chunk.chunk_id]
    if len(distractors) < k - 1:
        extras = [
            c
            for c in index.chunks
            if c.chunk_id != golden_chunk.chunk_id and all(c.chunk_id != d.chunk_id for d in distractors)
        ]
        distractors.extend(extras)
    documents = [c.text for c in distractors[: k - 1]]

    rng = random.Random(derive_seed(seed, "golden-position", item.qa_id))
    golden_position = rng.randrange(k)
    documents.insert(golden_position, golden_text)

    return RagContext(
        qa_id=item.qa_id,
        documents=documents,
        golden_position=golden_position,
        retrieval_config={
            "coarse_pool_size": config.coarse_pool_size,
            "rerank_keep": config.rerank_keep,
            "context_size": k,
            "reranker": getattr(reranker, "provider_id", None),
        },
    )
