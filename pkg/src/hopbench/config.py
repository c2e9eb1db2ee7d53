"""Single-file pipeline configuration with a schema-validated loader.

The config is a flat YAML mapping; every report embeds its digest so any
artifact can be traced to the exact settings that produced it. The master
seed fully determines all stage and per-item seeds via the derivation rule
in ``seeding``."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .align import ThetaSchedule
from .errors import ValidationError
from .providers import canonical_json
from .seeding import stable_text_digest


@dataclass
class PipelineConfig:
    # corpus
    corpus_paths: list[str] = field(default_factory=list)
    language: str = "EN"
    # chunking
    chunk_percentile: float = 95.0
    global_threshold: bool = False
    max_sentences_per_chunk: int = 64
    # graph
    k_threshold: float | None = 50  # None = unbounded
    stoplist_path: str | None = None
    frequency_unit: str = "tree_nodes"
    theta_steps: list[list[int]] = field(default_factory=lambda: [[3, 0], [7, 1], [12, 2]])
    theta_above: int = 3
    # hierarchy
    target_dim: int = 10
    gmm_k_max: int = 50
    gmm_restarts: int = 4
    membership_floor: float = 0.10
    max_levels: int = 4
    # synthesis
    n_options: int = 4
    per_source_cap: int | None = 8
    synthesis_temperature: float = 0.7
    difficulty: str = "hard"
    # evaluation / retrieval
    context_k: int = 5
    coarse_pool: int = 50
    rerank_keep: int = 15
    use_reranker: bool = False
    # providers
    provider_mode: str = "mock"  # mock | http
    chat_base_url: str = ""
    embed_base_url: str = ""
    rerank_base_url: str = ""
    chat_model: str = "default"
    embed_model: str = "default"
    api_key_env: str = "HOPBENCH_API_KEY"
    mock_embed_dim: int = 32
    max_parallel: int = 1
    cache_dir: str | None = None
    adjudication_ensemble: list[str] = field(default_factory=lambda: ["judge-a", "judge-b", "judge-c"])
    # run
    seed: int = 0

    def theta_schedule(self) -> ThetaSchedule:
        return ThetaSchedule(
            steps=tuple((int(a), int(b)) for a, b in self.theta_steps), above=self.theta_above
        )

    def validate(self) -> None:
        if self.language not in ("EN", "ZH"):
            raise ValidationError(f"language must be EN or ZH, got {self.language!r}")
        if not 0 < self.chunk_percentile <= 100:
            raise ValidationError("chunk_percentile must be in (0, 100]")
        if self.max_sentences_per_chunk < 1:
            raise ValidationError("max_sentences_per_chunk must be >= 1")
        if self.k_threshold is not None and self.k_threshold < 1:
            raise ValidationError("k_threshold must be >= 1 (or inf)")
        if self.frequency_unit not in ("tree_nodes", "mentions"):
            raise ValidationError("frequency_unit must be tree_nodes or mentions")
        if self.target_dim < 1:
            raise ValidationError("target_dim must be >= 1")
        if self.gmm_k_max < 1 or self.gmm_restarts < 1:
            raise ValidationError("gmm_k_max and gmm_restarts must be >= 1")
        if not 0 <= self.membership_floor < 1:
            raise ValidationError("membership_floor must be in [0, 1)")
        if self.max_levels < 1:
            raise ValidationError("max_levels must be >= 1")
        if self.n_options < 3:
            raise ValidationError("n_options must be >= 3")
        if self.per_source_cap is not None and self.per_source_cap < 1:
            raise ValidationError("per_source_cap must be >= 1 or null")
        if self.synthesis_temperature < 0:
            raise ValidationError("synthesis_temperature must be >= 0")
        if self.difficulty not in ("easy", "hard"):
            raise ValidationError("difficulty must be easy or hard")
        if self.context_k < 1:
            raise ValidationError("context_k must be >= 1")
        if self.coarse_pool < self.context_k:
            raise ValidationError("coarse_pool must be >= context_k")
        if self.rerank_keep < 1:
            raise ValidationError("rerank_keep must be >= 1")
        if self.provider_mode not in ("mock", "http"):
            raise ValidationError("provider_mode must be mock or http")
        if self.provider_mode == "http" and not (self.chat_base_url and self.embed_base_url):
            raise ValidationError("http provider mode requires chat_base_url and embed_base_url")
        if self.mock_embed_dim < 2:
            raise ValidationError("mock_embed_dim must be >= 2")
        if self.max_parallel < 1:
            raise ValidationError("max_parallel must be >= 1")
        if not self.adjudication_ensemble:
            raise ValidationError("adjudication_ensemble must name at least one member")
        self.theta_schedule()  # validates the step shape

    def to_record(self) -> dict:
        record = asdict(self)
        if record["k_threshold"] is not None and math.isinf(record["k_threshold"]):
            record["k_threshold"] = None
        return record

    def digest(self) -> str:
        return stable_text_digest(canonical_json(self.to_record()))


_KNOWN_KEYS = set(PipelineConfig.__dataclass_fields__)


def load_config(path: str | Path) -> PipelineConfig:
    """Read and validate the YAML config; unknown keys are rejected."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: config must be a mapping")
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        raise ValidationError(f"{path}: unknown config keys: {sorted(unknown)}")
    if "k_threshold" in raw and raw["k_threshold"] in ("inf", "null", None):
        raw["k_threshold"] = None
    config = PipelineConfig(**raw)
    config.validate()
    return config


def dump_config(config: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_record(), sort_keys=True), encoding="utf-8")
