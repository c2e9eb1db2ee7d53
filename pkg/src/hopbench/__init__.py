"""hopbench: build a topology-regularized knowledge graph from raw text,
synthesize shortcut-resistant multi-hop QA items, and evaluate models with
behavioral shortcut diagnostics."""

__version__ = "0.1.0"
