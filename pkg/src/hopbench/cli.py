"""Command-line pipeline driver.

Commands map one-to-one to pipeline stages and share a single YAML config.
Exit codes: 0 success, 2 validation error, 3 missing dependency or stale
run, 4 provider failure."""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import pipeline
from .config import PipelineConfig, dump_config, load_config
from .errors import HopbenchError

logger = logging.getLogger(__name__)


def _finish(result: pipeline.StageResult) -> None:
    if result.status == "skipped":
        click.echo(f"{result.stage}: up to date (no-op)")
    else:
        click.echo(f"{result.stage}: ok {result.stats}")


def _run(action) -> None:
    try:
        action()
    except HopbenchError as error:
        click.echo(f"error: {error}", err=True)
        sys.exit(error.exit_code)


def _context(ctx: click.Context) -> tuple[Path, PipelineConfig, bool]:
    obj = ctx.obj or {}
    if not obj.get("config_path") or not obj.get("run_dir"):
        raise click.UsageError("this command needs --config and --run-dir (pass them before the subcommand)")
    config = load_config(obj["config_path"])
    return Path(obj["run_dir"]), config, obj.get("force", False)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--run-dir", "run_dir", type=click.Path(file_okay=False), default=None)
@click.option("--force", is_flag=True, help="Proceed despite a config digest mismatch.")
@click.option("--verbose", is_flag=True)
@click.pass_context
def main(ctx: click.Context, config_path, run_dir, force: bool, verbose: bool):
    """Corpus-to-benchmark pipeline: build the graph, synthesize items, evaluate models."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    ctx.ensure_object(dict)
    ctx.obj.update(config_path=config_path, run_dir=run_dir, force=force)


def _stage_command(name: str, runner, doc: str):
    @main.command(name=name, help=doc)
    @click.pass_context
    def command(ctx: click.Context):
        def action():
            run_dir, config, force = _context(ctx)
            _finish(runner(run_dir, config, force=force))

        _run(action)

    return command


_stage_command("ingest", pipeline.run_ingest, "Load corpus files and split them into sentences.")
_stage_command("tree", pipeline.run_tree, "Build the hierarchical soft-cluster summary tree.")
_stage_command("extract", pipeline.run_extract, "Extract and align triplets into the raw graph.")
_stage_command("shatter", pipeline.run_shatter, "Prune hub entities and write both graph views.")
_stage_command("mine", pipeline.run_mine, "Mine 2-hop chains and sample hard negatives.")
_stage_command("synthesize", pipeline.run_synthesize, "Generate masked vignette items.")
_stage_command("adjudicate", pipeline.run_adjudicate, "Score items with the quality ensemble.")
_stage_command("stats", pipeline.run_stats, "Compute dataset lexical and similarity statistics.")


@main.command()
@click.option(
    "--global-threshold/--per-document-threshold",
    "global_threshold",
    default=None,
    help="Compute the breakpoint percentile over the whole corpus instead of per document.",
)
@click.pass_context
def chunk(ctx, global_threshold):
    """Embed sentences and cut percentile-threshold chunks."""

    def action():
        run_dir, config, force = _context(ctx)
        if global_threshold is not None:
            config.global_threshold = global_threshold
        _finish(pipeline.run_chunk(run_dir, config, force=force))

    _run(action)


@main.command()
@click.option("--model", required=True, help="Chat model name, or mock:{oracle,adversarial,uniform,hash}.")
@click.option("--mode", type=click.Choice(["zero_shot", "rag"]), default="zero_shot")
@click.option("--context-k", type=int, default=None, help="Override context document count.")
@click.option("--coarse-pool", type=int, default=None, help="Override coarse retrieval pool size.")
@click.option("--rerank-keep", type=int, default=None, help="Override rerank keep count.")
@click.option("--seed", type=int, default=None, help="Override the master seed.")
@click.pass_context
def evaluate(ctx, model: str, mode: str, context_k, coarse_pool, rerank_keep, seed):
    """Run multiple-choice evaluation and persist outcomes incrementally."""

    def action():
        run_dir, config, force = _context(ctx)
        for field_name, value in (
            ("context_k", context_k),
            ("coarse_pool", coarse_pool),
            ("rerank_keep", rerank_keep),
            ("seed", seed),
        ):
            if value is not None:
                setattr(config, field_name, value)
        config.validate()
        _finish(pipeline.run_evaluate(run_dir, config, model, mode, force=force))

    _run(action)


@main.command()
@click.option("--model", required=True)
@click.pass_context
def report(ctx, model: str):
    """Aggregate outcomes into the behavioral report for one model."""

    def action():
        run_dir, config, force = _context(ctx)
        _finish(pipeline.run_report(run_dir, config, model, force=force))

    _run(action)


@main.command(name="shatter-sweep")
@click.option("--k", "k_spec", default="10,50,100,inf", show_default=True, help="Comma-separated thresholds.")
@click.pass_context
def shatter_sweep(ctx, k_spec: str):
    """Topology ablation across frequency thresholds."""

    def parse_k(token: str) -> float | None:
        token = token.strip().lower()
        if token in ("inf", "none", ""):
            return None
        return float(token)

    def action():
        run_dir, config, force = _context(ctx)
        ks = [parse_k(token) for token in k_spec.split(",")]
        _finish(pipeline.run_shatter_sweep(run_dir, config, ks, force=force))

    _run(action)


@main.command(name="write-toy-config")
@click.argument("path", type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=7, show_default=True)
def write_toy_config(path: str, seed: int):
    """Write a config pointing at the bundled toy corpus (mock providers)."""
    from .toydata import toy_config

    dump_config(toy_config(seed=seed), path)
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
