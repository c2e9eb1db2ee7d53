from __future__ import annotations

import json

import pytest
import yaml
from click.testing import CliRunner

from hopbench import pipeline
from hopbench.cli import main
from hopbench.config import PipelineConfig, dump_config, load_config
from hopbench.errors import DependencyError, StaleRunError, ValidationError
from hopbench.toydata import toy_config


@pytest.fixture
def toy_yaml(tmp_path):
    path = tmp_path / "toy.yaml"
    dump_config(toy_config(seed=7), path)
    return path


def invoke(args, **kwargs):
    return CliRunner().invoke(main, args, catch_exceptions=False, **kwargs)


# -- config loader ------------------------------------------------------------


def test_config_round_trip(toy_yaml):
    config = load_config(toy_yaml)
    assert config.chunk_percentile == 95.0
    assert config.k_threshold == 50
    assert config.seed == 7


def test_config_digest_stable_and_sensitive(toy_yaml):
    first = load_config(toy_yaml)
    second = load_config(toy_yaml)
    assert first.digest() == second.digest()
    second.seed = 8
    assert first.digest() != second.digest()


def test_unknown_config_key_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("corpus_paths: []\nmystery_knob: 3\n", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_config(path)


def test_out_of_range_values_rejected():
    config = PipelineConfig(chunk_percentile=0)
    with pytest.raises(ValidationError):
        config.validate()
    config = PipelineConfig(n_options=2)
    with pytest.raises(ValidationError):
        config.validate()
    config = PipelineConfig(provider_mode="http")  # missing endpoints
    with pytest.raises(ValidationError):
        config.validate()


def test_inf_threshold_parses_to_none(tmp_path):
    path = tmp_path / "inf.yaml"
    record = toy_config().to_record()
    record["k_threshold"] = "inf"
    path.write_text(yaml.safe_dump(record), encoding="utf-8")
    assert load_config(path).k_threshold is None


# -- stage ordering and idempotence ---------------------------------------------


def test_mine_before_shatter_names_missing_command(tmp_path):
    config = toy_config(seed=7)
    with pytest.raises(DependencyError) as excinfo:
        pipeline.run_mine(tmp_path / "run", config)
    assert excinfo.value.required_command == "shatter"
    assert "shatter" in str(excinfo.value)


def test_cli_dependency_error_exit_code(toy_yaml, tmp_path):
    result = invoke(
        ["--config", str(toy_yaml), "--run-dir", str(tmp_path / "run"), "mine"]
    )
    assert result.exit_code == 3
    assert "shatter" in result.output


def test_report_before_evaluate_names_evaluate(toy_yaml, tmp_path):
    run_dir = tmp_path / "run"
    config = load_config(toy_yaml)
    for fn in (
        pipeline.run_ingest,
        pipeline.run_chunk,
        pipeline.run_tree,
        pipeline.run_extract,
        pipeline.run_shatter,
        pipeline.run_mine,
        pipeline.run_synthesize,
    ):
        fn(run_dir, config)
    with pytest.raises(DependencyError) as excinfo:
        pipeline.run_report(run_dir, config, "mock:oracle")
    assert excinfo.value.required_command == "evaluate"


def test_cli_invalid_config_exit_code(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("chunk_percentile: 250\n", encoding="utf-8")
    result = invoke(["--config", str(bad), "--run-dir", str(tmp_path / "run"), "ingest"])
    assert result.exit_code == 2
    assert "chunk_percentile" in result.output


def test_rerunning_unchanged_stage_is_noop(toy_yaml, tmp_path):
    run_dir = tmp_path / "run"
    config = load_config(toy_yaml)
    first = pipeline.run_ingest(run_dir, config)
    assert first.status == "ok"
    digest_before = (run_dir / "sentences.jsonl").read_bytes()
    second = pipeline.run_ingest(run_dir, config)
    assert second.status == "skipped"
    assert (run_dir / "sentences.jsonl").read_bytes() == digest_before


def test_stale_config_digest_refused_without_force(toy_yaml, tmp_path):
    run_dir = tmp_path / "run"
    config = load_config(toy_yaml)
    pipeline.run_ingest(run_dir, config)
    changed = load_config(toy_yaml)
    changed.seed = 99
    with pytest.raises(StaleRunError):
        pipeline.run_chunk(run_dir, changed)
    result = pipeline.run_chunk(run_dir, changed, force=True)
    assert result.status == "ok"


def test_run_lock_blocks_concurrent_commands(toy_yaml, tmp_path):
    run_dir = tmp_path / "run"
    run_dir.mkdir()
    (run_dir / ".lock").write_text("123", encoding="utf-8")
    config = load_config(toy_yaml)
    with pytest.raises(ValidationError):
        pipeline.run_ingest(run_dir, config)


def test_cli_full_toy_pipeline(toy_yaml, tmp_path):
    run_dir = tmp_path / "run"
    base = ["--config", str(toy_yaml), "--run-dir", str(run_dir)]
    for command in ("ingest", "chunk", "tree", "extract", "shatter", "mine", "synthesize"):
        result = invoke(base + [command])
        assert result.exit_code == 0, f"{command}: {result.output}"
    result = invoke(base + ["evaluate", "--model", "mock:oracle", "--mode", "zero_shot"])
    assert result.exit_code == 0
    result = invoke(base + ["report", "--model", "mock:oracle"])
    assert result.exit_code == 0
    report = json.loads((run_dir / "report_mock-oracle.json").read_text(encoding="utf-8"))
    assert report["total_zero_shot_errors"] == 0
    dataset_lines = (run_dir / "dataset.jsonl").read_text(encoding="utf-8").strip().splitlines()
    assert len(dataset_lines) >= 2  # header plus at least one item
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    stages = [s["stage"] for s in manifest["stages"]]
    assert stages[:7] == ["ingest", "chunk", "tree", "extract", "shatter", "mine", "synthesize"]


def test_manifest_records_matching_digests(toy_yaml, tmp_path):
    import hashlib

    run_dir = tmp_path / "run"
    config = load_config(toy_yaml)
    pipeline.run_ingest(run_dir, config)
    pipeline.run_chunk(run_dir, config)
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    chunk_stage = next(s for s in manifest["stages"] if s["stage"] == "chunk")
    recorded = chunk_stage["inputs"]["sentences.jsonl"]
    on_disk = hashlib.sha256((run_dir / "sentences.jsonl").read_bytes()).hexdigest()
    assert recorded == on_disk


def test_evaluate_resumes_partial_outcomes(toy_yaml, tmp_path):
    run_dir = tmp_path / "run"
    config = load_config(toy_yaml)
    for fn in (
        pipeline.run_ingest,
        pipeline.run_chunk,
        pipeline.run_tree,
        pipeline.run_extract,
        pipeline.run_shatter,
        pipeline.run_mine,
        pipeline.run_synthesize,
    ):
        fn(run_dir, config)
    from hopbench.jsonl import IncrementalWriter, load as jsonl_load

    dataset = jsonl_load(run_dir / "dataset.jsonl", "dataset")
    first_qa = dataset[0]["qa_id"]
    writer = IncrementalWriter(run_dir / pipeline.outcomes_name("mock:oracle", "zero_shot"), "outcomes")
    writer.append(
        {
            "model_id": "mock:oracle",
            "qa_id": first_qa,
            "mode": "zero_shot",
            "raw_response": "A",
            "parsed_choice": 0,
            "correct": False,
        }
    )
    result = pipeline.run_evaluate(run_dir, config, "mock:oracle", "zero_shot")
    assert result.stats["resumed_existing"] == 1
    assert result.stats["evaluated"] == len(dataset) - 1


def test_shatter_sweep_appends_to_topology_report(toy_yaml, tmp_path):
    run_dir = tmp_path / "run"
    config = load_config(toy_yaml)
    for fn in (pipeline.run_ingest, pipeline.run_chunk, pipeline.run_tree, pipeline.run_extract, pipeline.run_shatter):
        fn(run_dir, config)
    pipeline.run_shatter_sweep(run_dir, config, [None, 4.0, 1.0])
    report = json.loads((run_dir / "topology_report.json").read_text(encoding="utf-8"))
    assert "original" in report and "shattered" in report
    assert [row["k"] for row in report["sweep"]] == ["inf", 4.0, 1.0]
