from __future__ import annotations

import pytest

from hopbench.errors import MigrationError, SnapshotError
from hopbench.jsonl import IncrementalWriter, load, snapshot


def test_round_trip_structural_equality(tmp_path):
    records = [
        {"qa_id": "qa1", "options": ["a", "b"], "nested": {"x": 1.5}},
        {"qa_id": "qa2", "options": [], "nested": {"x": None}},
        {"qa_id": "qa3", "options": ["只"], "nested": {"x": [1, 2, 3]}},
    ]
    path = snapshot(records, tmp_path / "data.jsonl", schema="dataset")
    assert load(path, "dataset") == records


def test_empty_records_give_header_only_file(tmp_path):
    path = snapshot([], tmp_path / "empty.jsonl", schema="chains")
    assert path.read_text(encoding="utf-8").count("\n") == 1
    assert load(path, "chains") == []


def test_truncated_final_line_reports_line_number(tmp_path):
    path = snapshot([{"a": 1}, {"b": 2}], tmp_path / "t.jsonl", schema="s")
    content = path.read_text(encoding="utf-8")
    path.write_text(content[:-4], encoding="utf-8")  # chop the last record
    with pytest.raises(SnapshotError) as excinfo:
        load(path, "s")
    assert excinfo.value.line_number == 3


def test_schema_mismatch_is_migration_error(tmp_path):
    path = snapshot([{"a": 1}], tmp_path / "m.jsonl", schema="chunks")
    with pytest.raises(MigrationError):
        load(path, "dataset")


def test_version_mismatch_is_migration_error(tmp_path):
    path = snapshot([{"a": 1}], tmp_path / "v.jsonl", schema="chunks", version=2)
    with pytest.raises(MigrationError):
        load(path, "chunks", version=1)


def test_missing_header_rejected(tmp_path):
    path = tmp_path / "h.jsonl"
    path.write_text('{"a": 1}\n', encoding="utf-8")
    with pytest.raises(MigrationError):
        load(path, "chunks")


def test_missing_file_is_snapshot_error(tmp_path):
    with pytest.raises(SnapshotError):
        load(tmp_path / "nope.jsonl", "chunks")


def test_serialization_is_byte_stable(tmp_path):
    records = [{"b": 2, "a": 1, "z": [3, 2]}]
    first = snapshot(records, tmp_path / "one.jsonl", schema="s").read_bytes()
    second = snapshot(records, tmp_path / "two.jsonl", schema="s").read_bytes()
    assert first == second


def test_incremental_writer_appends_and_resumes(tmp_path):
    path = tmp_path / "outcomes.jsonl"
    writer = IncrementalWriter(path, schema="outcomes")
    writer.append({"qa_id": "qa1"})
    writer.append({"qa_id": "qa2"})
    # a new writer on the same path keeps existing rows
    again = IncrementalWriter(path, schema="outcomes")
    again.append({"qa_id": "qa3"})
    assert [r["qa_id"] for r in load(path, "outcomes")] == ["qa1", "qa2", "qa3"]
