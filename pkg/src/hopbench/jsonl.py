"""Schema-versioned JSONL snapshots.

Every artifact file starts with a header line naming its schema and version;
records follow one JSON object per line with sorted keys, so identical data
always serializes to identical bytes. Writes are atomic (temp + rename)."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Iterator

from .errors import MigrationError, SnapshotError


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def snapshot(records: Iterable[dict], path: str | Path, schema: str, version: int = 1) -> Path:
    """Write records under a schema header; an empty list gives a header-only file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as handle:
        handle.write(_dumps({"schema": schema, "version": version}) + "\n")
        for record in records:
            handle.write(_dumps(record) + "\n")
    os.replace(tmp, path)
    return path


def load(path: str | Path, schema: str, version: int = 1) -> list[dict]:
    """Read records back, enforcing the schema header; malformed lines raise
    with their line number."""
    path = Path(path)
    if not path.exists():
        raise SnapshotError(f"snapshot not found: {path}")
    records: list[dict] = []
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                record = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise SnapshotError(
                    f"{path}: malformed JSON at line {line_number}: {exc.msg}",
                    line_number=line_number,
                ) from exc
            if line_number == 1:
                if not isinstance(record, dict) or "schema" not in record:
                    raise MigrationError(f"{path}: missing schema header line")
                if record["schema"] != schema:
                    raise MigrationError(
                        f"{path}: schema {record['schema']!r} where {schema!r} expected"
                    )
                if record.get("version") != version:
                    raise MigrationError(
                        f"{path}: schema version {record.get('version')} (reader supports {version})"
                    )
                continue
            records.append(record)
    return records


def iter_load(path: str | Path, schema: str, version: int = 1) -> Iterator[dict]:
    yield from load(path, schema, version)


class IncrementalWriter:
    """Append-mode JSONL writer for resumable stages (evaluation outcomes).

    Creates the header on first use; appends flush per record so an
    interrupted run keeps everything written so far."""

    def __init__(self, path: str | Path, schema: str, version: int = 1):
        self.path = Path(path)
        self.schema = schema
        self.version = version
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            with self.path.open("w", encoding="utf-8") as handle:
                handle.write(_dumps({"schema": schema, "version": version}) + "\n")

    def append(self, record: dict) -> None:
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(_dumps(record) + "\n")
            handle.flush()
