"""File-backed blob and table stores.

BlobStore: named byte objects under namespace/date/name directories,
written atomically (temp file + rename) so a concurrent reader sees
either the old bytes or the new bytes, never a mix.

TableStore: small keyed tables held in memory, persisted as a JSON
snapshot plus an append-only JSON-lines journal of upserts. Loading
replays snapshot then journal; checkpoint() collapses the journal into
a fresh snapshot. Upserts are idempotent per primary key and validated
against the declared column schema before anything is applied, so a
rejected batch leaves the table untouched.

Queries are equality filters evaluated as a scan over the keyed rows;
at the dataset sizes this store is built for, a scan and an index are
the same thing. Results come back sorted by primary key, which keeps
every downstream report deterministic.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    AlreadyExistsError,
    ConfigError,
    DataError,
    NotFoundError,
    TableSchemaError,
)

_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_NAME_RE = re.compile(r"^[A-Za-z0-9._:-]+$")

# column type name -> accepted python types
_COLUMN_TYPES = {
    "int": (int,),
    "float": (int, float),  # ints upcast cleanly
    "str": (str,),
    "bool": (bool,),
    "json": (dict, list, str, int, float, bool, type(None)),
}


@dataclass(frozen=True)
class BlobKey:
    namespace: str
    date_partition: str  # YYYY-MM-DD
    name: str


def _check_blob_key(namespace: str, date_partition: str, name: str) -> None:
    if not _NAME_RE.match(namespace or ""):
        raise ConfigError(f"invalid blob namespace {namespace!r}")
    if not _DATE_RE.match(date_partition or ""):
        raise ConfigError(f"invalid date partition {date_partition!r}, want YYYY-MM-DD")
    if not _NAME_RE.match(name or ""):
        raise ConfigError(f"invalid blob name {name!r}")


class BlobStore:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: BlobKey) -> Path:
        return self.root / key.namespace / key.date_partition / key.name

    def put_blob(self, namespace: str, date_partition: str, name: str, data: bytes) -> BlobKey:
        _check_blob_key(namespace, date_partition, name)
        if not isinstance(data, bytes):
            raise ConfigError("blob data must be bytes")
        key = BlobKey(namespace, date_partition, name)
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)  # atomic overwrite
        return key

    def get_blob(self, namespace: str, date_partition: str, name: str) -> bytes:
        _check_blob_key(namespace, date_partition, name)
        path = self._path(BlobKey(namespace, date_partition, name))
        if not path.exists():
            raise NotFoundError(f"no blob {namespace}/{date_partition}/{name}")
        return path.read_bytes()

    def list_blobs(self, namespace: str, date_partition: str | None = None) -> list[BlobKey]:
        """Keys under a namespace (optionally one date), sorted."""
        if not _NAME_RE.match(namespace or ""):
            raise ConfigError(f"invalid blob namespace {namespace!r}")
        ns_dir = self.root / namespace
        if not ns_dir.exists():
            return []
        if date_partition is not None:
            if not _DATE_RE.match(date_partition):
                raise ConfigError(f"invalid date partition {date_partition!r}")
            dates = [date_partition]
        else:
            dates = sorted(d.name for d in ns_dir.iterdir() if d.is_dir())
        out = []
        for date in dates:
            ddir = ns_dir / date
            if not ddir.exists():
                continue
            for f in sorted(ddir.iterdir()):
                if f.is_file() and not f.name.endswith(".tmp"):
                    out.append(BlobKey(namespace, date, f.name))
        return out


class _Table:
    def __init__(self, name: str, columns: dict[str, str], key: str, directory: Path):
        self.name = name
        self.columns = columns
        self.key = key
        self.directory = directory
        self.rows: dict = {}

    def validate_row(self, row: dict) -> None:
        if not isinstance(row, dict):
            raise TableSchemaError("", f"{self.name}: row must be a mapping")
        for col in row:
            if col not in self.columns:
                raise TableSchemaError(
                    col, f"{self.name}: unknown column {col!r}"
                )
        for col, type_name in self.columns.items():
            if col not in row or row[col] is None:
                if col == self.key:
                    raise TableSchemaError(
                        col, f"{self.name}: missing primary key column {col!r}"
                    )
                continue  # non-key columns may be absent/null
            accepted = _COLUMN_TYPES[type_name]
            value = row[col]
            if type_name in ("int", "float") and isinstance(value, bool):
                raise TableSchemaError(
                    col, f"{self.name}: column {col!r} expects {type_name}, got bool"
                )
            if not isinstance(value, accepted):
                raise TableSchemaError(
                    col,
                    f"{self.name}: column {col!r} expects {type_name}, "
                    f"got {type(value).__name__}",
                )


class TableStore:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._tables: dict[str, _Table] = {}
        self._journals: dict[str, object] = {}
        self._load_existing()

    # -- persistence -----------------------------------------------------

    def _load_existing(self) -> None:
        for schema_path in sorted(self.root.glob("*/schema.json")):
            meta = json.loads(schema_path.read_text())
            table = _Table(
                meta["name"], meta["columns"], meta["key"], schema_path.parent
            )
            snap = table.directory / "snapshot.json"
            if snap.exists():
                table.rows = {
                    row[table.key]: row for row in json.loads(snap.read_text())
                }
            journal = table.directory / "journal.jsonl"
            if journal.exists():
                with open(journal, "r", encoding="utf-8") as fh:
                    for line in fh:
                        line = line.strip()
                        if line:
                            row = json.loads(line)
                            table.rows[row[table.key]] = row
            self._tables[table.name] = table

    def _journal_handle(self, table: _Table):
        fh = self._journals.get(table.name)
        if fh is None:
            fh = open(table.directory / "journal.jsonl", "a", encoding="utf-8")
            self._journals[table.name] = fh
        return fh

    def checkpoint(self, name: str) -> None:
        """Fold the journal into the snapshot."""
        table = self._require(name)
        fh = self._journals.pop(table.name, None)
        if fh is not None:
            fh.close()
        rows = [table.rows[k] for k in sorted(table.rows)]
        snap = table.directory / "snapshot.json"
        tmp = snap.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(rows))
        os.replace(tmp, snap)
        journal = table.directory / "journal.jsonl"
        if journal.exists():
            journal.unlink()

    def close(self) -> None:
        for fh in self._journals.values():
            fh.close()
        self._journals.clear()

    # -- tables ----------------------------------------------------------

    def create_table(self, name: str, columns: dict[str, str], key: str) -> None:
        if not _NAME_RE.match(name or ""):
            raise ConfigError(f"invalid table name {name!r}")
        for col, type_name in columns.items():
            if type_name not in _COLUMN_TYPES:
                raise ConfigError(f"column {col!r} has unknown type {type_name!r}")
        if key not in columns:
            raise ConfigError(f"key column {key!r} is not declared")
        existing = self._tables.get(name)
        if existing is not None:
            if existing.columns == columns and existing.key == key:
                return  # idempotent re-declaration
            raise AlreadyExistsError(f"table {name!r} exists with a different schema")
        directory = self.root / name
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "schema.json").write_text(
            json.dumps({"name": name, "columns": columns, "key": key})
        )
        self._tables[name] = _Table(name, columns, key, directory)

    def _require(self, name: str) -> _Table:
        if name not in self._tables:
            raise NotFoundError(f"table {name!r} does not exist")
        return self._tables[name]

    def upsert_rows(self, name: str, rows: list[dict]) -> int:
        """Insert or replace by primary key. All-or-nothing per call."""
        table = self._require(name)
        for row in rows:
            table.validate_row(row)
        fh = self._journal_handle(table)
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")
        fh.flush()
        for row in rows:
            table.rows[row[table.key]] = dict(row)
        return len(rows)

    def query(self, name: str, equals: dict | None = None) -> list[dict]:
        """Rows matching every equality predicate, sorted by primary key."""
        table = self._require(name)
        equals = equals or {}
        for col in equals:
            if col not in table.columns:
                raise DataError(f"{name}: cannot filter on unknown column {col!r}")
        out = []
        for key in sorted(table.rows):
            row = table.rows[key]
            if all(row.get(col) == want for col, want in equals.items()):
                out.append(dict(row))
        return out

    def count(self, name: str) -> int:
        return len(self._require(name).rows)
