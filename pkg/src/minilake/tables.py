"""Snapshot-based table format over immutable, content-addressed data files."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

from .errors import BlobNotFound, SchemaError, SqlTypeError, UnknownSnapshot
from .evaluate import apply_filter
from .objectstore import ObjectStore, canonical_json, is_blob_id
from .relation import ColumnType, Relation, Schema, decode_csv, encode_csv
from .sql import Expr, infer_type


@dataclass(frozen=True)
class DataFileRef:
    blob: str
    rows: int
    bytes: int

    def to_json(self) -> dict:
        return {"blob": self.blob, "rows": self.rows, "bytes": self.bytes}


@dataclass(frozen=True)
class TableSnapshot:
    id: str
    schema: Schema
    data_files: tuple[DataFileRef, ...]
    parent: str | None
    row_count: int
    total_bytes: int

    @property
    def content_hash(self) -> str:
        """Digest of schema and data, independent of lineage."""
        body = {
            "schema": self.schema.to_json(),
            "data_files": [f.blob for f in self.data_files],
        }
        return hashlib.sha256(canonical_json(body)).hexdigest()

    def to_json(self) -> dict:
        return {
            "schema": self.schema.to_json(),
            "data_files": [f.to_json() for f in self.data_files],
            "parent": self.parent,
            "row_count": self.row_count,
            "total_bytes": self.total_bytes,
        }


@dataclass
class ScanResult:
    relation: Relation
    rows_scanned: int  # rows emitted into memory by the scan


class TableStore:
    def __init__(self, store: ObjectStore):
        self.store = store
        self._cache: dict[str, TableSnapshot] = {}

    def write_table(self, rel: Relation, parent: str | None = None) -> TableSnapshot:
        files: list[DataFileRef] = []
        if rel.num_rows:
            data = encode_csv(rel)
            files.append(DataFileRef(self.store.put(data), rel.num_rows, len(data)))
        if parent is not None:
            self.load(parent)
        body = {
            "schema": rel.schema.to_json(),
            "data_files": [f.to_json() for f in files],
            "parent": parent,
            "row_count": sum(f.rows for f in files),
            "total_bytes": sum(f.bytes for f in files),
        }
        sid = self.store.put(canonical_json(body))
        return self.load(sid)

    def load(self, snapshot_id: str) -> TableSnapshot:
        cached = self._cache.get(snapshot_id)
        if cached is not None:
            return cached
        if not is_blob_id(snapshot_id):
            raise UnknownSnapshot(f"unknown snapshot '{snapshot_id}'")
        try:
            obj = json.loads(self.store.get(snapshot_id))
        except BlobNotFound:
            raise UnknownSnapshot(f"unknown snapshot '{snapshot_id}'") from None
        if not isinstance(obj, dict) or "data_files" not in obj:
            raise UnknownSnapshot(f"'{snapshot_id}' is not a table snapshot")
        snap = TableSnapshot(
            snapshot_id,
            Schema.from_json(obj["schema"]),
            tuple(DataFileRef(f["blob"], f["rows"], f["bytes"]) for f in obj["data_files"]),
            obj.get("parent"),
            obj["row_count"],
            obj["total_bytes"],
        )
        self._cache[snapshot_id] = snap
        return snap

    def read_file(self, ref: DataFileRef, schema: Schema) -> Relation:
        rel = decode_csv(self.store.get(ref.blob), schema)
        if rel.num_rows != ref.rows:
            raise SchemaError(f"data file {ref.blob} has {rel.num_rows} rows, expected {ref.rows}")
        return rel

    def scan(
        self,
        snapshot: TableSnapshot | str,
        projection: Sequence[str] | None = None,
        predicate: Expr | None = None,
    ) -> ScanResult:
        """Read ``snapshot`` file by file, keeping matching rows and requested columns."""
        if isinstance(snapshot, str):
            snapshot = self.load(snapshot)
        schema = snapshot.schema
        names = list(projection) if projection is not None else schema.names
        out_schema = schema.select(names)
        if predicate is not None and infer_type(predicate, schema) is not ColumnType.BOOL:
            raise SqlTypeError("scan predicate must be boolean")
        cols: list[list] = [[] for _ in names]
        for ref in snapshot.data_files:
            part = apply_filter(predicate, self.read_file(ref, schema))
            for dst, name in zip(cols, names):
                dst.extend(part.column(name))
        rel = Relation(out_schema, cols, validate=False)
        return ScanResult(rel, rel.num_rows)

    def scan_all(self, snapshot: TableSnapshot | str) -> Relation:
        return self.scan(snapshot).relation

    def snapshot_lineage(self, snapshot_id: str) -> list[str]:
        """Snapshot ids from ``snapshot_id`` back to the root, newest first."""
        chain = []
        current: str | None = snapshot_id
        while current is not None:
            chain.append(current)
            current = self.load(current).parent
        return chain
