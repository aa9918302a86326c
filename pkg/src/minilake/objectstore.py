"""Content-addressed, immutable blob storage on the local filesystem.

Blobs live under ``<workspace>/objects/<first 2 hex>/<remaining 62 hex>``,
the same fan-out git uses for loose objects.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from pathlib import Path

from ._fs import atomic_write
from .errors import BlobNotFound, CorruptBlob

_BLOB_ID = re.compile(r"^[0-9a-f]{64}$")


def blob_id(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def is_blob_id(value: str) -> bool:
    return isinstance(value, str) and bool(_BLOB_ID.match(value))


def canonical_json(obj) -> bytes:
    """Sorted keys, no insignificant whitespace, UTF-8: stable across runs."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


class ObjectStore:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, bid: str) -> Path:
        if not is_blob_id(bid):
            raise BlobNotFound(f"malformed blob id {bid!r}")
        return self.root / bid[:2] / bid[2:]

    def put(self, data: bytes) -> str:
        """Store ``data`` and return its SHA-256 hex digest.

        Idempotent: an existing blob is never rewritten.
        """
        bid = blob_id(data)
        target = self.path_for(bid)
        if target.exists():
            return bid
        atomic_write(target, data)
        return bid

    def get(self, bid: str) -> bytes:
        path = self.path_for(bid)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise BlobNotFound(f"blob {bid} not found") from None
        if blob_id(data) != bid:
            raise CorruptBlob(f"blob {bid} failed digest check")
        return data

    def exists(self, bid: str) -> bool:
        return is_blob_id(bid) and self.path_for(bid).exists()

    def size(self, bid: str) -> int:
        try:
            return self.path_for(bid).stat().st_size
        except FileNotFoundError:
            raise BlobNotFound(f"blob {bid} not found") from None

    def __iter__(self):
        for sub in sorted(self.root.iterdir()):
            if sub.is_dir() and len(sub.name) == 2:
                for f in sorted(sub.iterdir()):
                    if not f.name.startswith("."):
                        yield sub.name + f.name

    def __len__(self) -> int:
        return sum(1 for _ in self)
