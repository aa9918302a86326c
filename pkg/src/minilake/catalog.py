"""Git-like versioned catalog.

Every commit snapshots the *whole* catalog (table name -> table snapshot id).
Commits are immutable blobs in the object store; branch heads are the only
mutable cells and live as one JSON file per branch under ``refs/``. Heads are
advanced with compare-and-swap under a per-branch lock file, which is safe for
threads and for separate processes sharing a workspace.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

from ._fs import atomic_write, file_lock, pid_alive
from .errors import (
    AlreadyExists,
    BlobNotFound,
    MergeConflict,
    ProtectedBranch,
    StaleHead,
    UnknownBranch,
    UnknownRef,
    UnknownSource,
)
from .objectstore import ObjectStore, canonical_json, is_blob_id

log = logging.getLogger(__name__)

MAIN = "main"
TABLE_NAME = re.compile(r"^[a-z_][a-z0-9_]*$")
BRANCH_NAME = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.\-]*(/[A-Za-z0-9_][A-Za-z0-9_.\-]*)*$")


class BranchKind(str, enum.Enum):
    PERSISTENT = "persistent"
    EPHEMERAL = "ephemeral"


@dataclass(frozen=True)
class CatalogState:
    tables: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name in self.tables:
            if not TABLE_NAME.match(name):
                raise ValueError(f"invalid table name {name!r}")
        object.__setattr__(self, "tables", dict(sorted(self.tables.items())))

    def with_table(self, name: str, snapshot_id: str) -> "CatalogState":
        return CatalogState({**self.tables, name: snapshot_id})

    def without_table(self, name: str) -> "CatalogState":
        return CatalogState({k: v for k, v in self.tables.items() if k != name})

    def to_json(self) -> dict:
        return {"tables": dict(self.tables)}

    @classmethod
    def from_json(cls, obj: dict) -> "CatalogState":
        return cls(obj.get("tables", {}))


@dataclass(frozen=True)
class Commit:
    id: str
    parents: tuple[str, ...]
    state: CatalogState
    message: str
    timestamp: int

    @staticmethod
    def serialize(parents, state: CatalogState, message: str, timestamp: int) -> bytes:
        return canonical_json(
            {
                "parents": list(parents),
                "state": state.to_json(),
                "message": message,
                "timestamp": int(timestamp),
            }
        )


@dataclass(frozen=True)
class BranchRef:
    name: str
    head: str
    kind: BranchKind = BranchKind.PERSISTENT
    owner_pid: int | None = None

    def to_json(self) -> dict:
        out = {"name": self.name, "head": self.head, "kind": self.kind.value}
        if self.owner_pid is not None:
            out["owner_pid"] = self.owner_pid
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "BranchRef":
        return cls(obj["name"], obj["head"], BranchKind(obj.get("kind", "persistent")), obj.get("owner_pid"))


class Catalog:
    def __init__(self, root: str | os.PathLike, store: ObjectStore):
        self.root = Path(root)
        self.refs = self.root / "refs"
        self.refs.mkdir(parents=True, exist_ok=True)
        self.store = store
        self._commits: dict[str, Commit] = {}
        if not self._ref_path(MAIN).exists():
            self._init_main()

    # -- refs ---------------------------------------------------------------

    def _ref_path(self, name: str) -> Path:
        if not BRANCH_NAME.match(name) or ".." in name:
            raise UnknownBranch(f"invalid branch name {name!r}")
        return self.refs / f"{name}.json"

    def _lock_path(self, name: str) -> Path:
        self._ref_path(name)
        return self.refs / ".locks" / f"{name}.lock"

    def _locked(self, name: str):
        return file_lock(self._lock_path(name))

    def _read_ref(self, name: str) -> BranchRef:
        try:
            return BranchRef.from_json(json.loads(self._ref_path(name).read_text()))
        except FileNotFoundError:
            raise UnknownBranch(f"unknown branch '{name}'") from None

    def _write_ref(self, ref: BranchRef) -> None:
        atomic_write(self._ref_path(ref.name), canonical_json(ref.to_json()), prefix=".ref-")

    def _init_main(self) -> None:
        root = self._store_commit((), CatalogState(), "initialize catalog")
        with self._locked(MAIN):
            if not self._ref_path(MAIN).exists():
                self._write_ref(BranchRef(MAIN, root))

    # -- commits ------------------------------------------------------------

    def _store_commit(self, parents, state: CatalogState, message: str) -> str:
        ts = int(time.time())
        return self.store.put(Commit.serialize(parents, state, message, ts))

    def get_commit(self, commit_id: str) -> Commit:
        cached = self._commits.get(commit_id)
        if cached is not None:
            return cached
        if not is_blob_id(commit_id):
            raise UnknownRef(f"unknown ref '{commit_id}'")
        try:
            obj = json.loads(self.store.get(commit_id))
        except BlobNotFound:
            raise UnknownRef(f"unknown ref '{commit_id}'") from None
        if not isinstance(obj, dict) or "parents" not in obj or "state" not in obj:
            raise UnknownRef(f"'{commit_id}' is not a commit")
        commit = Commit(
            commit_id,
            tuple(obj["parents"]),
            CatalogState.from_json(obj["state"]),
            obj.get("message", ""),
            int(obj.get("timestamp", 0)),
        )
        self._commits[commit_id] = commit
        return commit

    def has_branch(self, name: str) -> bool:
        try:
            return self._ref_path(name).exists()
        except UnknownBranch:
            return False

    def branch(self, name: str) -> BranchRef:
        return self._read_ref(name)

    def head(self, name: str) -> str:
        return self._read_ref(name).head

    def list_branches(self) -> list[BranchRef]:
        out = []
        for path in sorted(self.refs.rglob("*.json")):
            if path.name.startswith("."):
                continue
            try:
                out.append(BranchRef.from_json(json.loads(path.read_text())))
            except (FileNotFoundError, json.JSONDecodeError):
                continue
        return sorted(out, key=lambda r: r.name)

    def resolve_commit(self, ref: str) -> str:
        """Commit id for a branch name or a commit id."""
        if self.has_branch(ref):
            return self.head(ref)
        if is_blob_id(ref):
            self.get_commit(ref)
            return ref
        raise UnknownRef(f"unknown ref '{ref}'")

    def resolve(self, ref: str) -> CatalogState:
        return self.get_commit(self.resolve_commit(ref)).state

    # -- branch lifecycle ---------------------------------------------------

    def create_branch(
        self,
        name: str,
        source: str = MAIN,
        kind: BranchKind = BranchKind.PERSISTENT,
        owner_pid: int | None = None,
    ) -> BranchRef:
        try:
            head = self.resolve_commit(source)
        except (UnknownRef, UnknownBranch):
            raise UnknownSource(f"unknown source '{source}'") from None
        kind = BranchKind(kind)
        if kind is BranchKind.EPHEMERAL and owner_pid is None:
            owner_pid = os.getpid()
        with self._locked(name):
            if self._ref_path(name).exists():
                raise AlreadyExists(f"branch '{name}' already exists")
            ref = BranchRef(name, head, kind, owner_pid)
            self._write_ref(ref)
        return ref

    def delete_branch(self, name: str) -> None:
        if name == MAIN:
            raise ProtectedBranch("refusing to delete 'main'")
        with self._locked(name):
            path = self._ref_path(name)
            if not path.exists():
                raise UnknownBranch(f"unknown branch '{name}'")
            path.unlink()

    def commit(self, branch: str, new_state: CatalogState, message: str, expected_head: str) -> str:
        """Append a commit to ``branch`` if its head is still ``expected_head``."""
        return self._advance(branch, (expected_head,), new_state, message, expected_head)

    def _advance(self, branch, parents, state, message, expected_head) -> str:
        new_id = self._store_commit(parents, state, message)
        with self._locked(branch):
            ref = self._read_ref(branch)
            if ref.head != expected_head:
                raise StaleHead(branch, expected_head, ref.head)
            self._write_ref(BranchRef(ref.name, new_id, ref.kind, ref.owner_pid))
        return new_id

    def _fast_forward(self, branch: str, to: str, expected_head: str) -> str:
        with self._locked(branch):
            ref = self._read_ref(branch)
            if ref.head != expected_head:
                raise StaleHead(branch, expected_head, ref.head)
            self._write_ref(BranchRef(ref.name, to, ref.kind, ref.owner_pid))
        return to

    # -- history ------------------------------------------------------------

    def ancestors(self, commit_id: str) -> set[str]:
        """All commits reachable from ``commit_id``, itself included."""
        seen: set[str] = set()
        stack = [commit_id]
        while stack:
            cid = stack.pop()
            if cid in seen:
                continue
            seen.add(cid)
            stack.extend(self.get_commit(cid).parents)
        return seen

    def is_ancestor(self, maybe_ancestor: str, commit_id: str) -> bool:
        return maybe_ancestor in self.ancestors(commit_id)

    def _generations(self, commit_ids) -> dict[str, int]:
        """Longest distance from the root commit; children always rank above parents."""
        gen: dict[str, int] = {}
        for start in commit_ids:
            stack = [start]
            while stack:
                cid = stack[-1]
                if cid in gen:
                    stack.pop()
                    continue
                pending = [p for p in self.get_commit(cid).parents if p not in gen]
                if pending:
                    stack.extend(pending)
                    continue
                gen[cid] = 1 + max((gen[p] for p in self.get_commit(cid).parents), default=-1)
                stack.pop()
        return gen

    def history(self, ref: str) -> Iterator[Commit]:
        """Reachable commits newest first: by generation, then timestamp, then id."""
        reachable = self.ancestors(self.resolve_commit(ref))
        gen = self._generations(reachable)
        commits = [self.get_commit(c) for c in reachable]
        commits.sort(key=lambda c: (gen[c.id], c.timestamp, c.id), reverse=True)
        yield from commits

    def merge_base(self, a: str, b: str) -> str | None:
        common = self.ancestors(a) & self.ancestors(b)
        if not common:
            return None
        # drop common ancestors that are themselves ancestors of another one
        best = set(common)
        for c in common:
            if c in best:
                best -= self.ancestors(c) - {c}
        return max(best, key=lambda c: (self.get_commit(c).timestamp, c))

    # -- merge --------------------------------------------------------------

    def merge(self, source: str, target: str, message: str | None = None) -> str:
        """Merge ``source`` into ``target`` and return the new target head.

        Fast-forwards when possible; otherwise merges table by table against the
        merge base and refuses when one table changed on both sides.
        """
        src_head = self.head(source)
        tgt_head = self.head(target)
        if src_head == tgt_head or self.is_ancestor(src_head, tgt_head):
            return tgt_head
        if self.is_ancestor(tgt_head, src_head):
            return self._fast_forward(target, src_head, tgt_head)

        base_id = self.merge_base(src_head, tgt_head)
        base = self.get_commit(base_id).state.tables if base_id else {}
        ours = self.get_commit(tgt_head).state.tables
        theirs = self.get_commit(src_head).state.tables
        merged: dict[str, str] = {}
        conflicts = []
        for name in sorted(set(base) | set(ours) | set(theirs)):
            b, o, t = base.get(name), ours.get(name), theirs.get(name)
            if o == t:
                pick = o
            elif o == b:
                pick = t
            elif t == b:
                pick = o
            else:
                conflicts.append(name)
                continue
            if pick is not None:
                merged[name] = pick
        if conflicts:
            raise MergeConflict(source, target, conflicts)
        msg = message or f"merge {source} into {target}"
        return self._advance(target, (tgt_head, src_head), CatalogState(merged), msg, tgt_head)

    # -- maintenance --------------------------------------------------------

    def orphaned_ephemeral_branches(self) -> list[BranchRef]:
        return [
            r
            for r in self.list_branches()
            if r.kind is BranchKind.EPHEMERAL and (r.owner_pid is None or not pid_alive(r.owner_pid))
        ]
