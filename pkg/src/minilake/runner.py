"""Transactional pipeline execution.

A run follows transform-audit-write: everything executes on an ephemeral
``run_<id>`` branch forked from the target branch head, expectations audit
the results, and only a fully green run is merged back. Any failure deletes
the ephemeral branch, leaving the target branch untouched. A process that
dies mid-run leaves an ephemeral ref owned by a dead pid, which
``sweep_orphans`` removes on the next start.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from threading import Lock
from typing import Callable

from ._fs import file_lock, pid_alive
from .catalog import MAIN, BranchKind, Catalog, CatalogState
from .engine import (
    BuiltinCheck,
    evaluate_builtin_check,
    execute,
    invoke_external_function,
)
from .errors import (
    ExecutionError,
    ExpectationFailed,
    LakehouseError,
    StaleHead,
    UnknownRun,
    UnknownSelectorNode,
    UnknownTable,
)
from .objectstore import ObjectStore, canonical_json
from .planner import (
    DEFAULT_INFLATION,
    LogicalPlan,
    NodeKind,
    PhysicalPlan,
    ProjectSource,
    build_logical_plan,
    explain,
    fuse,
    ingest_project,
    project_from_blobs,
    push_down_predicates,
)
from .relation import Relation, decode_csv, encode_csv
from .sql import output_schema, parse
from .tables import DataFileRef, TableStore

log = logging.getLogger(__name__)

DEFAULT_BUDGET_BYTES = 512 * 1024 * 1024


def default_budget() -> int:
    return int(os.environ.get("BPLN_BUDGET_BYTES", DEFAULT_BUDGET_BYTES))


# -- workspace ----------------------------------------------------------------


class Workspace:
    """``objects/``, ``refs/`` and ``runs/`` under one root directory."""

    def __init__(self, root: str | os.PathLike | None = None):
        if root is None:
            root = os.environ.get("BPLN_WORKSPACE") or ".bauplan"
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.store = ObjectStore(self.root / "objects")
        self.catalog = Catalog(self.root, self.store)
        self.tables = TableStore(self.store)
        self.registry = RunRegistry(self.root / "runs", self.store)


# -- run registry -------------------------------------------------------------


@dataclass
class NodeRecord:
    name: str
    kind: str
    unit: int | None = None
    engine: str = "builtin"
    status: str = "pending"  # pending, succeeded, failed, skipped, pinned
    wall_ms: float = 0.0
    rows_out: int | None = None
    rows_scanned: int = 0
    snapshot: str | None = None
    content_hash: str | None = None
    verdict: bool | None = None
    error: str | None = None


@dataclass
class RunManifest:
    run_id: int
    status: str
    fingerprint: str
    files: dict[str, str]
    input_branch: str
    input_commit: str
    ephemeral_branch: str
    target_branch: str
    created_at: float
    nodes: dict[str, NodeRecord] = field(default_factory=dict)
    finished_at: float | None = None
    wall_ms: float = 0.0
    merge_commit: str | None = None
    failed_expectations: list[str] = field(default_factory=list)
    error: str | None = None
    has_external_functions: bool = False
    spilled_blobs: int = 0
    scanned_rows: int = 0
    budget_bytes: int = 0
    inflation: float = DEFAULT_INFLATION
    optimized: bool = True
    replay_of: int | None = None
    selector: str | None = None
    plan: dict | None = None
    pid: int = field(default_factory=os.getpid)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "RunManifest":
        obj = dict(obj)
        obj["nodes"] = {k: NodeRecord(**v) for k, v in obj.get("nodes", {}).items()}
        return cls(**obj)

    def materialized(self) -> dict[str, str]:
        """Model name -> snapshot id for every model this run wrote."""
        return {n: r.snapshot for n, r in self.nodes.items() if r.kind == "sql_model" and r.snapshot and r.status == "succeeded"}

    def summary(self) -> str:
        return f"run {self.run_id} {self.status} {len(self.nodes)} nodes {round(self.wall_ms)} ms"


class RunRegistry:
    """Append-only JSON lines; the last line for a run id is its current record."""

    def __init__(self, root: Path, store: ObjectStore):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.path = self.root / "registry.jsonl"
        self.store = store

    def _lock(self):
        return file_lock(self.root / "registry.lock")

    def _lines(self) -> list[dict]:
        try:
            text = self.path.read_text("utf-8")
        except FileNotFoundError:
            return []
        out = []
        for line in text.splitlines():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError:
                # torn trailing line from a killed writer
                continue
        return out

    def _append(self, record: dict) -> None:
        with open(self.path, "ab") as fh:
            fh.write(canonical_json(record) + b"\n")
            fh.flush()
            os.fsync(fh.fileno())

    def allocate(self, target_branch: str) -> int:
        with self._lock():
            run_id = 1 + max((r["run_id"] for r in self._lines()), default=0)
            self._append(
                {
                    "run_id": run_id,
                    "status": "running",
                    "target_branch": target_branch,
                    "pid": os.getpid(),
                    "created_at": time.time(),
                }
            )
        return run_id

    def record(self, manifest: RunManifest) -> None:
        blob = self.store.put(canonical_json(manifest.to_json()))
        line = {
            "run_id": manifest.run_id,
            "status": manifest.status,
            "target_branch": manifest.target_branch,
            "input_commit": manifest.input_commit,
            "fingerprint": manifest.fingerprint,
            "merge_commit": manifest.merge_commit,
            "created_at": manifest.created_at,
            "wall_ms": manifest.wall_ms,
            "manifest": blob,
        }
        with self._lock():
            self._append(line)

    def mark_aborted(self, run_id: int) -> None:
        with self._lock():
            self._append({"run_id": run_id, "status": "aborted", "aborted_at": time.time()})

    def latest(self) -> dict[int, dict]:
        out: dict[int, dict] = {}
        for rec in self._lines():
            prev = out.get(rec["run_id"], {})
            out[rec["run_id"]] = {**prev, **rec}
        return dict(sorted(out.items()))

    def get(self, run_id: int) -> dict:
        rec = self.latest().get(run_id)
        if rec is None:
            raise UnknownRun(f"unknown run {run_id}")
        return rec

    def manifest(self, run_id: int) -> RunManifest:
        rec = self.get(run_id)
        if not rec.get("manifest"):
            raise UnknownRun(f"run {run_id} has no manifest (status {rec['status']})")
        manifest = RunManifest.from_json(json.loads(self.store.get(rec["manifest"])))
        manifest.status = rec["status"]
        return manifest


def sweep_orphans(ws: Workspace) -> list[str]:
    """Delete ephemeral refs of dead processes and mark their runs aborted."""
    removed = []
    for ref in ws.catalog.orphaned_ephemeral_branches():
        try:
            ws.catalog.delete_branch(ref.name)
        except LakehouseError:
            continue
        removed.append(ref.name)
        log.warning("removed orphaned ephemeral branch %s", ref.name)
    for run_id, rec in ws.registry.latest().items():
        if rec["status"] == "running" and not pid_alive(rec.get("pid", 0)):
            ws.registry.mark_aborted(run_id)
    return removed


# -- selectors ----------------------------------------------------------------


@dataclass(frozen=True)
class NodeSelector:
    name: str
    ancestors: bool = False
    descendants: bool = False

    @classmethod
    def parse(cls, pattern: str) -> "NodeSelector":
        m = re.fullmatch(r"(\+?)([A-Za-z_][A-Za-z0-9_]*)(\+?)", pattern.strip())
        if not m:
            raise UnknownSelectorNode(f"malformed selector {pattern!r}")
        return cls(m.group(2).lower(), bool(m.group(1)), bool(m.group(3)))

    def select(self, plan: LogicalPlan) -> set[str]:
        if self.name not in plan:
            raise UnknownSelectorNode(f"selector node '{self.name}' is not in the plan")
        chosen = {self.name}
        if self.ancestors:
            chosen |= plan.ancestors(self.name)
        if self.descendants:
            chosen |= plan.descendants(self.name)
        return chosen

    def __str__(self) -> str:
        return ("+" if self.ancestors else "") + self.name + ("+" if self.descendants else "")


def detect_branch_context(path: str | os.PathLike = ".") -> str:
    """Branch name checked out in the git repository at ``path``, else ``main``."""
    head = Path(path) / ".git" / "HEAD"
    try:
        text = head.read_text().strip()
    except (FileNotFoundError, NotADirectoryError, PermissionError):
        return MAIN
    m = re.fullmatch(r"ref: refs/heads/(\S+)", text)
    if not m:
        log.warning("cannot use git HEAD %r as a branch; falling back to main", text[:40])
        return MAIN
    return m.group(1)


# -- execution ----------------------------------------------------------------


class _Exchange:
    """Hand-off of relations between execution units."""

    def __init__(self, ws: Workspace):
        self.ws = ws
        self.lock = Lock()
        self.snapshots: dict[str, str] = {}
        self.spilled: dict[str, tuple[DataFileRef | None, object]] = {}
        self.spill_count = 0

    def publish_snapshot(self, name: str, snapshot_id: str) -> None:
        with self.lock:
            self.snapshots[name] = snapshot_id

    def spill(self, name: str, rel: Relation) -> None:
        ref = None
        if rel.num_rows:
            data = encode_csv(rel)
            ref = DataFileRef(self.ws.store.put(data), rel.num_rows, len(data))
        with self.lock:
            self.spilled[name] = (ref, rel.schema)
            self.spill_count += 1

    def fetch(self, name: str) -> Relation:
        with self.lock:
            sid = self.snapshots.get(name)
            spilled = self.spilled.get(name)
        if sid is not None:
            return self.ws.tables.scan_all(sid)
        ref, schema = spilled
        if ref is None:
            return Relation.empty(schema)
        return decode_csv(self.ws.store.get(ref.blob), schema)


class _Execution:
    def __init__(self, ws, physical: PhysicalPlan, manifest: RunManifest, project: ProjectSource, base: CatalogState, workers):
        self.ws = ws
        self.physical = physical
        self.plan = physical.logical
        self.manifest = manifest
        self.project = project
        self.base = base
        self.workers = workers or os.cpu_count() or 1
        self.exchange = _Exchange(ws)
        self.commit_lock = Lock()

    def _commit_snapshot(self, name: str, snapshot_id: str) -> None:
        branch = self.manifest.ephemeral_branch
        catalog = self.ws.catalog
        while True:
            head = catalog.head(branch)
            state = catalog.get_commit(head).state.with_table(name, snapshot_id)
            try:
                catalog.commit(branch, state, f"materialize {name}", head)
                return
            except StaleHead:
                continue

    def _run_step(self, name: str, local: dict[str, Relation]) -> None:
        node = self.plan[name]
        rec = self.manifest.nodes[name]
        started = time.perf_counter()

        def input_of(parent: str) -> Relation:
            if parent in local:
                return local[parent]
            return self.exchange.fetch(parent)

        try:
            if node.kind is NodeKind.SOURCE_SCAN:
                res = self.ws.tables.scan(node.snapshot_id, predicate=node.pushed_predicate)
                local[name] = res.relation
                rec.rows_scanned = res.rows_scanned
                rec.rows_out = res.relation.num_rows
                rec.snapshot = node.snapshot_id
            elif node.kind is NodeKind.SQL_MODEL:
                out = execute(node.query, input_of(node.parents[0]))
                snap = self.ws.tables.write_table(out, parent=self.base.tables.get(name))
                self._commit_snapshot(name, snap.id)
                self.exchange.publish_snapshot(name, snap.id)
                local[name] = out
                rec.rows_out = out.num_rows
                rec.snapshot = snap.id
                rec.content_hash = snap.content_hash
            else:
                rel = input_of(node.parents[0])
                body = node.expectation.body
                if isinstance(body, BuiltinCheck):
                    verdict = evaluate_builtin_check(body, rel)
                else:
                    verdict = invoke_external_function(
                        body, {node.expectation.target_table: rel}, files=self.project.contents
                    )
                rec.verdict = bool(verdict)
                rec.rows_out = rel.num_rows
                if not verdict:
                    rec.status = "failed"
                    rec.error = "expectation not met"
                    return
            rec.status = "succeeded"
        except LakehouseError as exc:
            rec.status = "failed"
            rec.error = f"{type(exc).__name__}: {exc}"
            raise
        finally:
            rec.wall_ms = (time.perf_counter() - started) * 1000.0

    def run_unit(self, unit) -> None:
        local: dict[str, Relation] = {}
        for name in unit.steps:
            self._run_step(name, local)
        # non-materialized outputs consumed by another unit leave through the object store
        for name in unit.steps:
            node = self.plan[name]
            if node.kind is not NodeKind.SOURCE_SCAN:
                continue
            if any(self.physical.unit_of(c).index != unit.index for c in self.plan.children(name)):
                self.exchange.spill(name, local[name])

    def execute(self, on_unit_done: Callable | None = None) -> BaseException | None:
        """Run every unit respecting unit edges; returns the first error, if any."""
        deps = {u.index: set() for u in self.physical.units}
        for a, b in self.physical.edges:
            deps[b].add(a)
        units = {u.index: u for u in self.physical.units}
        done: set[int] = set()
        running = {}
        error: BaseException | None = None
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            while True:
                if error is None:
                    for idx in sorted(units):
                        if idx not in done and idx not in running.values() and deps[idx] <= done:
                            running[pool.submit(self.run_unit, units[idx])] = idx
                if not running:
                    break
                finished, _ = wait(list(running), return_when=FIRST_COMPLETED)
                for fut in sorted(finished, key=lambda f: running[f]):
                    idx = running.pop(fut)
                    exc = fut.exception()
                    if exc is not None:
                        error = error or exc
                        continue
                    done.add(idx)
                    if on_unit_done is not None:
                        on_unit_done(units[idx], self.manifest)
        for rec in self.manifest.nodes.values():
            if rec.status == "pending":
                rec.status = "skipped"
        self.manifest.spilled_blobs = self.exchange.spill_count
        self.manifest.scanned_rows = sum(r.rows_scanned for r in self.manifest.nodes.values())
        return error


def _node_records(physical: PhysicalPlan) -> dict[str, NodeRecord]:
    out = {}
    for unit in physical.units:
        for name in unit.steps:
            node = physical.logical[name]
            out[name] = NodeRecord(name, node.kind.value, unit.index, unit.engines[name])
    return out


def _transact(
    ws: Workspace,
    manifest: RunManifest,
    physical: PhysicalPlan,
    project: ProjectSource,
    workers: int | None,
    on_unit_done: Callable | None,
    pinned: dict[str, str] | None = None,
) -> RunManifest:
    """Execute on the ephemeral branch, audit, then merge or discard."""
    catalog = ws.catalog
    started = time.perf_counter()
    manifest.nodes = _node_records(physical)
    for name, sid in (pinned or {}).items():
        if name in manifest.nodes:
            manifest.nodes[name].status = "pinned"
            manifest.nodes[name].snapshot = sid
    manifest.plan = physical.to_json()
    catalog.create_branch(
        manifest.ephemeral_branch, manifest.input_commit, kind=BranchKind.EPHEMERAL, owner_pid=os.getpid()
    )
    ws.registry.record(manifest)
    try:
        base = catalog.resolve(manifest.ephemeral_branch)
        job = _Execution(ws, physical, manifest, project, base, workers)
        # pinned scans run like any other scan; their status goes back to pinned afterwards
        error = job.execute(on_unit_done)
        for name in pinned or {}:
            if name in manifest.nodes and manifest.nodes[name].status == "succeeded":
                manifest.nodes[name].status = "pinned"
        manifest.failed_expectations = sorted(
            n for n, r in manifest.nodes.items() if r.kind == "expectation" and r.verdict is False
        )
        if error is not None:
            manifest.status = "failed_error"
            manifest.error = f"{type(error).__name__}: {error}"
        elif manifest.failed_expectations:
            manifest.status = "failed_expectation"
            manifest.error = "expectations failed: " + ", ".join(manifest.failed_expectations)
        else:
            manifest.merge_commit = catalog.merge(
                manifest.ephemeral_branch, manifest.target_branch, f"run {manifest.run_id}"
            )
            manifest.status = "succeeded"
    except BaseException as exc:
        if isinstance(exc, LakehouseError):
            manifest.status = "failed_error"
            manifest.error = f"{type(exc).__name__}: {exc}"
        else:
            manifest.status = "aborted"
            manifest.error = repr(exc)
        error = exc
    finally:
        try:
            catalog.delete_branch(manifest.ephemeral_branch)
        except LakehouseError:
            pass
        manifest.finished_at = time.time()
        manifest.wall_ms = (time.perf_counter() - started) * 1000.0
        ws.registry.record(manifest)

    if manifest.status == "failed_expectation":
        raise ExpectationFailed(manifest.error, manifest)
    if manifest.status != "succeeded":
        if not isinstance(error, LakehouseError):
            raise error
        raise ExecutionError(manifest.error, manifest) from error
    return manifest


def plan_project(
    ws: Workspace,
    project: ProjectSource,
    state: CatalogState,
    budget_bytes: int,
    inflation: float = DEFAULT_INFLATION,
    optimize: bool = True,
) -> tuple[LogicalPlan, PhysicalPlan]:
    logical = build_logical_plan(project, state, ws.tables)
    if optimize:
        return logical, fuse(push_down_predicates(logical), budget_bytes, inflation)
    return logical, fuse(logical, 0, inflation)


def run(
    ws: Workspace,
    project_root: str | os.PathLike,
    branch: str = MAIN,
    budget_bytes: int | None = None,
    inflation: float = DEFAULT_INFLATION,
    optimize: bool = True,
    workers: int | None = None,
    on_unit_done: Callable | None = None,
) -> RunManifest:
    """Plan ``project_root`` against ``branch`` and execute it transactionally.

    Planning happens before any branch or ephemeral ref exists, so plan
    errors leave the catalog exactly as it was.
    """
    sweep_orphans(ws)
    catalog = ws.catalog
    budget = default_budget() if budget_bytes is None else budget_bytes
    exists = catalog.has_branch(branch)
    input_commit = catalog.head(branch if exists else MAIN)
    project = ingest_project(project_root, input_commit, ws.store)
    _, physical = plan_project(ws, project, catalog.get_commit(input_commit).state, budget, inflation, optimize)
    if not exists:
        catalog.create_branch(branch, input_commit)
        log.info("created branch %s from main", branch)

    run_id = ws.registry.allocate(branch)
    manifest = RunManifest(
        run_id=run_id,
        status="running",
        fingerprint=project.fingerprint,
        files=dict(project.files),
        input_branch=branch,
        input_commit=input_commit,
        ephemeral_branch=f"run_{run_id}",
        target_branch=branch,
        created_at=time.time(),
        has_external_functions=project.has_external_functions,
        budget_bytes=budget,
        inflation=inflation,
        optimized=optimize,
    )
    return _transact(ws, manifest, physical, project, workers, on_unit_done)


def _replay_selection(plan: LogicalPlan, selected: set[str], original: RunManifest) -> tuple[set[str], dict[str, str]]:
    """Restrict ``plan`` to ``selected``; unselected model parents become scans of the original outputs."""
    chosen = set(selected)
    pinned: dict[str, str] = {}
    snapshots = original.materialized()
    changed = True
    while changed:
        changed = False
        for name in sorted(chosen):
            for p in plan[name].parents:
                if p in chosen or p in pinned:
                    continue
                node = plan[p]
                if node.kind is NodeKind.SOURCE_SCAN:
                    chosen.add(p)
                    changed = True
                elif p in snapshots:
                    pinned[p] = snapshots[p]
                else:
                    log.warning("run %d has no output for '%s'; re-executing it", original.run_id, p)
                    chosen.add(p)
                    changed = True
    return chosen, pinned


@dataclass
class ReplayPlan:
    original: RunManifest
    project: ProjectSource
    logical: LogicalPlan
    physical: PhysicalPlan
    pinned: dict[str, str]
    selector: NodeSelector | None


def plan_replay(ws: Workspace, run_id: int, selector: str | NodeSelector | None = None) -> ReplayPlan:
    """Plan the re-execution of run ``run_id`` from its snapshotted files and input commit."""
    original = ws.registry.manifest(run_id)
    project = project_from_blobs(original.files, original.input_commit, ws.store)
    state = ws.catalog.get_commit(original.input_commit).state
    logical = build_logical_plan(project, state, ws.tables)

    pinned: dict[str, str] = {}
    sel = None
    if selector is not None:
        sel = selector if isinstance(selector, NodeSelector) else NodeSelector.parse(selector)
        chosen, pinned = _replay_selection(logical, sel.select(logical), original)
        scans = []
        for name, sid in pinned.items():
            snap = ws.tables.load(sid)
            scans.append(
                replace(
                    logical[name],
                    kind=NodeKind.SOURCE_SCAN,
                    parents=(),
                    query=None,
                    snapshot_id=sid,
                    source_bytes=snap.total_bytes,
                )
            )
        logical = LogicalPlan([logical[n] for n in logical.nodes if n in chosen] + scans)
    if original.optimized:
        physical = fuse(push_down_predicates(logical), original.budget_bytes, original.inflation)
    else:
        physical = fuse(logical, 0, original.inflation)
    return ReplayPlan(original, project, logical, physical, pinned, sel)


def replay(
    ws: Workspace,
    run_id: int,
    selector: str | NodeSelector | None = None,
    workers: int | None = None,
    on_unit_done: Callable | None = None,
) -> RunManifest:
    """Re-execute (part of) run ``run_id`` with its code, over its input commit,
    into a fresh ``replay_<run_id>_<new_id>`` branch."""
    sweep_orphans(ws)
    rp = plan_replay(ws, run_id, selector)
    original = rp.original
    new_id = ws.registry.allocate(f"replay_{run_id}")
    target = f"replay_{run_id}_{new_id}"
    ws.catalog.create_branch(target, original.input_commit)
    manifest = RunManifest(
        run_id=new_id,
        status="running",
        fingerprint=rp.project.fingerprint,
        files=dict(rp.project.files),
        input_branch=original.input_branch,
        input_commit=original.input_commit,
        ephemeral_branch=f"run_{new_id}",
        target_branch=target,
        created_at=time.time(),
        has_external_functions=rp.project.has_external_functions,
        budget_bytes=original.budget_bytes,
        inflation=original.inflation,
        optimized=original.optimized,
        replay_of=run_id,
        selector=str(rp.selector) if rp.selector else None,
    )
    return _transact(ws, manifest, rp.physical, rp.project, workers, on_unit_done, rp.pinned)


def explain_project(
    ws: Workspace,
    project_root: str | os.PathLike,
    branch: str = MAIN,
    budget_bytes: int | None = None,
    inflation: float = DEFAULT_INFLATION,
    optimize: bool = True,
) -> dict:
    """Plans for ``project_root`` without executing or writing any ref."""
    catalog = ws.catalog
    input_commit = catalog.head(branch if catalog.has_branch(branch) else MAIN)
    project = ingest_project(project_root, input_commit, ws.store)
    budget = default_budget() if budget_bytes is None else budget_bytes
    logical, physical = plan_project(ws, project, catalog.get_commit(input_commit).state, budget, inflation, optimize)
    out = explain(logical, physical)
    out["input_commit"] = input_commit
    out["fingerprint"] = project.fingerprint
    return out


# -- interactive queries ------------------------------------------------------


@dataclass
class QueryResult:
    relation: Relation
    rows_scanned: int
    commit: str


def query(ws: Workspace, sql: str, ref: str = MAIN) -> QueryResult:
    """Read-only query against the catalog state at ``ref``.

    The WHERE clause is evaluated inside the scan, exactly like a pushed
    predicate in a pipeline.
    """
    q = parse(sql)
    commit = ws.catalog.resolve_commit(ref)
    state = ws.catalog.get_commit(commit).state
    if q.from_table not in state.tables:
        raise UnknownTable(q.from_table)
    snap = ws.tables.load(state.tables[q.from_table])
    output_schema(q, snap.schema)
    res = ws.tables.scan(snap, predicate=q.where)
    return QueryResult(execute(q.without_where(), res.relation), res.rows_scanned, commit)


def import_table(ws: Workspace, name: str, rel: Relation, branch: str = MAIN, message: str | None = None) -> str:
    """Write ``rel`` as a new snapshot of ``name`` and commit it to ``branch``."""
    catalog = ws.catalog
    while True:
        head = catalog.head(branch)
        state = catalog.get_commit(head).state
        snap = ws.tables.write_table(rel, parent=state.tables.get(name))
        try:
            return catalog.commit(branch, state.with_table(name, snap.id), message or f"import {name}", head)
        except StaleHead:
            continue
