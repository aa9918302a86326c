"""Project ingestion and plan compilation.

A project directory is a flat set of files:

* ``<name>.sql``: a model; its SELECT defines table ``<name>``.
* ``<table>_expectation.check``: a builtin check over ``<table>``.
* ``<table>_expectation.fn.json``: an external-function check over ``<table>``.

Any other file is snapshotted with the project (so scripts referenced by
expectation commands travel with it) but does not become a node.

Compilation has three layers: the logical plan (nodes + edges from the
implicit ``FROM`` references), predicate pushdown on that plan, and fusion
into execution units that keep intermediates in memory.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

from .catalog import TABLE_NAME, CatalogState
from .engine import BuiltinCheck, ExpectationSpec, ExternalFunction, check_columns, parse_check
from .errors import (
    CycleDetected,
    DuplicateModel,
    EmptyProject,
    LakehouseError,
    UnknownColumn,
    UnknownReference,
    UnparseableFile,
)
from .objectstore import ObjectStore
from .relation import Schema
from .sql import (
    Binary,
    ColumnRef,
    Expr,
    Not,
    SelectQuery,
    conjoin,
    conjuncts,
    format_expr,
    format_query,
    output_schema,
    parse,
    referenced_columns,
    walk,
)
from .tables import TableStore

log = logging.getLogger(__name__)

DEFAULT_INFLATION = 3.0
CHECK_SUFFIX = "_expectation.check"
FN_SUFFIX = "_expectation.fn.json"
_IGNORED_DIRS = {"__pycache__", "node_modules"}


# -- project ingestion --------------------------------------------------------


@dataclass
class ProjectSource:
    files: dict[str, str]  # relative path -> blob id
    input_commit: str
    fingerprint: str
    models: dict[str, SelectQuery]
    model_paths: dict[str, str]
    expectations: dict[str, ExpectationSpec]
    expectation_paths: dict[str, str]
    contents: dict[str, bytes] = field(repr=False, default_factory=dict)
    root: Path | None = None

    @property
    def has_external_functions(self) -> bool:
        return any(isinstance(e.body, ExternalFunction) for e in self.expectations.values())


def compute_fingerprint(files: Mapping[str, str], input_commit: str) -> str:
    """SHA-256 over sorted ``path NUL blob LF`` lines followed by the input commit."""
    h = hashlib.sha256()
    for path, blob in sorted(files.items()):
        h.update(f"{path}\0{blob}\n".encode("utf-8"))
    h.update(input_commit.encode("ascii"))
    return h.hexdigest()


def _walk_files(root: Path) -> Iterable[Path]:
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(d for d in dirnames if not d.startswith(".") and d not in _IGNORED_DIRS)
        for name in sorted(filenames):
            if not name.startswith("."):
                yield Path(dirpath) / name


def ingest_project(root: str | os.PathLike, input_commit: str, store: ObjectStore) -> ProjectSource:
    root = Path(root)
    if not root.is_dir():
        raise EmptyProject(f"project directory {root} does not exist")
    contents = {p.relative_to(root).as_posix(): p.read_bytes() for p in _walk_files(root)}
    project = project_from_contents(contents, input_commit, store)
    project.root = root
    return project


def project_from_blobs(files: Mapping[str, str], input_commit: str, store: ObjectStore) -> ProjectSource:
    """Rebuild a project from a snapshotted file mapping (used by replay)."""
    return project_from_contents({p: store.get(b) for p, b in files.items()}, input_commit, store)


def project_from_contents(contents: Mapping[str, bytes], input_commit: str, store: ObjectStore) -> ProjectSource:
    files = {path: store.put(data) for path, data in sorted(contents.items())}
    models: dict[str, SelectQuery] = {}
    model_paths: dict[str, str] = {}
    expectations: dict[str, ExpectationSpec] = {}
    expectation_paths: dict[str, str] = {}

    for path, data in sorted(contents.items()):
        base = path.rsplit("/", 1)[-1]
        try:
            if base.endswith(CHECK_SUFFIX) or base.endswith(FN_SUFFIX):
                suffix = CHECK_SUFFIX if base.endswith(CHECK_SUFFIX) else FN_SUFFIX
                target = base[: -len(suffix)]
                name = f"{target}_expectation"
                _check_name(target, path)
                if name in expectations:
                    raise DuplicateModel(
                        f"expectation '{name}' defined by both {expectation_paths[name]} and {path}"
                    )
                text = data.decode("utf-8")
                if suffix == CHECK_SUFFIX:
                    body = parse_check(text)
                else:
                    body = ExternalFunction.from_json(json.loads(text))
                expectations[name] = ExpectationSpec(target, body)
                expectation_paths[name] = path
            elif base.endswith(".sql"):
                name = base[: -len(".sql")].lower()
                _check_name(name, path)
                if name.endswith("_expectation"):
                    raise ValueError("model names may not end in '_expectation'")
                if name in models:
                    raise DuplicateModel(f"model '{name}' defined by both {model_paths[name]} and {path}")
                models[name] = parse(data.decode("utf-8"))
                model_paths[name] = path
        except DuplicateModel:
            raise
        except (LakehouseError, ValueError, UnicodeDecodeError) as exc:
            raise UnparseableFile(path, exc) from exc

    if not models:
        raise EmptyProject("project contains no model (*.sql) files")
    return ProjectSource(
        files=files,
        input_commit=input_commit,
        fingerprint=compute_fingerprint(files, input_commit),
        models=models,
        model_paths=model_paths,
        expectations=expectations,
        expectation_paths=expectation_paths,
        contents=dict(contents),
    )


def _check_name(name: str, path: str) -> None:
    if not TABLE_NAME.match(name):
        raise ValueError(f"'{name}' is not a valid table name (derived from {path})")


# -- logical plan -------------------------------------------------------------


class NodeKind(str, enum.Enum):
    SOURCE_SCAN = "source_scan"
    SQL_MODEL = "sql_model"
    EXPECTATION = "expectation"


_KIND_RANK = {NodeKind.SOURCE_SCAN: 0, NodeKind.EXPECTATION: 1, NodeKind.SQL_MODEL: 2}


@dataclass(frozen=True)
class LogicalNode:
    name: str
    kind: NodeKind
    parents: tuple[str, ...] = ()
    schema: Schema | None = None
    query: SelectQuery | None = None
    expectation: ExpectationSpec | None = None
    snapshot_id: str | None = None
    source_bytes: int = 0
    pushed_predicate: Expr | None = None
    path: str | None = None

    def to_json(self) -> dict:
        out: dict = {"name": self.name, "kind": self.kind.value, "parents": list(self.parents)}
        if self.schema is not None:
            out["schema"] = self.schema.to_json()["columns"]
        if self.query is not None:
            out["sql"] = format_query(self.query)
        if self.expectation is not None:
            body = self.expectation.body
            out["target"] = self.expectation.target_table
            if isinstance(body, BuiltinCheck):
                out["check"] = body.source
            else:
                out["function"] = body.to_json()
        if self.snapshot_id is not None:
            out["snapshot"] = self.snapshot_id
        if self.pushed_predicate is not None:
            out["pushed_predicate"] = format_expr(self.pushed_predicate)
        if self.path is not None:
            out["path"] = self.path
        return out


class LogicalPlan:
    """Nodes keyed by name, stored in a deterministic topological order."""

    def __init__(self, nodes: Iterable[LogicalNode]):
        by_name = {n.name: n for n in nodes}
        self.nodes: dict[str, LogicalNode] = {name: by_name[name] for name in _topological(by_name)}
        self._children: dict[str, list[str]] = {n: [] for n in self.nodes}
        for node in self.nodes.values():
            for p in node.parents:
                self._children[p].append(node.name)

    def __contains__(self, name: str) -> bool:
        return name in self.nodes

    def __getitem__(self, name: str) -> LogicalNode:
        return self.nodes[name]

    @property
    def edges(self) -> list[tuple[str, str]]:
        return [(p, n.name) for n in self.nodes.values() for p in n.parents]

    def children(self, name: str) -> list[str]:
        return list(self._children[name])

    def descendants(self, name: str) -> set[str]:
        seen: set[str] = set()
        stack = [name]
        while stack:
            for c in self._children[stack.pop()]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen

    def ancestors(self, name: str) -> set[str]:
        seen: set[str] = set()
        stack = [name]
        while stack:
            for p in self.nodes[stack.pop()].parents:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def replace_nodes(self, updates: Mapping[str, LogicalNode]) -> "LogicalPlan":
        return LogicalPlan([updates.get(name, node) for name, node in self.nodes.items()])

    def depth(self) -> int:
        level: dict[str, int] = {}
        for node in self.nodes.values():
            level[node.name] = 1 + max((level[p] for p in node.parents), default=0)
        return max(level.values(), default=0)

    def to_json(self) -> dict:
        return {
            "nodes": [n.to_json() for n in self.nodes.values()],
            "edges": [list(e) for e in self.edges],
        }


def _topological(nodes: Mapping[str, LogicalNode]) -> list[str]:
    """Kahn's algorithm; ties go scans, then expectations, then models, by name."""
    for node in nodes.values():
        for p in node.parents:
            if p not in nodes:
                raise UnknownReference(p, node.path or node.name)
    indegree = {name: len(set(n.parents)) for name, n in nodes.items()}
    children: dict[str, list[str]] = {name: [] for name in nodes}
    for node in nodes.values():
        for p in set(node.parents):
            children[p].append(node.name)

    def rank(name):
        return (_KIND_RANK[nodes[name].kind], name)

    ready = sorted((n for n, d in indegree.items() if d == 0), key=rank)
    order: list[str] = []
    while ready:
        current = ready.pop(0)
        order.append(current)
        for c in children[current]:
            indegree[c] -= 1
            if indegree[c] == 0:
                ready.append(c)
        ready.sort(key=rank)
    if len(order) != len(nodes):
        raise CycleDetected(_find_cycle({n: nodes[n].parents for n in nodes if n not in order}))
    return order


def _find_cycle(parents: Mapping[str, tuple[str, ...]]) -> list[str]:
    state: dict[str, int] = {}
    stack: list[str] = []

    def visit(n) -> list[str] | None:
        state[n] = 1
        stack.append(n)
        for p in sorted(parents.get(n, ())):
            if p not in parents:
                continue
            if state.get(p) == 1:
                cycle = stack[stack.index(p):] + [p]
                return list(reversed(cycle))
            if p not in state:
                found = visit(p)
                if found:
                    return found
        stack.pop()
        state[n] = 2
        return None

    for n in sorted(parents):
        if n not in state:
            found = visit(n)
            if found:
                return found
    return sorted(parents)


def build_logical_plan(project: ProjectSource, catalog_state: CatalogState, tables: TableStore) -> LogicalPlan:
    nodes: dict[str, LogicalNode] = {}
    warned: set[str] = set()

    def resolve(ref: str, referenced_by: str) -> str:
        if ref in project.models:
            if ref in catalog_state.tables and ref not in warned:
                warned.add(ref)
                log.warning("model '%s' shadows the catalog table of the same name", ref)
            return ref
        if ref in catalog_state.tables:
            if ref not in nodes:
                snap = tables.load(catalog_state.tables[ref])
                nodes[ref] = LogicalNode(
                    ref,
                    NodeKind.SOURCE_SCAN,
                    schema=snap.schema,
                    snapshot_id=snap.id,
                    source_bytes=snap.total_bytes,
                )
            return ref
        raise UnknownReference(ref, referenced_by)

    for name, query in sorted(project.models.items()):
        path = project.model_paths[name]
        parent = resolve(query.from_table, path)
        nodes[name] = LogicalNode(name, NodeKind.SQL_MODEL, (parent,), query=query, path=path)
    for name, spec in sorted(project.expectations.items()):
        path = project.expectation_paths[name]
        parent = resolve(spec.target_table, path)
        nodes[name] = LogicalNode(name, NodeKind.EXPECTATION, (parent,), expectation=spec, path=path)

    plan = LogicalPlan(nodes.values())
    return _propagate_schemas(plan)


def _propagate_schemas(plan: LogicalPlan) -> LogicalPlan:
    resolved: dict[str, LogicalNode] = {}
    for name, node in plan.nodes.items():
        if node.kind is NodeKind.SQL_MODEL:
            parent_schema = resolved[node.parents[0]].schema
            try:
                schema = output_schema(node.query, parent_schema)
            except LakehouseError as exc:
                raise UnparseableFile(node.path or name, exc) from exc
            node = replace(node, schema=schema)
        elif node.kind is NodeKind.EXPECTATION:
            parent_schema = resolved[node.parents[0]].schema
            body = node.expectation.body
            if isinstance(body, BuiltinCheck):
                for col in check_columns(body.expression):
                    if col not in parent_schema:
                        raise UnparseableFile(node.path or name, UnknownColumn(col, parent_schema.names))
        resolved[name] = node
    return LogicalPlan(resolved.values())


# -- predicate pushdown -------------------------------------------------------


def _projection_map(query: SelectQuery, schema: Schema) -> dict[str, Expr]:
    """Output column name -> input expression, for plain projections."""
    if query.is_star:
        return {name: ColumnRef(name) for name in schema.names}
    return {name: p.expr for name, p in zip(schema.names, query.projections)}


def rewrite_through_projection(expr: Expr, mapping: Mapping[str, Expr]) -> Expr | None:
    """Rename columns of ``expr`` to the parent's source columns.

    Only pure renames qualify; returns ``None`` if any column maps to a
    computed expression or is missing.
    """
    if isinstance(expr, ColumnRef):
        target = mapping.get(expr.name)
        return target if isinstance(target, ColumnRef) else None
    if isinstance(expr, Binary):
        left = rewrite_through_projection(expr.left, mapping)
        right = rewrite_through_projection(expr.right, mapping)
        return None if left is None or right is None else Binary(expr.op, left, right)
    if isinstance(expr, Not):
        inner = rewrite_through_projection(expr.operand, mapping)
        return None if inner is None else Not(inner)
    return expr


def _has_division(expr: Expr) -> bool:
    return any(isinstance(e, Binary) and e.op == "/" for e in walk(expr))


def push_down_predicates(plan: LogicalPlan, protect: Iterable[str] | None = None) -> LogicalPlan:
    """Move WHERE conjuncts into the producing parent when that is semantics-preserving.

    A parent accepts a conjunct when it is this node's only consumer, it is
    not in ``protect`` (default: every model, since models are materialized
    and must keep their exact contents), and it has no GROUP BY, aggregates
    or LIMIT. Scans accept every conjunct; models accept conjuncts whose
    columns are plain renames of their inputs.
    """
    protected = (
        set(protect)
        if protect is not None
        else {n for n, node in plan.nodes.items() if node.kind is NodeKind.SQL_MODEL}
    )
    nodes = dict(plan.nodes)
    children = {n: plan.children(n) for n in nodes}

    for name in reversed(list(nodes)):
        node = nodes[name]
        if node.kind is not NodeKind.SQL_MODEL or node.query.where is None or len(node.parents) != 1:
            continue
        parent = nodes[node.parents[0]]
        if len(children[parent.name]) != 1 or parent.name in protected:
            continue
        moved, kept = [], []
        for conj in conjuncts(node.query.where):
            target = _accepts(parent, conj)
            (moved if target is not None else kept).append(target if target is not None else conj)
        if not moved:
            continue
        nodes[name] = replace(node, query=node.query.with_where(conjoin(kept)))
        if parent.kind is NodeKind.SOURCE_SCAN:
            pushed = conjoin(conjuncts(parent.pushed_predicate) + moved)
            nodes[parent.name] = replace(parent, pushed_predicate=pushed)
        else:
            where = conjoin(conjuncts(parent.query.where) + moved)
            nodes[parent.name] = replace(parent, query=parent.query.with_where(where))
    return LogicalPlan(nodes.values())


def _accepts(parent: LogicalNode, conj: Expr) -> Expr | None:
    if parent.kind is NodeKind.SOURCE_SCAN:
        return conj if all(c in parent.schema for c in referenced_columns(conj)) else None
    if parent.kind is not NodeKind.SQL_MODEL:
        return None
    q = parent.query
    if q.group_by or q.has_aggregates or q.limit is not None:
        return None
    if q.where is not None and _has_division(conj):
        # would widen the rows a division is evaluated on
        return None
    return rewrite_through_projection(conj, _projection_map(q, parent.schema))


# -- physical plan ------------------------------------------------------------


@dataclass(frozen=True)
class ExecutionUnit:
    index: int
    steps: tuple[str, ...]
    pushed_predicates: Mapping[str, Expr]
    materialize: tuple[str, ...]
    memory_hint_bytes: int
    engines: Mapping[str, str]

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "steps": list(self.steps),
            "pushed_predicates": {k: format_expr(v) for k, v in self.pushed_predicates.items()},
            "materialize": list(self.materialize),
            "memory_hint_bytes": self.memory_hint_bytes,
            "engines": dict(self.engines),
        }


@dataclass
class PhysicalPlan:
    logical: LogicalPlan
    units: list[ExecutionUnit]
    edges: list[tuple[int, int]]
    budget_bytes: int
    inflation: float

    def unit_of(self, step: str) -> ExecutionUnit:
        for u in self.units:
            if step in u.steps:
                return u
        raise KeyError(step)

    def to_json(self) -> dict:
        return {
            "budget_bytes": self.budget_bytes,
            "inflation": self.inflation,
            "units": [u.to_json() for u in self.units],
            "edges": [list(e) for e in self.edges],
        }


def _estimate(node: LogicalNode, inflation: float) -> int:
    if node.kind is NodeKind.SOURCE_SCAN:
        return int(node.source_bytes * inflation)
    return 0


def _engine(node: LogicalNode) -> str:
    if node.kind is NodeKind.EXPECTATION and isinstance(node.expectation.body, ExternalFunction):
        return "external"
    return "builtin"


def fuse(plan: LogicalPlan, budget_bytes: int, inflation: float = DEFAULT_INFLATION) -> PhysicalPlan:
    """Greedy fusion in topological order.

    A node joins its parent's unit when it has exactly one parent and the
    unit's memory hint plus the node's estimate stays within budget. A
    non-positive budget yields one unit per node.
    """
    unit_of: dict[str, int] = {}
    members: list[list[str]] = []
    hints: list[int] = []
    for name, node in plan.nodes.items():
        est = _estimate(node, inflation)
        if budget_bytes > 0 and len(node.parents) == 1:
            u = unit_of[node.parents[0]]
            if hints[u] + est <= budget_bytes:
                members[u].append(name)
                hints[u] += est
                unit_of[name] = u
                continue
        unit_of[name] = len(members)
        members.append([name])
        hints.append(est)

    units = []
    for i, steps in enumerate(members):
        nodes = [plan[s] for s in steps]
        units.append(
            ExecutionUnit(
                index=i,
                steps=tuple(steps),
                pushed_predicates={
                    n.name: n.pushed_predicate for n in nodes if n.kind is NodeKind.SOURCE_SCAN and n.pushed_predicate is not None
                },
                materialize=tuple(n.name for n in nodes if n.kind is NodeKind.SQL_MODEL),
                memory_hint_bytes=hints[i],
                engines={n.name: _engine(n) for n in nodes},
            )
        )
    edges = sorted(
        {(unit_of[p], unit_of[c]) for p, c in plan.edges if unit_of[p] != unit_of[c]}
    )
    return PhysicalPlan(plan, units, edges, budget_bytes, inflation)


def compile_project(
    project: ProjectSource,
    catalog_state: CatalogState,
    tables: TableStore,
    budget_bytes: int,
    inflation: float = DEFAULT_INFLATION,
    optimize: bool = True,
) -> tuple[LogicalPlan, PhysicalPlan]:
    """Logical plan plus physical plan; ``optimize=False`` gives the naive isomorphic plan."""
    logical = build_logical_plan(project, catalog_state, tables)
    if optimize:
        return logical, fuse(push_down_predicates(logical), budget_bytes, inflation)
    return logical, fuse(logical, 0, inflation)


def explain(logical: LogicalPlan, physical: PhysicalPlan) -> dict:
    return {
        "logical": logical.to_json(),
        "optimized": physical.logical.to_json(),
        "physical": physical.to_json(),
    }
