"""Query execution, expectation checks and the external-function protocol."""

from __future__ import annotations

import json
import os
import re
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence, Union

from .errors import (
    EmptyAggregate,
    FunctionTimeout,
    NonZeroExit,
    ProtocolError,
    SchemaError,
    SqlSyntaxError,
    SqlTypeError,
    UnknownColumn,
)
from .evaluate import apply_filter, evaluate
from .relation import ColumnType, Relation, Schema, decode_csv, decode_schema, encode_csv, encode_schema
from .sql import Aggregate, Binary, ColumnRef, Literal, Not, SelectQuery, output_schema, walk

DEFAULT_TIMEOUT_S = 300.0

# -- SELECT execution ---------------------------------------------------------


def execute(q: SelectQuery, rel: Relation) -> Relation:
    """Run ``q`` over ``rel``: filter, project or aggregate, order, limit."""
    out_schema = output_schema(q, rel.schema)
    rel = apply_filter(q.where, rel)
    order_on_input = q.order_by is not None and q.order_by.column not in out_schema

    if q.group_by or q.has_aggregates:
        columns = _aggregate(q, rel)
    elif q.is_star:
        columns = [list(c) for c in rel.columns]
    else:
        columns = [list(evaluate(p.expr, rel)) for p in q.projections]

    n = len(columns[0]) if columns else 0
    if q.order_by is not None:
        key = rel.column(q.order_by.column) if order_on_input else columns[out_schema.index(q.order_by.column)]
        order = sort_indices(key, q.order_by.descending)
        columns = [[c[i] for i in order] for c in columns]
    if q.limit is not None and q.limit < n:
        columns = [c[: q.limit] for c in columns]
    return Relation(out_schema, columns, validate=False)


def sort_indices(key: Sequence[Any], descending: bool) -> list[int]:
    """Stable order of row indices; NULLs last under ASC and first under DESC."""
    nulls = [i for i, v in enumerate(key) if v is None]
    present = [i for i, v in enumerate(key) if v is not None]
    # reverse=True keeps equal keys in input order, so the sort stays stable
    present.sort(key=key.__getitem__, reverse=descending)
    return nulls + present if descending else present + nulls


def _aggregate(q: SelectQuery, rel: Relation) -> list[list[Any]]:
    groups: dict[tuple, list[int]] = {}
    if q.group_by:
        keys = list(zip(*(rel.column(c) for c in q.group_by)))
        for i, k in enumerate(keys):
            groups.setdefault(k, []).append(i)
    else:
        groups[()] = list(range(rel.num_rows))

    out: list[list[Any]] = [[] for _ in q.projections]
    for key, rows in groups.items():
        env = dict(zip(q.group_by, key))
        for col, p in zip(out, q.projections):
            col.append(_eval_grouped(p.expr, env, rows, rel))
    return out


def aggregate_value(fn: str, values: Sequence[Any], n_rows: int) -> Any:
    if fn == "COUNT_STAR":
        return n_rows
    present = [v for v in values if v is not None]
    if fn == "COUNT":
        return len(present)
    if not present:
        return None
    if fn == "SUM":
        total = present[0]
        for v in present[1:]:
            total = total + v
        return total
    if fn == "AVG":
        total = 0.0
        for v in present:
            total = total + v
        return total / len(present)
    if fn == "MIN":
        return min(present)
    if fn == "MAX":
        return max(present)
    raise SqlTypeError(f"unknown aggregate {fn}")


def _eval_grouped(expr, env: dict, rows: list[int], rel: Relation) -> Any:
    """Evaluate one projection for a single group (aggregates over ``rows``)."""
    if isinstance(expr, Aggregate):
        values = [] if expr.column is None else [rel.column(expr.column)[i] for i in rows]
        return aggregate_value(expr.fn, values, len(rows))
    if isinstance(expr, ColumnRef):
        return env[expr.name]
    if isinstance(expr, Literal):
        return expr.value
    # compound tree: fold the group (and its aggregates) into a one-row relation
    names, values = [], []
    for i, e in enumerate(walk(expr)):
        if isinstance(e, Aggregate):
            names.append(f"__agg{i}")
            values.append(_eval_grouped(e, env, rows, rel))
    substituted = _substitute(expr, iter(names))
    cols = {**env, **dict(zip(names, values))}
    one = _one_row(cols)
    return evaluate(substituted, one)[0]


def _substitute(expr, names):
    if isinstance(expr, Aggregate):
        return ColumnRef(next(names))
    if isinstance(expr, Binary):
        left = _substitute(expr.left, names)
        return Binary(expr.op, left, _substitute(expr.right, names))
    if isinstance(expr, Not):
        return Not(_substitute(expr.operand, names))
    return expr


def _one_row(values: dict) -> Relation:
    if not values:
        values = {"__dummy": 0}
    cols = []
    for name, v in values.items():
        cols.append((name, _runtime_type(v)))
    return Relation(Schema.of(*cols), [[v] for v in values.values()], validate=False)


def _runtime_type(v) -> ColumnType:
    if isinstance(v, bool):
        return ColumnType.BOOL
    if isinstance(v, int):
        return ColumnType.INT64
    if isinstance(v, float):
        return ColumnType.FLOAT64
    return ColumnType.STRING


# -- builtin checks -----------------------------------------------------------

CHECK_AGGREGATES = ("mean", "sum", "min", "max", "count", "null_fraction")
CHECK_OPS = ("=", "!=", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class CheckClause:
    agg: str
    column: str | None
    op: str
    value: float | int
    negated: bool = False


@dataclass(frozen=True)
class CheckBool:
    op: str  # AND / OR
    left: "Check"
    right: "Check"


Check = Union[CheckClause, CheckBool]


@dataclass(frozen=True)
class BuiltinCheck:
    expression: Check
    source: str = ""


@dataclass(frozen=True)
class ExternalFunction:
    command: tuple[str, ...]
    requirements: Mapping[str, str] = field(default_factory=dict)
    timeout_s: float | None = None

    @classmethod
    def from_json(cls, obj: dict) -> "ExternalFunction":
        if not isinstance(obj, dict):
            raise ProtocolError("function manifest must be a JSON object")
        cmd = obj.get("command")
        if not isinstance(cmd, list) or not cmd or not all(isinstance(c, str) for c in cmd):
            raise ProtocolError("'command' must be a non-empty list of strings")
        reqs = obj.get("requirements", {})
        if not isinstance(reqs, dict) or not all(isinstance(v, str) for v in reqs.values()):
            raise ProtocolError("'requirements' must map package names to version strings")
        timeout = obj.get("timeout_s")
        return cls(tuple(cmd), dict(reqs), float(timeout) if timeout is not None else None)

    def to_json(self) -> dict:
        out: dict = {"command": list(self.command), "requirements": dict(self.requirements)}
        if self.timeout_s is not None:
            out["timeout_s"] = self.timeout_s
        return out


@dataclass(frozen=True)
class ExpectationSpec:
    target_table: str
    body: Union[BuiltinCheck, ExternalFunction]


_CHECK_TOKEN = re.compile(
    r"\s*(?:(?P<num>-?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<word>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>!=|<=|>=|=|<|>)|(?P<punct>[()]))"
)


def parse_check(text: str) -> BuiltinCheck:
    """Parse ``clause ((AND|OR) clause)*`` where ``clause := [NOT] agg([col]) cmp number``.

    AND binds tighter than OR.
    """
    tokens: list[tuple[str, Any, int]] = []
    pos = 0
    stripped = text.strip()
    while pos < len(stripped):
        m = _CHECK_TOKEN.match(stripped, pos)
        if m is None or m.end() == pos:
            raise SqlSyntaxError(f"unexpected character {stripped[pos]!r} in check", 1, pos + 1)
        col = m.start(m.lastgroup) + 1
        kind = m.lastgroup
        raw = m.group(kind)
        if kind == "num":
            tokens.append(("num", float(raw) if any(c in raw for c in ".eE") else int(raw), col))
        elif kind == "word":
            tokens.append(("word", raw.lower(), col))
        else:
            tokens.append((kind, raw, col))
        pos = m.end()
        while pos < len(stripped) and stripped[pos].isspace():
            pos += 1
    tokens.append(("eof", None, len(stripped) + 1))
    i = 0

    def fail(msg):
        raise SqlSyntaxError(msg, 1, tokens[i][2])

    def expect(kind, value=None):
        nonlocal i
        k, v, _ = tokens[i]
        if k != kind or (value is not None and v != value):
            fail(f"expected {value or kind}")
        i += 1
        return v

    def clause() -> CheckClause:
        nonlocal i
        negated = False
        if tokens[i][:2] == ("word", "not"):
            negated = True
            i += 1
        agg = expect("word")
        if agg not in CHECK_AGGREGATES:
            i -= 1
            fail(f"unknown check aggregate '{agg}'")
        expect("punct", "(")
        column = None
        if tokens[i][0] == "word":
            column = tokens[i][1]
            i += 1
        expect("punct", ")")
        if column is None and agg != "count":
            fail(f"{agg}() needs a column")
        op = expect("op")
        value = expect("num")
        return CheckClause(agg, column, op, value, negated)

    def conj() -> Check:
        nonlocal i
        left: Check = clause()
        while tokens[i][:2] == ("word", "and"):
            i += 1
            left = CheckBool("AND", left, clause())
        return left

    expr = conj()
    while tokens[i][:2] == ("word", "or"):
        i += 1
        expr = CheckBool("OR", expr, conj())
    if tokens[i][0] != "eof":
        fail("unexpected trailing input in check")
    return BuiltinCheck(expr, stripped)


def check_columns(check: Check) -> list[str]:
    if isinstance(check, CheckBool):
        return check_columns(check.left) + check_columns(check.right)
    return [check.column] if check.column else []


def _check_aggregate(agg: str, column: str | None, rel: Relation) -> float | int:
    if column is None:
        return rel.num_rows
    if column not in rel.schema:
        raise UnknownColumn(column, rel.schema.names)
    values = rel.column(column)
    if agg == "count":
        return sum(1 for v in values if v is not None)
    if agg == "null_fraction":
        if not values:
            raise EmptyAggregate(f"null_fraction({column}) over an empty table")
        return sum(1 for v in values if v is None) / len(values)
    if not rel.schema.type_of(column).numeric:
        raise SqlTypeError(f"{agg}({column}) needs a numeric column")
    present = [v for v in values if v is not None]
    if agg == "sum":
        total = 0
        for v in present:
            total = total + v
        return total
    if not present:
        raise EmptyAggregate(f"{agg}({column}) over an empty or all-NULL column")
    if agg == "mean":
        total = 0.0
        for v in present:
            total = total + v
        return total / len(present)
    return min(present) if agg == "min" else max(present)


_CMP = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def evaluate_builtin_check(check: BuiltinCheck | Check, rel: Relation) -> bool:
    expr = check.expression if isinstance(check, BuiltinCheck) else check
    if isinstance(expr, CheckBool):
        left = evaluate_builtin_check(expr.left, rel)
        right = evaluate_builtin_check(expr.right, rel)
        return (left and right) if expr.op == "AND" else (left or right)
    result = _CMP[expr.op](_check_aggregate(expr.agg, expr.column, rel), expr.value)
    return not result if expr.negated else bool(result)


# -- external functions -------------------------------------------------------


def _env_name(table: str) -> str:
    return "BPLN_INPUT_" + table.upper()


def _write_wire(rel: Relation, path: Path) -> None:
    path.write_bytes(encode_csv(rel))
    Path(str(path) + ".schema.json").write_bytes(encode_schema(rel.schema))


def read_wire(path: str | os.PathLike) -> Relation:
    """Load a relation written in the function wire format (CSV + ``.schema.json``)."""
    path = Path(path)
    schema_path = Path(str(path) + ".schema.json")
    try:
        schema = decode_schema(schema_path.read_bytes())
        return decode_csv(path.read_bytes(), schema)
    except FileNotFoundError as exc:
        raise ProtocolError(f"missing output file {exc.filename}") from None
    except (SchemaError, ValueError, KeyError, TypeError) as exc:
        raise ProtocolError(f"malformed output: {exc}") from None


def invoke_external_function(
    fn: ExternalFunction,
    inputs: Mapping[str, Relation],
    mode: str = "expectation",
    files: Mapping[str, bytes] | None = None,
    timeout_s: float | None = None,
) -> bool | Relation:
    """Run ``fn`` in a fresh private directory and decode its answer.

    ``files`` (relative path -> bytes) are copied into the working directory,
    so project scripts can be referenced by relative path in the command.
    """
    if mode not in ("expectation", "model"):
        raise ValueError(f"unknown mode {mode!r}")
    timeout = timeout_s or fn.timeout_s or float(os.environ.get("BPLN_FN_TIMEOUT_S", DEFAULT_TIMEOUT_S))
    with tempfile.TemporaryDirectory(prefix="bpln-fn-") as tmp:
        work = Path(tmp)
        for rel_path, data in (files or {}).items():
            dst = work / rel_path
            dst.parent.mkdir(parents=True, exist_ok=True)
            dst.write_bytes(data)
        io_dir = work / ".bpln"
        io_dir.mkdir()
        env = {k: v for k, v in os.environ.items() if not k.startswith("BPLN_")}
        for name, rel in inputs.items():
            path = io_dir / f"{name}.csv"
            _write_wire(rel, path)
            env[_env_name(name)] = str(path.resolve())
        out_path = io_dir / "output.csv"
        if mode == "model":
            env["BPLN_OUTPUT"] = str(out_path.resolve())
        try:
            proc = subprocess.run(
                list(fn.command),
                cwd=work,
                env=env,
                capture_output=True,
                timeout=timeout,
                stdin=subprocess.DEVNULL,
            )
        except subprocess.TimeoutExpired:
            raise FunctionTimeout(f"external function timed out after {timeout:g} s") from None
        except OSError as exc:
            raise NonZeroExit(127, str(exc)) from None
        stderr = proc.stderr.decode("utf-8", "replace")
        if proc.returncode != 0:
            raise NonZeroExit(proc.returncode, stderr)
        if mode == "model":
            return read_wire(out_path)
        return _parse_verdict(proc.stdout)


def _parse_verdict(stdout: bytes) -> bool:
    lines = [ln for ln in stdout.decode("utf-8", "replace").splitlines() if ln.strip()]
    if not lines:
        raise ProtocolError("expectation produced no output; expected {\"pass\": true|false}")
    try:
        obj = json.loads(lines[-1])
    except json.JSONDecodeError:
        raise ProtocolError(f"expectation output is not JSON: {lines[-1][:80]!r}") from None
    if not isinstance(obj, dict) or not isinstance(obj.get("pass"), bool):
        raise ProtocolError("expectation output must be an object with a boolean 'pass'")
    return obj["pass"]
