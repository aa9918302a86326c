"""Row-at-a-time reference interpreter for the SQL subset.

Deliberately naive and independent of the columnar engine: rows are dicts,
every expression is evaluated per row, ordering uses a comparator. It only
shares the AST definitions with the package.

Semantics (from the subset's definition):
* WHERE keeps rows whose predicate is TRUE; NULL and FALSE drop the row.
* NULL propagates through arithmetic and comparison; AND/OR are Kleene.
* ``/`` yields a float; a non-NULL division by zero is an error.
* COUNT(*) counts rows, other aggregates skip NULLs; SUM/AVG/MIN/MAX of
  nothing is NULL. No GROUP BY means exactly one output row.
* Groups appear in order of first occurrence.
* ORDER BY is stable, NULLs last ascending and first descending.
"""

from __future__ import annotations

import functools

from minilake.sql import Aggregate, Binary, ColumnRef, Literal, Not, Star


class OracleDivisionByZero(Exception):
    pass


def _kleene_and(a, b):
    if a is False or b is False:
        return False
    if a is None or b is None:
        return None
    return True


def _kleene_or(a, b):
    if a is True or b is True:
        return True
    if a is None or b is None:
        return None
    return False


def _binary(op, a, b):
    if op == "AND":
        return _kleene_and(a, b)
    if op == "OR":
        return _kleene_or(a, b)
    if a is None or b is None:
        return None
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0:
            raise OracleDivisionByZero()
        return a / b
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise AssertionError(op)


def eval_row(expr, row: dict):
    if isinstance(expr, ColumnRef):
        return row[expr.name]
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, Not):
        v = eval_row(expr.operand, row)
        return None if v is None else not v
    if isinstance(expr, Binary):
        # both sides always evaluated: no short circuit
        a = eval_row(expr.left, row)
        b = eval_row(expr.right, row)
        return _binary(expr.op, a, b)
    raise AssertionError(f"not a scalar expression: {expr!r}")


def aggregate(fn, column, rows: list[dict]):
    if fn == "COUNT_STAR":
        return len(rows)
    vals = [r[column] for r in rows if r[column] is not None]
    if fn == "COUNT":
        return len(vals)
    if not vals:
        return None
    if fn == "SUM":
        acc = vals[0]
        for v in vals[1:]:
            acc = acc + v
        return acc
    if fn == "AVG":
        return sum(vals) / len(vals)
    if fn == "MIN":
        best = vals[0]
        for v in vals[1:]:
            if v < best:
                best = v
        return best
    if fn == "MAX":
        best = vals[0]
        for v in vals[1:]:
            if v > best:
                best = v
        return best
    raise AssertionError(fn)


def eval_group(expr, key_env: dict, rows: list[dict]):
    if isinstance(expr, Aggregate):
        return aggregate(expr.fn, expr.column, rows)
    if isinstance(expr, ColumnRef):
        return key_env[expr.name]
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, Not):
        v = eval_group(expr.operand, key_env, rows)
        return None if v is None else not v
    a = eval_group(expr.left, key_env, rows)
    b = eval_group(expr.right, key_env, rows)
    return _binary(expr.op, a, b)


def _has_agg(expr) -> bool:
    if isinstance(expr, Aggregate):
        return True
    if isinstance(expr, Binary):
        return _has_agg(expr.left) or _has_agg(expr.right)
    if isinstance(expr, Not):
        return _has_agg(expr.operand)
    return False


def _is_star(q) -> bool:
    return len(q.projections) == 1 and isinstance(q.projections[0].expr, Star)


def output_names(q, input_names):
    if _is_star(q):
        return list(input_names)
    names = []
    for i, p in enumerate(q.projections):
        if p.alias:
            names.append(p.alias)
        elif isinstance(p.expr, ColumnRef):
            names.append(p.expr.name)
        else:
            names.append(f"col_{i}")
    return names


def _stable_sort(items: list, key_of, descending: bool) -> list:
    def cmp(x, y):
        (i, a), (j, b) = x, y
        va, vb = key_of(a), key_of(b)
        if va is None and vb is None:
            return (i > j) - (i < j)
        if va is None:
            return -1 if descending else 1
        if vb is None:
            return 1 if descending else -1
        if va != vb:
            r = -1 if va < vb else 1
            return -r if descending else r
        return (i > j) - (i < j)

    indexed = list(enumerate(items))
    indexed.sort(key=functools.cmp_to_key(cmp))
    return [it for _, it in indexed]


def run_query(q, input_names: list[str], rows: list[tuple]) -> tuple[list[str], list[tuple]]:
    """Evaluate ``q`` over ``rows`` (tuples in ``input_names`` order)."""
    dict_rows = [dict(zip(input_names, r)) for r in rows]
    kept = [r for r in dict_rows if q.where is None or eval_row(q.where, r) is True]
    names = output_names(q, input_names)
    is_star = _is_star(q)
    grouped = bool(q.group_by) or any(_has_agg(p.expr) for p in q.projections if not is_star)

    if grouped:
        groups: list[tuple[tuple, list[dict]]] = []
        index: dict[tuple, int] = {}
        if q.group_by:
            for r in kept:
                k = tuple(r[c] for c in q.group_by)
                if k not in index:
                    index[k] = len(groups)
                    groups.append((k, []))
                groups[index[k]][1].append(r)
        else:
            groups.append(((), kept))
        out = []
        for k, members in groups:
            env = dict(zip(q.group_by, k))
            out.append(tuple(eval_group(p.expr, env, members) for p in q.projections))
        if q.order_by is not None:
            pos = names.index(q.order_by.column)
            out = _stable_sort(out, lambda t: t[pos], q.order_by.descending)
    else:
        source = kept
        if q.order_by is not None and q.order_by.column not in names:
            col = q.order_by.column
            source = _stable_sort(kept, lambda r: r[col], q.order_by.descending)
        if is_star:
            out = [tuple(r[c] for c in input_names) for r in source]
        else:
            out = [tuple(eval_row(p.expr, r) for p in q.projections) for r in source]
        if q.order_by is not None and q.order_by.column in names:
            pos = names.index(q.order_by.column)
            out = _stable_sort(out, lambda t: t[pos], q.order_by.descending)
    if q.limit is not None:
        out = out[: q.limit]
    return names, out


def brute_force_group_count(rows, key_columns: list[int]) -> dict[tuple, int]:
    """Count rows per key with a plain dictionary (for the pickups oracle)."""
    counts: dict[tuple, int] = {}
    for r in rows:
        k = tuple(r[i] for i in key_columns)
        counts[k] = counts.get(k, 0) + 1
    return counts


def same_value(a, b) -> bool:
    """Bit-level equality: same Python type and, for floats, same repr."""
    if type(a) is not type(b):
        return False
    if isinstance(a, float):
        return repr(a) == repr(b)
    return a == b


def same_rows(xs, ys) -> bool:
    return len(xs) == len(ys) and all(
        len(x) == len(y) and all(same_value(a, b) for a, b in zip(x, y)) for x, y in zip(xs, ys)
    )
