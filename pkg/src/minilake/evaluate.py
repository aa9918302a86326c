"""Column-at-a-time evaluation of SQL expressions with three-valued logic.

NULL propagates through arithmetic and comparisons; AND/OR follow Kleene
logic. Division by zero raises instead of yielding NULL.
"""

from __future__ import annotations

import operator
from typing import Any

from .errors import DivisionByZero, SqlTypeError
from .relation import Relation
from .sql import Aggregate, ColumnRef, Expr, Literal, Not

_COMPARE = {
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}
_ARITH = {"+": operator.add, "-": operator.sub, "*": operator.mul}


def _div(a, b):
    if b == 0:
        raise DivisionByZero("division by zero")
    return a / b


def evaluate(expr: Expr, rel: Relation) -> list[Any]:
    """Evaluate a scalar expression for every row of ``rel``."""
    n = rel.num_rows
    if isinstance(expr, ColumnRef):
        return rel.column(expr.name)
    if isinstance(expr, Literal):
        return [expr.value] * n
    if isinstance(expr, Aggregate):
        raise SqlTypeError("aggregate used in a scalar context")
    if isinstance(expr, Not):
        return [None if v is None else not v for v in evaluate(expr.operand, rel)]
    left = evaluate(expr.left, rel)
    right = evaluate(expr.right, rel)
    op = expr.op
    if op == "AND":
        return [
            False if (a is False or b is False) else None if (a is None or b is None) else True
            for a, b in zip(left, right)
        ]
    if op == "OR":
        return [
            True if (a is True or b is True) else None if (a is None or b is None) else False
            for a, b in zip(left, right)
        ]
    if op == "/":
        fn = _div
    else:
        fn = _COMPARE.get(op) or _ARITH[op]
    return [None if a is None or b is None else fn(a, b) for a, b in zip(left, right)]


def matching_rows(predicate: Expr | None, rel: Relation) -> list[int]:
    """Indices of rows for which ``predicate`` is TRUE (NULL counts as false)."""
    if predicate is None:
        return list(range(rel.num_rows))
    return [i for i, v in enumerate(evaluate(predicate, rel)) if v is True]


def apply_filter(predicate: Expr | None, rel: Relation) -> Relation:
    if predicate is None:
        return rel
    keep = matching_rows(predicate, rel)
    if len(keep) == rel.num_rows:
        return rel
    return rel.take(keep)
