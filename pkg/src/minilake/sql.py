"""Parser for the single-table SELECT dialect used by pipeline models.

Grammar (keywords case-insensitive, identifiers lowercased)::

    query      := SELECT items FROM ident [WHERE expr] [GROUP BY ident (, ident)*]
                  [ORDER BY ident [ASC|DESC]] [LIMIT integer]
    items      := '*' | item (',' item)*
    item       := expr [AS ident]
    expr       := or_expr
    or_expr    := and_expr (OR and_expr)*
    and_expr   := not_expr (AND not_expr)*
    not_expr   := NOT not_expr | comparison
    comparison := additive [cmp additive]
    additive   := term (('+' | '-') term)*
    term       := unary (('*' | '/') unary)*
    unary      := '-' unary | primary
    primary    := number | string | TRUE | FALSE | aggregate | ident | '(' expr ')'
    aggregate  := COUNT '(' '*' ')' | (COUNT|SUM|AVG|MIN|MAX) '(' ident ')'

Aggregate names are not reserved: ``count`` is a valid column or alias
unless followed by ``(``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Iterator, Union

from .errors import SqlSyntaxError, SqlTypeError, UnknownColumn, UnsupportedFeature
from .relation import Column, ColumnType, Schema

# -- AST ----------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnRef:
    name: str


@dataclass(frozen=True)
class Literal:
    value: Union[int, float, str, bool]


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Not:
    operand: "Expr"


@dataclass(frozen=True)
class Aggregate:
    fn: str  # COUNT_STAR, COUNT, SUM, AVG, MIN, MAX
    column: str | None = None


@dataclass(frozen=True)
class Star:
    """``SELECT *``; expanded against the input schema."""


Expr = Union[ColumnRef, Literal, Binary, Not, Aggregate]

COMPARISONS = ("=", "!=", "<", "<=", ">", ">=")
ARITHMETIC = ("+", "-", "*", "/")
LOGICAL = ("AND", "OR")
AGGREGATES = ("COUNT", "SUM", "AVG", "MIN", "MAX")


@dataclass(frozen=True)
class Projection:
    expr: Union[Expr, Star]
    alias: str | None = None


@dataclass(frozen=True)
class OrderBy:
    column: str
    descending: bool = False


@dataclass(frozen=True)
class SelectQuery:
    projections: tuple[Projection, ...]
    from_table: str
    where: Expr | None = None
    group_by: tuple[str, ...] = ()
    order_by: OrderBy | None = None
    limit: int | None = None

    @property
    def has_aggregates(self) -> bool:
        return any(contains_aggregate(p.expr) for p in self.projections)

    @property
    def is_star(self) -> bool:
        return len(self.projections) == 1 and isinstance(self.projections[0].expr, Star)

    def without_where(self) -> "SelectQuery":
        return replace(self, where=None)

    def with_where(self, where: Expr | None) -> "SelectQuery":
        return replace(self, where=where)


def walk(expr) -> Iterator:
    yield expr
    if isinstance(expr, Binary):
        yield from walk(expr.left)
        yield from walk(expr.right)
    elif isinstance(expr, Not):
        yield from walk(expr.operand)


def contains_aggregate(expr) -> bool:
    return any(isinstance(e, Aggregate) for e in walk(expr))


def referenced_columns(expr) -> list[str]:
    """Column names referenced by ``expr`` (aggregate arguments included), in order."""
    out: list[str] = []
    for e in walk(expr):
        name = e.name if isinstance(e, ColumnRef) else e.column if isinstance(e, Aggregate) else None
        if name is not None and name not in out:
            out.append(name)
    return out


def conjuncts(expr: Expr | None) -> list[Expr]:
    if expr is None:
        return []
    if isinstance(expr, Binary) and expr.op == "AND":
        return conjuncts(expr.left) + conjuncts(expr.right)
    return [expr]


def conjoin(parts: list[Expr]) -> Expr | None:
    if not parts:
        return None
    out = parts[0]
    for p in parts[1:]:
        out = Binary("AND", out, p)
    return out


# -- lexer --------------------------------------------------------------------

KEYWORDS = {
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "ORDER", "ASC", "DESC", "LIMIT",
    "AND", "OR", "NOT", "AS", "TRUE", "FALSE",
}
# recognised only to produce a precise UnsupportedFeature error
UNSUPPORTED = {
    "JOIN": "JOIN", "INNER": "JOIN", "LEFT": "JOIN", "RIGHT": "JOIN", "FULL": "JOIN",
    "CROSS": "JOIN", "UNION": "UNION", "INTERSECT": "INTERSECT", "EXCEPT": "EXCEPT",
    "HAVING": "HAVING", "DISTINCT": "DISTINCT", "WITH": "WITH", "OVER": "window functions",
    "INSERT": "INSERT", "UPDATE": "UPDATE", "DELETE": "DELETE", "CREATE": "CREATE",
    "DROP": "DROP", "ALTER": "ALTER", "CASE": "CASE", "IN": "IN", "BETWEEN": "BETWEEN",
    "LIKE": "LIKE", "IS": "IS", "NULL": "NULL literals", "OFFSET": "OFFSET",
}

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|--[^\n]*)
  | (?P<number>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\d+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><>|!=|<=|>=|[=<>+\-*/(),;])
  | (?P<quoted>"[^"]*")
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # number, string, ident, keyword, op, eof
    text: str
    value: object
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            if text[pos] == "'":
                raise SqlSyntaxError("unterminated string literal", line, col)
            raise SqlSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        raw = m.group()
        if kind == "number":
            value = float(raw) if any(ch in raw for ch in ".eE") else int(raw)
            tokens.append(Token("number", raw, value, line, col))
        elif kind == "string":
            tokens.append(Token("string", raw, raw[1:-1].replace("''", "'"), line, col))
        elif kind == "ident":
            upper = raw.upper()
            if upper in KEYWORDS:
                tokens.append(Token("keyword", upper, upper, line, col))
            else:
                tokens.append(Token("ident", raw, raw.lower(), line, col))
        elif kind == "op":
            op = "!=" if raw == "<>" else raw
            tokens.append(Token("op", op, op, line, col))
        elif kind == "quoted":
            raise UnsupportedFeature("quoted identifiers", line, col)
        newlines = raw.count("\n")
        if newlines:
            line += newlines
            line_start = pos + raw.rindex("\n") + 1
        pos = m.end()
    col = pos - line_start + 1
    tokens.append(Token("eof", "", None, line, col))
    return tokens


# -- parser -------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0
        self.item_tokens: list[Token] = []

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise SqlSyntaxError(f"{message}, found {found}", tok.line, tok.column)

    def check_unsupported(self, tok: Token | None = None):
        tok = tok or self.tok
        if tok.kind == "ident" and tok.value.upper() in UNSUPPORTED:
            raise UnsupportedFeature(UNSUPPORTED[tok.value.upper()], tok.line, tok.column)

    def is_kw(self, *words: str) -> bool:
        return self.tok.kind == "keyword" and self.tok.value in words

    def is_op(self, *ops: str) -> bool:
        return self.tok.kind == "op" and self.tok.value in ops

    def expect_kw(self, word: str) -> Token:
        if not self.is_kw(word):
            self.check_unsupported()
            self.error(f"expected {word}")
        return self.advance()

    def expect_op(self, op: str) -> Token:
        if not self.is_op(op):
            self.check_unsupported()
            self.error(f"expected '{op}'")
        return self.advance()

    def ident(self, what: str = "identifier") -> str:
        self.check_unsupported()
        if self.tok.kind != "ident":
            self.error(f"expected {what}")
        return self.advance().value

    # query ------------------------------------------------------------------

    def query(self) -> SelectQuery:
        self.check_unsupported()
        self.expect_kw("SELECT")
        projections = self.items()
        self.expect_kw("FROM")
        if self.is_op("("):
            raise UnsupportedFeature("subqueries", self.tok.line, self.tok.column)
        table = self.ident("table name")
        if self.is_op(","):
            raise UnsupportedFeature("JOIN", self.tok.line, self.tok.column)
        where = None
        if self.is_kw("WHERE"):
            self.advance()
            where_tok = self.tok
            where = self.expr()
            if contains_aggregate(where):
                raise UnsupportedFeature("aggregates in WHERE", where_tok.line, where_tok.column)
        group_by: list[str] = []
        if self.is_kw("GROUP"):
            self.advance()
            self.expect_kw("BY")
            group_by.append(self.ident("column name"))
            while self.is_op(","):
                self.advance()
                group_by.append(self.ident("column name"))
        order_by = None
        if self.is_kw("ORDER"):
            self.advance()
            self.expect_kw("BY")
            col = self.ident("column name")
            desc = False
            if self.is_kw("ASC", "DESC"):
                desc = self.advance().value == "DESC"
            if self.is_op(","):
                raise UnsupportedFeature("multi-column ORDER BY", self.tok.line, self.tok.column)
            order_by = OrderBy(col, desc)
        limit = None
        if self.is_kw("LIMIT"):
            self.advance()
            tok = self.tok
            if tok.kind != "number" or not isinstance(tok.value, int):
                self.error("expected integer after LIMIT")
            if tok.value <= 0:
                raise SqlSyntaxError("LIMIT must be a positive integer", tok.line, tok.column)
            limit = self.advance().value
        if self.is_op(";"):
            self.advance()
        if self.tok.kind != "eof":
            self.check_unsupported()
            if self.is_op("("):
                raise UnsupportedFeature("subqueries", self.tok.line, self.tok.column)
            self.error("unexpected trailing input")
        q = SelectQuery(tuple(projections), table, where, tuple(group_by), order_by, limit)
        _check_grouping(q, self)
        return q

    def items(self) -> list[Projection]:
        if self.is_op("*"):
            self.advance()
            return [Projection(Star())]
        out = [self.item()]
        while self.is_op(","):
            self.advance()
            if self.is_op("*"):
                self.error("'*' must be the only select item")
            out.append(self.item())
        return out

    def item(self) -> Projection:
        self.item_tokens.append(self.tok)
        expr = self.expr()
        alias = None
        if self.is_kw("AS"):
            self.advance()
            alias = self.ident("alias")
        return Projection(expr, alias)

    # expressions --------------------------------------------------------------

    def expr(self) -> Expr:
        left = self.and_expr()
        while self.is_kw("OR"):
            self.advance()
            left = Binary("OR", left, self.and_expr())
        return left

    def and_expr(self) -> Expr:
        left = self.not_expr()
        while self.is_kw("AND"):
            self.advance()
            left = Binary("AND", left, self.not_expr())
        return left

    def not_expr(self) -> Expr:
        if self.is_kw("NOT"):
            self.advance()
            return Not(self.not_expr())
        return self.comparison()

    def comparison(self) -> Expr:
        left = self.additive()
        if self.is_op(*COMPARISONS):
            op = self.advance().value
            left = Binary(op, left, self.additive())
            if self.is_op(*COMPARISONS):
                self.error("comparison operators do not chain")
        return left

    def additive(self) -> Expr:
        left = self.term()
        while self.is_op("+", "-"):
            op = self.advance().value
            left = Binary(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.is_op("*", "/"):
            op = self.advance().value
            left = Binary(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.is_op("-"):
            self.advance()
            operand = self.unary()
            if isinstance(operand, Literal) and type(operand.value) in (int, float):
                return Literal(-operand.value)
            return Binary("-", Literal(0), operand)
        return self.primary()

    def primary(self) -> Expr:
        tok = self.tok
        if tok.kind == "number":
            self.advance()
            return Literal(tok.value)
        if tok.kind == "string":
            self.advance()
            return Literal(tok.value)
        if self.is_kw("TRUE", "FALSE"):
            self.advance()
            return Literal(tok.value == "TRUE")
        if self.is_op("("):
            self.advance()
            if self.is_kw("SELECT"):
                raise UnsupportedFeature("subqueries", self.tok.line, self.tok.column)
            inner = self.expr()
            self.expect_op(")")
            return inner
        if tok.kind == "ident":
            self.check_unsupported()
            if self.peek().kind == "op" and self.peek().value == "(":
                return self.call()
            self.advance()
            return ColumnRef(tok.value)
        self.error("expected expression")

    def call(self) -> Aggregate:
        tok = self.advance()
        fn = tok.value.upper()
        if fn not in AGGREGATES:
            raise UnsupportedFeature(f"function {fn}", tok.line, tok.column)
        self.expect_op("(")
        if self.is_op("*"):
            if fn != "COUNT":
                self.error(f"{fn}(*) is not allowed")
            self.advance()
            self.expect_op(")")
            return Aggregate("COUNT_STAR")
        if self.tok.kind == "ident" and self.peek().kind == "op" and self.peek().value == "(":
            raise UnsupportedFeature("nested function calls", self.tok.line, self.tok.column)
        col = self.ident("column name")
        if not self.is_op(")"):
            self.error("aggregate arguments must be a single column")
        self.advance()
        return Aggregate(fn, col)


def _check_grouping(q: SelectQuery, parser: _Parser) -> None:
    if q.is_star:
        if q.group_by:
            tok = parser.tokens[0]
            raise SqlSyntaxError("SELECT * cannot be combined with GROUP BY", tok.line, tok.column)
        return
    if not q.group_by and not q.has_aggregates:
        return
    for p, tok in zip(q.projections, parser.item_tokens):
        for name in _bare_columns(p.expr):
            if name not in q.group_by:
                raise SqlSyntaxError(
                    f"column '{name}' must appear in GROUP BY or inside an aggregate", tok.line, tok.column
                )


def _bare_columns(expr) -> list[str]:
    """Column references that are not aggregate arguments."""
    return [e.name for e in walk(expr) if isinstance(e, ColumnRef)]


def parse(text: str) -> SelectQuery:
    """Parse one SELECT statement; raises ``SqlSyntaxError`` / ``UnsupportedFeature``."""
    return _Parser(text).query()


def extract_references(q: SelectQuery) -> list[str]:
    return [q.from_table]


# -- printer ------------------------------------------------------------------


def format_literal(value) -> str:
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    if isinstance(value, float):
        text = repr(value)
        if text in ("inf", "-inf", "nan"):
            raise SqlTypeError(f"cannot print float {text}")
        return text
    return str(value)


def format_expr(expr) -> str:
    if isinstance(expr, Star):
        return "*"
    if isinstance(expr, ColumnRef):
        return expr.name
    if isinstance(expr, Literal):
        return format_literal(expr.value)
    if isinstance(expr, Aggregate):
        return "COUNT(*)" if expr.fn == "COUNT_STAR" else f"{expr.fn}({expr.column})"
    if isinstance(expr, Not):
        return f"(NOT {format_expr(expr.operand)})"
    return f"({format_expr(expr.left)} {expr.op} {format_expr(expr.right)})"


def format_query(q: SelectQuery) -> str:
    items = ", ".join(
        format_expr(p.expr) + (f" AS {p.alias}" if p.alias else "") for p in q.projections
    )
    parts = [f"SELECT {items}", f"FROM {q.from_table}"]
    if q.where is not None:
        parts.append(f"WHERE {format_expr(q.where)}")
    if q.group_by:
        parts.append("GROUP BY " + ", ".join(q.group_by))
    if q.order_by:
        parts.append(f"ORDER BY {q.order_by.column} {'DESC' if q.order_by.descending else 'ASC'}")
    if q.limit is not None:
        parts.append(f"LIMIT {q.limit}")
    return " ".join(parts)


# -- typing -------------------------------------------------------------------


def literal_type(value) -> ColumnType:
    if isinstance(value, bool):
        return ColumnType.BOOL
    if isinstance(value, int):
        return ColumnType.INT64
    if isinstance(value, float):
        return ColumnType.FLOAT64
    return ColumnType.STRING


def infer_type(expr, schema: Schema) -> ColumnType:
    """Static type of ``expr`` over ``schema``; raises on ill-typed trees."""
    if isinstance(expr, ColumnRef):
        return schema.type_of(expr.name)
    if isinstance(expr, Literal):
        return literal_type(expr.value)
    if isinstance(expr, Aggregate):
        if expr.fn == "COUNT_STAR":
            return ColumnType.INT64
        t = schema.type_of(expr.column)
        if expr.fn == "COUNT":
            return ColumnType.INT64
        if expr.fn in ("MIN", "MAX"):
            return t
        if not t.numeric:
            raise SqlTypeError(f"{expr.fn}({expr.column}) needs a numeric column, got {t.value}")
        return ColumnType.FLOAT64 if expr.fn == "AVG" else t
    if isinstance(expr, Not):
        if infer_type(expr.operand, schema) is not ColumnType.BOOL:
            raise SqlTypeError("NOT needs a boolean operand")
        return ColumnType.BOOL
    lt, rt = infer_type(expr.left, schema), infer_type(expr.right, schema)
    if expr.op in LOGICAL:
        if lt is not ColumnType.BOOL or rt is not ColumnType.BOOL:
            raise SqlTypeError(f"{expr.op} needs boolean operands, got {lt.value} and {rt.value}")
        return ColumnType.BOOL
    if expr.op in COMPARISONS:
        if not (lt == rt or (lt.numeric and rt.numeric)):
            raise SqlTypeError(f"cannot compare {lt.value} with {rt.value}")
        return ColumnType.BOOL
    if not (lt.numeric and rt.numeric):
        raise SqlTypeError(f"operator {expr.op} needs numeric operands, got {lt.value} and {rt.value}")
    if expr.op == "/" or ColumnType.FLOAT64 in (lt, rt):
        return ColumnType.FLOAT64
    return ColumnType.INT64


def projection_name(p: Projection, position: int) -> str:
    if p.alias:
        return p.alias
    if isinstance(p.expr, ColumnRef):
        return p.expr.name
    return f"col_{position}"


def output_schema(q: SelectQuery, input_schema: Schema) -> Schema:
    """Schema produced by ``q`` over ``input_schema`` (validates the whole query)."""
    for name in q.group_by:
        input_schema.type_of(name)
    if q.where is not None and infer_type(q.where, input_schema) is not ColumnType.BOOL:
        raise SqlTypeError("WHERE clause must be boolean")
    if q.is_star:
        out = input_schema
    else:
        cols = [
            Column(projection_name(p, i), infer_type(p.expr, input_schema))
            for i, p in enumerate(q.projections)
        ]
        names = [c.name for c in cols]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise SqlTypeError(f"duplicate output column names: {', '.join(dupes)}")
        out = Schema(tuple(cols))
    if q.order_by is not None:
        key = q.order_by.column
        if key not in out:
            if q.group_by or q.has_aggregates or key not in input_schema:
                raise UnknownColumn(key, out.names)
    return out


def order_key_is_output(q: SelectQuery, out: Schema) -> bool:
    return q.order_by is not None and q.order_by.column in out
