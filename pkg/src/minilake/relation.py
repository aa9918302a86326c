"""In-memory columnar relations and their CSV interchange encoding.

Data files are RFC-4180 CSV without a header row; the schema travels
separately as JSON. A NULL is an empty *unquoted* field, while an empty
string is written as ``""``. Strings are always quoted, so the two never
collide. The stdlib reader cannot tell quoted from unquoted empty fields on
Python 3.10, hence the small hand-written decoder below.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Sequence

from .errors import SchemaError, UnknownColumn


class ColumnType(str, enum.Enum):
    INT64 = "INT64"
    FLOAT64 = "FLOAT64"
    STRING = "STRING"
    BOOL = "BOOL"

    @property
    def numeric(self) -> bool:
        return self in (ColumnType.INT64, ColumnType.FLOAT64)


@dataclass(frozen=True)
class Column:
    name: str
    type: ColumnType

    def to_json(self) -> dict:
        return {"name": self.name, "type": self.type.value}


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]

    def __post_init__(self):
        cols = tuple(
            c if isinstance(c, Column) else Column(c[0], ColumnType(c[1])) for c in self.columns
        )
        object.__setattr__(self, "columns", cols)
        if not cols:
            raise SchemaError("schema needs at least one column")
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate column names: {', '.join(dupes)}")

    @classmethod
    def of(cls, *pairs: tuple[str, ColumnType | str]) -> "Schema":
        return cls(tuple(Column(n, ColumnType(t)) for n, t in pairs))

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def __len__(self) -> int:
        return len(self.columns)

    def __contains__(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    def index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise UnknownColumn(name, self.names)

    def type_of(self, name: str) -> ColumnType:
        return self.columns[self.index(name)].type

    def select(self, names: Sequence[str]) -> "Schema":
        return Schema(tuple(self.columns[self.index(n)] for n in names))

    def to_json(self) -> dict:
        return {"columns": [c.to_json() for c in self.columns]}

    @classmethod
    def from_json(cls, obj: dict) -> "Schema":
        return cls(tuple(Column(c["name"], ColumnType(c["type"])) for c in obj["columns"]))


def coerce_value(value: Any, ctype: ColumnType) -> Any:
    """Validate one value against its declared type (ints widen to FLOAT64)."""
    if value is None:
        return None
    if ctype is ColumnType.BOOL:
        if isinstance(value, bool):
            return value
    elif ctype is ColumnType.INT64:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif ctype is ColumnType.FLOAT64:
        if isinstance(value, float):
            return value
        if isinstance(value, int) and not isinstance(value, bool):
            return float(value)
    elif ctype is ColumnType.STRING:
        if isinstance(value, str):
            return value
    raise SchemaError(f"value {value!r} does not conform to {ctype.value}")


class Relation:
    """A schema plus one value list per column, all of equal length."""

    __slots__ = ("schema", "columns")

    def __init__(self, schema: Schema, columns: Sequence[Sequence[Any]] | None = None, *, validate=True):
        self.schema = schema
        if columns is None:
            columns = [[] for _ in schema.columns]
        if len(columns) != len(schema.columns):
            raise SchemaError(f"expected {len(schema.columns)} columns, got {len(columns)}")
        if validate:
            cols = [[coerce_value(v, c.type) for v in col] for col, c in zip(columns, schema.columns)]
        else:
            cols = [list(col) for col in columns]
        lengths = {len(c) for c in cols}
        if len(lengths) > 1:
            raise SchemaError(f"column vectors have unequal lengths {sorted(lengths)}")
        self.columns: list[list[Any]] = cols

    @classmethod
    def from_rows(cls, schema: Schema, rows: Iterable[Sequence[Any]]) -> "Relation":
        rows = list(rows)
        width = len(schema.columns)
        for r in rows:
            if len(r) != width:
                raise SchemaError(f"row {tuple(r)!r} has {len(r)} values, schema has {width}")
        cols = [[r[i] for r in rows] for i in range(width)]
        return cls(schema, cols)

    @classmethod
    def empty(cls, schema: Schema) -> "Relation":
        return cls(schema)

    @property
    def num_rows(self) -> int:
        return len(self.columns[0]) if self.columns else 0

    def __len__(self) -> int:
        return self.num_rows

    def rows(self) -> Iterator[tuple]:
        return zip(*self.columns) if self.num_rows else iter(())

    def column(self, name: str) -> list[Any]:
        return self.columns[self.schema.index(name)]

    def project(self, names: Sequence[str]) -> "Relation":
        return Relation(self.schema.select(names), [self.column(n) for n in names], validate=False)

    def take(self, indices: Sequence[int]) -> "Relation":
        return Relation(self.schema, [[col[i] for i in indices] for col in self.columns], validate=False)

    def to_dicts(self) -> list[dict]:
        names = self.schema.names
        return [dict(zip(names, r)) for r in self.rows()]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Relation):
            return NotImplemented
        return self.schema == other.schema and _bitwise_equal(self.columns, other.columns)

    def __repr__(self) -> str:
        return f"Relation({', '.join(self.schema.names)}; {self.num_rows} rows)"


def _bitwise_equal(a, b) -> bool:
    # NaN == NaN and -0.0 != 0.0 here: relations compare by encoded value
    if len(a) != len(b):
        return False
    for ca, cb in zip(a, b):
        if len(ca) != len(cb):
            return False
        for x, y in zip(ca, cb):
            if type(x) is not type(y):
                return False
            if isinstance(x, float):
                if repr(x) != repr(y):
                    return False
            elif x != y:
                return False
    return True


# -- CSV codec ----------------------------------------------------------------


def _encode_field(value: Any, ctype: ColumnType) -> str:
    if value is None:
        return ""
    if ctype is ColumnType.STRING:
        return '"' + value.replace('"', '""') + '"'
    if ctype is ColumnType.BOOL:
        return "true" if value else "false"
    if ctype is ColumnType.FLOAT64:
        return repr(float(value))
    return str(value)


def encode_csv(rel: Relation) -> bytes:
    types = [c.type for c in rel.schema.columns]
    lines = [",".join(_encode_field(v, t) for v, t in zip(row, types)) for row in rel.rows()]
    return "".join(line + "\r\n" for line in lines).encode("utf-8")


def _split_records(text: str) -> Iterator[list[tuple[str, bool]]]:
    """Yield records as lists of (field text, was_quoted)."""
    i, n = 0, len(text)
    while i < n:
        record: list[tuple[str, bool]] = []
        while True:
            if i < n and text[i] == '"':
                i += 1
                buf = []
                while True:
                    j = text.find('"', i)
                    if j < 0:
                        raise SchemaError("unterminated quoted field in CSV")
                    buf.append(text[i:j])
                    if j + 1 < n and text[j + 1] == '"':
                        buf.append('"')
                        i = j + 2
                    else:
                        i = j + 1
                        break
                record.append(("".join(buf), True))
            else:
                j = i
                while j < n and text[j] not in ",\r\n":
                    j += 1
                record.append((text[i:j], False))
                i = j
            if i >= n:
                break
            ch = text[i]
            if ch == ",":
                i += 1
                continue
            if ch == "\r" and i + 1 < n and text[i + 1] == "\n":
                i += 2
                break
            if ch in "\r\n":
                i += 1
                break
            raise SchemaError(f"unexpected character {ch!r} after quoted field")
        yield record


def _decode_field(text: str, quoted: bool, ctype: ColumnType) -> Any:
    if not quoted and text == "":
        return None
    try:
        if ctype is ColumnType.STRING:
            return text
        if ctype is ColumnType.INT64:
            return int(text)
        if ctype is ColumnType.FLOAT64:
            return float(text)
        if text == "true":
            return True
        if text == "false":
            return False
    except ValueError:
        pass
    raise SchemaError(f"cannot decode {text!r} as {ctype.value}")


def decode_csv(data: bytes, schema: Schema) -> Relation:
    types = [c.type for c in schema.columns]
    cols: list[list[Any]] = [[] for _ in types]
    for record in _split_records(data.decode("utf-8")):
        if len(record) != len(types):
            raise SchemaError(f"CSV record has {len(record)} fields, schema has {len(types)}")
        for col, (text, quoted), t in zip(cols, record, types):
            col.append(_decode_field(text, quoted, t))
    return Relation(schema, cols, validate=False)


def encode_schema(schema: Schema) -> bytes:
    return json.dumps(schema.to_json(), indent=2).encode("utf-8") + b"\n"


def decode_schema(data: bytes | str) -> Schema:
    return Schema.from_json(json.loads(data))
