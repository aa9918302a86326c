import random

import pytest
from hypothesis import given, settings, strategies as st

from minilake.errors import SqlError, SqlSyntaxError, SqlTypeError, UnknownColumn, UnsupportedFeature
from minilake.fixtures import PICKUPS_SQL, TAXI_SCHEMA, TRIPS_SQL
from minilake.relation import ColumnType, Schema
from minilake.sql import (
    Aggregate,
    Binary,
    ColumnRef,
    Literal,
    OrderBy,
    extract_references,
    format_query,
    output_schema,
    parse,
)

from gen import random_query_text, random_schema

INT, FLOAT, STR = ColumnType.INT64, ColumnType.FLOAT64, ColumnType.STRING


def test_pickups_parse():
    q = parse(PICKUPS_SQL)
    assert q.from_table == "trips"
    assert q.group_by == ("pickup_location_id", "dropoff_location_id")
    assert q.order_by == OrderBy("counts", descending=True)
    counts = [p for p in q.projections if p.alias == "counts"]
    assert counts and counts[0].expr == Aggregate("COUNT_STAR")


def test_trips_parse():
    q = parse(TRIPS_SQL)
    assert q.where == Binary(">=", ColumnRef("pickup_at"), Literal("2019-04-01"))
    assert q.projections[1].alias == "count"


def test_minimal_query():
    q = parse("SELECT a FROM t")
    assert (q.where, q.group_by, q.order_by, q.limit) == (None, (), None, None)


@pytest.mark.parametrize(
    "sql, feature",
    [
        ("SELECT * FROM a JOIN b", "JOIN"),
        ("SELECT DISTINCT a FROM t", "DISTINCT"),
        ("SELECT a FROM t UNION SELECT a FROM u", "UNION"),
        ("SELECT a FROM t GROUP BY a HAVING COUNT(*) > 1", "HAVING"),
        ("SELECT a FROM t WHERE a IS NULL", "IS"),
    ],
)
def test_unsupported_features(sql, feature):
    with pytest.raises(UnsupportedFeature) as info:
        parse(sql)
    assert info.value.feature == feature


def test_syntax_error_reports_position():
    with pytest.raises(SqlSyntaxError) as info:
        parse("SELECT a\nFROM t WHERE")
    assert info.value.line == 2
    assert info.value.column > 1


def test_ungrouped_column_rejected():
    with pytest.raises(SqlError):
        parse("SELECT a, COUNT(*) FROM t GROUP BY b")


def test_references():
    assert extract_references(parse(TRIPS_SQL)) == ["taxi_table"]
    assert extract_references(parse(PICKUPS_SQL)) == ["trips"]
    assert extract_references(parse("SELECT 1 FROM t")) == ["t"]


def test_trips_output_schema():
    out = output_schema(parse(TRIPS_SQL), TAXI_SCHEMA)
    assert out.names == ["pickup_location_id", "count", "dropoff_location_id"]


def test_pickups_output_schema():
    trips = output_schema(parse(TRIPS_SQL), TAXI_SCHEMA)
    out = output_schema(parse(PICKUPS_SQL), trips)
    assert [(c.name, c.type) for c in out.columns] == [
        ("pickup_location_id", INT),
        ("dropoff_location_id", INT),
        ("counts", INT),
    ]


def test_type_inference_rules():
    schema = Schema.of(("a", INT), ("b", INT), ("s", STR))
    out = output_schema(parse("SELECT a, a / b, a + b FROM t"), schema)
    assert [c.type for c in out.columns] == [INT, FLOAT, INT]
    assert out.names == ["a", "col_1", "col_2"]
    out = output_schema(parse("SELECT a, AVG(b) AS m, COUNT(s) AS n, SUM(b) FROM t GROUP BY a"), schema)
    assert [c.type for c in out.columns] == [INT, FLOAT, INT, INT]
    assert out.names == ["a", "m", "n", "col_3"]


def test_type_errors():
    schema = Schema.of(("a", INT), ("s", STR))
    with pytest.raises(SqlTypeError):
        output_schema(parse("SELECT a + s FROM t"), schema)
    with pytest.raises(SqlTypeError):
        output_schema(parse("SELECT a FROM t WHERE a + 1"), schema)
    with pytest.raises(UnknownColumn):
        output_schema(parse("SELECT zzz FROM t"), schema)


def test_keywords_case_insensitive_and_escaped_strings():
    q = parse("select A from T where s = 'o''hare'")
    assert q.from_table == "t"
    assert q.where.right == Literal("o'hare")


def test_format_is_parseable():
    for sql in (TRIPS_SQL, PICKUPS_SQL):
        q = parse(sql)
        assert parse(format_query(q)) == q


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32))
def test_parse_print_parse_fixpoint(seed):
    rng = random.Random(seed)
    schema = random_schema(rng)
    q = parse(random_query_text(rng, schema))
    text = format_query(q)
    assert parse(text) == q
    assert format_query(parse(text)) == text


@settings(max_examples=500, deadline=None)
@given(st.text(alphabet="SELECTFROMWHERGBYabc*(),'=<>+-/ 0123.\n", max_size=60))
def test_parser_is_total(text):
    # any input either parses or raises a documented SQL error
    try:
        parse(text)
    except SqlError:
        pass


def _respell(rng, text):
    """Change keyword case and spacing without touching string literals."""
    out, quoted = [], False
    for ch in text:
        if ch == "'":
            quoted = not quoted
        if not quoted and ch.isalpha():
            ch = ch.upper() if rng.random() < 0.5 else ch.lower()
        if not quoted and ch == " ":
            ch = rng.choice([" ", "  ", "\n", "\t "])
        out.append(ch)
    return "".join(out)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32))
def test_references_ignore_case_and_whitespace(seed):
    rng = random.Random(seed)
    schema = random_schema(rng)
    text = random_query_text(rng, schema, table=rng.choice(["t", "taxi_table", "Trips"]))
    assert extract_references(parse(_respell(rng, text))) == extract_references(parse(text))
