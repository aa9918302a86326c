"""Seeded synthetic data and the sample taxi pipeline."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .relation import ColumnType, Relation, Schema

TAXI_SCHEMA = Schema.of(
    ("pickup_at", ColumnType.STRING),
    ("pickup_location_id", ColumnType.INT64),
    ("dropoff_location_id", ColumnType.INT64),
    ("passenger_count", ColumnType.INT64),
)

TRIPS_SQL = """SELECT
    pickup_location_id,
    passenger_count as count,
    dropoff_location_id
FROM
    taxi_table
WHERE
    pickup_at >= '2019-04-01'
"""

PICKUPS_SQL = """SELECT
    pickup_location_id,
    dropoff_location_id,
    COUNT(*) AS counts
FROM
    trips
GROUP BY
    pickup_location_id,
    dropoff_location_id
ORDER BY
    counts DESC
"""

# extra nodes for tests that need more execution units than the sample pipeline
EXTRA_MODELS = {
    "busy_trips.sql": "SELECT pickup_location_id, count FROM trips WHERE count > 5\n",
    "busy_pickups.sql": (
        "SELECT pickup_location_id, SUM(count) AS riders FROM busy_trips "
        "GROUP BY pickup_location_id ORDER BY riders DESC\n"
    ),
    "top_pickups.sql": "SELECT pickup_location_id, counts FROM pickups WHERE counts > 1 LIMIT 50\n",
}


def taxi_table(n: int = 10_000, seed: int = 42, locations: int = 20) -> Relation:
    """Synthetic NYC-style trips for January to June 2019."""
    rng = np.random.default_rng(seed)
    start = np.datetime64("2019-01-01T00:00:00")
    span = int((np.datetime64("2019-07-01T00:00:00") - start) / np.timedelta64(1, "s"))
    offsets = rng.integers(0, span, size=n)
    pickup_at = [str(start + np.timedelta64(int(s), "s")) for s in offsets]
    pickup = rng.integers(1, locations + 1, size=n).tolist()
    dropoff = rng.integers(1, locations + 1, size=n).tolist()
    passengers = rng.integers(1, 26, size=n).tolist()
    return Relation(TAXI_SCHEMA, [pickup_at, pickup, dropoff, passengers])


def write_taxi_project(root: str | os.PathLike, threshold: float = 10, extended: bool = False) -> Path:
    """Write trips.sql, pickups.sql and trips_expectation.check into ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "trips.sql").write_text(TRIPS_SQL)
    (root / "pickups.sql").write_text(PICKUPS_SQL)
    (root / "trips_expectation.check").write_text(f"mean(count) > {threshold:g}\n")
    if extended:
        for name, sql in EXTRA_MODELS.items():
            (root / name).write_text(sql)
    return root
