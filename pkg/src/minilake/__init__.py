"""minilake: a desk-scale serverless lakehouse.

Content-addressed object storage, a git-like catalog of table snapshots, a
single-table SQL subset, a DAG planner with predicate pushdown and fusion,
and a transactional runner that merges a pipeline's outputs only once every
expectation passes.
"""

from .catalog import MAIN, Catalog, CatalogState
from .objectstore import ObjectStore
from .relation import ColumnType, Relation, Schema
from .runner import Workspace, import_table, query, replay, run
from .tables import TableStore

__all__ = [
    "MAIN",
    "Catalog",
    "CatalogState",
    "ColumnType",
    "ObjectStore",
    "Relation",
    "Schema",
    "TableStore",
    "Workspace",
    "import_table",
    "query",
    "replay",
    "run",
]
__version__ = "0.1.0"
