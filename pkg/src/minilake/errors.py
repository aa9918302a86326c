"""Exception hierarchy shared by every layer of the lakehouse."""

from __future__ import annotations


class LakehouseError(Exception):
    """Base class for all errors raised by minilake."""


# -- object store -----------------------------------------------------------


class BlobNotFound(LakehouseError):
    pass


class CorruptBlob(LakehouseError):
    pass


# -- catalog ----------------------------------------------------------------


class CatalogError(LakehouseError):
    pass


class AlreadyExists(CatalogError):
    pass


class UnknownSource(CatalogError):
    pass


class UnknownBranch(CatalogError):
    pass


class UnknownRef(CatalogError):
    pass


class ProtectedBranch(CatalogError):
    pass


class StaleHead(CatalogError):
    """Compare-and-swap on a branch head failed because another writer won."""

    def __init__(self, branch: str, expected: str, actual: str):
        super().__init__(f"stale head on '{branch}': expected {expected[:12]}, found {actual[:12]}")
        self.branch = branch
        self.expected = expected
        self.actual = actual


class MergeConflict(CatalogError):
    def __init__(self, source: str, target: str, tables: list[str]):
        super().__init__(
            f"cannot merge '{source}' into '{target}': conflicting tables {', '.join(tables)}"
        )
        self.source = source
        self.target = target
        self.tables = tables


# -- tables -----------------------------------------------------------------


class SchemaError(LakehouseError):
    pass


class UnknownColumn(LakehouseError):
    def __init__(self, name: str, available: list[str] | None = None):
        msg = f"unknown column '{name}'"
        if available:
            msg += f" (available: {', '.join(available)})"
        super().__init__(msg)
        self.name = name


class UnknownSnapshot(LakehouseError):
    pass


class UnknownTable(LakehouseError):
    def __init__(self, name: str):
        super().__init__(f"unknown table '{name}'")
        self.name = name


# -- SQL subset -------------------------------------------------------------


class SqlError(LakehouseError):
    pass


class SqlSyntaxError(SqlError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


class UnsupportedFeature(SqlError):
    def __init__(self, feature: str, line: int = 0, column: int = 0):
        where = f" at line {line}, column {column}" if line else ""
        super().__init__(f"unsupported feature: {feature}{where}")
        self.feature = feature
        self.line = line
        self.column = column


class SqlTypeError(SqlError, TypeError):
    pass


# -- engine -----------------------------------------------------------------


class EngineError(LakehouseError):
    pass


class DivisionByZero(EngineError, ZeroDivisionError):
    pass


class EmptyAggregate(EngineError):
    pass


class FunctionError(EngineError):
    pass


class NonZeroExit(FunctionError):
    def __init__(self, returncode: int, stderr: str):
        tail = stderr.strip().splitlines()[-1] if stderr.strip() else ""
        super().__init__(f"external function exited with code {returncode}: {tail}")
        self.returncode = returncode
        self.stderr = stderr


class ProtocolError(FunctionError):
    pass


class FunctionTimeout(FunctionError):
    pass


# -- planner ----------------------------------------------------------------


class PlanError(LakehouseError):
    pass


class EmptyProject(PlanError):
    pass


class DuplicateModel(PlanError):
    pass


class UnparseableFile(PlanError):
    def __init__(self, path: str, cause: Exception):
        super().__init__(f"{path}: {cause}")
        self.path = path
        self.cause = cause


class UnknownReference(PlanError):
    def __init__(self, name: str, referenced_by: str):
        super().__init__(f"unknown reference '{name}' in {referenced_by}")
        self.name = name
        self.referenced_by = referenced_by


class CycleDetected(PlanError):
    def __init__(self, cycle: list[str]):
        super().__init__("cycle detected: " + " -> ".join(cycle))
        self.cycle = cycle


# -- runner -----------------------------------------------------------------


class RunError(LakehouseError):
    """Raised when a run ends unsuccessfully; carries the persisted manifest."""

    def __init__(self, message: str, manifest=None):
        super().__init__(message)
        self.manifest = manifest


class ExpectationFailed(RunError):
    pass


class ExecutionError(RunError):
    pass


class UnknownRun(LakehouseError):
    pass


class UnknownSelectorNode(LakehouseError):
    pass


# -- workload ---------------------------------------------------------------


class WorkloadError(LakehouseError, ValueError):
    pass


class EmptyInput(WorkloadError):
    pass


class InsufficientTail(WorkloadError):
    pass


class DegenerateTail(WorkloadError):
    pass


class InvalidAlpha(WorkloadError):
    pass


class MissingCosts(WorkloadError):
    pass
