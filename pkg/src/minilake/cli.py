"""``bauplan`` command line.

Exit codes: 0 success, 1 user error, 2 expectation failure, 3 internal error.
stdout carries data and summaries only; diagnostics go to stderr, and every
failure ends with exactly one line starting with ``error:``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import fixtures, runner, workload
from .catalog import MAIN
from .errors import ExpectationFailed, LakehouseError, UnknownTable
from .relation import ColumnType, Relation, Schema

EXIT_OK, EXIT_USER, EXIT_EXPECTATION, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("minilake.cli")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which the contract reserves for expectations
    def error(self, message):
        raise UsageError(message)


def _workspace(args) -> runner.Workspace:
    return runner.Workspace(args.workspace)


def _branch(args, where: str | Path = ".") -> str:
    return args.branch or runner.detect_branch_context(where)


# -- query --------------------------------------------------------------------


def _render(rel: Relation, fmt: str, out) -> None:
    if fmt == "json":
        json.dump(rel.to_dicts(), out, ensure_ascii=False)
        out.write("\n")
        return
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(rel.schema.names)
    for row in rel.rows():
        writer.writerow(["" if v is None else _text(v) for v in row])


def _text(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def cmd_query(args) -> int:
    ws = _workspace(args)
    ref = args.ref or _branch(args)
    result = runner.query(ws, args.query, ref)
    _render(result.relation, args.format, sys.stdout)
    return EXIT_OK


# -- run ----------------------------------------------------------------------


def cmd_run(args) -> int:
    ws = _workspace(args)
    budget = args.budget
    if args.run_id is not None:
        if args.explain:
            rp = runner.plan_replay(ws, args.run_id, args.select)
            out = runner.explain(rp.logical, rp.physical)
            out["replay_of"] = args.run_id
            print(json.dumps(out, indent=2))
            return EXIT_OK
        manifest = runner.replay(ws, args.run_id, args.select, workers=args.workers)
    else:
        if args.select:
            raise UsageError("-m/--select requires --run-id")
        branch = _branch(args, args.project)
        if args.explain:
            out = runner.explain_project(ws, args.project, branch, budget, args.inflation, not args.naive)
            print(json.dumps(out, indent=2))
            return EXIT_OK
        manifest = runner.run(
            ws, args.project, branch, budget, args.inflation, optimize=not args.naive, workers=args.workers
        )
    print(manifest.summary())
    print(f"branch {manifest.target_branch} at {manifest.merge_commit}")
    return EXIT_OK


# -- branch -------------------------------------------------------------------


def cmd_branch(args) -> int:
    ws = _workspace(args)
    cat = ws.catalog
    if args.action == "list":
        for ref in cat.list_branches():
            mark = " (ephemeral)" if ref.kind.value == "ephemeral" else ""
            print(f"{ref.name}{mark} {ref.head}")
        return EXIT_OK
    if not args.names:
        raise UsageError(f"branch {args.action} needs a branch name")
    if args.action == "create":
        ref = cat.create_branch(args.names[0], args.source)
        print(f"created {ref.name} at {ref.head}")
    elif args.action == "delete":
        for name in args.names:
            cat.delete_branch(name)
            print(f"deleted {name}")
    elif args.action == "merge":
        source = args.names[0]
        target = args.names[1] if len(args.names) > 1 else MAIN
        head = cat.merge(source, target)
        print(f"merged {source} into {target} at {head}")
    return EXIT_OK


# -- log ----------------------------------------------------------------------


def table_log(ws: runner.Workspace, table: str, branch: str) -> list[dict]:
    """One entry per snapshot of ``table`` on ``branch``, newest first."""
    cat = ws.catalog
    state = cat.resolve(branch)
    if table not in state.tables:
        raise UnknownTable(table)
    introduced: dict[str, object] = {}
    for commit in reversed(list(cat.history(branch))):
        sid = commit.state.tables.get(table)
        if sid is not None and sid not in introduced:
            introduced[sid] = commit
    out = []
    for sid in ws.tables.snapshot_lineage(state.tables[table]):
        commit = introduced.get(sid)
        out.append(
            {
                "commit": commit.id if commit else None,
                "timestamp": commit.timestamp if commit else None,
                "row_count": ws.tables.load(sid).row_count,
                "snapshot": sid,
            }
        )
    return out


def cmd_log(args) -> int:
    ws = _workspace(args)
    for entry in table_log(ws, args.table, _branch(args)):
        ts = entry["timestamp"]
        when = datetime.fromtimestamp(ts, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ") if ts is not None else "-"
        print(f"{entry['commit'] or '-'} {when} {entry['row_count']} {entry['snapshot']}")
    return EXIT_OK


# -- analyze ------------------------------------------------------------------


def _read_workload(path: str) -> workload.WorkloadSample:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "value" not in reader.fieldnames:
            raise UsageError(f"{path}: expected a header 'value[,cost]'")
        has_cost = "cost" in reader.fieldnames
        values, costs = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                values.append(float(row["value"]))
                if has_cost:
                    costs.append(float(row["cost"]))
            except (TypeError, ValueError):
                raise UsageError(f"{path}:{lineno}: not a number") from None
    return workload.WorkloadSample(values, costs if has_cost else None)


def _write_gnuplot(report: dict, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "ccdf.dat", "w") as fh:
        fh.write("# x P(X>=x)\n")
        for x, p in report["ccdf"]:
            fh.write(f"{x!r} {p!r}\n")
    if "cost_share" in report:
        with open(directory / "cost_share.dat", "w") as fh:
            fh.write("# percentile cumulative_cost_share\n")
            for pct, share in report["cost_share"]:
                fh.write(f"{pct!r} {share!r}\n")


def cmd_analyze(args) -> int:
    if args.demo:
        sample = workload.heavy_tailed_demo(args.n, args.seed)
        xmin = args.xmin or workload.demo_bytes_xmin()
    elif args.input:
        sample = _read_workload(args.input)
        xmin = args.xmin
    else:
        raise UsageError("analyze needs an input CSV or --demo")
    report = workload.analyze(sample, xmin)
    if args.gnuplot:
        _write_gnuplot(report, Path(args.gnuplot))
    if args.summary:
        report = {k: v for k, v in report.items() if k not in ("ccdf", "cost_share")}
    print(json.dumps(report))
    return EXIT_OK


# -- import / demo ------------------------------------------------------------


def _infer_type(cells: list[str]) -> ColumnType:
    present = [c for c in cells if c != ""]
    if not present:
        return ColumnType.STRING
    if all(c in ("true", "false") for c in present):
        return ColumnType.BOOL
    for ctype, conv in ((ColumnType.INT64, int), (ColumnType.FLOAT64, float)):
        try:
            for c in present:
                conv(c)
            return ctype
        except ValueError:
            continue
    return ColumnType.STRING


def read_csv_table(text: str, schema: Schema | None = None) -> Relation:
    """CSV with a header row; types inferred unless ``schema`` is given. Empty cells are NULL."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise UsageError("CSV input is empty")
    header, body = rows[0], rows[1:]
    if schema is None:
        schema = Schema.of(*((h, _infer_type([r[i] for r in body])) for i, h in enumerate(header)))
    conv = {ColumnType.INT64: int, ColumnType.FLOAT64: float, ColumnType.STRING: str, ColumnType.BOOL: lambda c: c == "true"}
    cols = [[] for _ in schema.columns]
    for r in body:
        if len(r) != len(header):
            raise UsageError(f"row has {len(r)} cells, header has {len(header)}")
        for dst, cell, col in zip(cols, r, schema.columns):
            dst.append(None if cell == "" else conv[col.type](cell))
    return Relation(schema, cols)


def cmd_import(args) -> int:
    ws = _workspace(args)
    text = sys.stdin.read() if args.csv == "-" else Path(args.csv).read_text(encoding="utf-8")
    rel = read_csv_table(text)
    branch = _branch(args)
    commit = runner.import_table(ws, args.table, rel, branch)
    print(f"imported {rel.num_rows} rows into {args.table} on {branch} at {commit}")
    return EXIT_OK


def cmd_demo(args) -> int:
    ws = _workspace(args)
    commit = runner.import_table(ws, "taxi_table", fixtures.taxi_table(args.rows, args.seed), MAIN)
    root = fixtures.write_taxi_project(args.project, args.threshold)
    print(f"taxi_table ({args.rows} rows) on main at {commit}")
    print(f"project written to {root}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bauplan", description="Desk-scale lakehouse: versioned catalog, SQL pipelines, runs.")
    p.add_argument("--workspace", help="workspace root (default: $BPLN_WORKSPACE or ./.bauplan)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    q = sub.add_parser("query", help="run a read-only SQL query")
    q.add_argument("-q", "--query", required=True, help="SQL text")
    q.add_argument("-b", "--branch", help="branch to read (default: git context, else main)")
    q.add_argument("--ref", help="commit id or branch; overrides --branch")
    q.add_argument("--format", choices=("csv", "json"), default="csv")
    q.set_defaults(func=cmd_query)

    r = sub.add_parser("run", help="execute a project, or replay a past run")
    r.add_argument("project", nargs="?", default=".", help="project directory (default: .)")
    r.add_argument("-b", "--branch", help="target branch (default: git context, else main)")
    r.add_argument("--run-id", "-run-id", dest="run_id", type=int, help="replay this run")
    r.add_argument("-m", "--select", help="node selector for replay: name, name+, +name")
    r.add_argument("--budget", type=int, default=None, help="memory budget in bytes for fusion")
    r.add_argument("--inflation", type=float, default=runner.DEFAULT_INFLATION)
    r.add_argument("--naive", action="store_true", help="one unit per node, no pushdown")
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--explain", action="store_true", help="print plans as JSON and exit")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("branch", help="create, list, delete or merge branches")
    b.add_argument("action", choices=("create", "list", "delete", "merge"))
    b.add_argument("names", nargs="*")
    b.add_argument("--from", dest="source", default=MAIN, help="source ref for create")
    b.set_defaults(func=cmd_branch)

    lg = sub.add_parser("log", help="snapshot history of a table")
    lg.add_argument("table")
    lg.add_argument("-b", "--branch")
    lg.set_defaults(func=cmd_log)

    a = sub.add_parser("analyze", help="power-law and cost-share report for a workload")
    a.add_argument("input", nargs="?", help="CSV with header value[,cost]")
    a.add_argument("--xmin", type=float, default=None, help="tail threshold (default: sample minimum)")
    a.add_argument("--demo", action="store_true", help="analyze the synthetic heavy-tailed dataset")
    a.add_argument("--n", type=int, default=10_000, help="demo sample size")
    a.add_argument("--seed", type=int, default=2024, help="demo seed")
    a.add_argument("--gnuplot", metavar="DIR", help="also write ccdf.dat / cost_share.dat")
    a.add_argument("--summary", action="store_true", help="omit the point lists from the JSON")
    a.set_defaults(func=cmd_analyze)

    im = sub.add_parser("import", help="load a CSV (with header) as a table snapshot")
    im.add_argument("table")
    im.add_argument("csv", help="path, or - for stdin")
    im.add_argument("-b", "--branch")
    im.set_defaults(func=cmd_import)

    d = sub.add_parser("demo", help="seed taxi_table on main and write the sample project")
    d.add_argument("project", nargs="?", default="taxi_project")
    d.add_argument("--rows", type=int, default=10_000)
    d.add_argument("--seed", type=int, default=42)
    d.add_argument("--threshold", type=float, default=10)
    d.set_defaults(func=cmd_demo)
    return p


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split()) or type(exc).__name__


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USER
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ExpectationFailed as exc:
        if exc.manifest is not None:
            print(exc.manifest.summary())
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_EXPECTATION
    except (LakehouseError, UsageError, OSError) as exc:
        manifest = getattr(exc, "manifest", None)
        if manifest is not None:
            print(manifest.summary())
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001 - last-resort contract
        print(f"error: internal: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
