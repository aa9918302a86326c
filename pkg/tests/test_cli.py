import csv
import io
import json
import subprocess
import sys

import pytest

from minilake import cli, runner
from minilake.catalog import MAIN
from minilake.relation import Relation

from harness import taxi_workspace


@pytest.fixture
def lake(tmp_path, monkeypatch):
    ws, project = taxi_workspace(tmp_path, n=2_000)
    monkeypatch.setenv("BPLN_WORKSPACE", str(ws.root))
    monkeypatch.chdir(tmp_path)
    return ws, project


def call(capsys, *argv):
    capsys.readouterr()
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_query_unknown_table(lake, capsys):
    lake[0].catalog.create_branch("feat_1")
    code, out, err = call(capsys, "query", "-q", "SELECT * FROM trips", "-b", "feat_1")
    assert code == 1
    assert out == ""
    assert err.strip() == "error: unknown table 'trips'"


def test_query_syntax_error_has_position(lake, capsys):
    code, _, err = call(capsys, "query", "-q", "SELECT FROM taxi_table")
    assert code == 1
    assert err.startswith("error:") and "line 1, column" in err
    assert len(err.strip().splitlines()) == 1


def test_run_then_query(lake, capsys):
    ws, project = lake
    code, out, _ = call(capsys, "run", str(project), "-b", "feat_1")
    assert code == 0
    summary = out.splitlines()[0].split()
    assert summary[0] == "run" and summary[2] == "succeeded" and summary[4] == "nodes" and summary[-1] == "ms"
    code, out, _ = call(capsys, "query", "-q", "SELECT * FROM trips", "-b", "feat_1")
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["pickup_location_id", "count", "dropoff_location_id"]
    trips = ws.tables.scan_all(ws.catalog.resolve("feat_1").tables["trips"])
    assert len(rows) - 1 == trips.num_rows


def test_query_json_and_time_travel(lake, capsys):
    ws, _ = lake
    old = ws.catalog.head(MAIN)
    schema = ws.tables.load(ws.catalog.resolve(MAIN).tables["taxi_table"]).schema
    runner.import_table(ws, "taxi_table", Relation.empty(schema))
    code, out, _ = call(capsys, "query", "-q", "SELECT COUNT(*) AS n FROM taxi_table", "--format", "json")
    assert json.loads(out) == [{"n": 0}]
    code, out, _ = call(capsys, "query", "-q", "SELECT COUNT(*) AS n FROM taxi_table", "--ref", old, "--format", "json")
    assert json.loads(out) == [{"n": 2_000}]


def test_query_is_read_only(lake, capsys):
    ws, _ = lake
    before = {b.name: b.head for b in ws.catalog.list_branches()}
    call(capsys, "query", "-q", "SELECT * FROM taxi_table WHERE passenger_count > 3 LIMIT 5")
    assert {b.name: b.head for b in ws.catalog.list_branches()} == before


def test_run_expectation_failure_exit_code(lake, capsys):
    ws, project = lake
    (project / "trips_expectation.check").write_text("mean(count) > 99\n")
    code, out, err = call(capsys, "run", str(project), "-b", "feat_1")
    assert code == 2
    assert "failed_expectation" in out
    assert err.startswith("error:")
    assert "trips" not in ws.catalog.resolve("feat_1").tables


def test_run_plan_error_exit_code(lake, capsys, tmp_path):
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "m.sql").write_text("SELECT a FROM nowhere")
    code, _, err = call(capsys, "run", str(bad))
    assert code == 1 and "nowhere" in err


def test_run_explain_creates_nothing(lake, capsys):
    ws, project = lake
    before = {b.name: b.head for b in ws.catalog.list_branches()}
    code, out, _ = call(capsys, "run", str(project), "-b", "feat_1", "--explain")
    assert code == 0
    plans = json.loads(out)
    assert {"logical", "optimized", "physical"} <= set(plans)
    assert len(plans["physical"]["units"]) == 1
    assert {b.name: b.head for b in ws.catalog.list_branches()} == before


def test_replay_via_cli(lake, capsys):
    ws, project = lake
    m = runner.run(ws, project, "feat_1")
    code, out, _ = call(capsys, "run", "-run-id", str(m.run_id), "-m", "pickups+")
    assert code == 0
    assert f"replay_{m.run_id}_" in out
    code, out, _ = call(capsys, "run", "--run-id", str(m.run_id), "--explain")
    assert code == 0 and json.loads(out)["replay_of"] == m.run_id
    code, _, err = call(capsys, "run", "--run-id", "999")
    assert code == 1 and err.startswith("error:")


def test_select_without_run_id_is_usage_error(lake, capsys):
    code, _, err = call(capsys, "run", "-m", "pickups+")
    assert code == 1 and err.startswith("error:")


def test_bad_usage_maps_to_exit_1(lake, capsys):
    code, _, err = call(capsys, "query")
    assert code == 1 and err.startswith("error:")
    code, _, _ = call(capsys, "frobnicate")
    assert code == 1


def test_branch_commands(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("BPLN_WORKSPACE", str(tmp_path / "ws"))
    monkeypatch.chdir(tmp_path)
    code, out, _ = call(capsys, "branch", "list")
    assert code == 0 and [ln.split()[0] for ln in out.splitlines()] == ["main"]
    code, out, _ = call(capsys, "branch", "create", "feat_1")
    assert code == 0 and out.startswith("created feat_1")
    code, out, _ = call(capsys, "branch", "merge", "feat_1")
    assert code == 0 and "into main" in out
    code, _, err = call(capsys, "branch", "delete", "main")
    assert code == 1 and err.startswith("error:")
    code, _, _ = call(capsys, "branch", "delete", "feat_1")
    assert code == 0
    ws = runner.Workspace(tmp_path / "ws")
    ws.catalog.create_branch("run_5", kind="ephemeral")
    _, out, _ = call(capsys, "branch", "list")
    assert "run_5 (ephemeral)" in out


def test_log(lake, capsys):
    ws, project = lake
    code, out, _ = call(capsys, "log", "taxi_table", "-b", MAIN)
    assert code == 0 and len(out.splitlines()) == 1
    runner.run(ws, project, "feat_1")
    runner.run(ws, project, "feat_1")
    _, out, _ = call(capsys, "log", "pickups", "-b", "feat_1")
    lines = out.splitlines()
    assert len(lines) == 2
    commit, when, rows, snap = lines[0].split()
    assert commit == ws.catalog.head("feat_1") and when.endswith("Z") and int(rows) > 0 and len(snap) == 64
    code, _, _ = call(capsys, "log", "nothing", "-b", MAIN)
    assert code == 1


def test_analyze(tmp_path, capsys):
    code, out, _ = call(capsys, "analyze", "--demo", "--summary")
    report = json.loads(out)
    assert code == 0 and 0.7 <= report["share_at_80"] <= 0.9 and "ccdf" not in report
    path = tmp_path / "w.csv"
    path.write_text("value,cost\n1,1\n2,1\n4,1\n8,1\n")
    code, out, _ = call(capsys, "analyze", str(path), "--gnuplot", str(tmp_path / "plots"))
    report = json.loads(out)
    assert report["fit"]["n_tail"] == 4
    assert (tmp_path / "plots" / "ccdf.dat").read_text().startswith("#")
    bad = tmp_path / "bad.csv"
    bad.write_text("x\n1\n")
    code, _, err = call(capsys, "analyze", str(bad))
    assert code == 1 and err.startswith("error:")


def test_import_csv(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("BPLN_WORKSPACE", str(tmp_path / "ws"))
    monkeypatch.chdir(tmp_path)
    path = tmp_path / "t.csv"
    path.write_text("a,b,c,d\n1,x,0.5,true\n,,,\n3,\"y,z\",2,false\n")
    code, _, _ = call(capsys, "import", "t", str(path))
    assert code == 0
    rel = runner.query(runner.Workspace(tmp_path / "ws"), "SELECT * FROM t").relation
    assert [c.type.value for c in rel.schema.columns] == ["INT64", "STRING", "FLOAT64", "BOOL"]
    assert list(rel.rows()) == [(1, "x", 0.5, True), (None, None, None, None), (3, "y,z", 2.0, False)]


def test_console_entry_point(tmp_path):
    env_ws = str(tmp_path / "ws")
    proc = subprocess.run(
        [sys.executable, "-m", "minilake.cli", "--workspace", env_ws, "demo", str(tmp_path / "proj"), "--rows", "300"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run(
        [sys.executable, "-m", "minilake.cli", "--workspace", env_ws, "run", str(tmp_path / "proj"), "-b", "feat_1"],
        capture_output=True, text=True,
    )
    assert proc.returncode in (0, 2), proc.stderr
    assert proc.stdout.startswith("run ")


def test_branch_from_git_context(lake, capsys, tmp_path):
    ws, project = lake
    (project / ".git").mkdir()
    (project / ".git" / "HEAD").write_text("ref: refs/heads/feat_9\n")
    code, out, _ = call(capsys, "run", str(project))
    assert code == 0 and "branch feat_9 at" in out
