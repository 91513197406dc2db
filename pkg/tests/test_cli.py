import csv
import json
import subprocess
import sys
from dataclasses import fields

import pytest

from helpers import make_doc
from pwcbf.cli import EXIT_FAIL, EXIT_MISMATCH, EXIT_OK, EXIT_USAGE, RunSummary, load_config, main
from pwcbf.controller import controller_from_csv

STABLE_FILES = ("barrier.csv", "controller.csv", "partition.csv", "solution.json", "summary.json")


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(make_doc(noise={"covariance": [[0.01]]}, grids=[[4], [6]])))
    return str(path)


@pytest.fixture
def synth_dir(tmp_path, config):
    out = tmp_path / "run"
    assert main(["synth", "--config", config, "--out", str(out)]) == EXIT_OK
    return out


def test_synth_writes_outputs(synth_dir):
    for name in (*STABLE_FILES, "timings.json"):
        assert (synth_dir / name).is_file(), name
    summary = json.loads((synth_dir / "summary.json").read_text())
    assert summary["K"] == 4 and summary["grid_counts"] == [4]
    assert 0.0 <= summary["p_safe"] <= 1.0


def test_summary_and_timings_cover_run_summary(synth_dir):
    summary = json.loads((synth_dir / "summary.json").read_text())
    timings = json.loads((synth_dir / "timings.json").read_text())
    names = {f.name for f in fields(RunSummary)}
    assert set(summary) | (set(timings) & names) == names
    assert not set(summary) & set(timings)


def test_synth_is_byte_identical(tmp_path, config, synth_dir):
    again = tmp_path / "again"
    assert main(["synth", "--config", config, "--out", str(again)]) == EXIT_OK
    for name in STABLE_FILES:
        assert (again / name).read_bytes() == (synth_dir / name).read_bytes(), name


def test_controller_file_round_trip(synth_dir):
    text = (synth_dir / "controller.csv").read_text()
    ctrl = controller_from_csv(text)
    assert ctrl.grid_counts == (4,)
    assert ctrl.to_csv() == text


def test_infinite_horizon_summary(tmp_path, config):
    out = tmp_path / "inf"
    assert main(["synth", "--config", config, "--horizon", "infinite", "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["beta"] == 0.0
    assert summary["p_safe"] == pytest.approx(1.0 - summary["eta"])


def test_optional_dumps(tmp_path, config):
    out = tmp_path / "dumps"
    assert main(["synth", "--config", config, "--grid", "6", "--dump-bounds", "--dump-lp", "--out", str(out)]) == 0
    assert (out / "bounds.csv").read_text().count("\n") > 6
    assert "ENDATA" in (out / "model.mps").read_text()


def test_simulate_and_check(tmp_path, config, synth_dir):
    ctrl = str(synth_dir / "controller.csv")
    a, b = tmp_path / "mc_a", tmp_path / "mc_b"
    for out in (a, b):
        assert main(["simulate", "--config", config, "--controller", ctrl, "--trials", "40", "--steps", "5",
                     "--seed", "3", "--out", str(out)]) == EXIT_OK
    for name in ("mc_report.json", "exit_times.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    report = json.loads((a / "mc_report.json").read_text())
    assert report["trials"] == 40 and 0.0 <= report["lower_bound_95"] <= report["empirical_safety"]
    code = main(["check", "--config", config, "--barrier", str(synth_dir / "barrier.csv"), "--controller", ctrl])
    assert code == EXIT_OK


def test_check_fails_on_corrupted_barrier(tmp_path, config, synth_dir):
    lines = (synth_dir / "barrier.csv").read_text().splitlines()
    idx, _, beta_i = lines[3].split(",")
    lines[3] = f"{idx},-0.1,{beta_i}"
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    code = main(["check", "--config", config, "--barrier", str(bad), "--controller", str(synth_dir / "controller.csv")])
    assert code == EXIT_FAIL


def test_partition_mismatch(tmp_path, config, synth_dir):
    code = main(["simulate", "--config", config, "--controller", str(synth_dir / "controller.csv"), "--grid", "6",
                 "--out", str(tmp_path / "x")])
    assert code == EXIT_MISMATCH


@pytest.mark.parametrize("argv", [
    ["synth", "--config", "no-such-benchmark", "--out", "OUT"],
    ["synth", "--config", "", "--out", "OUT"],
    ["synth", "--config", "CONFIG", "--grid", "a,b", "--out", "OUT"],
    ["synth", "--config", "CONFIG", "--grid", "4,4", "--out", "OUT"],
    ["synth", "--config", "CONFIG", "--horizon", "-3", "--out", "OUT"],
    ["simulate", "--config", "CONFIG", "--controller", "missing.csv", "--out", "OUT"],
    ["table", "--bench", "", "--out", "OUT"],
    ["frobnicate"],
])
def test_usage_errors(tmp_path, config, argv):
    argv = [config if a == "CONFIG" else str(tmp_path / "o") if a == "OUT" else a for a in argv]
    assert main(argv) == EXIT_USAGE


def test_bad_threads_is_usage_error(tmp_path, config, monkeypatch):
    monkeypatch.setenv("THREADS", "zero")
    assert main(["synth", "--config", config, "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_shipped_benchmarks_load():
    for name in ("linear-convex", "linear-nonconvex", "temperature-3room", "unicycle-4d"):
        assert load_config(name).name


def test_table(tmp_path, config):
    out = tmp_path / "table"
    assert main(["table", "--bench", config, "--trials", "20", "--steps", "5", "--out", str(out)]) == EXIT_OK
    with open(out / "table.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["K"]) for r in rows] == [4, 6]
    assert {f.name for f in fields(RunSummary)} <= set(rows[0])


def test_module_entry_point(tmp_path, config):
    proc = subprocess.run([sys.executable, "-m", "pwcbf.cli", "synth", "--config", config, "--out",
                           str(tmp_path / "m")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "K=4" in proc.stdout
