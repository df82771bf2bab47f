import pytest

from ipmplan.cli import OUT_ENV, main
from ipmplan.ipm import load_model


def test_fit_writes_model(tmp_path, capsys):
    out = tmp_path / "m.txt"
    code = main(["fit", "--out", str(out), "--n-train", "1500", "--n-val", "1500", "--epochs", "800"])
    assert code == 0
    text = capsys.readouterr().out
    assert "validation_accuracy" in text
    prot, clf = load_model(out)
    assert clf.cp == 0.95


def test_fit_sigma_zero_is_echoed(tmp_path, capsys):
    out = tmp_path / "m.txt"
    assert main(["fit", "--out", str(out), "--sigma", "0", "--n-train", "1500", "--n-val", "500",
                 "--epochs", "300"]) == 0
    text = capsys.readouterr().out
    assert "sigma_level: 0.0" in text and "# arg sigma=0.0" in text


def test_fit_missing_output_dir(tmp_path, capsys):
    assert main(["fit", "--out", str(tmp_path / "nope" / "m.txt")]) == 1
    assert "does not exist" in capsys.readouterr().err


def test_run_writes_outputs_and_trace(tmp_path, capsys):
    code = main(["run", "--scenario", "free_drive", "--seed", "0", "--out", str(tmp_path), "--trace"])
    assert code == 0
    stem = "free_drive_pd-ipm_s0"
    metrics = (tmp_path / f"{stem}_metrics.csv").read_text().splitlines()
    assert metrics[0].startswith("scenario,variant,seed") and ",0," in metrics[1]
    assert (tmp_path / f"{stem}_trace.csv").read_text().startswith("t,ego_s,ego_v,ego_a")
    nodes = (tmp_path / f"{stem}_nodes.txt").read_text()
    assert nodes.startswith("cycle 0") and "layer s v t J parent_id" in nodes


def test_run_missing_scenario_echoes_path(tmp_path, capsys):
    missing = tmp_path / "absent.yaml"
    assert main(["run", "--scenario", str(missing), "--out", str(tmp_path)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_run_strict_exit_on_collision(tmp_path):
    # the constant-velocity baseline misjudges this seed
    args = ["run", "--scenario", "overtake", "--variant", "pd-cvel", "--seed", "2", "--out", str(tmp_path)]
    assert main(args) == 0
    assert main(args + ["--strict"]) == 3


def test_usage_errors(tmp_path, monkeypatch):
    assert main(["run"]) == 1
    assert main(["run", "--scenario", "free_drive", "--out", str(tmp_path / "x")]) == 1
    assert main(["run", "--scenario", "free_drive", "--out", str(tmp_path), "--set", "bogus=1"]) == 1
    assert main(["run", "--scenario", "free_drive", "--out", str(tmp_path), "--model", "nope.txt"]) == 1
    assert main(["bench", "--seeds", "0", "--out", str(tmp_path)]) == 1
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "missing"))
    assert main(["run", "--scenario", "free_drive"]) == 1


def test_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path))
    assert main(["run", "--scenario", "free_drive", "--seed", "1"]) == 0
    assert (tmp_path / "free_drive_pd-ipm_s1_metrics.csv").exists()


def test_bench_shape(tmp_path, capsys):
    code = main(["bench", "--scenario", "free_drive", "--variant", "pd-ipm", "--variant", "pd-m-",
                 "--seeds", "3", "--out", str(tmp_path)])
    assert code == 0
    rows = (tmp_path / "bench_metrics.csv").read_text().splitlines()
    assert len(rows) == 3
    assert len((tmp_path / "bench_runs.csv").read_text().splitlines()) == 7
    table = (tmp_path / "bench_table.txt").read_text()
    assert table.count("±") == 6
    timing = (tmp_path / "bench_timing.txt").read_text()
    pct = [float(ln.split()[-1].rstrip("%")) for ln in timing.splitlines() if ln.rstrip().endswith("%")]
    assert sum(pct) == pytest.approx(100.0, abs=0.05)


def test_trace_command(tmp_path, capsys):
    assert main(["trace", "--scenario", "free_drive", "--cycle", "2"]) == 0
    out = capsys.readouterr().out
    assert "cycle 2" in out and "cycle 3" not in out
    assert main(["trace", "--scenario", "free_drive", "--cycle", "100000"]) == 1
