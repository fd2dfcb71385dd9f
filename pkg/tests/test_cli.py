import csv
import json

import numpy as np
import pytest

from infosched import cli
from infosched.model import Schedule, load_schedule, save_instance, save_schedule

from conftest import make_scalar_instance


def write_scalar_instance(path, **kw):
    inst = make_scalar_instance(**kw)
    save_instance(path, inst)
    return inst


def write_schedule(path, rates, T=1.0):
    rates = np.asarray(rates, dtype=float)
    save_schedule(path, Schedule(N=rates.shape[0], T=T, rates=rates))


def test_solve_random_writes_bundle_and_is_byte_stable(tmp_path, capsys):
    argv = ["solve", "--random", "n=2,M=2,seed=1", "--T", "1.0",
            "--budget", "3", "--N", "3", "--substeps", "4",
            "--max-iters", "10", "--no-timings"]
    assert cli.main(argv + ["--out", str(tmp_path / "a")]) == 0
    out = capsys.readouterr().out
    assert "feasible=True" in out
    for suffix in ("schedule", "report", "instance"):
        assert (tmp_path / f"a.{suffix}.json").exists()
    sched = load_schedule(tmp_path / "a.schedule.json")
    assert sched.rates.shape == (3, 2)
    assert np.all(sched.rates.sum(axis=1) <= 3.0 + 1e-9)
    report = json.loads((tmp_path / "a.report.json").read_text())
    assert {"schedule", "objective", "history", "converged",
            "timings"} <= report.keys()
    assert cli.main(argv + ["--out", str(tmp_path / "b")]) == 0
    for suffix in ("schedule", "report", "instance"):
        assert (tmp_path / f"a.{suffix}.json").read_bytes() == \
            (tmp_path / f"b.{suffix}.json").read_bytes()


def test_solve_zero_budget_returns_zero_schedule(tmp_path, capsys):
    argv = ["solve", "--random", "n=1,M=1,seed=2", "--T", "1.0",
            "--budget", "0", "--N", "2", "--substeps", "2",
            "--max-iters", "3", "--out", str(tmp_path / "z")]
    assert cli.main(argv) == 0
    capsys.readouterr()
    sched = load_schedule(tmp_path / "z.schedule.json")
    assert np.all(sched.rates <= 1e-9)


def test_solve_requires_an_instance_source(capsys):
    assert cli.main(["solve", "--N", "2"]) == 2
    assert "instance" in capsys.readouterr().err


def test_bad_random_spec_is_usage_error(capsys):
    assert cli.main(["solve", "--random", "n=bogus,M=2"]) == 2
    assert "not an integer" in capsys.readouterr().err


def test_malformed_instance_json_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    sched_path = tmp_path / "s.json"
    write_schedule(sched_path, np.zeros((2, 1)))
    argv = ["evaluate", "--instance", str(bad), "--schedule", str(sched_path)]
    assert cli.main(argv) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_evaluate_missing_file_is_usage_error(tmp_path, capsys):
    sched_path = tmp_path / "s.json"
    write_schedule(sched_path, np.zeros((2, 1)))
    argv = ["evaluate", "--instance", str(tmp_path / "nope.json"),
            "--schedule", str(sched_path)]
    assert cli.main(argv) == 2
    capsys.readouterr()


def test_evaluate_zero_schedule_deterministic_report(tmp_path, capsys):
    inst_path = tmp_path / "inst.json"
    write_scalar_instance(inst_path, a=-0.4, q=0.3, p0=1.5)
    sched_path = tmp_path / "sched.json"
    write_schedule(sched_path, np.zeros((2, 1)))
    base = ["evaluate", "--instance", str(inst_path),
            "--schedule", str(sched_path), "--runs", "4",
            "--n-eval", "20", "--substeps", "2"]
    assert cli.main(base + ["--out", str(tmp_path / "mc1.json")]) == 0
    out = capsys.readouterr().out
    assert "runs=4" in out and "stderr=0" in out
    report = json.loads((tmp_path / "mc1.json").read_text())
    assert report["std"] == 0.0
    assert len(report["costs"]) == 4
    assert cli.main(base + ["--out", str(tmp_path / "mc2.json")]) == 0
    capsys.readouterr()
    assert (tmp_path / "mc1.json").read_bytes() == \
        (tmp_path / "mc2.json").read_bytes()


def test_bracket_zero_schedule_certifies(tmp_path, capsys):
    inst_path = tmp_path / "inst.json"
    write_scalar_instance(inst_path, a=-0.3, q=0.4, p0=2.0)
    sched_path = tmp_path / "sched.json"
    write_schedule(sched_path, np.zeros((2, 1)))
    argv = ["bracket", "--instance", str(inst_path),
            "--schedule", str(sched_path), "--runs", "4", "--n-eval", "30",
            "--substeps", "2", "--surrogate-substeps", "10",
            "--out", str(tmp_path / "cert")]
    assert cli.main(argv) == 0
    out = capsys.readouterr().out
    assert "contained=True trajectory_contained=True" in out
    report = json.loads((tmp_path / "cert.bracket.json").read_text())
    assert report["contained"] is True
    assert report["trajectory_contained"] is True
    assert len(report["times"]) == 31


def test_bracket_snr_sweep_writes_csv(tmp_path, capsys):
    inst_path = tmp_path / "inst.json"
    write_scalar_instance(inst_path, a=-0.2, q=0.3, budget=4.0)
    sched_path = tmp_path / "sched.json"
    write_schedule(sched_path, np.full((2, 1), 1.5))
    argv = ["bracket", "--instance", str(inst_path),
            "--schedule", str(sched_path), "--runs", "60", "--n-eval", "20",
            "--substeps", "2", "--surrogate-substeps", "20",
            "--objective-only", "--snr-sweep", "1e-1..1e1,3",
            "--out", str(tmp_path / "cert")]
    assert cli.main(argv) == 0
    assert capsys.readouterr().out.count("r_scale=") == 3
    with open(tmp_path / "cert.snr.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 4
    assert rows[0][0] == "r_scale"
    assert [r[-1] for r in rows[1:]] == ["1", "1", "1"]


def test_bad_snr_spec_is_usage_error(tmp_path, capsys):
    inst_path = tmp_path / "inst.json"
    write_scalar_instance(inst_path)
    sched_path = tmp_path / "sched.json"
    write_schedule(sched_path, np.zeros((1, 1)))
    argv = ["bracket", "--instance", str(inst_path),
            "--schedule", str(sched_path), "--runs", "2", "--n-eval", "10",
            "--snr-sweep", "bogus"]
    assert cli.main(argv) == 2
    capsys.readouterr()


def test_sweep_tiny_grid_byte_stable(tmp_path, capsys):
    argv = ["sweep", "--sweep", "dimension", "--grid", "2",
            "--instances", "1", "--runs", "4", "--N", "4",
            "--substeps", "4", "--max-iters", "5", "--n-eval", "40",
            "--no-timings"]
    assert cli.main(argv + ["--out", str(tmp_path / "s1.csv")]) == 0
    out = capsys.readouterr().out
    assert "summary dimension=2 kind=info" in out
    assert "summary dimension=2 kind=cov" in out
    with open(tmp_path / "s1.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert {r["kind"] for r in rows} == {"info", "cov"}
    assert rows[0]["sweep"] == "dimension" and rows[0]["point"] == "2"
    assert all(r["total_s"] == "0.0" for r in rows)
    float(rows[0]["objective_norm"])
    assert cli.main(argv + ["--out", str(tmp_path / "s2.csv")]) == 0
    capsys.readouterr()
    assert (tmp_path / "s1.csv").read_bytes() == \
        (tmp_path / "s2.csv").read_bytes()


def test_sweep_refuses_over_time_cap(tmp_path, capsys):
    argv = ["sweep", "--sweep", "sensors", "--grid", "8",
            "--instances", "2", "--runs", "50", "--N", "4",
            "--substeps", "2", "--n-eval", "40",
            "--max-minutes", "0.0001", "--out", str(tmp_path / "s.csv")]
    assert cli.main(argv) == 1
    assert "refusing sweep" in capsys.readouterr().err
    assert not (tmp_path / "s.csv").exists()


def test_gradcheck_builtin_scalar_passes(capsys):
    assert cli.main(["gradcheck", "--kind", "both"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 2


def test_gradcheck_corrupted_gradient_fails(capsys):
    assert cli.main(["gradcheck", "--kind", "info", "--corrupt"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_gradcheck_random_instance_both_kinds(capsys):
    argv = ["gradcheck", "--random", "n=2,M=2,seed=3", "--T", "1.0",
            "--budget", "3", "--N", "3", "--substeps", "4"]
    assert cli.main(argv) == 0
    assert capsys.readouterr().out.count("PASS") == 2
