"""Smoke runs of the experiment scripts with small arguments."""
import csv

from scripts_path import run_script


def test_prefetch_curve(tmp_path):
    out = tmp_path / "curve.csv"
    assert run_script("prefetch_curve.py",
                      ["--region", "toy", "--seed", "3",
                       "--out", str(out)]) in (0, None)
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 8
    base = [int(r["baseline_cycles"]) for r in rows]
    masked = [int(r["oreo_cycles"]) for r in rows]
    assert base.count(min(base)) == 1
    assert max(masked) == min(masked)


def test_noninterference_sweep_script():
    assert run_script("noninterference_sweep.py", ["--region", "toy", "--n", "4"]) \
        in (0, None)


def test_attack_matrix(tmp_path):
    out = tmp_path / "m.csv"
    run_script("attack_matrix.py",
               ["--seeds", "2", "--attack", "drk", "--out", str(out)])
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 4
    for r in rows:
        want = "Leak" if r["mode"] == "baseline" else "NoLeak"
        assert r["verdict"] == want
