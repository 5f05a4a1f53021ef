import csv

import numpy as np
import pytest

from pemfreq import cli
from pemfreq.engine import CSV_COLUMNS


def run(tmp_path, name, *argv):
    out = tmp_path / name
    assert cli.main([*argv, "--out", str(out)]) == 0
    return out


def test_sweep_markdown_table(tmp_path, capsys):
    out = run(tmp_path, "a", "sweep", "--eta-max", "0,0.33,0.67,1", "--subsample-fleet", "4000", "--fast-init")
    text = capsys.readouterr().out
    table = text.split("\n\n")[0] if "\n\n" in text else text
    rows = [l for l in table.splitlines() if l.startswith("| 0.") or l.startswith("| 1.")]
    assert len(rows) == 8  # four rows in each of the two tables
    assert "ROCOF" in text
    assert (out / "report.md").exists() and (out / "metrics.csv").exists()


def test_same_seed_gives_identical_files(tmp_path):
    args = ("run", "--subsample-fleet", "2000", "--fast-init", "--seed", "11")
    a = run(tmp_path, "a", *args)
    b = run(tmp_path, "b", *args, "--workers", "3")
    for name in ("timeseries.csv", "proportional.csv", "metrics.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_csv_columns(tmp_path):
    out = run(tmp_path, "a", "run", "--subsample-fleet", "2000", "--fast-init")
    with open(out / "timeseries.csv") as fh:
        header = next(csv.reader(fh))
    assert tuple(header) == CSV_COLUMNS


def test_subsample_preserves_fleet_mw_and_baseline(tmp_path):
    full = run(tmp_path, "f", "run", "--subsample-fleet", "40000", "--fast-init", "--eta-max", "0")
    sub = run(tmp_path, "s", "run", "--subsample-fleet", "4000", "--fast-init", "--eta-max", "0")
    a = np.genfromtxt(full / "timeseries.csv", delimiter=",", names=True)
    b = np.genfromtxt(sub / "timeseries.csv", delimiter=",", names=True)
    assert a["p_pem_mw"][0] == pytest.approx(b["p_pem_mw"][0], abs=0.5)
    assert np.max(np.abs(a["df_area2_hz"] - b["df_area2_hz"])) < 1e-3


def test_report_rerenders(tmp_path, capsys):
    out = run(tmp_path, "a", "run", "--subsample-fleet", "2000", "--fast-init")
    capsys.readouterr()
    assert cli.main(["report", "--out", str(out), "--format", "csv"]) == 0
    assert (out / "report.csv").read_text().startswith("eta_max,")


def test_errors_give_nonzero_exit(tmp_path, capsys):
    bad = tmp_path / "bad.scenario"
    bad.write_text("version: 1\nnetwork: {}\n")
    assert cli.main(["run", "--scenario", str(bad), "--out", str(tmp_path / "x")]) != 0
    assert "error:" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()
    assert cli.main(["report", "--out", str(tmp_path / "empty")]) != 0
