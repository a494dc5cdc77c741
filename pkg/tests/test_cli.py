import json

import pytest

from qpl.cli import main
from qpl.csvio import read_table
from qpl.tags import read_tags


def test_simulate_detect_correlate_estimate(tmp_path, capsys):
    assert main(["simulate", "--seed", "3", "--duration", "0.2", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "events.npz").exists()
    assert main(["detect", "--seed", "4", "--events", str(tmp_path / "events.npz"), "--out", str(tmp_path)]) == 0
    tags = read_tags(tmp_path / "tags.qtag")
    assert len(tags.channel) > 0
    assert main(["correlate", "--tags", str(tmp_path / "tags.qtag"), "--duration", "0.2", "--out", str(tmp_path)]) == 0
    _, h = read_table(tmp_path / "correlation.csv")
    assert h["g2"].max() > 20
    assert main(["estimate", "--tags", str(tmp_path / "tags.qtag"), "--out", str(tmp_path)]) == 0
    meta, est = read_table(tmp_path / "estimate.csv")
    assert meta["window_ticks"] == "70"
    assert 0.05 < est["p1"][0] < 0.15


def test_simulate_is_reproducible(tmp_path):
    for d in ("a", "b"):
        main(["simulate", "--seed", "9", "--duration", "0.05", "--out", str(tmp_path / d)])
    assert (tmp_path / "a/events.npz").read_bytes() == (tmp_path / "b/events.npz").read_bytes()


def test_qng_to_stdout(capsys):
    assert main(["qng", "--p1", "0.09", "--p2", "2.7e-4"]) == 0
    lines = capsys.readouterr().out.splitlines()
    row = dict(zip(lines[-2].split(","), lines[-1].split(",")))
    assert row["is_qng"] == "true"
    assert 0.0 < float(row["nsr_threshold"]) < 0.05


def test_qng_non_qng_state_reports_nan(capsys):
    assert main(["qng", "--p1", "0.01", "--p2", "0.01"]) == 0
    out = capsys.readouterr().out
    assert "false" in out and "nan" in out


def test_run_and_replay(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": "scan-power", "seed": 1, "analysis": {"duration": 0.05, "powers": [1.0]}}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    manifest = tmp_path / "out" / "scan-power" / "manifest.json"
    assert main(["run", "--replay", str(manifest), "--out", str(tmp_path / "re")]) == 0
    assert "identical" in capsys.readouterr().out
    # seed flag overrides the file
    assert main(["run", "--config", str(cfg), "--seed", "2", "--out", str(tmp_path / "s2")]) == 0
    m = json.loads((tmp_path / "s2" / "scan-power" / "manifest.json").read_text())
    assert m["seed"] == 2


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["run", "--scenario", "scan-d", "--out", str(tmp_path)]) == 2
    assert "seed" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.qtag"
    bad.write_bytes(b"garbage!")
    assert main(["estimate", "--tags", str(bad)]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["simulate", "--duration", "1"])  # seed is mandatory


def test_package_main_module():
    import subprocess
    import sys

    r = subprocess.run([sys.executable, "-m", "qpl", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout
