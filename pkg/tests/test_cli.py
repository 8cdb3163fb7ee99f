from __future__ import annotations

import subprocess
import sys

import numpy as np
import pytest

from mapfuse.cli import main
from mapfuse.map_store import read_cloud
from mapfuse.sim.eventlog import read_trajectory
from mapfuse.sim.scenario import ScenarioSpec, realistic_noise, write_spec


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_spec(root / "scenario.txt", ScenarioSpec(duration=8.0))
    write_spec(root / "noise.txt", realistic_noise(seed=1, dropouts=()))
    out = root / "run"
    assert main(["simulate", "--spec", str(root / "scenario.txt"), "--noise", str(root / "noise.txt"), "--out", str(out)]) == 0
    return root, out


def test_simulate_writes_dataset(sim_dir):
    _, out = sim_dir
    for name in ("map.txt", "events.log", "truth.txt", "config.cfg"):
        assert (out / name).is_file()
    assert len(list((out / "scans").iterdir())) == 81


def test_make_map_matches_simulated_map(sim_dir, tmp_path):
    root, out = sim_dir
    assert main(["make-map", "--spec", str(root / "scenario.txt"), "--out", str(tmp_path / "m.txt")]) == 0
    assert np.array_equal(read_cloud(tmp_path / "m.txt").points, read_cloud(out / "map.txt").points)


def test_localize_and_evaluate(sim_dir, capsys):
    _, out = sim_dir
    est = out / "est.txt"
    args = ["localize", "--map", str(out / "map.txt"), "--log", str(out / "events.log"), "--config", str(out / "config.cfg")]
    assert main(args + ["--out", str(est)]) == 0
    assert len(read_trajectory(est)) > 30
    capsys.readouterr()
    assert main(["evaluate", "--est", str(est), "--truth", str(out / "truth.txt")]) == 0
    printed = capsys.readouterr().out.strip()
    assert float(printed) < 0.3
    assert main(["evaluate", "--est", str(est), "--truth", str(out / "truth.txt"), "--xy-only", "--max-dt", "0.01"]) == 0


def test_missing_input_exits_with_one(tmp_path, capsys):
    code = main(["localize", "--map", str(tmp_path / "nope.txt"), "--log", str(tmp_path / "x.log"), "--out", str(tmp_path / "o.txt")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_malformed_config_exits_with_one(sim_dir, tmp_path):
    _, out = sim_dir
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("alpah = 0.5\n")
    args = ["localize", "--map", str(out / "map.txt"), "--log", str(out / "events.log"), "--config", str(cfg)]
    assert main(args + ["--out", str(tmp_path / "o.txt")]) == 1


def test_unmatched_map_exits_with_two(sim_dir, tmp_path):
    _, out = sim_dir
    far_map = tmp_path / "far.txt"
    far_map.write_text("".join(f"{1000 + k} 1000 {k % 3} \n" for k in range(20)))
    args = ["localize", "--map", str(far_map), "--log", str(out / "events.log"), "--config", str(out / "config.cfg")]
    assert main(args + ["--out", str(tmp_path / "o.txt")]) == 2
    assert (tmp_path / "o.txt").exists()


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "mapfuse.cli", "--help"], capture_output=True, text=True, check=False)
    assert res.returncode == 0
    for cmd in ("make-map", "simulate", "localize", "evaluate"):
        assert cmd in res.stdout


def test_unknown_subcommand_is_usage_error():
    res = subprocess.run([sys.executable, "-m", "mapfuse.cli", "fly"], capture_output=True, text=True, check=False)
    assert res.returncode == 1
    assert main(["localize", "--map", "m.txt"]) == 1
