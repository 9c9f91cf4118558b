import json
import subprocess
from io import StringIO

import pandas as pd
import pytest
import yaml

from finequeue.analytic import alpha_crit, expected_payment_mixed
from finequeue.serialization import read_episode_logs

SMALL = ["--x0", "8", "--x", "4", "--w", "6", "--workers", "1"]


def run(*args, **kwargs):
    return subprocess.run(["finequeue", *args], capture_output=True, text=True, **kwargs)


@pytest.fixture
def out_path(tmp_path):
    return tmp_path / "out.csv"


def test_critical_position():
    cp = run("analytic", "r")
    assert cp.returncode == 0
    assert cp.stdout == "4\n"


def test_alpha():
    cp = run("analytic", "alpha", "--n", "4")
    assert cp.stdout == "0.5\n"


def test_unbounded_critical_position():
    assert run("analytic", "r", "--p", "0").stdout == "UNBOUNDED\n"


def test_payment_mixed():
    cp = run("analytic", "payment-mixed", "--n", "5", "--mix-prob", "0.25")
    assert cp.returncode == 0
    # Position 5 is behind the critical position 4 of the reference game.
    expected = expected_payment_mixed(0.5, 0.25, alpha_crit(0.5, 4, 5, 2), 4, 6)
    assert float(cp.stdout) == pytest.approx(expected)
    assert expected == pytest.approx(1.5625)


def test_division_compare():
    cp = run("analytic", "division-compare", "--Q", "400")
    assert cp.returncode == 0
    report = json.loads(cp.stdout)
    assert report["winner"] == "two_round"
    assert report["r_k"] == 12


def test_analytic_scan(out_path):
    cp = run(
        "analytic", "chernoff-scan", "--p-grid", "0.3,0.5", "--n-max", "16", "--out", out_path
    )
    assert cp.returncode == 0
    scan = pd.read_csv(out_path)
    assert scan["holds"].all()
    assert set(scan["p"]) == {0.3, 0.5}


def test_simulate_is_reproducible(tmp_path):
    first, second = tmp_path / "first.csv", tmp_path / "second.csv"
    assert run("simulate", *SMALL, "--episodes", "3", "--out", first).returncode == 0
    assert run("simulate", *SMALL, "--episodes", "3", "--out", second).returncode == 0
    assert first.read_text() == second.read_text()

    table = pd.read_csv(first)
    assert list(table["episode"]) == [0, 1, 2]
    assert (table["rounds"] == 6).all()

    sidecar = yaml.safe_load((tmp_path / "first.csv.config.yaml").read_text())
    assert sidecar["queue"]["x0"] == 8
    assert sidecar["simulate"]["strategy"] == "brs"


def test_simulate_stdout_and_log(tmp_path):
    log_path = tmp_path / "episodes.jsonl"
    cp = run("simulate", *SMALL, "--episodes", "2", "--log", log_path)
    assert cp.returncode == 0
    assert "seed: 0" in cp.stderr

    table = pd.read_csv(StringIO(cp.stdout))
    episodes = read_episode_logs(log_path)
    assert len(episodes) == 2
    assert [sum(e.log.revenues) for e in episodes] == list(table["revenue"])


def test_existing_output(out_path):
    assert run("simulate", *SMALL, "--episodes", "1", "--out", out_path).returncode == 0

    cp = run("simulate", *SMALL, "--episodes", "1", "--out", out_path)
    assert cp.returncode != 0
    assert "Use --force flag to overwrite" in cp.stderr

    cp = run("simulate", *SMALL, "--episodes", "1", "--out", out_path, "--force")
    assert cp.returncode == 0


def test_empty_grid():
    cp = run("sweep", "--grid", "", "--episodes", "1", "--workers", "1")
    assert cp.returncode != 0
    assert "must not be empty" in cp.stderr


def test_invalid_parameters():
    cp = run("simulate", "--Q", "3", "--episodes", "1")
    assert cp.returncode != 0
    assert "Traceback" not in cp.stderr


def test_division_sweep_with_brs(out_path):
    cp = run(
        "sweep",
        "--sweep",
        "division",
        "--grid",
        "1",
        "--episodes",
        "2",
        "--workers",
        "1",
        "--out",
        out_path,
    )
    assert cp.returncode == 0
    table = pd.read_csv(out_path)
    assert list(table["per_period"]) == [48.0]


def test_coalition():
    cp = run("coalition", "--T", "1", "--w", "1", "--x", "0", "--x0", "8", "--size", "2")
    assert cp.returncode == 0
    report = json.loads(cp.stdout)
    assert report["method"] == "exact"
    assert report["shared_cost"] == pytest.approx(6)
    assert report["violations"] == 0


def test_config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("queue:\n  p: 0.0\n")
    assert run("--config", path, "analytic", "r").stdout == "UNBOUNDED\n"
    # Command line options override the file.
    assert run("--config", path, "analytic", "r", "--p", "0.5").stdout == "4\n"

    path.write_text("simulate:\n  episodes: 1\n  colour: red\n")
    cp = run("--config", path, "simulate")
    assert cp.returncode != 0
    assert "colour" in cp.stderr


def test_train(tmp_path, out_path):
    checkpoints = tmp_path / "checkpoints"
    cp = run(
        "train",
        *SMALL,
        "--iterations",
        "1",
        "--episodes",
        "2",
        "--n-epochs",
        "1",
        "--buffer-size",
        "32",
        "--n-train",
        "2",
        "--checkpoint-dir",
        checkpoints,
        "--out",
        out_path,
    )
    assert cp.returncode == 0
    history = pd.read_csv(out_path)
    assert list(history["iteration"]) == [1]
    assert list(history["status"]) == ["complete"]
    assert (checkpoints / "policy-1.json").is_file()


def test_preset(out_path):
    cp = run(
        "simulate", "--preset", "one-sorting", "--x0", "6", "--episodes", "1", "--out", out_path
    )
    assert cp.returncode == 0
    assert list(pd.read_csv(out_path)["rounds"]) == [1]

    sidecar = yaml.safe_load((out_path.parent / "out.csv.config.yaml").read_text())
    assert (sidecar["queue"]["T"], sidecar["queue"]["w"]) == (1, 1)
    assert (sidecar["queue"]["x"], sidecar["queue"]["x0"]) == (0, 6)

    assert run("analytic", "r", "--preset", "sorting").returncode != 0


def test_position_utilities(tmp_path):
    positions = tmp_path / "positions.csv"
    cp = run(
        "simulate",
        *SMALL,
        "--p",
        "0",
        "--strategy",
        "pure:4",
        "--episodes",
        "2",
        "--positions",
        positions,
    )
    assert cp.returncode == 0
    table = pd.read_csv(positions)
    assert list(table["position"]) == list(range(1, 9))
    assert (table["utility"] == -4.0).all()
    assert (table["stderr"] == 0.0).all()
