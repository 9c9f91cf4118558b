import io
import json

import numpy as np
import pandas as pd
import pytest

from finequeue import McEstimate, Profile, QueueConfig, run_queue
from finequeue.exceptions import ValidationError
from finequeue.game import BasicRationalStrategy
from finequeue.learner.network import flatten
from finequeue.serialization import (
    check_output,
    read_checkpoint,
    read_episode_log,
    read_episode_logs,
    table_text,
    write_checkpoint,
    write_episode_log,
    write_json,
    write_table,
)


@pytest.fixture
def log(small_config):
    return run_queue(small_config, Profile.single(BasicRationalStrategy()))


def test_episode_log_round_trip(log):
    stream = io.StringIO()
    write_episode_log(log, stream, metadata={"strategy": "brs"})
    stream.seek(0)
    episode = read_episode_log(stream)

    restored = episode.log
    assert episode.metadata == {"strategy": "brs"}
    assert restored.config == log.config
    assert restored.tag_names == log.tag_names
    assert restored.revenues == log.revenues

    terminals, reasons = log.terminals()
    restored_terminals, restored_reasons = restored.terminals()
    np.testing.assert_array_equal(terminals.ids, restored_terminals.ids)
    np.testing.assert_array_equal(terminals.m, restored_terminals.m)
    np.testing.assert_array_equal(reasons, restored_reasons)

    decisions, rounds = log.decisions()
    restored_decisions, restored_rounds = restored.decisions()
    np.testing.assert_array_equal(rounds, restored_rounds)
    np.testing.assert_array_equal(decisions.declared_prob, restored_decisions.declared_prob)


def test_episode_log_lines(log):
    stream = io.StringIO()
    write_episode_log(log, stream)
    lines = stream.getvalue().splitlines()
    assert len(lines) == 1 + len(log.rounds)
    header = json.loads(lines[0])
    assert header["kind"] == "header"
    assert header["config"]["x0"] == 8
    assert [json.loads(line)["round"] for line in lines[1:]] == list(range(1, 9))


def test_several_episodes(tmp_path, log):
    path = tmp_path / "episodes.jsonl"
    with open(path, "wt") as handle:
        write_episode_log(log, handle, metadata={"episode": 0})
        write_episode_log(log, handle, metadata={"episode": 1})

    episodes = read_episode_logs(path)
    assert [episode.metadata["episode"] for episode in episodes] == [0, 1]
    with pytest.raises(ValidationError, match="Expected one episode"):
        read_episode_log(path)


@pytest.mark.parametrize(
    "text,message",
    [
        ("", "empty"),
        ('{"kind": "round", "round": 1}\n', "header"),
        ("not json\n", "Malformed"),
        ('{"kind": "header", "seed": 0}\n', "Malformed"),
    ],
)
def test_malformed_episode_log(text, message):
    with pytest.raises(ValidationError, match=message):
        read_episode_logs(io.StringIO(text))


def test_checkpoint_round_trip(tmp_path, policy):
    path = write_checkpoint(policy, tmp_path / "ckpt" / "policy.json", {"lr": 0.001}, 3, 7)
    checkpoint = read_checkpoint(path)

    assert checkpoint.iteration == 3
    assert checkpoint.seed == 7
    assert checkpoint.hyperparams == {"lr": 0.001}
    restored = checkpoint.params
    np.testing.assert_array_equal(
        flatten(policy.actor_weights, policy.actor_biases),
        flatten(restored.actor_weights, restored.actor_biases),
    )
    np.testing.assert_array_equal(
        flatten(policy.critic_weights, policy.critic_biases),
        flatten(restored.critic_weights, restored.critic_biases),
    )
    assert restored.n_scale == policy.n_scale


def test_read_checkpoint_errors(tmp_path):
    with pytest.raises(ValidationError, match="does not exist"):
        read_checkpoint(tmp_path / "missing.json")

    other = tmp_path / "other.json"
    other.write_text('{"format": "something-else"}')
    with pytest.raises(ValidationError, match="not a policy checkpoint"):
        read_checkpoint(other)

    truncated = tmp_path / "truncated.json"
    truncated.write_text('{"format": "finequeue-policy", "actor": []}')
    with pytest.raises(ValidationError, match="Malformed checkpoint"):
        read_checkpoint(truncated)


def test_check_output(tmp_path):
    path = check_output(tmp_path / "new" / "out.csv")
    assert path.parent.is_dir()

    path.write_text("x")
    with pytest.raises(ValidationError, match="--force"):
        check_output(path)
    assert check_output(path, force=True) == path
    with pytest.raises(ValidationError, match="is a directory"):
        check_output(tmp_path)


def simulation_table():
    return pd.DataFrame(
        {
            "seed": [0, 0],
            "episode": [0, 1],
            "rounds": [4, 4],
            "terminals": [20, 20],
            "revenue": [12.0, 18.0],
            "per_round": [3.0, 4.5],
            "steady_revenue": [0.0, 0.0],
            "steady_per_round": [0.0, 0.0],
        }
    )


def test_write_table(tmp_path):
    table = simulation_table()
    csv_path = tmp_path / "out.csv"
    write_table(table, csv_path, kind="simulation")
    assert pd.read_csv(csv_path).equals(table)

    json_path = tmp_path / "out.json"
    write_table(table, json_path, kind="simulation")
    records = json.loads(json_path.read_text())
    assert records[1]["revenue"] == 18.0

    with pytest.raises(ValidationError):
        write_table(table, csv_path, kind="simulation")


def test_write_table_to_stdout(capsys):
    write_table(simulation_table(), kind="simulation")
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("seed,episode,rounds")
    assert len(lines) == 3


def test_table_schema():
    negative = simulation_table().assign(revenue=[-1.0, 2.0])
    with pytest.raises(ValidationError, match="simulation schema"):
        write_table(negative, kind="simulation")

    reordered = simulation_table()[["episode", "seed", *simulation_table().columns[2:]]]
    with pytest.raises(ValidationError):
        write_table(reordered, kind="simulation")

    with pytest.raises(ValidationError, match="Unknown table kind"):
        write_table(simulation_table(), kind="positions-by-round")
    with pytest.raises(ValidationError, match="Unknown table format"):
        table_text(simulation_table(), "parquet")


def test_write_json(tmp_path):
    path = tmp_path / "report.json"
    report = {"estimate": McEstimate(1.5, 0.25, 4, 0), "gain": np.float64(2.0), "sizes": (1, 2)}
    write_json(report, path)
    assert json.loads(path.read_text()) == {
        "estimate": {"episodes": 4, "mean": 1.5, "seed": 0, "stderr": 0.25},
        "gain": 2.0,
        "sizes": [1, 2],
    }

    config = QueueConfig()
    write_json({"config": config}, tmp_path / "config.json")
    assert json.loads((tmp_path / "config.json").read_text())["config"]["Q"] == 6
