"""Reading and writing episode logs, policy checkpoints and result tables."""

import dataclasses
import io
import json
import logging
import sys
from pathlib import Path
from typing import IO, Any, Dict, Iterator, List, Mapping, Optional, Union

import numpy as np
import pandas as pd
from sklearn.utils import Bunch

from .config import QueueConfig
from .exceptions import ValidationError
from .game.core import Decisions, EpisodeLog, Population, RoundOutcome
from .learner.network import PolicyParams
from .schemas import validate_table

logger = logging.getLogger(__name__)

#: Format marker of policy checkpoints.
CHECKPOINT_FORMAT = "finequeue-policy"
#: Version of the checkpoint and log formats.
FORMAT_VERSION = 1

PathLike = Union[str, Path]


def check_output(path: PathLike, force: bool = False) -> Path:
    """Prepare ``path`` for writing.

    Refuse directories and existing files (unless ``force``) and create
    missing parent directories.
    """
    path = Path(path)
    if path.is_dir():
        raise ValidationError(f"File {path} is a directory.")
    if path.exists() and not force:
        raise ValidationError(f"File {path} already exists. Use --force flag to overwrite.")
    if not path.parent.exists():
        path.parent.mkdir(parents=True)
    return path


def _dumps(record: Mapping[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def _arrays(obj: Any) -> Dict[str, List[Any]]:
    return {field.name: getattr(obj, field.name).tolist() for field in dataclasses.fields(obj)}


def _population(record: Mapping[str, List[int]]) -> Population:
    return Population(
        **{
            field.name: np.asarray(record[field.name], dtype=np.int64)
            for field in dataclasses.fields(Population)
        }
    )


def _decisions(record: Mapping[str, List[Any]]) -> Decisions:
    values = {}
    for field in dataclasses.fields(Decisions):
        dtype = np.float64 if field.name == "declared_prob" else np.int64
        values[field.name] = np.asarray(record[field.name], dtype=dtype)
    return Decisions(**values)


def iter_episode_log(
    log: EpisodeLog, metadata: Optional[Mapping[str, Any]] = None
) -> Iterator[str]:
    """Yield the JSON lines of ``log``: a header, then one line per round."""
    yield _dumps(
        {
            "kind": "header",
            "version": FORMAT_VERSION,
            "config": log.config.to_dict(),
            "seed": log.seed,
            "tag_names": list(log.tag_names),
            "metadata": dict(metadata or {}),
        }
    )
    for outcome in log.rounds:
        yield _dumps(
            {
                "kind": "round",
                "round": outcome.round_index,
                "decisions": _arrays(outcome.decisions),
                "order": outcome.order.tolist(),
                "terminals": _arrays(outcome.terminals),
                "reasons": outcome.reasons.tolist(),
                "survivors": _arrays(outcome.survivors),
            }
        )


def write_episode_log(
    log: EpisodeLog,
    stream: IO[str],
    metadata: Optional[Mapping[str, Any]] = None,
) -> None:
    """Write ``log`` to ``stream`` as JSON lines with sorted keys."""
    for line in iter_episode_log(log, metadata):
        stream.write(line + "\n")


def read_episode_logs(source: Union[PathLike, IO[str]]) -> List[Bunch]:
    """Parse a JSON-lines file holding one or more episode logs.

    Every episode starts with a header line followed by its round lines.

    :return: One ``Bunch`` per episode with the ``log`` and the ``metadata``
        stored in its header
    """
    if isinstance(source, (str, Path)):
        with open(source, "rt") as handle:
            lines = handle.read().splitlines()
    else:
        lines = source.read().splitlines()
    lines = [line for line in lines if line.strip()]
    if not lines:
        raise ValidationError("Episode log is empty.")

    episodes: List[Bunch] = []
    try:
        for line in lines:
            record = json.loads(line)
            if record.get("kind") == "header":
                episode = Bunch()
                episode.log = EpisodeLog(
                    config=QueueConfig.from_dict(record["config"]),
                    seed=int(record["seed"]),
                    tag_names=tuple(record["tag_names"]),
                )
                episode.metadata = record.get("metadata", {})
                episodes.append(episode)
            elif record.get("kind") == "round" and episodes:
                episodes[-1].log.rounds.append(
                    RoundOutcome(
                        round_index=int(record["round"]),
                        survivors=_population(record["survivors"]),
                        terminals=_population(record["terminals"]),
                        reasons=np.asarray(record["reasons"], dtype=np.int64),
                        decisions=_decisions(record["decisions"]),
                        order=np.asarray(record["order"], dtype=np.int64),
                    )
                )
            else:
                raise ValidationError("Episode log must start with a header line.")
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as error:
        raise ValidationError(f"Malformed episode log: {error}") from error
    return episodes


def read_episode_log(source: Union[PathLike, IO[str]]) -> Bunch:
    """Parse a JSON-lines file holding exactly one episode log."""
    episodes = read_episode_logs(source)
    if len(episodes) != 1:
        raise ValidationError(f"Expected one episode, the file holds {len(episodes)}.")
    return episodes[0]


def _layers(weights: List[np.ndarray], biases: List[np.ndarray]) -> List[Dict[str, Any]]:
    return [
        {"shape": list(w.shape), "weights": w.ravel(order="C").tolist(), "bias": b.tolist()}
        for w, b in zip(weights, biases)
    ]


def _parse_layers(layers: List[Mapping[str, Any]]) -> Any:
    weights, biases = [], []
    for layer in layers:
        shape = tuple(int(size) for size in layer["shape"])
        weights.append(np.asarray(layer["weights"], dtype=np.float64).reshape(shape, order="C"))
        biases.append(np.asarray(layer["bias"], dtype=np.float64))
    return weights, biases


def checkpoint_dict(
    params: PolicyParams,
    hyper: Optional[Mapping[str, Any]] = None,
    iteration: int = 0,
    seed: int = 0,
) -> Dict[str, Any]:
    """Portable representation of a policy."""
    return {
        "format": CHECKPOINT_FORMAT,
        "version": FORMAT_VERSION,
        "iteration": int(iteration),
        "seed": int(seed),
        "hyperparams": dict(hyper or {}),
        "scaling": {"n": params.n_scale, "t": params.t_scale, "m": params.m_scale},
        "actor": _layers(params.actor_weights, params.actor_biases),
        "critic": _layers(params.critic_weights, params.critic_biases),
    }


def write_checkpoint(
    params: PolicyParams,
    path: PathLike,
    hyper: Optional[Mapping[str, Any]] = None,
    iteration: int = 0,
    seed: int = 0,
) -> Path:
    """Write a policy checkpoint; existing checkpoints are overwritten."""
    path = check_output(path, force=True)
    with open(path, "wt") as handle:
        json.dump(checkpoint_dict(params, hyper, iteration, seed), handle, sort_keys=True)
        handle.write("\n")
    logger.info("Wrote checkpoint %s (iteration %d).", path, iteration)
    return path


def read_checkpoint(path: PathLike) -> Bunch:
    """Read a policy checkpoint.

    :return: ``params``, ``hyperparams``, ``iteration`` and ``seed``
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"Checkpoint {path} does not exist.")
    try:
        with open(path, "rt") as handle:
            record = json.load(handle)
        if record.get("format") != CHECKPOINT_FORMAT:
            raise ValidationError(f"File {path} is not a policy checkpoint.")
        actor_weights, actor_biases = _parse_layers(record["actor"])
        critic_weights, critic_biases = _parse_layers(record["critic"])
        params = PolicyParams(
            actor_weights,
            actor_biases,
            critic_weights,
            critic_biases,
            n_scale=float(record["scaling"]["n"]),
            t_scale=float(record["scaling"]["t"]),
            m_scale=float(record["scaling"]["m"]),
        )
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as error:
        raise ValidationError(f"Malformed checkpoint {path}: {error}") from error

    checkpoint = Bunch()
    checkpoint.params = params
    checkpoint.hyperparams = record.get("hyperparams", {})
    checkpoint.iteration = int(record["iteration"])
    checkpoint.seed = int(record["seed"])
    return checkpoint


def table_text(table: pd.DataFrame, fmt: str = "csv") -> str:
    """Render ``table`` as CSV or as JSON records."""
    if fmt == "json":
        return table.to_json(orient="records", indent=2) + "\n"
    if fmt == "csv":
        buffer = io.StringIO()
        table.to_csv(buffer, index=False, lineterminator="\n")
        return buffer.getvalue()
    raise ValidationError(f"Unknown table format {fmt!r}, use csv or json.")


def write_table(
    table: pd.DataFrame,
    out: Optional[PathLike] = None,
    kind: Optional[str] = None,
    force: bool = False,
    fmt: Optional[str] = None,
) -> None:
    """Validate ``table`` against the schema of ``kind`` and write it.

    :param out: Output file; standard output when omitted or ``"-"``
    :param fmt: ``csv`` or ``json``; taken from the file suffix when omitted
    """
    table = validate_table(table, kind)
    if out is None or str(out) == "-":
        sys.stdout.write(table_text(table, fmt or "csv"))
        return
    path = check_output(out, force)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    with open(path, "wt") as handle:
        handle.write(table_text(table, fmt))


def write_json(
    record: Mapping[str, Any], out: Optional[PathLike] = None, force: bool = False
) -> None:
    """Write a report as JSON with sorted keys."""
    text = json.dumps(_plain(record), indent=2, sort_keys=True) + "\n"
    if out is None or str(out) == "-":
        sys.stdout.write(text)
        return
    with open(check_output(out, force), "wt") as handle:
        handle.write(text)


def _plain(value: Any) -> Any:
    """Convert numpy scalars, arrays and bunches into JSON types."""
    if isinstance(value, Mapping):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, "to_dict") and not isinstance(value, pd.DataFrame):
        return _plain(value.to_dict())
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return _plain(dataclasses.asdict(value))
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    return repr(value)
