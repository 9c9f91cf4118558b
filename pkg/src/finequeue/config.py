"""Game parameters and run configuration files."""

import dataclasses
import numbers
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from sklearn.utils.validation import check_scalar

from .exceptions import ValidationError

#: Sections accepted in a run configuration file.
CONFIG_SECTIONS = (
    "queue",
    "learner",
    "simulate",
    "analytic",
    "train",
    "nashconv",
    "sweep",
    "coalition",
)


@dataclasses.dataclass(frozen=True)
class QueueConfig:
    """Parameters of one Queue game.

    :param F: Fine; paying at least ``F`` in total settles the offence.
    :param Q: Cost of the legal process, charged to punished agents. Must
        exceed ``F``.
    :param T: Judiciary period; agents leave after ``T`` rounds.
    :param k: Number of agents punished in each round.
    :param p: Probability of ignorance; a declared payment is replaced by 0
        with this probability.
    :param x: Number of agents entering after each round.
    :param x0: Initial number of agents.
    :param w: Horizon, the number of rounds played.
    :param seed: Master seed of all random streams.
    :param burn_in: Rounds excluded from steady-state metrics. ``None``
        means ``2 * T``.

    .. rubric:: Examples

    >>> from finequeue import QueueConfig
    >>> config = QueueConfig()
    >>> config.max_queue
    160
    >>> config.replace(T=1).burn_in_rounds
    2

    """

    F: int = 4
    Q: int = 6
    T: int = 4
    k: int = 2
    p: float = 0.5
    x: int = 32
    x0: int = 32
    w: int = 64
    seed: int = 0
    burn_in: Optional[int] = None

    def __post_init__(self) -> None:
        """Validate parameters."""
        try:
            check_scalar(self.F, "F", numbers.Integral, min_val=1)
            check_scalar(
                self.Q, "Q", numbers.Integral, min_val=self.F, include_boundaries="neither"
            )
            check_scalar(self.T, "T", numbers.Integral, min_val=1)
            check_scalar(self.k, "k", numbers.Integral, min_val=1)
            check_scalar(self.p, "p", numbers.Real, min_val=0.0, max_val=1.0)
            check_scalar(self.x, "x", numbers.Integral, min_val=0)
            check_scalar(self.x0, "x0", numbers.Integral, min_val=0)
            check_scalar(self.w, "w", numbers.Integral, min_val=1)
            check_scalar(self.seed, "seed", numbers.Integral, min_val=0)
            if self.burn_in is not None:
                check_scalar(self.burn_in, "burn_in", numbers.Integral, min_val=0)
        except (TypeError, ValueError) as error:
            raise ValidationError(str(error)) from error

    @property
    def burn_in_rounds(self) -> int:
        """Rounds excluded from steady-state metrics."""
        return 2 * self.T if self.burn_in is None else self.burn_in

    @property
    def max_queue(self) -> int:
        """Upper bound on the queue length, ``x0 + x * T``."""
        return self.x0 + self.x * self.T

    def replace(self, **changes: Any) -> "QueueConfig":
        """Return a copy with ``changes`` applied (and validated)."""
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        """Return the parameters as a plain dictionary."""
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "QueueConfig":
        """Build a config from a dictionary, rejecting unknown keys."""
        known = {field.name for field in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValidationError(f"Unknown queue parameter(s): {', '.join(unknown)}.")
        return cls(**values)


def _expand_dotted(values: Dict[str, Any]) -> Dict[str, Any]:
    """Expand ``{"queue.p": 0.3}`` into ``{"queue": {"p": 0.3}}``."""
    expanded: Dict[str, Any] = {}
    for key, value in values.items():
        section, _, name = str(key).partition(".")
        if name:
            expanded.setdefault(section, {})
            if not isinstance(expanded[section], dict):
                raise ValidationError(f"Key {key} conflicts with a scalar value of {section}.")
            expanded[section][name] = value
        elif isinstance(value, dict):
            expanded.setdefault(section, {}).update(value)
        else:
            raise ValidationError(f"Key {key} must be inside one of the sections.")
    return expanded


def read_config_file(path: Union[str, Path]) -> Dict[str, Dict[str, Any]]:
    """Read a YAML run configuration.

    The file has one mapping per section (see :data:`CONFIG_SECTIONS`). Keys
    may also be written in dotted form, e.g. ``queue.p: 0.3``. Option names
    may use dashes or underscores.

    :param path: Path to the YAML file
    :return: Mapping of section name to its key-value pairs
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"Config file {path} does not exist or is not a file.")
    with open(path, "rt") as handle:
        raw = yaml.safe_load(handle) or {}
    if not isinstance(raw, dict):
        raise ValidationError(f"Config file {path} must contain a mapping.")

    sections = _expand_dotted(raw)
    unknown = sorted(set(sections) - set(CONFIG_SECTIONS))
    if unknown:
        raise ValidationError(f"Unknown config section(s) in {path}: {', '.join(unknown)}.")
    return {
        section: {str(key).replace("-", "_"): value for key, value in values.items()}
        for section, values in sections.items()
    }
