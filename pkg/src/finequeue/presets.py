"""Ready-made game configurations."""

from typing import Callable, Dict

from sklearn.utils import Bunch

from .config import QueueConfig
from .exceptions import ValidationError


def load_default_game() -> Bunch:
    """
    Load the reference game used in experiments.

    Fine 4, legal cost 6, judiciary period 4, two punished agents per round,
    ignorance 0.5, 32 initial and 32 entering agents per round.

    .. rubric:: Examples

    >>> from finequeue.presets import load_default_game
    >>> game = load_default_game()
    >>> game.config.F, game.config.Q, game.config.T
    (4, 6, 4)
    >>> game.strategies
    ['brs', 'crit1', 'uniform']

    """
    game = Bunch()
    game.config = QueueConfig()
    game.strategies = ["brs", "crit1", "uniform"]

    return game


def load_one_sorting(x0: int = 10, **params: object) -> Bunch:
    """
    Load the single-sorting game.

    One round (``w = T = 1``) with no entrants: every agent is sorted exactly
    once. Its unique equilibrium is the ``crit1`` strategy.

    .. rubric:: Examples

    >>> from finequeue.presets import load_one_sorting
    >>> game = load_one_sorting(x0=6)
    >>> game.config.w, game.config.x, game.config.x0
    (1, 0, 6)

    """
    game = Bunch()
    game.config = QueueConfig(T=1, w=1, x=0, x0=x0, **params)  # type: ignore[arg-type]
    game.strategies = ["crit1"]

    return game


def load_two_sorting(x0: int = 8, **params: object) -> Bunch:
    """
    Load the two-sorting game.

    Two rounds (``w = T = 2``) with no entrants. Its unique equilibrium is
    the ``crit2`` strategy.
    """
    game = Bunch()
    game.config = QueueConfig(T=2, w=2, x=0, x0=x0, **params)  # type: ignore[arg-type]
    game.strategies = ["crit2"]

    return game


#: Loader of every preset selectable with ``--preset``.
PRESETS: Dict[str, Callable[[], Bunch]] = {
    "default": load_default_game,
    "one-sorting": load_one_sorting,
    "two-sorting": load_two_sorting,
}


def load_preset(name: str) -> Bunch:
    """Load a preset by name."""
    if name not in PRESETS:
        raise ValidationError(f"Unknown preset {name!r}, choose from {', '.join(PRESETS)}.")
    return PRESETS[name]()
