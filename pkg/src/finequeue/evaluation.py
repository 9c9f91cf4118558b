"""Monte Carlo estimates and experiment sweeps.

Episode ``e`` of an estimate plays on the streams
``(*key, "episode", e, "play")`` and ``(*key, "episode", e, "tags")`` of the
master seed, so every estimate is reproducible from the configuration, the
seed and the number of episodes, whatever the number of workers.
"""

import dataclasses
import functools
import logging
import math
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.stats import spearmanr
from sklearn.utils import Bunch

from .analytic.oracle import MAX_W1_AGENTS, check_members, coalition_analysis, coalition_gain
from .config import QueueConfig
from .exceptions import ValidationError
from .game.core import EpisodeLog, revenue, run_queue
from .game.strategies import Profile, ProfileLike, PureStrategy, as_profile, as_profiles
from .streams import KeyPart, make_rng

logger = logging.getLogger(__name__)

#: Axes of the avalanche sweep.
AVALANCHE_AXES = ("p", "x")
#: Modes of the division sweep.
DIVISION_MODES = ("time", "group")
#: Ways of changing the judiciary period in the time division.
TIME_DIVISIONS = ("fixed_capacity", "fixed_k")

SWEEP_COLUMNS = [
    "sweep",
    "parameter",
    "value",
    "strategy",
    "revenue",
    "revenue_stderr",
    "per_round",
    "per_round_stderr",
    "per_period",
    "per_period_stderr",
    "episodes",
    "seed",
]


@dataclasses.dataclass(frozen=True)
class McEstimate:
    """Monte Carlo estimate of a mean.

    :param mean: Estimated mean
    :param stderr: Standard error of ``mean``
    :param episodes: Number of episodes played
    :param seed: Master seed
    """

    mean: float
    stderr: float
    episodes: int
    seed: int

    def __post_init__(self) -> None:
        """Validate the estimate."""
        if self.episodes < 1:
            raise ValidationError(f"An estimate needs at least one episode, got {self.episodes}.")
        if not self.stderr >= 0:
            raise ValidationError(f"Standard error must be non-negative, got {self.stderr}.")

    def to_dict(self) -> Dict[str, Any]:
        """Return the estimate as a plain dictionary."""
        return dataclasses.asdict(self)

    @classmethod
    def from_samples(cls, samples: Sequence[float], seed: int) -> "McEstimate":
        """Mean of per-episode samples."""
        values = np.asarray(samples, dtype=np.float64)
        stderr = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
        return cls(math.fsum(values) / len(values), stderr, len(values), seed)

    @classmethod
    def from_ratio(cls, sums: Sequence[float], counts: Sequence[float], seed: int) -> "McEstimate":
        """Ratio of per-episode sums to per-episode counts.

        The standard error follows the delta method. An empty denominator
        gives a zero estimate.
        """
        sums = np.asarray(sums, dtype=np.float64)
        counts = np.asarray(counts, dtype=np.float64)
        total = math.fsum(counts)
        if total == 0:
            return cls(0.0, 0.0, len(sums), seed)
        ratio = math.fsum(sums) / total
        if len(sums) < 2:
            return cls(ratio, 0.0, len(sums), seed)
        residuals = sums - ratio * counts
        variance = np.sum(residuals**2) / (len(sums) * (len(sums) - 1))
        return cls(ratio, float(np.sqrt(variance) / counts.mean()), len(sums), seed)


def _check_episodes(episodes: int) -> None:
    if episodes < 1:
        raise ValidationError(f"Number of episodes must be at least 1, got {episodes}.")


def play_episode(
    config: QueueConfig,
    profile: Profile,
    seed: int,
    episode: int,
    key: Sequence[KeyPart] = (),
    group: Optional[int] = None,
) -> EpisodeLog:
    """Play episode ``episode`` on its own streams.

    :param group: Index of a split queue; group 0 shares the streams of the
        unsplit queue
    """
    sub: Tuple[KeyPart, ...] = (episode,) if not group else (episode, group)
    return run_queue(
        config,
        profile,
        rng=make_rng(seed, *key, "episode", *sub, "play"),
        tag_rng=make_rng(seed, *key, "episode", *sub, "tags"),
        seed=seed,
    )


def map_episodes(
    func: Callable[[int], Any], episodes: int, n_jobs: Optional[int] = None
) -> List[Any]:
    """Evaluate ``func`` on every episode index, in order."""
    _check_episodes(episodes)
    if n_jobs is None or n_jobs == 1:
        return [func(episode) for episode in range(episodes)]
    return Parallel(n_jobs=n_jobs)(delayed(func)(episode) for episode in range(episodes))


def _utility_stats(
    config: QueueConfig, profile: Profile, seed: int, tag: Optional[str], episode: int
) -> Tuple[float, int]:
    terminals, _ = play_episode(config, profile, seed, episode).terminals()
    selected = np.ones(len(terminals), dtype=bool)
    if tag is not None:
        selected = terminals.tags == profile.tags.index(tag)
    return -float(terminals.m[selected].sum()), int(selected.sum())


def expected_utility(
    profile: ProfileLike,
    config: QueueConfig,
    episodes: int,
    seed: Optional[int] = None,
    tag: Optional[str] = None,
    n_jobs: Optional[int] = None,
) -> McEstimate:
    """Mean utility of terminal agents.

    :param profile: Strategy profile or strategy name
    :param tag: Only count agents with this strategy tag
    :param n_jobs: Number of parallel workers

    .. rubric:: Examples

    >>> from finequeue import QueueConfig
    >>> from finequeue.evaluation import expected_utility
    >>> config = QueueConfig(p=0.0, x0=8, x=4, w=4)
    >>> expected_utility("pure:4", config, episodes=3)
    McEstimate(mean=-4.0, stderr=0.0, episodes=3, seed=0)

    """
    profile = as_profile(profile)
    seed = config.seed if seed is None else seed
    if tag is not None and tag not in profile.tags:
        raise ValidationError(f"Unknown strategy tag {tag!r}, profile has {list(profile.tags)}.")
    stats = map_episodes(
        functools.partial(_utility_stats, config, profile, seed, tag), episodes, n_jobs
    )
    sums, counts = zip(*stats)
    return McEstimate.from_ratio(sums, counts, seed)


def _position_payments(
    config: QueueConfig, profile: Profile, seed: int, episode: int
) -> np.ndarray:
    terminals, _ = play_episode(config, profile, seed, episode).terminals()
    payments = np.zeros(config.x0)
    initial = terminals.ids < config.x0
    payments[terminals.ids[initial]] = terminals.m[initial]
    return payments


def position_utilities(
    profile: ProfileLike,
    config: QueueConfig,
    episodes: int,
    seed: Optional[int] = None,
    n_jobs: Optional[int] = None,
) -> pd.DataFrame:
    """Mean utility of the initial agents by their starting position."""
    profile = as_profile(profile)
    seed = config.seed if seed is None else seed
    payments = np.vstack(
        map_episodes(
            functools.partial(_position_payments, config, profile, seed), episodes, n_jobs
        )
    )
    stderr = payments.std(axis=0, ddof=1) / np.sqrt(episodes) if episodes > 1 else 0.0
    return pd.DataFrame(
        {
            "position": np.arange(1, config.x0 + 1),
            "utility": -payments.mean(axis=0),
            "stderr": stderr * np.ones(config.x0),
            "episodes": episodes,
        }
    )


def _revenue_stats(
    config: QueueConfig, profile: Profile, seed: int, steady_state: bool, groups: int, episode: int
) -> Tuple[float, float]:
    total, per_round = 0.0, 0.0
    for group in range(groups):
        log = play_episode(config, profile, seed, episode, group=group)
        group_total, group_per_round = revenue(log, steady_state=steady_state)
        total += group_total
        per_round += group_per_round
    return total, per_round


def total_revenue(
    profile: ProfileLike,
    config: QueueConfig,
    episodes: int,
    seed: Optional[int] = None,
    steady_state: bool = False,
    groups: int = 1,
    n_jobs: Optional[int] = None,
) -> Bunch:
    """Expected total payment of terminal agents.

    :param steady_state: Count only agents that entered after the burn-in
    :param groups: Play this many independent copies of ``config`` per
        episode and add up their revenues
    :return: ``total`` and ``per_round`` estimates
    """
    profile = as_profile(profile)
    seed = config.seed if seed is None else seed
    stats = map_episodes(
        functools.partial(_revenue_stats, config, profile, seed, steady_state, groups),
        episodes,
        n_jobs,
    )
    totals, per_round = zip(*stats)
    result = Bunch()
    result.total = McEstimate.from_samples(totals, seed)
    result.per_round = McEstimate.from_samples(per_round, seed)
    return result


def _check_rho(rho: float) -> None:
    if not 0.0 < rho < 1.0:
        raise ValidationError(f"Fraction of deviating agents must be in (0, 1), got {rho}.")


def _paired_gain(
    config: QueueConfig,
    mixed: Profile,
    baseline: Profile,
    seed: int,
    key: Tuple[KeyPart, ...],
    episode: int,
) -> Tuple[float, int]:
    new_terminals, _ = play_episode(config, mixed, seed, episode, key).terminals()
    old_terminals, _ = play_episode(config, baseline, seed, episode, key).terminals()
    old_utility = np.zeros(len(old_terminals))
    old_utility[old_terminals.ids] = -old_terminals.m
    is_new = new_terminals.tags == mixed.tags.index("new")
    ids = new_terminals.ids[is_new]
    gain = -new_terminals.m[is_new] - old_utility[ids]
    return float(gain.sum()), int(is_new.sum())


def _tag_utility(
    config: QueueConfig,
    profile: Profile,
    seed: int,
    key: Tuple[KeyPart, ...],
    tag: str,
    episode: int,
) -> Tuple[float, int]:
    terminals, _ = play_episode(config, profile, seed, episode, key).terminals()
    selected = terminals.tags == profile.tags.index(tag)
    return -float(terminals.m[selected].sum()), int(selected.sum())


def nashconv(
    old: ProfileLike,
    new: ProfileLike,
    rho: float,
    config: QueueConfig,
    episodes: int,
    seed: Optional[int] = None,
    key: Sequence[KeyPart] = ("nashconv",),
    paired: bool = True,
    n_jobs: Optional[int] = None,
) -> McEstimate:
    """Utility gain of agents switching from ``old`` to ``new``.

    Every entering agent follows ``new`` with probability ``rho`` and ``old``
    otherwise. The estimate is the mean utility of the agents following
    ``new`` minus the mean utility in a queue where everyone follows ``old``.

    :param old: Strategy of the population (a strategy or its name)
    :param new: Strategy of the deviators
    :param paired: Play the baseline on the same streams and compare every
        deviator with the same agent in the baseline; otherwise the two
        means are estimated on independent streams
    """
    _check_rho(rho)
    seed = config.seed if seed is None else seed
    key = tuple(key)
    old_strategy = as_profile(old).strategies[0]
    new_strategy = as_profile(new).strategies[0]
    mixed = Profile({"old": old_strategy, "new": new_strategy}, {"old": 1 - rho, "new": rho})
    baseline = Profile({"old": old_strategy, "new": new_strategy}, {"old": 1.0})

    if paired:
        stats = map_episodes(
            functools.partial(_paired_gain, config, mixed, baseline, seed, key), episodes, n_jobs
        )
        sums, counts = zip(*stats)
        if sum(counts) == 0:
            logger.warning("No agent followed the new strategy in %d episodes.", episodes)
        return McEstimate.from_ratio(sums, counts, seed)

    deviators = map_episodes(
        functools.partial(_tag_utility, config, mixed, seed, key, "new"), episodes, n_jobs
    )
    population = map_episodes(
        functools.partial(_tag_utility, config, baseline, seed, (*key, "baseline"), "old"),
        episodes,
        n_jobs,
    )
    first = McEstimate.from_ratio(*zip(*deviators), seed)
    second = McEstimate.from_ratio(*zip(*population), seed)
    return McEstimate(
        first.mean - second.mean, math.hypot(first.stderr, second.stderr), episodes, seed
    )


def _sweep_rows(
    sweep: str,
    parameter: str,
    value: float,
    config: QueueConfig,
    profiles: Dict[str, Profile],
    episodes: int,
    seed: int,
    steady_state: bool,
    groups: int = 1,
    n_jobs: Optional[int] = None,
) -> List[Dict[str, Any]]:
    rows = []
    for name, profile in profiles.items():
        estimate = total_revenue(profile, config, episodes, seed, steady_state, groups, n_jobs)
        rows.append(
            {
                "sweep": sweep,
                "parameter": parameter,
                "value": float(value),
                "strategy": name,
                "revenue": estimate.total.mean,
                "revenue_stderr": estimate.total.stderr,
                "per_round": estimate.per_round.mean,
                "per_round_stderr": estimate.per_round.stderr,
                "per_period": estimate.per_round.mean * config.T,
                "per_period_stderr": estimate.per_round.stderr * config.T,
                "episodes": episodes,
                "seed": seed,
            }
        )
        logger.info(
            "%s %s=%s %s: revenue %.4g +/- %.2g",
            sweep,
            parameter,
            value,
            name,
            estimate.total.mean,
            estimate.total.stderr,
        )
    return rows


def _check_grid(grid: Sequence[float]) -> None:
    if len(grid) == 0:
        raise ValidationError("Sweep grid must not be empty.")


def avalanche_sweep(
    config: QueueConfig,
    axis: str,
    grid: Sequence[float],
    profiles: Union[Sequence[str], Dict[str, ProfileLike]],
    episodes: int,
    seed: Optional[int] = None,
    steady_state: bool = False,
    n_jobs: Optional[int] = None,
) -> pd.DataFrame:
    """Revenue as the probability of ignorance or the inflow changes.

    :param axis: ``"p"`` or ``"x"``
    :param grid: Values of ``axis``
    :param profiles: Strategy names or named profiles
    :return: One row per grid value and profile
    """
    if axis not in AVALANCHE_AXES:
        raise ValidationError(f"Avalanche axis must be one of {AVALANCHE_AXES}, got {axis!r}.")
    _check_grid(grid)
    profiles = as_profiles(profiles)
    seed = config.seed if seed is None else seed
    rows = []
    for value in grid:
        point = config.replace(**{axis: int(value) if axis == "x" else float(value)})
        rows.extend(
            _sweep_rows(
                "avalanche",
                axis,
                value,
                point,
                profiles,
                episodes,
                seed,
                steady_state,
                n_jobs=n_jobs,
            )
        )
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def trend(sweep: pd.DataFrame, column: str = "revenue") -> pd.DataFrame:
    """Spearman rank correlation between the swept value and ``column``, per strategy.

    Single-point sweeps have an undefined correlation (NaN).
    """
    rows = []
    for (parameter, strategy), group in sweep.groupby(["parameter", "strategy"], sort=False):
        if group["value"].nunique() < 2 or group[column].nunique() < 2:
            correlation, pvalue = float("nan"), float("nan")
        else:
            correlation, pvalue = spearmanr(group["value"], group[column])
        rows.append(
            {
                "parameter": parameter,
                "strategy": strategy,
                "spearman": float(correlation),
                "pvalue": float(pvalue),
                "points": len(group),
            }
        )
    return pd.DataFrame(rows, columns=["parameter", "strategy", "spearman", "pvalue", "points"])


def _divide(value: int, by: int, name: str) -> int:
    if value % by:
        raise ValidationError(f"{name}={value} is not divisible by {by}.")
    return value // by


def time_division(config: QueueConfig, T: int, capacity: str = "fixed_capacity") -> QueueConfig:
    """Game with judiciary period ``T``.

    With ``fixed_capacity`` the number of punishments per judiciary period
    ``k * T``, the inflow per period and the horizon in periods stay fixed:
    ``k``, ``x`` and ``w`` are rescaled by ``T / config.T``. With ``fixed_k``
    only ``T`` changes.

    .. rubric:: Examples

    >>> from finequeue import QueueConfig
    >>> from finequeue.evaluation import time_division
    >>> game = time_division(QueueConfig(), T=1)
    >>> game.k, game.x, game.w
    (8, 128, 16)

    """
    if capacity not in TIME_DIVISIONS:
        raise ValidationError(f"Time division must be one of {TIME_DIVISIONS}, got {capacity!r}.")
    if T < 1:
        raise ValidationError(f"Judiciary period must be at least 1, got {T}.")
    if capacity == "fixed_k":
        return config.replace(T=T)
    return config.replace(
        T=T,
        k=_divide(config.k * config.T, T, "k*T"),
        x=_divide(config.x * config.T, T, "x*T"),
        w=_divide(config.w * T, config.T, "w*T"),
    )


def group_division(config: QueueConfig, g: int) -> QueueConfig:
    """One of ``g`` equal queues sharing the inflow, population and punishments."""
    if g < 1:
        raise ValidationError(f"Number of groups must be at least 1, got {g}.")
    return config.replace(
        x=_divide(config.x, g, "x"), x0=_divide(config.x0, g, "x0"), k=_divide(config.k, g, "k")
    )


def division_sweep(
    config: QueueConfig,
    mode: str,
    grid: Sequence[int],
    profiles: Union[Sequence[str], Dict[str, ProfileLike]],
    episodes: int,
    seed: Optional[int] = None,
    capacity: str = "fixed_capacity",
    steady_state: bool = True,
    n_jobs: Optional[int] = None,
) -> pd.DataFrame:
    """Revenue when sorting more often or splitting the queue.

    In ``time`` mode the grid holds judiciary periods (see
    :func:`time_division`); in ``group`` mode it holds numbers of groups,
    whose revenues are added up.

    :param capacity: ``fixed_capacity`` or ``fixed_k``, time mode only
    :param steady_state: Exclude agents entering during the burn-in
    """
    if mode not in DIVISION_MODES:
        raise ValidationError(f"Division mode must be one of {DIVISION_MODES}, got {mode!r}.")
    _check_grid(grid)
    profiles = as_profiles(profiles)
    seed = config.seed if seed is None else seed

    # Validate the whole grid before playing anything.
    if mode == "time":
        points = [(int(T), time_division(config, int(T), capacity), 1) for T in grid]
    else:
        points = [(int(g), group_division(config, int(g)), int(g)) for g in grid]

    rows = []
    parameter = "T" if mode == "time" else "g"
    for value, point, groups in points:
        rows.extend(
            _sweep_rows(
                f"division-{mode}",
                parameter,
                value,
                point,
                profiles,
                episodes,
                seed,
                steady_state,
                groups,
                n_jobs,
            )
        )
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def _coalition_episode(
    config: QueueConfig, profile: Profile, seed: int, members: Tuple[int, ...], episode: int
) -> Bunch:
    terminals, _ = play_episode(config, profile, seed, episode, ("coalition",)).terminals()
    is_member = np.isin(terminals.ids, members)
    return coalition_gain(terminals.m[is_member].tolist(), config.F, config.Q, config.p)


def coalition_check(
    config: QueueConfig,
    coalition_size: int,
    episodes: int,
    seed: Optional[int] = None,
    members: Optional[Sequence[int]] = None,
    others: ProfileLike = "crit1",
    exact: Optional[bool] = None,
    n_jobs: Optional[int] = None,
) -> Bunch:
    """Shared cost of a cost-sharing coalition and the gain of its deviator.

    Members at positions ``members`` (the front of the queue by default) pay
    nothing and share their total payment; the other agents follow
    ``others``. One-round games with at most
    :data:`~finequeue.analytic.oracle.MAX_W1_AGENTS` agents against the
    critical strategy are solved exactly, anything else by simulation.

    :param exact: Force or forbid exact enumeration
    :return: Report with the mean shared cost, mean deviation gain, the
        probability of a positive shared cost, the smallest gain when it is
        positive and the number of realisations violating ``gain > 0``
    """
    positions = check_members(config, coalition_size, members)
    seed = config.seed if seed is None else seed
    small = config.w == 1 and config.x == 0 and config.x0 <= MAX_W1_AGENTS
    if exact is None:
        exact = small and others == "crit1"
    if exact:
        report = coalition_analysis(config, coalition_size, positions)
        report.episodes = 0
        return report

    profile = as_profile(others)
    profile = Profile(
        {"others": profile.strategies[0], "coalition": PureStrategy(0)},
        {"others": 1.0},
        {n - 1: "coalition" for n in positions},
    )
    outcomes = map_episodes(
        functools.partial(
            _coalition_episode, config, profile, seed, tuple(n - 1 for n in positions)
        ),
        episodes,
        n_jobs,
    )
    positive = [outcome.gain for outcome in outcomes if outcome.shared_cost > 0]

    report = Bunch()
    report.method = "monte_carlo"
    report.coalition_size = coalition_size
    report.members = positions
    report.shared_cost = math.fsum(outcome.shared_cost for outcome in outcomes) / episodes
    report.best_deviation_gain = math.fsum(outcome.gain for outcome in outcomes) / episodes
    report.probability_positive = len(positive) / episodes
    report.min_gain_when_positive = min(positive) if positive else None
    report.violations = sum(gain <= 0 for gain in positive)
    report.episodes = episodes
    return report
