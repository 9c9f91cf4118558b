"""Round and Queue.

One round has three phases:

    - Every agent declares a distribution over payments ``0..F`` and a payment
      is sampled from it. With probability ``p`` the agent forgets and pays 0.
    - Payments are added to ``m``, ``t`` is increased and the queue is
      stably sorted by the average payment ``m / t``.
    - Agents are removed: first everyone with ``m >= F`` (paid the fine),
      then the first ``k`` agents are punished (``m += Q``), then everyone
      with ``t >= T`` (the offence expired).

A queue starts with ``x0`` agents, plays ``w`` rounds and appends ``x`` fresh
agents to its end after every round but the last. After the last round all
remaining agents terminate. The utility of a terminal agent is ``-m``.

The queue is stored as a struct of arrays (:class:`Population`) ordered by
position, so one round costs a handful of vectorised numpy operations.
"""

import dataclasses
import enum
import logging
import math
from fractions import Fraction
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import QueueConfig
from ..exceptions import InvariantError, ValidationError
from ..streams import make_rng
from ..typing import Bool1D, Float1D, Float2D, Int1D

if TYPE_CHECKING:  # pragma: no cover
    from .strategies import Profile

logger = logging.getLogger(__name__)

#: Tolerance on the sum of an action distribution.
PROB_ATOL = 1e-9
#: Marker of an absent previous position.
NO_POSITION = -1


class Termination(enum.IntEnum):
    """Reason an agent left the queue."""

    PAID_FINE = 0
    PUNISHED = 1
    EXPIRED = 2
    HORIZON = 3

    @property
    def label(self) -> str:
        """Lower case name used in logs and tables."""
        return self.name.lower()


def check_probabilities(probs: Union[Float1D, Float2D, Sequence[float]]) -> Float2D:
    """Validate one distribution or a matrix of distributions (one per row).

    :param probs: Probabilities over payments ``0..F``
    :return: 2D float array
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if probs.ndim != 2 or probs.shape[1] < 1:
        raise ValidationError(f"Action distribution must be a vector, got shape {probs.shape}.")
    if not np.all(np.isfinite(probs)):
        raise ValidationError("Action distribution contains non-finite values.")
    if np.any(probs < 0):
        raise ValidationError("Action distribution contains negative probabilities.")
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > PROB_ATOL):
        raise ValidationError(f"Action distribution must sum to 1, got {sums.min()}.")
    return probs


@dataclasses.dataclass(frozen=True, eq=False)
class ActionDistribution:
    """Probabilities of paying ``0..F``."""

    probs: Float1D

    def __post_init__(self) -> None:
        """Validate probabilities."""
        object.__setattr__(self, "probs", check_probabilities(self.probs)[0])

    @property
    def F(self) -> int:
        """Largest payment."""
        return len(self.probs) - 1

    @classmethod
    def pure(cls, nu: int, F: int) -> "ActionDistribution":
        """Distribution of the pure strategy of paying ``nu``."""
        if not 0 <= nu <= F:
            raise ValidationError(f"Payment {nu} is outside of [0, {F}].")
        probs = np.zeros(F + 1)
        probs[nu] = 1.0
        return cls(probs)


@dataclasses.dataclass(frozen=True)
class Observation:
    """What an agent sees when declaring: position, rounds played, amount paid."""

    n: int
    t: int
    m: int


@dataclasses.dataclass(frozen=True)
class AgentState:
    """One offender in the queue."""

    id: int
    n: int
    t: int
    m: int
    strategy_tag: str


@dataclasses.dataclass(eq=False)
class Observations:
    """Observations of a group of agents, plus their strategy memory."""

    n: Int1D
    t: Int1D
    m: Int1D
    omega: Int1D
    prev_n: Int1D

    def __len__(self) -> int:
        """Number of agents."""
        return len(self.n)

    def select(self, mask: Union[Bool1D, Int1D]) -> "Observations":
        """Return the observations of selected agents."""
        return Observations(
            self.n[mask], self.t[mask], self.m[mask], self.omega[mask], self.prev_n[mask]
        )

    @classmethod
    def single(
        cls, obs: Observation, omega: int = 0, prev_n: Optional[int] = None
    ) -> "Observations":
        """Wrap a single observation."""
        return cls(
            n=np.array([obs.n], dtype=np.int64),
            t=np.array([obs.t], dtype=np.int64),
            m=np.array([obs.m], dtype=np.int64),
            omega=np.array([omega], dtype=np.int64),
            prev_n=np.array([NO_POSITION if prev_n is None else prev_n], dtype=np.int64),
        )


_INT_FIELDS = ("ids", "t", "m", "tags", "omega", "prev_n", "entry_round")


@dataclasses.dataclass(eq=False)
class Population:
    """Agents of a queue, ordered by position.

    :param ids: Unique agent tokens
    :param t: Rounds played
    :param m: Total paid
    :param tags: Index of the agent's strategy in the profile
    :param omega: Willingness to pay (used by the basic rational strategy)
    :param prev_n: Position at the previous declaration or ``NO_POSITION``
    :param entry_round: First round the agent plays (1-based)
    """

    ids: Int1D
    t: Int1D
    m: Int1D
    tags: Int1D
    omega: Int1D
    prev_n: Int1D
    entry_round: Int1D

    def __len__(self) -> int:
        """Number of agents."""
        return len(self.ids)

    @classmethod
    def empty(cls) -> "Population":
        """Population with no agents."""
        return cls(*(np.zeros(0, dtype=np.int64) for _ in _INT_FIELDS))

    @classmethod
    def fresh(cls, ids: Int1D, tags: Int1D, entry_round: int) -> "Population":
        """Agents entering the queue with ``t = m = 0``."""
        size = len(ids)
        zeros = np.zeros(size, dtype=np.int64)
        return cls(
            ids=np.asarray(ids, dtype=np.int64),
            t=zeros.copy(),
            m=zeros.copy(),
            tags=np.asarray(tags, dtype=np.int64),
            omega=zeros.copy(),
            prev_n=np.full(size, NO_POSITION, dtype=np.int64),
            entry_round=np.full(size, entry_round, dtype=np.int64),
        )

    def take(self, index: Union[Bool1D, Int1D]) -> "Population":
        """Return the agents selected by a mask or an index array, in that order."""
        return Population(*(getattr(self, name)[index] for name in _INT_FIELDS))

    def concat(self, other: "Population") -> "Population":
        """Append ``other`` to the end of the queue."""
        return Population(
            *(np.concatenate([getattr(self, name), getattr(other, name)]) for name in _INT_FIELDS)
        )

    @property
    def positions(self) -> Int1D:
        """Positions ``1..len``."""
        return np.arange(1, len(self) + 1, dtype=np.int64)

    def observations(self) -> Observations:
        """Observations of all agents at their current positions."""
        return Observations(self.positions, self.t, self.m, self.omega, self.prev_n)

    def agents(self, tag_names: Sequence[str]) -> List[AgentState]:
        """Return the agents as :class:`AgentState` records."""
        return [
            AgentState(int(i), n, int(t), int(m), tag_names[tag])
            for n, (i, t, m, tag) in enumerate(zip(self.ids, self.t, self.m, self.tags), start=1)
        ]


@dataclasses.dataclass(eq=False)
class Decisions:
    """Per-agent record of phase 1, in queue order at declaration."""

    ids: Int1D
    n: Int1D
    t: Int1D
    m: Int1D
    tags: Int1D
    declared: Int1D
    paid: Int1D
    declared_prob: Float1D


@dataclasses.dataclass(eq=False)
class RoundOutcome:
    """Result of one round.

    ``terminals`` lists the removed agents (with their final ``m``) in removal
    order and ``reasons`` the matching :class:`Termination` codes.
    """

    round_index: int
    survivors: Population
    terminals: Population
    reasons: Int1D
    decisions: Decisions
    order: Int1D

    @property
    def utilities(self) -> Int1D:
        """Utilities of the terminal agents."""
        return -self.terminals.m

    @property
    def payments(self) -> Dict[int, int]:
        """Map of agent id to the amount paid this round."""
        return {int(i): int(mu) for i, mu in zip(self.decisions.ids, self.decisions.paid)}

    @property
    def revenue(self) -> int:
        """Total paid by agents terminating in this round."""
        return int(self.terminals.m.sum())

    def terminal_agents(
        self, tag_names: Sequence[str]
    ) -> List[Tuple[AgentState, int, Termination]]:
        """Return ``(agent, utility, reason)`` for every terminal agent.

        Positions of terminal agents refer to the sorted order of phase 2.
        """
        agents = self.terminals.agents(tag_names)
        return [
            (agent, -agent.m, Termination(int(reason)))
            for agent, reason in zip(agents, self.reasons)
        ]


@dataclasses.dataclass(eq=False)
class EpisodeLog:
    """Everything that happened in one queue."""

    config: QueueConfig
    seed: int
    tag_names: Tuple[str, ...]
    rounds: List[RoundOutcome] = dataclasses.field(default_factory=list)

    @property
    def revenues(self) -> List[int]:
        """Revenue of each round."""
        return [outcome.revenue for outcome in self.rounds]

    def terminals(self) -> Tuple[Population, Int1D]:
        """All terminal agents of the episode and their termination reasons."""
        if not self.rounds:
            return Population.empty(), np.zeros(0, dtype=np.int64)
        terminals = Population.empty()
        for outcome in self.rounds:
            terminals = terminals.concat(outcome.terminals)
        reasons = np.concatenate([outcome.reasons for outcome in self.rounds])
        return terminals, reasons

    def decisions(self) -> Tuple[Decisions, Int1D]:
        """All decisions of the episode and the round each was made in."""
        if not self.rounds:
            empty = np.zeros(0, dtype=np.int64)
            return Decisions(*(empty for _ in range(7)), np.zeros(0)), empty
        fields = [f.name for f in dataclasses.fields(Decisions)]
        merged = Decisions(
            *(np.concatenate([getattr(r.decisions, name) for r in self.rounds]) for name in fields)
        )
        rounds = np.concatenate(
            [np.full(len(r.decisions.ids), r.round_index, dtype=np.int64) for r in self.rounds]
        )
        return merged, rounds


def sample_payments(probs: Float2D, p: float, rng: np.random.Generator) -> Tuple[Int1D, Int1D]:
    """Sample payments of many agents at once.

    Every agent consumes exactly two uniforms: the first decides ignorance,
    the second selects the declared payment by inverse CDF. Actions with zero
    probability are never selected.

    :param probs: Declared distributions, one row per agent
    :param p: Probability of ignorance
    :param rng: Random generator
    :return: Declared payments and actually paid amounts
    """
    probs = check_probabilities(probs) if len(probs) else np.zeros((0, 1))
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"Probability of ignorance must be in [0, 1], got {p}.")
    size = probs.shape[0]
    uniforms = rng.random((size, 2))
    cdf = np.cumsum(probs, axis=1)
    declared = np.sum(cdf <= uniforms[:, 1:2], axis=1)
    # Rounding of the CDF could push the draw past the last supported action.
    last_supported = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    declared = np.minimum(declared, last_supported).astype(np.int64)
    paid = np.where(uniforms[:, 0] < p, 0, declared).astype(np.int64)
    return declared, paid


def sample_payment(
    dist: Union[ActionDistribution, Float1D, Sequence[float]], p: float, rng: np.random.Generator
) -> int:
    """Sample one payment from ``p * sigma^0 + (1 - p) * dist``.

    .. rubric:: Examples

    >>> import numpy as np
    >>> from finequeue.game.core import sample_payment
    >>> sample_payment([0, 0, 0, 0, 1], p=0.0, rng=np.random.default_rng(0))
    4
    >>> sample_payment([0, 0, 0, 0, 1], p=1.0, rng=np.random.default_rng(0))
    0

    """
    probs = dist.probs if isinstance(dist, ActionDistribution) else np.asarray(dist, dtype=float)
    _, paid = sample_payments(probs[np.newaxis, :], p, rng)
    return int(paid[0])


def ratio_order(m: Int1D, t: Int1D) -> Int1D:
    """Return the stable ascending order of ``m / t`` in exact arithmetic.

    Ratios are compared through the integer key ``m * (L / t)`` where ``L`` is
    the least common multiple of all ``t``.
    """
    m = np.asarray(m, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    if np.any(t < 1):
        raise InvariantError("Agents can only be sorted after they played at least one round.")
    if len(t) == 0:
        return np.zeros(0, dtype=np.int64)
    lcm = math.lcm(*(int(value) for value in np.unique(t)))
    if lcm * max(int(m.max()), 1) < 2**62:
        keys = m * (lcm // t)
        return np.argsort(keys, kind="stable").astype(np.int64)
    fractions = [Fraction(int(a), int(b)) for a, b in zip(m, t)]
    return np.array(sorted(range(len(m)), key=fractions.__getitem__), dtype=np.int64)


def stable_sort_by_ratio(agents: Sequence[AgentState]) -> List[AgentState]:
    """Sort agents ascending by ``m / t``, keeping the input order on ties.

    Positions are renumbered ``1..len``.

    .. rubric:: Examples

    >>> from finequeue.game.core import AgentState, stable_sort_by_ratio
    >>> agents = [AgentState(i, i + 1, 2, m, "a") for i, m in enumerate([1, 1, 0])]
    >>> [agent.id for agent in stable_sort_by_ratio(agents)]
    [2, 0, 1]

    """
    order = ratio_order(
        np.array([agent.m for agent in agents], dtype=np.int64),
        np.array([agent.t for agent in agents], dtype=np.int64),
    )
    return [
        dataclasses.replace(agents[index], n=position)
        for position, index in enumerate(order, start=1)
    ]


def declare(
    population: Population, profile: "Profile", config: QueueConfig
) -> Tuple[Float2D, Int1D]:
    """Collect declared distributions and updated strategy memory of all agents."""
    obs = population.observations()
    probs = np.zeros((len(population), config.F + 1))
    omega = population.omega.copy()
    for code, strategy in enumerate(profile.strategies):
        selected = population.tags == code
        if not np.any(selected):
            continue
        probs[selected], omega[selected] = strategy.act(obs.select(selected), config)
    return probs, omega


def play_round(
    population: Population,
    profile: "Profile",
    config: QueueConfig,
    rng: np.random.Generator,
    round_index: int = 1,
) -> RoundOutcome:
    """Play one round.

    :param population: Agents ordered by position
    :param profile: Strategies, indexed by the agents' tags
    :param config: Game parameters
    :param rng: Random generator of the play stream
    :param round_index: 1-based index of the round, only recorded
    :return: Survivors, terminal agents and the per-agent record of the round
    """
    # Phase 1: declare and sample
    probs, omega = declare(population, profile, config)
    declared, paid = sample_payments(probs, config.p, rng)
    decisions = Decisions(
        ids=population.ids,
        n=population.positions,
        t=population.t,
        m=population.m,
        tags=population.tags,
        declared=declared,
        paid=paid,
        declared_prob=probs[np.arange(len(population)), declared],
    )

    # Phase 2: update and sort
    updated = Population(
        ids=population.ids,
        t=population.t + 1,
        m=population.m + paid,
        tags=population.tags,
        omega=omega,
        prev_n=population.positions,
        entry_round=population.entry_round,
    )
    order = ratio_order(updated.m, updated.t)
    updated = updated.take(order)

    # Phase 3a: paid the fine
    settled = updated.m >= config.F
    paid_fine = updated.take(settled)
    remaining = updated.take(~settled)

    # Phase 3b: punish the first k
    n_punished = min(config.k, len(remaining))
    punished = remaining.take(np.arange(n_punished))
    punished.m = punished.m + config.Q
    remaining = remaining.take(np.arange(n_punished, len(remaining)))

    # Phase 3c: expired
    expired_mask = remaining.t >= config.T
    expired = remaining.take(expired_mask)
    survivors = remaining.take(~expired_mask)

    terminals = paid_fine.concat(punished).concat(expired)
    reasons = np.concatenate(
        [
            np.full(len(paid_fine), Termination.PAID_FINE, dtype=np.int64),
            np.full(len(punished), Termination.PUNISHED, dtype=np.int64),
            np.full(len(expired), Termination.EXPIRED, dtype=np.int64),
        ]
    )
    if np.any(survivors.m >= config.F) or np.any(survivors.t >= config.T):
        raise InvariantError("A survivor has paid the fine or exceeded the judiciary period.")

    return RoundOutcome(
        round_index=round_index,
        survivors=survivors,
        terminals=terminals,
        reasons=reasons,
        decisions=decisions,
        order=order,
    )


def run_queue(
    config: QueueConfig,
    profile: "Profile",
    rng: Optional[np.random.Generator] = None,
    tag_rng: Optional[np.random.Generator] = None,
    seed: Optional[int] = None,
) -> EpisodeLog:
    """Play a whole queue.

    :param config: Game parameters
    :param profile: Strategy assignment of entering agents
    :param rng: Generator of the play stream; defaults to episode 0 of
        ``config.seed``
    :param tag_rng: Generator used to assign strategies to entering agents;
        kept apart from ``rng`` so that two profiles can be compared on the
        same play stream
    :param seed: Seed recorded in the log; defaults to ``config.seed``
    :return: Log of every round
    """
    seed = config.seed if seed is None else seed
    if rng is None:
        rng = make_rng(seed, "episode", 0, "play")
    if tag_rng is None:
        tag_rng = make_rng(seed, "episode", 0, "tags")

    log = EpisodeLog(config=config, seed=seed, tag_names=profile.tags)
    next_id = 0

    def enter(count: int, entry_round: int) -> Population:
        nonlocal next_id
        ids = np.arange(next_id, next_id + count, dtype=np.int64)
        next_id += count
        return Population.fresh(ids, profile.assign(ids, tag_rng), entry_round)

    population = enter(config.x0, entry_round=1)
    if config.x0 == 0 and config.x == 0:
        logger.debug("Empty queue, nothing to play.")
        return log

    for round_index in range(1, config.w + 1):
        outcome = play_round(population, profile, config, rng, round_index=round_index)
        population = outcome.survivors
        if round_index < config.w:
            population = population.concat(enter(config.x, entry_round=round_index + 1))
        else:
            outcome.terminals = outcome.terminals.concat(population)
            outcome.reasons = np.concatenate(
                [outcome.reasons, np.full(len(population), Termination.HORIZON, dtype=np.int64)]
            )
            outcome.survivors = Population.empty()
        log.rounds.append(outcome)

    return log


def revenue(log: EpisodeLog, steady_state: bool = False) -> Tuple[float, float]:
    """Total payment of terminal agents.

    :param log: Episode log
    :param steady_state: Count only agents that entered after the burn-in
        rounds of ``log.config``
    :return: Total revenue and revenue per counted round
    """
    if not log.rounds:
        return 0.0, 0.0
    terminals, _ = log.terminals()
    rounds = len(log.rounds)
    if steady_state:
        burn_in = log.config.burn_in_rounds
        total = float(terminals.m[terminals.entry_round > burn_in].sum())
        counted = rounds - burn_in
    else:
        total = float(terminals.m.sum())
        counted = rounds
    return total, (total / counted if counted > 0 else 0.0)
