"""Strategies and strategy profiles.

A strategy maps observations to distributions over payments ``0..F``. All
strategies work on a batch of agents at once through :meth:`Strategy.act`,
which also returns the updated willingness to pay (the only per-agent memory,
used by the basic rational strategy).
"""

import abc
import dataclasses
import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..analytic.closed_form import (
    UNBOUNDED,
    Position,
    critical_position_w1,
    critical_position_w2_first,
)
from ..config import QueueConfig
from ..exceptions import DomainError, ValidationError
from ..learner.network import PolicyParams, actor_forward, feasible_mask
from ..typing import Float2D, Int1D
from .core import NO_POSITION, ActionDistribution, Observation, Observations

logger = logging.getLogger(__name__)


def _one_hot(payments: Int1D, F: int) -> Float2D:
    probs = np.zeros((len(payments), F + 1))
    probs[np.arange(len(payments)), payments] = 1.0
    return probs


class Strategy(abc.ABC):
    """Maps observations to action distributions."""

    #: Name used as a tag in profiles and tables.
    name: str = "strategy"

    @abc.abstractmethod
    def probabilities(self, obs: Observations, config: QueueConfig) -> Float2D:
        """Declared distributions, one row per agent."""

    def act(self, obs: Observations, config: QueueConfig) -> Tuple[Float2D, Int1D]:
        """Declared distributions and the updated willingness to pay."""
        return self.probabilities(obs, config), obs.omega

    def distribution(
        self, obs: Observation, config: QueueConfig, omega: int = 0, prev_n: Optional[int] = None
    ) -> ActionDistribution:
        """Distribution declared by one agent."""
        probs, _ = self.act(Observations.single(obs, omega, prev_n), config)
        return ActionDistribution(probs[0])

    def __repr__(self) -> str:
        """Represent as the strategy name."""
        return f"{type(self).__name__}({self.name!r})"


class PureStrategy(Strategy):
    """Always pay ``nu``."""

    def __init__(self, nu: int) -> None:
        """Initialize class."""
        if nu < 0:
            raise ValidationError(f"Payment must be non-negative, got {nu}.")
        self.nu = int(nu)
        self.name = f"pure:{self.nu}"

    def probabilities(self, obs: Observations, config: QueueConfig) -> Float2D:
        """Point mass on ``nu``."""
        if self.nu > config.F:
            raise ValidationError(f"Payment {self.nu} is outside of [0, {config.F}].")
        return _one_hot(np.full(len(obs), self.nu), config.F)


def pure_strategy(nu: int, F: Optional[int] = None) -> PureStrategy:
    """Return the pure strategy of paying ``nu``.

    .. rubric:: Examples

    >>> from finequeue import QueueConfig
    >>> from finequeue.game import Observation, pure_strategy
    >>> pure_strategy(2, F=4).distribution(Observation(1, 0, 0), QueueConfig()).probs
    array([0., 0., 1., 0., 0.])

    """
    if F is not None and not 0 <= nu <= F:
        raise ValidationError(f"Payment {nu} is outside of [0, {F}].")
    return PureStrategy(nu)


@dataclasses.dataclass(frozen=True)
class BrsMemory:
    """Willingness to pay and the position at the previous declaration."""

    omega: int = 0
    prev_n: Optional[int] = None


def brs_update(obs: Observations, config: QueueConfig, literal: bool = False) -> Int1D:
    """Updated willingness to pay of the basic rational strategy.

    An agent raises its willingness by one when, moving forward at the speed
    of the last round, it would reach the front before its offence expires:
    ``n < (prev_n - n) (T - t)``. Otherwise the willingness drops by one. New
    agents (``t = 0``) start at 0. The willingness never exceeds ``F - m``.

    :param literal: Use the movement ``n - prev_n`` instead of ``prev_n - n``
    """
    n, t, m, omega = obs.n, obs.t, obs.m, obs.omega
    known = obs.prev_n != NO_POSITION
    moved = np.where(known, n - obs.prev_n if literal else obs.prev_n - n, 0)
    reaches_front = n < moved * (config.T - t)

    raised = np.minimum(config.F - m, omega + 1)
    lowered = np.maximum(0, omega - 1)
    updated = np.minimum(np.where(reaches_front, raised, lowered), config.F - m)
    return np.where(t == 0, 0, np.maximum(updated, 0)).astype(np.int64)


def brs_step(
    mem: BrsMemory, obs: Observation, params: QueueConfig, literal: bool = False
) -> Tuple[BrsMemory, ActionDistribution]:
    """One declaration of the basic rational strategy.

    .. rubric:: Examples

    >>> from finequeue import QueueConfig
    >>> from finequeue.game import BrsMemory, Observation, brs_step
    >>> memory = BrsMemory(omega=0, prev_n=10)
    >>> memory, dist = brs_step(memory, Observation(n=4, t=2, m=0), QueueConfig())
    >>> memory.omega, int(dist.probs.argmax())
    (1, 1)

    """
    batch = Observations.single(obs, mem.omega, mem.prev_n)
    omega = int(brs_update(batch, params, literal=literal)[0])
    return BrsMemory(omega=omega, prev_n=obs.n), ActionDistribution.pure(omega, params.F)


class BasicRationalStrategy(Strategy):
    """Pay the willingness to pay, adjusted by the agent's progress in the queue."""

    def __init__(self, literal: bool = False) -> None:
        """Initialize class.

        :param literal: Use the movement ``n - prev_n`` in the update
        """
        self.literal = literal
        self.name = "brs-literal" if literal else "brs"

    def act(self, obs: Observations, config: QueueConfig) -> Tuple[Float2D, Int1D]:
        """Update the willingness to pay and pay it."""
        omega = brs_update(obs, config, literal=self.literal)
        return _one_hot(omega, config.F), omega

    def probabilities(self, obs: Observations, config: QueueConfig) -> Float2D:
        """Distributions after the update."""
        return self.act(obs, config)[0]


class CriticalStrategyW1(Strategy):
    """Pay ``F`` in front of the critical position ``r`` and 0 behind it.

    :param r: Critical position; computed from the game parameters at play
        time when omitted
    """

    name = "crit1"

    def __init__(self, r: Optional[Position] = None) -> None:
        """Initialize class."""
        self.r = r

    def probabilities(self, obs: Observations, config: QueueConfig) -> Float2D:
        """Pay ``F`` iff ``n < r``."""
        r = self.r
        if r is None:
            r = critical_position_w1(config.F, config.Q, config.p, config.k)
        pays = np.ones(len(obs), dtype=bool) if r is UNBOUNDED else obs.n < r
        return _one_hot(np.where(pays, config.F, 0), config.F)


class CriticalStrategyW2(Strategy):
    """Critical strategy of the two-sorting game.

    In the first round pay ``F`` in front of ``r21``, in the second round in
    front of ``r22 = r``. Thresholds left out are computed at play time.
    """

    name = "crit2"

    def __init__(self, r21: Optional[Position] = None, r: Optional[Position] = None) -> None:
        """Initialize class."""
        self.r21 = r21
        self.r = r

    def probabilities(self, obs: Observations, config: QueueConfig) -> Float2D:
        """Pay ``F`` iff ``n < r^{2, t + 1}``."""
        if np.any(obs.t >= 2):
            raise DomainError("The two-sorting critical strategy is defined for two rounds only.")
        r21, r = self.r21, self.r
        if r21 is None:
            r21 = critical_position_w2_first(config.F, config.Q, config.p, config.k)
        if r is None:
            r = critical_position_w1(config.F, config.Q, config.p, config.k)
        pays = np.zeros(len(obs), dtype=bool)
        for t, threshold in ((0, r21), (1, r)):
            selected = obs.t == t
            pays[selected] = True if threshold is UNBOUNDED else obs.n[selected] < threshold
        return _one_hot(np.where(pays, config.F, 0), config.F)


def critical_strategy_w1(params: Optional[QueueConfig] = None) -> CriticalStrategyW1:
    """Return the critical strategy of the one-sorting game.

    With ``params`` the critical position is fixed to that of ``params``;
    otherwise it follows the game the strategy is played in.
    """
    if params is None:
        return CriticalStrategyW1()
    return CriticalStrategyW1(critical_position_w1(params.F, params.Q, params.p, params.k))


def critical_strategy_w2(params: Optional[QueueConfig] = None) -> CriticalStrategyW2:
    """Return the critical strategy of the two-sorting game, fixed to ``params`` if given."""
    if params is None:
        return CriticalStrategyW2()
    return CriticalStrategyW2(
        critical_position_w2_first(params.F, params.Q, params.p, params.k),
        critical_position_w1(params.F, params.Q, params.p, params.k),
    )


class UniformStrategy(Strategy):
    """Uniform over feasible payments ``0..F - m``."""

    name = "uniform"

    def probabilities(self, obs: Observations, config: QueueConfig) -> Float2D:
        """Uniform distribution over the feasible payments."""
        mask = feasible_mask(obs.m, config.F).astype(np.float64)
        return mask / mask.sum(axis=1, keepdims=True)


class PolicyStrategy(Strategy):
    """Masked actor of a learned policy."""

    def __init__(self, policy: PolicyParams, name: str = "policy") -> None:
        """Initialize class."""
        self.policy = policy
        self.name = name

    def probabilities(self, obs: Observations, config: QueueConfig) -> Float2D:
        """Actor distribution at the scaled observations."""
        if self.policy.F != config.F:
            raise ValidationError(
                f"Policy was trained for F={self.policy.F}, the game has F={config.F}."
            )
        return actor_forward(self.policy, self.policy.scale(obs.n, obs.t, obs.m), obs.m, config.F)


def policy_strategy(policy: PolicyParams, name: str = "policy") -> PolicyStrategy:
    """Wrap a learned policy as a strategy."""
    return PolicyStrategy(policy, name=name)


def strategy_from_spec(spec: str, literal_brs: bool = False) -> Strategy:
    """Build a strategy from its name.

    Accepted names: ``pure:<nu>``, ``brs``, ``crit1``, ``crit2``, ``uniform``
    and ``policy:<checkpoint path>``.

    :param literal_brs: Build the basic rational strategy in literal mode
    """
    kind, _, argument = spec.strip().partition(":")
    if kind == "pure":
        try:
            return PureStrategy(int(argument))
        except ValueError as error:
            raise ValidationError(f"Invalid pure strategy {spec!r}.") from error
    if kind == "brs" and not argument:
        return BasicRationalStrategy(literal=literal_brs)
    if kind == "crit1" and not argument:
        return CriticalStrategyW1()
    if kind == "crit2" and not argument:
        return CriticalStrategyW2()
    if kind == "uniform" and not argument:
        return UniformStrategy()
    if kind == "policy" and argument:
        from ..serialization import read_checkpoint

        checkpoint = read_checkpoint(Path(argument))
        return PolicyStrategy(checkpoint.params, name=f"policy:{Path(argument).stem}")
    raise ValidationError(
        f"Unknown strategy {spec!r}. Use pure:<nu>, brs, crit1, crit2, uniform or policy:<path>."
    )


class Profile:
    """Assignment of strategies to agents entering a queue.

    Every entering agent independently gets a tag with probability given by
    ``weights``. ``overrides`` pins the tag of individual agent ids, which is
    how single deviators and coalitions are placed in the queue.

    :param strategies: Strategy of every tag
    :param weights: Relative frequency of each tag; the first tag gets all
        agents when omitted
    :param overrides: Tag of specific agent ids
    """

    def __init__(
        self,
        strategies: Mapping[str, Strategy],
        weights: Optional[Mapping[str, float]] = None,
        overrides: Optional[Mapping[int, str]] = None,
    ) -> None:
        """Initialize class."""
        if not strategies:
            raise ValidationError("Profile needs at least one strategy.")
        self.tags: Tuple[str, ...] = tuple(strategies)
        self.strategies: Tuple[Strategy, ...] = tuple(strategies.values())

        if weights is None:
            weights = {self.tags[0]: 1.0}
        unknown = set(weights) - set(self.tags)
        if unknown:
            raise ValidationError(f"Weights given for unknown tags: {sorted(unknown)}.")
        shares = np.array([float(weights.get(tag, 0.0)) for tag in self.tags])
        if np.any(shares < 0) or shares.sum() <= 0:
            raise ValidationError("Profile weights must be non-negative with a positive sum.")
        self.cumulative = np.cumsum(shares / shares.sum())

        self.overrides: Dict[int, int] = {}
        for agent_id, tag in (overrides or {}).items():
            if tag not in self.tags:
                raise ValidationError(f"Override of agent {agent_id} uses unknown tag {tag!r}.")
            self.overrides[int(agent_id)] = self.tags.index(tag)

    @classmethod
    def single(cls, strategy: Strategy, tag: Optional[str] = None) -> "Profile":
        """Every agent plays ``strategy``."""
        return cls({tag or strategy.name: strategy})

    @classmethod
    def mixture(
        cls, strategies: Mapping[str, Strategy], weights: Mapping[str, float]
    ) -> "Profile":
        """Agents are tagged at random with the given weights."""
        return cls(strategies, weights=weights)

    def with_overrides(self, overrides: Mapping[int, str]) -> "Profile":
        """Return a copy with additional per-agent tags."""
        strategies = dict(zip(self.tags, self.strategies))
        shares = np.diff(np.concatenate([[0.0], self.cumulative]))
        merged = {agent_id: self.tags[code] for agent_id, code in self.overrides.items()}
        merged.update(overrides)
        return Profile(strategies, dict(zip(self.tags, shares)), merged)

    def assign(self, ids: Int1D, rng: np.random.Generator) -> Int1D:
        """Draw tags of entering agents; one uniform per agent."""
        uniforms = rng.random(len(ids))
        codes = np.searchsorted(self.cumulative, uniforms, side="right")
        codes = np.minimum(codes, len(self.tags) - 1).astype(np.int64)
        for position, agent_id in enumerate(ids):
            code = self.overrides.get(int(agent_id))
            if code is not None:
                codes[position] = code
        return codes

    def __repr__(self) -> str:
        """Represent tags and strategies."""
        return f"Profile({dict(zip(self.tags, self.strategies))})"


ProfileLike = Union[Profile, Strategy, str]


def as_profile(profile: ProfileLike, literal_brs: bool = False) -> Profile:
    """Accept a profile, a strategy or a strategy name."""
    if isinstance(profile, Profile):
        return profile
    if isinstance(profile, str):
        profile = strategy_from_spec(profile, literal_brs=literal_brs)
    return Profile.single(profile)


def as_profiles(
    strategies: Union[Sequence[str], Mapping[str, ProfileLike]], literal_brs: bool = False
) -> Dict[str, Profile]:
    """Name profiles given as strategy names or as a mapping."""
    if isinstance(strategies, Mapping):
        return {name: as_profile(value, literal_brs) for name, value in strategies.items()}
    return {name: as_profile(name, literal_brs) for name in strategies}
