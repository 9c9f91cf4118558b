"""The Queue game and its strategies."""

from .core import (
    ActionDistribution,
    AgentState,
    EpisodeLog,
    Observation,
    Observations,
    Population,
    RoundOutcome,
    Termination,
    play_round,
    revenue,
    run_queue,
    sample_payment,
    sample_payments,
    stable_sort_by_ratio,
)
from .strategies import (
    BasicRationalStrategy,
    BrsMemory,
    CriticalStrategyW1,
    CriticalStrategyW2,
    PolicyStrategy,
    Profile,
    PureStrategy,
    Strategy,
    UniformStrategy,
    brs_step,
    critical_strategy_w1,
    critical_strategy_w2,
    policy_strategy,
    pure_strategy,
    strategy_from_spec,
)

__all__ = (
    "ActionDistribution",
    "AgentState",
    "BasicRationalStrategy",
    "BrsMemory",
    "CriticalStrategyW1",
    "CriticalStrategyW2",
    "EpisodeLog",
    "Observation",
    "Observations",
    "PolicyStrategy",
    "Population",
    "Profile",
    "PureStrategy",
    "RoundOutcome",
    "Strategy",
    "Termination",
    "UniformStrategy",
    "brs_step",
    "critical_strategy_w1",
    "critical_strategy_w2",
    "play_round",
    "policy_strategy",
    "pure_strategy",
    "revenue",
    "run_queue",
    "sample_payment",
    "sample_payments",
    "stable_sort_by_ratio",
    "strategy_from_spec",
)
