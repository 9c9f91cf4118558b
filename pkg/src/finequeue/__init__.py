"""Simulation, analytic solution and learning of the fine-collection Queue."""

from .config import QueueConfig
from .evaluation import (
    McEstimate,
    avalanche_sweep,
    coalition_check,
    division_sweep,
    expected_utility,
    nashconv,
    position_utilities,
    total_revenue,
)
from .game import Profile, revenue, run_queue, strategy_from_spec
from .learner.ppo import Hyperparams, best_response_iterate, train

__all__ = (
    "Hyperparams",
    "McEstimate",
    "Profile",
    "QueueConfig",
    "avalanche_sweep",
    "best_response_iterate",
    "coalition_check",
    "division_sweep",
    "expected_utility",
    "nashconv",
    "position_utilities",
    "revenue",
    "run_queue",
    "strategy_from_spec",
    "total_revenue",
    "train",
)
