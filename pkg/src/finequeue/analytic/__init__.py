"""Closed forms and brute-force oracles of the one- and two-sorting games."""

from .closed_form import (
    UNBOUNDED,
    AnalyticParams,
    TwoRoundSolution,
    alpha,
    alpha_crit,
    chernoff_bound,
    chernoff_scan,
    conjecture_caa_probe,
    conjecture_scan,
    critical_position_scan,
    critical_position_w1,
    critical_position_w2_first,
    division_compare,
    doubling_threshold,
    expected_payment_mixed,
    expected_payment_round2,
    expected_payment_w1,
    proposition_scan,
    solve_two_rounds,
    total_payment_w1,
    total_payment_w2_lower,
)
from .oracle import (
    brute_force_w1,
    brute_force_w2,
    coalition_analysis,
    coalition_gain,
)

__all__ = (
    "UNBOUNDED",
    "AnalyticParams",
    "TwoRoundSolution",
    "alpha",
    "alpha_crit",
    "brute_force_w1",
    "brute_force_w2",
    "chernoff_bound",
    "chernoff_scan",
    "coalition_analysis",
    "coalition_gain",
    "conjecture_caa_probe",
    "conjecture_scan",
    "critical_position_scan",
    "critical_position_w1",
    "critical_position_w2_first",
    "division_compare",
    "doubling_threshold",
    "expected_payment_mixed",
    "expected_payment_round2",
    "expected_payment_w1",
    "proposition_scan",
    "solve_two_rounds",
    "total_payment_w1",
    "total_payment_w2_lower",
)
