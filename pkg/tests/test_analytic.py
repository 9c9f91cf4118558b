import math

import numpy as np
import pytest
from scipy import stats

from finequeue.analytic import (
    UNBOUNDED,
    alpha,
    chernoff_bound,
    chernoff_scan,
    conjecture_caa_probe,
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
from finequeue.analytic.closed_form import alpha_table, round_half_up
from finequeue.exceptions import DomainError, OutOfRegimeError, ValidationError


def test_alpha():
    assert alpha(0.5, 4, 2) == 0.5
    assert alpha(0.5, 3, 2) == 0.75
    assert alpha(0.5, 1, 1) == 1.0
    assert alpha(0.0, 10, 1) == 1.0
    assert alpha(1.0, 10, 1) == 0.0
    # More heads than tosses are needed.
    assert alpha(0.3, 3, 5) == 1.0

    with pytest.raises(ValidationError):
        alpha(1.5, 3, 1)
    with pytest.raises(DomainError):
        alpha(0.5, 0, 1)


def test_alpha_large_n_matches_binomial_cdf():
    for n, k in [(600, 100), (1000, 310), (800, 1)]:
        expected = stats.binom.cdf(k - 1, n - 1, 0.3)
        np.testing.assert_allclose(alpha(0.3, n, k), expected, rtol=1e-9)


def test_alpha_table():
    table = alpha_table(0.5, 4)
    np.testing.assert_allclose(table, [alpha(0.5, 4, k) for k in range(5)])


def test_alpha_is_monotone():
    values = [alpha(0.4, n, 3) for n in range(1, 60)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_critical_position_w1():
    assert critical_position_w1(F=4, Q=6, p=0.5, k=2) == 4
    assert critical_position_w1(F=4, Q=6, p=0.0, k=2) is UNBOUNDED
    # alpha * Q > F holds exactly in front of the critical position.
    for p in (0.2, 0.5, 0.8):
        r = critical_position_w1(4, 6, p, 2)
        assert alpha(p, r - 1, 2) * 6 > 4 >= alpha(p, r, 2) * 6
    assert critical_position_w1(12, 18, 0.5, 2) == 4

    with pytest.raises(ValidationError):
        critical_position_w1(F=4, Q=4, p=0.5, k=2)


def test_expected_payment_w1():
    # Position 3 pays: (1 - p) F + p alpha Q.
    assert expected_payment_w1(0.5, 3, 2, 4, 6) == 0.5 * 4 + 0.5 * 0.75 * 6
    # Position 4 is the critical position and risks punishment.
    assert expected_payment_w1(0.5, 4, 2, 4, 6) == 0.5 * 6


def test_expected_payment_mixed():
    assert expected_payment_mixed(0.5, 0.25, 0.5, 4, 6) == pytest.approx(3.25)
    assert expected_payment_mixed(0.5, 0.25, 0.5, 4, 6, sampling=True) == pytest.approx(3.375)
    assert expected_payment_mixed(0.5, 0.5, 0.5, 4, 6) == pytest.approx(3.0)
    assert expected_payment_mixed(0.5, 0.0, 0.75, 4, 6) == expected_payment_w1(0.5, 3, 2, 4, 6)

    with pytest.raises(DomainError):
        expected_payment_mixed(0.5, 0.75, 0.5, 4, 6)


def test_expected_payment_round2_without_payers():
    # Nobody in front ever pays, so the agent moves back by the k punished.
    assert expected_payment_round2(1.0, 6, 2, 4, 6) == expected_payment_w1(1.0, 4, 2, 4, 6)


def test_critical_position_w2_first():
    r21 = critical_position_w2_first(F=4, Q=6, p=0.5, k=2)
    assert r21 == 9
    assert r21 >= critical_position_w1(4, 6, 0.5, 2) + 2
    assert critical_position_w2_first(4, 6, 0.0, 2) is UNBOUNDED
    assert critical_position_w2_first(4, 6, 0.75, 1) == 3


def test_solve_two_rounds():
    solution = solve_two_rounds(4, 6, 0.5, 2, n_max=10)
    assert solution.r22 == 4
    assert solution.r21 == 9
    assert solution.gap_holds
    assert sorted(solution.g2) == list(range(3, 11))
    assert solution.total_lower == 36

    with pytest.raises(OutOfRegimeError):
        solve_two_rounds(4, 6, 0.0, 2)


def test_total_payments():
    assert total_payment_w1(0.5, 32, 2, 4, 6) == 18
    assert total_payment_w1(0.5, None, 2, 4, 6) == 18
    assert total_payment_w1(0.5, 32, 2, 12, 18) == 54
    assert total_payment_w2_lower(0.5, 2, 4, 6) == 36

    with pytest.raises(OutOfRegimeError):
        total_payment_w1(0.5, 5, 2, 4, 6)
    with pytest.raises(OutOfRegimeError):
        total_payment_w1(0.0, 32, 2, 4, 6)


@pytest.mark.parametrize("k", [1, 2, 4])
def test_two_sortings_collect_more(k):
    report = division_compare(F=4, Q=400, p=0.5, k=k)
    assert report.two_round_lower > report.one_round_double_k
    assert report.winner == "two_round"
    assert report.r_2k < 2 * report.r_k


def test_division_compare_tie():
    report = division_compare(F=4, Q=6, p=0.5, k=2)
    assert report.r_k == 4
    assert report.r_2k == 7
    assert report.winner == "tie"
    assert not report.condition_met


def test_chernoff_bound():
    assert chernoff_bound(0.5, 10, 2) == pytest.approx(math.exp(-0.9))
    with pytest.raises(DomainError):
        chernoff_bound(0.5, 10, 5)


def test_chernoff_bound_holds_on_grid():
    scan = chernoff_scan([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], n_max=256)
    assert len(scan) > 0
    assert scan["holds"].all()


def test_gap_between_critical_positions():
    scan = critical_position_scan(
        F_grid=[1, 4], Q_grid=[6, 8, 16], p_grid=[0.25, 0.5, 0.75], k_grid=[1, 2, 3]
    )
    assert len(scan) >= 50
    assert scan["holds"].all()


def test_conjecture_probe():
    probe = conjecture_caa_probe(0.5, 10, 2)
    assert probe.n_extended == 30
    assert probe.lhs == alpha(0.5, 10, 2)
    assert probe.rhs == alpha(0.5, 30, 4)
    assert probe.holds == (probe.lhs >= probe.rhs)

    with pytest.raises(DomainError):
        conjecture_caa_probe(0.5, 4, 2)


def test_round_half_up():
    assert round_half_up(2.5) == 3
    assert round_half_up(3.5) == 4
    assert round_half_up(2.49) == 2


def test_proposition_scan_and_doubling_threshold():
    scan = proposition_scan([0.5], [1, 2], n_max=12)
    assert len(scan) == 24
    assert scan["holds"].all()

    thresholds = doubling_threshold(scan)
    assert list(thresholds.columns) == ["p", "k", "n0"]
    assert len(thresholds) == 2
    for _, row in thresholds.iterrows():
        subset = scan[(scan["k"] == row["k"]) & (scan["n"] >= row["n0"])]
        assert subset["doubling_holds"].all()
