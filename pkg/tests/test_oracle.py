import numpy as np
import pytest

from finequeue import QueueConfig
from finequeue.analytic import (
    brute_force_w1,
    brute_force_w2,
    coalition_analysis,
    coalition_gain,
    critical_position_w2_first,
    expected_payment_round2,
    expected_payment_w1,
)
from finequeue.exceptions import ResourceLimitError, ValidationError


@pytest.mark.parametrize("p", [0.25, 0.5, 0.75])
@pytest.mark.parametrize("x0", [6, 8, 10, 12])
def test_one_sorting_equilibrium(p, x0):
    result = brute_force_w1(x0, F=4, Q=6, p=p, k=2)

    closed_form = [expected_payment_w1(p, n, 2, 4, 6) for n in range(1, x0 + 1)]
    np.testing.assert_allclose(result.expected, closed_form, rtol=0, atol=1e-12)
    assert np.all(result.deviation_gain <= 1e-12)


@pytest.mark.parametrize("p", [0.25, 0.5, 0.75])
@pytest.mark.parametrize("x0", [6, 8])
def test_one_sorting_equilibrium_with_unit_fine(p, x0):
    # With F = 1 paying nothing or the fine are the only payments.
    result = brute_force_w1(x0, F=1, Q=3, p=p, k=2, actions=range(2))

    closed_form = [expected_payment_w1(p, n, 2, 1, 3) for n in range(1, x0 + 1)]
    np.testing.assert_allclose(result.expected, closed_form, rtol=0, atol=1e-12)
    assert np.all(result.deviation_gain <= 1e-12)


def test_partial_payment_undercuts_critical_strategy():
    # Paying 1 puts the first agent behind every non-payer, so it is never punished.
    result = brute_force_w1(10, F=4, Q=6, p=0.5, k=2, actions=range(5))
    assert result.expected[0] == pytest.approx(5.0)
    np.testing.assert_allclose(result.deviation_payments[0], [6, 3.5, 4, 4.5, 5], atol=1e-12)
    assert result.deviation_gain[0] == pytest.approx(1.5)


def test_one_sorting_deviation_from_other_profile():
    # Everyone paying F is not an equilibrium: the last agent saves by not paying.
    result = brute_force_w1(8, F=4, Q=6, p=0.5, k=2, profile=[4] * 8)
    assert result.deviation_gain[-1] > 0


def test_brute_force_limits():
    with pytest.raises(ResourceLimitError):
        brute_force_w1(17, F=4, Q=6, p=0.5, k=2)
    with pytest.raises(ResourceLimitError):
        brute_force_w2(11, F=4, Q=6, p=0.5, k=2)
    with pytest.raises(ValidationError):
        brute_force_w1(3, F=4, Q=6, p=0.5, k=2, profile=[4, 4])
    with pytest.raises(ValidationError):
        brute_force_w1(2, F=4, Q=6, p=0.5, k=2, profile=[4, 5])


def test_two_sorting_second_round():
    result = brute_force_w2(6, F=4, Q=6, p=0.5, k=2)

    closed_form = [expected_payment_round2(0.5, n, 2, 4, 6) for n in range(1, 7)]
    np.testing.assert_allclose(result.round2_payment, closed_form, rtol=0, atol=1e-9)
    # The first-round critical position lies behind the whole queue.
    assert critical_position_w2_first(4, 6, 0.5, 2) > 6
    assert result.boundary is None


@pytest.mark.parametrize("p", [0.25, 0.5, 0.75])
@pytest.mark.parametrize("k", [1, 2])
@pytest.mark.parametrize("x0", [6, 8, pytest.param(10, marks=pytest.mark.slow)])
def test_two_sorting_boundary(p, k, x0):
    result = brute_force_w2(x0, F=4, Q=6, p=p, k=k)
    r21 = critical_position_w2_first(4, 6, p, k)
    if r21 <= x0:
        assert result.boundary == r21
    else:
        assert result.boundary is None


def test_two_sorting_equilibrium():
    result = brute_force_w2(6, F=4, Q=6, p=0.75, k=1)
    assert result.boundary == critical_position_w2_first(4, 6, 0.75, 1)
    assert np.all(result.deviation_gain <= 1e-9)


def test_coalition_gain():
    everyone_punished = coalition_gain([6, 6], F=4, Q=6, p=0.0)
    assert everyone_punished.case == "pay_fine"
    assert everyone_punished.gain == 2
    assert coalition_gain([6, 6], F=4, Q=6, p=0.5).gain == 1

    last_leaves = coalition_gain([6, 0], F=4, Q=6, p=0.5)
    assert last_leaves.case == "last_leaves"
    assert last_leaves.shared_cost == 3
    assert last_leaves.gain == 3

    assert coalition_gain([0, 0], F=4, Q=6, p=0.5).gain == 0

    with pytest.raises(ValidationError):
        coalition_gain([], F=4, Q=6, p=0.5)


def test_coalition_at_front(one_sorting):
    report = coalition_analysis(one_sorting, coalition_size=2)
    assert report.method == "exact"
    assert report.members == [1, 2]
    # Both members are punished in every realisation.
    assert report.shared_cost == pytest.approx(6)
    assert report.probability_positive == pytest.approx(1)
    assert report.min_gain_when_positive == pytest.approx(1)
    assert report.violations == 0


@pytest.mark.parametrize("members", [[1, 8], [3, 5], [2, 4, 6]])
def test_coalition_deviator_always_gains(one_sorting, members):
    report = coalition_analysis(one_sorting, len(members), members)
    assert report.probability_positive > 0
    assert report.min_gain_when_positive > 0
    assert report.violations == 0


def test_coalition_errors(one_sorting):
    with pytest.raises(ValidationError):
        coalition_analysis(one_sorting, coalition_size=9)
    with pytest.raises(ValidationError):
        coalition_analysis(one_sorting, 2, members=[1, 1])
    with pytest.raises(ResourceLimitError):
        coalition_analysis(QueueConfig(T=1, w=1, x=0, x0=20), coalition_size=2)
