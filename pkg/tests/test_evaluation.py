import math

import numpy as np
import pandas as pd
import pytest

from finequeue import QueueConfig
from finequeue.analytic import coalition_analysis
from finequeue.evaluation import (
    SWEEP_COLUMNS,
    McEstimate,
    avalanche_sweep,
    coalition_check,
    division_sweep,
    expected_utility,
    group_division,
    nashconv,
    position_utilities,
    time_division,
    total_revenue,
    trend,
)
from finequeue.exceptions import ValidationError


@pytest.fixture
def nobody_pays():
    # Every round punishes k=2 agents and everyone else expires with nothing paid.
    return QueueConfig(T=1, x0=10, x=10, w=5)


def test_estimate_validation():
    with pytest.raises(ValidationError):
        McEstimate(0.0, 0.0, 0, 0)
    with pytest.raises(ValidationError):
        McEstimate(0.0, -1.0, 3, 0)
    with pytest.raises(ValidationError):
        McEstimate(0.0, float("nan"), 3, 0)


def test_estimate_from_samples():
    estimate = McEstimate.from_samples([1.0, 2.0, 3.0], seed=7)
    assert estimate.mean == 2.0
    assert estimate.stderr == pytest.approx(1 / math.sqrt(3))
    assert estimate.episodes == 3
    assert estimate.to_dict()["seed"] == 7

    assert McEstimate.from_samples([5.0], seed=0).stderr == 0.0


def test_estimate_from_ratio():
    estimate = McEstimate.from_ratio([2.0, 4.0], [1, 2], seed=0)
    assert estimate.mean == 2.0
    assert estimate.stderr == 0.0

    empty = McEstimate.from_ratio([0.0, 0.0], [0, 0], seed=0)
    assert empty.mean == 0.0
    assert empty.episodes == 2

    noisy = McEstimate.from_ratio([1.0, 3.0], [1, 1], seed=0)
    assert noisy.mean == 2.0
    assert noisy.stderr == pytest.approx(1.0)


def test_expected_utility_of_fine_payers():
    config = QueueConfig(p=0.0, x0=8, x=4, w=4)
    estimate = expected_utility("pure:4", config, episodes=3)
    assert estimate.mean == -4.0
    assert estimate.stderr == 0.0

    with pytest.raises(ValidationError, match="Unknown strategy tag"):
        expected_utility("pure:4", config, episodes=3, tag="deviator")
    with pytest.raises(ValidationError):
        expected_utility("pure:4", config, episodes=0)


def test_expected_utility_is_reproducible(small_config):
    first = expected_utility("brs", small_config, episodes=4)
    second = expected_utility("brs", small_config, episodes=4)
    assert first == second

    other_seed = expected_utility("brs", small_config, episodes=4, seed=1)
    assert other_seed.seed == 1


def test_parallel_episodes_match_serial(small_config):
    serial = expected_utility("brs", small_config, episodes=4)
    parallel = expected_utility("brs", small_config, episodes=4, n_jobs=2)
    assert serial == parallel


def test_position_utilities():
    config = QueueConfig(p=0.0, x0=8, x=4, w=4)
    table = position_utilities("pure:4", config, episodes=2)
    assert list(table.columns) == ["position", "utility", "stderr", "episodes"]
    np.testing.assert_array_equal(table["position"], np.arange(1, 9))
    np.testing.assert_array_equal(table["utility"], -4.0)
    np.testing.assert_array_equal(table["stderr"], 0.0)


def test_total_revenue(nobody_pays):
    result = total_revenue("pure:0", nobody_pays, episodes=3)
    assert result.total.mean == 60.0
    assert result.total.stderr == 0.0
    assert result.per_round.mean == 12.0

    steady = total_revenue("pure:0", nobody_pays, episodes=3, steady_state=True)
    assert steady.total.mean == 36.0
    assert steady.per_round.mean == 12.0

    # Two copies of the queue collect twice as much.
    doubled = total_revenue("pure:0", nobody_pays, episodes=2, groups=2)
    assert doubled.total.mean == 120.0


def test_nashconv_of_identical_strategies(small_config):
    estimate = nashconv("brs", "brs", 0.5, small_config, episodes=3)
    assert estimate.mean == 0.0
    assert estimate.stderr == 0.0


def test_nashconv_unpaired():
    config = QueueConfig(p=0.0, x0=8, x=4, w=4)
    estimate = nashconv("pure:4", "pure:4", 0.25, config, episodes=3, paired=False)
    assert estimate.mean == 0.0
    assert estimate.stderr == 0.0
    assert estimate.episodes == 3


@pytest.mark.parametrize("rho", [0.0, 1.0, -0.5])
def test_nashconv_fraction(small_config, rho):
    with pytest.raises(ValidationError, match="Fraction of deviating agents"):
        nashconv("brs", "uniform", rho, small_config, episodes=2)


def test_avalanche_sweep(nobody_pays):
    sweep = avalanche_sweep(nobody_pays, "x", [10, 20], ["pure:0"], episodes=2)
    assert list(sweep.columns) == SWEEP_COLUMNS
    assert list(sweep["value"]) == [10.0, 20.0]
    assert (sweep["sweep"] == "avalanche").all()
    assert (sweep["strategy"] == "pure:0").all()
    # Punishments, not the inflow, bound the revenue.
    np.testing.assert_array_equal(sweep["revenue"], [60.0, 60.0])
    np.testing.assert_array_equal(sweep["per_period"], [12.0, 12.0])

    by_p = avalanche_sweep(nobody_pays, "p", [0.0, 0.5], {"zero": "pure:0"}, episodes=2)
    assert list(by_p["strategy"]) == ["zero", "zero"]
    np.testing.assert_array_equal(by_p["revenue"], [60.0, 60.0])


def test_sweep_errors(nobody_pays):
    with pytest.raises(ValidationError, match="must not be empty"):
        avalanche_sweep(nobody_pays, "p", [], ["brs"], episodes=2)
    with pytest.raises(ValidationError):
        avalanche_sweep(nobody_pays, "Q", [6], ["brs"], episodes=2)
    with pytest.raises(ValidationError):
        division_sweep(nobody_pays, "space", [1], ["brs"], episodes=2)
    with pytest.raises(ValidationError, match="must not be empty"):
        division_sweep(nobody_pays, "group", [], ["brs"], episodes=2)


def test_trend():
    sweep = pd.DataFrame(
        {
            "parameter": ["p"] * 4 + ["x"],
            "strategy": ["a", "a", "a", "b", "a"],
            "value": [0.1, 0.2, 0.3, 0.1, 32.0],
            "revenue": [3.0, 2.0, 1.0, 5.0, 4.0],
        }
    )
    result = trend(sweep)
    assert list(result.columns) == ["parameter", "strategy", "spearman", "pvalue", "points"]
    assert len(result) == 3

    falling = result[(result["parameter"] == "p") & (result["strategy"] == "a")].iloc[0]
    assert falling["spearman"] == pytest.approx(-1.0)
    assert falling["points"] == 3
    assert result[result["strategy"] == "b"]["spearman"].isna().all()
    assert result[result["parameter"] == "x"]["spearman"].isna().all()


def test_time_division(config):
    game = time_division(config, T=1)
    assert (game.T, game.k, game.x, game.w) == (1, 8, 128, 16)
    assert game.k * game.T == config.k * config.T

    same_k = time_division(config, T=2, capacity="fixed_k")
    assert (same_k.T, same_k.k, same_k.x, same_k.w) == (2, 2, 32, 64)

    with pytest.raises(ValidationError, match="not divisible"):
        time_division(config, T=3)
    with pytest.raises(ValidationError):
        time_division(config, T=0)
    with pytest.raises(ValidationError):
        time_division(config, T=1, capacity="fixed_budget")


def test_group_division(config):
    assert group_division(config, 1) == config

    half = group_division(config, 2)
    assert (half.x, half.x0, half.k) == (16, 16, 1)

    with pytest.raises(ValidationError, match="not divisible"):
        group_division(config, 3)
    with pytest.raises(ValidationError):
        group_division(config, 0)


def test_sorting_every_round_with_brs(config):
    # New agents never pay under BRS, so all k * T punishments of a period land.
    sweep = division_sweep(config, "time", [1], ["brs"], episodes=2)
    row = sweep.iloc[0]
    assert row["sweep"] == "division-time"
    assert row["parameter"] == "T"
    assert row["per_period"] == 48.0
    assert row["per_period_stderr"] == 0.0


def test_group_division_sweep(nobody_pays):
    sweep = division_sweep(
        nobody_pays, "group", [1, 2], ["pure:0"], episodes=2, steady_state=False
    )
    assert list(sweep["parameter"]) == ["g", "g"]
    np.testing.assert_array_equal(sweep["revenue"], [60.0, 60.0])
    np.testing.assert_array_equal(sweep["per_round"], [12.0, 12.0])

    steady = division_sweep(nobody_pays, "group", [1, 2], ["pure:0"], episodes=2)
    np.testing.assert_array_equal(steady["revenue"], [36.0, 36.0])


def test_coalition_check_exact(one_sorting):
    report = coalition_check(one_sorting, coalition_size=2, episodes=10)
    reference = coalition_analysis(one_sorting, coalition_size=2)
    assert report.method == "exact"
    assert report.episodes == 0
    assert report.shared_cost == pytest.approx(reference.shared_cost)
    assert report.violations == 0


def test_coalition_check_monte_carlo(one_sorting):
    # Members at the front are sorted first and punished every time.
    report = coalition_check(one_sorting, coalition_size=2, episodes=20, exact=False)
    assert report.method == "monte_carlo"
    assert report.members == [1, 2]
    assert report.episodes == 20
    assert report.shared_cost == pytest.approx(6.0)
    assert report.best_deviation_gain == pytest.approx(1.0)
    assert report.probability_positive == 1.0
    assert report.min_gain_when_positive == pytest.approx(1.0)
    assert report.violations == 0


def test_coalition_check_other_members(one_sorting):
    report = coalition_check(one_sorting, 2, episodes=50, members=[3, 5], exact=False)
    assert report.members == [3, 5]
    assert report.violations == 0

    with pytest.raises(ValidationError):
        coalition_check(one_sorting, 2, episodes=5, members=[3, 3])


@pytest.mark.slow
def test_avalanche_trends(config):
    by_p = avalanche_sweep(config, "p", [0.9, 0.7, 0.5, 0.3, 0.1], ["brs"], episodes=2000)
    assert trend(by_p)["spearman"].iloc[0] <= -0.9

    by_x = avalanche_sweep(config, "x", [8, 16, 32, 64], ["brs"], episodes=2000)
    assert trend(by_x)["spearman"].iloc[0] >= 0.9


@pytest.mark.slow
def test_two_sortings_collect_more_in_simulation():
    two_rounds = QueueConfig(Q=400, k=2, T=2, w=2, x=0, x0=64)
    one_round = two_rounds.replace(k=4, T=1, w=1)
    first = total_revenue("crit2", two_rounds, episodes=2000).total
    second = total_revenue("crit1", one_round, episodes=2000).total
    assert first.mean - second.mean > -3 * math.hypot(first.stderr, second.stderr)
