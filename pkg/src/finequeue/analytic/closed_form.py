"""Closed-form solution of the one- and two-sorting games.

In the one-sorting game every agent is sorted exactly once. An agent at
position ``n`` who does not pay is punished when fewer than ``k`` of the
``n - 1`` agents in front of him forget to pay. The probability of that is
``alpha(p, n, k)``. The *critical position* ``r`` is the first position where
risking the punishment is cheaper than paying, ``alpha(p, r, k) * Q <= F``, and
the *critical strategy* pays ``F`` in front of it and nothing behind it.

For two sortings, the first round has its own critical position ``r21``
obtained from the expected second-round payment of a surviving agent.
"""

import dataclasses
import enum
import functools
import logging
import math
import numbers
from typing import Dict, Iterable, Optional, Union

import numpy as np
import pandas as pd
from scipy.special import gammaln, logsumexp, xlog1py, xlogy
from sklearn.utils import Bunch
from sklearn.utils.validation import check_scalar

from ..exceptions import DomainError, OutOfRegimeError, ValidationError
from ..typing import Float1D

logger = logging.getLogger(__name__)

#: Up to this many tosses the binomial tail is summed term by term.
EXACT_SUM_LIMIT = 500


class Unbounded(enum.Enum):
    """Sentinel of a critical position that does not exist."""

    UNBOUNDED = "unbounded"

    def __repr__(self) -> str:
        """Represent as the module constant."""
        return "UNBOUNDED"


UNBOUNDED = Unbounded.UNBOUNDED
Position = Union[int, Unbounded]


@dataclasses.dataclass(frozen=True)
class AnalyticParams:
    """Parameters shared by the closed forms.

    :param F: Fine
    :param Q: Legal cost, larger than ``F``
    :param p: Probability of ignorance
    :param k: Number of punished agents per round
    """

    F: float
    Q: float
    p: float
    k: int

    def __post_init__(self) -> None:
        """Validate parameters."""
        try:
            check_scalar(self.F, "F", numbers.Real, min_val=0, include_boundaries="neither")
            check_scalar(self.Q, "Q", numbers.Real, min_val=self.F, include_boundaries="neither")
            check_scalar(self.p, "p", numbers.Real, min_val=0.0, max_val=1.0)
            check_scalar(self.k, "k", numbers.Integral, min_val=1)
        except (TypeError, ValueError) as error:
            raise ValidationError(str(error)) from error


def _require_bounded(r: Position, what: str) -> int:
    if r is UNBOUNDED:
        raise OutOfRegimeError(f"{what} is undefined: the critical position is unbounded (p = 0).")
    return int(r)  # type: ignore[arg-type]


@functools.lru_cache(maxsize=65536)
def _alpha(p: float, n: int, k: int) -> float:
    if k <= 0:
        return 0.0
    tosses = n - 1
    if k > tosses:
        return 1.0
    if p == 0.0:
        return 1.0
    if p == 1.0:
        return 0.0

    if tosses <= EXACT_SUM_LIMIT:
        q = 1.0 - p
        terms = (math.comb(tosses, j) * p**j * q ** (tosses - j) for j in range(k))
        return min(1.0, math.fsum(terms))

    j = np.arange(k)
    log_pmf = (
        gammaln(tosses + 1)
        - gammaln(j + 1)
        - gammaln(tosses - j + 1)
        + xlogy(j, p)
        + xlog1py(tosses - j, -p)
    )
    return float(min(1.0, np.exp(logsumexp(log_pmf))))


def alpha(p: float, n: int, k: int) -> float:
    """Probability that fewer than ``k`` of ``n - 1`` agents forget to pay.

    This is the binomial CDF ``P[Bin(n - 1, p) <= k - 1]``.

    :param p: Probability of ignorance
    :param n: Position of the agent (1-based)
    :param k: Number of punished agents
    :return: Probability in ``[0, 1]``

    .. rubric:: Examples

    >>> from finequeue.analytic import alpha
    >>> alpha(0.5, 4, 2)
    0.5
    >>> alpha(0.5, 1, 1)
    1.0

    """
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"Probability p must be in [0, 1], got {p}.")
    if n < 1:
        raise DomainError(f"Position n must be at least 1, got {n}.")
    return _alpha(float(p), int(n), int(k))


def alpha_table(p: float, n: int) -> Float1D:
    """Return ``alpha(p, n, k)`` for all ``k = 0..n`` at once."""
    if n < 1:
        raise DomainError(f"Position n must be at least 1, got {n}.")
    tosses = n - 1
    j = np.arange(tosses + 1)
    if p in (0.0, 1.0):
        pmf = np.zeros(tosses + 1)
        pmf[0 if p == 0.0 else tosses] = 1.0
    else:
        log_pmf = (
            gammaln(tosses + 1)
            - gammaln(j + 1)
            - gammaln(tosses - j + 1)
            + xlogy(j, p)
            + xlog1py(tosses - j, -p)
        )
        pmf = np.exp(log_pmf)
    return np.minimum(1.0, np.concatenate([[0.0], np.cumsum(pmf)]))


def chernoff_bound(p: float, n: int, k: float) -> float:
    """Chernoff upper bound ``exp(-(np - k)^2 / (2np))`` on ``alpha(p, n + 1, k)``.

    Only valid for ``k < n * p``.
    """
    mean = n * p
    if not k < mean:
        raise DomainError(f"Chernoff bound requires k < n * p, got k={k}, n * p={mean}.")
    return math.exp(-((mean - k) ** 2) / (2 * mean))


@functools.lru_cache(maxsize=4096)
def _critical_position(F: float, Q: float, p: float, k: int) -> Position:
    AnalyticParams(F, Q, p, k)
    if p == 0.0:
        return UNBOUNDED

    def pays(r: int) -> bool:
        return _alpha(p, r, k) * Q > F

    # alpha is 1 up to position k, so r > k; alpha is non-increasing in r.
    low, high = k, k + 1
    while pays(high):
        low, high = high, 2 * high
    while high - low > 1:
        middle = (low + high) // 2
        if pays(middle):
            low = middle
        else:
            high = middle
    return high


def critical_position_w1(F: float, Q: float, p: float, k: int) -> Position:
    """Smallest position ``r`` with ``alpha(p, r, k) * Q <= F``.

    :return: Critical position, or :data:`UNBOUNDED` when ``p = 0``

    .. rubric:: Examples

    >>> from finequeue.analytic import critical_position_w1
    >>> critical_position_w1(F=4, Q=6, p=0.5, k=2)
    4
    >>> critical_position_w1(F=4, Q=6, p=0.0, k=2)
    UNBOUNDED

    """
    return _critical_position(float(F), float(Q), float(p), int(k))


def alpha_crit(p: float, r: Position, n: int, k: int) -> float:
    """Probability of being punished when everyone plays the critical strategy.

    Agents in front of ``r`` pay, so an agent behind ``r`` is punished only
    when fewer than ``k - (n - r)`` of them forget.
    """
    if r is UNBOUNDED or n < r:  # type: ignore[operator]
        return alpha(p, n, k)
    r = int(r)  # type: ignore[arg-type]
    return alpha(p, r, k - (n - r))


def expected_payment_w1(
    p: float, n: int, k: int, F: float, Q: float, r: Optional[Position] = None
) -> float:
    """Expected payment of position ``n`` in the one-sorting equilibrium.

    :param r: Critical position, computed when not given
    """
    if r is None:
        r = critical_position_w1(F, Q, p, k)
    risk = alpha_crit(p, r, n, k) * Q
    if r is UNBOUNDED or n < r:  # type: ignore[operator]
        return (1 - p) * F + p * risk
    return risk


def expected_payment_mixed(
    p: float, q: float, alpha_crit_value: float, F: float, Q: float, sampling: bool = False
) -> float:
    """Expected payment of an agent paying 0 w.p. ``q`` and ``F`` otherwise.

    By default the formula ``(1 - p - q) F + (p + q) alpha Q`` is evaluated.
    With ``sampling`` the ignorance coin is applied on top of the mixed
    strategy, as in a round: ``(1 - p)(1 - q) F + (p + (1 - p) q) alpha Q``.
    """
    if q < 0 or p + q > 1:
        raise DomainError(f"Mixed strategy requires 0 <= q and p + q <= 1, got p={p}, q={q}.")
    if sampling:
        return (1 - p) * (1 - q) * F + (p + (1 - p) * q) * alpha_crit_value * Q
    return (1 - p - q) * F + (p + q) * alpha_crit_value * Q


def expected_payment_round2(
    p: float, n: int, k: int, F: float, Q: float, conditional: bool = True
) -> float:
    """Expected second-round payment of an agent at first-round position ``n``.

    Every agent in front pays in the first round, so the number of agents in
    front who actually leave is ``gamma ~ B(n - 1, 1 - p)``. After the ``k``
    punished, the agent survives at position ``n - gamma - k`` and plays the
    one-sorting game there.

    :param conditional: Expectation conditioned on surviving the first round.
        When false, every ``gamma`` is weighted and positions below 1 are
        evaluated at position 1.
    """
    r = critical_position_w1(F, Q, p, k)
    in_front = n - 1
    gammas = np.arange(in_front + 1)
    weights = np.array([math.comb(in_front, g) for g in gammas], dtype=float)
    weights *= (1 - p) ** gammas * p ** (in_front - gammas)

    positions = n - gammas - k
    if conditional:
        survive = positions >= 1
        mass = math.fsum(weights[survive])
        if mass == 0.0:
            return 0.0
        terms = [
            weight * expected_payment_w1(p, int(position), k, F, Q, r=r)
            for weight, position in zip(weights[survive], positions[survive])
        ]
        return math.fsum(terms) / mass

    terms = [
        weight * expected_payment_w1(p, max(1, int(position)), k, F, Q, r=r)
        for weight, position in zip(weights, positions)
    ]
    return math.fsum(terms)


def _not_paying_cost(p: float, n: int, k: int, F: float, Q: float, conditional: bool) -> float:
    a = alpha(p, n, k)
    return a * Q + (1 - a) * expected_payment_round2(p, n, k, F, Q, conditional=conditional)


@functools.lru_cache(maxsize=1024)
def _critical_position_w2_first(
    F: float, Q: float, p: float, k: int, conditional: bool, limit: int
) -> Position:
    AnalyticParams(F, Q, p, k)
    if p == 0.0:
        return UNBOUNDED
    for r in range(1, limit + 1):
        if _not_paying_cost(p, r, k, F, Q, conditional) <= F:
            return r
    raise OutOfRegimeError(f"No first-round critical position below {limit}.")


def critical_position_w2_first(
    F: float, Q: float, p: float, k: int, conditional: bool = True, limit: int = 100_000
) -> Position:
    """First-round critical position ``r21`` of the two-sorting game.

    Smallest ``r21`` such that not paying, ``alpha Q + (1 - alpha) G2``, is
    not more expensive than paying ``F``.

    .. rubric:: Examples

    >>> from finequeue.analytic import critical_position_w2_first
    >>> critical_position_w2_first(F=4, Q=6, p=0.5, k=2)
    9

    """
    return _critical_position_w2_first(
        float(F), float(Q), float(p), int(k), bool(conditional), int(limit)
    )


@dataclasses.dataclass
class TwoRoundSolution:
    """Equilibrium of the two-sorting game."""

    k: int
    r22: Position
    r21: Position
    g2: Dict[int, float]
    total_lower: float

    @property
    def gap_holds(self) -> bool:
        """Whether ``r21 >= r22 + k``."""
        if self.r21 is UNBOUNDED:
            return True
        return bool(int(self.r21) >= int(self.r22) + self.k)  # type: ignore[arg-type]


def solve_two_rounds(F: float, Q: float, p: float, k: int, n_max: int = 32) -> TwoRoundSolution:
    """Solve the two-sorting game and tabulate ``G2`` for positions ``k+1..n_max``."""
    r22 = critical_position_w1(F, Q, p, k)
    _require_bounded(r22, "The two-round solution")
    return TwoRoundSolution(
        k=k,
        r22=r22,
        r21=critical_position_w2_first(F, Q, p, k),
        g2={n: expected_payment_round2(p, n, k, F, Q) for n in range(k + 1, n_max + 1)},
        total_lower=total_payment_w2_lower(p, k, F, Q),
    )


def total_payment_w1(
    p: float, x0: Optional[int], k: int, F: float, Q: float, k_mult: int = 1
) -> float:
    """Total expected payment of the one-sorting equilibrium punishing ``k_mult * k``.

    ``F (1 - p) (r - 1) + k_mult k Q`` where ``r`` is the critical position for
    ``k_mult * k`` punished agents.

    :param x0: Number of agents; the formula needs at least ``r + k_mult k``.
        ``None`` skips the check.
    """
    punished = k_mult * k
    r = _require_bounded(critical_position_w1(F, Q, p, punished), "Total payment")
    if x0 is not None and x0 < r + punished:
        raise OutOfRegimeError(
            f"Total payment formula needs x0 >= r + k = {r + punished}, got x0={x0}."
        )
    return F * (1 - p) * (r - 1) + punished * Q


def total_payment_w2_lower(p: float, k: int, F: float, Q: float) -> float:
    """Lower bound ``2 F (1 - p)(r - 1) + 2 k Q`` on the two-sorting total payment."""
    r = _require_bounded(critical_position_w1(F, Q, p, k), "Total payment")
    return 2 * F * (1 - p) * (r - 1) + 2 * k * Q


def division_compare(F: float, Q: float, p: float, k: int) -> Bunch:
    """Compare two sortings with ``k`` punished against one sorting with ``2k``.

    :return: Both totals, the winner and whether the sufficient condition
        ``r(2k) < 2 r(k)`` with ``F / Q <= 1/4`` holds
    """
    params = AnalyticParams(F, Q, p, k)
    two_round = total_payment_w2_lower(p, k, F, Q)
    one_round = total_payment_w1(p, None, k, F, Q, k_mult=2)
    r_k = _require_bounded(critical_position_w1(F, Q, p, k), "Division comparison")
    r_2k = _require_bounded(critical_position_w1(F, Q, p, 2 * k), "Division comparison")

    if two_round > one_round:
        winner = "two_round"
    elif two_round < one_round:
        winner = "one_round_double_k"
    else:
        winner = "tie"

    report = Bunch()
    report.F, report.Q, report.p, report.k = params.F, params.Q, params.p, params.k
    report.two_round_lower = two_round
    report.one_round_double_k = one_round
    report.r_k = r_k
    report.r_2k = r_2k
    report.winner = winner
    report.condition_met = bool(F / Q <= 0.25 and r_2k < 2 * r_k)
    return report


def round_half_up(value: float) -> int:
    """Round to the nearest integer, ties up."""
    return int(math.floor(value + 0.5))


def conjecture_caa_probe(p: float, n: int, k: int) -> Bunch:
    """Compare ``alpha(p, n, k)`` with ``alpha(p, n + n / p, 2k)`` for ``pn > k``.

    Reporting only; the relation is not guaranteed.
    """
    if not p * n > k:
        raise DomainError(f"Probe requires p * n > k, got p * n={p * n}, k={k}.")
    extended = round_half_up(n + n / p)
    probe = Bunch()
    probe.p, probe.n, probe.k = p, n, k
    probe.n_extended = extended
    probe.lhs = alpha(p, n, k)
    probe.rhs = alpha(p, extended, 2 * k)
    probe.holds = bool(probe.lhs >= probe.rhs)
    return probe


def chernoff_scan(p_grid: Iterable[float], n_max: int) -> pd.DataFrame:
    """Evaluate the Chernoff bound against ``alpha(p, n + 1, k)`` for all ``1 <= k < np``."""
    rows = []
    for p in p_grid:
        for n in range(1, n_max + 1):
            table = alpha_table(p, n + 1)
            for k in range(1, math.ceil(n * p)):
                bound = chernoff_bound(p, n, k)
                rows.append((p, n, k, table[k], bound, bool(bound >= table[k])))
    return pd.DataFrame(rows, columns=["p", "n", "k", "value", "bound", "holds"])


def conjecture_scan(
    p_grid: Iterable[float], n_max: int, k_grid: Iterable[int] = (1, 2, 4)
) -> pd.DataFrame:
    """Run :func:`conjecture_caa_probe` over a grid of ``p``, ``n`` and ``k``."""
    rows = []
    k_values = list(k_grid)
    for p in p_grid:
        for n in range(1, n_max + 1):
            for k in k_values:
                if p * n <= k:
                    continue
                probe = conjecture_caa_probe(p, n, k)
                rows.append((p, n, k, probe.lhs, probe.rhs, probe.holds))
    return pd.DataFrame(rows, columns=["p", "n", "k", "value", "bound", "holds"])


def proposition_scan(
    p_grid: Iterable[float], k_grid: Iterable[int], n_max: int, ratio: float = 0.25
) -> pd.DataFrame:
    """Check the small-alpha regime implications on a grid.

    For every ``(p, n, k)`` the table records whether ``alpha(p, n, k) <= ratio``
    implies ``n p > k`` and whether ``alpha(p, n, k) >= alpha(p, 2n, 2k)``.
    """
    rows = []
    k_values = list(k_grid)
    for p in p_grid:
        for n in range(1, n_max + 1):
            for k in k_values:
                value = alpha(p, n, k)
                doubled = alpha(p, 2 * n, 2 * k)
                premise = value <= ratio
                rows.append(
                    (p, n, k, value, doubled, premise, not premise or n * p > k, value >= doubled)
                )
    return pd.DataFrame(
        rows,
        columns=["p", "n", "k", "value", "bound", "premise", "holds", "doubling_holds"],
    )


def doubling_threshold(scan: pd.DataFrame) -> pd.DataFrame:
    """Smallest ``N0`` per ``(p, k)`` above which ``alpha(p, n, k) >= alpha(p, 2n, 2k)``.

    ``N0`` is missing when the relation fails at the largest scanned ``n``.
    """
    rows = []
    for (p, k), group in scan.groupby(["p", "k"], sort=True):
        group = group.sort_values("n")
        failing = group.loc[~group["doubling_holds"], "n"]
        n_max = int(group["n"].max())
        if failing.empty:
            n0: Optional[int] = int(group["n"].min())
        elif int(failing.max()) == n_max:
            n0 = None
        else:
            n0 = int(failing.max()) + 1
        rows.append((p, k, n0))
    return pd.DataFrame(rows, columns=["p", "k", "n0"]).astype({"n0": "Int64"})


def critical_position_scan(
    F_grid: Iterable[float],
    Q_grid: Iterable[float],
    p_grid: Iterable[float],
    k_grid: Iterable[int],
) -> pd.DataFrame:
    """Tabulate ``r22``, ``r21`` and the gap ``r21 - r22`` over a parameter grid."""
    rows = []
    for F in F_grid:
        for Q in Q_grid:
            if Q <= F:
                continue
            for p in p_grid:
                for k in k_grid:
                    r22 = critical_position_w1(F, Q, p, k)
                    r21 = critical_position_w2_first(F, Q, p, k)
                    if r22 is UNBOUNDED or r21 is UNBOUNDED:
                        continue
                    rows.append((F, Q, p, k, r22, r21, bool(r21 >= r22 + k)))  # type: ignore
                    logger.debug("Critical positions at F=%s Q=%s p=%s k=%s", F, Q, p, k)
    return pd.DataFrame(rows, columns=["F", "Q", "p", "k", "r22", "r21", "holds"])
