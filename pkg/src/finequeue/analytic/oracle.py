"""Exact expectations by enumerating every ignorance pattern.

These brute-force solvers are independent of :mod:`finequeue.game.core`:
they replay small one- and two-sorting games in plain Python with exact
rational sorting. With pay-``F`` / pay-0 strategies the only randomness is
the ignorance coin of each paying agent, so ``2 ** payers`` patterns cover
all outcomes.
"""

import itertools
import logging
import math
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.utils import Bunch

from ..config import QueueConfig
from ..exceptions import ResourceLimitError, ValidationError
from .closed_form import UNBOUNDED, critical_position_w1, critical_position_w2_first

logger = logging.getLogger(__name__)

#: Largest one-sorting instance solved by enumeration.
MAX_W1_AGENTS = 16
#: Largest two-sorting instance solved by enumeration.
MAX_W2_AGENTS = 10

Entry = Tuple[int, int, int]  # (agent, m, t)
Rule = Callable[[int], int]


def _play(
    queue: Sequence[Entry], paid: Dict[int, int], F: int, Q: int, k: int, T: int
) -> Tuple[List[Entry], List[Tuple[int, int]]]:
    """Play one round; return survivors and ``(agent, m)`` of terminals in removal order."""
    updated = [(agent, m + paid.get(agent, 0), t + 1) for agent, m, t in queue]
    updated.sort(key=lambda entry: Fraction(entry[1], entry[2]))

    terminals = [(agent, m) for agent, m, _ in updated if m >= F]
    rest = [entry for entry in updated if entry[1] < F]
    terminals += [(agent, m + Q) for agent, m, _ in rest[:k]]
    rest = rest[k:]
    terminals += [(agent, m) for agent, m, t in rest if t >= T]
    return [entry for entry in rest if entry[2] < T], terminals


def _patterns(intents: Dict[int, int], p: float) -> List[Tuple[float, Dict[int, int]]]:
    """All ignorance patterns of agents with positive intent and their probabilities."""
    payers = [agent for agent, amount in intents.items() if amount > 0]
    patterns = []
    for forgot in itertools.product((False, True), repeat=len(payers)):
        n_forgot = sum(forgot)
        weight = p**n_forgot * (1 - p) ** (len(payers) - n_forgot)
        if weight == 0.0:
            continue
        paid = {agent: amount for agent, amount in intents.items() if amount > 0}
        for agent, forgets in zip(payers, forgot):
            if forgets:
                paid[agent] = 0
        patterns.append((weight, paid))
    return patterns


def _critical_rule(F: int, Q: int, p: float, k: int) -> Rule:
    r = critical_position_w1(F, Q, p, k)
    return lambda n: F if r is UNBOUNDED or n < r else 0  # type: ignore[operator]


def _check_intents(intents: Sequence[int], x0: int, F: int) -> List[int]:
    intents = [int(amount) for amount in intents]
    if len(intents) != x0:
        raise ValidationError(f"Profile must give one payment per agent, got {len(intents)}.")
    if any(not 0 <= amount <= F for amount in intents):
        raise ValidationError(f"Profile payments must lie in [0, {F}].")
    return intents


def _expected_w1(intents: Sequence[int], F: int, Q: int, p: float, k: int) -> List[float]:
    queue = [(agent, 0, 0) for agent in range(len(intents))]
    costs: List[List[float]] = [[] for _ in intents]
    for weight, paid in _patterns(dict(enumerate(intents)), p):
        _, terminals = _play(queue, paid, F, Q, k, T=1)
        for agent, m in terminals:
            costs[agent].append(weight * m)
    return [math.fsum(agent_costs) for agent_costs in costs]


def brute_force_w1(
    x0: int,
    F: int,
    Q: int,
    p: float,
    k: int,
    profile: Optional[Sequence[int]] = None,
    actions: Optional[Sequence[int]] = None,
) -> Bunch:
    """Solve the one-sorting game with ``x0`` agents by enumeration.

    :param profile: Payment of each position; the critical strategy by default
    :param actions: Payments tried as single-agent deviations, ``(0, F)`` by
        default. The critical strategy is an equilibrium over paying nothing
        or the whole fine; with ``F > 1`` a partial payment moves an agent
        behind every non-payer and can be cheaper.
    :return: ``expected`` payment per position, ``deviation_payments`` of
        shape ``(x0, len(actions))`` and ``deviation_gain``, the largest
        decrease of expected payment any single deviation achieves (0 in
        equilibrium)
    """
    if x0 > MAX_W1_AGENTS:
        raise ResourceLimitError(f"Enumeration is limited to {MAX_W1_AGENTS} agents, got {x0}.")
    rule = _critical_rule(F, Q, p, k)
    intents = _check_intents(
        profile if profile is not None else [rule(n) for n in range(1, x0 + 1)], x0, F
    )
    actions = tuple(actions) if actions is not None else (0, F)

    expected = np.array(_expected_w1(intents, F, Q, p, k))
    deviations = np.zeros((x0, len(actions)))
    for agent in range(x0):
        for column, action in enumerate(actions):
            deviated = list(intents)
            deviated[agent] = action
            deviations[agent, column] = _expected_w1(deviated, F, Q, p, k)[agent]

    result = Bunch()
    result.positions = np.arange(1, x0 + 1)
    result.intents = np.array(intents)
    result.expected = expected
    result.actions = actions
    result.deviation_payments = deviations
    result.deviation_gain = (
        np.maximum(0.0, expected - deviations.min(axis=1)) if x0 else np.zeros(0)
    )
    return result


def _expected_w2(
    intents: Sequence[int],
    rule: Rule,
    F: int,
    Q: int,
    p: float,
    k: int,
    deviator: Optional[int] = None,
    second: Optional[int] = None,
) -> Tuple[List[float], float, float]:
    """Expected payments in the two-sorting game.

    :param deviator: Agent whose second-round payment is ``second`` instead
        of ``rule``
    :return: Expected payment per agent, and for ``deviator`` the
        probability of surviving the first round and the expected
        second-round payment given survival
    """
    queue = [(agent, 0, 0) for agent in range(len(intents))]
    costs: List[List[float]] = [[] for _ in intents]
    survival: List[float] = []
    later: List[float] = []
    for weight, paid in _patterns(dict(enumerate(intents)), p):
        survivors, terminals = _play(queue, paid, F, Q, k, T=2)
        for agent, m in terminals:
            costs[agent].append(weight * m)

        second_intents = {}
        for position, (agent, _, _) in enumerate(survivors, start=1):
            amount = rule(position)
            if agent == deviator and second is not None:
                amount = second
            second_intents[agent] = amount
        survived = deviator is not None and deviator in second_intents
        before = {agent: m for agent, m, _ in survivors}

        for second_weight, second_paid in _patterns(second_intents, p):
            _, second_terminals = _play(survivors, second_paid, F, Q, k, T=2)
            for agent, m in second_terminals:
                costs[agent].append(weight * second_weight * m)
                if survived and agent == deviator:
                    later.append(weight * second_weight * (m - before[agent]))
        if survived:
            survival.append(weight)

    survive_mass = math.fsum(survival)
    conditional = math.fsum(later) / survive_mass if survive_mass > 0 else 0.0
    return [math.fsum(agent_costs) for agent_costs in costs], survive_mass, conditional


def brute_force_w2(
    x0: int,
    F: int,
    Q: int,
    p: float,
    k: int,
    profile: Optional[Sequence[int]] = None,
    second_round: Optional[Rule] = None,
    actions: Optional[Sequence[int]] = None,
) -> Bunch:
    """Solve the two-sorting game with ``x0`` agents by enumeration.

    Others follow ``profile`` in the first round (the first-round critical
    strategy by default) and ``second_round`` at their new position (the
    critical strategy by default).

    :return: ``expected`` payment per position; ``deviation_payments`` of
        shape ``(x0, len(actions), len(actions))`` over first- and
        second-round actions; ``deviation_gain``; ``not_paying`` and
        ``paying``, the expected payments of skipping or paying in the first
        round when playing ``second_round`` afterwards; ``round2_payment``,
        the expected second-round payment of a first-round non-payer given
        survival; and ``boundary``, the first position where not paying is
        a best response
    """
    if x0 > MAX_W2_AGENTS:
        raise ResourceLimitError(f"Enumeration is limited to {MAX_W2_AGENTS} agents, got {x0}.")
    rule = second_round if second_round is not None else _critical_rule(F, Q, p, k)
    if profile is None:
        r21 = critical_position_w2_first(F, Q, p, k)
        profile = [
            F if r21 is UNBOUNDED or n < r21 else 0  # type: ignore[operator]
            for n in range(1, x0 + 1)
        ]
    intents = _check_intents(profile, x0, F)
    actions = tuple(actions) if actions is not None else (0, F)

    expected = np.array(_expected_w2(intents, rule, F, Q, p, k)[0])
    deviations = np.zeros((x0, len(actions), len(actions)))
    not_paying = np.zeros(x0)
    paying = np.zeros(x0)
    round2 = np.zeros(x0)
    for agent in range(x0):
        for row, first in enumerate(actions):
            deviated = list(intents)
            deviated[agent] = first
            for column, second in enumerate(actions):
                costs, _, _ = _expected_w2(deviated, rule, F, Q, p, k, agent, second)
                deviations[agent, row, column] = costs[agent]

        for first, target in ((0, not_paying), (F, paying)):
            deviated = list(intents)
            deviated[agent] = first
            costs, _, conditional = _expected_w2(deviated, rule, F, Q, p, k, agent)
            target[agent] = costs[agent]
            if first == 0:
                round2[agent] = conditional

    best_response_skip = not_paying <= paying + 1e-12
    boundary = int(np.argmax(best_response_skip)) + 1 if best_response_skip.any() else None

    result = Bunch()
    result.positions = np.arange(1, x0 + 1)
    result.intents = np.array(intents)
    result.expected = expected
    result.actions = actions
    result.deviation_payments = deviations
    result.deviation_gain = (
        np.maximum(0.0, expected - deviations.reshape(x0, -1).min(axis=1)) if x0 else np.zeros(0)
    )
    result.not_paying = not_paying
    result.paying = paying
    result.round2_payment = round2
    result.boundary = boundary
    return result


def coalition_gain(member_payments: Sequence[int], F: float, Q: float, p: float) -> Bunch:
    """Shared cost of a cost-sharing coalition and the gain of its deviator.

    Members play ``sigma^0`` and split their total payment equally. When the
    shared cost ``u`` is positive one member gains by leaving:

        - ``0 < u < Q``: the last member to terminate without punishment pays
          nothing on its own, so leaving gains ``u - m_last``.
        - ``u = Q``: everyone is punished; a member paying ``F`` instead gains
          ``(1 - p)(Q - F)``.

    :param member_payments: Final payment of every member, in termination order
    """
    if len(member_payments) == 0:
        raise ValidationError("Coalition must have at least one member.")
    shared = math.fsum(member_payments) / len(member_payments)

    result = Bunch(shared_cost=shared, gain=0.0, case="none")
    if shared <= 0:
        return result
    unpunished = [m for m in member_payments if m < Q]
    if unpunished:
        result.gain = shared - unpunished[-1]
        result.case = "last_leaves"
    else:
        result.gain = (1 - p) * (Q - F)
        result.case = "pay_fine"
    return result


def check_members(
    config: QueueConfig, coalition_size: int, members: Optional[Sequence[int]]
) -> List[int]:
    """Validate coalition member positions; default to the front of the queue."""
    if coalition_size < 1:
        raise ValidationError(f"Coalition size must be at least 1, got {coalition_size}.")
    if coalition_size > config.x0:
        raise ValidationError(
            f"Coalition size {coalition_size} exceeds the population x0={config.x0}."
        )
    if members is None:
        positions = list(range(1, coalition_size + 1))
    else:
        positions = [int(n) for n in members]
    if len(set(positions)) != coalition_size or any(not 1 <= n <= config.x0 for n in positions):
        raise ValidationError(
            f"Coalition needs {coalition_size} distinct positions within 1..{config.x0}."
        )
    return positions


def coalition_analysis(
    config: QueueConfig, coalition_size: int, members: Optional[Sequence[int]] = None
) -> Bunch:
    """Exact coalition accounting in the one-sorting game.

    Members (positions ``members``, the front of the queue by default) play
    ``sigma^0``; everyone else plays the critical strategy.

    :return: Expected shared cost, expected deviation gain, the smallest gain
        over realisations with positive shared cost and the number of such
        realisations without a positive gain
    """
    positions = check_members(config, coalition_size, members)
    if config.x0 > MAX_W1_AGENTS:
        raise ResourceLimitError(
            f"Enumeration is limited to {MAX_W1_AGENTS} agents, got {config.x0}."
        )
    F, Q, p, k = config.F, config.Q, config.p, config.k
    rule = _critical_rule(F, Q, p, k)
    member_agents = {n - 1 for n in positions}
    intents = {
        agent: 0 if agent in member_agents else rule(agent + 1) for agent in range(config.x0)
    }
    queue = [(agent, 0, 0) for agent in range(config.x0)]

    shared: List[float] = []
    gains: List[float] = []
    positive: List[float] = []
    min_gain: Optional[float] = None
    violations = 0
    for weight, paid in _patterns(intents, p):
        _, terminals = _play(queue, paid, F, Q, k, T=1)
        outcome = coalition_gain([m for agent, m in terminals if agent in member_agents], F, Q, p)
        shared.append(weight * outcome.shared_cost)
        gains.append(weight * outcome.gain)
        if outcome.shared_cost > 0:
            positive.append(weight)
            min_gain = outcome.gain if min_gain is None else min(min_gain, outcome.gain)
            violations += int(outcome.gain <= 0)

    report = Bunch()
    report.method = "exact"
    report.coalition_size = coalition_size
    report.members = positions
    report.shared_cost = math.fsum(shared)
    report.best_deviation_gain = math.fsum(gains)
    report.probability_positive = math.fsum(positive)
    report.min_gain_when_positive = min_gain
    report.violations = violations
    return report
