"""Best response by proximal policy optimization.

One best-response iteration starts from the current policy and repeats
``n_epochs`` cycles of:

    - play queues in which every agent follows the current policy and store
      the trajectories of terminal agents (reward 0 on every step but the
      last, where it is the negative total payment);
    - estimate advantages with GAE and take ``n_train`` gradient steps on
      shuffled minibatches: the actor maximizes the clipped surrogate plus an
      entropy bonus, the critic regresses the returns.

Gradients are computed analytically (see :mod:`finequeue.learner.network`).
"""

import dataclasses
import logging
import numbers
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.utils import Bunch
from sklearn.utils.validation import check_scalar

from ..config import QueueConfig
from ..exceptions import TrainingDivergedError, ValidationError
from ..game.core import EpisodeLog, run_queue
from ..game.strategies import PolicyStrategy, Profile
from ..streams import make_rng
from ..typing import Float1D, Float2D, Int1D
from .network import (
    Layers,
    PolicyParams,
    critic_forward,
    feasible_mask,
    flatten,
    init_policy,
    masked_softmax,
    mlp_backward,
    mlp_forward,
    unflatten,
)

logger = logging.getLogger(__name__)

#: Collection gives up after this many episodes without filling the buffer.
MAX_COLLECT_EPISODES = 10_000

LEARNER_TAG = "learner"
OPPONENT_TAG = "opponent"


@dataclasses.dataclass(frozen=True)
class Hyperparams:
    """Hyperparameters of the learning algorithm.

    :param clip: Clipping range of the probability ratio
    :param gamma: Discount
    :param lam: GAE parameter
    :param n_train: Minibatch updates per cycle
    :param n_epochs: Collect-and-update cycles per best-response iteration
    :param buffer_size: Transitions collected per cycle
    :param actor_lr: Actor step size
    :param critic_lr: Critic step size
    :param entropy_coef: Weight of the entropy bonus
    :param max_grad_norm: Gradient norm limit, applied to each network
    :param normalize_advantages: Standardize advantages in every update
    :param optimizer: ``"sgd"`` or ``"adam"``
    """

    clip: float = 0.05
    gamma: float = 1.0
    lam: float = 0.95
    n_train: int = 16
    n_epochs: int = 512
    buffer_size: int = 10_000
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    entropy_coef: float = 1e-3
    max_grad_norm: float = 0.1
    normalize_advantages: bool = True
    optimizer: str = "sgd"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        """Validate hyperparameters."""
        try:
            check_scalar(
                self.clip, "clip", numbers.Real, min_val=0, max_val=1, include_boundaries="neither"
            )
            check_scalar(
                self.gamma, "gamma", numbers.Real, min_val=0, max_val=1, include_boundaries="right"
            )
            check_scalar(
                self.lam, "lam", numbers.Real, min_val=0, max_val=1, include_boundaries="right"
            )
            check_scalar(self.n_train, "n_train", numbers.Integral, min_val=1)
            check_scalar(self.n_epochs, "n_epochs", numbers.Integral, min_val=1)
            check_scalar(self.buffer_size, "buffer_size", numbers.Integral, min_val=1)
            for name in ("actor_lr", "critic_lr", "entropy_coef", "max_grad_norm", "adam_eps"):
                check_scalar(
                    getattr(self, name),
                    name,
                    numbers.Real,
                    min_val=0,
                    include_boundaries="neither",
                )
            for name in ("adam_beta1", "adam_beta2"):
                check_scalar(
                    getattr(self, name),
                    name,
                    numbers.Real,
                    min_val=0,
                    max_val=1,
                    include_boundaries="left",
                )
        except (TypeError, ValueError) as error:
            raise ValidationError(str(error)) from error
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"Optimizer must be 'sgd' or 'adam', got {self.optimizer!r}.")

    def replace(self, **changes: Any) -> "Hyperparams":
        """Return a copy with ``changes`` applied (and validated)."""
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        """Return the hyperparameters as a plain dictionary."""
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "Hyperparams":
        """Build from a dictionary, rejecting unknown keys."""
        known = {field.name for field in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValidationError(f"Unknown learner parameter(s): {', '.join(unknown)}.")
        return cls(**values)


@dataclasses.dataclass(eq=False)
class TrajectoryBuffer:
    """Transitions of complete trajectories of terminal agents.

    Transitions of one trajectory are stored consecutively in time order;
    ``steps_to_end`` is 0 at the last step of every trajectory.
    """

    capacity: int
    obs: Float2D = dataclasses.field(default_factory=lambda: np.zeros((0, 3)))
    m: Int1D = dataclasses.field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    actions: Int1D = dataclasses.field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    log_probs: Float1D = dataclasses.field(default_factory=lambda: np.zeros(0))
    rewards: Float1D = dataclasses.field(default_factory=lambda: np.zeros(0))
    values: Float1D = dataclasses.field(default_factory=lambda: np.zeros(0))
    steps_to_end: Int1D = dataclasses.field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    advantages: Optional[Float1D] = None
    returns: Optional[Float1D] = None

    def __len__(self) -> int:
        """Number of transitions."""
        return len(self.actions)

    @property
    def full(self) -> bool:
        """Whether the buffer reached its capacity."""
        return len(self) >= self.capacity

    @property
    def n_trajectories(self) -> int:
        """Number of stored trajectories."""
        return int(np.sum(self.steps_to_end == 0))

    def extend(self, batch: Dict[str, np.ndarray]) -> bool:
        """Append whole trajectories from ``batch`` while they fit.

        :return: False once a trajectory did not fit
        """
        ends = np.flatnonzero(batch["steps_to_end"] == 0)
        room = self.capacity - len(self)
        fitting = ends[ends < room]
        keep = int(fitting[-1]) + 1 if len(fitting) else 0
        for name in ("obs", "m", "actions", "log_probs", "rewards", "values", "steps_to_end"):
            setattr(self, name, np.concatenate([getattr(self, name), batch[name][:keep]]))
        self.advantages = self.returns = None
        return keep == len(batch["actions"])

    def finalize(self, gamma: float, lam: float) -> None:
        """Compute advantages and returns."""
        self.advantages = gae_batch(self.rewards, self.values, self.steps_to_end, gamma, lam)
        self.returns = self.advantages + self.values


def gae(rewards: Float1D, values: Float1D, gamma: float, lam: float) -> Float1D:
    """Generalized advantage estimates of one trajectory ending in a terminal state.

    ``delta_t = r_t + gamma V(s_{t+1}) - V(s_t)`` and
    ``A_t = delta_t + gamma lam A_{t+1}``, with ``V = 0`` after the last step.

    .. rubric:: Examples

    >>> from finequeue.learner.ppo import gae
    >>> gae([0.0, 0.0, -4.0], [-3.0, -3.0, -3.0], gamma=1.0, lam=0.95)
    array([-0.9025, -0.95  , -1.    ])

    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ValidationError(
            f"Rewards and values differ in length: {len(rewards)} and {len(values)}."
        )
    steps_to_end = np.arange(len(rewards) - 1, -1, -1)
    return gae_batch(rewards, values, steps_to_end, gamma, lam)


def gae_batch(
    rewards: Float1D, values: Float1D, steps_to_end: Int1D, gamma: float, lam: float
) -> Float1D:
    """GAE over consecutive trajectories, vectorized over steps to the end."""
    advantages = np.zeros(len(rewards))
    if len(rewards) == 0:
        return advantages
    next_values = np.where(steps_to_end > 0, np.roll(values, -1), 0.0)
    deltas = rewards + gamma * next_values - values
    for distance in range(int(steps_to_end.max()) + 1):
        index = np.flatnonzero(steps_to_end == distance)
        advantages[index] = deltas[index]
        if distance > 0:
            advantages[index] += gamma * lam * advantages[index + 1]
    return advantages


def episode_trajectories(
    log: EpisodeLog, params: PolicyParams, tag: Optional[int] = None
) -> Dict[str, np.ndarray]:
    """Trajectories of all agents of an episode (or of agents with ``tag``).

    Trajectories are ordered by agent id and steps by round.
    """
    decisions, rounds = log.decisions()
    terminals, _ = log.terminals()
    keep = np.ones(len(decisions.ids), dtype=bool) if tag is None else decisions.tags == tag
    order = np.flatnonzero(keep)[np.lexsort((rounds[keep], decisions.ids[keep]))]

    ids = decisions.ids[order]
    unique_ids, starts, counts = np.unique(ids, return_index=True, return_counts=True)
    steps_to_end = np.repeat(starts + counts, counts) - 1 - np.arange(len(ids))

    terminal_order = np.argsort(terminals.ids)
    sorted_ids = terminals.ids[terminal_order]
    final_m = terminals.m[terminal_order][np.searchsorted(sorted_ids, unique_ids)]
    rewards = np.zeros(len(ids))
    rewards[starts + counts - 1] = -final_m

    obs = params.scale(decisions.n[order], decisions.t[order], decisions.m[order])
    with np.errstate(divide="ignore"):
        log_probs = np.log(decisions.declared_prob[order])
    return {
        "obs": obs,
        "m": decisions.m[order],
        "actions": decisions.declared[order],
        "log_probs": log_probs,
        "rewards": rewards,
        "values": critic_forward(params, obs) if len(ids) else np.zeros(0),
        "steps_to_end": steps_to_end.astype(np.int64),
    }


def collect(
    policy: PolicyParams,
    config: QueueConfig,
    capacity: int,
    seed: Optional[int] = None,
    key: Tuple[int, ...] = (0,),
    opponent: Optional[PolicyParams] = None,
    learner_fraction: Optional[float] = None,
) -> TrajectoryBuffer:
    """Play queues with ``policy`` until the buffer holds ``capacity`` transitions.

    :param seed: Master seed, ``config.seed`` by default
    :param key: Stream key of this collection (e.g. iteration and cycle)
    :param opponent: With ``learner_fraction``, the policy of the other agents
    :param learner_fraction: Fraction of entering agents that follow
        ``policy``; only their trajectories are stored. All agents follow
        ``policy`` when omitted.
    """
    seed = config.seed if seed is None else seed
    if config.x0 == 0 and config.x == 0:
        raise ValidationError("Cannot collect trajectories from an empty queue.")

    learner = PolicyStrategy(policy, name=LEARNER_TAG)
    if learner_fraction is None:
        profile = Profile.single(learner, tag=LEARNER_TAG)
    else:
        if not 0.0 < learner_fraction <= 1.0:
            raise ValidationError(f"Learner fraction must be in (0, 1], got {learner_fraction}.")
        if opponent is None:
            raise ValidationError("A learner fraction requires an opponent policy.")
        profile = Profile.mixture(
            {LEARNER_TAG: learner, OPPONENT_TAG: PolicyStrategy(opponent, name=OPPONENT_TAG)},
            {LEARNER_TAG: learner_fraction, OPPONENT_TAG: 1.0 - learner_fraction},
        )

    buffer = TrajectoryBuffer(capacity=capacity)
    for episode in range(MAX_COLLECT_EPISODES):
        log = run_queue(
            config,
            profile,
            rng=make_rng(seed, "collect", *key, episode, "play"),
            tag_rng=make_rng(seed, "collect", *key, episode, "tags"),
            seed=seed,
        )
        batch = episode_trajectories(log, policy, tag=0)
        if not buffer.extend(batch) or buffer.full:
            break
    else:
        logger.warning(
            "Buffer holds %d of %d transitions after %d episodes.",
            len(buffer),
            capacity,
            MAX_COLLECT_EPISODES,
        )
    return buffer


def actor_loss_and_grads(
    params: PolicyParams,
    obs: Float2D,
    m: Int1D,
    actions: Int1D,
    old_log_probs: Float1D,
    advantages: Float1D,
    hyper: Hyperparams,
) -> Tuple[float, Layers, Layers, float]:
    """Clipped surrogate loss with entropy bonus and its gradients.

    :return: Loss, weight gradients, bias gradients and mean entropy
    """
    size = len(actions)
    logits, activations = mlp_forward(params.actor_weights, params.actor_biases, obs)
    probs = masked_softmax(logits, feasible_mask(m, params.F))
    rows = np.arange(size)

    with np.errstate(divide="ignore"):
        log_probs = np.where(probs > 0, np.log(np.where(probs > 0, probs, 1.0)), 0.0)
    ratio = np.exp(log_probs[rows, actions] - old_log_probs)
    clipped = np.clip(ratio, 1 - hyper.clip, 1 + hyper.clip)
    surrogate = np.minimum(ratio * advantages, clipped * advantages)
    entropy = -np.sum(probs * log_probs, axis=1)
    loss = -surrogate.mean() - hyper.entropy_coef * entropy.mean()

    # Gradient flows through the unclipped branch only where it is the minimum.
    active = ratio * advantages <= clipped * advantages
    weight = np.where(active, advantages, 0.0) * ratio
    one_hot = np.zeros_like(probs)
    one_hot[rows, actions] = 1.0
    grad_logits = -(weight / size)[:, np.newaxis] * (one_hot - probs)
    grad_logits += (hyper.entropy_coef / size) * probs * (log_probs + entropy[:, np.newaxis])

    grad_w, grad_b = mlp_backward(params.actor_weights, activations, grad_logits)
    return float(loss), grad_w, grad_b, float(entropy.mean())


def critic_loss_and_grads(
    params: PolicyParams, obs: Float2D, returns: Float1D
) -> Tuple[float, Layers, Layers]:
    """Mean squared error of the values and its gradients."""
    values, activations = mlp_forward(params.critic_weights, params.critic_biases, obs)
    error = values[:, 0] - returns
    loss = float(np.mean(error**2))
    grad_out = (2.0 * error / len(returns))[:, np.newaxis]
    grad_w, grad_b = mlp_backward(params.critic_weights, activations, grad_out)
    return loss, grad_w, grad_b


def clip_gradients(grad_w: Layers, grad_b: Layers, max_norm: float) -> float:
    """Scale gradients in place to a global norm of at most ``max_norm``.

    :return: Norm before clipping
    """
    norm = float(np.sqrt(sum(np.sum(g**2) for g in (*grad_w, *grad_b))))
    if norm > max_norm:
        scale = max_norm / norm
        for g in (*grad_w, *grad_b):
            g *= scale
    return norm


class Optimizer:
    """Plain gradient steps or Adam on one network."""

    def __init__(self, hyper: Hyperparams, lr: float) -> None:
        """Initialize class."""
        self.hyper = hyper
        self.lr = lr
        self.step_count = 0
        self.first_moment: Optional[Float1D] = None
        self.second_moment: Optional[Float1D] = None

    def step(self, weights: Layers, biases: Layers, grad_w: Layers, grad_b: Layers) -> None:
        """Update ``weights`` and ``biases`` in place."""
        if self.hyper.optimizer == "sgd":
            for param, grad in zip((*weights, *biases), (*grad_w, *grad_b)):
                param -= self.lr * grad
            return

        grad = flatten(grad_w, grad_b)
        if self.first_moment is None or self.second_moment is None:
            self.first_moment = np.zeros_like(grad)
            self.second_moment = np.zeros_like(grad)
        self.step_count += 1
        beta1, beta2 = self.hyper.adam_beta1, self.hyper.adam_beta2
        self.first_moment = beta1 * self.first_moment + (1 - beta1) * grad
        self.second_moment = beta2 * self.second_moment + (1 - beta2) * grad**2
        m_hat = self.first_moment / (1 - beta1**self.step_count)
        v_hat = self.second_moment / (1 - beta2**self.step_count)
        update = self.lr * m_hat / (np.sqrt(v_hat) + self.hyper.adam_eps)
        delta_w, delta_b = unflatten(update, weights, biases)
        for param, delta in zip((*weights, *biases), (*delta_w, *delta_b)):
            param -= delta


def ppo_update(
    buffer: TrajectoryBuffer,
    params: PolicyParams,
    hyper: Hyperparams,
    rng: np.random.Generator,
    optimizers: Optional[Tuple[Optimizer, Optimizer]] = None,
) -> Tuple[PolicyParams, Bunch]:
    """Run ``n_train`` minibatch updates of actor and critic on ``buffer``.

    :param optimizers: Actor and critic optimizers, kept across cycles for Adam
    :return: Updated copy of ``params`` and mean losses, entropy and gradient
        norms
    """
    if len(buffer) == 0:
        raise ValidationError("Cannot update on an empty buffer.")
    if buffer.advantages is None or buffer.returns is None:
        buffer.finalize(hyper.gamma, hyper.lam)
    assert buffer.advantages is not None and buffer.returns is not None

    params = params.copy()
    if optimizers is None:
        optimizers = (Optimizer(hyper, hyper.actor_lr), Optimizer(hyper, hyper.critic_lr))
    actor_optimizer, critic_optimizer = optimizers

    advantages = buffer.advantages
    if hyper.normalize_advantages and len(advantages) > 1:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    history: Dict[str, List[float]] = {
        "actor_loss": [],
        "critic_loss": [],
        "entropy": [],
        "actor_grad_norm": [],
        "critic_grad_norm": [],
    }
    for batch in np.array_split(rng.permutation(len(buffer)), hyper.n_train):
        if len(batch) == 0:
            continue
        actor_loss, actor_w, actor_b, entropy = actor_loss_and_grads(
            params,
            buffer.obs[batch],
            buffer.m[batch],
            buffer.actions[batch],
            buffer.log_probs[batch],
            advantages[batch],
            hyper,
        )
        critic_loss, critic_w, critic_b = critic_loss_and_grads(
            params, buffer.obs[batch], buffer.returns[batch]
        )
        actor_norm = clip_gradients(actor_w, actor_b, hyper.max_grad_norm)
        critic_norm = clip_gradients(critic_w, critic_b, hyper.max_grad_norm)

        if not np.all(np.isfinite([actor_loss, critic_loss, actor_norm, critic_norm])):
            raise TrainingDivergedError(
                "Non-finite loss in policy optimization.",
                diagnostics={
                    "actor_loss": actor_loss,
                    "critic_loss": critic_loss,
                    "actor_grad_norm": actor_norm,
                    "critic_grad_norm": critic_norm,
                },
            )

        actor_optimizer.step(params.actor_weights, params.actor_biases, actor_w, actor_b)
        critic_optimizer.step(params.critic_weights, params.critic_biases, critic_w, critic_b)
        values = (actor_loss, critic_loss, entropy, actor_norm, critic_norm)
        for name, value in zip(history, values):
            history[name].append(value)

    stats = Bunch(**{name: float(np.mean(values)) for name, values in history.items()})
    return params, stats


def best_response_iterate(
    policy: PolicyParams,
    config: QueueConfig,
    hyper: Hyperparams,
    seed: Optional[int] = None,
    iteration: int = 0,
    learner_fraction: Optional[float] = None,
    checkpoint_dir: Optional[Union[str, Path]] = None,
) -> PolicyParams:
    """One outer iteration: approximate a best response to ``policy``.

    Training starts from the weights of ``policy``. With ``learner_fraction``
    the other agents keep following ``policy`` while the learner trains.

    :param iteration: Index ``tau`` of ``policy``; the result is saved as
        ``policy-<tau + 1>.json`` in ``checkpoint_dir``
    """
    from ..serialization import write_checkpoint

    seed = config.seed if seed is None else seed
    current = policy.copy()
    opponent = policy if learner_fraction is not None else None
    optimizers = (Optimizer(hyper, hyper.actor_lr), Optimizer(hyper, hyper.critic_lr))

    for cycle in range(hyper.n_epochs):
        buffer = collect(
            current,
            config,
            hyper.buffer_size,
            seed=seed,
            key=(iteration, cycle),
            opponent=opponent,
            learner_fraction=learner_fraction,
        )
        try:
            current, stats = ppo_update(
                buffer, current, hyper, make_rng(seed, "shuffle", iteration, cycle), optimizers
            )
        except TrainingDivergedError as error:
            error.diagnostics.update(iteration=iteration, cycle=cycle)
            logger.error("Training diverged at iteration %d, cycle %d.", iteration, cycle)
            raise
        logger.debug(
            "Iteration %d cycle %d: %d transitions, "
            "actor loss %.6g, critic loss %.6g, entropy %.4f",
            iteration,
            cycle,
            len(buffer),
            stats.actor_loss,
            stats.critic_loss,
            stats.entropy,
        )

    if checkpoint_dir is not None:
        path = Path(checkpoint_dir) / f"policy-{iteration + 1}.json"
        write_checkpoint(current, path, hyper=hyper.to_dict(), iteration=iteration + 1, seed=seed)
    return current


def train(
    config: QueueConfig,
    hyper: Hyperparams,
    iterations: int,
    seed: Optional[int] = None,
    rho: float = 0.05,
    episodes: int = 100,
    learner_fraction: Optional[float] = None,
    checkpoint_dir: Optional[Union[str, Path]] = None,
    n_jobs: Optional[int] = None,
) -> Bunch:
    """Iterate best responses and measure NashConv after every iteration.

    :return: ``policy`` (the last one), ``history`` with one row per
        iteration and ``status``, ``"complete"`` or ``"diverged"``
    """
    from ..evaluation import nashconv
    from ..serialization import write_checkpoint

    seed = config.seed if seed is None else seed
    policy = init_policy(config, make_rng(seed, "init"))
    if checkpoint_dir is not None:
        write_checkpoint(
            policy,
            Path(checkpoint_dir) / "policy-0.json",
            hyper=hyper.to_dict(),
            iteration=0,
            seed=seed,
        )

    rows = []
    status = "complete"
    for iteration in range(iterations):
        try:
            new_policy = best_response_iterate(
                policy, config, hyper, seed, iteration, learner_fraction, checkpoint_dir
            )
        except TrainingDivergedError as error:
            logger.error("Stopping training: %s %s", error, error.diagnostics)
            status = "diverged"
            break
        estimate = nashconv(
            PolicyStrategy(policy, name="old"),
            PolicyStrategy(new_policy, name="new"),
            rho,
            config,
            episodes,
            seed=seed,
            key=("nashconv", iteration),
            n_jobs=n_jobs,
        )
        rows.append((seed, iteration + 1, estimate.mean, estimate.stderr, estimate.episodes))
        logger.info(
            "Iteration %d: NashConv %.6g +/- %.2g", iteration + 1, estimate.mean, estimate.stderr
        )
        policy = new_policy

    result = Bunch()
    result.policy = policy
    result.status = status
    result.history = pd.DataFrame(
        rows, columns=["seed", "iteration", "nashconv", "stderr", "episodes"]
    )
    return result
