"""Tiny actor and critic networks in numpy.

Both networks are fully connected with rectified-linear hidden layers and a
linear output layer. Weights of a layer have shape ``(fan_in, fan_out)`` so a
batch of inputs ``X`` of shape ``(batch, fan_in)`` maps to ``X @ W + b``.

The actor outputs one logit per payment ``0..F``. Payments that would bring
the total above ``F`` are masked: their probability is exactly 0.
"""

import dataclasses
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from ..config import QueueConfig
from ..exceptions import InvariantError, ValidationError
from ..game.core import Observation, Observations
from ..streams import make_rng
from ..typing import Float1D, Float2D, Int1D

logger = logging.getLogger(__name__)

#: Hidden layer sizes of the actor.
ACTOR_HIDDEN = (4, 4)
#: Hidden layer sizes of the critic.
CRITIC_HIDDEN = (32, 32, 32)
#: Size of the scaled observation ``(n, t, m)``.
N_INPUTS = 3

Layers = List[npt.NDArray[np.float64]]


@dataclasses.dataclass(eq=False)
class PolicyParams:
    """Weights of the actor and the critic plus observation scaling constants.

    :param actor_weights: Actor weight matrices, input first
    :param actor_biases: Actor bias vectors
    :param critic_weights: Critic weight matrices, input first
    :param critic_biases: Critic bias vectors
    :param n_scale: Divisor of the position
    :param t_scale: Divisor of the rounds played
    :param m_scale: Divisor of the amount paid, equal to ``F``
    """

    actor_weights: Layers
    actor_biases: Layers
    critic_weights: Layers
    critic_biases: Layers
    n_scale: float
    t_scale: float
    m_scale: float

    def __post_init__(self) -> None:
        """Validate shapes and values."""
        for name, weights, biases, n_out in (
            ("actor", self.actor_weights, self.actor_biases, None),
            ("critic", self.critic_weights, self.critic_biases, 1),
        ):
            _check_layers(name, weights, biases, n_out)
        if self.actor_weights[-1].shape[1] < 1:
            raise ValidationError("Actor must have at least one output.")
        if min(self.n_scale, self.t_scale, self.m_scale) <= 0:
            raise ValidationError("Observation scaling constants must be positive.")

    @property
    def F(self) -> int:
        """Largest payment the actor can choose."""
        return int(self.actor_weights[-1].shape[1]) - 1

    def copy(self) -> "PolicyParams":
        """Return a deep copy."""
        return PolicyParams(
            actor_weights=[w.copy() for w in self.actor_weights],
            actor_biases=[b.copy() for b in self.actor_biases],
            critic_weights=[w.copy() for w in self.critic_weights],
            critic_biases=[b.copy() for b in self.critic_biases],
            n_scale=self.n_scale,
            t_scale=self.t_scale,
            m_scale=self.m_scale,
        )

    def scale(self, n: Int1D, t: Int1D, m: Int1D) -> Float2D:
        """Scale raw observations into network inputs."""
        return np.column_stack(
            [
                np.asarray(n, dtype=np.float64) / self.n_scale,
                np.asarray(t, dtype=np.float64) / self.t_scale,
                np.asarray(m, dtype=np.float64) / self.m_scale,
            ]
        )


def _check_layers(name: str, weights: Layers, biases: Layers, n_out: Optional[int]) -> None:
    if len(weights) == 0 or len(weights) != len(biases):
        raise ValidationError(f"The {name} needs one bias per weight matrix.")
    fan_in = N_INPUTS
    for index, (w, b) in enumerate(zip(weights, biases)):
        if w.ndim != 2 or w.shape[0] != fan_in or b.shape != (w.shape[1],):
            raise ValidationError(
                f"Layer {index} of the {name} has shapes {w.shape} and {b.shape}, "
                f"expected ({fan_in}, n) and (n,)."
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValidationError(f"Layer {index} of the {name} has non-finite weights.")
        fan_in = w.shape[1]
    if n_out is not None and fan_in != n_out:
        raise ValidationError(f"The {name} must have {n_out} output(s), got {fan_in}.")


def _init_layers(
    sizes: Sequence[int], rng: np.random.Generator
) -> Tuple[Layers, Layers]:
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return weights, biases


def init_policy(
    config: QueueConfig,
    rng: Optional[np.random.Generator] = None,
    actor_hidden: Sequence[int] = ACTOR_HIDDEN,
    critic_hidden: Sequence[int] = CRITIC_HIDDEN,
) -> PolicyParams:
    """Initialize a policy for ``config``.

    Weights and biases of every layer are uniform in ``[-1/sqrt(fan_in),
    1/sqrt(fan_in)]``.
    """
    rng = make_rng(config.seed, "init") if rng is None else rng
    actor_weights, actor_biases = _init_layers(
        [N_INPUTS, *actor_hidden, config.F + 1], rng
    )
    critic_weights, critic_biases = _init_layers([N_INPUTS, *critic_hidden, 1], rng)
    n_scale, t_scale, m_scale = scaling_constants(config)
    return PolicyParams(
        actor_weights, actor_biases, critic_weights, critic_biases, n_scale, t_scale, m_scale
    )


def zero_policy(config: QueueConfig) -> PolicyParams:
    """Policy with all weights zero; the actor is uniform over feasible payments."""
    params = init_policy(config)
    for layer in (*params.actor_weights, *params.actor_biases):
        layer[...] = 0.0
    return params


def scaling_constants(config: QueueConfig) -> Tuple[float, float, float]:
    """Divisors of ``(n, t, m)``: the largest queue, ``T`` and ``F``."""
    return float(max(config.max_queue, 1)), float(config.T), float(config.F)


def scale_observation(
    obs: Union[Observation, Observations], config: QueueConfig
) -> Union[Float1D, Float2D]:
    """Scale an observation to ``(n / (x0 + x T), t / T, m / F)``.

    .. rubric:: Examples

    >>> from finequeue import QueueConfig
    >>> from finequeue.game import Observation
    >>> from finequeue.learner.network import scale_observation
    >>> scale_observation(Observation(n=32, t=2, m=2), QueueConfig())
    array([0.2, 0.5, 0.5])

    """
    n_scale, t_scale, m_scale = scaling_constants(config)
    if isinstance(obs, Observation):
        return np.array([obs.n / n_scale, obs.t / t_scale, obs.m / m_scale])
    return np.column_stack([obs.n / n_scale, obs.t / t_scale, obs.m / m_scale])


def mlp_forward(weights: Layers, biases: Layers, X: Float2D) -> Tuple[Float2D, Layers]:
    """Forward pass; return the output and the input of every layer."""
    activations = [X]
    h = X
    for index, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w + b
        if index < len(weights) - 1:
            h = np.maximum(h, 0.0)
        activations.append(h)
    return h, activations[:-1]


def mlp_backward(
    weights: Layers, activations: Layers, grad_out: Float2D
) -> Tuple[Layers, Layers]:
    """Backward pass; return gradients of weights and biases given ``dL/d output``."""
    grad_w: Layers = [np.zeros_like(w) for w in weights]
    grad_b: Layers = [np.zeros(w.shape[1]) for w in weights]
    delta = grad_out
    for index in range(len(weights) - 1, -1, -1):
        grad_w[index] = activations[index].T @ delta
        grad_b[index] = delta.sum(axis=0)
        if index > 0:
            delta = (delta @ weights[index].T) * (activations[index] > 0)
    return grad_w, grad_b


def feasible_mask(m: Int1D, F: int) -> npt.NDArray[np.bool_]:
    """Payments ``0..F - m`` are feasible for an agent that paid ``m``."""
    m = np.asarray(m, dtype=np.int64)
    return np.arange(F + 1)[np.newaxis, :] <= (F - m)[:, np.newaxis]


def masked_softmax(logits: Float2D, mask: npt.NDArray[np.bool_]) -> Float2D:
    """Softmax over the unmasked entries of every row."""
    if not np.all(mask.any(axis=1)):
        raise InvariantError("An agent has no feasible payment.")
    shifted = np.where(mask, logits, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    exp = np.where(mask, np.exp(shifted), 0.0)
    return exp / exp.sum(axis=1, keepdims=True)


def actor_forward(
    params: PolicyParams, scaled_obs: Float2D, m: Int1D, F: Optional[int] = None
) -> Float2D:
    """Masked action distributions, one row per observation.

    :param scaled_obs: Network inputs of shape ``(batch, 3)``
    :param m: Amount paid so far of every agent
    :param F: Fine; must match the actor output size
    """
    F = params.F if F is None else F
    if F != params.F:
        raise ValidationError(f"Policy was built for F={params.F}, got F={F}.")
    logits, _ = mlp_forward(params.actor_weights, params.actor_biases, np.atleast_2d(scaled_obs))
    return masked_softmax(logits, feasible_mask(m, F))


def critic_forward(params: PolicyParams, scaled_obs: Float2D) -> Float1D:
    """State values, one per observation."""
    values, _ = mlp_forward(params.critic_weights, params.critic_biases, np.atleast_2d(scaled_obs))
    return values[:, 0]


def flatten(weights: Layers, biases: Layers) -> Float1D:
    """Concatenate layers into one vector."""
    return np.concatenate([array.ravel() for pair in zip(weights, biases) for array in pair])


def unflatten(vector: Float1D, weights: Layers, biases: Layers) -> Tuple[Layers, Layers]:
    """Split ``vector`` into layers shaped like ``weights`` and ``biases``."""
    new_weights, new_biases = [], []
    offset = 0
    for w, b in zip(weights, biases):
        new_weights.append(vector[offset : offset + w.size].reshape(w.shape))
        offset += w.size
        new_biases.append(vector[offset : offset + b.size].reshape(b.shape))
        offset += b.size
    return new_weights, new_biases
