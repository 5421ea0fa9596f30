"""Loss terms for the adversarial reconstruction objective.

Generator: L_G = alpha * (-E[D(y|x)]) + beta * L_ce + gamma * L_sparse, where
L_ce is the occupancy-ratio-weighted cross entropy summed (not averaged) over
voxels and L_sparse the L1 norm of the predicted grid. Critic: Wasserstein
difference plus the gradient penalty driving the critic's input-gradient norm
toward 1 at random interpolates between real and generated grids.

Everything differentiable is composed from autograd ops; independent scalar
oracles live in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, absolute, backward, custom_op, tsum
from .errors import ShapeMismatchError

__all__ = [
    "LossWeights", "LOG_CLIP", "gen_adversarial_loss", "critic_loss",
    "weighted_bce", "sparsity_loss", "total_losses",
    "interpolate_grids", "critic_input_gradient", "gradient_penalty",
    "GradientPenaltyParts",
]

# mirrors the open (0,1) sigmoid range; the paper never addresses log(0)
LOG_CLIP = 1e-7


@dataclass
class LossWeights:
    alpha: float = 20.0
    beta: float = 100.0
    gamma: float = 20.0
    lambda_gp: float = 5.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lambda_gp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def _mean_of(scores):
    """Arithmetic mean of scalar Tensors/floats, staying differentiable."""
    scores = list(scores)
    if not scores:
        raise ValueError("need at least one score")
    total = scores[0]
    for s in scores[1:]:
        total = total + s
    return total * (1.0 / len(scores))


def gen_adversarial_loss(scores):
    """Negative mean critic score on generated grids."""
    return -_mean_of(scores)


def critic_loss(d_fake, d_real, penalty):
    """mean(D on fakes) - mean(D on reals) + gradient penalty."""
    return _mean_of(d_fake) - _mean_of(d_real) + penalty


def weighted_bce(y, y_hat):
    """Occupancy-weighted binary cross entropy, summed over all voxels.

    y: predicted grid Tensor with values in [0,1]; y_hat: binary ground-truth
    array. The occupied-voxel term carries weight (1 - omega) and the empty
    term omega, with omega the occupied fraction of y_hat. Fused single op;
    the gradient passes through only where the log clip did not bind.
    """
    y_hat = np.asarray(y_hat.values if hasattr(y_hat, "values") else y_hat)
    if y_hat.shape != y.data.shape:
        raise ShapeMismatchError(f"grid shapes differ: {y.data.shape} vs {y_hat.shape}")
    if not np.all((y_hat == 0) | (y_hat == 1)):
        raise ValueError("ground-truth grid must be binary")
    omega = float(y_hat.sum()) / y_hat.size
    pos = ((1.0 - omega) * y_hat).astype(y.data.dtype)
    neg = (omega * (1.0 - y_hat)).astype(y.data.dtype)

    yc = np.clip(y.data, LOG_CLIP, 1.0 - LOG_CLIP)
    value = -np.sum(pos * np.log(yc) + neg * np.log1p(-yc))

    def vjp(g):
        inside = (y.data >= LOG_CLIP) & (y.data <= 1.0 - LOG_CLIP)
        d = np.where(inside, neg / (1.0 - yc) - pos / yc, 0.0)
        return (g * d,)

    return custom_op(value, (y,), vjp)


def sparsity_loss(y):
    """L1 norm of the predicted grid (equals its sum for values in [0,1])."""
    return tsum(absolute(y))


def total_losses(weights, adv_g, ce, sparse, adv_d, sparsity_enabled=True):
    """(L_G, L_D) from the named parts; rejects non-finite parts by name."""
    parts = {"adv_g": adv_g, "ce": ce, "sparse": sparse, "adv_d": adv_d}
    for name, part in parts.items():
        if not math.isfinite(float(part.data) if isinstance(part, Tensor) else part):
            raise ValueError(f"loss term {name!r} is not finite")
    gamma = weights.gamma if sparsity_enabled else 0.0
    l_g = weights.alpha * adv_g + weights.beta * ce + gamma * sparse
    return l_g, adv_d


# ---------------------------------------------------------------------------
# gradient penalty

def interpolate_grids(y_fake, y_real, eps):
    """y' = eps * real + (1 - eps) * fake, elementwise over the whole grid."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0,1], got {eps}")
    fake = np.asarray(y_fake.data if isinstance(y_fake, Tensor) else y_fake)
    real = np.asarray(y_real.data if isinstance(y_real, Tensor) else y_real)
    if fake.shape != real.shape:
        raise ShapeMismatchError(f"grid shapes differ: {fake.shape} vs {real.shape}")
    return eps * real + (1.0 - eps) * fake


def critic_input_gradient(critic, y_prime):
    """d(critic score)/d(y') over all grid entries, via one backward pass.

    critic is a callable mapping a grid Tensor to a scalar Tensor with the
    conditioning depth view already bound; its parameters must not track
    gradients here.
    """
    leaf = Tensor(np.asarray(y_prime), requires_grad=True)
    backward(critic(leaf))
    return leaf.grad


@dataclass
class GradientPenaltyParts:
    value: float          # lambda * (||g|| - 1)^2
    interpolate: np.ndarray
    input_gradient: np.ndarray
    grad_norm: float


def gradient_penalty_parts(critic, y_fake, y_real, eps, lambda_gp):
    y_prime = interpolate_grids(y_fake, y_real, eps)
    g = critic_input_gradient(critic, y_prime)
    norm = float(np.sqrt(np.sum(np.asarray(g, dtype=np.float64) ** 2)))
    value = lambda_gp * (norm - 1.0) ** 2
    return GradientPenaltyParts(value=value, interpolate=y_prime,
                                input_gradient=g, grad_norm=norm)


def gradient_penalty(critic, y_fake, y_real, eps, lambda_gp):
    """lambda * (||grad_{y'} D(y'|x)||_2 - 1)^2 with a single L2 norm over the
    interpolated grid's entries."""
    return gradient_penalty_parts(critic, y_fake, y_real, eps, lambda_gp).value
