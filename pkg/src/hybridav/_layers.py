"""Small numerical helpers shared by the components."""

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch

PROB_CLAMP = 1e-12


def check_dims(x: np.ndarray, weight: np.ndarray, what: str = "input") -> None:
    if x.shape[-1] != weight.shape[1]:
        raise DimensionMismatch(
            f"{what} has dimension {x.shape[-1]}, layer expects {weight.shape[1]}"
        )


def affine_tanh(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """tanh(W x + b) for a single vector or a batch of row vectors."""
    check_dims(x, weight)
    return np.tanh(x @ weight.T + bias)


def affine_tanh_backward(x, weight, out, upstream):
    """Gradients of ``sum(upstream * tanh(W x + b))``.

    Returns ``(d_weight, d_bias, d_x)``. Works for 1-D and 2-D ``x``.
    """
    dz = upstream * (1.0 - out * out)
    if dz.ndim == 1:
        d_weight = np.outer(dz, x)
        d_bias = dz.copy()
    else:
        d_weight = dz.T @ x
        d_bias = dz.sum(axis=0)
    d_x = dz @ weight
    return d_weight, d_bias, d_x


def sigmoid(z):
    return expit(z)


def softplus(z):
    return np.logaddexp(0.0, z)


def inv_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


def clamp_prob(p):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def bce(p, label, weight=None):
    """Per-example binary cross entropy on clamped probabilities."""
    pc = clamp_prob(p)
    loss = -(label * np.log(pc) + (1.0 - label) * np.log1p(-pc))
    if weight is not None:
        loss = loss * weight
    return loss


def bce_grad_logit(p, label):
    """d BCE / d logit for ``p = sigmoid(logit)``.

    The clamp only guards the logarithms; the gradient keeps its unclamped
    form so saturated wrong answers still get pushed back.
    """
    return p - label
