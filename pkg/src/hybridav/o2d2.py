"""Out-of-distribution detector for undecidable trials.

A three-layer feed-forward net on ``[(y1 - y2)**2, (y1 + y2)**2, vec(cm)]``
that outputs the probability of the "undecidable" hypothesis. It is trained
on calibration trials labelled positive when the UAL decision is wrong or the
UAL posterior lies within ``epsilon`` of 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._layers import affine_tanh, affine_tanh_backward, bce, bce_grad_logit, check_dims, sigmoid
from .errors import DimensionMismatch, InvalidEpsilon

EPS_MIN, EPS_MAX = 0.05, 0.15
EPS_GRID = (0.05, 0.075, 0.10, 0.125, 0.15)


def clamp_epsilon(eps: float) -> float:
    return float(min(max(eps, EPS_MIN), EPS_MAX))


@dataclass
class O2d2Params:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray  # (1, d_h2)
    b3: np.ndarray  # (1,)
    epsilon: float = field(default=0.10)

    def __post_init__(self):
        self.epsilon = clamp_epsilon(self.epsilon)

    @classmethod
    def init(cls, d_in: int, d_h1: int, d_h2: int, rng: np.random.Generator, epsilon: float = 0.10):
        return cls(w1=rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_h1, d_in)), b1=np.zeros(d_h1),
                   w2=rng.normal(0.0, 1.0 / np.sqrt(d_h1), size=(d_h2, d_h1)), b2=np.zeros(d_h2),
                   w3=rng.normal(0.0, 1.0 / np.sqrt(d_h2), size=(1, d_h2)), b3=np.zeros(1),
                   epsilon=epsilon)

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2, "w3": self.w3, "b3": self.b3}


def o2d2_label(a, a_hat, p_ual_h1, epsilon: float):
    """1 where the decision is wrong or the posterior is within epsilon of 0.5."""
    if not (EPS_MIN - 1e-12 <= epsilon <= EPS_MAX + 1e-12):
        raise InvalidEpsilon(f"epsilon must lie in [{EPS_MIN}, {EPS_MAX}], got {epsilon}")
    return _label(a, a_hat, p_ual_h1, epsilon)


def _label(a, a_hat, p_ual_h1, epsilon):
    wrong = np.asarray(a) != np.asarray(a_hat)
    p = np.asarray(p_ual_h1, dtype=float)
    near = (0.5 - epsilon <= p) & (p <= 0.5 + epsilon)
    out = (wrong | near).astype(int)
    return int(out) if out.ndim == 0 else out


def build_input(y1: np.ndarray, y2: np.ndarray, cm: np.ndarray) -> np.ndarray:
    """Detector input; symmetric in the two LEVs."""
    if y1.shape != y2.shape:
        raise DimensionMismatch(f"LEV shapes differ: {y1.shape} vs {y2.shape}")
    if cm.shape[-2:] != (2, 2) or cm.shape[:-2] != y1.shape[:-1]:
        raise DimensionMismatch(f"confusion matrix shape {cm.shape} does not match LEVs {y1.shape}")
    diff = y1 - y2
    tot = y1 + y2
    flat = cm.reshape(cm.shape[:-2] + (4,))
    return np.concatenate([diff * diff, tot * tot, flat], axis=-1)


@dataclass
class O2d2Forward:
    v: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    p: np.ndarray


def o2d2_forward_full(v: np.ndarray, p: O2d2Params) -> O2d2Forward:
    check_dims(v, p.w1, "detector input")
    h1 = affine_tanh(v, p.w1, p.b1)
    h2 = affine_tanh(h1, p.w2, p.b2)
    logit = h2 @ p.w3.T + p.b3
    return O2d2Forward(v, h1, h2, sigmoid(logit[..., 0]))


def o2d2_forward(v: np.ndarray, p: O2d2Params):
    """Probability that the trial is undecidable."""
    return o2d2_forward_full(v, p).p


def o2d2_loss(p_h2, label, weight=None):
    """Per-trial (optionally weighted) cross entropy against the detector labels."""
    return bce(p_h2, label, weight)


def class_weights(labels: np.ndarray) -> np.ndarray:
    """Inverse-frequency weights with mean 1; uniform if only one class is present."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    n_pos = int(labels.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return np.ones(n)
    return np.where(labels == 1, n / (2.0 * n_pos), n / (2.0 * n_neg))


def o2d2_backward(fw: O2d2Forward, p: O2d2Params, label, weight=None, upstream=1.0):
    """Gradients of ``sum(upstream * weight * o2d2_loss)`` w.r.t. the detector parameters."""
    v = np.atleast_2d(fw.v)
    h1 = np.atleast_2d(fw.h1)
    h2 = np.atleast_2d(fw.h2)
    pr = np.atleast_1d(fw.p)
    g_logit = bce_grad_logit(pr, np.atleast_1d(np.asarray(label, dtype=float))) * upstream
    if weight is not None:
        g_logit = g_logit * weight
    g_logit = np.atleast_1d(g_logit)
    grads = {"w3": g_logit[None, :] @ h2, "b3": np.array([g_logit.sum()])}
    g_h2 = g_logit[:, None] * p.w3
    dw2, db2, g_h1 = affine_tanh_backward(h1, p.w2, h2, g_h2)
    dw1, db1, _ = affine_tanh_backward(v, p.w1, h1, g_h1)
    grads.update(w1=dw1, b1=db1, w2=dw2, b2=db2)
    return grads
