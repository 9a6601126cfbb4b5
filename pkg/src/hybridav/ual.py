"""Uncertainty adaptation: an input-dependent 2x2 confusion matrix.

``cm[..., i, j]`` is ``p(H_j | assigned H_i)``: row ``i`` is the hypothesis
picked by the BFS layer, column ``j`` the true one. Each row is a softmax
over ``j``, which is what makes the mixed posterior
``p_ual[j] = sum_i cm[i, j] * p_bfs[i]`` a probability distribution.
The logits are affine in the fused pair vector
``tanh(W (y1 - y2)**2 + b)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax, xlogy

from ._layers import PROB_CLAMP, affine_tanh, affine_tanh_backward
from .errors import DimensionMismatch, InvalidHyperparam

DEFAULT_BETA = 0.1


@dataclass
class UalParams:
    fuse_weight: np.ndarray   # (d_ual, d_lev)
    fuse_bias: np.ndarray     # (d_ual,)
    conf_weight: np.ndarray   # (2, 2, d_ual), indexed [i, j]
    conf_bias: np.ndarray     # (2, 2)
    beta: float = field(default=DEFAULT_BETA)

    def __post_init__(self):
        if self.beta < 0:
            raise InvalidHyperparam(f"beta must be >= 0, got {self.beta}")

    @classmethod
    def init(cls, d_lev: int, d_ual: int, rng: np.random.Generator,
             beta: float = DEFAULT_BETA, scale: float | None = None, diag_bias: float = 2.0):
        if scale is None:
            scale = 1.0 / np.sqrt(d_lev)
        # start near the identity confusion matrix so the layer begins as a pass-through
        conf_bias = np.array([[diag_bias, -diag_bias], [-diag_bias, diag_bias]]) / 2.0
        return cls(fuse_weight=rng.normal(0.0, scale, size=(d_ual, d_lev)),
                   fuse_bias=np.zeros(d_ual),
                   conf_weight=rng.normal(0.0, 0.01, size=(2, 2, d_ual)),
                   conf_bias=conf_bias,
                   beta=beta)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"fuse_weight": self.fuse_weight, "fuse_bias": self.fuse_bias,
                "conf_weight": self.conf_weight, "conf_bias": self.conf_bias}


def fuse(y1: np.ndarray, y2: np.ndarray, p: UalParams) -> np.ndarray:
    if y1.shape != y2.shape:
        raise DimensionMismatch(f"LEV shapes differ: {y1.shape} vs {y2.shape}")
    diff = y1 - y2
    return affine_tanh(diff * diff, p.fuse_weight, p.fuse_bias)


def confusion_logits(fused: np.ndarray, p: UalParams) -> np.ndarray:
    if fused.shape[-1] != p.conf_weight.shape[-1]:
        raise DimensionMismatch(f"fused vector has {fused.shape[-1]} entries, expected {p.conf_weight.shape[-1]}")
    return np.einsum("...d,ijd->...ij", fused, p.conf_weight) + p.conf_bias


def confusion(fused: np.ndarray, p: UalParams) -> np.ndarray:
    """Row-stochastic confusion matrix ``cm[..., i, j] = p(H_j | assigned H_i)``."""
    return softmax(confusion_logits(fused, p), axis=-1)


def ual_posterior(cm: np.ndarray, p_bfs_h1) -> np.ndarray:
    """Mixed posterior ``[p(H0), p(H1)]`` (last axis) from the BFS same-author posterior."""
    p_bfs_h1 = np.asarray(p_bfs_h1, dtype=float)
    p0 = 1.0 - p_bfs_h1
    return cm[..., 0, :] * p0[..., None] + cm[..., 1, :] * p_bfs_h1[..., None]


def entropy_regularizer(cm: np.ndarray) -> np.ndarray:
    """``sum_ij cm log cm`` per trial; minimal (-2 ln 2) for the uniform matrix."""
    return np.sum(xlogy(cm, cm), axis=(-2, -1))


def ual_loss(p_ual: np.ndarray, cm: np.ndarray, true_j, beta: float = DEFAULT_BETA):
    """Per-trial negative log-likelihood of the true hypothesis plus beta times the regularizer."""
    if beta < 0:
        raise InvalidHyperparam(f"beta must be >= 0, got {beta}")
    true_j = np.asarray(true_j, dtype=int)
    p_true = np.take_along_axis(np.atleast_2d(p_ual), np.atleast_1d(true_j)[:, None], axis=-1)[:, 0]
    nll = -np.log(np.maximum(p_true, PROB_CLAMP))
    out = nll + beta * np.atleast_1d(entropy_regularizer(cm))
    return out if p_ual.ndim > 1 else float(out[0])


@dataclass
class UalForward:
    sq: np.ndarray
    fused: np.ndarray
    cm: np.ndarray
    p_bfs: np.ndarray
    p_ual: np.ndarray
    loss: np.ndarray


def ual_forward(y1, y2, p_bfs_h1, p: UalParams, true_j=None) -> UalForward:
    y1 = np.atleast_2d(y1)
    y2 = np.atleast_2d(y2)
    diff = y1 - y2
    sq = diff * diff
    fused = affine_tanh(sq, p.fuse_weight, p.fuse_bias)
    cm = confusion(fused, p)
    p_bfs = np.atleast_1d(np.asarray(p_bfs_h1, dtype=float))
    p_ual = ual_posterior(cm, p_bfs)
    loss = ual_loss(p_ual, cm, true_j, p.beta) if true_j is not None else None
    return UalForward(sq, fused, cm, p_bfs, p_ual, loss)


def ual_backward(fw: UalForward, p: UalParams, true_j, upstream=1.0):
    """Gradients of ``sum(upstream * ual_loss)`` w.r.t. the UAL parameters only.

    The LEVs and the BFS posterior are treated as constants.
    """
    n = fw.cm.shape[0]
    true_j = np.atleast_1d(np.asarray(true_j, dtype=int))
    up = np.broadcast_to(np.asarray(upstream, dtype=float), (n,))
    rows = np.arange(n)
    p_true = fw.p_ual[rows, true_j]
    g_pual = np.zeros((n, 2))
    g_pual[rows, true_j] = np.where(p_true > PROB_CLAMP, -up / np.maximum(p_true, PROB_CLAMP), 0.0)
    pb = np.stack([1.0 - fw.p_bfs, fw.p_bfs], axis=-1)  # (n, i)
    g_cm = pb[:, :, None] * g_pual[:, None, :]
    g_cm += (p.beta * up)[:, None, None] * (np.log(np.maximum(fw.cm, 1e-300)) + 1.0)
    g_z = fw.cm * (g_cm - np.sum(fw.cm * g_cm, axis=-1, keepdims=True))
    grads = {
        "conf_weight": np.einsum("nij,nd->ijd", g_z, fw.fused),
        "conf_bias": g_z.sum(axis=0),
    }
    g_fused = np.einsum("nij,ijd->nd", g_z, p.conf_weight)
    dw, db, _ = affine_tanh_backward(fw.sq, p.fuse_weight, fw.fused, g_fused)
    grads["fuse_weight"] = dw
    grads["fuse_bias"] = db
    return grads
