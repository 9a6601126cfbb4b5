"""Metric-learning layer: LEV projection, distance kernel and contrastive loss.

The kernel parameters gamma and alpha are stored as logs so that gradient
steps keep them positive. ``alpha`` is additionally clamped to ``>= 1`` after
every training update: for ``alpha < 1`` the derivative of ``d**alpha`` is
unbounded at ``d = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._layers import affine_tanh, affine_tanh_backward
from .errors import DimensionMismatch, InvalidHyperparam, InvalidThresholds

TAU_S = 0.91
TAU_D = 0.09


@dataclass
class DmlParams:
    weight: np.ndarray     # (d_lev, d_emb)
    bias: np.ndarray       # (d_lev,)
    log_gamma: np.ndarray  # 0-d
    log_alpha: np.ndarray  # 0-d

    @classmethod
    def init(cls, d_emb: int, d_lev: int, rng: np.random.Generator,
             scale: float | None = None, gamma: float = 1.0, alpha: float = 1.0):
        if scale is None:
            scale = 1.0 / np.sqrt(d_emb)
        if gamma <= 0 or alpha <= 0:
            raise InvalidHyperparam("gamma and alpha must be positive")
        return cls(weight=rng.normal(0.0, scale, size=(d_lev, d_emb)),
                   bias=np.zeros(d_lev),
                   log_gamma=np.array(np.log(gamma)),
                   log_alpha=np.array(np.log(alpha)))

    @property
    def gamma(self) -> float:
        return float(np.exp(self.log_gamma))

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))

    def arrays(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias,
                "log_gamma": self.log_gamma, "log_alpha": self.log_alpha}

    def clamp_alpha(self) -> None:
        np.maximum(self.log_alpha, 0.0, out=self.log_alpha)


def project(x: np.ndarray, p: DmlParams) -> np.ndarray:
    """LEV ``tanh(W x + b)``."""
    return affine_tanh(x, p.weight, p.bias)


def distance(y1: np.ndarray, y2: np.ndarray) -> np.ndarray | float:
    """Squared Euclidean distance, row-wise for batches."""
    if y1.shape != y2.shape:
        raise DimensionMismatch(f"LEV shapes differ: {y1.shape} vs {y2.shape}")
    diff = y1 - y2
    return np.sum(diff * diff, axis=-1)


def kernel_prob(d, gamma: float, alpha: float):
    """``exp(-gamma * d**alpha)``, the DML same-author probability."""
    if not gamma > 0 or not alpha > 0:
        raise InvalidHyperparam(f"gamma and alpha must be positive (got {gamma}, {alpha})")
    return np.exp(-gamma * np.power(d, alpha))


def _check_thresholds(tau_s: float, tau_d: float) -> None:
    if not (0.0 <= tau_d < tau_s <= 1.0):
        raise InvalidThresholds(f"need 0 <= tau_d < tau_s <= 1, got tau_s={tau_s}, tau_d={tau_d}")


def dml_loss(p_dml, a, tau_s: float = TAU_S, tau_d: float = TAU_D):
    """Per-pair probabilistic contrastive loss (squared hinges at tau_s / tau_d)."""
    _check_thresholds(tau_s, tau_d)
    same = np.maximum(tau_s - p_dml, 0.0)
    diff = np.maximum(p_dml - tau_d, 0.0)
    return a * same * same + (1 - a) * diff * diff


def dml_loss_grad(p_dml, a, tau_s: float = TAU_S, tau_d: float = TAU_D):
    _check_thresholds(tau_s, tau_d)
    return -2.0 * a * np.maximum(tau_s - p_dml, 0.0) + 2.0 * (1 - a) * np.maximum(p_dml - tau_d, 0.0)


@dataclass
class DmlForward:
    x1: np.ndarray
    x2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    d: np.ndarray
    p: np.ndarray
    loss: np.ndarray


def dml_forward(x1, x2, params: DmlParams, a, tau_s=TAU_S, tau_d=TAU_D) -> DmlForward:
    y1 = project(x1, params)
    y2 = project(x2, params)
    d = distance(y1, y2)
    p = kernel_prob(d, params.gamma, params.alpha)
    return DmlForward(x1, x2, y1, y2, d, p, dml_loss(p, a, tau_s, tau_d))


def dml_backward(fw: DmlForward, params: DmlParams, a, upstream=1.0,
                 tau_s=TAU_S, tau_d=TAU_D, train_kernel: bool = True):
    """Gradients of ``sum(upstream * loss)``.

    Returns ``(grads, dx1, dx2)`` where ``grads`` covers the DML parameters
    and ``dx1``/``dx2`` are gradients w.r.t. the document embeddings (to be
    passed on to the encoder).
    """
    gamma, alpha = params.gamma, params.alpha
    g_p = upstream * dml_loss_grad(fw.p, a, tau_s, tau_d)
    d = fw.d
    d_alpha = np.power(d, alpha)
    # d**(alpha-1) is 1 at d=0 for alpha=1 and 0 for alpha>1
    g_d = g_p * fw.p * (-gamma * alpha * np.power(d, alpha - 1.0))
    diff = fw.y1 - fw.y2
    g_y1 = 2.0 * g_d[..., None] * diff if np.ndim(g_d) else 2.0 * g_d * diff
    g_y2 = -g_y1
    dw1, db1, dx1 = affine_tanh_backward(fw.x1, params.weight, fw.y1, g_y1)
    dw2, db2, dx2 = affine_tanh_backward(fw.x2, params.weight, fw.y2, g_y2)
    grads = {"weight": dw1 + dw2, "bias": db1 + db2}
    if train_kernel:
        # d p / d log_gamma = -gamma d^alpha p ; d p / d log_alpha = -gamma d^alpha ln(d) alpha p
        g_lg = g_p * fw.p * (-gamma * d_alpha)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_d = np.where(d > 0, np.log(np.where(d > 0, d, 1.0)), 0.0)
        g_la = g_p * fw.p * (-gamma * d_alpha * log_d * alpha)
        grads["log_gamma"] = np.array(np.sum(g_lg))
        grads["log_alpha"] = np.array(np.sum(g_la))
    else:
        grads["log_gamma"] = np.zeros(())
        grads["log_alpha"] = np.zeros(())
    return grads, dx1, dx2
