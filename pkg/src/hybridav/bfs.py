"""Two-covariance Bayes-factor scoring of LEV pairs.

Generative model for a reduced LEV ``r = s + n`` with author style
``s ~ N(mu, B^-1)`` and noise ``n ~ N(0, W^-1)``. Both likelihoods are
evaluated in precision form by integrating out ``s``:

* same author (H1): ``r1, r2`` share one ``s``; the posterior precision of
  ``s`` is ``B + 2W`` and the linear term ``W (r1 + r2) + B mu``;
* different authors (H0): each ``r_k`` has its own ``s``; precision ``B + W``,
  linear term ``W r_k + B mu``.

Every log-determinant and solve goes through a Cholesky factor. ``W`` and
``B`` are parameterized by lower-triangular factors whose diagonals pass
through softplus, so any real-valued parameter vector gives SPD precisions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ._layers import affine_tanh, affine_tanh_backward, bce, bce_grad_logit, inv_softplus, sigmoid, softplus
from .errors import DimensionMismatch, NotPositiveDefinite

LOG_2PI = float(np.log(2.0 * np.pi))


def chol_from_raw(raw: np.ndarray) -> np.ndarray:
    return np.tril(raw, -1) + np.diag(softplus(np.diag(raw)))


def raw_from_chol(L: np.ndarray) -> np.ndarray:
    raw = np.tril(L, -1).astype(float)
    raw[np.diag_indices_from(raw)] = [inv_softplus(v) for v in np.diag(L)]
    return raw


def _spd(L: np.ndarray) -> np.ndarray:
    P = L @ L.T
    return 0.5 * (P + P.T)


@dataclass
class BfsParams:
    reduce_weight: np.ndarray  # (d_bfs, d_lev)
    reduce_bias: np.ndarray    # (d_bfs,)
    mu: np.ndarray             # (d_bfs,)
    w_raw: np.ndarray          # (d_bfs, d_bfs), lower triangle used
    b_raw: np.ndarray

    @classmethod
    def init(cls, d_lev: int, d_bfs: int, rng: np.random.Generator, scale: float = 0.1):
        eye_raw = raw_from_chol(np.eye(d_bfs))
        return cls(reduce_weight=rng.normal(0.0, scale, size=(d_bfs, d_lev)),
                   reduce_bias=np.zeros(d_bfs),
                   mu=np.zeros(d_bfs),
                   w_raw=eye_raw.copy(),
                   b_raw=eye_raw.copy())

    @classmethod
    def from_precisions(cls, reduce_weight, reduce_bias, mu, w_prec, b_prec):
        try:
            lw = np.linalg.cholesky(np.asarray(w_prec, dtype=float))
            lb = np.linalg.cholesky(np.asarray(b_prec, dtype=float))
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(str(exc)) from exc
        return cls(np.asarray(reduce_weight, float), np.asarray(reduce_bias, float),
                   np.asarray(mu, float), raw_from_chol(lw), raw_from_chol(lb))

    @property
    def chol_w(self) -> np.ndarray:
        return chol_from_raw(self.w_raw)

    @property
    def chol_b(self) -> np.ndarray:
        return chol_from_raw(self.b_raw)

    @property
    def W_prec(self) -> np.ndarray:
        return _spd(self.chol_w)

    @property
    def B_prec(self) -> np.ndarray:
        return _spd(self.chol_b)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"reduce_weight": self.reduce_weight, "reduce_bias": self.reduce_bias,
                "mu": self.mu, "w_raw": self.w_raw, "b_raw": self.b_raw}

    def is_spd(self) -> bool:
        for P in (self.W_prec, self.B_prec):
            try:
                np.linalg.cholesky(P)
            except np.linalg.LinAlgError:
                return False
        return True


def reduce(y: np.ndarray, p: BfsParams) -> np.ndarray:
    """Dimension reduction ``tanh(W_bfs y + b_bfs)`` ahead of the Gaussian scoring."""
    return affine_tanh(y, p.reduce_weight, p.reduce_bias)


def _factor(P: np.ndarray, name: str):
    try:
        return cho_factor(P, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise NotPositiveDefinite(f"{name} is not positive definite: {exc}") from exc


def _logdet(cf) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(cf[0]))))


@dataclass
class _Gauss:
    W: np.ndarray
    B: np.ndarray
    mu: np.ndarray
    Lw: np.ndarray
    Lb: np.ndarray
    cf0: tuple
    cf1: tuple
    logdet_w: float
    logdet_b: float
    logdet_0: float
    logdet_1: float


def _gauss(p: BfsParams) -> _Gauss:
    Lw, Lb = p.chol_w, p.chol_b
    if np.any(np.diag(Lw) <= 0) or np.any(np.diag(Lb) <= 0):
        raise NotPositiveDefinite("Cholesky factor has a non-positive diagonal")
    W, B = _spd(Lw), _spd(Lb)
    cf0 = _factor(B + W, "B + W")
    cf1 = _factor(B + 2.0 * W, "B + 2W")
    return _Gauss(W, B, p.mu, Lw, Lb, cf0, cf1,
                  2.0 * float(np.sum(np.log(np.diag(Lw)))),
                  2.0 * float(np.sum(np.log(np.diag(Lb)))),
                  _logdet(cf0), _logdet(cf1))


def _solve_rows(cf, H: np.ndarray) -> np.ndarray:
    return cho_solve(cf, H.T).T


def _rowdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


@dataclass
class BfsForward:
    y1: np.ndarray
    y2: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    m1: np.ndarray
    m0a: np.ndarray
    m0b: np.ndarray
    ll_h1: np.ndarray
    ll_h0: np.ndarray
    llr: np.ndarray
    posterior: np.ndarray
    gauss: _Gauss


def _score_reduced(r1: np.ndarray, r2: np.ndarray, g: _Gauss):
    d = r1.shape[-1]
    W, B, mu = g.W, g.B, g.mu
    bmu = B @ mu
    mu_b_mu = float(mu @ bmu)
    h1 = (r1 + r2) @ W + bmu
    h0a = r1 @ W + bmu
    h0b = r2 @ W + bmu
    m1 = _solve_rows(g.cf1, h1)
    m0a = _solve_rows(g.cf0, h0a)
    m0b = _solve_rows(g.cf0, h0b)
    q1 = _rowdot(r1 @ W, r1)
    q2 = _rowdot(r2 @ W, r2)
    ll_h1 = (-d * LOG_2PI + g.logdet_w + 0.5 * g.logdet_b - 0.5 * g.logdet_1
             - 0.5 * (q1 + q2 + mu_b_mu) + 0.5 * _rowdot(h1, m1))
    ll0a = (-0.5 * d * LOG_2PI + 0.5 * g.logdet_w + 0.5 * g.logdet_b - 0.5 * g.logdet_0
            - 0.5 * (q1 + mu_b_mu) + 0.5 * _rowdot(h0a, m0a))
    ll0b = (-0.5 * d * LOG_2PI + 0.5 * g.logdet_w + 0.5 * g.logdet_b - 0.5 * g.logdet_0
            - 0.5 * (q2 + mu_b_mu) + 0.5 * _rowdot(h0b, m0b))
    return ll_h1, ll0a + ll0b, m1, m0a, m0b


def log_likelihoods(y1r: np.ndarray, y2r: np.ndarray, p: BfsParams):
    """``(log p(y1, y2 | H1), log p(y1, y2 | H0))`` for reduced LEVs.

    Accepts single vectors or batches of row vectors.
    """
    y1r = np.asarray(y1r, dtype=float)
    y2r = np.asarray(y2r, dtype=float)
    if y1r.shape != y2r.shape or y1r.shape[-1] != p.mu.shape[0]:
        raise DimensionMismatch(f"reduced LEV shapes {y1r.shape}, {y2r.shape} vs d_bfs={p.mu.shape[0]}")
    single = y1r.ndim == 1
    r1, r2 = np.atleast_2d(y1r), np.atleast_2d(y2r)
    ll1, ll0, *_ = _score_reduced(r1, r2, _gauss(p))
    if single:
        return float(ll1[0]), float(ll0[0])
    return ll1, ll0


def bfs_posterior(llr):
    """Same-author posterior under equal priors: ``sigmoid(llr)``."""
    return sigmoid(llr)


def bfs_loss(posterior, a):
    """Binary cross entropy of the BFS posterior (posterior clamped to [1e-12, 1-1e-12])."""
    return bce(posterior, a)


def bfs_forward(y1: np.ndarray, y2: np.ndarray, p: BfsParams) -> BfsForward:
    y1 = np.atleast_2d(y1)
    y2 = np.atleast_2d(y2)
    r1 = reduce(y1, p)
    r2 = reduce(y2, p)
    g = _gauss(p)
    ll1, ll0, m1, m0a, m0b = _score_reduced(r1, r2, g)
    llr = ll1 - ll0
    return BfsForward(y1, y2, r1, r2, m1, m0a, m0b, ll1, ll0, llr, bfs_posterior(llr), g)


def _tril_grad(dL: np.ndarray, raw: np.ndarray) -> np.ndarray:
    out = np.tril(dL, -1)
    out[np.diag_indices_from(out)] = np.diag(dL) * sigmoid(np.diag(raw))
    return out


def llr_backward(fw: BfsForward, p: BfsParams, g_llr: np.ndarray):
    """Gradients of ``sum(g_llr * llr)``.

    Returns ``(grads, dy1, dy2)``; ``dy1``/``dy2`` are w.r.t. the input LEVs
    (diagnostic only, the trainer stops them).
    """
    g = fw.gauss
    W, B, mu = g.W, g.B, g.mu
    g_llr = np.asarray(g_llr, dtype=float).reshape(-1)
    s = float(np.sum(g_llr))
    eye = np.eye(W.shape[0])
    inv0 = cho_solve(g.cf0, eye)
    inv1 = cho_solve(g.cf1, eye)

    gw = g_llr[:, None]
    # derivative of the Gaussian-integral terms w.r.t. the posterior precisions
    g_lam1 = -0.5 * s * inv1 - 0.5 * (fw.m1 * gw).T @ fw.m1
    g_lam0 = s * inv0 + 0.5 * ((fw.m0a * gw).T @ fw.m0a + (fw.m0b * gw).T @ fw.m0b)
    g_h1 = gw * fw.m1
    g_h0a = -gw * fw.m0a
    g_h0b = -gw * fw.m0b

    G_W = 2.0 * g_lam1 + g_lam0
    G_W += g_h1.T @ (fw.r1 + fw.r2) + g_h0a.T @ fw.r1 + g_h0b.T @ fw.r2
    sum_h = g_h1.sum(0) + g_h0a.sum(0) + g_h0b.sum(0)
    G_B = g_lam1 + g_lam0 + np.outer(sum_h, mu) + 0.5 * s * np.outer(mu, mu)
    g_mu = B @ sum_h + s * (B @ mu)

    g_r1 = (g_h1 + g_h0a) @ W
    g_r2 = (g_h1 + g_h0b) @ W

    dLw = (G_W + G_W.T) @ g.Lw
    dLb = (G_B + G_B.T) @ g.Lb
    # -1/2 log|B| with log|B| = 2 sum log diag(Lb)
    dLb[np.diag_indices_from(dLb)] += -s / np.diag(g.Lb)

    dW_red1, db_red1, dy1 = affine_tanh_backward(fw.y1, p.reduce_weight, fw.r1, g_r1)
    dW_red2, db_red2, dy2 = affine_tanh_backward(fw.y2, p.reduce_weight, fw.r2, g_r2)
    grads = {
        "reduce_weight": dW_red1 + dW_red2,
        "reduce_bias": db_red1 + db_red2,
        "mu": g_mu,
        "w_raw": _tril_grad(dLw, p.w_raw),
        "b_raw": _tril_grad(dLb, p.b_raw),
    }
    return grads, dy1, dy2


def bfs_backward(fw: BfsForward, p: BfsParams, a, upstream=1.0):
    """Gradients of ``sum(upstream * bfs_loss)``; see :func:`llr_backward`."""
    g_llr = upstream * bce_grad_logit(fw.posterior, np.asarray(a, dtype=float))
    return llr_backward(fw, p, g_llr)
