"""Central finite-difference checks of every hand-written backward pass."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import bfs as bfs_mod
from . import dml as dml_mod
from . import o2d2 as o2d2_mod
from . import ual as ual_mod
from .encoder import EncoderParams, encode, encode_backward

FD_STEP = 1e-5
COMPONENTS = ("encoder", "dml", "bfs", "ual", "o2d2")


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """``||a - n|| / max(||a|| + ||n||, floor)``.

    The floor sits above central-difference round-off (about 1e-11 for O(1)
    losses at the default step), so vanishing gradients are not scored as noise.
    """
    a = np.asarray(analytic, dtype=float).ravel()
    n = np.asarray(numeric, dtype=float).ravel()
    denom = np.linalg.norm(a) + np.linalg.norm(n)
    return float(np.linalg.norm(a - n) / max(denom, floor))


def numeric_grad(loss: Callable[[], float], arr: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of ``loss()`` w.r.t. ``arr``, perturbed in place."""
    g = np.zeros_like(arr, dtype=float)
    flat = arr.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.shape[0]):
        old = flat[k]
        flat[k] = old + step
        up = loss()
        flat[k] = old - step
        down = loss()
        flat[k] = old
        gf[k] = (up - down) / (2.0 * step)
    return g


def check_gradient(loss: Callable[[], float], arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                   step: float = FD_STEP) -> dict[str, float]:
    """Relative error per named array between ``grads`` and finite differences of ``loss``."""
    return {k: rel_error(grads[k], numeric_grad(loss, arrays[k], step)) for k in arrays}


@dataclass
class CheckReport:
    component: str
    n_cases: int
    max_rel_error: float
    worst: str
    seconds: float
    per_case: list = field(default_factory=list, repr=False)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def _dims(rng, max_dim):
    return int(rng.integers(1, max_dim + 1))


def _encoder_case(rng, max_dim, corrupt=None):
    d_feat, d_emb, n = _dims(rng, max_dim), _dims(rng, max_dim), _dims(rng, 4)
    p = EncoderParams(rng.normal(0, 0.7, (d_emb, d_feat)), rng.normal(0, 0.3, d_emb))
    f = rng.normal(0, 1.0, (n, d_feat))
    up = rng.normal(0, 1.0, (n, d_emb))

    def loss():
        return float(np.sum(up * encode(f, p)))

    grads, df = encode_backward(f, p, up)
    grads = dict(grads, f=df)
    return loss, dict(p.arrays(), f=f), grads


def _dml_case(rng, max_dim, corrupt=None):
    d_emb, d_lev, n = _dims(rng, max_dim), _dims(rng, max_dim), _dims(rng, 4)
    p = dml_mod.DmlParams.init(d_emb, d_lev, rng, scale=0.8,
                               gamma=float(rng.uniform(0.3, 2.0)), alpha=float(rng.uniform(1.0, 2.0)))
    p.bias[:] = rng.normal(0, 0.3, d_lev)
    x1 = rng.uniform(-1, 1, (n, d_emb))
    x2 = rng.uniform(-1, 1, (n, d_emb))
    a = rng.integers(0, 2, n).astype(float)
    up = rng.uniform(0.5, 1.5, n)

    def loss():
        return float(np.sum(up * dml_mod.dml_forward(x1, x2, p, a).loss))

    fw = dml_mod.dml_forward(x1, x2, p, a)
    grads, dx1, dx2 = dml_mod.dml_backward(fw, p, a, up)
    return loss, dict(p.arrays(), x1=x1, x2=x2), dict(grads, x1=dx1, x2=dx2)


def _bfs_case(rng, max_dim, corrupt=None):
    d_lev, d_bfs, n = _dims(rng, max_dim), _dims(rng, max_dim), _dims(rng, 4)
    p = bfs_mod.BfsParams.init(d_lev, d_bfs, rng, scale=0.6)
    p.reduce_bias[:] = rng.normal(0, 0.3, d_bfs)
    p.mu[:] = rng.normal(0, 0.3, d_bfs)
    p.w_raw[:] = np.tril(p.w_raw + rng.normal(0, 0.3, p.w_raw.shape))
    p.b_raw[:] = np.tril(p.b_raw + rng.normal(0, 0.3, p.b_raw.shape))
    y1 = rng.uniform(-1, 1, (n, d_lev))
    y2 = rng.uniform(-1, 1, (n, d_lev))
    a = rng.integers(0, 2, n).astype(float)
    up = rng.uniform(0.5, 1.5, n)

    def loss():
        fw = bfs_mod.bfs_forward(y1, y2, p)
        return float(np.sum(up * bfs_mod.bfs_loss(fw.posterior, a)))

    fw = bfs_mod.bfs_forward(y1, y2, p)
    grads, dy1, dy2 = bfs_mod.bfs_backward(fw, p, a, up)
    return loss, dict(p.arrays(), y1=y1, y2=y2), dict(grads, y1=dy1, y2=dy2)


def _ual_case(rng, max_dim, corrupt=None):
    d_lev, d_ual, n = _dims(rng, max_dim), _dims(rng, max_dim), _dims(rng, 4)
    p = ual_mod.UalParams.init(d_lev, d_ual, rng, beta=float(rng.uniform(0.0, 0.5)))
    p.conf_weight[:] = rng.normal(0, 0.7, p.conf_weight.shape)
    p.conf_bias[:] = rng.normal(0, 0.7, p.conf_bias.shape)
    p.fuse_bias[:] = rng.normal(0, 0.3, d_ual)
    y1 = rng.uniform(-1, 1, (n, d_lev))
    y2 = rng.uniform(-1, 1, (n, d_lev))
    p_bfs = rng.uniform(0.02, 0.98, n)
    true_j = rng.integers(0, 2, n)
    up = rng.uniform(0.5, 1.5, n)

    def loss():
        return float(np.sum(up * ual_mod.ual_forward(y1, y2, p_bfs, p, true_j).loss))

    fw = ual_mod.ual_forward(y1, y2, p_bfs, p, true_j)
    return loss, p.arrays(), ual_mod.ual_backward(fw, p, true_j, up)


def _o2d2_case(rng, max_dim, corrupt=None):
    d_in, h1, h2, n = _dims(rng, max_dim), _dims(rng, max_dim), _dims(rng, max_dim), _dims(rng, 4)
    p = o2d2_mod.O2d2Params.init(d_in, h1, h2, rng)
    p.b1[:] = rng.normal(0, 0.3, h1)
    p.b2[:] = rng.normal(0, 0.3, h2)
    p.b3[:] = rng.normal(0, 0.3, 1)
    v = rng.uniform(0, 2, (n, d_in))
    label = rng.integers(0, 2, n)
    weight = rng.uniform(0.5, 2.0, n)
    up = rng.uniform(0.5, 1.5, n)

    def loss():
        return float(np.sum(up * o2d2_mod.o2d2_loss(o2d2_mod.o2d2_forward(v, p), label, weight)))

    fw = o2d2_mod.o2d2_forward_full(v, p)
    return loss, p.arrays(), o2d2_mod.o2d2_backward(fw, p, label, weight, up)


CASES = {"encoder": _encoder_case, "dml": _dml_case, "bfs": _bfs_case, "ual": _ual_case, "o2d2": _o2d2_case}


def grad_check(component: str, n_cases: int = 200, max_dim: int = 8, seed: int = 0,
               step: float = FD_STEP, corrupt: Callable[[dict], dict] | None = None) -> CheckReport:
    """Finite-difference check of one component on ``n_cases`` random instances.

    ``corrupt`` (harness self-test) may alter the analytic gradients before
    comparison.
    """
    if component not in CASES:
        raise ValueError(f"unknown component {component!r}; choose from {COMPONENTS}")
    rng = np.random.default_rng([seed, COMPONENTS.index(component)])
    t0 = time.perf_counter()
    worst, worst_name = 0.0, ""
    per_case = []
    for _ in range(n_cases):
        loss, arrays, grads = CASES[component](rng, max_dim)
        if corrupt is not None:
            grads = corrupt({k: np.array(v, dtype=float, copy=True) for k, v in grads.items()})
        errs = check_gradient(loss, arrays, grads, step)
        name, err = max(errs.items(), key=lambda kv: kv[1])
        per_case.append(err)
        if err > worst:
            worst, worst_name = err, name
    return CheckReport(component, n_cases, worst, worst_name, time.perf_counter() - t0, per_case)


def grad_check_all(n_cases: int = 200, max_dim: int = 8, seed: int = 0,
                   components=COMPONENTS) -> list[CheckReport]:
    return [grad_check(c, n_cases, max_dim, seed) for c in components]
