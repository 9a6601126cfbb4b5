"""Two-stage training.

Stage 1 trains the encoder, DML, BFS and UAL layers on the same mini-batches,
but every loss only reaches its own parameters: the DML loss trains the
encoder and DML layer, the BFS loss sees the LEVs as constants, and the UAL
loss sees both the LEVs and the BFS posterior as constants. Stage 2 trains
the O2D2 detector on a calibration split with everything else frozen.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import bfs as bfs_mod
from . import dml as dml_mod
from . import o2d2 as o2d2_mod
from . import ual as ual_mod
from .dataprep import Trial, resample_pairs
from .encoder import Document, encode, encode_backward
from .errors import EmptyGrid, InvalidEpsilon, NonFiniteLoss, NotPositiveDefinite
from .metrics import AnswerSet, pan_metrics
from .model import DocTable, Pipeline, ScoreOutput, TrainConfig
from .ensemble import ANSWER_NUDGE, NONRESPONSE
from .optim import Adam

log = logging.getLogger(__name__)


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class HeadStep:
    losses: dict
    grads_dml: dict
    grads_bfs: dict
    grads_ual: dict
    dx1: np.ndarray
    dx2: np.ndarray
    p_ual: np.ndarray


def head_step(x1, x2, labels, dml: dml_mod.DmlParams, bfs: bfs_mod.BfsParams, ual: ual_mod.UalParams,
              config: TrainConfig, loss_weights=(1.0, 1.0, 1.0)) -> HeadStep:
    """Forward/backward of the verifier head on a batch of embedding pairs.

    Gradients are stopped at the LEVs for the BFS loss and at the LEVs and
    the BFS posterior for the UAL loss.
    """
    labels = np.asarray(labels, dtype=int)
    a = labels.astype(float)
    n = labels.shape[0]
    w_dml, w_bfs, w_ual = loss_weights
    dfw = dml_mod.dml_forward(x1, x2, dml, a, config.tau_s, config.tau_d)
    g_dml, dx1, dx2 = dml_mod.dml_backward(dfw, dml, a, w_dml / n, config.tau_s, config.tau_d,
                                           train_kernel=config.train_kernel)
    y1 = dfw.y1.copy()
    y2 = dfw.y2.copy()
    bfw = bfs_mod.bfs_forward(y1, y2, bfs)
    g_bfs, _, _ = bfs_mod.bfs_backward(bfw, bfs, a, upstream=w_bfs / n)
    p_bfs = bfw.posterior.copy()
    ufw = ual_mod.ual_forward(y1, y2, p_bfs, ual, true_j=labels)
    g_ual = ual_mod.ual_backward(ufw, ual, labels, upstream=w_ual / n)
    losses = {"dml": float(np.mean(dfw.loss)),
              "bfs": float(np.mean(bfs_mod.bfs_loss(bfw.posterior, a))),
              "ual": float(np.mean(ufw.loss))}
    return HeadStep(losses, g_dml, g_bfs, g_ual, dx1, dx2, ufw.p_ual[:, 1])


class _HeadOptim:
    def __init__(self, dml, bfs, ual, config: TrainConfig):
        kw = dict(lr=config.lr, beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps)
        frozen = () if config.train_kernel else ("log_gamma", "log_alpha")
        self.dml, self.bfs = dml, bfs
        self.o_dml = Adam(dml.arrays(), frozen=frozen, weight_decay=config.weight_decay, decay=("weight",), **kw)
        head_kw = dict(kw, lr=config.lr if config.head_lr is None else config.head_lr)
        self.o_bfs = Adam(bfs.arrays(), **head_kw)
        self.o_ual = Adam(ual.arrays(), **head_kw)

    def step(self, res: HeadStep) -> None:
        self.o_dml.step(res.grads_dml)
        self.dml.clamp_alpha()
        self.o_bfs.step(res.grads_bfs)
        if not self.bfs.is_spd():
            raise NotPositiveDefinite("BFS precision matrix left the SPD cone")
        self.o_ual.step(res.grads_ual)


def _check_finite(losses: dict, epoch: int, batch: int) -> None:
    bad = {k: v for k, v in losses.items() if not np.isfinite(v)}
    if bad:
        raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch {batch}: {bad}")


def _doc_features(pipe: Pipeline, docs: Sequence[Document]):
    ids = sorted({d.id for d in docs})
    by_id = {d.id: d for d in docs}
    feats = pipe.features([by_id[i] for i in ids])
    return {i: k for k, i in enumerate(ids)}, feats


def _accuracy(p: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean((p > 0.5).astype(int) == labels)) if labels.size else float("nan")


def ual_answers(out: ScoreOutput) -> np.ndarray:
    return np.where(out.p_ual == NONRESPONSE, NONRESPONSE - ANSWER_NUDGE, out.p_ual)


def evaluate_trials(pipe: Pipeline, trials: Sequence[Trial], use_detector: bool = True,
                    table: DocTable | None = None) -> dict:
    out = score_trials(pipe, trials, table, use_detector)
    values = out.answers() if use_detector else ual_answers(out)
    ans = AnswerSet([t.id for t in trials], values, np.array([t.a for t in trials]))
    return pan_metrics(ans)


def _stage1_scores(pipe: Pipeline, y1, y2) -> ScoreOutput:
    saved, pipe.o2d2 = pipe.o2d2, None
    try:
        return pipe.score_levs(y1, y2)
    finally:
        pipe.o2d2 = saved


def score_trials(pipe: Pipeline, trials, table=None, use_detector=True) -> ScoreOutput:
    saved = pipe.o2d2
    if not use_detector:
        pipe.o2d2 = None
    try:
        return pipe.score_trials(trials, table)
    finally:
        pipe.o2d2 = saved


@dataclass
class Stage1Result:
    pipeline: Pipeline
    history: list = field(default_factory=list)
    best_epoch: int = 0
    probe: dict | None = None


def train_stage1(train_docs: Sequence[Document], config: TrainConfig, dev_trials: Sequence[Trial] | None = None,
                 pipeline: Pipeline | None = None, probe: bool = False,
                 on_epoch: Callable[[dict], None] | None = None) -> Stage1Result:
    """Jointly train encoder, DML, BFS and UAL with per-component losses.

    Pairs are resampled every epoch. With ``dev_trials`` the development
    overall score drives early stopping (``config.patience``) and the best
    epoch's parameters are returned. With ``probe=True`` a fandom verifier of
    the same head architecture is trained alongside on the stopped document
    embeddings; its accuracy curve is returned in ``result.probe``.
    """
    pipe = Pipeline.init(config) if pipeline is None else pipeline
    if config.epochs == 0:
        return Stage1Result(pipe)
    if not train_docs:
        raise ValueError("training split is empty")
    index, feats = _doc_features(pipe, train_docs)
    enc = pipe.encoder
    kw = dict(lr=config.lr, beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps)
    opt_enc = Adam(enc.arrays(), weight_decay=config.weight_decay, decay=("weight",), **kw)
    head_opt = _HeadOptim(pipe.dml, pipe.bfs, pipe.ual, config)

    if probe:
        prng = np.random.default_rng(_seed(config.seed, 7))
        p_dml = dml_mod.DmlParams.init(config.d_emb, config.d_lev, prng, gamma=config.gamma, alpha=config.alpha)
        p_bfs = bfs_mod.BfsParams.init(config.d_lev, config.d_bfs, prng, scale=config.bfs_init_scale)
        p_ual = ual_mod.UalParams.init(config.d_lev, config.d_ual, prng, beta=config.beta)
        probe_opt = _HeadOptim(p_dml, p_bfs, p_ual, config)
        probe_head = (p_dml, p_bfs, p_ual)

    if dev_trials:
        dev_docs = [d for t in dev_trials for d in (t.doc1, t.doc2)]
        dev_index, dev_feats = _doc_features(pipe, dev_docs)
        dev_a = np.array([t.a for t in dev_trials])
        dev_f = np.array([t.f for t in dev_trials])

    order_rng = np.random.default_rng(_seed(config.seed, 3))
    drop_rng = np.random.default_rng(_seed(config.seed, 5))
    history = []
    best = (-np.inf, 0, None)
    stale = 0
    for epoch in range(config.epochs):
        trials = resample_pairs(train_docs, config.train_quotas, epoch_seed=_seed(config.seed, 2, epoch),
                                passes=config.train_passes)
        i1 = np.array([index[t.doc1.id] for t in trials])
        i2 = np.array([index[t.doc2.id] for t in trials])
        a = np.array([t.a for t in trials])
        f = np.array([t.f for t in trials])
        perm = order_rng.permutation(len(trials))
        sums = {"dml": 0.0, "bfs": 0.0, "ual": 0.0}
        for b, start in enumerate(range(0, len(trials), config.batch_size)):
            sel = perm[start:start + config.batch_size]
            f1, f2 = feats[i1[sel]], feats[i2[sel]]
            if config.feature_dropout > 0.0:
                keep = 1.0 - config.feature_dropout
                f1 = f1 * (drop_rng.random(f1.shape) < keep) / keep
                f2 = f2 * (drop_rng.random(f2.shape) < keep) / keep
            x1 = encode(f1, enc)
            x2 = encode(f2, enc)
            res = head_step(x1, x2, a[sel], pipe.dml, pipe.bfs, pipe.ual, config)
            _check_finite(res.losses, epoch, b)
            g1, _ = encode_backward(f1, enc, res.dx1, x1)
            g2, _ = encode_backward(f2, enc, res.dx2, x2)
            if probe:
                pres = head_step(x1.copy(), x2.copy(), f[sel], p_dml, p_bfs, p_ual, config)
                _check_finite(pres.losses, epoch, b)
                probe_opt.step(pres)
            opt_enc.step({k: g1[k] + g2[k] for k in g1})
            head_opt.step(res)
            for k in sums:
                sums[k] += res.losses[k] * len(sel)
        rec = {"epoch": epoch + 1, **{f"loss_{k}": v / len(trials) for k, v in sums.items()},
               "n_pairs": len(trials)}
        y = pipe.levs_from_features(feats)
        out = _stage1_scores(pipe, y[i1], y[i2])
        rec["train_acc"] = _accuracy(out.p_ual, a)
        if probe:
            rec["fandom_acc"] = _accuracy(_probe_scores(feats, i1, i2, enc, probe_head), f)
        if dev_trials:
            dev_table = DocTable(dev_index, pipe.levs_from_features(dev_feats))
            d1 = np.array([dev_index[t.doc1.id] for t in dev_trials])
            d2 = np.array([dev_index[t.doc2.id] for t in dev_trials])
            dev_out = _stage1_scores(pipe, dev_table.y[d1], dev_table.y[d2])
            rec["dev_acc"] = _accuracy(dev_out.p_ual, dev_a)
            rec["dev_overall"] = pan_metrics(AnswerSet([t.id for t in dev_trials], ual_answers(dev_out), dev_a))["overall"]
            if probe:
                rec["dev_fandom_acc"] = _accuracy(_probe_scores(dev_feats, d1, d2, enc, probe_head), dev_f)
        history.append(rec)
        log.info(json.dumps(rec))
        if on_epoch is not None:
            on_epoch(rec)
        if dev_trials and config.patience > 0:
            if rec["dev_overall"] > best[0]:
                best = (rec["dev_overall"], epoch + 1, pipe.copy())
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    result = Stage1Result(pipe, history, best_epoch=len(history))
    if best[2] is not None:
        result.pipeline = best[2]
        result.best_epoch = best[1]
    if probe:
        result.probe = {key: [r.get(key) for r in history]
                        for key in ("epoch", "train_acc", "fandom_acc", "dev_acc", "dev_fandom_acc")}
    return result


def _probe_scores(feats, i1, i2, enc, head) -> np.ndarray:
    p_dml, p_bfs, p_ual = head
    xs = encode(feats, enc)
    y1 = dml_mod.project(xs[i1], p_dml)
    y2 = dml_mod.project(xs[i2], p_dml)
    fw = bfs_mod.bfs_forward(y1, y2, p_bfs)
    return ual_mod.ual_forward(y1, y2, fw.posterior, p_ual).p_ual[:, 1]


def fandom_probe(train_docs: Sequence[Document], config: TrainConfig,
                 dev_trials: Sequence[Trial] | None = None) -> Stage1Result:
    """Stage-1 training with a gradient-stopped fandom verifier alongside."""
    return train_stage1(train_docs, config, dev_trials, probe=True)


# -- stage 2 -----------------------------------------------------------------

@dataclass
class DetectorData:
    v: np.ndarray
    p_ual: np.ndarray
    a: np.ndarray


def detector_data(pipe: Pipeline, table: DocTable, trials: Sequence[Trial]) -> DetectorData:
    saved, pipe.o2d2 = pipe.o2d2, None
    try:
        out = pipe.score_pairs(table, [(t.doc1.id, t.doc2.id) for t in trials])
    finally:
        pipe.o2d2 = saved
    return DetectorData(o2d2_mod.build_input(out.y1, out.y2, out.cm), out.p_ual,
                        np.array([t.a for t in trials], dtype=int))


def detector_labels(data: DetectorData, epsilon: float) -> np.ndarray:
    a_hat = (data.p_ual > 0.5).astype(int)
    return np.atleast_1d(o2d2_mod._label(data.a, a_hat, data.p_ual, epsilon))


def train_o2d2(calib_docs: Sequence[Document], pipeline: Pipeline, config: TrainConfig,
               epsilon: float | None = None, seed: int | None = None,
               fixed_trials: Sequence[Trial] | None = None) -> o2d2_mod.O2d2Params:
    """Train the detector on calibration pairs; the stage-1 parameters stay untouched.

    Pairs are resampled every epoch (``config.calib_quotas``) unless
    ``fixed_trials`` is given. ``epsilon`` outside [0.05, 0.15] is accepted
    for label construction (the stored value is clamped), which keeps
    degenerate-label experiments possible.
    """
    eps = config.epsilon if epsilon is None else float(epsilon)
    if not 0.0 <= eps < 0.5:
        raise InvalidEpsilon(f"epsilon must lie in [0, 0.5), got {eps}")
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(_seed(seed, 11))
    params = o2d2_mod.O2d2Params.init(2 * config.d_lev + 4, config.d_h1, config.d_h2, rng, epsilon=eps)
    opt = Adam(params.arrays(), lr=config.o2d2_lr, beta1=config.adam_beta1, beta2=config.adam_beta2,
               eps=config.adam_eps)
    docs = list(calib_docs) if fixed_trials is None else [d for t in fixed_trials for d in (t.doc1, t.doc2)]
    table = pipeline.doc_table(docs)
    fixed = detector_data(pipeline, table, fixed_trials) if fixed_trials is not None else None
    for epoch in range(config.o2d2_epochs):
        if fixed is None:
            trials = resample_pairs(calib_docs, config.calib_quotas, epoch_seed=_seed(seed, 12, epoch),
                                    passes=config.calib_passes)
            data = detector_data(pipeline, table, trials)
        else:
            data = fixed
        labels = detector_labels(data, eps)
        if config.o2d2_class_weighting == "inverse":
            weights = o2d2_mod.class_weights(labels)
        else:
            weights = np.ones(labels.shape[0])
        perm = rng.permutation(labels.shape[0])
        for b, start in enumerate(range(0, labels.shape[0], config.o2d2_batch_size)):
            sel = perm[start:start + config.o2d2_batch_size]
            fw = o2d2_mod.o2d2_forward_full(data.v[sel], params)
            loss = o2d2_mod.o2d2_loss(fw.p, labels[sel], weights[sel])
            if not np.all(np.isfinite(loss)):
                raise NonFiniteLoss(f"non-finite detector loss at epoch {epoch}, batch {b}")
            grads = o2d2_mod.o2d2_backward(fw, params, labels[sel], weights[sel], upstream=1.0 / len(sel))
            opt.step(grads)
    return params


def tune_epsilon(validation_trials: Sequence[Trial], calib_docs: Sequence[Document], pipeline: Pipeline,
                 config: TrainConfig, grid: Sequence[float] | None = None):
    """Pick the detector margin maximizing the validation overall score.

    Trains one detector per grid point; ties go to the smaller margin. The
    winning detector is attached to ``pipeline``. Returns ``(epsilon, table)``
    where ``table`` lists the metrics per grid point.
    """
    grid = config.eps_grid if grid is None else grid
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise EmptyGrid("epsilon grid is empty")
    for g in grid:
        if not (o2d2_mod.EPS_MIN - 1e-12 <= g <= o2d2_mod.EPS_MAX + 1e-12):
            raise InvalidEpsilon(f"grid point {g} outside [{o2d2_mod.EPS_MIN}, {o2d2_mod.EPS_MAX}]")
    saved = pipeline.o2d2
    pipeline.o2d2 = None
    vdocs = [d for t in validation_trials for d in (t.doc1, t.doc2)]
    vtable = pipeline.doc_table(vdocs)
    vdata = detector_data(pipeline, vtable, validation_trials)
    pipeline.o2d2 = saved
    ids = [t.id for t in validation_trials]
    table = []
    best = None
    for eps in grid:
        det = train_o2d2(calib_docs, pipeline, config, eps)
        p_h2 = o2d2_mod.o2d2_forward(vdata.v, det)
        values = np.where(p_h2 >= 0.5, NONRESPONSE,
                          np.where(vdata.p_ual == NONRESPONSE, NONRESPONSE - ANSWER_NUDGE, vdata.p_ual))
        scores = pan_metrics(AnswerSet(ids, values, vdata.a))
        scores["epsilon"] = eps
        scores["nonresponse_rate"] = float(np.mean(values == NONRESPONSE))
        table.append(scores)
        if best is None or scores["overall"] > best[0]:
            best = (scores["overall"], eps, det)
    pipeline.o2d2 = best[2]
    return best[1], table
