"""Acceptance criteria of the package, one PASS/FAIL line per primary criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the report lines.
"""

import time

import numpy as np
import pytest

from hybridav import ensemble, trainer
from hybridav.bfs import BfsParams, log_likelihoods
from hybridav.dataprep import SUBSETS, eligible_docs, make_trial, resample_pairs, split_corpus, usage_counts
from hybridav.experiment import complete_split, criteria, validation_trials
from hybridav.gradcheck import grad_check
from hybridav.metrics import (AnswerSet, auc, brier_complement, c_at_1, f1, f_05_u, overall, reliability)
from hybridav.model import TrainConfig
from hybridav.synthetic import gen_synthetic
from hybridav.ual import UalParams, ual_forward, ual_posterior

from conftest import tiny_config
from test_bfs import joint_gaussian_oracle, monte_carlo_oracle, random_model, random_spd, scalar_model
from test_dataprep import audit_split
from test_metrics import (naive_auc, naive_brier, naive_c_at_1, naive_ece, naive_f05u, naive_f1,
                          random_answers)
from test_model import random_trials


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail=""):
        with capsys.disabled():
            print(f"\n[PRIMARY] {name}: {'PASS' if ok else 'FAIL'}  {detail}")
    return emit


def test_gradient_suite(report):
    reps = [grad_check(c, n_cases=200, max_dim=8, seed=0) for c in ("encoder", "dml", "bfs", "ual", "o2d2")]
    seconds = sum(r.seconds for r in reps)
    worst = max(r.max_rel_error for r in reps)
    ok = all(r.passed(1e-4) for r in reps) and seconds < 30
    report("gradient suite", ok, f"max rel error {worst:.2e}, {seconds:.1f} s for 5 x 200 cases")
    assert ok


def test_bfs_oracle(report):
    rng = np.random.default_rng(0)
    direct = 0.0
    for d in range(1, 9):
        for _ in range(10):
            p = random_model(rng, d)
            r1, r2 = rng.normal(size=(2, d))
            got = np.array(log_likelihoods(r1, r2, p))
            direct = max(direct, float(np.max(np.abs(got - joint_gaussian_oracle(r1, r2, p.W_prec, p.B_prec, p.mu)))))
    mc = 0.0
    for d in (1, 2, 3):
        p = BfsParams.from_precisions(np.eye(d), np.zeros(d), rng.normal(0, 0.3, d),
                                      random_spd(rng, d, lo=1.0), random_spd(rng, d, lo=1.0))
        r1, r2 = p.mu + rng.normal(0, 0.5, size=(2, d))
        got = np.exp(log_likelihoods(r1, r2, p))
        want = np.exp(monte_carlo_oracle(r1, r2, p.W_prec, p.B_prec, p.mu, rng))
        mc = max(mc, float(np.max(np.abs(got - want) / want)))
    l1, l0 = log_likelihoods(np.zeros(1), np.zeros(1), scalar_model())
    m1, m0 = log_likelihoods(np.array([2.0]), np.array([-2.0]), scalar_model())
    worked = max(abs(l1 - l0 - 0.1438410362), abs(m1 - m0 + 1.8561589638))
    ok = direct <= 1e-8 and mc < 0.01 and worked <= 1e-6
    report("BFS oracle", ok, f"direct {direct:.1e}, Monte-Carlo rel {mc:.2e}, worked examples {worked:.1e}")
    assert ok


def test_ual_algebra(report):
    rng = np.random.default_rng(0)
    p_bfs = rng.uniform(size=10**4)
    ident = float(np.max(np.abs(ual_posterior(np.broadcast_to(np.eye(2), (10**4, 2, 2)), p_bfs)[:, 1] - p_bfs)))
    p = UalParams.init(6, 5, rng)
    p.conf_weight[:] = rng.normal(0, 2, p.conf_weight.shape)
    p.conf_bias[:] = rng.normal(0, 2, (2, 2))
    y1, y2 = rng.uniform(-1, 1, (2, 10**4, 6))
    total = float(np.max(np.abs(ual_forward(y1, y2, p_bfs, p).p_ual.sum(axis=-1) - 1.0)))
    worked = float(ual_posterior(np.array([[0.9, 0.1], [0.2, 0.8]]), 0.7)[1])
    ok = ident <= 1e-12 and total <= 1e-12 and worked == pytest.approx(0.59, abs=1e-15)
    report("UAL algebra", ok, f"identity {ident:.1e}, sum-to-one {total:.1e}, worked example {worked!r}")
    assert ok


def test_metrics_oracle(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        v, t = random_answers(rng)
        a = AnswerSet.from_arrays(v, t)
        errs = [auc(a) - naive_auc(v, t), c_at_1(a) - naive_c_at_1(v, t), f1(a) - naive_f1(v, t),
                f_05_u(a) - naive_f05u(v, t), brier_complement(a) - naive_brier(v, t)]
        if np.any(v != 0.5):
            cal = reliability(a)
            ece, mce = naive_ece(v, t)
            errs += [cal.ece - ece, cal.mce - mce]
        worst = max(worst, max(abs(e) for e in errs))
    fixture = c_at_1(AnswerSet.from_arrays([1.0] * 7 + [0.0] + [0.5] * 2, [1] * 10))
    row = 100 * overall(0.983, 0.926, 0.946, 0.921, 0.927)
    row_ok = abs(row - 94.0) <= 0.05
    oracle_ok = worst <= 1e-12 and fixture == 0.84
    report("metrics oracle", oracle_ok and row_ok,
           f"naive max diff {worst:.1e}, c@1 fixture {fixture!r}; published single-model row overall "
           f"{row:.2f} vs 94.0 +- 0.05 {'ok' if row_ok else 'out of tolerance (rounded inputs)'}")
    assert oracle_ok


@pytest.mark.xfail(strict=True, reason="the published row's rounded inputs average to 94.06")
def test_metrics_published_row():
    assert abs(100 * overall(0.983, 0.926, 0.946, 0.921, 0.927) - 94.0) <= 0.05


def test_ensemble(report, tiny_pipeline, tiny_split):
    trials = validation_trials(tiny_split.docs["validation"], seed=4)
    single = tiny_pipeline.score_trials(trials).answers()
    one = np.array([v.value for v in ensemble.predict(trials, [tiny_pipeline])])
    two_flags = ensemble.combine([(0.9, 0.6), (0.8, 0.7), (0.1, 0.2)])
    one_flag = ensemble.combine([(0.2, 0.9), (0.8, 0.1), (0.6, 0.3)])
    ok = (np.array_equal(one, single) and two_flags.is_nonresponse and two_flags.value == 0.5
          and not one_flag.is_nonresponse and one_flag.value == (0.8 + 0.6) / 2)
    report("ensemble", ok, f"M=1 bit-identical on {len(trials)} trials, vote fixtures exact")
    assert ok


def test_swap_symmetry(report, tiny_pipeline, tiny_split, tiny_corpus):
    members = [tiny_pipeline]
    for s in (1, 2):
        cfg = tiny_config(seed=s)
        p = trainer.train_stage1(tiny_split.docs["training"], cfg).pipeline
        p.o2d2 = trainer.train_o2d2(tiny_split.docs["calibration"], p, cfg)
        members.append(p)
    trials = random_trials(tiny_corpus, 1000, np.random.default_rng(5))
    swapped = [t.swapped() for t in trials]
    single = np.array_equal(tiny_pipeline.score_trials(trials).answers(),
                            tiny_pipeline.score_trials(swapped).answers())
    fwd = [v.value for v in ensemble.predict(trials, members)]
    rev = [v.value for v in ensemble.predict(swapped, members)]
    ok = single and fwd == rev
    report("swap symmetry", ok, f"{len(trials)} random trials, single model and M=3, bit-exact")
    assert ok


def test_split_and_resample(report):
    n_splits = 0
    spread = 0
    for seed in range(4):
        docs = gen_synthetic(300, 2, 8, seed=seed)
        split = split_corpus(docs, ratios=(0.6, 0.2, 0.2), seed=seed)
        audit_split(docs, split)
        n_splits += 1
        for part in (docs, complete_split(gen_synthetic(200, 2, 8, seed=seed), seed).docs["training"]):
            for epoch in range(3):
                counts = usage_counts(resample_pairs(part, epoch_seed=epoch, passes=1 + epoch))
                for s in SUBSETS:
                    used = [counts[s].get(part[i].id, 0) for i in eligible_docs(part, s)]
                    spread = max(spread, max(used) - min(used))
    ok = spread <= 1
    report("split/resample", ok, f"{n_splits} corpora audited exhaustively, max usage spread {spread}")
    assert ok


def test_end_to_end_experiment(report, experiment_reports):
    crit = criteria(experiment_reports)
    minutes = sum(r.seconds for r in experiment_reports) / 60
    epochs = max(len(r.history) for r in experiment_reports)
    for name, c in crit.items():
        report(f"experiment {name}", c["passed"], f"per seed {c['per_seed']}")
    rates = [round(r.with_o2d2["nonresponse_rate"], 3) for r in experiment_reports]
    ok = all(c["passed"] for c in crit.values()) and minutes < 10 and epochs <= 20
    report("end-to-end experiment", ok, f"{minutes:.1f} min, {epochs} epochs max, non-response rates {rates}")
    assert ok


def test_determinism(report, tmp_path):
    docs = gen_synthetic(200, 2, 8, seed=0)
    split = complete_split(docs, 0)
    val = validation_trials(split.docs["validation"], seed=9)
    blobs, answers = [], []
    for k in range(2):
        cfg = TrainConfig(epochs=2, o2d2_epochs=2, seed=5)
        pipe = trainer.train_stage1(split.docs["training"], cfg).pipeline
        pipe.o2d2 = trainer.train_o2d2(split.docs["calibration"], pipe, cfg)
        pipe.save(tmp_path / f"{k}.npz")
        blobs.append((tmp_path / f"{k}.npz").read_bytes())
        answers.append(pipe.score_trials(val).answers())
    ok = blobs[0] == blobs[1] and np.array_equal(answers[0], answers[1])
    report("determinism", ok, "checkpoint bytes and answers identical across two runs")
    assert ok
