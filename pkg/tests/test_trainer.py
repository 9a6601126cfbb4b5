import numpy as np
import pytest

from hybridav import trainer
from hybridav.bfs import BfsParams
from hybridav.dataprep import resample_pairs
from hybridav.dml import DmlParams
from hybridav.errors import EmptyGrid, InvalidEpsilon
from hybridav.experiment import run_seed
from hybridav.model import Pipeline
from hybridav.ual import UalParams

from conftest import SEEDS, tiny_config


def head(cfg, seed=0):
    rng = np.random.default_rng(seed)
    return (DmlParams.init(cfg.d_emb, cfg.d_lev, rng), BfsParams.init(cfg.d_lev, cfg.d_bfs, rng),
            UalParams.init(cfg.d_lev, cfg.d_ual, rng))


class TestStage1:
    def test_zero_epochs_is_init(self, tiny_split):
        cfg = tiny_config(epochs=0)
        res = trainer.train_stage1(tiny_split.docs["training"], cfg)
        assert res.pipeline.param_digest() == Pipeline.init(cfg).param_digest()
        assert res.history == []

    def test_spd_and_history(self, tiny_split):
        res = trainer.train_stage1(tiny_split.docs["training"], tiny_config(epochs=3))
        assert res.pipeline.bfs.is_spd()
        assert [r["epoch"] for r in res.history] == [1, 2, 3]
        assert all(np.isfinite(r["loss_dml"]) for r in res.history)

    def test_losses_reach_only_their_own_parameters(self, rng):
        cfg = tiny_config()
        x1, x2 = rng.uniform(-1, 1, (2, 10, cfg.d_emb))
        labels = rng.integers(0, 2, 10)
        full = trainer.head_step(x1, x2, labels, *head(cfg), cfg)
        # with the DML loss switched off, no gradient reaches the DML layer or the embeddings
        no_dml = trainer.head_step(x1, x2, labels, *head(cfg), cfg, loss_weights=(0.0, 1.0, 1.0))
        assert all(not np.any(g) for g in no_dml.grads_dml.values())
        assert not np.any(no_dml.dx1) and not np.any(no_dml.dx2)
        # the BFS and UAL gradients do not depend on the other losses
        for w in [(0.0, 1.0, 1.0), (1.0, 1.0, 0.0), (5.0, 1.0, 3.0)]:
            other = trainer.head_step(x1, x2, labels, *head(cfg), cfg, loss_weights=w)
            for k in full.grads_bfs:
                np.testing.assert_array_equal(full.grads_bfs[k], other.grads_bfs[k])
        for w in [(0.0, 1.0, 1.0), (1.0, 0.0, 1.0)]:
            other = trainer.head_step(x1, x2, labels, *head(cfg), cfg, loss_weights=w)
            for k in full.grads_ual:
                np.testing.assert_array_equal(full.grads_ual[k], other.grads_ual[k])
        for k in full.grads_dml:
            np.testing.assert_array_equal(
                full.grads_dml[k],
                trainer.head_step(x1, x2, labels, *head(cfg), cfg, loss_weights=(1.0, 0.0, 0.0)).grads_dml[k])

    def test_probe_does_not_touch_the_verifier(self, tiny_split):
        cfg = tiny_config(epochs=2)
        plain = trainer.train_stage1(tiny_split.docs["training"], cfg)
        probed = trainer.train_stage1(tiny_split.docs["training"], cfg, probe=True)
        assert plain.pipeline.param_digest() == probed.pipeline.param_digest()
        assert probed.probe is not None and len(probed.probe["fandom_acc"]) == 2

    def test_probe_without_topic_signal_is_chance(self):
        cfg = tiny_config(epochs=5, d_feat=1024, d_emb=32, d_lev=16, train_passes=2)
        rep = run_seed(0, cfg, n_authors=120, synth_kwargs={"topic_strength": 0.0})
        assert abs(rep.probe["dev_fandom_acc"] - 0.5) < 0.1


class TestStage2:
    def test_stage1_frozen(self, tiny_split):
        cfg = tiny_config()
        pipe = trainer.train_stage1(tiny_split.docs["training"], cfg).pipeline
        before = pipe.param_digest(("encoder", "dml", "bfs", "ual"))
        trainer.train_o2d2(tiny_split.docs["calibration"], pipe, cfg)
        trainer.tune_epsilon(resample_pairs(tiny_split.docs["validation"]), tiny_split.docs["calibration"],
                             pipe, cfg, grid=(0.05, 0.1))
        assert pipe.param_digest(("encoder", "dml", "bfs", "ual")) == before

    def test_zero_margin_without_mistakes_never_flags(self, tiny_pipeline, tiny_split):
        cfg = tiny_config(o2d2_epochs=30)
        trials = resample_pairs(tiny_split.docs["calibration"], epoch_seed=0, passes=4)
        out = trainer.score_trials(tiny_pipeline, trials, use_detector=False)
        right = [t for t, p in zip(trials, out.p_ual) if (p > 0.5) == bool(t.a)]
        data = trainer.detector_data(tiny_pipeline, tiny_pipeline.doc_table(
            [d for t in right for d in (t.doc1, t.doc2)]), right)
        assert not trainer.detector_labels(data, 0.0).any()
        det = trainer.train_o2d2(tiny_split.docs["calibration"], tiny_pipeline, cfg, epsilon=0.0,
                                 fixed_trials=right)
        pipe = tiny_pipeline.copy()
        pipe.o2d2 = det
        assert np.all(pipe.score_trials(right).p_h2 < 0.5)

    def test_bad_epsilon(self, tiny_pipeline, tiny_split):
        with pytest.raises(InvalidEpsilon):
            trainer.train_o2d2(tiny_split.docs["calibration"], tiny_pipeline, tiny_config(), epsilon=0.6)

    def test_tune_single_point(self, tiny_pipeline, tiny_split):
        pipe = tiny_pipeline.copy()
        val = resample_pairs(tiny_split.docs["validation"], epoch_seed=1)
        eps, table = trainer.tune_epsilon(val, tiny_split.docs["calibration"], pipe, tiny_config(), grid=[0.1])
        assert eps == 0.1 and len(table) == 1 and pipe.o2d2 is not None

    def test_tune_tie_takes_smallest(self, tiny_pipeline, tiny_split, monkeypatch):
        pipe = tiny_pipeline.copy()
        val = resample_pairs(tiny_split.docs["validation"], epoch_seed=1)
        monkeypatch.setattr(trainer, "pan_metrics", lambda ans: {"overall": 0.7})
        eps, table = trainer.tune_epsilon(val, tiny_split.docs["calibration"], pipe, tiny_config(),
                                          grid=[0.15, 0.05, 0.1])
        assert eps == 0.05 and [r["epsilon"] for r in table] == [0.05, 0.1, 0.15]

    def test_empty_grid(self, tiny_pipeline, tiny_split):
        with pytest.raises(EmptyGrid):
            trainer.tune_epsilon([], tiny_split.docs["calibration"], tiny_pipeline, tiny_config(), grid=[])

    def test_grid_out_of_range(self, tiny_pipeline, tiny_split):
        with pytest.raises(InvalidEpsilon):
            trainer.tune_epsilon([], tiny_split.docs["calibration"], tiny_pipeline, tiny_config(), grid=[0.3])


class TestExperimentDynamics:
    def test_dml_loss_decreases(self, experiment_reports):
        def decreasing(r):
            losses = [h["loss_dml"] for h in r.history[:5]]
            return len(losses) == 5 and all(b < a for a, b in zip(losses, losses[1:]))
        assert sum(decreasing(r) for r in experiment_reports) >= 2

    def test_detector_separates(self, experiment_reports):
        assert all(r.detector_auc > 0.7 for r in experiment_reports)
