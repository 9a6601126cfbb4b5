import numpy as np
import pytest

from hybridav import trainer
from hybridav.dataprep import resample_pairs
from hybridav.experiment import complete_split, run_experiment
from hybridav.model import TrainConfig
from hybridav.synthetic import gen_synthetic

SEEDS = (0, 1, 2)


def tiny_config(**kw) -> TrainConfig:
    base = dict(d_feat=512, d_emb=16, d_lev=8, d_bfs=4, d_ual=4, d_h1=8, d_h2=4,
                epochs=2, o2d2_epochs=2, train_passes=1, calib_passes=1, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_corpus():
    return gen_synthetic(n_authors=80, docs_per_author=2, n_fandoms=8, seed=3)


@pytest.fixture(scope="session")
def tiny_split(tiny_corpus):
    return complete_split(tiny_corpus, seed=0)


@pytest.fixture(scope="session")
def tiny_pipeline(tiny_split):
    """Stage-1 model plus detector trained on the tiny corpus."""
    cfg = tiny_config()
    pipe = trainer.train_stage1(tiny_split.docs["training"], cfg).pipeline
    pipe.o2d2 = trainer.train_o2d2(tiny_split.docs["calibration"], pipe, cfg)
    return pipe


@pytest.fixture(scope="session")
def experiment_reports():
    """The desk-scale synthetic experiment with default settings, three seeds."""
    return run_experiment(SEEDS)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
