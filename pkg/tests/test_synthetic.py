import numpy as np
import pytest

from hybridav.encoder import featurize_many
from hybridav.errors import InvalidConfig
from hybridav.metrics import AnswerSet, auc
from hybridav.synthetic import gen_synthetic


def cosine_auc(docs):
    """AUC of raw feature cosine similarity for same- vs different-author pairs."""
    f = featurize_many(docs, min_tokens=1)
    sim = f @ f.T
    authors = np.array([d.author_id for d in docs])
    iu = np.triu_indices(len(docs), 1)
    same = (authors[:, None] == authors[None, :])[iu]
    return auc(AnswerSet.from_arrays(sim[iu], same.astype(int)))


class TestGenerator:
    def test_deterministic(self):
        assert gen_synthetic(20, 2, 4, seed=5) == gen_synthetic(20, 2, 4, seed=5)
        assert gen_synthetic(20, 2, 4, seed=5) != gen_synthetic(20, 2, 4, seed=6)

    def test_shape(self):
        docs = gen_synthetic(30, 3, 5, seed=0)
        assert len(docs) == 90 and len({d.id for d in docs}) == 90
        assert {d.fandom_id for d in docs} <= {f"f{k:02d}" for k in range(5)}
        assert all(d.n_tokens >= 32 for d in docs)

    def test_invalid(self):
        with pytest.raises(InvalidConfig):
            gen_synthetic(1, 2, 4)
        with pytest.raises(InvalidConfig):
            gen_synthetic(10, 2, 4, style_strength=1.5)

    def test_no_style_no_author_signal(self):
        docs = gen_synthetic(60, 2, 1 + 1, style_strength=0.0, topic_strength=0.0, seed=2)
        assert abs(cosine_auc(docs) - 0.5) < 0.1

    def test_style_gives_author_signal(self):
        docs = gen_synthetic(60, 2, 2, style_strength=1.0, topic_strength=0.0, seed=2)
        assert cosine_auc(docs) > 0.8

    def test_two_distinct_authors_separable(self):
        docs = gen_synthetic(2, 20, 2, style_strength=1.0, topic_strength=0.0, seed=0)
        x = featurize_many(docs, min_tokens=1)
        y = np.array([d.author_id for d in docs])
        # leave-one-out nearest centroid
        for k in range(len(docs)):
            keep = np.arange(len(docs)) != k
            cents = {a: x[keep & (y == a)].mean(0) for a in set(y)}
            assert max(cents, key=lambda a: x[k] @ cents[a]) == y[k]
