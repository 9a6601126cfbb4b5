import numpy as np
import pytest

from hybridav.errors import DimensionMismatch, InvalidEpsilon
from hybridav.gradcheck import grad_check
from hybridav.o2d2 import (O2d2Params, build_input, class_weights, o2d2_backward, o2d2_forward,
                           o2d2_forward_full, o2d2_label, o2d2_loss)


class TestLabel:
    def test_examples(self):
        assert o2d2_label(1, 1, 0.9, 0.1) == 0
        assert o2d2_label(1, 0, 0.2, 0.1) == 1
        assert o2d2_label(1, 1, 0.55, 0.1) == 1

    def test_vectorized(self):
        out = o2d2_label(np.array([1, 0, 1]), np.array([1, 0, 0]), np.array([0.7, 0.1, 0.4]), 0.15)
        assert out.tolist() == [0, 0, 1]

    def test_epsilon_range(self):
        with pytest.raises(InvalidEpsilon):
            o2d2_label(1, 1, 0.5, 0.3)


class TestInput:
    def test_example(self):
        v = build_input(np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.full((2, 2), 0.5))
        assert v.tolist() == [1, 1, 1, 1, 0.5, 0.5, 0.5, 0.5]

    def test_equal_levs_and_swap(self, rng):
        y1, y2 = rng.normal(size=(2, 3, 4))
        cm = rng.uniform(size=(3, 2, 2))
        assert not np.any(build_input(y1, y1, cm)[:, :4])
        assert np.array_equal(build_input(y1, y2, cm), build_input(y2, y1, cm))

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            build_input(np.zeros(2), np.zeros(2), np.zeros((3, 2, 2)))


class TestForward:
    def test_zero_params(self):
        p = O2d2Params(np.zeros((3, 4)), np.zeros(3), np.zeros((2, 3)), np.zeros(2), np.zeros((1, 2)), np.zeros(1))
        assert o2d2_forward(np.ones(4), p) == 0.5

    def test_scalar_net(self):
        one = np.ones((1, 1))
        p = O2d2Params(one, np.zeros(1), one, np.zeros(1), one, np.zeros(1))
        expect = 1 / (1 + np.exp(-np.tanh(np.tanh(1.0))))
        assert o2d2_forward(np.ones(1), p) == pytest.approx(expect, abs=1e-15)
        assert o2d2_forward(np.ones(1), p) == pytest.approx(0.6552, abs=1e-4)

    def test_range(self, rng):
        p = O2d2Params.init(6, 5, 4, rng)
        out = o2d2_forward(rng.uniform(0, 2, (100, 6)), p)
        assert np.all((out > 0) & (out < 1))


class TestLoss:
    def test_values(self):
        assert o2d2_loss(1.0, 1) == pytest.approx(0.0, abs=1e-11)
        assert o2d2_loss(0.5, 1) == pytest.approx(np.log(2))
        assert o2d2_loss(0.25, 0) == pytest.approx(-np.log(0.75))
        assert o2d2_loss(0.25, 0) == pytest.approx(0.2877, abs=1e-4)

    def test_class_weights(self):
        w = class_weights(np.array([1, 0, 0, 0]))
        assert w.tolist() == [2.0, 2 / 3, 2 / 3, 2 / 3]
        assert class_weights(np.zeros(3)).tolist() == [1, 1, 1]


class TestBackward:
    def test_confident_correct_near_zero(self, rng):
        p = O2d2Params.init(4, 3, 2, rng)
        p.b3[:] = -40.0
        fw = o2d2_forward_full(rng.uniform(size=(5, 4)), p)
        g = o2d2_backward(fw, p, np.zeros(5))
        assert max(np.max(np.abs(v)) for v in g.values()) < 1e-12

    def test_only_detector_params(self, rng):
        p = O2d2Params.init(4, 3, 2, rng)
        g = o2d2_backward(o2d2_forward_full(rng.uniform(size=(2, 4)), p), p, np.ones(2))
        assert set(g) == set(p.arrays())

    def test_finite_differences(self):
        assert grad_check("o2d2", n_cases=30, seed=3).max_rel_error < 1e-4
