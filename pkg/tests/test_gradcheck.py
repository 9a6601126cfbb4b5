import numpy as np
import pytest

from hybridav.gradcheck import COMPONENTS, check_gradient, grad_check, numeric_grad, rel_error


class TestHarness:
    def test_linear_and_quadratic(self, rng):
        w = rng.normal(size=(3, 4))
        c = rng.normal(size=(3, 4))
        errs = check_gradient(lambda: float(np.sum(c * w) + np.sum(w ** 2)), {"w": w}, {"w": c + 2 * w})
        assert errs["w"] < 1e-8

    def test_numeric_grad_restores_input(self, rng):
        w = rng.normal(size=5)
        before = w.copy()
        numeric_grad(lambda: float(np.sum(np.sin(w))), w)
        np.testing.assert_array_equal(w, before)

    def test_rel_error_floor(self):
        assert rel_error(np.zeros(3), np.full(3, 1e-11)) < 1e-4
        assert rel_error(np.ones(3), -np.ones(3)) == pytest.approx(1.0)

    @pytest.mark.parametrize("component", COMPONENTS)
    def test_detects_corruption(self, component):
        def corrupt(grads):
            key = max(grads, key=lambda k: np.abs(grads[k]).max())
            grads[key] = grads[key] * 1.01
            return grads
        rep = grad_check(component, n_cases=10, max_dim=4, seed=3, corrupt=corrupt)
        assert not rep.passed(1e-4)

    def test_unknown_component(self):
        with pytest.raises(ValueError):
            grad_check("lstm")


@pytest.mark.parametrize("component", COMPONENTS)
def test_component_gradients(component):
    rep = grad_check(component, n_cases=40, max_dim=6, seed=11)
    assert rep.passed(1e-4), (rep.worst, rep.max_rel_error)
