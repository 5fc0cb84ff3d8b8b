import numpy as np
import pytest

import mobilevig.grad_check as gc
from mobilevig.grad_check import GradCheckError, grad_check_svga, random_block_weights
from mobilevig.svga import svga_block_forward


def test_full_block_gradients_match_finite_differences():
    err = grad_check_svga((1, 4, 4, 4), k=2, seed=0)
    assert err < 1e-4, f"max relative error {err}"


def test_small_irregular_shape():
    err = grad_check_svga((1, 2, 3, 5), k=2, seed=1)
    assert err < 1e-4, f"max relative error {err}"


def test_linear_subnetwork_is_near_exact():
    err = grad_check_svga((1, 4, 4, 4), k=2, seed=0, identity_act=True)
    assert err < 1e-8, f"max relative error {err}"


def test_element_budget_enforced():
    with pytest.raises(ValueError):
        grad_check_svga((2, 16, 16, 16), k=2, seed=0)


def test_gradients_block_diagonal_in_batch():
    # perturbing batch element 0 never moves outputs of batch element 1
    rng = np.random.default_rng(3)
    w = random_block_weights(3, 2, rng)
    x = rng.normal(size=(2, 3, 4, 4))
    base = svga_block_forward(x, w)
    bumped = x.copy()
    bumped[0, 1, 2, 3] += 0.25
    out = svga_block_forward(bumped, w)
    assert np.array_equal(out[1], base[1])
    assert not np.array_equal(out[0], base[0])


def test_nonfinite_gradient_names_parameter(monkeypatch):
    def poisoned(c, k, rng, ffn_ratio=4, dtype=np.float64):
        w = random_block_weights(c, k, rng, ffn_ratio, dtype)
        w.grapher.w_in.weight[0, 0, 0, 0] = np.nan
        return w

    monkeypatch.setattr(gc, "random_block_weights", poisoned)
    with pytest.raises(GradCheckError, match="non-finite gradient for"):
        grad_check_svga((1, 2, 3, 3), k=2, seed=0, identity_act=True)
