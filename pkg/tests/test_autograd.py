"""Forward semantics and gradient correctness of the autograd engine.

Every differentiable op is checked against central finite differences on
randomly drawn small tensors; the dedicated acceptance module repeats the
check with the full trial count.
"""

import numpy as np
import pytest

from fsfl.autograd import (
    Tensor,
    add,
    assert_finite,
    batch_norm2d,
    conv2d,
    dense,
    flatten,
    max_pool2d,
    mul,
    relu,
    softmax_cross_entropy,
    tensor_sum,
    weighted_sum,
)

from conftest import finite_diff_grad, rel_error


class TestForward:
    def test_conv_of_ones_sums_window(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = conv2d(x, w)
        assert out.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == 9.0

    def test_relu_definition(self):
        out = relu(Tensor(np.array([-1.0, 0.0, 2.0])))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_batchnorm_eval_unit_stats_is_identity(self, rng):
        # with mean 0 / var 1 / gamma 1 / beta 0 the map is x / sqrt(1 + eps)
        x = rng.normal(size=(4, 3, 5, 5))
        out = batch_norm2d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)),
                           np.zeros(3), np.ones(3), training=False)
        np.testing.assert_allclose(out.data, x, rtol=2e-5, atol=0)

    def test_conv_channel_mismatch_reports_shapes(self):
        x = Tensor(np.ones((1, 2, 4, 4)))
        w = Tensor(np.ones((1, 3, 3, 3)))
        with pytest.raises(ValueError, match="channel mismatch"):
            conv2d(x, w)

    def test_dense_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dense shape mismatch"):
            dense(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))

    def test_maxpool_requires_divisible_dims(self):
        with pytest.raises(ValueError, match="not divisible"):
            max_pool2d(Tensor(np.ones((1, 1, 5, 5))), 2)

    def test_forward_deterministic(self, rng):
        x = rng.normal(size=(2, 3, 8, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        a = conv2d(Tensor(x), Tensor(w), stride=1, padding=1).data
        b = conv2d(Tensor(x), Tensor(w), stride=1, padding=1).data
        np.testing.assert_array_equal(a, b)

    def test_nan_flagging(self):
        bad = Tensor(np.array([1.0, np.nan]))
        with pytest.raises(FloatingPointError, match="loss"):
            assert_finite(bad, "loss")


class TestBackwardBasics:
    def test_backward_rejects_non_scalar(self):
        t = Tensor(np.ones(3), requires_grad=True)
        out = relu(t)
        with pytest.raises(ValueError, match="scalar"):
            out.backward()

    def test_linear_map_gradient_is_the_fixed_factor(self, rng):
        x = rng.normal(size=7)
        w = Tensor(rng.normal(size=7), requires_grad=True)
        loss = tensor_sum(mul(w, Tensor(x)))
        loss.backward()
        np.testing.assert_allclose(w.grad, x, rtol=0, atol=0)

    def test_gradients_accumulate_until_cleared(self, rng):
        w = Tensor(rng.normal(size=4), requires_grad=True)
        tensor_sum(w).backward()
        tensor_sum(w).backward()
        np.testing.assert_allclose(w.grad, 2.0 * np.ones(4))
        w.zero_grad()
        assert w.grad is None


def _check_op_grads(build, tensors, tol=1e-6, h=1e-5):
    """build() -> scalar Tensor; checks each requires_grad input against FD."""
    loss = build()
    for t in tensors:
        t.zero_grad()
    loss = build()
    loss.backward()
    for t in tensors:
        numeric = finite_diff_grad(lambda: build().data.item(), t.data, h=h)
        assert t.grad is not None
        err = rel_error(t.grad, numeric)
        assert err < tol, f"gradient mismatch: rel error {err:.3e}"


class TestGradientsAgainstFiniteDifferences:
    def test_conv2d(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 6, 6)), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 3, 3, 3)) * 0.5, requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)
        proj = rng.normal(size=(2, 2, 3, 3))

        def build():
            return weighted_sum(conv2d(x, w, b, stride=2, padding=1), proj)

        _check_op_grads(build, [x, w, b])

    def test_dense(self, rng):
        x = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        proj = rng.normal(size=(4, 3))

        def build():
            return weighted_sum(dense(x, w, b), proj)

        _check_op_grads(build, [x, w, b])

    def test_scaling_broadcast_multiply(self, rng):
        w = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
        s = Tensor(rng.uniform(0.5, 2.0, size=(4, 1, 1, 1)), requires_grad=True)
        x = Tensor(rng.normal(size=(2, 3, 5, 5)))
        proj = rng.normal(size=(2, 4, 5, 5))

        def build():
            return weighted_sum(conv2d(x, mul(w, s), padding=1), proj)

        _check_op_grads(build, [w, s])

    def test_relu_and_pool(self, rng):
        x = Tensor(rng.normal(size=(2, 2, 4, 4)) + 0.05, requires_grad=True)
        proj = rng.normal(size=(2, 2, 2, 2))

        def build():
            return weighted_sum(max_pool2d(relu(x), 2), proj)

        _check_op_grads(build, [x])

    def test_batchnorm_train_mode(self, rng):
        x = Tensor(rng.normal(size=(4, 3, 4, 4)), requires_grad=True)
        g = Tensor(rng.uniform(0.5, 1.5, size=3), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        proj = rng.normal(size=(4, 3, 4, 4))

        def build():
            return weighted_sum(
                batch_norm2d(x, g, b, np.zeros(3), np.ones(3), training=True), proj)

        _check_op_grads(build, [x, g, b])

    def test_batchnorm_eval_mode(self, rng):
        x = Tensor(rng.normal(size=(4, 3, 4, 4)), requires_grad=True)
        g = Tensor(rng.uniform(0.5, 1.5, size=3), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        rm = rng.normal(size=3)
        rv = rng.uniform(0.5, 2.0, size=3)
        proj = rng.normal(size=(4, 3, 4, 4))

        def build():
            return weighted_sum(batch_norm2d(x, g, b, rm, rv, training=False), proj)

        _check_op_grads(build, [x, g, b])

    def test_softmax_cross_entropy(self, rng):
        logits = Tensor(rng.normal(size=(6, 5)), requires_grad=True)
        labels = rng.integers(0, 5, size=6)

        def build():
            return softmax_cross_entropy(logits, labels)

        _check_op_grads(build, [logits])

    def test_add_and_flatten(self, rng):
        a = Tensor(rng.normal(size=(3, 2, 2, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=(2, 2, 2)), requires_grad=True)  # broadcast
        proj = rng.normal(size=(3, 8))

        def build():
            return weighted_sum(flatten(add(a, b)), proj)

        _check_op_grads(build, [a, b])
