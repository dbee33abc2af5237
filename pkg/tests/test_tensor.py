"""Per-operation gradient checks against central finite differences."""

import numpy as np
import pytest

from gem import tensor as T
from gem.tensor import Tensor


def fd_check(build, tensors, h=1e-6, tol=1e-6):
    """build() -> scalar Tensor from the given leaf tensors."""
    loss = build()
    loss.backward()
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        grad = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(build().data)
            flat[i] = orig - h
            down = float(build().data)
            flat[i] = orig
            fd = (up - down) / (2 * h)
            denom = max(abs(grad[i]), abs(fd), 1.0)
            assert abs(grad[i] - fd) / denom < tol, f"entry {i}: {grad[i]} vs {fd}"


def leaf(shape, seed):
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(0, 1, shape), requires_grad=True)


def reset(*tensors):
    for t in tensors:
        t.zero_grad()


class TestOps:
    def test_add_broadcast(self):
        a, b = leaf((3, 4), 0), leaf((4,), 1)
        fd_check(lambda: T.cross_entropy_mean(a + b, [0, 1, 2]), [a, b])

    def test_mul_broadcast(self):
        a, b = leaf((3, 4), 2), leaf((3, 1), 3)
        fd_check(lambda: T.cross_entropy_mean(T.mul(a, b), [3, 0, 1]), [a, b])

    def test_matmul(self):
        a, b = leaf((3, 5), 4), leaf((5, 4), 5)
        fd_check(lambda: T.cross_entropy_mean(T.matmul(a, b), [1, 2, 0]), [a, b])

    def test_batched_matmul(self):
        a, b = leaf((2, 3, 4), 6), leaf((2, 4, 5), 7)
        fd_check(
            lambda: T.cross_entropy_mean(T.reshape(T.matmul(a, b), (6, 5)), [0] * 6),
            [a, b],
        )

    def test_layer_norm(self):
        x, g, b = leaf((4, 6), 8), leaf((6,), 9), leaf((6,), 10)
        fd_check(
            lambda: T.cross_entropy_mean(T.layer_norm(x, g, b), [1, 2, 3, 4]),
            [x, g, b],
            tol=1e-5,
        )

    def test_gelu(self):
        x = leaf((3, 5), 11)
        fd_check(lambda: T.cross_entropy_mean(T.gelu(x), [0, 1, 2]), [x], tol=1e-5)

    def test_masked_softmax(self):
        x = leaf((2, 4, 4), 12)
        mask = np.where(np.tril(np.ones((4, 4), dtype=bool)), 0.0, -1e30)
        fd_check(
            lambda: T.cross_entropy_mean(
                T.reshape(T.masked_softmax(x, mask), (8, 4)), [0, 1, 2, 3, 0, 1, 2, 3]
            ),
            [x],
        )

    def test_embedding(self):
        w = leaf((7, 4), 13)
        ids = np.array([0, 3, 3, 6])
        fd_check(lambda: T.cross_entropy_mean(T.embedding(w, ids), [1, 0, 2, 3]), [w])

    def test_concat_and_narrow(self):
        a, b = leaf((2, 4), 14), leaf((3, 4), 15)
        fd_check(
            lambda: T.cross_entropy_mean(
                T.narrow(T.concat([a, b], axis=0), 0, 1, 3), [0, 1, 2]
            ),
            [a, b],
        )

    def test_swapaxes_reshape(self):
        a = leaf((2, 3, 4), 16)
        fd_check(
            lambda: T.cross_entropy_mean(
                T.reshape(T.swapaxes(a, 0, 1), (6, 4)), [0, 1, 2, 3, 0, 1]
            ),
            [a],
        )

    def test_scale(self):
        a = leaf((3, 4), 17)
        fd_check(lambda: T.cross_entropy_mean(T.scale(a, 0.37), [0, 1, 2]), [a])


class TestMechanics:
    def test_backward_needs_scalar(self):
        with pytest.raises(ValueError):
            leaf((2, 2), 0).backward()

    def test_grad_accumulates_over_shared_use(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = x + x
        y.backward()
        assert x.grad[0] == 2.0

    def test_no_grad_for_constants(self):
        x = Tensor(np.ones((2, 2)))
        y = Tensor(np.ones((2, 2)), requires_grad=True)
        out = T.cross_entropy_mean(x + y, [0, 1])
        out.backward()
        assert x.grad is None
        assert y.grad is not None

    def test_masked_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        scores = Tensor(rng.normal(0, 3, (2, 5, 5)))
        mask = np.where(np.tril(np.ones((5, 5), dtype=bool)), 0.0, -1e30)
        probs = T.masked_softmax(scores, mask).data
        assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-9)
        assert (probs[:, 0, 1:] == 0.0).all()

    def test_cross_entropy_uniform_value(self):
        logits = Tensor(np.zeros((5, 64)), requires_grad=True)
        loss = T.cross_entropy_mean(logits, [1, 2, 3, 4, 5])
        assert abs(float(loss.data) - np.log(64)) < 1e-12

    def test_cross_entropy_empty_rejected(self):
        with pytest.raises(ValueError):
            T.cross_entropy_mean(Tensor(np.zeros((0, 4))), [])
