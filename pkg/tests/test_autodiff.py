import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from textshot.autodiff import (Tensor, concat, log_softmax, no_grad,
                               parameter, posdef_solve, softmax, stack)

from oracles import fd_gradient


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def _check_grads(build, tensors, tol=1e-6, step=1e-6):
    """backward() grads vs central differences, for each input tensor."""
    for t in tensors:
        t.grad = None
    out = build()
    out.backward()
    analytic = [t.grad.copy() for t in tensors]
    for t, g in zip(tensors, analytic):
        fd = fd_gradient(lambda: build().data, t, step=step)
        assert np.allclose(g, fd, rtol=tol, atol=tol), (
            f"grad mismatch: max err {np.max(np.abs(g - fd))}"
        )


class TestElementwise:
    @pytest.mark.parametrize(
        "fn",
        [
            lambda a, b: a + b,
            lambda a, b: a - b,
            lambda a, b: a * b,
            lambda a, b: a / (b * b + 1.0),
            lambda a, b: (a * b).sum() + (a + 2.0).mean(),
            lambda a, b: 2.0 - a + 3.0 * b,
            lambda a, b: 1.0 / (a * a + 1.0) + b,
        ],
    )
    def test_binary_ops_match_fd(self, fn):
        rng = np.random.default_rng(0)
        a = parameter(_rand(rng, 3, 4))
        b = parameter(_rand(rng, 3, 4))
        _check_grads(lambda: fn(a, b).sum(), [a, b])

    @pytest.mark.parametrize(
        "fn",
        [
            lambda a: (a * a).exp(),
            lambda a: (a * a + 0.5).log(),
            lambda a: (a * a + 0.1).sqrt(),
            lambda a: a.relu(),
            lambda a: a ** 3,
            lambda a: (-a).relu() + a ** 2,
        ],
    )
    def test_unary_ops_match_fd(self, fn):
        rng = np.random.default_rng(1)
        a = parameter(_rand(rng, 4, 3) + 0.01)  # nudge off relu kink
        _check_grads(lambda: fn(a).sum(), [a])

    def test_broadcasting_grads(self):
        rng = np.random.default_rng(2)
        a = parameter(_rand(rng, 3, 4))
        row = parameter(_rand(rng, 1, 4))
        col = parameter(_rand(rng, 3, 1))
        scalar = parameter(np.array(1.5))
        _check_grads(lambda: ((a + row) * col / (scalar * scalar + 1.0)).sum(),
                     [a, row, col, scalar])

    def test_pow_rejects_tensor_exponent(self):
        a = parameter(np.ones(3))
        with pytest.raises(TypeError):
            a ** parameter(np.ones(3))


class TestShapes:
    def test_matmul_matches_fd(self):
        rng = np.random.default_rng(3)
        a = parameter(_rand(rng, 3, 4))
        b = parameter(_rand(rng, 4, 2))
        _check_grads(lambda: (a @ b).sum(), [a, b])

    def test_matmul_batched(self):
        rng = np.random.default_rng(4)
        a = parameter(_rand(rng, 5, 3, 4))
        b = parameter(_rand(rng, 4, 2))
        _check_grads(lambda: ((a @ b) * (a @ b)).sum(), [a, b])

    def test_getitem(self):
        rng = np.random.default_rng(5)
        a = parameter(_rand(rng, 4, 5))
        _check_grads(lambda: (a[1:3, :3] * a[0:2, 2:]).sum(), [a])
        _check_grads(lambda: (a[::2] * a[1::2]).sum(), [a])

    def test_transpose_swapaxes_reshape(self):
        rng = np.random.default_rng(6)
        a = parameter(_rand(rng, 2, 3, 4))
        _check_grads(lambda: (a.swapaxes(0, 2).reshape(4, 6) @ a.T.reshape(6, 4)).sum(),
                     [a])

    def test_sum_mean_axes(self):
        rng = np.random.default_rng(7)
        a = parameter(_rand(rng, 3, 4, 2))
        _check_grads(lambda: (a.sum(axis=1) * a.mean(axis=1)).sum(), [a])
        _check_grads(lambda: (a.mean(axis=0, keepdims=True) * a).sum(), [a])
        _check_grads(lambda: a.sum(axis=2, keepdims=True).mean(), [a])

    def test_concat_and_stack(self):
        rng = np.random.default_rng(8)
        a = parameter(_rand(rng, 2, 3))
        b = parameter(_rand(rng, 4, 3))
        _check_grads(lambda: (concat([a, b], axis=0) ** 2).sum(), [a, b])
        c = parameter(_rand(rng, 2, 3))
        _check_grads(lambda: (stack([a, c], axis=1) * 0.5 + 1.0).sum().log(), [a, c])


class TestSoftmax:
    def test_softmax_rows_sum_to_one(self):
        x = Tensor(np.random.default_rng(9).standard_normal((5, 7)) * 30)
        s = softmax(x, axis=-1).data
        assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(s > 0)

    def test_softmax_shift_invariance(self):
        x = np.random.default_rng(10).standard_normal((4, 6))
        a = softmax(Tensor(x)).data
        b = softmax(Tensor(x + 123.0)).data
        assert np.allclose(a, b, atol=1e-12)

    def test_log_softmax_is_log_of_softmax(self):
        x = Tensor(np.random.default_rng(11).standard_normal((3, 5)))
        assert np.allclose(log_softmax(x).data, np.log(softmax(x).data), atol=1e-12)

    def test_softmax_grad(self):
        rng = np.random.default_rng(12)
        a = parameter(_rand(rng, 3, 5))
        w = _rand(rng, 3, 5)
        _check_grads(lambda: (softmax(a, axis=-1) * Tensor(w)).sum(), [a])

    def test_log_softmax_grad(self):
        rng = np.random.default_rng(13)
        a = parameter(_rand(rng, 3, 5))
        w = _rand(rng, 3, 5)
        _check_grads(lambda: (log_softmax(a, axis=-1) * Tensor(w)).sum(), [a])

    def test_log_softmax_stable_at_large_logits(self):
        x = Tensor(np.array([[1000.0, 0.0, -1000.0]]))
        out = log_softmax(x).data
        assert np.all(np.isfinite(out))
        assert abs(out[0, 0]) < 1e-6


class TestPosdefSolve:
    def _spd(self, rng, n, c=2.0):
        w = rng.standard_normal((n, n))
        return w @ w.T + c * np.eye(n)

    def test_solves_system(self):
        rng = np.random.default_rng(14)
        a = self._spd(rng, 5)
        b = rng.standard_normal((5, 3))
        x = posdef_solve(Tensor(a), Tensor(b)).data
        assert np.allclose(a @ x, b, atol=1e-10)

    def test_matches_dense_inverse(self):
        rng = np.random.default_rng(15)
        a = self._spd(rng, 4)
        b = rng.standard_normal((4, 2))
        x = posdef_solve(Tensor(a), Tensor(b)).data
        assert np.allclose(x, np.linalg.inv(a) @ b, atol=1e-10)

    def test_gradients_through_symmetric_parent(self):
        # the factorization reads only A's lower triangle, so perturb the
        # matrix through W @ W.T + c*I where both triangles move together
        rng = np.random.default_rng(16)
        w = parameter(_rand(rng, 4, 4))
        b = parameter(_rand(rng, 4, 2))
        v = _rand(rng, 4, 2)

        def build():
            a = w @ w.T + Tensor(3.0 * np.eye(4))
            return (posdef_solve(a, b) * Tensor(v)).sum()

        _check_grads(build, [w, b], tol=1e-5)

    def test_rejects_indefinite(self):
        a = Tensor(np.array([[1.0, 0.0], [0.0, -1.0]]))
        b = Tensor(np.eye(2))
        with pytest.raises(np.linalg.LinAlgError):
            posdef_solve(a, b)


class TestBackwardMechanics:
    def test_grad_accumulates_over_reuse(self):
        a = parameter(np.array([2.0, 3.0]))
        (a * a + a * a).sum().backward()
        # d/da of 2a^2 is 4a
        assert np.allclose(a.grad, 4.0 * a.data, atol=1e-12)

    def test_backward_twice_accumulates(self):
        a = parameter(np.array([1.0, 2.0]))
        (a * 3.0).sum().backward()
        (a * 3.0).sum().backward()
        assert np.allclose(a.grad, np.array([6.0, 6.0]), atol=1e-12)

    def test_diamond_graph(self):
        a = parameter(np.array(2.0))
        b = a * a  # 4
        c = b + a  # 6
        d = b * c  # 24, dd/da = 2a*(a^2+a) + a^2*(2a+1) = 24 + 20 = 44
        d.backward()
        assert np.isclose(a.grad, 44.0, atol=1e-12)

    def test_no_grad_blocks_graph(self):
        a = parameter(np.ones(3))
        with no_grad():
            out = (a * 2.0).sum()
        assert not out.requires_grad
        assert out._parents == ()

    def test_detach_blocks_graph(self):
        a = parameter(np.ones(3))
        out = (a.detach() * 2.0).sum()
        assert not out.requires_grad

    def test_backward_requires_scalar_without_seed(self):
        a = parameter(np.ones((2, 2)))
        with pytest.raises(RuntimeError):
            (a * 2.0).backward()

    def test_backward_on_constant_rejected(self):
        a = Tensor(np.ones(3))
        with pytest.raises(RuntimeError):
            (a * 2.0).sum().backward()

    def test_constant_branch_gets_no_grad(self):
        a = parameter(np.ones(3))
        c = Tensor(np.full(3, 5.0))
        (a * c).sum().backward()
        assert c.grad is None
        assert np.allclose(a.grad, 5.0)

    def test_item_requires_scalar(self):
        assert Tensor(np.array(3.5)).item() == 3.5

    @settings(deadline=None, max_examples=25)
    @given(st.integers(0, 10_000))
    def test_composite_expression_matches_fd(self, seed):
        rng = np.random.default_rng(seed)
        a = parameter(_rand(rng, 3, 3))
        b = parameter(_rand(rng, 3, 3))

        def build():
            h = (a @ b + a * 0.5).relu()
            z = softmax(h, axis=-1) * (b * b + 1.0).sqrt()
            return z.sum(axis=0).mean().exp()

        _check_grads(build, [a, b], tol=1e-5)
