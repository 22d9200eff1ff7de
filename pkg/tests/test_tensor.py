import numpy as np
import pytest

from trajgnn import tensor as T
from trajgnn.errors import ContractError, ShapeError
from trajgnn.tensor import Tensor


RNG = np.random.default_rng(20240811)


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    b = Tensor([[5.0, 6.0], [7.0, 8.0]])
    out = T.matmul(eye, b)
    np.testing.assert_array_equal(out.data, b.data)


def test_matmul_row_sums():
    a = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    ones = Tensor([[1.0], [1.0], [1.0]])
    out = T.matmul(a, ones)
    np.testing.assert_array_equal(out.data.ravel(), [6.0, 15.0])


def test_matmul_grad_is_ones_times_bT():
    a = Tensor(RNG.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(RNG.normal(size=(4, 2)))
    out = T.matmul(a, b).sum()
    out.backward()
    expected = np.ones((3, 2)) @ b.data.T
    np.testing.assert_allclose(a.grad, expected, rtol=1e-12)
    # against the independent finite-difference oracle
    err = T.finite_diff_check(lambda t: T.matmul(t, b).sum(), a, h=1e-5)
    assert err <= 1e-6


def test_matmul_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestConv2d:
    def test_output_shape_chain(self):
        # floor((160-16)/4)+1 = 37
        x = Tensor(RNG.normal(size=(1, 160, 160)))
        k = Tensor(RNG.normal(size=(8, 1, 16, 16)))
        b = Tensor(np.zeros(8))
        out = T.conv2d(x, k, b, stride=4)
        assert out.shape == (8, 37, 37)

    def test_all_ones_sum(self):
        x = Tensor(np.ones((1, 4, 4)))
        k = Tensor(np.ones((1, 1, 2, 2)))
        b = Tensor(np.zeros(1))
        out = T.conv2d(x, k, b, stride=2)
        np.testing.assert_array_equal(out.data, np.full((1, 2, 2), 4.0))

    def test_zero_kernel_zero_bias(self):
        x = Tensor(RNG.normal(size=(2, 5, 5)))
        out = T.conv2d(x, Tensor(np.zeros((3, 2, 2, 2))), Tensor(np.zeros(3)), 1)
        np.testing.assert_array_equal(out.data, np.zeros((3, 4, 4)))

    def test_kernel_larger_than_input_raises(self):
        with pytest.raises(ShapeError):
            T.conv2d(
                Tensor(np.zeros((1, 3, 3))),
                Tensor(np.zeros((1, 1, 4, 4))),
                Tensor(np.zeros(1)),
                1,
            )

    @pytest.mark.parametrize("hw,k,s", [(6, 3, 1), (7, 3, 2), (9, 4, 3)])
    def test_shape_closed_form(self, hw, k, s):
        x = Tensor(RNG.normal(size=(1, hw, hw)))
        kern = Tensor(RNG.normal(size=(2, 1, k, k)))
        out = T.conv2d(x, kern, Tensor(np.zeros(2)), s)
        expected = (hw - k) // s + 1
        assert out.shape == (2, expected, expected)

    def test_gradients_vs_finite_differences(self):
        x = Tensor(RNG.normal(size=(2, 2, 6, 6)))
        k = Tensor(RNG.normal(size=(3, 2, 3, 3)))
        b = Tensor(RNG.normal(size=3))

        def loss_x(t):
            return (T.conv2d(t, k, b, 2) * w).sum()

        def loss_k(t):
            return (T.conv2d(x, t, b, 2) * w).sum()

        def loss_b(t):
            return (T.conv2d(x, k, t, 2) * w).sum()

        w = Tensor(RNG.normal(size=(2, 3, 2, 2)))
        assert T.finite_diff_check(loss_x, x) <= 1e-4
        assert T.finite_diff_check(loss_k, k) <= 1e-4
        assert T.finite_diff_check(loss_b, b) <= 1e-4


class TestLeakyRelu:
    def test_paper_slope_values(self):
        assert T.leaky_relu(Tensor([1.0]), 0.1).data[0] == 1.0
        assert T.leaky_relu(Tensor([-1.0]), 0.1).data[0] == pytest.approx(-0.1)
        assert T.leaky_relu(Tensor([0.0]), 0.37).data[0] == 0.0

    def test_grad(self):
        x = Tensor([-2.0, -0.5, 0.5, 2.0], requires_grad=True)
        T.leaky_relu(x, 0.1).sum().backward()
        np.testing.assert_allclose(x.grad, [0.1, 0.1, 1.0, 1.0])


class TestSoftmaxRows:
    def test_symmetry(self):
        out = T.softmax_rows(Tensor([[0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5]])

    def test_no_overflow_at_large_logits(self):
        out = T.softmax_rows(Tensor([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [[1.0, 0.0]], atol=1e-12)

    def test_rows_sum_to_one(self):
        x = Tensor(RNG.normal(scale=5.0, size=(7, 9)))
        out = T.softmax_rows(x)
        np.testing.assert_allclose(out.data.sum(axis=1), np.ones(7), atol=1e-12)
        assert np.all(out.data > 0) and np.all(out.data <= 1)

    def test_shift_invariance(self):
        x = RNG.normal(size=(4, 5))
        a = T.softmax_rows(Tensor(x)).data
        b = T.softmax_rows(Tensor(x + 123.456)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_grad(self):
        x = Tensor(RNG.normal(size=(3, 4)))
        w = Tensor(RNG.normal(size=(3, 4)))
        err = T.finite_diff_check(lambda t: (T.softmax_rows(t) * w).sum(), x)
        assert err <= 1e-4


class TestSegmentSum:
    def test_basic(self):
        out = T.segment_sum(Tensor([[1.0], [2.0], [3.0]]), [0, 0, 1], 2)
        np.testing.assert_array_equal(out.data, [[3.0], [3.0]])

    def test_empty_segment_is_zero(self):
        out = T.segment_sum(Tensor([[1.0, 2.0]]), [2], 4)
        np.testing.assert_array_equal(out.data[0], [0.0, 0.0])
        np.testing.assert_array_equal(out.data[1], [0.0, 0.0])
        np.testing.assert_array_equal(out.data[3], [0.0, 0.0])

    def test_matches_naive_loop(self):
        values = RNG.normal(size=(40, 3))
        ids = RNG.integers(0, 6, size=40)
        out = T.segment_sum(Tensor(values), ids, 6)
        naive = np.zeros((6, 3))
        for row, i in zip(values, ids):
            naive[i] += row
        np.testing.assert_allclose(out.data, naive, atol=1e-12)

    def test_out_of_range_id(self):
        with pytest.raises(IndexError):
            T.segment_sum(Tensor([[1.0]]), [5], 2)

    def test_grad_scatters_by_id(self):
        v = Tensor(RNG.normal(size=(5, 2)))
        w = Tensor(RNG.normal(size=(3, 2)))
        err = T.finite_diff_check(
            lambda t: (T.segment_sum(t, [0, 1, 1, 2, 0], 3) * w).sum(), v
        )
        assert err <= 1e-6


class TestBackward:
    def test_square(self):
        x = Tensor([3.0], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [6.0])

    def test_unused_parameter_has_no_grad(self):
        x = Tensor([1.0], requires_grad=True)
        p = Tensor([4.0], requires_grad=True)
        (x * 2.0).sum().backward()
        assert p.grad is None

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            (x * x).backward()

    def test_grad_accumulates_across_reuse(self):
        x = Tensor([2.0], requires_grad=True)
        y = (x * x) + (x * 3.0)  # d/dx = 2x + 3 = 7
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_random_chain_matches_central_differences(self):
        for trial in range(5):
            rng = np.random.default_rng(trial)
            x = Tensor(rng.normal(size=(3, 3)))
            a = Tensor(rng.normal(size=(3, 3)))

            def f(t):
                y = T.matmul(t, a)
                y = T.tanh(y)
                y = T.leaky_relu(y + t, 0.1)
                return (y * y).sum()

            assert T.finite_diff_check(f, x, h=1e-5) <= 1e-4

    def test_deep_graph_iterative_topo(self):
        # 3000 chained ops would blow the recursion limit if backward recursed
        x = Tensor([1.0], requires_grad=True)
        y = x
        for _ in range(3000):
            y = y * 1.0
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [1.0])


class TestFiniteDiffCheck:
    def test_linear_function(self):
        x = Tensor(RNG.normal(size=(4,)))
        assert T.finite_diff_check(lambda t: t.sum(), x) <= 1e-10

    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0])
        assert T.finite_diff_check(lambda t: (t * t).sum(), x) <= 1e-6
        x.zero_grad()
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_restores_input(self):
        x = Tensor([1.0, 2.0, 3.0])
        before = x.data.copy()
        T.finite_diff_check(lambda t: (t * t).sum(), x)
        np.testing.assert_array_equal(x.data, before)


class TestElementwiseGrads:
    @pytest.mark.parametrize(
        "fn",
        [T.exp, T.tanh, T.sigmoid, lambda t: T.leaky_relu(t, 0.1)],
        ids=["exp", "tanh", "sigmoid", "leaky_relu"],
    )
    def test_unary(self, fn):
        x = Tensor(RNG.normal(size=(6,)) + 0.05)
        assert T.finite_diff_check(lambda t: fn(t).sum(), x) <= 1e-4

    def test_sqrt_guarded_at_zero(self):
        x = Tensor([0.0, 4.0], requires_grad=True)
        T.sqrt(x).sum().backward()
        np.testing.assert_allclose(x.grad, [0.0, 0.25])

    def test_div(self):
        a = Tensor(RNG.normal(size=(4,)))
        b = Tensor(RNG.normal(size=(4,)) + 3.0)
        assert T.finite_diff_check(lambda t: (t / b).sum(), a) <= 1e-6
        assert T.finite_diff_check(lambda t: (a / t).sum(), b) <= 1e-4

    def test_broadcast_add_unbroadcasts_grad(self):
        a = Tensor(RNG.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(RNG.normal(size=(4,)), requires_grad=True)
        (a + b).sum().backward()
        np.testing.assert_allclose(b.grad, np.full(4, 3.0))
        np.testing.assert_allclose(a.grad, np.ones((3, 4)))


class TestShapeOps:
    def test_getitem_grad(self):
        x = Tensor(RNG.normal(size=(4, 6)))
        err = T.finite_diff_check(lambda t: (t[1:3, ::2] * t[1:3, ::2]).sum(), x)
        assert err <= 1e-6

    def test_concat_and_stack_grads(self):
        a = Tensor(RNG.normal(size=(2, 3)))
        b = Tensor(RNG.normal(size=(2, 3)))
        w = Tensor(RNG.normal(size=(4, 3)))
        assert T.finite_diff_check(lambda t: (T.concat([t, b], 0) * w).sum(), a) <= 1e-6
        w2 = Tensor(RNG.normal(size=(2, 2, 3)))
        assert T.finite_diff_check(lambda t: (T.stack([t, b]) * w2).sum(), a) <= 1e-6

    def test_reshape_transpose_grads(self):
        x = Tensor(RNG.normal(size=(3, 4)))
        w = Tensor(RNG.normal(size=(4, 3)))
        assert T.finite_diff_check(lambda t: (t.T * w).sum(), x) <= 1e-6
        assert T.finite_diff_check(lambda t: (t.reshape(2, 6) * Tensor(np.ones((2, 6)))).sum(), x) <= 1e-6

    def test_gather_rows_grad(self):
        x = Tensor(RNG.normal(size=(5, 3)))
        w = Tensor(RNG.normal(size=(4, 3)))
        assert (
            T.finite_diff_check(lambda t: (T.gather_rows(t, [0, 2, 2, 4]) * w).sum(), x)
            <= 1e-6
        )


def test_forward_determinism():
    x = np.asarray(RNG.normal(size=(30, 8)))
    ids = RNG.integers(0, 5, size=30)

    def run():
        t = Tensor(x.copy())
        return T.segment_sum(T.softmax_rows(t), ids, 5).data.tobytes()

    assert run() == run()


def test_mean_over_axes():
    x = Tensor(RNG.normal(size=(2, 3, 4)))
    out = x.mean(axis=(0, 2))
    np.testing.assert_allclose(out.data, x.data.mean(axis=(0, 2)), atol=1e-12)
    w = Tensor(RNG.normal(size=(3,)))
    assert T.finite_diff_check(lambda t: (t.mean(axis=(0, 2)) * w).sum(), x) <= 1e-6
