import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cirn import tensor as T
from cirn.errors import ConfigError, ContractError, DimensionError, NumericError
from cirn.gradcheck import grad_check
from cirn.tensor import Tensor


@pytest.fixture(autouse=True)
def f64():
    with T.default_dtype(np.float64):
        yield


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def naive_conv(x, k, pad):
    """Direct loop cross-correlation, independent of the library path."""
    C, H, W = x.shape
    O, _, kh, kw = k.shape
    xp = np.zeros((C, H + 2 * pad, W + 2 * pad))
    xp[:, pad:pad + H, pad:pad + W] = x
    Ho, Wo = H + 2 * pad - kh + 1, W + 2 * pad - kw + 1
    out = np.zeros((O, Ho, Wo))
    for o in range(O):
        for i in range(Ho):
            for j in range(Wo):
                s = 0.0
                for c in range(C):
                    for u in range(kh):
                        for v in range(kw):
                            s += xp[c, i + u, j + v] * k[o, c, u, v]
                out[o, i, j] = s
    return out


def naive_pool(x):
    C, H, W = x.shape
    out = np.zeros((C, -(-H // 2), -(-W // 2)))
    for c in range(C):
        for i in range(out.shape[1]):
            for j in range(out.shape[2]):
                out[c, i, j] = x[c, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()
    return out


class TestMatmul:
    def test_identity(self):
        a = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(T.matmul(Tensor(a), Tensor(np.eye(3))).data, a)

    def test_zero(self):
        b = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(T.matmul(T.zeros((4, 3)), Tensor(b)).data, np.zeros((4, 2)))

    def test_small_product(self):
        a, b = [[1.0, 2.0]], [[3.0], [4.0]]
        expected = [[sum(x * y for x, y in zip(a[0], [b[0][0], b[1][0]]))]]
        np.testing.assert_array_equal(T.matmul(T.tensor(a), T.tensor(b)).data, expected)
        assert expected == [[11.0]]

    def test_shape_error_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(T.zeros((2, 3)), T.zeros((2, 3)))


class TestElementwise:
    def test_identities(self):
        v = T.tensor([1.5, -2.0, 3.0])
        np.testing.assert_array_equal(T.ewise("mul", v, T.ones(3)).data, v.data)
        np.testing.assert_array_equal(T.ewise("add", v, T.zeros(3)).data, v.data)

    def test_mul_values(self):
        np.testing.assert_array_equal(T.ewise("mul", T.tensor([1, 2]), T.tensor([3, 4])).data, [3, 8])

    def test_no_implicit_broadcast(self):
        with pytest.raises(DimensionError):
            T.add(T.zeros((2, 3)), T.zeros((3,)))

    def test_mul_backward(self):
        a, b = leaf([1.0, 2.0]), leaf([3.0, 4.0])
        T.backward(T.tsum(T.mul(a, b)))
        np.testing.assert_array_equal(a.grad, [3, 4])
        np.testing.assert_array_equal(b.grad, [1, 2])


class TestRelu:
    def test_values(self):
        np.testing.assert_array_equal(T.relu(T.tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_gradient_pieces(self):
        x = leaf([-1.0, 0.0, 2.0])
        T.backward(T.tsum(T.relu(x)))
        np.testing.assert_array_equal(x.grad, [0, 0, 1])


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax_lastdim(T.zeros(3)).data, [1 / 3] * 3)

    def test_ln2(self):
        np.testing.assert_allclose(T.softmax_lastdim(T.tensor([0.0, np.log(2)])).data, [1 / 3, 2 / 3], rtol=1e-15)

    @given(arrays(np.float64, (3, 5), elements=st.floats(-30, 30)), st.floats(-50, 50))
    @settings(max_examples=50, deadline=None)
    def test_rows_and_shift(self, x, c):
        p = T.softmax_lastdim(Tensor(x)).data
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all((p >= 0) & (p <= 1))
        np.testing.assert_allclose(T.softmax_lastdim(Tensor(x + c)).data, p, atol=1e-12)

    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            T.softmax_lastdim(T.tensor([0.0, np.nan]))


class TestConv2d:
    def test_identity_1x1(self):
        x = np.random.default_rng(0).normal(size=(3, 4, 5))
        k = np.eye(3).reshape(3, 3, 1, 1)
        np.testing.assert_array_equal(T.conv2d(Tensor(x), Tensor(k)).data, x)

    def test_zero_kernel(self):
        x = np.random.default_rng(1).normal(size=(2, 4, 4))
        assert not T.conv2d(Tensor(x), T.zeros((3, 2, 3, 3))).data.any()

    def test_ones_kernel_on_constant(self):
        c = 2.5
        out = T.conv2d(Tensor(np.full((1, 5, 5), c)), T.ones((1, 1, 3, 3))).data
        oracle = naive_conv(np.full((1, 5, 5), c), np.ones((1, 1, 3, 3)), 1)
        np.testing.assert_array_equal(out, oracle)
        np.testing.assert_array_equal(out[0, 1:-1, 1:-1], 9 * c)

    @pytest.mark.parametrize("padding,pad", [("same", 1), ("valid", 0)])
    def test_matches_direct_loop(self, padding, pad):
        rng = np.random.default_rng(2)
        x, k = rng.normal(size=(3, 5, 6)), rng.normal(size=(4, 3, 3, 3))
        out = T.conv2d(Tensor(x), Tensor(k), padding=padding).data
        np.testing.assert_allclose(out, naive_conv(x, k, pad), rtol=1e-6, atol=1e-12)

    def test_extents(self):
        x = T.zeros((2, 7, 9))
        assert T.conv2d(x, T.zeros((1, 2, 3, 5)), padding="same").shape == (1, 7, 9)
        assert T.conv2d(x, T.zeros((1, 2, 3, 5)), padding="valid").shape == (1, 5, 5)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            T.conv2d(T.zeros((2, 3, 3)), T.zeros((1, 3, 1, 1)))


class TestPooling:
    def test_constant(self):
        np.testing.assert_array_equal(T.maxpool2d(Tensor(np.full((2, 4, 6), 3.0))).data, np.full((2, 2, 3), 3.0))

    def test_single_window(self):
        np.testing.assert_array_equal(T.maxpool2d(T.tensor([[[1.0, 2.0], [3.0, 4.0]]])).data, [[[4.0]]])

    def test_ragged_against_brute_force(self):
        x = np.random.default_rng(3).normal(size=(2, 3, 3))
        out = T.maxpool2d(Tensor(x)).data
        assert out.shape == (2, 2, 2)
        np.testing.assert_array_equal(out, naive_pool(x))

    def test_tie_goes_to_first_in_row_major(self):
        x = leaf([[[1.0, 1.0], [1.0, 1.0]]])
        T.backward(T.tsum(T.maxpool2d(x)))
        np.testing.assert_array_equal(x.grad, [[[1, 0], [0, 0]]])

    def test_global_max(self):
        np.testing.assert_array_equal(T.global_maxpool(Tensor(np.full((3, 2, 2), 1.5))).data, [1.5] * 3)
        spike = np.zeros((2, 3, 3))
        spike[1, 2, 0] = 7
        assert T.global_maxpool(Tensor(spike)).data[1] == 7
        x = np.random.default_rng(4).normal(size=(4, 3, 3))
        scan = [max(x[c, i, j] for i in range(3) for j in range(3)) for c in range(4)]
        np.testing.assert_array_equal(T.global_maxpool(Tensor(x)).data, scan)


class TestConcat:
    def test_single_part(self):
        a = T.tensor(np.arange(8.0).reshape(2, 2, 2))
        np.testing.assert_array_equal(T.concat([a], axis=0).data, a.data)

    def test_slices_recover_parts(self):
        rng = np.random.default_rng(5)
        a, b = rng.normal(size=(2, 3, 3)), rng.normal(size=(3, 3, 3))
        out = T.concat([Tensor(a), Tensor(b)], axis=0).data
        assert out.shape[0] == 5
        np.testing.assert_array_equal(out[:2], a)
        np.testing.assert_array_equal(out[2:], b)

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        a, b = leaf(rng.normal(size=(2, 2))), leaf(rng.normal(size=(1, 2)))
        w = rng.normal(size=(3, 2))
        for part in (a, b):
            r = grad_check(lambda: T.tsum(T.mul(T.concat([a, b], 0), Tensor(w))), part)
            assert r.passed

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            T.concat([T.zeros((2, 3)), T.zeros((2, 4))], axis=0)


class TestDropout:
    def test_rate_zero_and_eval_are_identity(self):
        x = T.tensor([1.0, 2.0, 3.0])
        rng = np.random.default_rng(0)
        assert T.dropout(x, 0.0, True, rng) is x
        assert T.dropout(x, 0.7, False, rng) is x

    def test_seeded_mask_repeats(self):
        x = T.ones(100)
        a = T.dropout(x, 0.5, True, np.random.default_rng(9)).data
        b = T.dropout(x, 0.5, True, np.random.default_rng(9)).data
        np.testing.assert_array_equal(a, b)
        assert set(np.unique(a)) <= {0.0, 2.0}

    def test_rate_one_rejected(self):
        with pytest.raises(ConfigError):
            T.dropout(T.ones(3), 1.0, True, np.random.default_rng(0))


class TestLayerNorm:
    def test_constant_row(self):
        out = T.layer_norm(Tensor(np.full((1, 4), 3.0)), T.ones(4), T.zeros(4), 1e-5).data
        assert np.all(np.abs(out) <= np.sqrt(1e-5))

    def test_moments(self):
        x = np.random.default_rng(7).normal(size=(5, 8)) * 4 + 2
        out = T.layer_norm(Tensor(x), T.ones(8), T.zeros(8), 1e-12).data
        np.testing.assert_allclose(out.mean(axis=-1), 0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1, atol=1e-9)

    def test_two_values(self):
        out = T.layer_norm(T.tensor([[1.0, 3.0]]), T.ones(2), T.zeros(2), 1e-14).data
        np.testing.assert_allclose(out, [[-1.0, 1.0]], atol=1e-12)


class TestBackward:
    def test_sum_gives_ones(self):
        v = leaf([1.0, -2.0, 3.0])
        T.backward(T.tsum(v))
        np.testing.assert_array_equal(v.grad, np.ones(3))

    def test_square_gives_2v(self):
        v = leaf([1.0, -2.0, 3.0])
        T.backward(T.tsum(T.mul(v, v)))
        np.testing.assert_array_equal(v.grad, 2 * v.data)

    def test_scalar_loss_seed_is_one(self):
        v = leaf([2.0])
        loss = T.tsum(v)
        T.backward(loss)
        assert v.grad[0] == 1.0

    def test_unreached_leaf_gets_zero(self):
        a, b = leaf([1.0, 2.0]), leaf([5.0])
        T.backward(T.tsum(a), [a, b])
        np.testing.assert_array_equal(b.grad, [0.0])

    def test_non_scalar_rejected(self):
        with pytest.raises(ContractError):
            T.backward(leaf([1.0, 2.0]))

    def test_topological_order(self):
        a = leaf([1.0])
        b = T.scale(a, 2.0)
        c = T.add(b, a)
        d = T.mul(c, b)
        order = T.topological_order(d)
        pos = {id(n): i for i, n in enumerate(order)}
        for node in order:
            for p in node._parents:
                assert pos[id(p)] < pos[id(node)]

    def test_deterministic_replay(self):
        rng = np.random.default_rng(8)
        x, k = rng.normal(size=(2, 4, 4)), rng.normal(size=(3, 2, 3, 3))

        def run():
            xl, kl = leaf(x), leaf(k)
            out = T.tsum(T.relu(T.conv2d(xl, kl)))
            T.backward(out)
            return out.data.copy(), xl.grad.copy(), kl.grad.copy()

        for a, b in zip(run(), run()):
            assert a.tobytes() == b.tobytes()


class TestGradCheck:
    def test_linear_exact(self):
        x = leaf([0.3, -1.2, 4.0])
        r = grad_check(lambda: T.tsum(x), x, tol=1e-10)
        assert r.max_rel_error < 1e-9

    def test_quadratic(self):
        x = leaf([1.0, 2.0])
        r = grad_check(lambda: T.tsum(T.mul(x, x)), x, h=1e-5, tol=1e-8)
        assert r.passed
        np.testing.assert_allclose(x.grad, [2.0, 4.0])

    def test_injected_sign_error_in_conv_is_caught(self, monkeypatch):
        real = T._conv2d_grads

        def flipped(*args):
            dxp, dk = real(*args)
            return -dxp, dk

        monkeypatch.setattr(T, "_conv2d_grads", flipped)
        rng = np.random.default_rng(0)
        x, k = leaf(rng.normal(size=(2, 4, 4))), leaf(rng.normal(size=(3, 2, 3, 3)))
        w = rng.normal(size=(3, 4, 4))
        r = grad_check(lambda: T.tsum(T.mul(T.conv2d(x, k), Tensor(w))), x, tol=1e-4, name="conv2d")
        assert not r.passed
        assert "FAIL" in r.line() and "conv2d" in r.line()

    def test_rejects_float32(self):
        x = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
        with pytest.raises(ContractError):
            grad_check(lambda: T.tsum(x), x)

    def test_non_finite_reports_coordinate(self):
        x = leaf([1.0, 2.0])
        start = x.data.copy()

        def f():
            blowup = np.where(x.data == start, 0.0, np.inf)
            blowup[1] = 0.0
            return T.tsum(T.add(x, Tensor(blowup)))

        with pytest.raises(NumericError, match=r"\(0,\)"):
            grad_check(f, x)


@pytest.mark.parametrize("shape", [(3,), (4,), (5,)])
def test_random_small_inputs_agree(shape):
    rng = np.random.default_rng(sum(shape))
    x = leaf(rng.normal(size=shape))
    w = rng.normal(size=shape)
    funcs = [
        lambda: T.tsum(T.mul(T.softmax_lastdim(x), Tensor(w))),
        lambda: T.tsum(T.mul(T.log_softmax_lastdim(x), Tensor(w))),
        lambda: T.tsum(T.mul(T.gelu(x), Tensor(w))),
        lambda: T.tsum(T.mul(T.mul(x, x), Tensor(w))),
    ]
    for f in funcs:
        assert grad_check(f, x, tol=1e-6).passed
