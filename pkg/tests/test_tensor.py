import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dibm.tensor as T
from dibm.errors import ContractError, DimensionError
from dibm.nn import Mlp, mlp_forward
from dibm.tensor import Tensor, backward, no_grad, stop_gradient

from oracles import assert_grads_close, fd_grad, plain_mlp


def test_identity_mlp_passthrough(rng):
    m = Mlp([3, 3], activation="identity", rng=rng)
    m.params["mlp.w0"].data = np.eye(3, dtype=np.float32)
    out = mlp_forward(m, np.array([1.0, 2.0, 3.0], dtype=np.float32))
    np.testing.assert_allclose(out.data, [[1.0, 2.0, 3.0]])


def test_relu_mlp_clamps_negative(rng):
    m = Mlp([2, 2], activation="relu", rng=rng, final_activation=True)
    m.params["mlp.w0"].data = np.eye(2, dtype=np.float32)
    out = mlp_forward(m, np.array([-1.0, 2.0], dtype=np.float32))
    np.testing.assert_allclose(out.data, [[0.0, 2.0]])


def test_zero_input_passes_biases_through_identity(rng):
    m = Mlp([4, 5, 3], activation="identity", rng=np.random.default_rng(42), dtype=np.float64)
    out = mlp_forward(m, np.zeros(4))
    w1 = m.params["mlp.w1"].data
    b0 = m.params["mlp.b0"].data
    b1 = m.params["mlp.b1"].data
    np.testing.assert_allclose(out.data[0], b0 @ w1 + b1)
    # with zero biases the output is exactly zero
    m.params["mlp.b0"].data[:] = 0
    m.params["mlp.b1"].data[:] = 0
    np.testing.assert_allclose(mlp_forward(m, np.zeros(4)).data, np.zeros((1, 3)))


def test_input_width_mismatch_raises(rng):
    m = Mlp([3, 2], rng=rng)
    with pytest.raises(DimensionError):
        mlp_forward(m, np.zeros(4))


def test_backward_stop_gradient_definition():
    w = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    x = Tensor(np.array([3.0, 5.0]), requires_grad=True)
    loss = T.tsum(T.mul(w, stop_gradient(x)))
    backward(loss)
    assert x.grad is None
    np.testing.assert_allclose(w.grad, x.data)


def test_backward_analytic_square():
    w = Tensor(np.array(5.0), requires_grad=True)
    diff = w - 3.0
    loss = T.mul(diff, diff)
    backward(loss)
    np.testing.assert_allclose(w.grad, 4.0)


def test_backward_rejects_nonscalar():
    w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with pytest.raises(ContractError):
        backward(T.mul(w, w))


def test_two_layer_mlp_matches_finite_differences():
    rng = np.random.default_rng(7)
    m = Mlp([4, 8, 3], activation="gelu", rng=rng, dtype=np.float64)
    x = rng.standard_normal((5, 4))
    target = rng.standard_normal((5, 3))

    def loss_fn():
        out = mlp_forward(m, x)
        diff = out.data - target
        return float(np.mean(diff * diff))

    out = mlp_forward(m, x)
    diff = T.sub(out, Tensor(target, dtype=np.float64))
    loss = T.tmean(T.mul(diff, diff))
    backward(loss)
    analytic = {k: p.grad for k, p in m.params.items()}
    numeric = fd_grad(loss_fn, m.params, h=1e-3)
    assert_grads_close(analytic, numeric, rtol=1e-3, atol=1e-5)


def test_stop_gradient_isolation_matches_constant_substitution():
    rng = np.random.default_rng(3)
    for seed in range(10):
        r = np.random.default_rng(seed)
        w = Tensor(r.standard_normal(6), requires_grad=True, dtype=np.float64)
        v = Tensor(r.standard_normal(6), requires_grad=True, dtype=np.float64)

        def build(detached):
            # loss = sum(w * detached(v^2)) + sum(w^2)
            sq = T.mul(v, v) if not detached else Tensor(v.data * v.data, dtype=np.float64)
            inner = sq if detached else stop_gradient(sq)
            return T.tsum(T.mul(w, inner)) + T.tsum(T.mul(w, w))

        loss_a = build(detached=False)
        backward(loss_a)
        ga = w.grad.copy()
        assert v.grad is None
        w.grad = None
        loss_b = build(detached=True)
        backward(loss_b)
        np.testing.assert_array_equal(ga, w.grad)


def test_no_grad_blocks_recording():
    w = Tensor(np.array([1.0]), requires_grad=True)
    with no_grad():
        out = T.mul(w, w)
    assert not out.requires_grad


def test_gather_rows_scatter_adds():
    table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True, dtype=np.float64)
    idx = np.array([0, 2, 2])
    out = T.gather_rows(table, idx)
    backward(T.tsum(out))
    expected = np.zeros((4, 3))
    expected[0] = 1
    expected[2] = 2
    np.testing.assert_allclose(table.grad, expected)


def test_concat_and_narrow_roundtrip_gradients():
    a = Tensor(np.ones((2, 3)), requires_grad=True, dtype=np.float64)
    b = Tensor(np.ones((2, 2)), requires_grad=True, dtype=np.float64)
    joined = T.concat([a, b], axis=1)
    part = T.narrow(joined, 1, 2, 2)  # last col of a, first col of b
    backward(T.tsum(part))
    np.testing.assert_allclose(a.grad, [[0, 0, 1], [0, 0, 1]])
    np.testing.assert_allclose(b.grad, [[1, 0], [1, 0]])


def test_log_softmax_gradient_matches_fd():
    rng = np.random.default_rng(11)
    x = Tensor(rng.standard_normal((4, 3)), requires_grad=True, dtype=np.float64)
    w = Tensor(rng.standard_normal((4, 3)), requires_grad=False, dtype=np.float64)

    def loss_fn():
        m = x.data.max(axis=0, keepdims=True)
        ls = x.data - m - np.log(np.exp(x.data - m).sum(axis=0, keepdims=True))
        return float((w.data * ls).sum())

    loss = T.tsum(T.mul(w, T.log_softmax(x, axis=0)))
    backward(loss)
    numeric = fd_grad(loss_fn, {"x": x}, h=1e-4)
    assert_grads_close({"x": x.grad}, numeric, rtol=1e-3, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_elementwise_op_grads_match_fd(seed):
    r = np.random.default_rng(seed)
    x = Tensor(r.uniform(0.1, 2.0, size=5), requires_grad=True, dtype=np.float64)

    def loss_fn():
        v = np.tanh(x.data) + np.exp(x.data) * 0.1 + np.log(x.data)
        return float(v.sum())

    loss = T.tsum(T.tanh(x) + T.mul(T.texp(x), 0.1) + T.tlog(x))
    backward(loss)
    numeric = fd_grad(loss_fn, {"x": x}, h=1e-5)
    assert_grads_close({"x": x.grad}, numeric, rtol=1e-4, atol=1e-7)


def test_determinism_same_seed_same_bits():
    def run():
        rng = np.random.default_rng(123)
        m = Mlp([6, 16, 4], activation="gelu", rng=rng)
        x = rng.standard_normal((8, 6)).astype(np.float32)
        out = mlp_forward(m, x)
        backward(T.tsum(T.mul(out, out)))
        return out.data.copy(), {k: p.grad.copy() for k, p in m.params.items()}

    out1, g1 = run()
    out2, g2 = run()
    np.testing.assert_array_equal(out1, out2)
    for k in g1:
        np.testing.assert_array_equal(g1[k], g2[k])
