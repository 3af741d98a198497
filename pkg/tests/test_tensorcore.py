import numpy as np
import pytest

from gradcheck import check_gradients, primitive_cases
from microforge import tensorcore as tc
from microforge.errors import (
    NonIntegralOutput,
    NonScalarLoss,
    OddDimension,
    ShapeMismatch,
)
from microforge.rng import RandomStream


def t(x, rg=False, dtype=np.float64):
    return tc.Tensor(np.asarray(x, dtype=dtype), requires_grad=rg)


# -- forward semantics ---------------------------------------------------------


def test_dense_identity():
    x = t([[1.0, 2.0]])
    out = tc.dense(x, t(np.eye(2)), t([3.0, 4.0]))
    assert np.allclose(out.data, [[4.0, 6.0]])


def test_dense_matches_triple_loop():
    stream = RandomStream(1)
    x = stream.normal((2, 3), dtype=np.float64)
    w = stream.normal((3, 2), dtype=np.float64)
    b = stream.normal((2,), dtype=np.float64)
    out = tc.dense(t(x), t(w), t(b)).data
    ref = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(3):
                ref[i, j] += x[i, k] * w[k, j]
            ref[i, j] += b[j]
    assert np.allclose(out, ref, atol=1e-6)


def test_dense_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        tc.dense(t(np.zeros((2, 3))), t(np.zeros((4, 2))))


def naive_conv(x, k, stride, pad):
    b, c, h, w = x.shape
    o, _, s, _ = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - s) // stride + 1
    ow = (w + 2 * pad - s) // stride + 1
    out = np.zeros((b, o, oh, ow))
    for bi in range(b):
        for oi in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for u in range(s):
                            for v in range(s):
                                acc += xp[bi, ci, stride * i + u, stride * j + v] * k[oi, ci, u, v]
                    out[bi, oi, i, j] = acc
    return out


def test_conv2d_identity_kernel():
    x = RandomStream(2).normal((1, 2, 5, 5), dtype=np.float64)
    k = np.zeros((2, 2, 3, 3))
    k[0, 0, 1, 1] = 1.0
    k[1, 1, 1, 1] = 1.0
    out = tc.conv2d(t(x), t(k), 1, 1)
    assert np.allclose(out.data, x)


def test_conv2d_matches_naive():
    stream = RandomStream(3)
    for stride, pad, s in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (1, 0, 4)]:
        h = 6 if (6 + 2 * pad - s) % stride == 0 else 7
        x = stream.normal((2, 3, h, h), dtype=np.float64)
        k = stream.normal((2, 3, s, s), dtype=np.float64)
        out = tc.conv2d(t(x), t(k), stride, pad)
        assert np.allclose(out.data, naive_conv(x, k, stride, pad), atol=1e-10)


def test_conv2d_averaging_kernel_on_ramp():
    x = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
    k = np.full((1, 1, 3, 3), 1.0 / 9)
    out = tc.conv2d(t(x), t(k), 1, 1)
    assert np.allclose(out.data, naive_conv(x, k, 1, 1))


def test_conv2d_shape_law():
    x = t(np.zeros((1, 1, 64, 64)))
    k = t(np.zeros((4, 1, 3, 3)))
    assert tc.conv2d(x, k, 1, 1).shape == (1, 4, 64, 64)


def test_conv2d_non_integral():
    with pytest.raises(NonIntegralOutput):
        tc.conv2d(t(np.zeros((1, 1, 6, 6))), t(np.zeros((1, 1, 3, 3))), 2, 0)


def test_deconv2d_zero_insertion_oracle():
    stream = RandomStream(4)
    a = float(stream.normal((), dtype=np.float64))
    k = stream.normal((1, 1, 3, 3), dtype=np.float64)
    x = np.full((1, 1, 1, 1), a)
    out = tc.deconv2d(t(x), t(k), 2).data
    # oracle: zero-insert (1x1 stays 1x1), pad (1,2,1,2), correlate
    up = np.pad(x, ((0, 0), (0, 0), (1, 2), (1, 2)))
    ref = naive_conv(up, k.transpose(1, 0, 2, 3), 1, 0)
    assert out.shape == (1, 1, 2, 2)
    assert np.allclose(out, ref)


def test_deconv2d_is_zero_insert_plus_conv():
    stream = RandomStream(5)
    for stride in (1, 2):
        x = stream.normal((2, 3, 4, 5), dtype=np.float64)
        k = stream.normal((3, 2, 3, 3), dtype=np.float64)
        out = tc.deconv2d(t(x), t(k), stride).data
        up = tc.zero_insert(t(x), stride).data
        before = 1
        after = 3 + stride - 2 - 1
        up = np.pad(up, ((0, 0), (0, 0), (before, after), (before, after)))
        ref = naive_conv(up, k.transpose(1, 0, 2, 3), 1, 0)
        assert out.shape == (2, 2, 4 * stride, 5 * stride)
        assert np.allclose(out, ref, atol=1e-10)


def test_deconv2d_delta_identity():
    x = RandomStream(6).normal((1, 2, 4, 4), dtype=np.float64)
    k = np.zeros((2, 2, 3, 3))
    k[0, 0, 1, 1] = 1.0
    k[1, 1, 1, 1] = 1.0
    out = tc.deconv2d(t(x), t(k), 1)
    assert np.allclose(out.data, x)


def test_deconv2d_doubles():
    out = tc.deconv2d(t(np.zeros((1, 4, 8, 8))), t(np.zeros((4, 2, 3, 3))), 2)
    assert out.shape == (1, 2, 16, 16)


def test_avg_pool2_values():
    x = t(np.array([[0.0, 2.0], [4.0, 6.0]]).reshape(1, 1, 2, 2))
    assert tc.avg_pool2(x).data.ravel().tolist() == [3.0]


def test_avg_pool2_constant():
    x = t(np.full((1, 3, 4, 4), 7.0))
    assert np.allclose(tc.avg_pool2(x).data, 7.0)


def test_avg_pool2_matches_window_loop():
    x = RandomStream(7).normal((2, 2, 4, 4), dtype=np.float64)
    out = tc.avg_pool2(t(x)).data
    for b in range(2):
        for c in range(2):
            for i in range(2):
                for j in range(2):
                    win = x[b, c, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2]
                    assert out[b, c, i, j] == pytest.approx(win.mean(), abs=1e-12)


def test_avg_pool2_odd_rejected():
    with pytest.raises(OddDimension):
        tc.avg_pool2(t(np.zeros((1, 1, 3, 4))))


def test_pool_then_upsample_identity_on_block_constant():
    blocks = RandomStream(8).normal((1, 2, 3, 3), dtype=np.float64)
    x = np.repeat(np.repeat(blocks, 2, axis=2), 2, axis=3)
    out = tc.nearest_up2(tc.avg_pool2(t(x)))
    assert np.allclose(out.data, x, atol=1e-12)


def test_leaky_relu_semantics():
    x = t([-1.0, 0.0, 2.0])
    out = tc.leaky_relu(x, 0.2)
    assert np.allclose(out.data, [-0.2, 0.0, 2.0])


def test_variance_population():
    v = tc.variance(t([1.0, 2.0, 3.0, 4.0]))
    assert v.data == pytest.approx(1.25)


def test_mean_and_sum():
    x = t(np.arange(6, dtype=np.float64).reshape(2, 3))
    assert tc.sum_axes(x).data == pytest.approx(15.0)
    assert np.allclose(tc.mean(x, axes=1).data, [1.0, 4.0])


def test_elementwise_broadcast_scalar():
    x = t([1.0, 2.0])
    assert np.allclose((x + 1.0).data, [2.0, 3.0])
    assert np.allclose((2.0 * x).data, [2.0, 4.0])
    with pytest.raises(ShapeMismatch):
        tc.add(t(np.zeros((2, 3))), t(np.zeros((4,))))


# -- backward semantics ----------------------------------------------------------


def test_backward_sum_gives_ones():
    x = t(np.zeros((3, 2)), rg=True)
    tc.backward(tc.sum_axes(x))
    assert np.array_equal(x.grad, np.ones((3, 2)))


def test_backward_quadratic():
    x = t([1.0, 2.0], rg=True)
    tc.backward(tc.sum_axes(tc.mul(x, x)))
    assert np.allclose(x.grad, [2.0, 4.0])


def test_backward_requires_scalar():
    x = t([1.0, 2.0], rg=True)
    with pytest.raises(NonScalarLoss):
        tc.backward(tc.mul(x, x))


def test_backward_accumulates_across_calls():
    x = t([1.0, 2.0], rg=True)
    loss = tc.sum_axes(tc.mul(x, x))
    tc.backward(loss)
    tc.backward(loss)
    assert np.allclose(x.grad, [4.0, 8.0])


def test_backward_fanout_additive():
    x = t([3.0], rg=True)
    y = tc.add(tc.mul(x, x), tc.mul(x, 2.0))  # x^2 + 2x -> 2x + 2 = 8
    tc.backward(tc.sum_axes(y))
    assert np.allclose(x.grad, [8.0])


def test_tape_is_topologically_ordered():
    x = t([1.0], rg=True)
    y = tc.mul(x, x)
    z = tc.add(y, x)
    loss = tc.sum_axes(tc.mul(z, y))
    tape = tc.Tape.trace(loss)
    ids = [node._nid for node in tape.nodes]
    assert ids == sorted(ids)
    for i, node in enumerate(tape.nodes):
        for parent in node._parents:
            if parent.requires_grad:
                assert parent._nid < node._nid


def test_no_grad_blocks_recording():
    x = t([1.0], rg=True)
    with tc.no_grad():
        y = tc.mul(x, x)
    assert not y.requires_grad
    assert y._parents == ()


def test_grad_functional_and_create_graph():
    x = t([1.0, 2.0, 3.0], rg=True)
    f = tc.sum_axes(tc.pow_const(x, 3.0))
    (g,) = tc.grad(f, [x], create_graph=True)
    assert np.allclose(g.data, 3.0 * np.array([1.0, 4.0, 9.0]))
    h = tc.sum_axes(g)
    tc.backward(h)
    assert np.allclose(x.grad, 6.0 * np.array([1.0, 2.0, 3.0]))


def test_second_derivative_through_conv_net():
    """Gradient-penalty pattern: d/dtheta of ||d critic/d x||^2."""
    stream = RandomStream(9)
    k = t(stream.normal((2, 1, 3, 3), dtype=np.float64), rg=True)
    x = t(stream.normal((1, 1, 4, 4), dtype=np.float64), rg=True)

    def penalty(kt):
        score = tc.sum_axes(tc.leaky_relu(tc.conv2d(x, kt, 1, 1), 0.2))
        (gx,) = tc.grad(score, [x], create_graph=True)
        return tc.sum_axes(tc.mul(gx, gx))

    loss = penalty(k)
    tc.backward(loss)
    analytic = k.grad.copy()

    h = 1e-5
    numeric = np.zeros_like(k.data)
    flat_k = k.data.reshape(-1)
    for i in range(flat_k.size):
        orig = flat_k[i]
        flat_k[i] = orig + h
        plus = penalty(k).item()
        flat_k[i] = orig - h
        minus = penalty(k).item()
        flat_k[i] = orig
        numeric.reshape(-1)[i] = (plus - minus) / (2 * h)
    assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-7)


# -- finite-difference sweep over every primitive --------------------------------


@pytest.mark.parametrize("trial", range(3))
def test_primitives_pass_gradcheck(trial):
    stream = RandomStream(1000 + trial)
    for name, fn, arrays in primitive_cases(stream):
        worst = check_gradients(fn, arrays, weights_seed=trial)
        assert worst <= 1e-3, name


# -- Adam -------------------------------------------------------------------------


def test_adam_zero_grad_keeps_params():
    p = t(np.array([1.0, -2.0]), rg=True)
    params = {"p": p}
    state = tc.AdamState(lr=0.1)
    tc.adam_step(params, state)
    assert state.t == 1
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adam_single_step_hand_value():
    p = t(np.array([0.0]), rg=True)
    p.grad = np.array([1.0])
    state = tc.AdamState(lr=0.001, beta1=0.0, beta2=0.99, eps=1e-8)
    tc.adam_step({"p": p}, state)
    # m_hat = 1, v_hat = 0.01/0.01 = 1 -> delta = -0.001/(1 + 1e-8)
    assert p.data[0] == pytest.approx(-0.001 / (1.0 + 1e-8), rel=1e-9)
    assert state.t == 1


def test_adam_converges_on_quadratic():
    p = t(np.array([5.0]), rg=True)
    state = tc.AdamState(lr=0.1, beta1=0.9, beta2=0.999)
    for _ in range(500):
        p.zero_grad()
        loss = tc.sum_axes(tc.mul(p, p))
        tc.backward(loss)
        tc.adam_step({"p": p}, state)
    assert abs(p.data[0]) < 1e-2


def test_adam_shape_mismatch():
    p = t(np.zeros((2,)), rg=True)
    state = tc.AdamState()
    with pytest.raises(ShapeMismatch):
        tc.adam_step({"p": p}, state, grads={"p": np.zeros((3,))})


def test_param_store_roundtrip():
    store = tc.ParamStore()
    a = store.add("w", np.ones((2, 2)))
    store.add("b", np.zeros((2,)))
    snap = store.state_arrays()
    a.data[:] = 5.0
    store.load_state_arrays(snap)
    assert np.array_equal(store["w"].data, np.ones((2, 2)))
    assert store.names() == ["w", "b"]
    with pytest.raises(KeyError):
        store.add("w", np.zeros(1))
