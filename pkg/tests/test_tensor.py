from __future__ import annotations

import numpy as np
import pytest

from deepbb import tensor as T
from deepbb.errors import ShapeError, StateError


def conv_oracle(x, k, stride=1):
    C, H, W = x.shape
    F, _, kh, kw = k.shape
    Ho, Wo = (H - kh) // stride + 1, (W - kw) // stride + 1
    out = np.zeros((F, Ho, Wo))
    for f in range(F):
        for r in range(Ho):
            for c in range(Wo):
                total = 0.0
                for ch in range(C):
                    for i in range(kh):
                        for j in range(kw):
                            total += x[ch, r * stride + i, c * stride + j] * k[f, ch, i, j]
                out[f, r, c] = total
    return out


def test_conv_all_ones():
    g = T.Graph()
    out = T.conv2d(g.leaf(np.ones((1, 3, 3))), g.leaf(np.ones((1, 1, 2, 2))))
    assert out.shape == (1, 2, 2)
    assert np.array_equal(out.data, np.full((1, 2, 2), 4.0))


def test_conv_identity_kernel():
    x = np.random.default_rng(0).random((1, 5, 4))
    out = T.conv2d(T.Tensor(x), T.Tensor(np.ones((1, 1, 1, 1))))
    assert np.array_equal(out.data, x)


@pytest.mark.parametrize("shape,kshape,stride", [
    ((1, 4, 4), (1, 1, 3, 3), 1),
    ((2, 7, 6), (3, 2, 3, 2), 2),
    ((3, 9, 11), (2, 3, 5, 5), 2),
])
def test_conv_matches_loop_oracle(shape, kshape, stride):
    rng = np.random.default_rng(1)
    x, k = rng.normal(size=shape), rng.normal(size=kshape)
    out = T.conv2d(T.Tensor(x), T.Tensor(k), stride=stride)
    assert np.allclose(out.data, conv_oracle(x, k, stride), atol=1e-12, rtol=0)
    H, W = shape[1:]
    assert out.shape[1:] == ((H - kshape[2]) // stride + 1, (W - kshape[3]) // stride + 1)


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ShapeError, match="channel"):
        T.conv2d(T.Tensor(np.ones((2, 4, 4))), T.Tensor(np.ones((1, 3, 2, 2))))


def test_conv_rejects_oversized_kernel_and_bad_stride():
    with pytest.raises(ShapeError):
        T.conv2d(T.Tensor(np.ones((1, 2, 2))), T.Tensor(np.ones((1, 1, 3, 3))))
    with pytest.raises(ShapeError):
        T.conv2d(T.Tensor(np.ones((1, 4, 4))), T.Tensor(np.ones((1, 1, 2, 2))), stride=0)


def test_dense_examples():
    x = np.array([1.0, -2.0, 3.0])
    out = T.dense(T.Tensor(x), T.Tensor(np.eye(3)), T.Tensor(np.zeros(3)))
    assert np.array_equal(out.data, x)
    out = T.dense(T.Tensor(x), T.Tensor(np.zeros((2, 3))), T.Tensor(np.array([0.5, -1.5])))
    assert np.array_equal(out.data, [0.5, -1.5])
    w = np.array([[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]])
    b = np.array([0.1, 0.2])
    out = T.dense(T.Tensor(x), T.Tensor(w), T.Tensor(b))
    assert np.allclose(out.data, [1 - 4 + 9 + 0.1, -1 - 1 + 0.2])


def test_dense_rejects_mismatch():
    with pytest.raises(ShapeError):
        T.dense(T.Tensor(np.ones(3)), T.Tensor(np.ones((2, 4))), T.Tensor(np.ones(2)))
    with pytest.raises(ShapeError):
        T.dense(T.Tensor(np.ones(4)), T.Tensor(np.ones((2, 4))), T.Tensor(np.ones(3)))


def test_activations():
    assert np.array_equal(T.relu(T.Tensor(np.array([-1.0, 0.0, 2.0]))).data, [0, 0, 2])
    g = T.Graph()
    x = g.leaf(np.zeros(1), requires_grad=True)
    y = T.activation(x, "tanh")
    g.backward(np.ones(1), y)
    assert y.data[0] == 0.0 and x.grad[0] == 1.0
    with pytest.raises(ValueError):
        T.activation(T.Tensor(np.zeros(1)), "sigmoid")


def test_atan_scaled_derivative_matches_fd():
    g = T.Graph()
    x = g.leaf(np.ones(1), requires_grad=True)
    y = T.activation(x, "atan_scaled")
    g.backward(np.ones(1), y)
    h = 1e-5
    fd = (2 * np.arctan(1 + h) - 2 * np.arctan(1 - h)) / (2 * h)
    assert abs(x.grad[0] - fd) < 1e-6
    assert x.grad[0] == pytest.approx(1.0)


def test_dense_backward_is_weights_transpose_times_seed():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(4, 6))
    g = T.Graph()
    x = g.leaf(rng.normal(size=6), requires_grad=True)
    out = T.dense(x, g.leaf(w), g.leaf(np.zeros(4)))
    seed = rng.normal(size=4)
    g.backward(seed, out)
    assert np.allclose(x.grad, w.T @ seed)


def _net(x, params, g):
    k, w, b = (g.leaf(p, requires_grad=True) for p in params)
    h = T.relu(T.conv2d(x, k, stride=1))
    return T.dense(T.reshape(h, (-1,)), w, b), (k, w, b)


def test_composite_net_matches_finite_differences():
    rng = np.random.default_rng(3)
    x0 = rng.random((2, 6, 6))
    params = (rng.normal(size=(3, 2, 3, 3)), rng.normal(size=(1, 48)), rng.normal(size=1))
    g = T.Graph()
    x = g.leaf(x0, requires_grad=True)
    out, leaves = _net(x, params, g)
    g.backward(np.ones(1), out)

    def f(xv):
        g2 = T.Graph()
        return _net(g2.leaf(xv), params, g2)[0].data[0]

    h = 1e-5
    pre = T.conv2d(T.Tensor(x0), T.Tensor(params[0])).data
    assert np.min(np.abs(pre)) > 1e-3  # no relu kink within reach of the probes
    for idx in np.ndindex(x0.shape):
        xp, xm = x0.copy(), x0.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (f(xp) - f(xm)) / (2 * h)
        assert abs(x.grad[idx] - fd) <= 1e-4 * max(abs(fd), 1e-6)


def test_zero_seed_gives_zero_gradients():
    rng = np.random.default_rng(4)
    g = T.Graph()
    x = g.leaf(rng.random((2, 6, 6)), requires_grad=True)
    out, leaves = _net(x, (rng.normal(size=(3, 2, 3, 3)), rng.normal(size=(1, 48)), rng.normal(size=1)), g)
    g.backward(np.zeros(1), out)
    for t in (x, *leaves):
        assert not np.any(t.grad)


def test_backward_is_linear_in_seed():
    rng = np.random.default_rng(5)
    w = rng.normal(size=(2, 5))
    x0 = rng.normal(size=5)

    def grad(seed):
        g = T.Graph()
        x = g.leaf(x0, requires_grad=True)
        out = T.dense(T.activation(x, "tanh"), g.leaf(w), g.leaf(np.zeros(2)))
        g.backward(seed, out)
        return x.grad

    a, b = 2.5, -0.75
    combined = grad(np.array([a, b]))
    assert np.allclose(combined, a * grad(np.array([1.0, 0.0])) + b * grad(np.array([0.0, 1.0])))


def test_backward_errors():
    g = T.Graph()
    with pytest.raises(StateError):
        g.backward(np.ones(1))
    x = g.leaf(np.ones(3), requires_grad=True)
    out = T.scale(x, 2.0)
    with pytest.raises(ShapeError):
        g.backward(np.ones(2), out)
    other = T.Graph()
    y = T.scale(other.leaf(np.ones(3), requires_grad=True), 1.0)
    with pytest.raises(StateError):
        g.backward(np.ones(3), y)


def test_inputs_from_two_graphs_rejected():
    a = T.Graph().leaf(np.ones(2), requires_grad=True)
    b = T.Graph().leaf(np.ones((2, 2)))
    with pytest.raises(StateError):
        T.dense(a, b, T.Tensor(np.zeros(2)))


def test_graph_is_topologically_ordered():
    rng = np.random.default_rng(6)
    g = T.Graph()
    x = g.leaf(rng.random((2, 6, 6)), requires_grad=True)
    _net(x, (rng.normal(size=(3, 2, 3, 3)), rng.normal(size=(1, 48)), rng.normal(size=1)), g)
    seen = {id(t) for t in g.leaves}
    for node in g.nodes:
        assert all(id(t) in seen for t in node.inputs)
        seen.add(id(node.output))


def test_recording_after_backward_clears_gradients():
    g = T.Graph()
    x = g.leaf(np.ones(2), requires_grad=True)
    g.backward(np.ones(2), T.scale(x, 3.0))
    assert np.array_equal(x.grad, [3.0, 3.0])
    T.scale(x, 1.0)
    assert x.grad is None


def test_determinism_bitwise():
    rng = np.random.default_rng(7)
    x0 = rng.random((2, 6, 6))
    params = (rng.normal(size=(3, 2, 3, 3)), rng.normal(size=(1, 48)), rng.normal(size=1))
    runs = []
    for _ in range(2):
        g = T.Graph()
        x = g.leaf(x0, requires_grad=True)
        out, _ = _net(x, params, g)
        g.backward(np.ones(1), out)
        runs.append((out.data.copy(), x.grad.copy()))
    assert np.array_equal(runs[0][0], runs[1][0])
    assert np.array_equal(runs[0][1], runs[1][1])
