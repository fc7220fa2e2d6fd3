import numpy as np
import pytest

from autodiff import AutodiffError, Graph, backward, inject_external_gradient


def numeric_gradient(f, x, h=1e-6):
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[index] = h
        grad[index] = (f(x + step) - f(x - step)) / (2 * h)
    return grad


def two_layer(w1, b1, w2, x, upstream):
    g = Graph()
    h = g.tanh(g.add(g.matmul(g.constant(x), g.parameter("w1", w1)), g.parameter("b1", b1)))
    out = g.sigmoid(g.matmul(h, g.parameter("w2", w2)))
    return g, out, float(np.sum(out.value * upstream))


def test_gradients_match_finite_differences(rng):
    x = rng.normal(size=(2, 3))
    w1, b1, w2 = rng.normal(size=(3, 4)), rng.normal(size=4), rng.normal(size=(4, 2))
    upstream = rng.normal(size=(2, 2))

    g, _, _ = two_layer(w1, b1, w2, x, upstream)
    grads = g.backward(upstream)

    np.testing.assert_allclose(grads["w1"], numeric_gradient(lambda w: two_layer(w, b1, w2, x, upstream)[2], w1), atol=1e-7)
    np.testing.assert_allclose(grads["b1"], numeric_gradient(lambda b: two_layer(w1, b, w2, x, upstream)[2], b1), atol=1e-7)
    np.testing.assert_allclose(grads["w2"], numeric_gradient(lambda w: two_layer(w1, b1, w, x, upstream)[2], w2), atol=1e-7)


def test_sigmoid_and_relu_values():
    g = Graph()
    x = g.constant([-2.0, 0.0, 3.0])
    np.testing.assert_allclose(g.sigmoid(x).value, 1.0 / (1.0 + np.exp(-x.value)))
    np.testing.assert_array_equal(g.relu(x).value, [0.0, 0.0, 3.0])


def test_structural_ops_route_gradients():
    g = Graph()
    a = g.parameter("a", np.arange(6.0).reshape(2, 3))
    b = g.parameter("b", np.ones((1, 3)))
    joined = g.concat([a, b], axis=0)
    middle = g.slice(g.reshape(joined, (9,)), 2, 5)
    g.scale(middle, 2.0)
    grads = g.backward(np.array([1.0, 10.0, 100.0]))

    np.testing.assert_array_equal(grads["a"], [[0.0, 0.0, 2.0], [20.0, 200.0, 0.0]])
    np.testing.assert_array_equal(grads["b"], np.zeros((1, 3)))


def test_bias_broadcast_sums_over_rows():
    g = Graph()
    g.add(g.parameter("x", np.zeros((4, 2))), g.parameter("bias", np.zeros(2)))
    grads = g.backward(np.ones((4, 2)))
    np.testing.assert_array_equal(grads["bias"], [4.0, 4.0])


def test_injected_gradients_accumulate():
    g = Graph()
    w = g.parameter("w", np.array([[2.0]]))
    out = g.matmul(g.constant([[3.0]]), w)
    inject_external_gradient(g, out, [[1.0]])
    inject_external_gradient(g, out, [[0.5]])
    grads = backward(g)
    np.testing.assert_array_equal(grads["w"], [[4.5]])

    # seeds are consumed by the pass
    with pytest.raises(AutodiffError, match="seed"):
        g.backward()


def test_two_heads_share_a_trunk():
    g = Graph()
    w = g.parameter("w", np.array([1.0, -1.0]))
    trunk = g.scale(w, 3.0)
    left = g.slice(trunk, 0, 1)
    right = g.slice(trunk, 1, 2)
    g.inject_external_gradient(left, [1.0])
    g.inject_external_gradient(right, [2.0])
    np.testing.assert_array_equal(g.backward()["w"], [3.0, 6.0])


def test_misuse_is_reported():
    g, other = Graph(), Graph()
    g.parameter("w", np.ones(2))
    with pytest.raises(AutodiffError, match="before any forward"):
        g.backward(np.ones(2))

    with pytest.raises(AutodiffError, match="matmul"):
        g.matmul(g.constant(np.ones((2, 3))), g.constant(np.ones((2, 3))))
    with pytest.raises(AutodiffError, match="add"):
        g.add(g.constant(np.ones((2, 3))), g.constant(np.ones(2)))
    with pytest.raises(AutodiffError, match="reshape"):
        g.reshape(g.constant(np.ones(6)), (4,))
    with pytest.raises(AutodiffError, match="slice"):
        g.slice(g.constant(np.ones(3)), 2, 5)
    with pytest.raises(AutodiffError, match="another graph"):
        g.add(g.constant(np.ones(2)), other.constant(np.ones(2)))

    node = g.constant(np.ones(2))
    with pytest.raises(AutodiffError, match="does not match"):
        g.inject_external_gradient(node, np.ones(3))
