import numpy as np
import pytest

from rpg import tape
from rpg.rng import RngStream
from rpg.tape import Adam, DiffGraph, backprop


def fd_gradient(fn, xs, step=1e-5):
    """Central finite differences of a scalar fn over a list of arrays."""
    grads = []
    for i, x in enumerate(xs):
        g = np.zeros_like(x)
        flat = g.reshape(-1)
        for k in range(x.size):
            bump = np.zeros_like(x).reshape(-1)
            bump[k] = step
            bump = bump.reshape(x.shape)
            hi = [v.copy() for v in xs]
            lo = [v.copy() for v in xs]
            hi[i] = x + bump
            lo[i] = x - bump
            flat[k] = (fn(hi) - fn(lo)) / (2 * step)
        grads.append(g)
    return grads


def test_square_at_three():
    g = DiffGraph()
    x = g.leaf(3.0)
    y = tape.mul(x, x)
    assert backprop(g, y) == pytest.approx([6.0])


def test_product_partials():
    g = DiffGraph()
    x = g.leaf(2.0)
    y = g.leaf(5.0)
    out = tape.mul(x, y)
    assert np.allclose(backprop(g, out), [5.0, 2.0])


def test_constants_stay_out_of_graph():
    a = np.arange(4.0)
    b = np.ones(4)
    out = tape.add(tape.mul(a, b), b)
    assert isinstance(out, np.ndarray)  # no Var wrapping, pure numpy path


def test_unused_leaf_gets_zero_gradient():
    g = DiffGraph()
    x = g.leaf(1.0)
    _ = g.leaf(np.ones(3))
    y = tape.mul(x, x)
    flat = backprop(g, y)
    assert flat.shape == (4,)
    assert np.allclose(flat[1:], 0.0)


def test_three_layer_graph_matches_fd():
    rng = RngStream(5)
    w1 = rng.normal(size=(4, 3))
    w2 = rng.normal(size=(3, 2))
    w3 = rng.normal(size=2)
    x = rng.normal(size=4)

    def forward(params):
        a, b, c = params
        h1 = tape.tanh(tape.matmul(x, a))
        h2 = tape.softplus(tape.matmul(h1, b))
        out = tape.reduce_sum(tape.mul(h2, c))
        return float(tape.value(out))

    g = DiffGraph()
    leaves = [g.leaf(w1), g.leaf(w2), g.leaf(w3)]
    h1 = tape.tanh(tape.matmul(x, leaves[0]))
    h2 = tape.softplus(tape.matmul(h1, leaves[1]))
    out = tape.reduce_sum(tape.mul(h2, leaves[2]))
    auto = g.leaf_gradients(out)
    numeric = fd_gradient(forward, [w1, w2, w3])
    for a, n in zip(auto, numeric):
        assert np.max(np.abs(a - n)) <= 1e-4 * max(1.0, np.max(np.abs(n)))


@pytest.mark.parametrize("op,ref", [
    (tape.add, lambda a, b: a + b),
    (tape.sub, lambda a, b: a - b),
    (tape.mul, lambda a, b: a * b),
    (tape.div, lambda a, b: a / b),
])
def test_binary_ops_with_broadcast(op, ref):
    rng = RngStream(17)
    a0 = rng.normal(size=(5, 3))
    b0 = rng.normal(size=3) + 3.0  # keep denominators away from zero

    def forward(params):
        return float(np.sum(ref(params[0], params[1])))

    g = DiffGraph()
    a, b = g.leaf(a0), g.leaf(b0)
    out = tape.reduce_sum(op(a, b))
    auto = g.leaf_gradients(out)
    numeric = fd_gradient(forward, [a0, b0])
    for x, y in zip(auto, numeric):
        assert np.max(np.abs(x - y)) <= 1e-6 * max(1.0, np.max(np.abs(y)))


def test_trig_and_slice_and_concat_gradients():
    rng = RngStream(23)
    x0 = rng.normal(size=6)

    def forward(params):
        (p,) = params
        left = np.cos(p[:3])
        right = np.sin(p[3:])
        both = np.concatenate([left, right])
        return float(np.sum(both * both))

    g = DiffGraph()
    x = g.leaf(x0)
    left = tape.cos(tape.slice_axis(x, np.s_[:3]))
    right = tape.sin(tape.slice_axis(x, np.s_[3:]))
    both = tape.concat([left, right])
    out = tape.reduce_sum(tape.square(both))
    auto = g.leaf_gradients(out)[0]
    numeric = fd_gradient(forward, [x0])[0]
    assert np.max(np.abs(auto - numeric)) <= 1e-6


def test_window_dot_gradient():
    rng = RngStream(29)
    windows = rng.normal(size=(4, 7, 3))  # constant im2col stack
    k0 = rng.normal(size=3)

    def forward(params):
        return float(np.sum((windows @ params[0]) ** 2))

    g = DiffGraph()
    k = g.leaf(k0)
    out = tape.reduce_sum(tape.square(tape.window_dot(windows, k)))
    auto = g.leaf_gradients(out)[0]
    numeric = fd_gradient(forward, [k0])[0]
    assert np.max(np.abs(auto - numeric)) <= 1e-6


def test_pick_and_reshape_gradients():
    rng = RngStream(31)
    k0 = rng.normal(size=9)

    def forward(params):
        m = params[0].reshape(3, 3)
        return float(m[0, 0] * 2.0 + params[0][4] ** 2)

    g = DiffGraph()
    k = g.leaf(k0)
    m = tape.reshape(k, (3, 3))
    out = tape.add(tape.mul(tape.slice_axis(m, (0, 0)), 2.0),
                   tape.square(tape.pick(k, 4)))
    auto = g.leaf_gradients(out)[0]
    numeric = fd_gradient(forward, [k0])[0]
    assert np.max(np.abs(auto - numeric)) <= 1e-6


def test_matmul_vector_matrix_cases():
    rng = RngStream(37)
    w0 = rng.normal(size=(4, 3))
    v0 = rng.normal(size=4)

    def forward(params):
        return float(np.sum(params[1] @ params[0]))

    g = DiffGraph()
    w, v = g.leaf(w0), g.leaf(v0)
    out = tape.reduce_sum(tape.matmul(v, w))
    auto = g.leaf_gradients(out)
    numeric = fd_gradient(forward, [w0, v0])
    for a, n in zip(auto, numeric):
        assert np.max(np.abs(a - n)) <= 1e-6


def test_backprop_rejects_non_scalar_output():
    g = DiffGraph()
    x = g.leaf(np.ones(3))
    y = tape.mul(x, 2.0)
    with pytest.raises(ValueError):
        backprop(g, y)


def test_gradient_reuse_same_graph_is_repeatable():
    g = DiffGraph()
    x = g.leaf(np.array([1.0, 2.0]))
    out = tape.reduce_sum(tape.square(x))
    first = backprop(g, out)
    second = backprop(g, out)
    assert np.array_equal(first, second)


def test_adam_descends_quadratic():
    theta = [np.array([5.0, -3.0])]
    opt = Adam([p.shape for p in theta], lr=0.1)
    for _ in range(200):
        grads = [2.0 * theta[0]]
        opt.step(theta, grads)
    assert np.max(np.abs(theta[0])) < 1e-2


def test_adam_is_deterministic():
    def run():
        p = [np.array([1.0, 1.0])]
        opt = Adam([(2,)], lr=0.05)
        for _ in range(50):
            opt.step(p, [p[0] ** 2 + 1.0])
        return p[0].copy()

    assert np.array_equal(run(), run())
