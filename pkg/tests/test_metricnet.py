"""Metric network tests: forward structure, training loop, checkpoints.

The two load-bearing exact properties here are the Euclidean start (zero
heads make u identically zero, so the initial divergence coincides with the
Hessian trace bitwise) and the saddle at that start (every phi-derivative of
the loss carries a factor of u, so the gradient is exactly zero while the
loss is not — the training loop must kick its way off the plateau).
"""

import time

import numpy as np
import pytest

from rpg.divergence import divergence_report, hessian_trace_hutchinson
from rpg.errors import BadDimensions, LayoutMismatch
from rpg.fields import FieldEvaluator, ProbeConfig
from rpg.metricnet import (LayerLayout, MetricNetConfig, StepConfig,
                           build_u_field, evaluate_divergence_loss,
                           freeze_probe_batch, init_params, load_params,
                           metric_net_forward, params_to_json, save_params,
                           train_metric_net)
from rpg.rng import RngStream
from rpg.tape import DiffGraph, add, reduce_sum, value


def small_layout():
    return LayerLayout(shapes=((4, 4), (4,), (4, 2), (2,)))


def make_phi(seed=0, layout=None, m_tilde=3, heads="zero"):
    layout = layout or small_layout()
    cfg = MetricNetConfig(m_tilde=m_tilde)
    phi = init_params(RngStream(seed), cfg, layout)
    if heads == "random":
        r = RngStream(seed + 1000)
        for a in (phi.head_omega_w, phi.head_omega_b,
                  phi.head_sigma_w, phi.head_sigma_b):
            a += r.uniform(-0.1, 0.1, a.shape)
    return phi


# ------------------------------------------------------------------ layout


def test_layout_round_trip_exact():
    layout = small_layout()
    vec = RngStream(1).normal((layout.n,))
    assert np.array_equal(layout.flatten(layout.unflatten(vec)), vec)


def test_layout_unflatten_batch_shapes():
    layout = small_layout()
    parts = layout.unflatten_batch(np.zeros((7, layout.n)))
    assert [p.shape for p in parts] == [(7, 4, 4), (7, 4), (7, 4, 2), (7, 2)]


def test_layout_output_bias_rule():
    assert small_layout().output_bias_part == 3
    assert LayerLayout.from_vector(8).output_bias_part is None
    assert LayerLayout(shapes=((3, 3),)).output_bias_part is None


def test_layout_rejects_wrong_sizes():
    layout = small_layout()
    with pytest.raises(LayoutMismatch):
        layout.unflatten(np.zeros(layout.n + 1))
    with pytest.raises(LayoutMismatch):
        layout.flatten([np.zeros((4, 4))])


# ----------------------------------------------------------------- forward


def test_zero_heads_give_zero_outputs():
    phi = make_phi(seed=3)
    theta = RngStream(4).normal((phi.layout.n,))
    omega, sigma, graph = metric_net_forward(phi, phi.layout.unflatten(theta))
    assert graph is None
    assert np.array_equal(omega, np.zeros(3))
    assert np.array_equal(sigma, np.zeros(3))


def test_forward_deterministic():
    phi = make_phi(seed=5, heads="random")
    theta = RngStream(6).normal((phi.layout.n,))
    a = metric_net_forward(phi, phi.layout.unflatten(theta))
    b = metric_net_forward(phi, phi.layout.unflatten(theta))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_forward_batched_matches_single():
    phi = make_phi(seed=7, heads="random")
    pts = RngStream(8).normal((5, phi.layout.n))
    om_b, sg_b, _ = metric_net_forward(phi, phi.layout.unflatten_batch(pts))
    for i in range(5):
        om, sg, _ = metric_net_forward(phi, phi.layout.unflatten(pts[i]))
        assert np.allclose(om_b[i], om, atol=1e-14)
        assert np.allclose(sg_b[i], sg, atol=1e-14)


def test_forward_rejects_wrong_layout():
    phi = make_phi(seed=9)
    with pytest.raises(LayoutMismatch):
        metric_net_forward(phi, [np.zeros((4, 4))])
    with pytest.raises(LayoutMismatch):
        metric_net_forward(phi, [np.zeros((4, 4)), np.zeros(4),
                                 np.zeros((4, 2)), np.zeros(3)])


def test_trunk_perturbation_matches_backprop():
    """FD directional derivative of the summed outputs vs the tape gradient."""
    phi = make_phi(seed=11, heads="random")
    theta_parts = phi.layout.unflatten(RngStream(12).normal((phi.layout.n,)))

    graph = DiffGraph()
    var_phi = phi.with_arrays([graph.leaf(a) for a in phi.params_list()])
    omega, sigma, _ = metric_net_forward(var_phi, theta_parts)
    total = add(reduce_sum(omega), reduce_sum(sigma))
    grads = graph.leaf_gradients(total)
    trunk_index = next(i for i, a in enumerate(phi.params_list())
                       if a is phi.trunk_w)
    predicted = grads[trunk_index][0, 0]
    assert abs(predicted) > 1e-12

    h = 1e-5
    for sign in (1.0, -1.0):
        phi.trunk_w[0, 0] += sign * h
        om, sg, _ = metric_net_forward(phi, theta_parts)
        if sign > 0:
            up = float(np.sum(om) + np.sum(sg))
        else:
            down = float(np.sum(om) + np.sum(sg))
        phi.trunk_w[0, 0] -= sign * h
    fd = (up - down) / (2 * h)
    assert abs(fd - predicted) <= 1e-3 * abs(fd)


def test_forward_cost_scales_linearly():
    """Doubling the flat dimension must not double-plus the forward time.

    The layout carries one fixed 16x16 part so the constant share keeps the
    honest-linear ratio comfortably below the 2x bound (a quadratic scan
    would land far above it).
    """
    times = []
    for n in (256, 512):
        layout = LayerLayout(shapes=((16, 16), (n,)))
        phi = init_params(RngStream(13), MetricNetConfig(m_tilde=4), layout)
        parts = layout.unflatten(np.zeros(layout.n))
        metric_net_forward(phi, parts)  # warm up
        best = np.inf
        for _ in range(9):
            t0 = time.perf_counter()
            metric_net_forward(phi, parts)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    assert times[1] / times[0] <= 2.0


# -------------------------------------------------------------------- init


def test_init_heads_zero_trunk_varies_with_seed():
    a = make_phi(seed=21)
    b = make_phi(seed=22)
    assert np.array_equal(a.head_omega_w, np.zeros_like(a.head_omega_w))
    assert np.array_equal(a.head_sigma_w, np.zeros_like(a.head_sigma_w))
    assert not np.array_equal(a.trunk_w, b.trunk_w)


def test_init_rejects_large_m_tilde():
    layout = LayerLayout.from_vector(4)
    with pytest.raises(BadDimensions):
        init_params(RngStream(1), MetricNetConfig(m_tilde=4), layout)


def test_param_groups_partition():
    phi = make_phi(seed=23)
    groups = phi.param_groups()
    total = len(phi.params_list())
    joined = sorted(groups["shared"] + groups["phi1"] + groups["phi2"])
    assert joined == list(range(total))
    assert groups["phi1"] == [total - 4, total - 3]
    assert groups["phi2"] == [total - 2, total - 1]


def test_initial_ratio_is_exactly_one():
    """u = 0 at init, so the report's div and trace share every bit."""
    phi = make_phi(seed=24)
    n = phi.layout.n
    a = 2.0 * np.eye(n) + 0.1
    fe = FieldEvaluator(grad_fn=lambda p: p @ a, u_fn=build_u_field(phi), n=n)
    rep = divergence_report(fe, RngStream(25).normal((n,)),
                            ProbeConfig(probe_count=8, seed=1))
    assert rep.div == rep.hessian_trace
    assert rep.ratio == 1.0


# ---------------------------------------------------------------- training


def quad_fixture(n=8):
    d = np.arange(1.0, n + 1.0)
    layout = LayerLayout.from_vector(n)
    grad_fn = lambda p: p * d
    theta = 0.5 * np.ones(n)
    return layout, grad_fn, theta, d


def test_zero_head_start_is_exact_saddle():
    """Loss positive, every phi-gradient exactly 0.0 — not approximately."""
    layout, grad_fn, theta, d = quad_fixture()
    phi = init_params(RngStream(30), MetricNetConfig(m_tilde=3), layout)
    ctx = freeze_probe_batch(phi, theta, grad_fn, ProbeConfig(probe_count=8))
    div, loss, grads = evaluate_divergence_loss(phi, ctx)
    assert div == pytest.approx(float(np.sum(d)), abs=1e-9)
    assert loss > 0
    assert all(np.all(g == 0.0) for g in grads)


def test_initial_divergence_matches_hutchinson():
    layout, grad_fn, theta, d = quad_fixture()
    phi = init_params(RngStream(31), MetricNetConfig(m_tilde=3), layout)
    pc = ProbeConfig(probe_count=8, seed=4)
    ctx = freeze_probe_batch(phi, theta, grad_fn, pc)
    div, _, _ = evaluate_divergence_loss(phi, ctx)
    trace = hessian_trace_hutchinson(grad_fn, theta, pc)
    assert div == pytest.approx(trace, rel=1e-12)


def test_phi_gradient_matches_fd():
    """Central FD over a handful of phi coordinates, frozen probe batch."""
    layout, grad_fn, theta, _ = quad_fixture()
    phi = init_params(RngStream(32), MetricNetConfig(m_tilde=3), layout)
    r = RngStream(33)
    for a in (phi.head_omega_w, phi.head_omega_b,
              phi.head_sigma_w, phi.head_sigma_b):
        a += r.uniform(-0.05, 0.05, a.shape)
    ctx = freeze_probe_batch(phi, theta, grad_fn, ProbeConfig(probe_count=8))
    _, _, grads = evaluate_divergence_loss(phi, ctx)

    arrs = phi.params_list()
    picks = [(0, 0), (len(arrs) - 6, 0), (len(arrs) - 4, 0),
             (len(arrs) - 2, 0), (len(arrs) - 1, 0)]
    # The loss sits near 1300, so a tiny step drowns the central difference
    # in rounding; 1e-4 keeps both truncation and cancellation far below
    # the 1e-3 gate.
    h = 1e-4
    for ai, flat in picks:
        a = arrs[ai]
        idx = np.unravel_index(flat, a.shape)
        a[idx] += h
        _, up, _ = evaluate_divergence_loss(phi, ctx)
        a[idx] -= 2 * h
        _, down, _ = evaluate_divergence_loss(phi, ctx)
        a[idx] += h
        fd = (up - down) / (2 * h)
        got = grads[ai][idx]
        if abs(fd) > 1e-8:
            assert abs(got - fd) <= 1e-3 * abs(fd)
        else:
            assert abs(got) <= 1e-6


def test_train_zero_field_is_noop():
    """J = 0 everywhere: loss exactly 0, phi returned bit-identical."""
    layout = LayerLayout.from_vector(6)
    phi = init_params(RngStream(34), MetricNetConfig(m_tilde=2), layout)
    before = [a.copy() for a in phi.params_list()]
    out, history = train_metric_net(phi, np.ones(6),
                                    lambda p: np.zeros_like(p),
                                    ProbeConfig(probe_count=4), max_iters=5)
    assert [(i, d, l) for i, d, l in history] == [(i, 0.0, 0.0)
                                                  for i in range(5)]
    assert all(np.array_equal(a, b)
               for a, b in zip(out.params_list(), before))


def test_train_history_loss_non_increasing():
    layout, grad_fn, theta, _ = quad_fixture()
    phi = init_params(RngStream(35), MetricNetConfig(m_tilde=3), layout)
    _, history = train_metric_net(phi, theta, grad_fn,
                                  ProbeConfig(probe_count=8, seed=2),
                                  max_iters=8)
    losses = [l for _, _, l in history]
    assert len(losses) == 8
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert losses[-1] <= losses[0]


def test_train_deterministic():
    layout, grad_fn, theta, _ = quad_fixture()
    runs = []
    for _ in range(2):
        phi = init_params(RngStream(36), MetricNetConfig(m_tilde=3), layout)
        out, history = train_metric_net(phi, theta, grad_fn,
                                        ProbeConfig(probe_count=8, seed=3),
                                        max_iters=5)
        runs.append((out, history))
    assert runs[0][1] == runs[1][1]
    assert all(np.array_equal(a, b) for a, b in
               zip(runs[0][0].params_list(), runs[1][0].params_list()))


def test_train_aborts_on_non_finite():
    layout, grad_fn, theta, _ = quad_fixture()
    phi = init_params(RngStream(37), MetricNetConfig(m_tilde=3), layout)
    phi.trunk_w[0, 0] = np.inf
    with np.errstate(invalid="ignore"):
        out, history = train_metric_net(
            phi, theta, grad_fn, ProbeConfig(probe_count=4), max_iters=5)
    assert history == []
    assert np.isinf(out.trunk_w[0, 0])


def test_train_rejects_zero_iters():
    layout, grad_fn, theta, _ = quad_fixture()
    phi = init_params(RngStream(38), MetricNetConfig(m_tilde=3), layout)
    with pytest.raises(ValueError):
        train_metric_net(phi, theta, grad_fn, ProbeConfig(probe_count=4),
                         max_iters=0)


# ------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path):
    phi = make_phi(seed=40, heads="random")
    path = str(tmp_path / "phi.bin")
    save_params(phi, path)
    back = load_params(path)
    assert back.m_tilde == phi.m_tilde
    assert back.plans == phi.plans
    assert back.layout.shapes == phi.layout.shapes
    for a, b in zip(phi.params_list(), back.params_list()):
        assert np.array_equal(a, b)
    theta = RngStream(41).normal((phi.layout.n,))
    before = metric_net_forward(phi, phi.layout.unflatten(theta))
    after = metric_net_forward(back, back.layout.unflatten(theta))
    assert np.array_equal(before[0], after[0])
    assert np.array_equal(before[1], after[1])


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_params(str(path))


def test_json_export_structure():
    phi = make_phi(seed=42)
    out = params_to_json(phi)
    assert out["m_tilde"] == 3
    assert len(out["arrays"]) == len(phi.params_list())
    assert sorted(out["groups"]) == ["phi1", "phi2", "shared"]


# ------------------------------------------------------------------ u field


def test_u_field_zero_at_init_and_batch_capable():
    phi = make_phi(seed=43)
    u_fn = build_u_field(phi)
    pts = RngStream(44).normal((6, phi.layout.n))
    out = u_fn(pts)
    assert out.shape == pts.shape
    assert np.array_equal(out, np.zeros_like(pts))
    single = u_fn(pts[0])
    assert single.shape == (phi.layout.n,)


def test_u_field_nonzero_after_head_kick():
    phi = make_phi(seed=45, heads="random")
    u_fn = build_u_field(phi)
    out = u_fn(RngStream(46).normal((3, phi.layout.n)))
    assert np.max(np.abs(out)) > 0
