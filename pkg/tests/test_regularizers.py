import numpy as np
import pytest
from numpy.testing import assert_allclose

from neurtv.networks import NetworkSpec, init_network
from neurtv.regularizers import (
    MeshgridRequired,
    RegularizerSpec,
    SpaceVariantField,
    build_regularizer,
    derivative_tv,
    difference_tv,
    direction_rule,
    directional_tv,
    pointcloud_tv,
    scale_rule,
    second_order_tv,
    space_variant_tv,
    spatial_spectral_tv,
    update_direction,
    update_scale,
)
from neurtv.sampling import SampleSet, make_meshgrid
from neurtv.tape import Tape

from oracles import rel_err


def _net(arch, n_dims, seed=11):
    if arch == "tf-net":
        spec = NetworkSpec("tf-net", n_dims, width=12, depth=3, ranks=(4,) * n_dims, seed=seed)
    else:
        spec = NetworkSpec(arch, n_dims, width=12, depth=3, seed=seed)
    return init_network(spec)


def _rows_setup(net, sample):
    tape = Tape()
    trace = net.bind(tape).rows(sample.points)
    return tape, trace


def _value(tape, node, bindings):
    return float(tape.evaluate(bindings).value(node))


# -- mirror oracles: same formulas, straight numpy over per-point calls ------

def _grads(net, pts, dims):
    return [net.partial(pts, d) for d in dims]


def test_derivative_tv_matches_per_point_sum():
    for arch in ("sine-mlp", "tf-net"):
        net = _net(arch, 2)
        sample = make_meshgrid((7, 5))
        tape, trace = _rows_setup(net, sample)
        node = derivative_tv(trace)
        got = _value(tape, node, net.bindings())
        g = _grads(net, sample.points, (0, 1))
        want = float(np.mean(np.abs(g[0]) + np.abs(g[1])))
        assert rel_err(got, want) < 1e-12, arch


def test_derivative_tv_restricted_dims():
    net = _net("sine-mlp", 3)
    pts = np.random.default_rng(0).uniform(-1, 1, size=(30, 3))
    sample = SampleSet.from_points(pts)
    tape, trace = _rows_setup(net, sample)
    node = derivative_tv(trace, dims=(0, 2))
    got = _value(tape, node, net.bindings())
    want = float(np.mean(np.abs(net.partial(pts, 0)) + np.abs(net.partial(pts, 2))))
    assert rel_err(got, want) < 1e-12


def test_second_order_tv_matches_mirror():
    for arch in ("sine-mlp", "tf-net"):
        net = _net(arch, 2)
        sample = make_meshgrid((6, 6))
        tape, trace = _rows_setup(net, sample)
        node = second_order_tv(trace, kappa=0.7)
        got = _value(tape, node, net.bindings())
        pts = sample.points
        first = np.abs(net.partial(pts, 0)) + np.abs(net.partial(pts, 1))
        second = (
            np.abs(net.second_partial(pts, 0, 0))
            + np.abs(net.second_partial(pts, 1, 1))
            + 2.0 * np.abs(net.second_partial(pts, 0, 1))
        )
        want = float(np.mean(first + 0.7 * second))
        assert rel_err(got, want) < 1e-12, arch


def test_directional_tv_matches_mirror():
    net = _net("sine-mlp", 2)
    sample = make_meshgrid((8, 4))
    theta = 0.6
    tape, trace = _rows_setup(net, sample)
    node = directional_tv(trace, theta)
    got = _value(tape, node, net.bindings())
    g1, g2 = _grads(net, sample.points, (0, 1))
    want = float(np.mean(np.abs(np.cos(theta) * g1 + np.sin(theta) * g2)))
    assert rel_err(got, want) < 1e-12


def test_spatial_spectral_tv_matches_mirror():
    for arch in ("sine-mlp", "tf-net"):
        net = _net(arch, 3)
        pts = np.random.default_rng(1).uniform(-1, 1, size=(40, 3))
        sample = SampleSet.from_points(pts)
        tape, trace = _rows_setup(net, sample)
        node = spatial_spectral_tv(trace)
        got = _value(tape, node, net.bindings())
        want = float(
            np.mean(
                np.abs(net.second_partial(pts, 0, 2))
                + np.abs(net.second_partial(pts, 1, 2))
            )
        )
        assert rel_err(got, want) < 1e-12, arch


def test_space_variant_tv_matches_mirror():
    net = _net("tf-net", 2)
    sample = make_meshgrid((6, 5))
    rng = np.random.default_rng(5)
    n = sample.n_points
    field = SpaceVariantField(
        alpha=rng.uniform(0.5, 2.0, n),
        a=rng.uniform(0.0, 2.0, n),
        theta=rng.uniform(0.0, 2 * np.pi, n),
    )
    tape, trace = _rows_setup(net, sample)
    refs = field.bind(tape)
    node = space_variant_tv(trace, refs["alpha"], refs["a"], refs["theta"])
    got = _value(tape, node, {**net.bindings(), **field.bindings()})
    g1, g2 = _grads(net, sample.points, (0, 1))
    ct, st = np.cos(field.theta), np.sin(field.theta)
    want = float(
        np.mean(
            field.alpha
            * (
                field.a * np.abs(ct * g1 + st * g2)
                + (2.0 - field.a) * np.abs(st * g1 - ct * g2)
            )
        )
    )
    assert rel_err(got, want) < 1e-12


def test_space_variant_hand_values():
    # With unit gradient along x: a=0.5, theta=0 weights the pure-x term by
    # 0.5; theta=pi/4 with a=1 yields sqrt(2) * |g| for g=(1,0).
    g1, g2 = np.ones(4), np.zeros(4)

    def formula(alpha, a, theta):
        ct, st = np.cos(theta), np.sin(theta)
        return alpha * (
            a * np.abs(ct * g1 + st * g2) + (2 - a) * np.abs(st * g1 - ct * g2)
        )

    assert_allclose(formula(1.0, 0.5, 0.0), 0.5 * np.ones(4))
    assert_allclose(formula(1.0, 1.0, np.pi / 4), np.sqrt(2.0) * np.ones(4))


def test_pointcloud_tv_matches_mirror():
    net = _net("tf-net", 4)
    pts = np.random.default_rng(2).uniform(-1, 1, size=(50, 4))
    sample = SampleSet.from_points(pts)
    alpha = np.random.default_rng(3).uniform(0.1, 1.0, 50)
    tape, trace = _rows_setup(net, sample)
    aref = tape.leaf("alpha", alpha.shape)
    node = pointcloud_tv(trace, aref)
    got = _value(tape, node, {**net.bindings(), "alpha": alpha})
    g = _grads(net, pts, (0, 1, 2))
    want = float(np.mean(alpha * (np.abs(g[0]) + np.abs(g[1]) + np.abs(g[2]))))
    assert rel_err(got, want) < 1e-12


def test_constant_network_has_zero_penalties():
    net = _net("sine-mlp", 2)
    for name in net.params:
        net.params[name] = np.zeros_like(net.params[name])
    sample = make_meshgrid((5, 5))
    tape, trace = _rows_setup(net, sample)
    nodes = {
        "neurtv": derivative_tv(trace),
        "diff": difference_tv(trace, sample),
        "second": second_order_tv(trace, 1.0),
        "directional": directional_tv(trace, 0.3),
    }
    ev = tape.evaluate(net.bindings())
    for name, node in nodes.items():
        assert float(ev.value(node)) == 0.0, name


def test_sstv_vanishes_when_spectral_dim_unused():
    net = _net("sine-mlp", 3)
    net.params["w1"][2, :] = 0.0  # output no longer depends on x3
    pts = np.random.default_rng(4).uniform(-1, 1, size=(30, 3))
    tape, trace = _rows_setup(net, SampleSet.from_points(pts))
    node = spatial_spectral_tv(trace)
    assert _value(tape, node, net.bindings()) == 0.0


def test_difference_tv_telescopes_on_monotone_ramp():
    # A gentle 1-D sine layer is monotone on [-1, 1]; adjacent differences
    # then telescope so that (mean * count) equals f(last) - f(first).
    spec = NetworkSpec("sine-mlp", 1, width=1, depth=2, omega0=1.0)
    from neurtv.networks import CoordinateNetwork

    net = CoordinateNetwork(
        spec, {"w1": np.array([[0.8]]), "w2": np.array([[1.5]])}
    )
    sample = make_meshgrid((16,))
    tape, trace = _rows_setup(net, sample)
    node = difference_tv(trace, sample)
    got = _value(tape, node, net.bindings())
    f = net.forward(sample.points)
    assert rel_err(got * (16 - 1), f[-1] - f[0]) < 1e-12


def test_difference_tv_rejects_scattered_points():
    net = _net("sine-mlp", 2)
    pts = np.random.default_rng(0).uniform(-1, 1, size=(20, 2))
    sample = SampleSet.from_points(pts)
    tape, trace = _rows_setup(net, sample)
    with pytest.raises(MeshgridRequired, match="meshgrid"):
        difference_tv(trace, sample)


def test_difference_tv_on_tf_grid_trace():
    net = _net("tf-net", 2)
    sample = make_meshgrid((6, 4), factor=2)
    tape = Tape()
    trace = net.bind(tape).grid(sample.axes)
    node = difference_tv(trace, sample)
    got = _value(tape, node, net.bindings())
    f = net.forward(sample.points).reshape(sample.grid_shape)
    want = (
        np.abs(np.diff(f, axis=0)).sum() + np.abs(np.diff(f, axis=1)).sum()
    ) / (np.diff(f, axis=0).size + np.diff(f, axis=1).size)
    assert rel_err(got, want) < 1e-12


class TestReductionIdentities:
    def test_second_order_with_zero_kappa_is_derivative_tv(self):
        net = _net("sine-mlp", 2)
        sample = make_meshgrid((6, 6))
        tape, trace = _rows_setup(net, sample)
        a = second_order_tv(trace, kappa=0.0)
        b = derivative_tv(trace)
        ev = tape.evaluate(net.bindings())
        assert abs(float(ev.value(a)) - float(ev.value(b))) < 1e-12

    def test_neutral_field_is_derivative_tv(self):
        net = _net("tf-net", 2)
        sample = make_meshgrid((5, 7))
        field = SpaceVariantField.identity(sample.n_points)
        tape, trace = _rows_setup(net, sample)
        refs = field.bind(tape)
        a = space_variant_tv(trace, refs["alpha"], refs["a"], refs["theta"])
        b = derivative_tv(trace)
        ev = tape.evaluate({**net.bindings(), **field.bindings()})
        assert abs(float(ev.value(a)) - float(ev.value(b))) < 1e-12

    def test_zero_angle_directional_is_first_dim_derivative(self):
        net = _net("sine-mlp", 2)
        sample = make_meshgrid((6, 6))
        tape, trace = _rows_setup(net, sample)
        a = directional_tv(trace, 0.0)
        b = trace.tape.mean(abs(trace.partial(0)))
        ev = tape.evaluate(net.bindings())
        assert abs(float(ev.value(a)) - float(ev.value(b))) < 1e-12


class TestFieldRules:
    def test_direction_rule_hand_cases(self):
        theta, a = direction_rule(np.array([1.0, 1.0, 0.0]), np.array([1.0, 0.0, 0.0]))
        assert_allclose(theta, [np.pi / 4, 0.0, 0.0], atol=1e-15)
        assert_allclose(a, [0.0, 0.0, 1.0], atol=1e-12)

    def test_direction_rule_angle_wrapped(self):
        theta, _ = direction_rule(np.array([-1.0]), np.array([-1.0]))
        assert 0.0 <= theta[0] < 2 * np.pi
        assert_allclose(theta[0], np.pi + np.pi / 4)

    def test_direction_rule_floor(self):
        _, a = direction_rule(np.array([1.0]), np.array([2.0]), a_min=0.25)
        assert a[0] == 0.25

    def test_scale_rule_reciprocal(self):
        g = [np.array([1.0, 0.0]), np.array([3.0, 0.0])]
        assert_allclose(scale_rule(g, 0.5), [1.0 / 4.5, 2.0])

    def test_update_scale_second_order_matches_direct(self):
        net = _net("sine-mlp", 2)
        sample = make_meshgrid((5, 5))
        spec = RegularizerSpec("space-variant", epsilon=0.2)
        alpha = update_scale(net, sample, spec)
        direct = 1.0 / (
            np.abs(net.second_partial(sample.points, 0, 0))
            + np.abs(net.second_partial(sample.points, 1, 1))
            + 0.2
        )
        assert_allclose(alpha, direct, rtol=1e-13)

    def test_update_scale_first_order(self):
        net = _net("sine-mlp", 2)
        sample = make_meshgrid((5, 5))
        spec = RegularizerSpec("space-variant", epsilon=0.1, scale_order=1)
        alpha = update_scale(net, sample, spec)
        direct = 1.0 / (
            np.abs(net.partial(sample.points, 0))
            + np.abs(net.partial(sample.points, 1))
            + 0.1
        )
        assert_allclose(alpha, direct, rtol=1e-13)

    def test_update_direction_consistent_with_rule(self):
        net = _net("sine-mlp", 2)
        sample = make_meshgrid((4, 4))
        spec = RegularizerSpec("space-variant")
        theta, a = update_direction(net, sample, spec)
        g1 = net.partial(sample.points, 0)
        g2 = net.partial(sample.points, 1)
        t2, a2 = direction_rule(g1, g2)
        assert_allclose(theta, t2)
        assert_allclose(a, a2)

    def test_direction_rule_anisotropy_is_zero_from_own_gradient(self):
        # The along-direction residual vanishes when theta comes from the
        # same gradient, so a == 0 wherever the gradient is nonzero.
        rng = np.random.default_rng(9)
        g1, g2 = rng.normal(size=50), rng.normal(size=50)
        _, a = direction_rule(g1, g2)
        assert np.max(a) < 1e-12


def test_fields_do_not_receive_gradients():
    net = _net("tf-net", 2)
    sample = make_meshgrid((4, 4))
    field = SpaceVariantField.identity(sample.n_points)
    tape, trace = _rows_setup(net, sample)
    refs = field.bind(tape)
    node = space_variant_tv(trace, refs["alpha"], refs["a"], refs["theta"])
    grads = tape.evaluate({**net.bindings(), **field.bindings()}).gradients(node)
    assert set(grads) == set(net.params)


def test_build_regularizer_dispatch():
    net = _net("sine-mlp", 2)
    sample = make_meshgrid((5, 5))
    tape, trace = _rows_setup(net, sample)
    spec = RegularizerSpec("neurtv")
    node = build_regularizer(spec, trace, sample)
    direct = derivative_tv(trace)
    ev = tape.evaluate(net.bindings())
    assert float(ev.value(node)) == float(ev.value(direct))
    with pytest.raises(ValueError, match="unknown regularizer"):
        RegularizerSpec("ridge")


def test_regularized_loss_parameter_gradients_match_fd():
    net = _net("sine-mlp", 2, seed=21)
    sample = make_meshgrid((5, 5))
    tape, trace = _rows_setup(net, sample)
    target = tape.constant(np.random.default_rng(0).uniform(0, 1, sample.n_points))
    fit = tape.mean(tape.mul(trace.value - target, trace.value - target))
    loss = tape.add(fit, tape.scale(second_order_tv(trace, kappa=0.5), 0.05))
    grads = tape.evaluate(net.bindings()).gradients(loss)

    def loss_value():
        t2 = Tape()
        tr2 = net.bind(t2).rows(sample.points)
        tg2 = t2.constant(np.random.default_rng(0).uniform(0, 1, sample.n_points))
        l2 = t2.add(
            t2.mean(t2.mul(tr2.value - tg2, tr2.value - tg2)),
            t2.scale(second_order_tv(tr2, kappa=0.5), 0.05),
        )
        return float(t2.evaluate(net.bindings()).value(l2))

    rng = np.random.default_rng(7)
    checked = 0
    for name in ("w1", "w2", "w3"):
        flat = net.params[name].reshape(-1)
        for idx in rng.choice(flat.size, size=4, replace=False):
            h = 1e-6
            keep = flat[idx]
            flat[idx] = keep + h
            up = loss_value()
            flat[idx] = keep - h
            down = loss_value()
            flat[idx] = keep
            fd = (up - down) / (2 * h)
            ad = grads[name].reshape(-1)[idx]
            if max(abs(fd), abs(ad)) < 1e-9:
                continue
            assert rel_err(ad, fd, floor=1e-7) < 1e-4, name
            checked += 1
    assert checked >= 6
