import numpy as np
import pytest
from numpy.testing import assert_allclose

from neurtv.optim import Adam, AdamConfig, PlateauStopper, soft_threshold


def _reference_adam(params, grad_seq, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    # Straight transcription of the update, kept independent of the module.
    params = {k: v.copy() for k, v in params.items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(x) for k, x in params.items()}
    for t, grads in enumerate(grad_seq, start=1):
        for name in params:
            g = grads[name]
            m[name] = b1 * m[name] + (1 - b1) * g
            v[name] = b2 * v[name] + (1 - b2) * g * g
            mh = m[name] / (1 - b1**t)
            vh = v[name] / (1 - b2**t)
            params[name] = params[name] - lr * mh / (np.sqrt(vh) + eps)
    return params


def test_trajectory_matches_reference():
    rng = np.random.default_rng(10)
    params = {"w": rng.normal(size=(3, 2)), "b": rng.normal(size=(2,))}
    grad_seq = [
        {"w": rng.normal(size=(3, 2)), "b": rng.normal(size=(2,))}
        for _ in range(25)
    ]
    want = _reference_adam(params, grad_seq, lr=0.05)
    opt = Adam({k: v.copy() for k, v in params.items()}, AdamConfig(learning_rate=0.05))
    for grads in grad_seq:
        opt.step(grads)
    for name in params:
        assert_allclose(opt.params[name], want[name], rtol=1e-13, atol=1e-15)


def test_first_step_is_signed_learning_rate():
    # After one step m_hat = g and v_hat = g**2, so the move is
    # -lr * g / (|g| + eps): for g = 5 and lr = 0.01 that is -0.01 * 5 / (5 + 1e-8).
    params = {"w": np.array([2.0])}
    opt = Adam(params, AdamConfig(learning_rate=0.01))
    opt.step({"w": np.array([5.0])})
    assert_allclose(params["w"][0], 2.0 - 0.01 * 5.0 / (5.0 + 1e-8), rtol=1e-15)


def test_zero_gradient_leaves_parameters_unchanged():
    params = {"w": np.array([1.0, -2.0])}
    opt = Adam(params)
    for _ in range(5):
        opt.step({"w": np.zeros(2)})
    assert_allclose(params["w"], [1.0, -2.0])


def test_update_magnitude_nearly_invariant_to_gradient_scale():
    out = {}
    for scale in (1.0, 100.0):
        params = {"w": np.array([0.0])}
        opt = Adam(params)
        for _ in range(10):
            opt.step({"w": np.array([scale * 3.0])})
        out[scale] = params["w"][0]
    assert_allclose(out[1.0], out[100.0], rtol=1e-5)


def test_step_rejects_mismatched_keys():
    opt = Adam({"w": np.zeros(2)})
    with pytest.raises(ValueError, match="gradient keys"):
        opt.step({"q": np.zeros(2)})


def test_config_validation():
    with pytest.raises(ValueError):
        AdamConfig(beta1=1.0)
    with pytest.raises(ValueError):
        AdamConfig(learning_rate=0.0)


class TestPlateauStopper:
    def test_stops_on_flat_loss(self):
        stop = PlateauStopper(window=10, tol=1e-7)
        fired = [stop.update(1.0) for _ in range(12)]
        assert fired == [False] * 10 + [True, True]

    def test_keeps_going_while_improving(self):
        stop = PlateauStopper(window=10, tol=1e-7)
        assert not any(stop.update(1.0 - 1e-3 * t) for t in range(50))

    def test_improvement_just_below_tol_stops(self):
        stop = PlateauStopper(window=5, tol=1e-7)
        losses = [1.0 - 1e-8 * t for t in range(7)]
        assert [stop.update(x) for x in losses][-1] is True


class TestSoftThreshold:
    def test_hand_values(self):
        assert_allclose(
            soft_threshold(np.array([1.0, -0.5, 0.2, 0.0]), 0.3),
            [0.7, -0.2, 0.0, 0.0],
        )

    def test_zero_inside_band(self):
        x = np.linspace(-0.3, 0.3, 101)
        assert np.all(soft_threshold(x, 0.3) == 0.0)

    def test_minimizes_scalar_objective(self):
        # Dense scan over candidates: the shrinkage value must attain the
        # minimum of 0.5*(s - r)**2 + tau*|s| within the scan resolution.
        candidates = np.linspace(-3.0, 3.0, 60001)
        for r in (-2.2, -0.4, 0.0, 0.15, 1.7):
            for tau in (0.0, 0.25, 0.8):
                obj = 0.5 * (candidates - r) ** 2 + tau * np.abs(candidates)
                best = candidates[np.argmin(obj)]
                assert abs(float(soft_threshold(r, tau)) - best) < 1.1e-4, (r, tau)

    def test_rejects_negative_threshold(self):
        with pytest.raises(ValueError):
            soft_threshold(np.ones(3), -0.1)
