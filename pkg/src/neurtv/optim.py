"""First-order optimization utilities for network fitting.

The trainer in :mod:`neurtv.tasks` drives an :class:`Adam` instance with
gradient dictionaries produced by the tape, checks a :class:`PlateauStopper`
once per iteration, and applies :func:`soft_threshold` when a sparse
component is split off from the observations.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["AdamConfig", "Adam", "PlateauStopper", "soft_threshold"]


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("decay rates must lie in [0, 1)")
        if self.learning_rate <= 0.0 or self.epsilon <= 0.0:
            raise ValueError("learning rate and epsilon must be positive")


class Adam:
    """Adam with bias correction, updating a parameter dict in place.

    The denominator is ``sqrt(v_hat) + epsilon``: epsilon sits outside the
    square root, so a first step on gradient g moves by almost exactly
    ``learning_rate * sign(g)``.
    """

    def __init__(self, params, config=None):
        self.params = params
        self.config = config or AdamConfig()
        self.t = 0
        self._m = {k: np.zeros_like(v) for k, v in params.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        if set(grads) != set(self.params):
            missing = set(self.params) ^ set(grads)
            raise ValueError(f"gradient keys do not match parameters: {sorted(missing)}")
        c = self.config
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self._m[name]
            v = self._v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.epsilon)


class PlateauStopper:
    """Stop when the loss improved by less than ``tol`` over ``window`` steps."""

    def __init__(self, window=200, tol=1e-7):
        if window < 1:
            raise ValueError("window must be at least 1")
        self.window = window
        self.tol = tol
        self.history = []

    def update(self, loss):
        """Record one loss value; return True when training should stop."""
        self.history.append(float(loss))
        if len(self.history) <= self.window:
            return False
        return self.history[-1 - self.window] - self.history[-1] < self.tol


def soft_threshold(values, tau):
    """Shrink toward zero: sign(v) * max(|v| - tau, 0).

    This is the exact minimizer of ``0.5 * (s - v)**2 + tau * |s|``
    elementwise, which is how the sparse component update uses it.
    """
    if tau < 0.0:
        raise ValueError("threshold must be nonnegative")
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.maximum(np.abs(values) - tau, 0.0)
