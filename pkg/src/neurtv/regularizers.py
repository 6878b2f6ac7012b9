"""Derivative-based total-variation penalties over sampled coordinates.

Every penalty is assembled as a tape subgraph on top of a network trace, so
its value is differentiable with respect to the network parameters.  All
penalties return the MEAN of their per-sample terms, which keeps values
comparable across sampling densities.

The space-variant weights (alpha, a, theta) and the point-cloud weights
(alpha) enter the graph as non-trainable leaves: the reverse sweep never
differentiates through them, matching their role as per-iteration constants
updated from the previous iterate's derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampling import MeshgridRequired, SampleSet
from .tape import Ref

__all__ = [
    "RegularizerSpec",
    "SpaceVariantField",
    "MeshgridRequired",
    "REGULARIZER_KINDS",
    "derivative_tv",
    "difference_tv",
    "second_order_tv",
    "directional_tv",
    "spatial_spectral_tv",
    "space_variant_tv",
    "pointcloud_tv",
    "build_regularizer",
    "scale_rule",
    "direction_rule",
    "update_scale",
    "update_direction",
]

REGULARIZER_KINDS = (
    "neurtv",
    "diff-neurtv",
    "second-order",
    "directional",
    "sstv",
    "space-variant",
    "pointcloud",
)


@dataclass
class RegularizerSpec:
    """Configuration for one penalty term.

    ``dims`` restricts the penalized input dimensions (default: all for the
    derivative/difference forms, the leading spatial pair or triple for the
    structured forms).  ``epsilon`` is the floor inside the reciprocal
    scale rules; ``a_min`` optionally floors the anisotropy weight produced
    by the direction rule.
    """

    kind: str
    dims: tuple = None
    kappa: float = 1.0
    theta: float = 0.0
    epsilon: float = 1e-2
    a_min: float = 0.0
    scale_order: int = 2

    def __post_init__(self):
        if self.kind not in REGULARIZER_KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}")
        if self.dims is not None:
            self.dims = tuple(int(d) for d in self.dims)
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.scale_order not in (1, 2):
            raise ValueError("scale_order must be 1 or 2")


@dataclass
class SpaceVariantField:
    """Per-sample weights of the space-variant penalty (tape constants)."""

    alpha: np.ndarray
    a: np.ndarray
    theta: np.ndarray

    @classmethod
    def identity(cls, shape) -> "SpaceVariantField":
        """Neutral field: unit scale, isotropic weights, zero angle."""
        return cls(np.ones(shape), np.ones(shape), np.zeros(shape))

    def bind(self, tape, prefix="field") -> dict:
        refs = {
            "alpha": tape.leaf(f"{prefix}_alpha", self.alpha.shape),
            "a": tape.leaf(f"{prefix}_a", self.a.shape),
            "theta": tape.leaf(f"{prefix}_theta", self.theta.shape),
        }
        return refs

    def bindings(self, prefix="field") -> dict:
        return {
            f"{prefix}_alpha": self.alpha,
            f"{prefix}_a": self.a,
            f"{prefix}_theta": self.theta,
        }


def _all_dims(trace) -> tuple:
    return tuple(range(trace.in_dim))


def derivative_tv(trace, dims=None) -> Ref:
    """Mean over samples of the summed absolute first derivatives."""
    tape = trace.tape
    dims = _all_dims(trace) if dims is None else tuple(dims)
    total = None
    for d in dims:
        term = abs(trace.partial(d))
        total = term if total is None else tape.add(total, term)
    return tape.mean(total)


def difference_tv(trace, sample: SampleSet, dims=None) -> Ref:
    """Mean absolute difference of network values between adjacent grid nodes.

    Defined only when the sample set is a meshgrid; scattered points have no
    canonical adjacency and raise :class:`MeshgridRequired`.
    """
    tape = trace.tape
    if sample is None or not sample.is_meshgrid:
        raise MeshgridRequired(
            "difference-based penalty needs meshgrid samples; use the "
            "derivative form on scattered points"
        )
    shape = sample.grid_shape
    value = trace.value
    if value.shape != shape:
        value = tape.reshape(value, shape)
    dims = tuple(range(len(shape))) if dims is None else tuple(dims)
    total = None
    count = 0
    for d in dims:
        if shape[d] < 2:
            continue
        hi = tape.slice_axis(value, d, 1, shape[d])
        lo = tape.slice_axis(value, d, 0, shape[d] - 1)
        term = tape.sum(abs(tape.sub(hi, lo)))
        count += (shape[d] - 1) * int(np.prod(shape, dtype=np.int64)) // shape[d]
        total = term if total is None else tape.add(total, term)
    if total is None:
        raise MeshgridRequired("no penalized dimension has at least two grid nodes")
    return tape.scale(total, 1.0 / count)


def second_order_tv(trace, kappa: float = 1.0, pair=(0, 1)) -> Ref:
    """First derivatives plus kappa-weighted full second-derivative block."""
    tape = trace.tape
    d1, d2 = pair
    first = tape.add(abs(trace.partial(d1)), abs(trace.partial(d2)))
    second = tape.add(
        tape.add(abs(trace.second(d1, d1)), abs(trace.second(d2, d2))),
        tape.scale(abs(trace.second(d1, d2)), 2.0),
    )
    return tape.mean(tape.add(first, tape.scale(second, float(kappa))))


def directional_tv(trace, theta: float, pair=(0, 1)) -> Ref:
    """Mean absolute derivative along the fixed unit direction theta."""
    tape = trace.tape
    d1, d2 = pair
    along = tape.add(
        tape.scale(trace.partial(d1), float(np.cos(theta))),
        tape.scale(trace.partial(d2), float(np.sin(theta))),
    )
    return tape.mean(abs(along))


def spatial_spectral_tv(trace, spatial=(0, 1), spectral: int = 2) -> Ref:
    """Mean of the mixed spatial-spectral second derivatives."""
    tape = trace.tape
    total = tape.add(
        abs(trace.second(spatial[0], spectral)), abs(trace.second(spatial[1], spectral))
    )
    return tape.mean(total)


def space_variant_tv(trace, alpha: Ref, a: Ref, theta: Ref, pair=(0, 1)) -> Ref:
    """Locally rotated and weighted anisotropic first-order penalty.

    Per sample, with gradient components (g1, g2) along ``pair`` and field
    values (alpha, a, theta):

        alpha * ( a * |cos(theta) g1 + sin(theta) g2|
                  + (2 - a) * |sin(theta) g1 - cos(theta) g2| )
    """
    tape = trace.tape
    g1 = trace.partial(pair[0])
    g2 = trace.partial(pair[1])
    ct = tape.cos(theta)
    st = tape.sin(theta)
    along = abs(tape.add(tape.mul(ct, g1), tape.mul(st, g2)))
    across = abs(tape.sub(tape.mul(st, g1), tape.mul(ct, g2)))
    two_minus_a = tape.sub(tape.constant(2.0), a)
    weighted = tape.add(tape.mul(a, along), tape.mul(two_minus_a, across))
    return tape.mean(tape.mul(alpha, weighted))


def pointcloud_tv(trace, alpha: Ref, dims=(0, 1, 2)) -> Ref:
    """Reciprocal-curvature weighted first-order penalty for point clouds."""
    tape = trace.tape
    total = None
    for d in dims:
        term = abs(trace.partial(d))
        total = term if total is None else tape.add(total, term)
    return tape.mean(tape.mul(alpha, total))


def build_regularizer(spec: RegularizerSpec, trace, sample: SampleSet = None,
                      fields: dict = None) -> Ref:
    """Assemble the penalty named by ``spec.kind`` onto the trace's tape."""
    if spec.kind == "neurtv":
        return derivative_tv(trace, spec.dims)
    if spec.kind == "diff-neurtv":
        return difference_tv(trace, sample, spec.dims)
    if spec.kind == "second-order":
        pair = spec.dims if spec.dims is not None else (0, 1)
        return second_order_tv(trace, spec.kappa, pair)
    if spec.kind == "directional":
        pair = spec.dims if spec.dims is not None else (0, 1)
        return directional_tv(trace, spec.theta, pair)
    if spec.kind == "sstv":
        dims = spec.dims if spec.dims is not None else (0, 1, 2)
        return spatial_spectral_tv(trace, dims[:2], dims[2])
    if spec.kind == "space-variant":
        pair = spec.dims if spec.dims is not None else (0, 1)
        return space_variant_tv(
            trace, fields["alpha"], fields["a"], fields["theta"], pair
        )
    if spec.kind == "pointcloud":
        dims = spec.dims if spec.dims is not None else (0, 1, 2)
        return pointcloud_tv(trace, fields["alpha"], dims)
    raise ValueError(f"unknown regularizer kind {spec.kind!r}")


# -- field update rules (plain numpy, detached from the tape) ----------------

def scale_rule(derivatives, epsilon: float) -> np.ndarray:
    """Reciprocal scale weights 1 / (sum_d |derivative_d| + epsilon).

    ``derivatives`` is an iterable of same-shaped arrays: first derivatives
    for the first-order rule, plain second derivatives for the second-order
    rule.
    """
    total = None
    for d in derivatives:
        a = np.abs(np.asarray(d, dtype=np.float64))
        total = a if total is None else total + a
    return 1.0 / (total + float(epsilon))


def direction_rule(g1, g2, a_min: float = 0.0):
    """Per-sample angle and anisotropy weight from gradient components.

    theta is the two-argument arctangent of (g2, g1) wrapped to [0, 2 pi);
    the weight a is |sin(theta) g1 - cos(theta) g2| / |cos(theta) g1 +
    sin(theta) g2| (identically zero in exact arithmetic, floored at
    ``a_min``).  Zero-gradient samples fall back to theta = 0, a = 1.
    """
    g1 = np.asarray(g1, dtype=np.float64)
    g2 = np.asarray(g2, dtype=np.float64)
    zero = (g1 == 0.0) & (g2 == 0.0)
    theta = np.mod(np.arctan2(g2, g1), 2.0 * np.pi)
    num = np.abs(np.sin(theta) * g1 - np.cos(theta) * g2)
    den = np.abs(np.cos(theta) * g1 + np.sin(theta) * g2)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(den > 0.0, num / np.maximum(den, 1e-300), 1.0)
    a = np.maximum(a, float(a_min))
    theta = np.where(zero, 0.0, theta)
    a = np.where(zero, 1.0, a)
    return theta, a


def update_scale(net, sample: SampleSet, spec: RegularizerSpec) -> np.ndarray:
    """Evaluate the scale rule on a network over a sample set."""
    pair = spec.dims if spec.dims is not None else (0, 1)
    if spec.scale_order == 1:
        derivs = [net.partial(sample.points, d) for d in pair]
    else:
        derivs = [net.second_partial(sample.points, d, d) for d in pair]
    return scale_rule(derivs, spec.epsilon)


def update_direction(net, sample: SampleSet, spec: RegularizerSpec):
    """Evaluate the direction rule on a network over a sample set."""
    pair = spec.dims if spec.dims is not None else (0, 1)
    g1 = net.partial(sample.points, pair[0])
    g2 = net.partial(sample.points, pair[1])
    return direction_rule(g1, g2, spec.a_min)
