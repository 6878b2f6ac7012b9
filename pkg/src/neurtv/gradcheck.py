"""Finite-difference verification of gradients and input derivatives.

Two suites: one differentiates a full fit-plus-penalty loss with respect to
network parameters, one differentiates network outputs with respect to input
coordinates.  Both compare against central differences and report per-case
records that the command line prints and the test suite asserts on.
"""

import time
from dataclasses import dataclass

import numpy as np

from .networks import NetworkSpec, init_network
from .regularizers import RegularizerSpec, SpaceVariantField, build_regularizer
from .sampling import make_meshgrid
from .tape import Tape

__all__ = [
    "CheckRecord",
    "GRADIENT_ARCHITECTURES",
    "REGULARIZER_KINDS",
    "run_gradient_suite",
    "run_derivative_suite",
]

GRADIENT_ARCHITECTURES = ("sine-mlp", "tf-net")
REGULARIZER_KINDS = (
    "neurtv",
    "diff-neurtv",
    "second-order",
    "directional",
    "sstv",
    "space-variant",
    "pointcloud",
)

PARAM_TOLERANCE = 1e-4
FIRST_ORDER_TOLERANCE = 1e-5
SECOND_ORDER_TOLERANCE = 1e-3


@dataclass
class CheckRecord:
    """Outcome of one finite-difference comparison."""

    label: str
    max_rel: float
    tolerance: float
    n_checked: int
    seconds: float

    @property
    def passed(self):
        return self.max_rel < self.tolerance

    def line(self):
        status = "pass" if self.passed else "FAIL"
        return (
            f"{status}  {self.label:32s} max rel {self.max_rel:.3e} "
            f"(tol {self.tolerance:.0e}, {self.n_checked} checks, "
            f"{self.seconds:.2f}s)"
        )


def _relative_gap(analytic, numeric):
    scale = max(abs(analytic), abs(numeric))
    if scale < 1e-10:
        return 0.0
    return abs(analytic - numeric) / scale


def _spec_for(architecture, in_dim, seed):
    kwargs = dict(in_dim=in_dim, width=8, depth=3, bias=True, seed=seed)
    if architecture == "tf-net":
        return NetworkSpec("tf-net", ranks=(4,) * in_dim, **kwargs)
    return NetworkSpec(architecture, **kwargs)


def _assemble_loss(net, reg_spec, sample, lam):
    tape = Tape()
    trace = net.bind(tape).rows(sample.points)
    target = tape.constant(
        np.random.default_rng(0).uniform(0.0, 1.0, sample.n_points)
    )
    resid = trace.value - target
    fid = tape.mean(tape.mul(resid, resid))
    fields = None
    bindings = dict(net.bindings())
    if reg_spec.kind == "space-variant":
        rng = np.random.default_rng(1)
        field = SpaceVariantField(
            alpha=rng.uniform(0.5, 1.5, sample.n_points),
            a=rng.uniform(0.2, 1.0, sample.n_points),
            theta=rng.uniform(0.0, 2.0 * np.pi, sample.n_points),
        )
        fields = field.bind(tape)
        bindings.update(field.bindings())
    elif reg_spec.kind == "pointcloud":
        rng = np.random.default_rng(1)
        fields = {"alpha": tape.leaf("field_alpha", (sample.n_points,))}
        bindings["field_alpha"] = rng.uniform(0.5, 1.5, sample.n_points)
    penalty = build_regularizer(reg_spec, trace, sample=sample, fields=fields)
    loss = tape.add(fid, tape.scale(penalty, lam))
    return tape, loss, bindings


def _loss_value(net, reg_spec, sample, lam):
    tape, loss, bindings = _assemble_loss(net, reg_spec, sample, lam)
    return tape.evaluate(bindings).value(loss)


def _reg_spec_for(kind):
    if kind == "second-order":
        return RegularizerSpec(kind, kappa=0.7)
    if kind == "directional":
        return RegularizerSpec(kind, theta=0.9)
    if kind == "sstv":
        return RegularizerSpec(kind, dims=(0, 1, 2))
    if kind == "pointcloud":
        return RegularizerSpec(kind, dims=(0, 1))
    return RegularizerSpec(kind)


def check_parameter_gradients(architecture, kind, n_params=25, seed=0, h=1e-6):
    """Compare tape gradients of fidelity + lambda*penalty against central
    finite differences at ``n_params`` randomly chosen parameter entries."""
    start = time.perf_counter()
    in_dim = 3 if kind == "sstv" else 2
    sample = make_meshgrid((5, 5, 4)) if in_dim == 3 else make_meshgrid((6, 6))
    net = init_network(_spec_for(architecture, in_dim, seed))
    rng = np.random.default_rng(seed + 17)
    for key in net.params:
        net.params[key] += rng.normal(0.0, 0.02, net.params[key].shape)
    reg_spec = _reg_spec_for(kind)
    lam = 0.05

    tape, loss, bindings = _assemble_loss(net, reg_spec, sample, lam)
    grads = tape.evaluate(bindings).gradients(loss)

    keys = sorted(net.params)
    sizes = np.array([net.params[k].size for k in keys])
    offsets = np.cumsum(sizes)
    total = int(offsets[-1])
    picks = rng.choice(total, size=min(n_params, total), replace=False)
    worst = 0.0
    for pick in picks:
        key_idx = int(np.searchsorted(offsets, pick, side="right"))
        key = keys[key_idx]
        inner = int(pick - (offsets[key_idx] - sizes[key_idx]))
        flat = net.params[key].reshape(-1)
        saved = flat[inner]
        flat[inner] = saved + h
        up = _loss_value(net, reg_spec, sample, lam)
        flat[inner] = saved - h
        down = _loss_value(net, reg_spec, sample, lam)
        flat[inner] = saved
        numeric = (up - down) / (2.0 * h)
        analytic = grads[key].reshape(-1)[inner]
        worst = max(worst, _relative_gap(analytic, numeric))
    return CheckRecord(
        label=f"{architecture} + {kind}",
        max_rel=worst,
        tolerance=PARAM_TOLERANCE,
        n_checked=len(picks),
        seconds=time.perf_counter() - start,
    )


def run_gradient_suite(seed=0):
    """Parameter-gradient records for every architecture x regularizer pair."""
    return [
        check_parameter_gradients(architecture, kind, seed=seed)
        for architecture in GRADIENT_ARCHITECTURES
        for kind in REGULARIZER_KINDS
    ]


def check_input_derivatives(architecture, order, n_points=100, seed=0):
    """Compare partial or plain second input derivatives against central
    finite differences at ``n_points`` random coordinates."""
    start = time.perf_counter()
    in_dim = 2
    spec = _spec_for(architecture, in_dim, seed)
    net = init_network(spec)
    rng = np.random.default_rng(seed + 23)
    for key in net.params:
        net.params[key] += rng.normal(0.0, 0.02, net.params[key].shape)
    points = rng.uniform(-0.9, 0.9, size=(n_points, in_dim))
    dim = 0
    h = 1e-5 if order == 1 else 1e-4
    worst = 0.0
    if order == 1:
        analytic = net.partial(points, dim)
        up = points.copy()
        up[:, dim] += h
        down = points.copy()
        down[:, dim] -= h
        numeric = (net.forward(up) - net.forward(down)) / (2.0 * h)
        tolerance = FIRST_ORDER_TOLERANCE
    else:
        analytic = net.second_partial(points, dim, dim)
        up = points.copy()
        up[:, dim] += h
        down = points.copy()
        down[:, dim] -= h
        numeric = (
            net.forward(up) - 2.0 * net.forward(points) + net.forward(down)
        ) / (h * h)
        tolerance = SECOND_ORDER_TOLERANCE
    for got, want in zip(analytic, numeric):
        worst = max(worst, _relative_gap(got, want))
    return CheckRecord(
        label=f"{architecture} order-{order}",
        max_rel=worst,
        tolerance=tolerance,
        n_checked=n_points,
        seconds=time.perf_counter() - start,
    )


def run_derivative_suite(seed=0):
    """Input-derivative records: first order for every architecture, second
    order where the architecture supports it."""
    records = [
        check_input_derivatives(architecture, 1, seed=seed)
        for architecture in ("sine-mlp", "tf-net", "pe-mlp")
    ]
    records += [
        check_input_derivatives(architecture, 2, seed=seed)
        for architecture in ("sine-mlp", "tf-net")
    ]
    return records
