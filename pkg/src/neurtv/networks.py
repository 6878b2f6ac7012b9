"""Coordinate networks f: R^N -> R built from tape primitives.

Three architectures:

* ``sine-mlp``   -- weight-only MLP with sine activations, f = W_K sin(... sin(W_1 x)).
* ``pe-mlp``     -- fixed sinusoidal positional encoding followed by a
  weight-only ReLU MLP.  First input derivatives use the ReLU subgradient;
  second derivatives are rejected.
* ``tf-net``     -- a core tensor contracted with per-dimension factor
  networks (each a scalar-input sine MLP producing a rank-sized vector).
  Differentiating along dimension d differentiates only factor d.

Input derivatives are assembled as explicit tape subgraphs (layerwise
chain-rule propagation), so they remain differentiable with respect to the
network parameters through the ordinary reverse sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tape import Ref, Tape

__all__ = [
    "NetworkSpec",
    "CoordinateNetwork",
    "init_network",
    "forward",
    "partial_x",
    "second_partial_x",
    "save_checkpoint",
    "load_checkpoint",
    "UnsupportedDerivative",
]

ARCHITECTURES = ("sine-mlp", "pe-mlp", "tf-net")


class UnsupportedDerivative(Exception):
    """Requested derivative is not defined for the architecture."""


@dataclass
class NetworkSpec:
    """Architecture and size of a coordinate network.

    ``depth`` counts weight layers, so a depth-3 sine MLP is
    W3 sin(W2 sin(W1 x)).  ``ranks`` (tf-net only) gives the core extent per
    input dimension; factor networks map a scalar coordinate to a vector of
    that rank.  ``n_frequencies`` and ``frequency_scale`` configure the
    positional encoding; frequencies stay fixed after initialization.
    """

    architecture: str
    in_dim: int
    width: int = 64
    depth: int = 3
    omega0: float = 30.0
    ranks: tuple = None
    n_frequencies: int = 64
    frequency_scale: float = 1.0
    bias: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.in_dim < 1:
            raise ValueError("in_dim must be at least 1")
        if self.depth < 2:
            raise ValueError("depth must be at least 2 (input and read-out layers)")
        if self.architecture == "tf-net":
            if self.ranks is None:
                raise ValueError("tf-net requires explicit ranks (one per dimension)")
            self.ranks = tuple(int(r) for r in self.ranks)
            if len(self.ranks) != self.in_dim:
                raise ValueError("tf-net needs one rank per input dimension")
            if any(r < 1 for r in self.ranks):
                raise ValueError("ranks must be positive")
        if self.architecture == "pe-mlp" and self.n_frequencies < 1:
            raise ValueError("n_frequencies must be positive")


def _sine_stack_init(rng, fan_ins, fan_outs, omega0, first_is_input):
    """Initialization for a stack of weight-only sine layers.

    The frequency multiplier omega0 appears only in the first layer's sine
    argument; deeper layers store their effective weights directly, so their
    bound is the plain uniform(+-sqrt(6/fan_in)) of sine-network practice.
    """
    del omega0  # folded into the stored hidden weights
    mats = []
    for k, (fi, fo) in enumerate(zip(fan_ins, fan_outs)):
        bound = 1.0 / fi if k == 0 and first_is_input else np.sqrt(6.0 / fi)
        mats.append(rng.uniform(-bound, bound, size=(fi, fo)))
    return mats


def _sine_stack_value(x, mats, omega0):
    """Plain numpy forward of a weight-only sine stack (used at init time)."""
    h = np.sin(omega0 * (x @ mats[0]))
    for mat in mats[1:-1]:
        h = np.sin(h @ mat)
    return h @ mats[-1]


def init_network(spec: NetworkSpec) -> "CoordinateNetwork":
    """Draw seeded initial parameters for the given specification."""
    rng = np.random.default_rng(spec.seed)
    params: dict[str, np.ndarray] = {}
    fixed: dict[str, np.ndarray] = {}
    K, w, N = spec.depth, spec.width, spec.in_dim

    def add_biases(prefix, fan_outs):
        # Biases are off by default; when enabled they start at zero and do
        # not enter the input-derivative graphs.
        if spec.bias:
            for k, fo in enumerate(fan_outs, start=1):
                params[f"{prefix}b{k}"] = np.zeros((1, fo))

    if spec.architecture == "sine-mlp":
        fan_ins = [N] + [w] * (K - 1)
        fan_outs = [w] * (K - 1) + [1]
        for k, mat in enumerate(
            _sine_stack_init(rng, fan_ins, fan_outs, spec.omega0, True), start=1
        ):
            params[f"w{k}"] = mat
        add_biases("", fan_outs)
    elif spec.architecture == "tf-net":
        probe = np.linspace(-1.0, 1.0, 65).reshape(-1, 1)
        factor_scale = 1.0
        for d in range(N):
            fan_ins = [1] + [w] * (K - 1)
            fan_outs = [w] * (K - 1) + [spec.ranks[d]]
            mats = _sine_stack_init(rng, fan_ins, fan_outs, spec.omega0, True)
            for k, mat in enumerate(mats, start=1):
                params[f"f{d}_w{k}"] = mat
            add_biases(f"f{d}_", fan_outs)
            factor_scale *= max(np.std(_sine_stack_value(probe, mats, spec.omega0)), 1e-12)
        # The core compensates for the measured factor output scale so the
        # initial field has modest (~0.25) amplitude.
        scale = 0.25 / (np.sqrt(float(np.prod(spec.ranks))) * factor_scale)
        params["core"] = rng.normal(0.0, scale, size=spec.ranks)
    else:  # pe-mlp
        m = spec.n_frequencies
        fixed["freqs"] = rng.normal(0.0, spec.frequency_scale, size=(N, m))
        fixed["amps"] = np.ones((1, m))
        bound = np.sqrt(6.0 / (2 * m))
        params["w1c"] = rng.uniform(-bound, bound, size=(m, w))
        params["w1s"] = rng.uniform(-bound, bound, size=(m, w))
        for k in range(2, K):
            b = np.sqrt(6.0 / w)
            params[f"w{k}"] = rng.uniform(-b, b, size=(w, w))
        b = np.sqrt(6.0 / w)
        params[f"w{K}"] = rng.uniform(-b, b, size=(w, 1))
        add_biases("", [w] * (K - 1) + [1])
    return CoordinateNetwork(spec, params, fixed)


@dataclass
class CoordinateNetwork:
    """A specification plus its current parameter arrays."""

    spec: NetworkSpec
    params: dict
    fixed: dict = field(default_factory=dict)

    def bind(self, tape: Tape) -> "BoundNetwork":
        """Register this network's parameters as trainable leaves on a tape."""
        refs = {n: tape.leaf(n, v.shape, trainable=True) for n, v in self.params.items()}
        return BoundNetwork(self, tape, refs)

    def bindings(self) -> dict:
        """Current leaf bindings (the live parameter arrays)."""
        return dict(self.params)

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # Convenience single-shot evaluation (builds a throwaway tape).

    def forward(self, coords) -> np.ndarray:
        return self._eval(coords, lambda t: t.value)

    def partial(self, coords, dim: int) -> np.ndarray:
        return self._eval(coords, lambda t: t.partial(dim))

    def second_partial(self, coords, d1: int, d2: int) -> np.ndarray:
        return self._eval(coords, lambda t: t.second(d1, d2))

    def _eval(self, coords, pick):
        tape = Tape()
        trace = self.bind(tape).rows(_check_coords(coords, self.spec.in_dim))
        node = pick(trace)
        return tape.evaluate(self.bindings()).value(node)


def _check_coords(coords, in_dim) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != in_dim:
        raise ValueError(f"coords must have shape (n, {in_dim}), got {coords.shape}")
    return coords


def forward(net: CoordinateNetwork, coords) -> np.ndarray:
    """Evaluate the network at rows of canonical coordinates."""
    return net.forward(coords)


def partial_x(net: CoordinateNetwork, coords, dim: int) -> np.ndarray:
    """First derivative of the network output along one input coordinate."""
    return net.partial(coords, dim)


def second_partial_x(net: CoordinateNetwork, coords, d1: int, d2: int) -> np.ndarray:
    """Second (possibly mixed) input derivative."""
    return net.second_partial(coords, d1, d2)


class BoundNetwork:
    """A network whose parameters are leaves on a particular tape."""

    def __init__(self, net: CoordinateNetwork, tape: Tape, refs: dict):
        self.net = net
        self.tape = tape
        self.refs = refs

    def rows(self, coords: np.ndarray):
        """Trace over scattered points given as an (n, N) array."""
        coords = _check_coords(coords, self.net.spec.in_dim)
        arch = self.net.spec.architecture
        if arch == "sine-mlp":
            return _SineRows(self, coords)
        if arch == "pe-mlp":
            return _PeRows(self, coords)
        return _TfRows(self, coords)

    def grid(self, axes):
        """Trace over a full meshgrid given per-axis coordinate arrays.

        Only the tf-net factorizes over axes; other architectures should
        evaluate the flattened grid through :meth:`rows`.
        """
        if self.net.spec.architecture != "tf-net":
            raise UnsupportedDerivative(
                "grid traces require the tf-net; flatten the grid to rows instead"
            )
        axes = [np.asarray(a, dtype=np.float64).reshape(-1) for a in axes]
        if len(axes) != self.net.spec.in_dim:
            raise ValueError("one axis array per input dimension required")
        return _TfGrid(self, axes)


def _add_bias(tape, refs, weight_name, z):
    bias_name = weight_name.replace("w", "b", 1)
    if bias_name in refs:
        return tape.add(z, refs[bias_name])
    return z


def _sine_factor_layers(tape, refs, names, omega0, t_const):
    """Forward pass of a weight-only sine stack; returns activations and
    pre-activation nodes.  ``t_const`` is the (n, fan_in) input node."""
    zs, acts = [], []
    h = t_const
    for k, name in enumerate(names[:-1]):
        z = _add_bias(tape, refs, name, tape.matmul(h, refs[name]))
        if k == 0:
            z = tape.scale(z, omega0)
        zs.append(z)
        h = tape.sin(z)
        acts.append(h)
    out = _add_bias(tape, refs, names[-1], tape.matmul(h, refs[names[-1]]))
    return zs, acts, out


class _SineStackTrace:
    """Shared derivative propagation for weight-only sine stacks.

    Handles stacks whose first layer sees either the full coordinate rows
    (sine-mlp) or a single coordinate column (tf-net factors).  First and
    second derivative graphs reuse the forward pass's sin/cos nodes.
    """

    def __init__(self, tape, refs, names, omega0, x_node):
        self.tape = tape
        self.refs = refs
        self.names = names
        self.omega0 = omega0
        self.x_node = x_node
        self.zs, self.acts, self.out = _sine_factor_layers(
            tape, refs, names, omega0, x_node
        )
        self._cos = {}
        self._dz = {}
        self._first = {}
        self._second = {}

    def _cos_of(self, k):
        if k not in self._cos:
            self._cos[k] = self.tape.cos(self.zs[k])
        return self._cos[k]

    def _first_row(self, dim):
        """Constant-in-x row giving d z_1 / d x_dim before the omega0 scale."""
        w1 = self.refs[self.names[0]]
        return self.tape.slice_axis(w1, 0, dim, dim + 1)

    def d_layers(self, dim):
        """Per-layer activation derivatives along input ``dim``."""
        if dim in self._dz:
            return self._dz[dim]
        tape = self.tape
        row = self._first_row(dim)
        dz = [tape.scale(tape.mul(self._cos_of(0), row), self.omega0)]
        da = dz[0]
        for k in range(1, len(self.zs)):
            dzk = tape.matmul(da, self.refs[self.names[k]])
            dz.append(dzk)
            da = tape.mul(self._cos_of(k), dzk)
        self._dz[dim] = (dz, da)
        return self._dz[dim]

    def first(self, dim):
        if dim not in self._first:
            _, da = self.d_layers(dim)
            self._first[dim] = self.tape.matmul(da, self.refs[self.names[-1]])
        return self._first[dim]

    def second(self, d1, d2):
        key = (min(d1, d2), max(d1, d2))
        if key in self._second:
            return self._second[key]
        tape = self.tape
        dz1, _ = self.d_layers(key[0])
        dz2, _ = self.d_layers(key[1])
        row1, row2 = self._first_row(key[0]), self._first_row(key[1])
        # d2/dx1 dx2 of sin(omega0 z) = -omega0^2 sin(.) w[:,d1] w[:,d2]
        dd = tape.scale(
            tape.mul(tape.mul(self.acts[0], row1), row2), -self.omega0 ** 2
        )
        for k in range(1, len(self.zs)):
            ddz = tape.matmul(dd, self.refs[self.names[k]])
            bend = tape.mul(tape.mul(self.acts[k], dz1[k]), dz2[k])
            dd = tape.sub(tape.mul(self._cos_of(k), ddz), bend)
        node = tape.matmul(dd, self.refs[self.names[-1]])
        self._second[key] = node
        return node


class _SineRows:
    def __init__(self, bound: BoundNetwork, coords: np.ndarray):
        spec = bound.net.spec
        self.tape = bound.tape
        names = [f"w{k}" for k in range(1, spec.depth + 1)]
        x = self.tape.constant(coords)
        self._stack = _SineStackTrace(self.tape, bound.refs, names, spec.omega0, x)
        self.n = coords.shape[0]
        self.in_dim = spec.in_dim
        self.value = self.tape.reshape(self._stack.out, (self.n,))

    def partial(self, dim):
        return self.tape.reshape(self._stack.first(dim), (self.n,))

    def second(self, d1, d2):
        return self.tape.reshape(self._stack.second(d1, d2), (self.n,))


class _PeRows:
    """Positional-encoding ReLU MLP over scattered points."""

    def __init__(self, bound: BoundNetwork, coords: np.ndarray):
        spec = bound.net.spec
        tape = self.tape = bound.tape
        refs = self.refs = bound.refs
        self.n = coords.shape[0]
        self.in_dim = spec.in_dim
        freqs = bound.net.fixed["freqs"]
        amps = bound.net.fixed["amps"]
        self._freqs = freqs
        x = tape.constant(coords)
        phase = tape.scale(tape.matmul(x, tape.constant(freqs)), 2.0 * np.pi)
        amp = tape.constant(amps)
        self.cosf = tape.mul(tape.cos(phase), amp)
        self.sinf = tape.mul(tape.sin(phase), amp)
        z = tape.add(
            tape.matmul(self.cosf, refs["w1c"]), tape.matmul(self.sinf, refs["w1s"])
        )
        if "b1" in refs:
            z = tape.add(z, refs["b1"])
        self.zs = [z]
        h = tape.relu(z)
        self.acts = [h]
        self.depth = spec.depth
        for k in range(2, spec.depth):
            z = _add_bias(tape, refs, f"w{k}", tape.matmul(h, refs[f"w{k}"]))
            self.zs.append(z)
            h = tape.relu(z)
            self.acts.append(h)
        out = _add_bias(
            tape, refs, f"w{spec.depth}", tape.matmul(h, refs[f"w{spec.depth}"])
        )
        self.value = tape.reshape(out, (self.n,))
        self._steps = {}
        self._first = {}

    def _step_of(self, k):
        if k not in self._steps:
            self._steps[k] = self.tape.step(self.zs[k])
        return self._steps[k]

    def partial(self, dim):
        if dim in self._first:
            return self._first[dim]
        tape = self.tape
        row = tape.constant(self._freqs[dim : dim + 1, :])
        # d cos-feature = -2pi b_d * sin-feature ; d sin-feature = 2pi b_d * cos-feature
        dcos = tape.scale(tape.mul(self.sinf, row), -2.0 * np.pi)
        dsin = tape.scale(tape.mul(self.cosf, row), 2.0 * np.pi)
        dz = tape.add(
            tape.matmul(dcos, self.refs["w1c"]), tape.matmul(dsin, self.refs["w1s"])
        )
        da = tape.mul(self._step_of(0), dz)
        for k in range(1, len(self.zs)):
            dz = tape.matmul(da, self.refs[f"w{k + 1}"])
            da = tape.mul(self._step_of(k), dz)
        node = tape.reshape(tape.matmul(da, self.refs[f"w{self.depth}"]), (self.n,))
        self._first[dim] = node
        return node

    def second(self, d1, d2):
        raise UnsupportedDerivative(
            "pe-mlp derivatives rely on ReLU subgradients; second derivatives "
            "are identically zero almost everywhere and are rejected"
        )


class _TfFactorSet:
    """Factor traces of a tf-net over given scalar inputs, one per dimension."""

    def __init__(self, bound: BoundNetwork, columns):
        spec = bound.net.spec
        self.tape = bound.tape
        self.stacks = []
        for d, col in enumerate(columns):
            names = [f"f{d}_w{k}" for k in range(1, spec.depth + 1)]
            self.stacks.append(
                _SineStackTrace(self.tape, bound.refs, names, spec.omega0, col)
            )

    def matrices(self, orders):
        """Factor output nodes with per-dimension derivative order 0, 1 or 2."""
        out = []
        for stack, order in zip(self.stacks, orders):
            if order == 0:
                out.append(stack.out)
            elif order == 1:
                out.append(stack.first(0))
            else:
                out.append(stack.second(0, 0))
        return out


def _orders(n_dims, pairs):
    orders = [0] * n_dims
    for d in pairs:
        orders[d] += 1
    return tuple(orders)


class _TfRows:
    """Per-point Tucker contraction: factors evaluated on each row's coords."""

    def __init__(self, bound: BoundNetwork, coords: np.ndarray):
        tape = self.tape = bound.tape
        self.core = bound.refs["core"]
        self.ranks = bound.net.spec.ranks
        self.n = coords.shape[0]
        self.in_dim = bound.net.spec.in_dim
        x = tape.constant(coords)
        cols = [
            tape.slice_axis(x, 1, d, d + 1) for d in range(bound.net.spec.in_dim)
        ]
        self.factors = _TfFactorSet(bound, cols)
        self._cache = {}
        self.value = self._contract(_orders(len(self.ranks), ()))

    def _contract(self, orders):
        if orders in self._cache:
            return self._cache[orders]
        tape = self.tape
        mats = self.factors.matrices(orders)
        rest = int(np.prod(self.ranks[1:], dtype=np.int64))
        p = tape.matmul(mats[0], tape.reshape(self.core, (self.ranks[0], rest)))
        for d in range(1, len(self.ranks)):
            rest = int(np.prod(self.ranks[d + 1 :], dtype=np.int64))
            p = tape.reshape(p, (self.n, self.ranks[d], rest))
            u = tape.reshape(mats[d], (self.n, self.ranks[d], 1))
            p = tape.sum(tape.mul(p, u), axis=1)
        node = tape.reshape(p, (self.n,))
        self._cache[orders] = node
        return node

    def partial(self, dim):
        return self._contract(_orders(len(self.ranks), (dim,)))

    def second(self, d1, d2):
        return self._contract(_orders(len(self.ranks), (d1, d2)))


class _TfGrid:
    """Full-meshgrid Tucker assembly: core mode-multiplied by factor matrices."""

    def __init__(self, bound: BoundNetwork, axes):
        tape = self.tape = bound.tape
        self.core = bound.refs["core"]
        self.shape = tuple(len(a) for a in axes)
        self.in_dim = len(axes)
        cols = [tape.constant(a.reshape(-1, 1)) for a in axes]
        self.factors = _TfFactorSet(bound, cols)
        self._cache = {}
        self.value = self._assemble(_orders(len(axes), ()))

    def _assemble(self, orders):
        if orders in self._cache:
            return self._cache[orders]
        g = self.core
        for d, mat in enumerate(self.factors.matrices(orders)):
            g = self.tape.mode_product(g, mat, d)
        self._cache[orders] = g
        return g

    def partial(self, dim):
        return self._assemble(_orders(len(self.shape), (dim,)))

    def second(self, d1, d2):
        return self._assemble(_orders(len(self.shape), (d1, d2)))


# -- checkpoint io ----------------------------------------------------------

_MAGIC = "neurtv-checkpoint 1"


def save_checkpoint(net: CoordinateNetwork, path):
    """Write spec and arrays: a plain-text header, then little-endian f64."""
    spec = net.spec
    lines = [_MAGIC]
    lines.append(f"architecture={spec.architecture}")
    lines.append(f"in_dim={spec.in_dim}")
    lines.append(f"width={spec.width}")
    lines.append(f"depth={spec.depth}")
    lines.append(f"omega0={spec.omega0!r}")
    lines.append(f"seed={spec.seed}")
    lines.append(f"bias={int(spec.bias)}")
    if spec.ranks is not None:
        lines.append("ranks=" + ",".join(str(r) for r in spec.ranks))
    lines.append(f"n_frequencies={spec.n_frequencies}")
    lines.append(f"frequency_scale={spec.frequency_scale!r}")
    order = []
    for group, flag in ((net.params, 1), (net.fixed, 0)):
        for name in sorted(group):
            shape = ",".join(str(s) for s in group[name].shape)
            lines.append(f"array {name} {flag} {shape}")
            order.append((group, name))
    lines.append("data")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for group, name in order:
            fh.write(np.ascontiguousarray(group[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> CoordinateNetwork:
    with open(path, "rb") as fh:
        blob = fh.read()
    header_end = blob.index(b"data\n") + len(b"data\n")
    lines = blob[: header_end - 1].decode("ascii").splitlines()
    if lines[0] != _MAGIC:
        raise ValueError(f"{path}: not a network checkpoint")
    kv = {}
    arrays = []
    for line in lines[1:-1]:
        if line.startswith("array "):
            _, name, flag, shape = line.split(" ")
            dims = tuple(int(s) for s in shape.split(",")) if shape else ()
            arrays.append((name, int(flag), dims))
        else:
            key, _, value = line.partition("=")
            kv[key] = value
    ranks = None
    if "ranks" in kv:
        ranks = tuple(int(r) for r in kv["ranks"].split(","))
    spec = NetworkSpec(
        architecture=kv["architecture"],
        in_dim=int(kv["in_dim"]),
        width=int(kv["width"]),
        depth=int(kv["depth"]),
        omega0=float(kv["omega0"]),
        ranks=ranks,
        n_frequencies=int(kv["n_frequencies"]),
        frequency_scale=float(kv["frequency_scale"]),
        bias=bool(int(kv.get("bias", "0"))),
        seed=int(kv["seed"]),
    )
    params, fixed = {}, {}
    offset = header_end
    for name, flag, dims in arrays:
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        raw = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        target = params if flag else fixed
        target[name] = raw.reshape(dims).astype(np.float64)
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes after declared arrays")
    return CoordinateNetwork(spec, params, fixed)
