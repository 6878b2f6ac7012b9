"""Reverse-mode differentiation over a small set of dense-array primitives.

A :class:`Tape` is a static computation graph: leaves (named inputs, some
trainable) plus primitive nodes recorded in creation order.  Evaluating a
tape binds leaf values and replays every node forward; the resulting
:class:`Evaluation` caches all intermediate arrays and can run the reverse
sweep from any scalar node.  Replaying the same bindings reproduces the
recorded outputs bit for bit, and a tape can be evaluated many times (one
build, many training iterations).

All arrays are 64-bit floats.  The derivative of ``|u|`` uses ``sign(u)``
with ``sign(0) = 0``.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape",
    "Ref",
    "Evaluation",
    "TapeError",
    "ShapeMismatch",
    "LeafBindingError",
]


class TapeError(Exception):
    """Base class for graph construction and evaluation failures."""


class ShapeMismatch(TapeError):
    """Raised when an operation's operand shapes are incompatible."""


class LeafBindingError(TapeError):
    """Raised when evaluation bindings do not match the declared leaves."""


def _as_f64(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class _Node:
    __slots__ = ("op", "parents", "attrs", "shape", "name")

    def __init__(self, op, parents, attrs, shape, name=None):
        self.op = op
        self.parents = parents
        self.attrs = attrs
        self.shape = shape
        self.name = name


class Ref:
    """Handle to one node of a tape, with operator sugar for graph building."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def shape(self) -> tuple:
        return self.tape._nodes[self.index].shape

    def __add__(self, other):
        return self.tape.add(self, self.tape._coerce(other))

    def __radd__(self, other):
        return self.tape.add(self.tape._coerce(other), self)

    def __sub__(self, other):
        return self.tape.sub(self, self.tape._coerce(other))

    def __rsub__(self, other):
        return self.tape.sub(self.tape._coerce(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return self.tape.scale(self, float(other))
        return self.tape.mul(self, self.tape._coerce(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return self.tape.scale(self, -1.0)

    def __matmul__(self, other):
        return self.tape.matmul(self, self.tape._coerce(other))

    def __abs__(self):
        return self.tape.absolute(self)

    def __repr__(self):
        node = self.tape._nodes[self.index]
        return f"Ref(#{self.index} {node.op} {node.shape})"


class Tape:
    """Static graph of primitive array operations with named leaves."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaf_index: dict[str, int] = {}
        self._trainable: list[str] = []
        self._consts: dict[int, np.ndarray] = {}

    # -- construction -----------------------------------------------------

    def _push(self, op, parents, attrs, shape, name=None) -> Ref:
        self._nodes.append(_Node(op, parents, attrs, shape, name))
        return Ref(self, len(self._nodes) - 1)

    def _coerce(self, value) -> Ref:
        if isinstance(value, Ref):
            if value.tape is not self:
                raise TapeError("operands belong to different tapes")
            return value
        return self.constant(value)

    def _shape_of(self, ref: Ref) -> tuple:
        return self._nodes[ref.index].shape

    def leaf(self, name: str, shape, trainable: bool = False) -> Ref:
        """Declare a named input of fixed shape; bound at evaluation time."""
        if name in self._leaf_index:
            raise TapeError(f"duplicate leaf name {name!r}")
        ref = self._push("leaf", (), None, tuple(shape), name=name)
        self._leaf_index[name] = ref.index
        if trainable:
            self._trainable.append(name)
        return ref

    def constant(self, value) -> Ref:
        value = _as_f64(value)
        ref = self._push("const", (), None, value.shape)
        self._consts[ref.index] = value
        return ref

    @property
    def trainable_names(self) -> tuple:
        return tuple(self._trainable)

    @property
    def leaf_names(self) -> tuple:
        return tuple(self._leaf_index)

    def __len__(self) -> int:
        return len(self._nodes)

    # -- primitives -------------------------------------------------------

    def matmul(self, a: Ref, b: Ref) -> Ref:
        a, b = self._coerce(a), self._coerce(b)
        sa, sb = self._shape_of(a), self._shape_of(b)
        if len(sa) != 2 or len(sb) != 2 or sa[1] != sb[0]:
            raise ShapeMismatch(
                f"node {len(self._nodes)}: matmul expects (n,k)@(k,m), got {sa} @ {sb}"
            )
        return self._push("matmul", (a.index, b.index), None, (sa[0], sb[1]))

    def _broadcast(self, op, a: Ref, b: Ref) -> Ref:
        a, b = self._coerce(a), self._coerce(b)
        sa, sb = self._shape_of(a), self._shape_of(b)
        try:
            shape = np.broadcast_shapes(sa, sb)
        except ValueError:
            raise ShapeMismatch(
                f"node {len(self._nodes)}: {op} cannot broadcast {sa} with {sb}"
            ) from None
        return self._push(op, (a.index, b.index), None, shape)

    def add(self, a: Ref, b: Ref) -> Ref:
        return self._broadcast("add", a, b)

    def sub(self, a: Ref, b: Ref) -> Ref:
        return self._broadcast("sub", a, b)

    def mul(self, a: Ref, b: Ref) -> Ref:
        return self._broadcast("mul", a, b)

    def scale(self, a: Ref, c: float) -> Ref:
        return self._push("scale", (a.index,), float(c), self._shape_of(a))

    def sin(self, a: Ref) -> Ref:
        return self._push("sin", (a.index,), None, self._shape_of(a))

    def cos(self, a: Ref) -> Ref:
        return self._push("cos", (a.index,), None, self._shape_of(a))

    def absolute(self, a: Ref) -> Ref:
        return self._push("abs", (a.index,), None, self._shape_of(a))

    def relu(self, a: Ref) -> Ref:
        return self._push("relu", (a.index,), None, self._shape_of(a))

    def step(self, a: Ref) -> Ref:
        """Heaviside indicator 1[x > 0]; its own derivative is zero."""
        return self._push("step", (a.index,), None, self._shape_of(a))

    def _reduce(self, op, a: Ref, axis) -> Ref:
        sa = self._shape_of(a)
        if axis is None:
            shape = ()
        else:
            axis = int(axis)
            if not -len(sa) <= axis < len(sa):
                raise ShapeMismatch(
                    f"node {len(self._nodes)}: {op} axis {axis} out of range for {sa}"
                )
            axis %= len(sa)
            shape = sa[:axis] + sa[axis + 1 :]
        return self._push(op, (a.index,), axis, shape)

    def sum(self, a: Ref, axis=None) -> Ref:
        return self._reduce("sum", a, axis)

    def mean(self, a: Ref, axis=None) -> Ref:
        return self._reduce("mean", a, axis)

    def reshape(self, a: Ref, shape) -> Ref:
        sa = self._shape_of(a)
        shape = tuple(int(s) for s in shape)
        if int(np.prod(sa, dtype=np.int64)) != int(np.prod(shape, dtype=np.int64)):
            raise ShapeMismatch(
                f"node {len(self._nodes)}: cannot reshape {sa} into {shape}"
            )
        return self._push("reshape", (a.index,), shape, shape)

    def slice_axis(self, a: Ref, axis: int, start: int, stop: int) -> Ref:
        sa = self._shape_of(a)
        axis = int(axis) % len(sa)
        if not 0 <= start < stop <= sa[axis]:
            raise ShapeMismatch(
                f"node {len(self._nodes)}: slice [{start}:{stop}] invalid for axis "
                f"{axis} of {sa}"
            )
        shape = sa[:axis] + (stop - start,) + sa[axis + 1 :]
        return self._push("slice", (a.index,), (axis, start, stop), shape)

    def mode_product(self, t: Ref, m: Ref, axis: int) -> Ref:
        """Tensor-times-matrix along one mode: dim ``axis`` of size I becomes
        J for a matrix of shape (J, I)."""
        st, sm = self._shape_of(t), self._shape_of(m)
        axis = int(axis) % len(st)
        if len(sm) != 2 or sm[1] != st[axis]:
            raise ShapeMismatch(
                f"node {len(self._nodes)}: mode_product axis {axis} needs matrix "
                f"(J,{st[axis]}), got {sm}"
            )
        shape = st[:axis] + (sm[0],) + st[axis + 1 :]
        return self._push("modeprod", (t.index, m.index), axis, shape)

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, bindings: dict) -> "Evaluation":
        """Replay the tape forward with the given leaf values."""
        missing = [n for n in self._leaf_index if n not in bindings]
        if missing:
            raise LeafBindingError(f"unbound leaves: {sorted(missing)}")
        unknown = [n for n in bindings if n not in self._leaf_index]
        if unknown:
            raise LeafBindingError(f"bindings for unknown leaves: {sorted(unknown)}")
        values: list = [None] * len(self._nodes)
        for i, node in enumerate(self._nodes):
            values[i] = self._forward_one(i, node, values, bindings)
        return Evaluation(self, values)

    def _forward_one(self, i, node, values, bindings):
        op = node.op
        if op == "leaf":
            v = _as_f64(bindings[node.name])
            if v.shape != node.shape:
                raise ShapeMismatch(
                    f"node {i}: leaf {node.name!r} expects shape {node.shape}, "
                    f"got {v.shape}"
                )
            return v
        if op == "const":
            return self._consts[i]
        p = [values[j] for j in node.parents]
        if op == "matmul":
            return p[0] @ p[1]
        if op == "add":
            return p[0] + p[1]
        if op == "sub":
            return p[0] - p[1]
        if op == "mul":
            return p[0] * p[1]
        if op == "scale":
            return p[0] * node.attrs
        if op == "sin":
            return np.sin(p[0])
        if op == "cos":
            return np.cos(p[0])
        if op == "abs":
            return np.abs(p[0])
        if op == "relu":
            return np.maximum(p[0], 0.0)
        if op == "step":
            return (p[0] > 0.0).astype(np.float64)
        if op == "sum":
            return np.sum(p[0], axis=node.attrs)
        if op == "mean":
            return np.mean(p[0], axis=node.attrs)
        if op == "reshape":
            return np.reshape(p[0], node.attrs)
        if op == "slice":
            axis, start, stop = node.attrs
            sl = [slice(None)] * p[0].ndim
            sl[axis] = slice(start, stop)
            return p[0][tuple(sl)]
        if op == "modeprod":
            axis = node.attrs
            out = np.tensordot(p[1], p[0], axes=([1], [axis]))
            return np.moveaxis(out, 0, axis)
        raise TapeError(f"node {i}: unknown op {op!r}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape of a broadcast operand."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Evaluation:
    """One forward replay of a tape: cached node values plus reverse sweep."""

    def __init__(self, tape: Tape, values: list):
        self._tape = tape
        self._values = values

    def value(self, ref: Ref) -> np.ndarray:
        if ref.index >= len(self._values):
            raise TapeError(
                f"node {ref.index} was created after this evaluation; build the "
                "full graph before calling evaluate"
            )
        return self._values[ref.index]

    def gradients(self, output: Ref, wrt=None) -> dict:
        """Reverse sweep from a scalar node.

        Returns one gradient array per requested leaf (default: every
        trainable leaf), zero-filled for leaves the output does not reach.
        """
        tape = self._tape
        out_node = tape._nodes[output.index]
        if out_node.shape != ():
            raise TapeError(
                f"backward needs a scalar output, node {output.index} has shape "
                f"{out_node.shape}"
            )
        if wrt is None:
            wrt = tape._trainable
        values = self._values
        grads: list = [None] * len(tape._nodes)
        grads[output.index] = np.ones(())
        for i in range(output.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = tape._nodes[i]
            self._backward_one(i, node, g, grads, values)
        out = {}
        for name in wrt:
            idx = tape._leaf_index[name]
            g = grads[idx]
            out[name] = np.zeros(tape._nodes[idx].shape) if g is None else g
        return out

    @staticmethod
    def _accumulate(grads, index, contribution):
        if grads[index] is None:
            grads[index] = contribution
        else:
            grads[index] = grads[index] + contribution

    def _backward_one(self, i, node, g, grads, values):
        op = node.op
        if op in ("leaf", "const"):
            return
        acc = self._accumulate
        pa = node.parents
        p = [values[j] for j in pa]
        if op == "matmul":
            acc(grads, pa[0], g @ p[1].T)
            acc(grads, pa[1], p[0].T @ g)
        elif op == "add":
            acc(grads, pa[0], _unbroadcast(g, p[0].shape))
            acc(grads, pa[1], _unbroadcast(g, p[1].shape))
        elif op == "sub":
            acc(grads, pa[0], _unbroadcast(g, p[0].shape))
            acc(grads, pa[1], _unbroadcast(-g, p[1].shape))
        elif op == "mul":
            acc(grads, pa[0], _unbroadcast(g * p[1], p[0].shape))
            acc(grads, pa[1], _unbroadcast(g * p[0], p[1].shape))
        elif op == "scale":
            acc(grads, pa[0], g * node.attrs)
        elif op == "sin":
            acc(grads, pa[0], g * np.cos(p[0]))
        elif op == "cos":
            acc(grads, pa[0], -g * np.sin(p[0]))
        elif op == "abs":
            acc(grads, pa[0], g * np.sign(p[0]))
        elif op == "relu":
            acc(grads, pa[0], g * (p[0] > 0.0))
        elif op == "step":
            pass
        elif op == "sum":
            acc(grads, pa[0], self._spread(g, p[0].shape, node.attrs, 1.0))
        elif op == "mean":
            axis = node.attrs
            count = p[0].size if axis is None else p[0].shape[axis]
            acc(grads, pa[0], self._spread(g, p[0].shape, axis, 1.0 / count))
        elif op == "reshape":
            acc(grads, pa[0], np.reshape(g, p[0].shape))
        elif op == "slice":
            axis, start, stop = node.attrs
            full = np.zeros(p[0].shape)
            sl = [slice(None)] * p[0].ndim
            sl[axis] = slice(start, stop)
            full[tuple(sl)] = g
            acc(grads, pa[0], full)
        elif op == "modeprod":
            axis = node.attrs
            back = np.tensordot(p[1].T, g, axes=([1], [axis]))
            acc(grads, pa[0], np.moveaxis(back, 0, axis))
            other = tuple(k for k in range(g.ndim) if k != axis)
            acc(grads, pa[1], np.tensordot(g, p[0], axes=(other, other)))
        else:
            raise TapeError(f"node {i}: unknown op {op!r} in backward")

    @staticmethod
    def _spread(g, shape, axis, factor):
        if axis is None:
            return np.full(shape, g * factor)
        return np.broadcast_to(np.expand_dims(g * factor, axis), shape).copy()
