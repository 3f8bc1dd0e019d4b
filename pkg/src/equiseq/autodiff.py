"""A small reverse-mode tape over numpy matrices.

Every differentiable op in this module accepts either plain arrays or
:class:`Node` values.  With plain arrays it simply computes the result, so the
same model code serves both evaluation and training.  As soon as one operand
is a ``Node`` the op is recorded on that node's tape together with its
adjoint.

Recorded ops: matmul, add, transpose, scale, softmax_rows, activation,
gram_sqdist, hstack and block (sub-matrix selection).
"""

from __future__ import annotations

import numpy as np

from . import tensor
from .errors import InvalidInputError, ShapeError, TapeError

ACTIVATIONS = ("identity", "relu", "tanh", "exp")


class Node:
    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(#{self.index}, shape={self.value.shape})"


class Tape:
    """Single-use record of a forward pass."""

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._parents: list[tuple] = []
        self._adjoints: list = []
        self._ops: list[str] = []
        self.params: dict[str, Node] = {}
        self.output: Node | None = None
        self.consumed = False

    def __len__(self):
        return len(self._values)

    @property
    def op_names(self) -> list[str]:
        return list(self._ops)

    def param(self, name: str, value) -> Node:
        if name in self.params:
            raise TapeError(f"parameter '{name}' registered twice")
        node = self._record("param", np.asarray(value, dtype=np.float64), (), None)
        self.params[name] = node
        return node

    def _record(self, op: str, value, parents, adjoint) -> Node:
        node = Node(self, len(self._values), value)
        self._values.append(value)
        self._parents.append(parents)
        self._adjoints.append(adjoint)
        self._ops.append(op)
        return node

    def gradients(self, output_grad, output: Node | None = None) -> dict[str, np.ndarray]:
        """Back-propagate ``output_grad`` from ``output`` (default: ``self.output``)."""
        if self.consumed:
            raise TapeError("tape already consumed by a previous backward pass")
        output = output if output is not None else self.output
        if output is None or output.tape is not self:
            raise TapeError("no recorded output node on this tape")
        seed = np.asarray(output_grad, dtype=np.float64)
        if seed.shape != output.value.shape:
            raise ShapeError(
                f"backward: loss gradient shape {tensor.shape_str(seed)} "
                f"does not match output shape {tensor.shape_str(output.value)}"
            )
        self.consumed = True
        grads: list = [None] * len(self._values)
        grads[output.index] = seed
        for i in range(output.index, -1, -1):
            g = grads[i]
            if g is None or self._adjoints[i] is None:
                continue
            for parent, pg in zip(self._parents[i], self._adjoints[i](g)):
                if parent is None or pg is None:
                    continue
                j = parent.index
                grads[j] = pg if grads[j] is None else grads[j] + pg
        return {
            name: (grads[node.index] if grads[node.index] is not None else np.zeros_like(node.value))
            for name, node in self.params.items()
        }


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else x


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Node):
            if tape is not None and x.tape is not tape:
                raise TapeError("operands recorded on different tapes")
            tape = x.tape
    return tape


def _node(x):
    return x if isinstance(x, Node) else None


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    for axis, (gs, s) in enumerate(zip(g.shape, shape)):
        if s == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --------------------------------------------------------------------------
# ops


def matmul(a, b):
    av, bv = value(a), value(b)
    out = tensor.matmul(av, bv)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    return tape._record(
        "matmul", out, (_node(a), _node(b)), lambda g: (g @ bv.T, av.T @ g)
    )


def add(a, b):
    """Elementwise sum; a ``(d, 1)`` column broadcasts across columns."""
    av, bv = value(a), value(b)
    if av.shape != bv.shape:
        try:
            shape = np.broadcast_shapes(av.shape, bv.shape)
        except ValueError:
            shape = None
        if shape is None or av.shape[0] != bv.shape[0]:
            raise ShapeError(f"add: incompatible shapes {tensor.shape_str(av)} and {tensor.shape_str(bv)}")
    out = av + bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    return tape._record(
        "add",
        out,
        (_node(a), _node(b)),
        lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)),
    )


def transpose(a):
    out = value(a).T
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape._record("transpose", out, (a,), lambda g: (g.T,))


def scale(a, c):
    """Multiply by a scalar: a number, or a ``1 x 1`` matrix (possibly a Node)."""
    av = value(a)
    if not isinstance(c, Node) and np.ndim(c) == 0:
        c = float(c)
        out = av * c
        tape = _tape_of(a)
        if tape is None:
            return out
        return tape._record("scale", out, (a,), lambda g: (g * c,))
    cv = value(c)
    if np.shape(cv) != (1, 1):
        raise ShapeError(f"scale: scalar factor must be 1x1, got {tensor.shape_str(cv)}")
    cs = float(cv[0, 0])
    out = av * cs
    tape = _tape_of(a, c)
    if tape is None:
        return out
    return tape._record(
        "scale",
        out,
        (_node(a), _node(c)),
        lambda g: (g * cs, np.array([[float(np.sum(g * av))]])),
    )


def softmax_rows(a):
    s = tensor.softmax_rows(value(a))
    tape = _tape_of(a)
    if tape is None:
        return s
    return tape._record(
        "softmax_rows",
        s,
        (a,),
        lambda g: (s * (g - np.sum(g * s, axis=1, keepdims=True)),),
    )


def _act_forward(x: np.ndarray, name: str) -> np.ndarray:
    if name == "identity":
        return x
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "exp":
        return np.exp(x)
    raise InvalidInputError(f"unknown nonlinearity '{name}' (choose from {', '.join(ACTIVATIONS)})")


def activation(a, name: str):
    """Elementwise nonlinearity from :data:`ACTIVATIONS`."""
    x = value(a)
    y = _act_forward(x, name)
    tape = _tape_of(a)
    if tape is None:
        return y
    if name == "identity":
        deriv = None
    elif name == "relu":
        deriv = (x > 0.0).astype(np.float64)
    elif name == "tanh":
        deriv = 1.0 - y * y
    else:
        deriv = y
    return tape._record(
        f"activation:{name}", y, (a,), lambda g: (g if deriv is None else g * deriv,)
    )


def gram_sqdist(g):
    """Squared distances ``D_ij = G_ii + G_jj - 2 G_ij`` from a Gram matrix."""
    gv = value(g)
    if gv.ndim != 2 or gv.shape[0] != gv.shape[1]:
        raise ShapeError(f"gram_sqdist: Gram matrix must be square, got {tensor.shape_str(gv)}")
    diag = np.diag(gv)
    out = diag[:, None] + diag[None, :] - 2.0 * gv
    tape = _tape_of(g)
    if tape is None:
        return out

    def adjoint(gr):
        return (np.diag(gr.sum(axis=1) + gr.sum(axis=0)) - 2.0 * gr,)

    return tape._record("gram_sqdist", out, (g,), adjoint)


def hstack(a, b):
    av, bv = value(a), value(b)
    if av.shape[0] != bv.shape[0]:
        raise ShapeError(f"hstack: row counts differ ({tensor.shape_str(av)} vs {tensor.shape_str(bv)})")
    out = np.hstack([av, bv])
    tape = _tape_of(a, b)
    if tape is None:
        return out
    n = av.shape[1]
    return tape._record("hstack", out, (_node(a), _node(b)), lambda g: (g[:, :n], g[:, n:]))


def block(a, rows: slice, cols: slice):
    av = value(a)
    out = av[rows, cols]
    tape = _tape_of(a)
    if tape is None:
        return out

    def adjoint(g):
        full = np.zeros_like(av)
        full[rows, cols] = g
        return (full,)

    return tape._record("block", out, (a,), adjoint)
