"""Dense float64 tensors with reverse-mode automatic differentiation.

Every tensor wraps a ``numpy.ndarray`` of float64. While a
:class:`GradientTape` is active, each operation appends one node holding
references to its inputs and a closure that maps the upstream gradient to
per-input gradients. ``backward`` walks the tape once, in reverse, and
accumulates gradients by summation into every reachable leaf that has
``requires_grad`` set.

Outside of a tape (evaluation mode) the same operations run without any
recording.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeMismatchError, StaleTapeError

_TAPE_STACK: list["GradientTape"] = []


def active_tape() -> Optional["GradientTape"]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class TapeNode:
    """One recorded operation: kind, inputs, output and its backward rule."""

    __slots__ = ("op", "inputs", "output", "grad_fn", "tape")

    def __init__(self, op, inputs, output, grad_fn, tape):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.grad_fn = grad_fn
        self.tape = tape


class GradientTape:
    """Append-only record of operations, consumed by a single backward pass."""

    def __init__(self) -> None:
        self.nodes: list[TapeNode] = []
        self.consumed = False

    def __enter__(self) -> "GradientTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()


class Tensor:
    """Dense n-dimensional float64 array, optionally tracked on a tape."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: TapeNode | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and ndarrays are wrapped as constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        return div_scalar(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...],
            grad_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        node = TapeNode(op, inputs, out, grad_fn, tape)
        tape.nodes.append(node)
        out.node = node
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(
            f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    The loss must be a scalar produced on an active tape. Gradients of
    tensors used more than once accumulate by summation. A tape can be
    consumed exactly once.
    """
    if loss.shape != ():
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise ContractError("loss is not attached to a gradient tape")
    tape = loss.node.tape
    if tape.consumed:
        raise StaleTapeError("tape already consumed; rebuild the forward pass")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        holders.pop(id(node.output), None)
        if g is None:
            continue
        for inp, ig in zip(node.inputs, node.grad_fn(g)):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
                holders[key] = inp
    # whatever is left never appeared as an output on this tape: leaves
    for key, t in holders.items():
        g = grads[key]
        t.grad = g.copy() if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    out = a.data + b.data
    return _record("add", out, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    out = a.data - b.data
    return _record("sub", out, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    out = a.data * b.data
    return _record("mul", out, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def div_scalar(a, s) -> Tensor:
    """Divide a tensor by a python scalar."""
    a = as_tensor(a)
    s = float(s)
    if s == 0.0:
        raise DomainError("division by zero scalar")
    return _record("div_scalar", a.data / s, (a,), lambda g: (g / s,))


# ---------------------------------------------------------------------------
# linear algebra


def _promote(x: np.ndarray, side: str) -> np.ndarray:
    if x.ndim == 1:
        return x[None, :] if side == "left" else x[:, None]
    return x


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules over leading axes.

    1-D operands are promoted the numpy way: a 1-D left operand acts as a
    row vector, a 1-D right operand as a column vector, and the promoted
    axis is dropped from the result.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeMismatchError(f"matmul: operands must be at least 1-D, "
                                 f"got {a.shape} and {b.shape}")
    ap = _promote(a.data, "left")
    bp = _promote(b.data, "right")
    if ap.shape[-1] != bp.shape[-2]:
        raise ShapeMismatchError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    try:
        out = np.matmul(ap, bp)
    except ValueError:
        raise ShapeMismatchError(
            f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    out_full_shape = out.shape
    if b.ndim == 1:
        out = out[..., 0]
    if a.ndim == 1:
        out = out[..., 0, :] if b.ndim > 1 else out[..., 0]

    def grad_fn(g):
        gp = g.reshape(out_full_shape)
        ga = np.matmul(gp, np.swapaxes(bp, -1, -2))
        gb = np.matmul(np.swapaxes(ap, -1, -2), gp)
        ga = _unbroadcast(ga, ap.shape).reshape(a.shape)
        gb = _unbroadcast(gb, bp.shape).reshape(b.shape)
        return ga, gb

    return _record("matmul", out, (a, b), grad_fn)


def dot(a, b) -> Tensor:
    """Inner product of two 1-D tensors, producing a scalar."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeMismatchError(f"dot: expected equal-length 1-D tensors, "
                                 f"got {a.shape} and {b.shape}")
    out = np.dot(a.data, b.data)
    return _record("dot", out, (a, b), lambda g: (g * b.data, g * a.data))


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeMismatchError(f"transpose: need at least 2 dims, got {a.shape}")
    return _record("transpose", np.swapaxes(a.data, -1, -2), (a,),
                   lambda g: (np.swapaxes(g, -1, -2),))


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return _record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (defaults to the last axis)."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat of an empty sequence")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeMismatchError(
            "concat: shapes " + ", ".join(str(t.shape) for t in ts)
            + f" do not align on axis {axis}") from None
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record("concat", out, tuple(ts), grad_fn)


def take_rows(a, indices) -> Tensor:
    """Gather rows of ``a`` along axis 0; duplicates accumulate on backward."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.ndim < 1:
        raise ShapeMismatchError("take_rows: operand must be at least 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeMismatchError(
            f"take_rows: index out of range for leading dim {a.shape[0]}")
    out = a.data[idx]

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _record("take_rows", out, (a,), grad_fn)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries starting at ``start`` on ``axis``."""
    a = as_tensor(a)
    axis = axis % a.ndim
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeMismatchError(
            f"narrow: slice [{start}:{start + length}] outside axis {axis} "
            f"of shape {a.shape}")
    sl = tuple(slice(None) if i != axis else slice(start, start + length)
               for i in range(a.ndim))
    out = a.data[sl]

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        ga[sl] = g
        return (ga,)

    return _record("narrow", out, (a,), grad_fn)


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gx, a.shape).copy(),)

    return _record("sum", out, (a,), grad_fn)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis]
    if n == 0:
        raise DomainError("mean over an empty axis")
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).copy(),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gx / n, a.shape).copy(),)

    return _record("mean", out, (a,), grad_fn)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _record("relu", out, (a,), lambda g: (g * (a.data > 0),))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    out = np.where(a.data > 0, a.data, slope * a.data)
    return _record("leaky_relu", out, (a,),
                   lambda g: (g * np.where(a.data > 0, 1.0, slope),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    return _record("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def softmax(a, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax over the last axis, stabilised by subtracting the row max.

    ``mask`` is a boolean array broadcastable to ``a``; False entries are
    excluded (their weight is exactly zero and no gradient flows through
    them). Every row must keep at least one admissible entry.
    """
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] == 0:
        raise DomainError(f"softmax over an empty axis, shape {a.shape}")
    scores = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            full = np.broadcast_shapes(a.shape, mask.shape)
        except ValueError:
            raise ShapeMismatchError(
                f"softmax: mask {mask.shape} does not broadcast to {a.shape}") from None
        scores = np.where(mask, np.broadcast_to(scores, full), -np.inf)
        if not np.broadcast_to(mask, full).any(axis=-1).all():
            raise DomainError("softmax: a row is fully masked")
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        gx = out * (g - (g * out).sum(axis=-1, keepdims=True))
        return (_unbroadcast(gx, a.shape),)

    return _record("softmax", out, (a,), grad_fn)


def logsumexp(a) -> Tensor:
    """Numerically stable log(sum(exp(a))) over a 1-D tensor.

    The shift by the (detached) max changes neither the value nor the
    gradient, which remains exactly softmax(a).
    """
    a = as_tensor(a)
    if a.ndim != 1 or a.shape[0] == 0:
        raise DomainError(f"logsumexp expects a nonempty 1-D tensor, got {a.shape}")
    shift = float(a.data.max())
    return log(tsum(exp(add(a, -shift)))) + shift


def stack_scalars(scalars: Sequence[Tensor]) -> Tensor:
    """Pack scalar tensors into a 1-D tensor, preserving gradient flow."""
    return concat([reshape(s, (1,)) for s in scalars], axis=0)
