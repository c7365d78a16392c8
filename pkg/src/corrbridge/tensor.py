"""Dense tensors with tape-based reverse-mode automatic differentiation.

Everything else in the package is built on the ops defined here. Tensors wrap
numpy arrays; recording happens eagerly on the innermost active ``Tape`` and
only while some input requires a gradient. Inference code simply runs without
an active tape and pays no bookkeeping cost.
"""

from __future__ import annotations

import numpy as np

# Probabilities are floored before log() so log-softmax stays finite.
LOG_FLOOR = 1e-12

# When True every op validates that its output is finite and raises
# NumericError otherwise. Cheap relative to the matmuls it guards.
CHECK_FINITE = True


class ShapeMismatchError(ValueError):
    """Operands do not conform for the attempted op."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {' vs '.join(map(str, self.shapes))}")


class NumericError(ArithmeticError):
    """An op produced non-finite values from finite inputs."""


class TapeError(RuntimeError):
    """Tape misuse: reuse after backward, or loss not produced on the tape."""


class Tensor:
    """N-d array of reals with an optional gradient buffer.

    ``data`` is never mutated by ops; only ``grad`` (filled by ``backward``)
    and explicit optimizer updates write in place.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def constant(data, dtype=None):
    """Non-differentiable tensor (masks, standardization stats, literals)."""
    return Tensor(data, requires_grad=False, dtype=dtype)


_ACTIVE_TAPES = []


class Tape:
    """Ordered record of executed ops; single use per backward pass."""

    def __init__(self):
        self._entries = []
        self._outputs = set()
        self._consumed = False

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE_TAPES.pop()
        return False

    def __len__(self):
        return len(self._entries)

    def record(self, op, out, inputs, backward_fn):
        self._entries.append((op, out, inputs, backward_fn))
        self._outputs.add(id(out))


def active_tape():
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def backward(tape, loss):
    """Populate ``grad`` for every requires_grad tensor reachable from ``loss``.

    Walks the tape in reverse execution order. Tensors recorded on the tape
    but unreachable from the loss end up with zero gradients. The tape is
    consumed and cannot be reused.
    """
    if tape._consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    if loss.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.shape}")
    if id(loss) not in tape._outputs:
        raise TapeError("loss was not produced under this tape")
    tape._consumed = True

    loss.grad = np.ones_like(loss.data)
    for op, out, inputs, backward_fn in reversed(tape._entries):
        g = out.grad
        if g is None:
            continue
        grads = backward_fn(g)
        for inp, gi in zip(inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                # copy: backward rules may hand out views of the output grad
                inp.grad = np.array(gi, dtype=inp.data.dtype, copy=True)
            else:
                inp.grad += gi
    # Recorded but unreachable tensors get explicit zeros rather than None.
    for op, out, inputs, backward_fn in tape._entries:
        for t in (out, *inputs):
            if t.requires_grad and t.grad is None:
                t.grad = np.zeros_like(t.data)


def _finalize(op, result, inputs, backward_fn):
    out = Tensor(result)
    # a non-finite element makes the full sum non-finite; one reduction
    # is much cheaper than isfinite().all() on the hot path
    if CHECK_FINITE and not np.isfinite(out.data.sum()):
        raise NumericError(f"{op} produced non-finite values")
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(op, out, inputs, backward_fn)
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op, a, b):
    if a.shape == b.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise / broadcast arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _finalize("add", a.data + b.data, (a, b), bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _finalize("sub", a.data - b.data, (a, b), bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _finalize("mul", a.data * b.data, (a, b), bwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    with np.errstate(divide="ignore", invalid="ignore"):
        result = a.data / b.data
    return _finalize("div", result, (a, b), bwd)


def scale(a, c):
    """Multiply by a python scalar."""
    a = as_tensor(a)
    c = float(c)

    def bwd(g):
        return (g * c,)

    return _finalize("scale", a.data * c, (a,), bwd)


# ---------------------------------------------------------------------------
# matmul and structural ops
# ---------------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _finalize("matmul", a.data @ b.data, (a, b), bwd)


def gather_rows(m, ids):
    """Row lookup ``m[ids]`` (embedding); ids is an integer array."""
    m = as_tensor(m)
    ids = np.asarray(ids, dtype=np.intp)
    if m.ndim != 2:
        raise ShapeMismatchError("gather_rows", m.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= m.shape[0]):
        raise IndexError(f"gather_rows: id out of range for {m.shape[0]} rows")

    def bwd(g):
        gm = np.zeros_like(m.data)
        np.add.at(gm, ids, g)
        return (gm,)

    return _finalize("gather_rows", m.data[ids], (m,), bwd)


def pick(x, ids):
    """Per-row element selection: out[i] = x[i, ids[i]] for 2-d x."""
    x = as_tensor(x)
    ids = np.asarray(ids, dtype=np.intp)
    if x.ndim != 2 or ids.shape != (x.shape[0],):
        raise ShapeMismatchError("pick", x.shape, ids.shape)
    rows = np.arange(x.shape[0])

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[rows, ids] = g
        return (gx,)

    return _finalize("pick", x.data[rows, ids], (x,), bwd)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        result = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatchError("concat", *[t.shape for t in tensors]) from None
    ax = axis % result.ndim
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        slicer = [slice(None)] * g.ndim
        parts = []
        for i in range(len(tensors)):
            slicer[ax] = slice(offsets[i], offsets[i + 1])
            parts.append(g[tuple(slicer)])
        return tuple(parts)

    return _finalize("concat", result, tensors, bwd)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)

    def bwd(g):
        return (g * (1.0 - y * y),)

    return _finalize("tanh", y, (x,), bwd)


def sigmoid(x):
    x = as_tensor(x)
    # overflow-free identity: sigmoid(x) = (tanh(x/2) + 1) / 2
    y = 0.5 * (np.tanh(0.5 * x.data) + 1.0)

    def bwd(g):
        return (g * y * (1.0 - y),)

    return _finalize("sigmoid", y, (x,), bwd)


def softmax(x):
    """Softmax over the last axis, computed with max-subtraction."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _finalize("softmax", y, (x,), bwd)


def log(x):
    """Natural log with inputs floored at LOG_FLOOR (keeps log∘softmax finite)."""
    x = as_tensor(x)
    clipped = np.maximum(x.data, LOG_FLOOR)
    above = x.data > LOG_FLOOR

    def bwd(g):
        return (np.where(above, g / clipped, 0.0),)

    return _finalize("log", np.log(clipped), (x,), bwd)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(x, axis=None):
    x = as_tensor(x)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).astype(x.dtype, copy=True),)

    return _finalize("sum", x.data.sum(axis=axis), (x,), bwd)


def tmean(x, axis=None):
    x = as_tensor(x)
    n = x.size if axis is None else x.shape[axis]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, x.shape).astype(x.dtype, copy=True),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, x.shape).astype(x.dtype, copy=True),)

    return _finalize("mean", x.data.mean(axis=axis), (x,), bwd)
