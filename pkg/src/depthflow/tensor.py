"""Dense tensors over numpy with a reverse-mode gradient tape.

Row-major numpy arrays hold the values; a thread-local `Tape` records every
primitive application whose inputs require gradients, and `backward` replays
the recorded vector-Jacobian products in reverse to produce a gradient map.

Every primitive checks that its result is finite: NaN or Inf raises
`NonFiniteError` instead of propagating silently. A tape and the tensors
recorded on it are confined to one thread; tensors without tape linkage are
read-only values and may be shared across threads.

Broadcasting is restricted to leading-batch expansion: two operands must
have equal shapes, or the smaller shape must equal the trailing dims of the
larger one. Anything else needs an explicit `reshape`.
"""

from __future__ import annotations

import threading

import numpy as np
from scipy.special import erf as _erf

__all__ = [
    "Tensor",
    "Tape",
    "no_tape",
    "active_tape",
    "backward",
    "ShapeError",
    "NonFiniteError",
    "TapeError",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "narrow",
    "softmax",
    "layer_norm",
    "gelu",
    "mse",
    "sum_all",
    "mean_all",
    "gather_rows",
]

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
# python floats stay "weak" under numpy promotion and preserve float32 operands
_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))


class ShapeError(ValueError):
    """Operand shapes or element types violate a primitive's contract."""


class NonFiniteError(ArithmeticError):
    """A primitive produced NaN or Inf; the result is an error, never silent."""


class TapeError(RuntimeError):
    """Gradient-tape misuse: reuse after backward, detached or non-scalar loss."""


def _check_finite(data, op):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    """A dense float array, optionally linked to the tape that produced it."""

    __slots__ = ("data", "requires_grad", "tape")

    def __init__(self, data, dtype=None, requires_grad=False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        """A view of the same values with no tape linkage and no gradient."""
        return _wrap(self.data)

    def copy(self):
        return _wrap(self.data.copy(), self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(arr, requires_grad=False):
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.requires_grad = requires_grad
    t.tape = None
    return t


_STATE = threading.local()


def _stack():
    s = getattr(_STATE, "stack", None)
    if s is None:
        s = []
        _STATE.stack = s
    return s


def active_tape():
    s = _stack()
    return s[-1] if s else None


class Tape:
    """Append-only record of primitive applications on one thread.

    Entering the context makes this the active tape; primitives whose inputs
    require gradients append a node. `backward` may run once per recording;
    running it again without appending new nodes is an error.
    """

    def __init__(self):
        self.nodes = []
        self._spent = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _stack().pop()
        assert popped is self, "tape stack corrupted"
        return False


class no_tape:
    """Context that hides any active tape; everything inside is pure evaluation."""

    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


def _record(op, out_data, inputs, vjp):
    _check_finite(out_data, op)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = _wrap(out_data, requires_grad=True)
        out.tape = tape
        tape.nodes.append(_Node(out, inputs, vjp))
        tape._spent = False
        return out
    return _wrap(out_data)


def backward(loss):
    """Accumulate d(loss)/d(x) for every tensor recorded on the loss's tape.

    Returns a map keyed by Tensor identity; parameters that did not
    contribute to the loss are simply absent (gradient zero).
    """
    if not isinstance(loss, Tensor):
        raise TapeError("loss must be a Tensor")
    if loss.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise TapeError("loss is not attached to a tape")
    if tape._spent:
        raise TapeError("backward already ran on this tape; record a fresh tape")
    tape._spent = True

    grads = {loss: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(node.out)
        if g is None:
            continue
        for inp, gin in zip(node.inputs, node.vjp(g)):
            if gin is None or not inp.requires_grad:
                continue
            acc = grads.get(inp)
            grads[inp] = gin if acc is None else acc + gin
    return grads


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _check_dtypes(op, *tensors):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise ShapeError(f"{op}: mixed element types {dt} and {t.dtype}")


def _check_suffix(op, sa, sb):
    k = min(len(sa), len(sb))
    if sa[len(sa) - k:] != sb[len(sb) - k:]:
        raise ShapeError(f"{op}: shapes {sa} and {sb} are not leading-batch compatible")


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


def _elementwise(op, a, b, fwd, vjp_pair, vjp_const):
    a = _as_tensor(a)
    if isinstance(b, Tensor):
        _check_dtypes(op, a, b)
        _check_suffix(op, a.shape, b.shape)
        out = fwd(a.data, b.data)

        def vjp(g):
            ga, gb = vjp_pair(g, a.data, b.data)
            return (_unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape))

        return _record(op, out, (a, b), vjp)
    c = float(b)
    out = fwd(a.data, c)

    def vjp(g):
        return (vjp_const(g, a.data, c),)

    return _record(op, out, (a,), vjp)


def add(a, b):
    return _elementwise(
        "add", a, b,
        lambda x, y: x + y,
        lambda g, x, y: (g, g),
        lambda g, x, c: g,
    )


def sub(a, b):
    return _elementwise(
        "sub", a, b,
        lambda x, y: x - y,
        lambda g, x, y: (g, -g),
        lambda g, x, c: g,
    )


def mul(a, b):
    return _elementwise(
        "mul", a, b,
        lambda x, y: x * y,
        lambda g, x, y: (g * y, g * x),
        lambda g, x, c: g * c,
    )


def neg(a):
    a = _as_tensor(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def scale(a, s):
    """Multiply by a python scalar constant."""
    a = _as_tensor(a)
    s = float(s)
    return _record("scale", a.data * s, (a,), lambda g: (g * s,))


def matmul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents disagree, {a.shape} @ {b.shape}")
    _check_dtypes("matmul", a, b)
    out = a.data @ b.data

    def vjp(g):
        return (g @ b.data.T, a.data.T @ g)

    return _record("matmul", out, (a, b), vjp)


def transpose(a):
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {a.shape}")
    return _record("transpose", a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    in_shape = a.data.shape
    return _record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(in_shape),))


def concat(parts, axis):
    parts = tuple(_as_tensor(p) for p in parts)
    if not parts:
        raise ShapeError("concat: need at least one operand")
    _check_dtypes("concat", *parts)
    nd = parts[0].ndim
    for p in parts[1:]:
        if p.ndim != nd:
            raise ShapeError("concat: rank mismatch")
    if not -nd <= axis < nd:
        raise ShapeError(f"concat: axis {axis} out of range for rank {nd}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([p.shape[axis if axis >= 0 else nd + axis] for p in parts])[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record("concat", out, parts, vjp)


def narrow(a, axis, start, length):
    """Slice `length` entries of `axis` starting at `start`."""
    a = _as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"narrow: axis {axis} out of range for rank {a.ndim}")
    axis = axis if axis >= 0 else a.ndim + axis
    extent = a.shape[axis]
    if not (0 <= start and length >= 1 and start + length <= extent):
        raise ShapeError(f"narrow: [{start}, {start + length}) outside extent {extent}")
    index = tuple(
        slice(start, start + length) if d == axis else slice(None) for d in range(a.ndim)
    )
    in_shape = a.data.shape

    def vjp(g):
        out = np.zeros(in_shape, dtype=g.dtype)
        out[index] = g
        return (out,)

    return _record("narrow", a.data[index], (a,), vjp)


def softmax(a, axis):
    a = _as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for rank {a.ndim}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        gy = g * y
        return (gy - y * gy.sum(axis=axis, keepdims=True),)

    return _record("softmax", y, (a,), vjp)


def layer_norm(x, gain, bias, eps):
    """Normalize the last axis to zero mean and unit variance, then affine."""
    x = _as_tensor(x)
    gain = _as_tensor(gain)
    bias = _as_tensor(bias)
    if x.ndim < 1:
        raise ShapeError("layer_norm: input must have at least one axis")
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(
            f"layer_norm: gain/bias must have shape ({width},), got {gain.shape} and {bias.shape}"
        )
    _check_dtypes("layer_norm", x, gain, bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def vjp(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(x.data.ndim - 1))
        dgain = (g * xhat).sum(axis=lead) if lead else g * xhat
        dbias = g.sum(axis=lead) if lead else g
        return (dx, dgain.reshape(gain.data.shape), dbias.reshape(bias.data.shape))

    return _record("layer_norm", y, (x, gain, bias), vjp)


def gelu(a):
    """Exact Gaussian-error linear unit, x * Phi(x)."""
    a = _as_tensor(a)
    x = a.data
    phi_cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    y = x * phi_cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (phi_cdf + x * pdf),)

    return _record("gelu", y, (a,), vjp)


def mse(a, b):
    """Mean squared error over all elements; gradient is 2(a - b)/n."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes differ, {a.shape} vs {b.shape}")
    _check_dtypes("mse", a, b)
    diff = a.data - b.data
    n = max(1, diff.size)
    out = np.asarray((diff * diff).sum() / n, dtype=a.dtype)

    def vjp(g):
        d = g * (2.0 / n) * diff
        return (d, -d)

    return _record("mse", out, (a, b), vjp)


def sum_all(a):
    a = _as_tensor(a)
    out = np.asarray(a.data.sum(), dtype=a.dtype)
    shape = a.data.shape

    def vjp(g):
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

    return _record("sum_all", out, (a,), vjp)


def mean_all(a):
    a = _as_tensor(a)
    n = max(1, a.size)
    out = np.asarray(a.data.sum() / n, dtype=a.dtype)
    shape = a.data.shape

    def vjp(g):
        return (np.broadcast_to(g / n, shape).astype(g.dtype, copy=True),)

    return _record("mean_all", out, (a,), vjp)


def gather_rows(table, idx):
    """Select rows of a 2-D table by integer index; gradients scatter-add back."""
    table = _as_tensor(table)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-D, got {table.shape}")
    idx = np.asarray(idx)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("gather_rows: index must be a 1-D integer array")
    rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise ShapeError(f"gather_rows: index outside [0, {rows})")
    shape = table.data.shape

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _record("gather_rows", table.data[idx], (table,), vjp)
