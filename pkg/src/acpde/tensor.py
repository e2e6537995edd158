"""Reverse-mode automatic differentiation on numpy arrays.

Define-by-run: ops execute eagerly on float64 arrays and, when a GradientTape
is active, append themselves to it in creation order. That order is already
topological, so the backward pass is a single reversed sweep. A tape is built
fresh for every training iteration and can run backward exactly once.

Outside an active tape, ops compute values only; nothing is recorded and no
gradients flow (this is the eval path).
"""

import math

import numpy as np

_active_tape = None


class GradientTape:
    """Records ops for one forward pass; single-use backward."""

    def __init__(self):
        self.nodes = []
        self._used = False

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("a GradientTape is already active")
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False

    def backward(self, loss):
        """Propagate d(loss)/d(node) into .grad of every recorded tensor."""
        if self._used:
            raise RuntimeError("tape already consumed; rebuild the graph before backward")
        if _active_tape is self:
            raise RuntimeError("cannot run backward while the tape is still recording")
        self._used = True
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.grad is not None:
                node._backward(node.grad)

    def clear(self):
        self.nodes.clear()
        self._used = True


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are plain floats
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(constant(np.full_like(self.data, float(other))), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data):
    return Tensor(data, requires_grad=False)


def parameter(data):
    return Tensor(data, requires_grad=True)


def _record(out, backward):
    if _active_tape is not None and out.requires_grad:
        out._backward = backward
        _active_tape.nodes.append(out)
    return out


def _wants_grad(*tensors):
    return _active_tape is not None and any(t.requires_grad for t in tensors)


def _accum(t, g):
    # never mutate a gradient array in place: it may be shared by pass-through
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _reduce_to(g, shape):
    # undo numpy broadcasting: sum over axes that were expanded
    if g.shape == shape:
        return g
    if shape == ():
        return g.sum()
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _as_operands(a, b):
    if not isinstance(b, Tensor):
        b = constant(np.asarray(b, dtype=np.float64))
    return a, b


def _check_binary_shapes(a, b, opname):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ValueError(
            f"{opname}: shapes {a.data.shape} and {b.data.shape} are not broadcastable"
        ) from None


def add(a, b):
    a, b = _as_operands(a, b)
    _check_binary_shapes(a, b, "add")
    out = Tensor(a.data + b.data, requires_grad=_wants_grad(a, b))

    def backward(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(g, b.data.shape))

    return _record(out, backward)


def sub(a, b):
    a, b = _as_operands(a, b)
    _check_binary_shapes(a, b, "sub")
    out = Tensor(a.data - b.data, requires_grad=_wants_grad(a, b))

    def backward(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(-g, b.data.shape))

    return _record(out, backward)


def mul(a, b):
    a, b = _as_operands(a, b)
    _check_binary_shapes(a, b, "mul")
    out = Tensor(a.data * b.data, requires_grad=_wants_grad(a, b))

    def backward(g):
        _accum(a, _reduce_to(g * b.data, a.data.shape))
        _accum(b, _reduce_to(g * a.data, b.data.shape))

    return _record(out, backward)


def neg(a):
    out = Tensor(-a.data, requires_grad=_wants_grad(a))

    def backward(g):
        _accum(a, -g)

    return _record(out, backward)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(
            f"matmul expects 2-d operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(
            f"matmul inner dimensions differ: {a.data.shape} vs {b.data.shape}"
        )
    out = Tensor(a.data @ b.data, requires_grad=_wants_grad(a, b))

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _record(out, backward)


def relu(x):
    # subgradient 1 at the origin: zero-initialized batch-norm shifts sit
    # exactly at 0 and must still receive gradient to leave it
    mask = x.data >= 0
    out = Tensor(np.where(mask, x.data, 0.0), requires_grad=_wants_grad(x))

    def backward(g):
        _accum(x, g * mask)

    return _record(out, backward)


def square(x):
    out = Tensor(x.data * x.data, requires_grad=_wants_grad(x))

    def backward(g):
        _accum(x, g * (2.0 * x.data))

    return _record(out, backward)


def rowsum(x):
    """Sum over the last axis, keepdims: (B, H) -> (B, 1)."""
    out = Tensor(x.data.sum(axis=1, keepdims=True), requires_grad=_wants_grad(x))

    def backward(g):
        _accum(x, np.broadcast_to(g, x.data.shape).copy())

    return _record(out, backward)


def rowmean(x):
    """Mean over the last axis, keepdims: (B, H) -> (B, 1)."""
    h = x.data.shape[1]
    out = Tensor(x.data.mean(axis=1, keepdims=True), requires_grad=_wants_grad(x))

    def backward(g):
        _accum(x, np.broadcast_to(g / h, x.data.shape).copy())

    return _record(out, backward)


def reduce_mean(x):
    """Mean over all elements -> scalar tensor."""
    out = Tensor(x.data.mean(), requires_grad=_wants_grad(x))

    def backward(g):
        _accum(x, np.full_like(x.data, float(g) / x.data.size))

    return _record(out, backward)


def concat_cols(a, b):
    """Column-wise concatenation of two (B, *) blocks."""
    if a.data.shape[0] != b.data.shape[0]:
        raise ValueError(
            f"concat_cols row counts differ: {a.data.shape} vs {b.data.shape}"
        )
    na = a.data.shape[1]
    out = Tensor(np.hstack([a.data, b.data]), requires_grad=_wants_grad(a, b))

    def backward(g):
        _accum(a, g[:, :na])
        _accum(b, g[:, na:])

    return _record(out, backward)


def minimum_const(x, c):
    """Elementwise min(x, c); gradient passes where x <= c."""
    mask = x.data <= c
    out = Tensor(np.where(mask, x.data, c), requires_grad=_wants_grad(x))

    def backward(g):
        _accum(x, g * mask)

    return _record(out, backward)


def clipped_square(x, dc):
    """Huber-style clipped square: x^2 inside |x| <= dc, the unique C^1
    linear extension 2*dc*|x| - dc^2 outside."""
    if dc <= 0:
        raise ValueError(f"clip threshold must be positive, got {dc}")
    if math.isinf(dc):
        return square(x)
    inside = np.abs(x.data) <= dc
    val = np.where(inside, x.data * x.data, 2.0 * dc * np.abs(x.data) - dc * dc)
    out = Tensor(val, requires_grad=_wants_grad(x))

    def backward(g):
        slope = np.where(inside, 2.0 * x.data, 2.0 * dc * np.sign(x.data))
        _accum(x, g * slope)

    return _record(out, backward)


def batchnorm_train(x, scale, shift, eps):
    """Batch normalization over axis 0 with backward through the batch
    statistics. Returns (out, batch_mean, batch_var); the caller owns the
    running-stat update. Variance is the biased batch variance."""
    b = x.data.shape[0]
    if b == 0:
        raise ValueError("batchnorm on an empty batch")
    mu = x.data.mean(axis=0)
    xc = x.data - mu
    var = (xc * xc).mean(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * scale.data + shift.data, requires_grad=_wants_grad(x, scale, shift))

    def backward(g):
        if scale.requires_grad:
            _accum(scale, (g * xhat).sum(axis=0))
        if shift.requires_grad:
            _accum(shift, g.sum(axis=0))
        if x.requires_grad:
            gh = g * scale.data
            _accum(
                x,
                inv / b * (b * gh - gh.sum(axis=0) - xhat * (gh * xhat).sum(axis=0)),
            )

    return _record(out, backward), mu, var


def batchnorm_eval(x, scale, shift, running_mean, running_var, eps):
    """Normalization with frozen statistics; a pure function of its inputs."""
    inv = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean) * inv
    out = Tensor(xhat * scale.data + shift.data, requires_grad=_wants_grad(x, scale, shift))

    def backward(g):
        if scale.requires_grad:
            _accum(scale, (g * xhat).sum(axis=0))
        if shift.requires_grad:
            _accum(shift, g.sum(axis=0))
        if x.requires_grad:
            _accum(x, g * (scale.data * inv))

    return _record(out, backward)
