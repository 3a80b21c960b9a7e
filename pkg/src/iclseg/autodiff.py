"""Minimal dense-tensor reverse-mode autodiff on numpy.

A ``Tensor`` wraps an ndarray of 32- or 64-bit floats. Differentiable
operations record themselves on the innermost active ``GradTape``;
``GradTape.backward`` replays the records in reverse execution order and
accumulates gradients into ``Tensor.grad``. Outside a tape, every
operation is a plain numpy computation (this is the inference path).

There is no general broadcasting: elementwise ops require equal shapes,
and the only mixed-shape primitives are the dedicated bias adds and the
normalization layers, each with its own hand-written backward rule.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "GradTape",
    "ShapeError",
    "NumericError",
    "record_op",
    "tensor",
    "detach",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "batch_select",
    "tsum",
    "tmean",
    "square",
    "tlog",
    "relu",
    "gelu",
    "softmax",
    "layer_norm",
    "group_norm",
    "conv2d",
    "avg_pool2",
    "bilinear_upsample",
    "add_row_bias",
    "grad_check",
]

_FLOAT_TYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values where finite ones are required."""


class Tensor:
    """Dense n-dimensional float array, optionally tracked for gradients.

    ``grad`` stays ``None`` until a backward pass deposits something; a
    tensor never reached by backward keeps ``grad is None``, which all
    consumers treat as an exact zero.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_TYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    # operator sugar; tensor-tensor forms require equal shapes
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return _scalar_affine(self, 1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return _scalar_affine(self, 1.0, -float(other))

    def __rsub__(self, other):
        return _scalar_affine(self, -1.0, float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return _scalar_affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return _scalar_affine(self, 1.0 / float(other), 0.0)

    def __neg__(self):
        return _scalar_affine(self, -1.0, 0.0)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    """Build a tensor with an explicit dtype (float64 unless asked otherwise)."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def detach(t: Tensor) -> Tensor:
    """View of ``t`` cut out of the graph; contributes zero to upstream grads."""
    return Tensor(t.data)


# ---------------------------------------------------------------------------
# tape

class GradTape:
    """Ordered record of executed differentiable ops.

    Use as a context manager around the forward pass, then call
    ``backward`` on a scalar output. Replaying visits each recorded op
    exactly once, in reverse execution order; afterwards every reachable
    ``requires_grad`` tensor holds a populated ``grad`` (accumulated, not
    overwritten, so separate backwards of summed losses add up).
    """

    def __init__(self):
        self._records = []  # (out, inputs, backward_fn)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def __len__(self):
        return len(self._records)

    def backward(self, root: Tensor):
        if root.data.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {root.data.shape}")
        grads = {id(root): np.ones_like(root.data)}
        holders = {id(root): root}
        for out, inputs, bwd in reversed(self._records):
            gout = grads.get(id(out))
            if gout is None:
                continue
            for t, gin in zip(inputs, bwd(gout)):
                if gin is None:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gin
                else:
                    grads[key] = gin
                    holders[key] = t
        for key, t in holders.items():
            if t.requires_grad:
                g = grads[key]
                t.grad = g if t.grad is None else t.grad + g


_TAPE_STACK: list[GradTape] = []


def record_op(out: Tensor, inputs, backward_fn) -> Tensor:
    """Register a custom differentiable op on the active tape.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input,
    each shaped like the corresponding input. Public so that other modules
    can define fused primitives (e.g. the cross-entropy kernel).
    """
    if _TAPE_STACK and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPE_STACK[-1]._records.append((out, tuple(inputs), backward_fn))
    return out


def _require_same_shape(a: Tensor, b: Tensor, opname: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{opname}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# elementwise / scalar

def _scalar_affine(x: Tensor, scale: float, shift: float) -> Tensor:
    out = Tensor(x.data * scale + shift)

    def bwd(g):
        return (g * scale if x.requires_grad else None,)

    return record_op(out, (x,), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    out = Tensor(a.data + b.data)

    def bwd(g):
        return (g if a.requires_grad else None, g if b.requires_grad else None)

    return record_op(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)

    def bwd(g):
        return (g if a.requires_grad else None, -g if b.requires_grad else None)

    return record_op(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)

    def bwd(g):
        return (g * b.data if a.requires_grad else None,
                g * a.data if b.requires_grad else None)

    return record_op(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "div")
    out = Tensor(a.data / b.data)

    def bwd(g):
        ga = g / b.data if a.requires_grad else None
        gb = -g * a.data / (b.data * b.data) if b.requires_grad else None
        return (ga, gb)

    return record_op(out, (a, b), bwd)


def square(x: Tensor) -> Tensor:
    out = Tensor(x.data * x.data)

    def bwd(g):
        return (2.0 * x.data * g if x.requires_grad else None,)

    return record_op(out, (x,), bwd)


def tlog(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))

    def bwd(g):
        return (g / x.data if x.requires_grad else None,)

    return record_op(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def bwd(g):
        return (g * (x.data > 0.0) if x.requires_grad else None,)

    return record_op(out, (x,), bwd)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * phi)

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (phi + x.data * pdf),)

    return record_op(out, (x,), bwd)


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def bwd(g):
        return (g.reshape(x.data.shape) if x.requires_grad else None,)

    return record_op(out, (x,), bwd)


def transpose(x: Tensor) -> Tensor:
    """Matrix transpose (2-d only)."""
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.data.shape}")
    out = Tensor(np.ascontiguousarray(x.data.T))

    def bwd(g):
        return (g.T if x.requires_grad else None,)

    return record_op(out, (x,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = list(tensors)
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        grads = []
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                grads.append(g[tuple(idx)])
            else:
                grads.append(None)
        return grads

    return record_op(out, ts, bwd)


def batch_select(x: Tensor, i: int) -> Tensor:
    """Pick element ``i`` along the leading (batch) axis."""
    out = Tensor(x.data[i])

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        gx = np.zeros_like(x.data)
        gx[i] = g
        return (gx,)

    return record_op(out, (x,), bwd)


# ---------------------------------------------------------------------------
# reductions

def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, x.data.ndim)
    out = Tensor(x.data.sum(axis=axes, keepdims=keepdims))

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return record_op(out, (x,), bwd)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, x.data.ndim)
    n = 1
    for a in axes:
        n *= x.data.shape[a]
    out = Tensor(x.data.mean(axis=axes, keepdims=keepdims))

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.data.shape).copy(),)

    return record_op(out, (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects matrices, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return (ga, gb)

    return record_op(out, (a, b), bwd)


def add_row_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-d bias to every row of an (n, d) matrix."""
    if x.data.ndim != 2 or bias.data.ndim != 1 or x.data.shape[1] != bias.data.shape[0]:
        raise ShapeError(f"add_row_bias: {x.data.shape} with bias {bias.data.shape}")
    out = Tensor(x.data + bias.data)

    def bwd(g):
        return (g if x.requires_grad else None,
                g.sum(axis=0) if bias.requires_grad else None)

    return record_op(out, (x, bias), bwd)


# ---------------------------------------------------------------------------
# softmax

def _softmax_forward(x, axis):
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_backward(y, g, axis):
    return y * (g - (g * y).sum(axis=axis, keepdims=True))


def softmax(x: Tensor, axis: int) -> Tensor:
    """Max-subtracted softmax along ``axis``; slices sum to 1."""
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.data.shape}")
    y = _softmax_forward(x.data, axis)
    out = Tensor(y)

    def bwd(g):
        return (_softmax_backward(y, g, axis) if x.requires_grad else None,)

    return record_op(out, (x,), bwd)


# ---------------------------------------------------------------------------
# normalization

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(f"layer_norm params must be ({d},), got {gamma.data.shape} / {beta.data.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def bwd(g):
        gg = g * gamma.data
        gx = None
        if x.requires_grad:
            gx = inv * (gg - gg.mean(axis=-1, keepdims=True)
                        - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(x.data.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gbeta = g.sum(axis=lead) if beta.requires_grad else None
        return (gx, ggamma, gbeta)

    return record_op(out, (x, gamma, beta), bwd)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Single-group norm over (c, h, w) per sample, per-channel scale/shift.

    Accepts (c, h, w) or (b, c, h, w); statistics never couple batch
    entries, so batch composition cannot leak into single-sample results.
    """
    xd = x.data
    squeeze = xd.ndim == 3
    if squeeze:
        xd = xd[None]
    b, c, h, w = xd.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"group_norm params must be ({c},), got {gamma.data.shape} / {beta.data.shape}")
    axes = (1, 2, 3)
    mu = xd.mean(axis=axes, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data[:, None, None] + beta.data[:, None, None]
    out = Tensor(y[0] if squeeze else y)

    def bwd(g):
        gb = g[None] if squeeze else g
        gg = gb * gamma.data[:, None, None]
        gx = None
        if x.requires_grad:
            gx = inv * (gg - gg.mean(axis=axes, keepdims=True)
                        - xhat * (gg * xhat).mean(axis=axes, keepdims=True))
            if squeeze:
                gx = gx[0]
        ggamma = (gb * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = gb.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        return (gx, ggamma, gbeta)

    return record_op(out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# convolution / pooling / interpolation

def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 cross-correlation with kernel 1x1 or 3x3 (zero pad 1).

    ``x`` is (c, h, w) or (b, c, h, w); ``w`` is (c_out, c_in, k, k).
    Spatial size is preserved. ``bias``, when given, is per output channel.
    """
    xd = x.data
    squeeze = xd.ndim == 3
    if squeeze:
        xd = xd[None]
    if xd.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: input {x.data.shape}, weights {w.data.shape}")
    b, cin, h, wd = xd.shape
    cout, cin_w, kh, kw = w.data.shape
    if kh != kw or kh not in (1, 3):
        raise ShapeError(f"conv2d: kernel must be 1x1 or 3x3, got {kh}x{kw}")
    if cin != cin_w:
        raise ShapeError(f"conv2d: input channels {cin} != weight channels {cin_w}")
    if bias is not None and bias.data.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.data.shape}, expected ({cout},)")

    hw = h * wd
    if kh == 1:
        cols = xd.reshape(b, cin, hw)
        w2 = w.data.reshape(cout, cin)
    else:
        xp = np.zeros((b, cin, h + 2, wd + 2), dtype=xd.dtype)
        xp[:, :, 1:-1, 1:-1] = xd
        # (cin, ki, kj) layout must match w.reshape(cout, cin * 9)
        cols = np.empty((b, cin * 9, hw), dtype=xd.dtype)
        view = cols.reshape(b, cin, 3, 3, hw)
        for ki in range(3):
            for kj in range(3):
                view[:, :, ki, kj] = xp[:, :, ki:ki + h, kj:kj + wd].reshape(b, cin, hw)
        w2 = w.data.reshape(cout, cin * 9)

    y = (w2 @ cols).reshape(b, cout, h, wd)
    if bias is not None:
        y = y + bias.data[:, None, None]
    out = Tensor(y[0] if squeeze else y)

    def bwd(g):
        gb4 = g[None] if squeeze else g
        g2 = gb4.reshape(b, cout, hw)
        gw = None
        if w.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.data.shape)
        gx = None
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2)
            if kh == 1:
                gx = dcols.reshape(b, cin, h, wd)
            else:
                dcols = dcols.reshape(b, cin, 3, 3, h, wd)
                gxp = np.zeros((b, cin, h + 2, wd + 2), dtype=xd.dtype)
                for ki in range(3):
                    for kj in range(3):
                        gxp[:, :, ki:ki + h, kj:kj + wd] += dcols[:, :, ki, kj]
                gx = gxp[:, :, 1:-1, 1:-1]
            if squeeze:
                gx = gx[0]
        gbias = None
        if bias is not None and bias.requires_grad:
            gbias = gb4.sum(axis=(0, 2, 3))
        if bias is None:
            return (gx, gw)
        return (gx, gw, gbias)

    inputs = (x, w) if bias is None else (x, w, bias)
    return record_op(out, inputs, bwd)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 mean pooling with stride 2; spatial dims must be even."""
    xd = x.data
    squeeze = xd.ndim == 3
    if squeeze:
        xd = xd[None]
    b, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    y = xd.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    out = Tensor(y[0] if squeeze else y)

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        gb = g[None] if squeeze else g
        gx = np.repeat(np.repeat(gb, 2, axis=2), 2, axis=3) * 0.25
        return (gx[0] if squeeze else gx,)

    return record_op(out, (x,), bwd)


_INTERP_CACHE: dict = {}


def _interp_matrix(n_out: int, n_in: int, dtype) -> np.ndarray:
    """Row-interpolation matrix for align-corners-false bilinear resizing.

    Source coordinate for output index i is (i + 0.5) * n_in / n_out - 0.5,
    clamped into [0, n_in - 1]. Rows sum to 1, so constants are preserved.
    """
    key = (n_out, n_in, np.dtype(dtype).str)
    cached = _INTERP_CACHE.get(key)
    if cached is not None:
        return cached
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, i0), 1.0 - w1)
    np.add.at(mat, (rows, i1), w1)
    mat = mat.astype(dtype)
    _INTERP_CACHE[key] = mat
    return mat


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the trailing two axes (align-corners-false)."""
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"bilinear_upsample: output size {out_h}x{out_w} must be positive")
    h, w = x.data.shape[-2:]
    if out_h < h or out_w < w:
        raise ValueError(f"bilinear_upsample: target {out_h}x{out_w} smaller than input {h}x{w}")
    rh = _interp_matrix(out_h, h, x.data.dtype)
    rw = _interp_matrix(out_w, w, x.data.dtype)
    out = Tensor(np.matmul(np.matmul(rh, x.data), rw.T))

    def bwd(g):
        if not x.requires_grad:
            return (None,)
        return (np.matmul(np.matmul(rh.T, g), rw),)

    return record_op(out, (x,), bwd)


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(f, x: Tensor, step: float = 1e-5, sample: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central finite-difference grads.

    ``f`` maps ``x`` to a scalar Tensor. Error per element is
    |a - n| / max(1, |a|, |n|). ``sample`` restricts the numeric probe to
    that many randomly chosen elements (the analytic pass always covers
    everything), which keeps composed-loss checks affordable.
    """
    if x.data.dtype != np.float64:
        raise ValueError("grad_check requires float64 inputs")
    if not x.requires_grad:
        raise ValueError("grad_check target must require grad")

    x.grad = None
    with GradTape() as tape:
        y = f(x)
        if y.data.size != 1:
            raise ShapeError(f"grad_check: f must return a scalar, got shape {y.data.shape}")
        if not np.isfinite(y.data).all():
            raise NumericError("grad_check: f produced non-finite output")
        tape.backward(y)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None

    flat = x.data.reshape(-1)
    n = flat.size
    if sample is not None and sample < n:
        gen = rng if rng is not None else np.random.default_rng(0)
        indices = gen.choice(n, size=sample, replace=False)
    else:
        indices = np.arange(n)

    worst = 0.0
    aflat = analytic.reshape(-1)
    for i in indices:
        orig = flat[i]
        flat[i] = orig + step
        yp = float(f(x).data.reshape(-1)[0])
        flat[i] = orig - step
        ym = float(f(x).data.reshape(-1)[0])
        flat[i] = orig
        if not (math.isfinite(yp) and math.isfinite(ym)):
            raise NumericError("grad_check: non-finite value during finite differences")
        numeric = (yp - ym) / (2.0 * step)
        a = aflat[i]
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        if err > worst:
            worst = err
    return worst
