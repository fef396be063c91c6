"""Dense float64 tensors with taped reverse-mode differentiation.

All forward math runs on plain numpy arrays. While a ``Tape`` is active
(``with Tape() as tape: ...``) every operation whose inputs require
gradients appends its backward rule to the tape; ``backward(loss, tape)``
then replays the records once in reverse. Without an active tape the same
functions are ordinary numpy computations, which keeps repeated evaluation
(finite differences, inference) free of bookkeeping overhead.

Tensors are treated as immutable once created; only ``grad`` is written
after the fact. Independent forward/backward passes on disjoint tapes may
therefore run concurrently (the tape stack is thread-local).
"""

from __future__ import annotations

import threading
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import DimensionError, TapeError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """Row-major float64 array, optionally participating in a tape.

    ``grad``, when populated by :func:`backward`, is a plain numpy array of
    the same shape as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
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

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; constants are wrapped on the fly.
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

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Tape machinery


_TLS = threading.local()


def _stack():
    s = getattr(_TLS, "stack", None)
    if s is None:
        s = _TLS.stack = []
    return s


class Tape:
    """Records operations in execution order for one backward pass.

    Execution order is a topological order by construction: an operation is
    recorded only after its inputs already exist.
    """

    __slots__ = ("_records", "_consumed")

    def __init__(self):
        self._records = []
        self._consumed = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().remove(self)
        return False

    def __len__(self):
        return len(self._records)


def _record(out: Tensor, inputs, backward_fn) -> None:
    stack = getattr(_TLS, "stack", None)
    if stack and out.requires_grad:
        stack[-1]._records.append((out, inputs, backward_fn))


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every requires_grad leaf.

    The tape is consumed; calling backward on it again raises ``TapeError``.
    Intermediate (non-leaf) gradients are discarded as soon as their
    producer record has been processed.
    """
    if tape._consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    tape._consumed = True
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not any(out is loss for out, _, _ in tape._records):
        raise TapeError("loss tensor was not produced on this tape")

    grads = {id(loss): np.ones_like(loss.data)}
    owners = {id(loss): loss}
    for out, inputs, fn in reversed(tape._records):
        key = id(out)
        g = grads.pop(key, None)
        owners.pop(key, None)
        if g is None:
            continue  # this output did not influence the loss
        for t, c in zip(inputs, fn(g)):
            if c is None or not t.requires_grad:
                continue
            k = id(t)
            if k in grads:
                grads[k] = grads[k] + c
            else:
                grads[k] = c
                owners[k] = t
    for k, t in owners.items():
        t.grad = np.ascontiguousarray(grads[k])


# ---------------------------------------------------------------------------
# Helpers


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(a, b, data, da, db) -> Tensor:
    rg = a.requires_grad or b.requires_grad
    out = Tensor(data, rg)
    if rg:
        _record(out, (a, b), lambda g: (da(g), db(g)))
    return out


# ---------------------------------------------------------------------------
# Elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(
        a,
        b,
        a.data + b.data,
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(g, b.data.shape),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(
        a,
        b,
        a.data - b.data,
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: -_unbroadcast(g, b.data.shape),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _binary(
        a,
        b,
        a.data * b.data,
        lambda g: _unbroadcast(g * b.data, a.data.shape),
        lambda g: _unbroadcast(g * a.data, b.data.shape),
    )


def neg(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(-x.data, x.requires_grad)
    _record(out, (x,), lambda g: (-g,))
    return out


def scale(x, s: float) -> Tensor:
    x = as_tensor(x)
    s = float(s)
    out = Tensor(x.data * s, x.requires_grad)
    _record(out, (x,), lambda g: (g * s,))
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must have at least 2 dimensions")
    data = np.matmul(a.data, b.data)

    def da(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)

    def db(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)

    return _binary(a, b, data, da, db)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    out = Tensor(x.data.reshape(shape), x.requires_grad)
    in_shape = x.data.shape
    _record(out, (x,), lambda g: (g.reshape(in_shape),))
    return out


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)), x.requires_grad)
    _record(out, (x,), lambda g: (g.transpose(inv),))
    return out


def slice_axis(x, axis: int, start: int, stop: int) -> Tensor:
    x = as_tensor(x)
    idx = (slice(None),) * axis + (slice(start, stop),)
    out = Tensor(np.ascontiguousarray(x.data[idx]), x.requires_grad)
    shape = x.data.shape

    def bw(g):
        gx = np.zeros(shape)
        gx[idx] = g
        return (gx,)

    _record(out, (x,), bw)
    return out


def concat(parts, axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    rg = any(p.requires_grad for p in parts)
    out = Tensor(data, rg)
    if rg:
        sizes = [p.data.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def bw(g):
            return tuple(np.ascontiguousarray(c) for c in np.split(g, splits, axis=axis))

        _record(out, tuple(parts), bw)
    return out


def roll2(x, dy: int, dx: int, axes=(1, 2)) -> Tensor:
    """out[..., y, x, ...] = in[..., (y+dy) mod H, (x+dx) mod W, ...]."""
    x = as_tensor(x)
    out = Tensor(np.roll(x.data, (-dy, -dx), axis=axes), x.requires_grad)
    _record(out, (x,), lambda g: (np.roll(g, (dy, dx), axis=axes),))
    return out


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(), x.requires_grad)
    shape = x.data.shape
    _record(out, (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
    return out


# ---------------------------------------------------------------------------
# Nonlinearities and normalization


def softmax(x) -> Tensor:
    """Softmax over the last axis, with row-max subtraction for stability."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, x.requires_grad)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    _record(out, (x,), bw)
    return out


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last (channel) axis, then scale/shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(
            f"layer_norm affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match channel count {c}"
        )
    if eps <= 0.0:
        raise DimensionError("layer_norm eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data, x.requires_grad or gamma.requires_grad or beta.requires_grad)

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    _record(out, (x, gamma, beta), bw)
    return out


def gelu(x) -> Tensor:
    x = as_tensor(x)
    phi = 0.5 * (1.0 + special.erf(x.data / _SQRT2))
    out = Tensor(x.data * phi, x.requires_grad)

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (phi + x.data * pdf),)

    _record(out, (x,), bw)
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    t = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    out = Tensor(y, x.requires_grad)
    _record(out, (x,), lambda g: (g * y * (1.0 - y),))
    return out


def softplus(x) -> Tensor:
    """log(1 + exp(x)) computed without overflow."""
    x = as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data))), x.requires_grad)
    _record(out, (x,), lambda g: (g * _sigmoid(x.data),))
    return out


def embedding_lookup(table, index: np.ndarray) -> Tensor:
    """Gather rows of ``table`` ([V, ...]) by an integer index array."""
    table = as_tensor(table)
    index = np.asarray(index)
    out = Tensor(table.data[index], table.requires_grad)
    shape = table.data.shape

    def bw(g):
        gt = np.zeros(shape)
        np.add.at(gt, index.reshape(-1), g.reshape(-1, *shape[1:]))
        return (gt,)

    _record(out, (table,), bw)
    return out


# ---------------------------------------------------------------------------
# Spatial ops (NCHW layout)


def _conv_out_extent(n: int, k: int, padding: int, stride: int) -> int:
    span = n + 2 * padding - k
    if span < 0 or span % stride != 0:
        raise DimensionError(
            f"conv2d extent {n} with kernel {k}, padding {padding}, stride {stride} "
            "does not produce an integer output size"
        )
    return span // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, oh, ow))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    return cols.reshape(n, c * k * k, oh * ow)


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with OCkk weights."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError("conv2d expects 4-d input and weight")
    n, c, h, wd = x.data.shape
    o, cw, kh, kw = w.data.shape
    if cw != c:
        raise DimensionError(f"conv2d channel mismatch: input has {c}, weight expects {cw}")
    if kh != kw:
        raise DimensionError("conv2d supports square kernels only")
    k = kh
    oh = _conv_out_extent(h, k, padding, stride)
    ow = _conv_out_extent(wd, k, padding, stride)

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, k, stride, oh, ow)  # (N, C*k*k, oh*ow)
    w2 = w.data.reshape(o, c * k * k)
    out_data = np.matmul(w2, cols)  # (N, O, oh*ow)
    inputs = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.data.shape != (o,):
            raise DimensionError(f"conv2d bias shape {b.data.shape} does not match {o} filters")
        out_data = out_data + b.data[:, None]
        inputs.append(b)
    out = Tensor(out_data.reshape(n, o, oh, ow), any(t.requires_grad for t in inputs))

    def bw(g):
        g2 = g.reshape(n, o, oh * ow)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(o, c, k, k)
        gcols = np.matmul(w2.T, g2).reshape(n, c, k, k, oh, ow)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gcols[:, :, i, j]
        gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
        grads = [np.ascontiguousarray(gx), gw]
        if len(inputs) == 3:
            grads.append(g2.sum(axis=(0, 2)))
        return tuple(grads)

    _record(out, tuple(inputs), bw)
    return out


@lru_cache(maxsize=512)
def _resize_grid(n_in: int, n_out: int):
    # Half-pixel-center source coordinates with border replication.
    s = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    s = np.clip(s, 0.0, float(n_in - 1))
    i0 = np.floor(s).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = s - i0
    return i0, i1, w


def bilinear_resize(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear interpolation of NCHW maps (half-pixel-center convention)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("bilinear_resize expects a 4-d NCHW tensor")
    if out_h < 1 or out_w < 1:
        raise DimensionError("bilinear_resize target extents must be >= 1")
    n, c, h, w = x.data.shape
    if out_h == h and out_w == w:
        out = Tensor(x.data, x.requires_grad)
        _record(out, (x,), lambda g: (g,))
        return out

    y0, y1, wy = _resize_grid(h, out_h)
    x0, x1, wx = _resize_grid(w, out_w)
    w00 = np.outer(1.0 - wy, 1.0 - wx)
    w01 = np.outer(1.0 - wy, wx)
    w10 = np.outer(wy, 1.0 - wx)
    w11 = np.outer(wy, wx)
    d = x.data
    out_data = (
        w00 * d[:, :, y0[:, None], x0[None, :]]
        + w01 * d[:, :, y0[:, None], x1[None, :]]
        + w10 * d[:, :, y1[:, None], x0[None, :]]
        + w11 * d[:, :, y1[:, None], x1[None, :]]
    )
    out = Tensor(out_data, x.requires_grad)

    def bw(g):
        gt = np.moveaxis(g, (2, 3), (0, 1))  # (oh, ow, N, C)
        acc = np.zeros((h, w, n, c))
        for wgt, yy, xx in (
            (w00, y0, x0),
            (w01, y0, x1),
            (w10, y1, x0),
            (w11, y1, x1),
        ):
            np.add.at(acc, (yy[:, None], xx[None, :]), gt * wgt[..., None, None])
        return (np.moveaxis(acc, (0, 1), (2, 3)),)

    _record(out, (x,), bw)
    return out


def avg_pool2d(x, factor: int) -> Tensor:
    """Non-overlapping mean pooling of NCHW maps by an integer factor."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("avg_pool2d expects a 4-d NCHW tensor")
    n, c, h, w = x.data.shape
    if h % factor or w % factor:
        raise DimensionError(f"avg_pool2d factor {factor} does not divide {h}x{w}")
    oh, ow = h // factor, w // factor
    out = Tensor(x.data.reshape(n, c, oh, factor, ow, factor).mean(axis=(3, 5)), x.requires_grad)

    def bw(g):
        gi = np.broadcast_to(
            g[:, :, :, None, :, None] / (factor * factor), (n, c, oh, factor, ow, factor)
        )
        return (gi.reshape(n, c, h, w).copy(),)

    _record(out, (x,), bw)
    return out
