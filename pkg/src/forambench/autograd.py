"""Dense float64 tensors with tape-based reverse-mode differentiation.

Primitives operate on row-major numpy arrays and record themselves onto the
innermost active :class:`Tape` whenever an input is tracked.  With no tape
open every primitive is a pure function, so inference pays no autodiff cost.
Gradients accumulate additively into ``Tensor.grad``; clearing them is an
explicit step (see ``optim.Adam.zero_grad`` or ``Tensor.zero_grad``).
"""

from __future__ import annotations

import weakref
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from .errors import ContractError, DimensionError, NumericsError

_TAPES: list["Tape"] = []
_FINITE_CHECKS = False

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def set_finite_checks(enabled: bool) -> None:
    """Toggle NaN/Inf validation of every primitive output (off by default)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


class Tensor:
    """Row-major float64 array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_tape_ref")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self._tape_ref: weakref.ref | None = None

    # the tape is held weakly: a tape strongly references every node of its
    # graph, so a strong back-pointer would cycle and leave whole training
    # step graphs to the garbage collector instead of plain refcounting
    @property
    def _tape(self) -> "Tape | None":
        return self._tape_ref() if self._tape_ref is not None else None

    @_tape.setter
    def _tape(self, tape: "Tape | None") -> None:
        self._tape_ref = None if tape is None else weakref.ref(tape)

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
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flags = " grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flags})"

    # Arithmetic sugar; every overload routes through a recorded primitive.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


class Tape:
    """Ordered record of primitive applications for one reverse sweep.

    Nodes are appended in execution order, so reverse index order is a valid
    topological order; ``backward`` visits each recorded node at most once.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        popped = _TAPES.pop()
        assert popped is self, "tapes must nest"
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn: Callable) -> None:
        out.node_id = len(self._nodes)
        out._tape = self
        self._nodes.append((out, parents, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``grad`` of tracked leaf tensors."""
        if loss._tape is not self or loss.node_id is None:
            raise ContractError("loss is not recorded on this tape")
        if loss.data.size != 1:
            raise ContractError("backward requires a scalar loss")
        flowing: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for nid in range(loss.node_id, -1, -1):
            g = flowing.pop(nid, None)
            if g is None:
                continue
            _, parents, backward_fn = self._nodes[nid]
            for parent, pg in zip(parents, backward_fn(g)):
                if pg is None:
                    continue
                if _FINITE_CHECKS and not np.all(np.isfinite(pg)):
                    raise NumericsError("non-finite gradient")
                if parent._tape is self and parent.node_id is not None:
                    acc = flowing.get(parent.node_id)
                    flowing[parent.node_id] = pg if acc is None else acc + pg
                elif parent.requires_grad:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(out_data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    if _FINITE_CHECKS and not np.all(np.isfinite(out_data)):
        raise NumericsError("non-finite values in primitive output")
    out = Tensor(out_data)
    if _TAPES:
        tape = _TAPES[-1]
        if any(p.requires_grad or p._tape is tape for p in parents):
            tape._record(out, parents, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# --------------------------------------------------------------------------
# elementwise arithmetic
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.data.shape),
                            _unbroadcast(g * a.data, b.data.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.data.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def pow_(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    p = float(exponent)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def abs_(a) -> Tensor:
    a = _as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    a = _as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = np.ones_like(a.data)
    if lo is not None:
        inside *= a.data >= lo
    if hi is not None:
        inside *= a.data <= hi
    return _make(out, (a,), lambda g: (g * inside,))


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------

def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return _make(a.data * scale, (a,), lambda g: (g * scale,))


def gelu(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x * _INV_SQRT2))
    out = x * cdf

    def bw(g):
        return (g * (cdf + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI),)

    return _make(out, (a,), bw)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return _make(out, (a,), lambda g: (g * special.expit(a.data),))


def softmax(a) -> Tensor:
    """Stable softmax over the last axis; rows sum to 1."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), bw)


def cross_entropy(logits, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of integer ``labels`` over the last axis."""
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects (N, K) logits, got {logits.shape}")
    idx = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if idx.shape != (n,):
        raise DimensionError(f"labels shape {idx.shape} does not match batch {n}")
    if idx.min() < 0 or idx.max() >= k:
        raise ContractError("label index out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), idx].mean()

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), idx] -= 1.0
        return (p * (float(g) / n),)

    return _make(np.asarray(loss), (logits,), bw)


# --------------------------------------------------------------------------
# reductions and shape ops
# --------------------------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(np.asarray(out), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape) / count,)

    return _make(np.asarray(out), (a,), bw)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(ts), bw)


def roll(a, shifts: tuple[int, ...], axes: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    out = np.roll(a.data, shifts, axis=axes)
    back = tuple(-s for s in shifts)
    return _make(out, (a,), lambda g: (np.roll(g, back, axis=axes),))


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul expects tensors of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        return (_unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape))

    return _make(out, (a, b), bw)


def embedding(table, indices) -> Tensor:
    """Row lookup ``table[indices]`` with scatter-add gradient."""
    table = _as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError("embedding index out of range")
    out = table.data[idx]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(out, (table,), bw)


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"gamma/beta must have shape ({d},)")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return (dx, dgamma, dbeta)

    return _make(out, (a, gamma, beta), bw)


# --------------------------------------------------------------------------
# convolutions and spatial ops
# --------------------------------------------------------------------------

def _col2im(gcols: np.ndarray, shape: tuple[int, ...], kh: int, kw: int, stride: int) -> np.ndarray:
    n, c, hp, wp = shape
    ho, wo = gcols.shape[2], gcols.shape[3]
    gx = np.zeros(shape)
    for u in range(kh):
        for v in range(kw):
            gx[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += gcols[:, :, :, :, u, v]
    return gx


def _pad_nchw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return cols[:, :, ::stride, ::stride]


def conv2d(x, w, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation (no kernel flip) with zero padding."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError("conv2d expects NCHW input and OCHW kernel")
    n, c, h, wid = x.shape
    o, cw, kh, kw = w.shape
    if cw != c:
        raise DimensionError(f"kernel channels {cw} != input channels {c}")
    hp, wp = h + 2 * pad, wid + 2 * pad
    if kh > hp or kw > wp:
        raise DimensionError("kernel larger than padded input")
    if (hp - kh) % stride or (wp - kw) % stride:
        raise DimensionError("non-integral convolution output extent")
    xp = _pad_nchw(x.data, pad)
    cols = _im2col(xp, kh, kw, stride)
    out = np.einsum("ncyxuv,ocuv->noyx", cols, w.data, optimize=True)

    def bw(g):
        gw = np.einsum("noyx,ncyxuv->ocuv", g, cols, optimize=True)
        gcols = np.einsum("noyx,ocuv->ncyxuv", g, w.data, optimize=True)
        gx = _col2im(gcols, (n, c, hp, wp), kh, kw, stride)
        if pad:
            gx = gx[:, :, pad:hp - pad, pad:wp - pad]
        return (gx, gw)

    return _make(out, (x, w), bw)


def conv2d_transpose(y, w, stride: int = 1, pad: int = 0,
                     out_size: tuple[int, int] | None = None) -> Tensor:
    """Adjoint of :func:`conv2d` in its input: maps NOHW back to NCHW.

    The default output extent is (h-1)*stride + k - 2*pad. With stride > 1
    several input extents share one conv output shape; pass ``out_size`` to
    pick the intended one (at most stride-1 beyond the default).
    """
    y, w = _as_tensor(y), _as_tensor(w)
    if y.ndim != 4 or w.ndim != 4:
        raise DimensionError("conv2d_transpose expects NOHW input and OCHW kernel")
    n, o, ho, wo = y.shape
    ow, c, kh, kw = w.shape
    if ow != o:
        raise DimensionError(f"kernel output channels {ow} != input channels {o}")
    out_h = (ho - 1) * stride + kh - 2 * pad
    out_w = (wo - 1) * stride + kw - 2 * pad
    if out_size is not None:
        if not (out_h <= out_size[0] < out_h + stride and out_w <= out_size[1] < out_w + stride):
            raise DimensionError(
                f"out_size {out_size} unreachable from {(out_h, out_w)} at stride {stride}")
        out_h, out_w = out_size
    if out_h < 1 or out_w < 1:
        raise DimensionError("transpose convolution output extent is empty")
    hp, wp = out_h + 2 * pad, out_w + 2 * pad
    gcols = np.einsum("noyx,ocuv->ncyxuv", y.data, w.data, optimize=True)
    full = _col2im(gcols, (n, c, hp, wp), kh, kw, stride)
    out = full[:, :, pad:hp - pad, pad:wp - pad] if pad else full

    def bw(g):
        gp = _pad_nchw(g, pad)
        cols = _im2col(gp, kh, kw, stride)
        gy = np.einsum("ncyxuv,ocuv->noyx", cols, w.data, optimize=True)
        gw = np.einsum("noyx,ncyxuv->ocuv", y.data, cols, optimize=True)
        return (gy, gw)

    return _make(np.ascontiguousarray(out), (y, w), bw)


def pixel_shuffle(x, s: int) -> Tensor:
    """Depth-to-space: channel index c*s^2 + dy*s + dx lands at offset (dy, dx)."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("pixel_shuffle expects NCHW")
    n, cs2, h, w = x.shape
    if s < 1 or cs2 % (s * s):
        raise DimensionError(f"channel extent {cs2} not divisible by {s}^2")
    c = cs2 // (s * s)
    out = x.data.reshape(n, c, s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * s, w * s)

    def bw(g):
        return (g.reshape(n, c, h, s, w, s).transpose(0, 1, 3, 5, 2, 4).reshape(n, cs2, h, w),)

    return _make(np.ascontiguousarray(out), (x,), bw)


def pixel_unshuffle(x, s: int) -> Tensor:
    """Space-to-depth; exact inverse of :func:`pixel_shuffle`."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("pixel_unshuffle expects NCHW")
    n, c, hs, ws = x.shape
    if s < 1 or hs % s or ws % s:
        raise DimensionError(f"spatial extents {(hs, ws)} not divisible by {s}")
    h, w = hs // s, ws // s
    out = x.data.reshape(n, c, h, s, w, s).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * s * s, h, w)

    def bw(g):
        return (g.reshape(n, c, s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, hs, ws),)

    return _make(np.ascontiguousarray(out), (x,), bw)


@lru_cache(maxsize=64)
def _bilinear_matrix(n_in: int, factor: int) -> np.ndarray:
    """Dense interpolation matrix for x`factor` upsampling of one axis.

    Output sample i reads input position (i + 0.5)/factor - 0.5, clamped.
    """
    n_out = n_in * factor
    m = np.zeros((n_out, n_in))
    src = np.clip((np.arange(n_out) + 0.5) / factor - 0.5, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(int)
    t = src - i0
    i1 = np.minimum(i0 + 1, n_in - 1)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - t)
    np.add.at(m, (rows, i1), t)
    return m


def upsample_bilinear2d(x, factor: int) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("upsample_bilinear2d expects NCHW")
    if factor < 1:
        raise ContractError("upsample factor must be >= 1")
    n, c, h, w = x.shape
    my = _bilinear_matrix(h, factor)
    mx = _bilinear_matrix(w, factor)
    tmp = np.einsum("yh,nchw->ncyw", my, x.data, optimize=True)
    out = np.einsum("xw,ncyw->ncyx", mx, tmp, optimize=True)

    def bw(g):
        gt = np.einsum("ncyx,xw->ncyw", g, mx, optimize=True)
        return (np.einsum("ncyw,yh->nchw", gt, my, optimize=True),)

    return _make(out, (x,), bw)


def reflect_pad2d(x, pads: tuple[int, int, int, int]) -> Tensor:
    """Reflect-pad the two trailing axes by (top, bottom, left, right)."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("reflect_pad2d expects NCHW")
    pt, pb, pl, pr = pads
    n, c, h, w = x.shape
    iy = np.pad(np.arange(h), (pt, pb), mode="reflect")
    ix = np.pad(np.arange(w), (pl, pr), mode="reflect")
    out = x.data[:, :, iy[:, None], ix[None, :]]

    def bw(g):
        nc = n * c
        acc = np.zeros((nc, h, w))
        np.add.at(acc, (np.arange(nc)[:, None, None], iy[None, :, None], ix[None, None, :]),
                  g.reshape(nc, h + pt + pb, w + pl + pr))
        return (acc.reshape(n, c, h, w),)

    return _make(np.ascontiguousarray(out), (x,), bw)


def select_index(x, i: int) -> Tensor:
    """Slice x[i] along the leading axis; gradient scatters back to zeros."""
    x = _as_tensor(x)
    if x.ndim < 1 or not 0 <= i < x.shape[0]:
        raise DimensionError(f"index {i} out of range for shape {x.shape}")
    out = x.data[i].copy()

    def bw(g):
        acc = np.zeros_like(x.data)
        acc[i] = g
        return (acc,)

    return _make(out, (x,), bw)


def crop2d(x, out_h: int, out_w: int) -> Tensor:
    """Keep the top-left out_h x out_w region of the two trailing axes."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("crop2d expects NCHW")
    n, c, h, w = x.shape
    if not (1 <= out_h <= h and 1 <= out_w <= w):
        raise DimensionError(f"cannot crop {h}x{w} to {out_h}x{out_w}")
    out = x.data[:, :, :out_h, :out_w].copy()

    def bw(g):
        acc = np.zeros((n, c, h, w))
        acc[:, :, :out_h, :out_w] = g
        return (acc,)

    return _make(out, (x,), bw)
