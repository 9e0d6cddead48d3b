"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation creates a node that remembers its parents and
a closure mapping the output gradient to parent gradients.  Nodes are stamped
with a monotonically increasing sequence number when they are executed, so
the tape is simply the set of reachable nodes ordered by that stamp;
:meth:`Tensor.backward` replays it in exact reverse execution order.
"""
from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, ContractError, DimensionError, NumericError

_seq = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 4:
            raise DimensionError(f"rank {arr.ndim} > 4 is not supported")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._seq = next(_seq)

    @classmethod
    def _node(cls, data, parents, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._seq = next(_seq)
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = parents if track else ()
        out._backward = backward if track else None
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------
    def backward(self):
        if self.data.ndim != 0:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor requiring grad")
        nodes = {}
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in nodes:
                continue
            nodes[id(node)] = node
            stack.extend(p for p in node._parents if p.requires_grad)
        pending = {id(self): np.ones((), dtype=np.float64)}
        owned = set()  # buffers created here, safe to accumulate into in place
        for node in sorted(nodes.values(), key=lambda n: n._seq, reverse=True):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key not in pending:
                    pending[key] = pg
                elif key in owned:
                    pending[key] += pg
                else:
                    pending[key] = pending[key] + pg
                    owned.add(key)

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("tensor/tensor division is not supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self):
        return tsum(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        axes = [i for i, (p, q) in enumerate(zip(a.shape, b.shape)) if p != q]
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (axes {axes or 'rank'})")


# -- elementwise --------------------------------------------------------
def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Tensor._node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return Tensor._node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor._node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def neg(a: Tensor) -> Tensor:
    return Tensor._node(-a.data, (a,), lambda g: (-g,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return Tensor._node(a.data + float(c), (a,), lambda g: (g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor._node(a.data * c, (a,), lambda g: (g * c,))


def power(a: Tensor, p: float) -> Tensor:
    if isinstance(p, Tensor):
        raise ContractError("power() takes a constant exponent")
    p = float(p)
    ad = a.data
    if p == 2.0:
        return Tensor._node(ad * ad, (a,), lambda g: (2.0 * g * ad,))
    return Tensor._node(ad**p, (a,), lambda g: (g * p * ad ** (p - 1.0),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return Tensor._node(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    # tanh form never overflows for large |x|
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._node(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return Tensor._node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


# -- reductions and structure ---------------------------------------------
def tsum(a: Tensor) -> Tensor:
    shape = a.shape
    return Tensor._node(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        full[index] += g
        return (full,)

    return Tensor._node(np.array(a.data[index]), (a,), back)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat: {t.shape} incompatible with {ref} along axis {axis}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return Tensor._node(out, tensors, lambda g: tuple(np.split(g, splits, axis=ax)))


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    for t in tensors[1:]:
        _same_shape(tensors[0], t, "stack")
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return Tensor._node(out, tensors, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def gather(a: Tensor, axis: int, index, weight=None, offset=None) -> Tensor:
    """``out = take(a, index, axis) * weight + offset`` with per-position weight/offset.

    ``weight`` and ``offset`` are 1-D arrays over the gathered axis (constants).
    Used to build boundary padding rings.
    """
    index = np.asarray(index, dtype=np.intp)
    ax = axis % a.ndim
    bshape = [1] * a.ndim
    bshape[ax] = index.size
    w = None if weight is None else np.asarray(weight, dtype=np.float64).reshape(bshape)
    out = np.take(a.data, index, axis=ax)
    if w is not None:
        out = out * w
    if offset is not None:
        out = out + np.asarray(offset, dtype=np.float64).reshape(bshape)
    shape = a.shape

    def back(g):
        if w is not None:
            g = g * w
        full = np.zeros(shape)
        moved = np.moveaxis(full, ax, 0)
        np.add.at(moved, index, np.moveaxis(g, ax, 0))
        return (full,)

    return Tensor._node(out, (a,), back)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(C*r*r, h, w) -> (C, h*r, w*r) with out[c, i*r+a, j*r+b] = in[c*r*r + a*r + b, i, j]."""
    if x.ndim != 3:
        raise DimensionError(f"pixel_shuffle expects rank 3, got shape {x.shape}")
    cr2, h, w = x.shape
    if r < 1 or cr2 % (r * r):
        raise DimensionError(f"pixel_shuffle: channel count {cr2} not divisible by r^2={r * r}")
    c = cr2 // (r * r)
    out = x.data.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2).reshape(c, h * r, w * r)

    def back(g):
        return (g.reshape(c, h, r, w, r).transpose(0, 2, 4, 1, 3).reshape(cr2, h, w),)

    return Tensor._node(out, (x,), back)


# -- stencils and convolution --------------------------------------------
def stencil_taps(kernel):
    """Nonzero taps of a fixed kernel, plus the center tap for zero-sum kernels.

    A kernel whose coefficients sum to zero is applied in difference form,
    ``sum c * (x[off] - x[center])``, so constants (and, for one-axis
    kernels, fields constant along that axis) map to exactly zero.
    """
    k = np.asarray(kernel, dtype=np.float64)
    kh, kw = k.shape
    center = None
    if kh % 2 and kw % 2 and abs(k.sum()) <= 1e-12 * np.abs(k).max():
        center = (kh // 2, kw // 2)
    taps = [(i, j, k[i, j]) for i, j in zip(*np.nonzero(k)) if (i, j) != center]
    return k.shape, taps, center


def apply_stencil(x: np.ndarray, kernel) -> np.ndarray:
    """Valid cross-correlation of every trailing 2-D plane of ``x`` with ``kernel``."""
    (kh, kw), taps, center = stencil_taps(kernel)
    H, W = x.shape[-2] - kh + 1, x.shape[-1] - kw + 1
    if H < 1 or W < 1:
        raise DimensionError(f"stencil {kh}x{kw} larger than input planes {x.shape[-2:]}")
    out = np.zeros(x.shape[:-2] + (H, W))
    if center is None:
        for i, j, c in taps:
            out += c * x[..., i:i + H, j:j + W]
        return out
    ci, cj = center
    mid = x[..., ci:ci + H, cj:cj + W]
    for i, j, c in taps:
        out += c * (x[..., i:i + H, j:j + W] - mid)
    return out


def stencil(x: Tensor, kernel) -> Tensor:
    """Differentiable fixed-coefficient version of :func:`apply_stencil`."""
    (kh, kw), taps, center = stencil_taps(kernel)
    out = apply_stencil(x.data, kernel)
    H, W = out.shape[-2:]
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        for i, j, c in taps:
            full[..., i:i + H, j:j + W] += c * g
        if center is not None:
            ci, cj = center
            full[..., ci:ci + H, cj:cj + W] -= sum(c for _, _, c in taps) * g
        return (full,)

    return Tensor._node(out, (x,), back)


def _pad_amounts(padding):
    if isinstance(padding, int):
        return (padding,) * 4
    p = tuple(int(v) for v in padding)
    if len(p) == 2:
        return (p[0], p[0], p[1], p[1])
    if len(p) != 4:
        raise ConfigurationError(f"padding must be int, (ph, pw) or (top, bottom, left, right); got {padding}")
    return p


def _unpad_grad(gp, pads, H, W, mode):
    t, b, l, r = pads
    g = gp[:, t:t + H, l:l + W].copy()
    if mode == "circular":
        # fold the wrapped ring back onto the rows/columns it was copied from
        rows = gp[:, :, l:l + W]
        if t:
            g[:, H - t:, :] += rows[:, :t]
        if b:
            g[:, :b, :] += rows[:, t + H:]
        cols = gp[:, t:t + H, :]
        if l:
            g[:, :, W - l:] += cols[:, :, :l]
        if r:
            g[:, :, :r] += cols[:, :, l + W:]
        if t and l:
            g[:, H - t:, W - l:] += gp[:, :t, :l]
        if t and r:
            g[:, H - t:, :r] += gp[:, :t, l + W:]
        if b and l:
            g[:, :b, W - l:] += gp[:, t + H:, :l]
        if b and r:
            g[:, :b, :r] += gp[:, t + H:, l + W:]
    return g


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding=0, pad_mode: str = "circular") -> Tensor:
    """2-D cross-correlation of a (C_in, H, W) input with a (C_out, C_in, kH, kW) kernel.

    ``padding`` is an int, ``(ph, pw)`` or ``(top, bottom, left, right)``;
    ``pad_mode`` is ``"circular"`` or ``"zeros"``.
    """
    if not isinstance(stride, (int, np.integer)) or stride <= 0:
        raise ConfigurationError(f"conv2d stride must be a positive int, got {stride!r}")
    if pad_mode not in ("circular", "zeros"):
        raise ConfigurationError(f"unknown pad_mode {pad_mode!r}")
    if x.ndim != 3:
        raise DimensionError(f"conv2d input must be (C, H, W), got {x.shape}")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d kernel must be (C_out, C_in, kH, kW), got {weight.shape}")
    cin, H, W = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv2d: input channels (axis 0) = {cin} but kernel axis 1 = {wcin}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    pads = _pad_amounts(padding)
    t, b, l, r = pads
    if mode_wraps := (pad_mode == "circular"):
        if max(t, b) > H or max(l, r) > W:
            raise DimensionError(f"circular padding {pads} exceeds input extent {(H, W)}")
    if any(pads):
        xp = np.pad(x.data, ((0, 0), (t, b), (l, r)), mode="wrap" if mode_wraps else "constant")
    else:
        xp = x.data
    Hp, Wp = xp.shape[1:]
    if kh > Hp or kw > Wp:
        raise DimensionError(f"conv2d: kernel {(kh, kw)} larger than padded input {(Hp, Wp)}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :Ho, :Wo]
    cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(Ho * Wo, cin * kh * kw)
    wmat = weight.data.reshape(cout, cin * kh * kw)
    out = (cols @ wmat.T).T.reshape(cout, Ho, Wo)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def back(g):
        gmat = g.reshape(cout, Ho * Wo)
        gw = (gmat @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(1, 2)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (gmat.T @ wmat).reshape(Ho, Wo, cin, kh, kw)
            gp = np.zeros((cin, Hp, Wp))
            hs, ws = (Ho - 1) * stride + 1, (Wo - 1) * stride + 1
            for i in range(kh):
                for j in range(kw):
                    gp[:, i:i + hs:stride, j:j + ws:stride] += gcols[:, :, :, i, j].transpose(2, 0, 1)
            gx = _unpad_grad(gp, pads, H, W, pad_mode) if any(pads) else gp
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._node(out, parents, back)


def weight_norm(direction: Tensor, gain: Tensor) -> Tensor:
    """Effective kernel ``gain[o] * direction[o] / ||direction[o]||`` per output channel."""
    if gain.ndim != 1 or gain.shape[0] != direction.shape[0]:
        raise DimensionError(f"weight_norm: gain shape {gain.shape} vs {direction.shape[0]} output channels")
    v = direction.data
    bshape = (-1,) + (1,) * (v.ndim - 1)
    norms = np.sqrt((v.reshape(v.shape[0], -1) ** 2).sum(axis=1))
    if np.any(norms == 0.0):
        raise NumericError(f"weight_norm: zero-norm direction for channels {np.nonzero(norms == 0.0)[0].tolist()}")
    vhat = v / norms.reshape(bshape)
    gd = gain.data
    out = gd.reshape(bshape) * vhat

    def back(g):
        proj = (g * vhat).reshape(v.shape[0], -1).sum(axis=1)
        ggain = proj
        gdir = (gd / norms).reshape(bshape) * (g - proj.reshape(bshape) * vhat)
        return gdir, ggain

    return Tensor._node(out, (direction, gain), back)
