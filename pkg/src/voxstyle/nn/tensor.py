"""Minimal reverse-mode autodiff on dense numpy arrays.

A Tensor wraps an ndarray plus an optional gradient of the same shape.
Operations record closures on a tape; Tensor.backward() runs the tape in
reverse topological order. Only the ops needed by this package are provided
(rank <= 4, real dtypes). Training code typically runs in float32; gradient
checking should run in float64, where central differences are trustworthy.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    """Set the dtype used when tensors are built from plain lists/scalars."""
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


def default_dtype():
    return _DEFAULT_DTYPE


class no_grad:
    """Context manager disabling graph construction (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        if arr.ndim > 4:
            raise ValueError(f"rank {arr.ndim} > 4 not supported")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Callable | None = None

    # -- introspection ------------------------------------------------------

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

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    # -- graph machinery ----------------------------------------------------

    def accumulate(self, g: np.ndarray) -> None:
        """Add an incoming gradient contribution (internal use by ops)."""
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward() requires a scalar, got shape {self.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def tanh(self):
        return tanh(self)

    def abs(self):
        return absolute(self)


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative DFS; recursion would overflow on long RNN tapes.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
    return Tensor(arr)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable | None) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ops --------------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def backward(g):
        a.accumulate(_unbroadcast(g * b.data, a.shape))
        b.accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def backward(g):
        a.accumulate(_unbroadcast(g / b.data, a.shape))
        b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)

    def backward(g):
        a.accumulate(g * p * a.data ** (p - 1.0))

    return _make(a.data**p, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        a.accumulate(g * out_data)

    return _make(out_data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        a.accumulate(g / a.data)

    return _make(np.log(a.data), (a,), backward)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def backward(g):
        a.accumulate(g * 0.5 / out_data)

    return _make(out_data, (a,), backward)


def absolute(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        a.accumulate(g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g):
        a.accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # 1/(1+exp(-x)) via tanh for symmetric overflow behaviour
    out_data = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def backward(g):
        a.accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        a.accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner))

    return _make(0.5 * x * (1.0 + t), (a,), backward)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient is zero in the flat (clipped) regions."""
    a = _as_tensor(a)
    mask = (a.data > lo) & (a.data < hi)

    def backward(g):
        a.accumulate(g * mask)

    return _make(np.clip(a.data, lo, hi), (a,), backward)


# -- shape ops --------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape

    def backward(g):
        a.accumulate(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))

    def backward(g):
        a.accumulate(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), backward)


def getitem(a, idx) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        if isinstance(idx, np.ndarray) and idx.dtype.kind in "iu":
            np.add.at(a.grad, idx, g)
        else:
            a.grad[idx] += g

    return _make(a.data[idx], (a,), backward)


def embedding(table, ids) -> Tensor:
    """Row gather: table (V, E), ids int array (L,) -> (L, E)."""
    ids = np.asarray(ids, dtype=np.int64)
    return getitem(table, ids)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            p.accumulate(g[tuple(sl)])

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]

    def backward(g):
        for i, p in enumerate(parts):
            p.accumulate(np.take(g, i, axis=axis))

    return _make(np.stack([p.data for p in parts], axis=axis), parts, backward)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.shape).copy() if np.ndim(g) else np.full(a.shape, g, a.dtype))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product: (..., k) @ (k, n); leading axes of `a` are stacked rows."""
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim < 1 or b.ndim != 2:
        raise ValueError(f"matmul expects (.., k) @ (k, n), got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    a2 = a.data.reshape(-1, a.shape[-1])

    def backward(g):
        g2 = g.reshape(-1, b.shape[1])
        a.accumulate((g2 @ b.data.T).reshape(a.shape))
        b.accumulate(a2.T @ g2)

    return _make((a2 @ b.data).reshape(a.shape[:-1] + (b.shape[1],)), (a, b), backward)


# -- softmax family ---------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a.accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    p = np.exp(out_data)

    def backward(g):
        a.accumulate(g - p * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), backward)


def glu(a, axis: int = -1) -> Tensor:
    """Gated linear unit: split in halves (u, v) along axis, return u * sigmoid(v)."""
    a = _as_tensor(a)
    n = a.shape[axis]
    if n % 2 != 0:
        raise ValueError(f"glu needs an even dimension on axis {axis}, got {n}")
    h = n // 2
    sl = [slice(None)] * a.ndim
    sl_u, sl_v = list(sl), list(sl)
    sl_u[axis] = slice(0, h)
    sl_v[axis] = slice(h, n)
    u = getitem(a, tuple(sl_u))
    v = getitem(a, tuple(sl_v))
    return mul(u, sigmoid(v))


# -- convolutions -----------------------------------------------------------


def _conv_windows(xp: np.ndarray, k: int, stride: int, axis: int) -> np.ndarray:
    """Sliding windows of length k at the given axis via stride tricks (view)."""
    n_out = (xp.shape[axis] - k) // stride + 1
    shape = xp.shape[:axis] + (n_out,) + xp.shape[axis + 1 :] + (k,)
    strides = (
        xp.strides[:axis] + (xp.strides[axis] * stride,) + xp.strides[axis + 1 :] + (xp.strides[axis],)
    )
    return np.lib.stride_tricks.as_strided(xp, shape=shape, strides=strides)


def conv1d(x, kern, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation over time: x (B, Cin, T), kern (Cout, Cin, K) -> (B, Cout, T')."""
    x = _as_tensor(x)
    kern = _as_tensor(kern)
    if x.ndim != 3 or kern.ndim != 3 or x.shape[1] != kern.shape[1]:
        raise ValueError(f"conv1d shape mismatch: x {x.shape}, kernel {kern.shape}")
    B, Cin, T = x.shape
    Cout, _, K = kern.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    if xp.shape[2] < K:
        raise ValueError(f"conv1d input length {T} (+pad {pad}) shorter than kernel {K}")
    win = _conv_windows(xp, K, stride, axis=2)  # (B, Cin, To, K)
    To = win.shape[2]
    cols = win.transpose(0, 2, 1, 3).reshape(B * To, Cin * K)
    kmat = kern.data.reshape(Cout, Cin * K)
    out = cols @ kmat.T
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data
    out = out.reshape(B, To, Cout).transpose(0, 2, 1)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(B * To, Cout)
        kern.accumulate((g2.T @ cols).reshape(kern.shape))
        if bias is not None:
            bias.accumulate(g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ kmat).reshape(B, To, Cin, K)
            gxp = np.zeros_like(xp)
            for j in range(K):
                gxp[:, :, j : j + stride * To : stride] += gcols[:, :, :, j].transpose(0, 2, 1)
            x.accumulate(gxp[:, :, pad : pad + T] if pad else gxp)

    parents = (x, kern) if bias is None else (x, kern, bias)
    return _make(out, parents, backward)


def conv2d(x, kern, bias=None, stride=(1, 1), pad=(0, 0)) -> Tensor:
    """Cross-correlation: x (B, Cin, H, W), kern (Cout, Cin, KH, KW) -> (B, Cout, H', W')."""
    x = _as_tensor(x)
    kern = _as_tensor(kern)
    if x.ndim != 4 or kern.ndim != 4 or x.shape[1] != kern.shape[1]:
        raise ValueError(f"conv2d shape mismatch: x {x.shape}, kernel {kern.shape}")
    B, Cin, H, W = x.shape
    Cout, _, KH, KW = kern.shape
    sh, sw = stride
    ph, pw = pad
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    if xp.shape[2] < KH or xp.shape[3] < KW:
        raise ValueError(f"conv2d input {x.shape} (+pad {pad}) smaller than kernel {kern.shape}")
    win = _conv_windows(xp, KH, sh, axis=2)  # (B, Cin, Ho, Wp, KH)
    win = _conv_windows(win, KW, sw, axis=3)  # (B, Cin, Ho, Wo, KH, KW)
    Ho, Wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, Cin * KH * KW)
    kmat = kern.data.reshape(Cout, Cin * KH * KW)
    out = cols @ kmat.T
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data
    out = out.reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, Cout)
        kern.accumulate((g2.T @ cols).reshape(kern.shape))
        if bias is not None:
            bias.accumulate(g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ kmat).reshape(B, Ho, Wo, Cin, KH, KW)
            gxp = np.zeros_like(xp)
            for i in range(KH):
                for j in range(KW):
                    gxp[:, :, i : i + sh * Ho : sh, j : j + sw * Wo : sw] += gcols[:, :, :, :, i, j].transpose(
                        0, 3, 1, 2
                    )
            x.accumulate(gxp[:, :, ph : ph + H, pw : pw + W] if (ph or pw) else gxp)

    parents = (x, kern) if bias is None else (x, kern, bias)
    return _make(out, parents, backward)


# -- gradient checking ------------------------------------------------------


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-4) -> float:
    """Compare reverse-mode gradients of a scalar function against central differences.

    Returns max over all input elements of |g_ad - g_fd| / max(1, |g_fd|).
    Inputs should be float64; float32 finite differences are unreliable.
    """
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite output in grad_check")
    out.backward()
    worst = 0.0
    for t in inputs:
        g_ad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                hi = float(fn(*inputs).data)
            flat[i] = orig - eps
            with no_grad():
                lo = float(fn(*inputs).data)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FloatingPointError("non-finite output in grad_check")
            g_fd = (hi - lo) / (2.0 * eps)
            err = abs(g_ad.reshape(-1)[i] - g_fd) / max(1.0, abs(g_fd))
            worst = max(worst, err)
    return worst
