"""Neural layers shared by every model: affine, conv, norm, RNN cells, losses.

Layers are plain functions over Tensors. Parameters live in a ParamStore and
are registered by `add_*` helpers under a dotted prefix, so one store holds a
whole model and serializes in a stable order.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .store import ParamStore
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Seeded uniform init on +-sqrt(1/fan_in)."""
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# -- affine -------------------------------------------------------------------


def add_linear(store: ParamStore, rng, prefix: str, n_in: int, n_out: int, dtype=np.float32) -> None:
    store.add(f"{prefix}.w", uniform_init(rng, (n_in, n_out), n_in, dtype))
    store.add(f"{prefix}.b", np.zeros(n_out, dtype=dtype))


def apply_linear(store: ParamStore, prefix: str, x: Tensor) -> Tensor:
    return linear(x, store[f"{prefix}.w"], store[f"{prefix}.b"])


def linear(x: Tensor, w: Tensor, b=None) -> Tensor:
    """y = x @ w + b with x (..., n_in), w (n_in, n_out)."""
    y = T.matmul(x, w)
    if b is not None:
        y = T.add(y, b)
    return y


# -- convolution wrappers -----------------------------------------------------


def add_conv1d(store, rng, prefix, c_in, c_out, k, dtype=np.float32):
    store.add(f"{prefix}.k", uniform_init(rng, (c_out, c_in, k), c_in * k, dtype))
    store.add(f"{prefix}.b", np.zeros(c_out, dtype=dtype))


def apply_conv1d(store, prefix, x, stride=1, pad=0):
    return T.conv1d(x, store[f"{prefix}.k"], store[f"{prefix}.b"], stride=stride, pad=pad)


def add_conv2d(store, rng, prefix, c_in, c_out, kh, kw, dtype=np.float32):
    store.add(f"{prefix}.k", uniform_init(rng, (c_out, c_in, kh, kw), c_in * kh * kw, dtype))
    store.add(f"{prefix}.b", np.zeros(c_out, dtype=dtype))


def apply_conv2d(store, prefix, x, stride=(1, 1), pad=(0, 0)):
    return T.conv2d(x, store[f"{prefix}.k"], store[f"{prefix}.b"], stride=stride, pad=pad)


# -- normalization ------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last (feature) axis to zero mean / unit variance, then affine."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return centered * inv * gamma + beta


def add_layer_norm(store, prefix, dim, dtype=np.float32):
    store.add(f"{prefix}.gamma", np.ones(dim, dtype=dtype))
    store.add(f"{prefix}.beta", np.zeros(dim, dtype=dtype))


def apply_layer_norm(store, prefix, x, eps: float = 1e-5):
    return layer_norm(x, store[f"{prefix}.gamma"], store[f"{prefix}.beta"], eps=eps)


# -- recurrent cells ----------------------------------------------------------
#
# Sequence layout is time-major: (T, F) unbatched or (T, B, F) batched.
# Input projections for all timesteps are hoisted into one matmul; only the
# hidden-to-hidden product runs per step.


def add_gru(store, rng, prefix, n_in, n_hidden, dtype=np.float32):
    store.add(f"{prefix}.w_ih", uniform_init(rng, (n_in, 3 * n_hidden), n_in, dtype))
    store.add(f"{prefix}.w_hh", uniform_init(rng, (n_hidden, 3 * n_hidden), n_hidden, dtype))
    store.add(f"{prefix}.b_ih", np.zeros(3 * n_hidden, dtype=dtype))
    store.add(f"{prefix}.b_hh", np.zeros(3 * n_hidden, dtype=dtype))


def gru_cell(gi: Tensor, h: Tensor, w_hh: Tensor, b_hh: Tensor, n_hidden: int) -> Tensor:
    """One GRU step given the precomputed input projection gi = x @ w_ih + b_ih."""
    gh = T.add(T.matmul(h, w_hh), b_hh)
    r = T.sigmoid(gi[..., 0:n_hidden] + gh[..., 0:n_hidden])
    z = T.sigmoid(gi[..., n_hidden : 2 * n_hidden] + gh[..., n_hidden : 2 * n_hidden])
    n = T.tanh(gi[..., 2 * n_hidden :] + r * gh[..., 2 * n_hidden :])
    return (1.0 - z) * n + z * h


def _gru_pass(store, prefix, seq: Tensor, n_hidden: int, reverse: bool) -> Tensor:
    w_ih, w_hh = store[f"{prefix}.w_ih"], store[f"{prefix}.w_hh"]
    b_ih, b_hh = store[f"{prefix}.b_ih"], store[f"{prefix}.b_hh"]
    if w_ih.shape[0] != seq.shape[-1]:
        raise ValueError(f"gru input width {seq.shape[-1]} != weight fan-in {w_ih.shape[0]}")
    gi_all = T.add(T.matmul(seq, w_ih), b_ih)
    n_steps = seq.shape[0]
    h = Tensor(np.zeros(seq.shape[1:-1] + (n_hidden,), dtype=seq.dtype))
    order = range(n_steps - 1, -1, -1) if reverse else range(n_steps)
    outs = [None] * n_steps
    for t in order:
        h = gru_cell(gi_all[t], h, w_hh, b_hh, n_hidden)
        outs[t] = h
    return T.stack(outs, axis=0)


def gru_layer(seq: Tensor, store: ParamStore, prefix: str, n_hidden: int, bidirectional: bool = False) -> Tensor:
    """GRU over a (T, F) or (T, B, F) sequence; bidirectional output is (.., 2*hidden)."""
    fwd = _gru_pass(store, prefix, seq, n_hidden, reverse=False)
    if not bidirectional:
        return fwd
    bwd = _gru_pass(store, f"{prefix}.rev", seq, n_hidden, reverse=True)
    return T.concat([fwd, bwd], axis=-1)


def add_bigru(store, rng, prefix, n_in, n_hidden, dtype=np.float32):
    add_gru(store, rng, prefix, n_in, n_hidden, dtype)
    add_gru(store, rng, f"{prefix}.rev", n_in, n_hidden, dtype)


def add_lstm(store, rng, prefix, n_in, n_hidden, dtype=np.float32):
    store.add(f"{prefix}.w_ih", uniform_init(rng, (n_in, 4 * n_hidden), n_in, dtype))
    store.add(f"{prefix}.w_hh", uniform_init(rng, (n_hidden, 4 * n_hidden), n_hidden, dtype))
    store.add(f"{prefix}.b", np.zeros(4 * n_hidden, dtype=dtype))


def add_bilstm(store, rng, prefix, n_in, n_hidden, dtype=np.float32):
    add_lstm(store, rng, prefix, n_in, n_hidden, dtype)
    add_lstm(store, rng, f"{prefix}.rev", n_in, n_hidden, dtype)


def lstm_cell(gates: Tensor, h: Tensor, c: Tensor, n_hidden: int) -> tuple[Tensor, Tensor]:
    """One LSTM step given gates = x @ w_ih + h @ w_hh + b (i, f, g, o layout)."""
    i = T.sigmoid(gates[..., 0:n_hidden])
    f = T.sigmoid(gates[..., n_hidden : 2 * n_hidden])
    g = T.tanh(gates[..., 2 * n_hidden : 3 * n_hidden])
    o = T.sigmoid(gates[..., 3 * n_hidden :])
    c_new = f * c + i * g
    return o * T.tanh(c_new), c_new


def lstm_step(store, prefix, x: Tensor, h: Tensor, c: Tensor, n_hidden: int) -> tuple[Tensor, Tensor]:
    """Single externally-driven LSTM step (used by autoregressive decoders)."""
    gates = T.add(T.add(T.matmul(x, store[f"{prefix}.w_ih"]), T.matmul(h, store[f"{prefix}.w_hh"])), store[f"{prefix}.b"])
    return lstm_cell(gates, h, c, n_hidden)


def _lstm_pass(store, prefix, seq, n_hidden, reverse):
    w_ih, w_hh, b = store[f"{prefix}.w_ih"], store[f"{prefix}.w_hh"], store[f"{prefix}.b"]
    if w_ih.shape[0] != seq.shape[-1]:
        raise ValueError(f"lstm input width {seq.shape[-1]} != weight fan-in {w_ih.shape[0]}")
    gi_all = T.add(T.matmul(seq, w_ih), b)
    n_steps = seq.shape[0]
    state_shape = seq.shape[1:-1] + (n_hidden,)
    h = Tensor(np.zeros(state_shape, dtype=seq.dtype))
    c = Tensor(np.zeros(state_shape, dtype=seq.dtype))
    order = range(n_steps - 1, -1, -1) if reverse else range(n_steps)
    outs = [None] * n_steps
    for t in order:
        gates = T.add(gi_all[t], T.matmul(h, w_hh))
        h, c = lstm_cell(gates, h, c, n_hidden)
        outs[t] = h
    return T.stack(outs, axis=0), (h, c)


def lstm_layer(seq: Tensor, store: ParamStore, prefix: str, n_hidden: int, bidirectional: bool = False):
    """LSTM over (T, F) or (T, B, F); returns (seq_out, (h_final, c_final)).

    For the bidirectional case the final state is the forward pass's (the
    backward pass's "final" state sits at t=0 and is rarely wanted).
    """
    fwd, state = _lstm_pass(store, prefix, seq, n_hidden, reverse=False)
    if not bidirectional:
        return fwd, state
    bwd, _ = _lstm_pass(store, f"{prefix}.rev", seq, n_hidden, reverse=True)
    return T.concat([fwd, bwd], axis=-1), state


# -- losses -------------------------------------------------------------------


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_same_shape(pred, target, "mse_loss")
    d = pred - target
    return (d * d).mean()


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    _check_same_shape(pred, target, "l1_loss")
    return (pred - target).abs().mean()


def bce_loss(pred: Tensor, target: Tensor, eps: float = 1e-7) -> Tensor:
    """Binary cross-entropy on probabilities, clamped away from {0, 1}."""
    _check_same_shape(pred, target, "bce_loss")
    p = T.clip(pred, eps, 1.0 - eps)
    return -(target * p.log() + (1.0 - target) * (1.0 - p).log()).mean()


def _check_same_shape(a, b, name):
    a_shape = a.shape if hasattr(a, "shape") else np.shape(a)
    b_shape = b.shape if hasattr(b, "shape") else np.shape(b)
    if tuple(a_shape) != tuple(b_shape):
        raise ValueError(f"{name} shape mismatch: {tuple(a_shape)} vs {tuple(b_shape)}")
