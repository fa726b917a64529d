"""Finite-difference verification of every differentiable building block.

Each check builds a small float64 graph and compares reverse-mode gradients
against central differences on shallow graphs, where eps 1e-4 is far from the
cancellation floor. Deep composed graphs are deliberately avoided: their FD
error grows as eps shrinks, which measures float64 cancellation, not the
backward pass.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .ctc import ctc_loss_op
from .cyclegan import adversarial_loss, cycle_loss
from .nn import ParamStore, Tensor, grad_check
from .nn.tensor import gelu, glu, sigmoid
from .speaker import contrastive_loss
from .synth import AttentionState, SynthConfig, SynthModel, attend, build_synth

TOL = 1e-4


def _f64(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def check_linear(rng):
    store = ParamStore()
    nn.add_linear(store, rng, "lin", 4, 3)
    store6 = store.astype(np.float64)
    x = _f64(rng, 5, 4)
    fn = lambda w, b, xx: nn.apply_linear(store6, "lin", xx).sum()
    return grad_check(fn, [store6["lin.w"], store6["lin.b"], x])


def check_conv(rng):
    store = ParamStore()
    nn.add_conv1d(store, rng, "c1", 2, 3, 3)
    nn.add_conv2d(store, rng, "c2", 1, 2, 3, 3)
    store6 = store.astype(np.float64)
    x1 = _f64(rng, 1, 2, 8)
    x2 = _f64(rng, 1, 1, 6, 5)
    fn = lambda w1, x1_, w2, x2_: (
        nn.apply_conv1d(store6, "c1", x1_, pad=1).sum()
        + nn.apply_conv2d(store6, "c2", x2_, pad=(1, 1)).sum()
    )
    return grad_check(fn, [store6["c1.k"], x1, store6["c2.k"], x2])


def check_layer_norm(rng):
    store = ParamStore()
    nn.add_layer_norm(store, "ln", 6)
    store6 = store.astype(np.float64)
    x = _f64(rng, 4, 6)
    # weight the outputs so the check sees non-symmetric gradients
    w = rng.standard_normal((4, 6))
    fn = lambda g, b, xx: (nn.apply_layer_norm(store6, "ln", xx) * Tensor(w)).sum()
    return grad_check(fn, [store6["ln.gamma"], store6["ln.beta"], x])


def check_gelu(rng):
    x = _f64(rng, 7)
    return grad_check(lambda xx: gelu(xx).sum(), [x])


def check_glu(rng):
    x = _f64(rng, 3, 8)
    return grad_check(lambda xx: glu(xx, axis=1).sum(), [x])


def check_gru(rng):
    store = ParamStore()
    nn.add_gru(store, rng, "g", 3, 2)
    store6 = store.astype(np.float64)
    x = _f64(rng, 4, 3)
    names = [n for n in store6.names()]
    fn = lambda *ts: nn.gru_layer(ts[-1], store6, "g", 2)[0].sum()
    return grad_check(fn, [store6[n] for n in names] + [x])


def check_lstm(rng):
    store = ParamStore()
    nn.add_lstm(store, rng, "l", 3, 2)
    store6 = store.astype(np.float64)
    x = _f64(rng, 4, 3)
    names = [n for n in store6.names()]
    fn = lambda *ts: nn.lstm_layer(ts[-1], store6, "l", 2)[0].sum()
    return grad_check(fn, [store6[n] for n in names] + [x])


def check_attention(rng):
    cfg = SynthConfig(scale=0.02)
    model = build_synth(cfg, seed=0)
    model6 = SynthModel(model.store.astype(np.float64), cfg)
    L = 3
    D = cfg.dec_lstm_hidden_s
    mem = _f64(rng, L, cfg.memory_dim)
    query = _f64(rng, D)
    cum = np.abs(np.random.default_rng(5).standard_normal(L))
    weights_out = np.random.default_rng(6).standard_normal(cfg.memory_dim)

    def fn(q, v, loc_w, loc_p):
        mem_proj = nn.apply_linear(model6.store, "attn.memory", mem)
        state = AttentionState(prev=cum.copy(), cum=cum.copy())
        context, weights, _ = attend(model6, q, mem, mem_proj, state)
        return (context * Tensor(weights_out)).sum()

    s = model6.store
    return grad_check(fn, [query, s["attn.v.w"], s["attn.loc_conv.k"], s["attn.loc_proj.w"]])


def check_ctc(rng):
    logits = Tensor(rng.standard_normal((5, 4)))
    target = np.array([1, 2, 1])
    return grad_check(lambda lg: ctc_loss_op(lg, target), [logits])


def check_losses(rng):
    pred = _f64(rng, 4, 3)
    tgt = Tensor(rng.standard_normal((4, 3)) + 0.1)
    z = _f64(rng, 6)
    btgt = Tensor((rng.random(6) > 0.5).astype(np.float64))
    fn = lambda p, zz: (
        nn.mse_loss(p, tgt) + nn.l1_loss(p, tgt) + nn.bce_loss(sigmoid(zz), btgt)
    )
    return grad_check(fn, [pred, z])


def check_contrastive(rng):
    emb = _f64(rng, 2, 3, 4)
    w = Tensor(np.array([2.0]))
    b = Tensor(np.array([-1.0]))
    return grad_check(lambda e, ww, bb: contrastive_loss(e, ww, bb), [emb, w, b])


def check_adversarial(rng):
    dr = Tensor(np.array(0.3 + 0.4 * rng.random(3)))
    df = Tensor(np.array(0.3 + 0.4 * rng.random(3)))
    return grad_check(lambda a, b: adversarial_loss(a, b), [dr, df])


def check_cycle(rng):
    x = rng.standard_normal((4, 3))
    y = rng.standard_normal((4, 3))
    fgx = _f64(rng, 4, 3)
    gfy = _f64(rng, 4, 3)
    return grad_check(lambda a, b: cycle_loss(x, a, y, b), [fgx, gfy])


CHECKS = [
    ("linear", check_linear),
    ("conv", check_conv),
    ("layer_norm", check_layer_norm),
    ("gelu", check_gelu),
    ("glu", check_glu),
    ("gru", check_gru),
    ("lstm", check_lstm),
    ("attention", check_attention),
    ("ctc", check_ctc),
    ("mse_l1_bce", check_losses),
    ("contrastive", check_contrastive),
    ("adversarial", check_adversarial),
    ("cycle", check_cycle),
]


def run_gradient_suite(seed: int = 0) -> list:
    """[(op name, max rel err)] for every differentiable building block."""
    results = []
    for name, check in CHECKS:
        rng = np.random.default_rng(seed)
        results.append((name, float(check(rng))))
    return results
