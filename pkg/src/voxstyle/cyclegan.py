"""Envelope-to-envelope CycleGAN: paired generators G (X to Y) and F (Y to X)
built from GLU conv stacks, patch discriminators, adversarial plus
cycle-consistency losses, and single-pair training steps.

Feature sequences are (frames, Q) spectral-envelope coefficient arrays from
the source-filter front end; conversion maps envelopes through a generator,
remaps pitch log-Gaussianly, and passes aperiodicity through untouched.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .nn import ParamStore, Tensor
from .nn.optim import OptimState, adam_step
from .nn.tensor import clip, glu, sigmoid, tmean
from .world import Aperiodicity, F0Contour, PitchStats, SpectralEnvelope, WorldFeatures, convert_pitch

EPS = 1e-7


@dataclass
class CycleGanConfig:
    envelope_order: int = 32  # Q, must match the feature extractor
    gen_channels: int = 64
    gen_blocks: int = 6
    disc_channels: int = 64
    disc_blocks: int = 4
    kernel: int = 5
    lambda_cyc: float = 10.0
    # the discriminators learn the shift task orders of magnitude faster than
    # the generators; a slow D keeps gradients flowing instead of saturating
    lr_g: float = 1e-3
    lr_d: float = 2e-5
    steps: int = 1000
    minibatch: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.lambda_cyc < 0:
            raise ValueError(f"lambda_cyc must be >= 0, got {self.lambda_cyc}")
        if self.minibatch != 1:
            raise ValueError(f"training is single-pair; minibatch must be 1, got {self.minibatch}")
        if self.kernel % 2 != 1:
            raise ValueError(f"kernel must be odd to preserve frame count, got {self.kernel}")
        for name in ("envelope_order", "gen_channels", "gen_blocks", "disc_channels",
                     "disc_blocks", "steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass
class CycleGanModel:
    store: ParamStore
    config: CycleGanConfig


@dataclass
class LossRecord:
    step: int
    adv_g: float
    adv_f: float
    d_x: float
    d_y: float
    cyc: float
    total: float


def build_cyclegan(config: CycleGanConfig, seed: int = 0) -> CycleGanModel:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    Q, k = config.envelope_order, config.kernel
    # GLU blocks are residual: a six-deep gated stack attenuates its input
    # roughly by half per block at init, which freezes early training
    for prefix, ch, blocks in (("G", config.gen_channels, config.gen_blocks),
                               ("F", config.gen_channels, config.gen_blocks),
                               ("DX", config.disc_channels, config.disc_blocks),
                               ("DY", config.disc_channels, config.disc_blocks)):
        nn.add_conv1d(store, rng, f"{prefix}.in", Q, ch, k)
        for i in range(blocks):
            # twice the working width so the gate half of the GLU is free
            nn.add_conv1d(store, rng, f"{prefix}.block{i}", ch, 2 * ch, k)
        out_ch = Q if prefix in ("G", "F") else 1
        nn.add_conv1d(store, rng, f"{prefix}.out", ch, out_ch, k)
    return CycleGanModel(store, config)


def _stack(model: CycleGanModel, prefix: str, x: Tensor, blocks: int) -> Tensor:
    cfg = model.config
    pad = cfg.kernel // 2
    T = x.shape[0]
    h = nn.apply_conv1d(model.store, f"{prefix}.in", x.transpose().reshape(1, cfg.envelope_order, T), pad=pad)
    for i in range(blocks):
        h = h + glu(nn.apply_conv1d(model.store, f"{prefix}.block{i}", h, pad=pad), axis=1)
    return nn.apply_conv1d(model.store, f"{prefix}.out", h, pad=pad)


def _check_seq(seq, order: int) -> np.ndarray:
    arr = np.asarray(seq, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != order:
        raise ValueError(f"feature sequence must be (frames, {order}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature sequence contains non-finite values")
    return arr


def generate(model: CycleGanModel, prefix: str, seq) -> Tensor:
    """Map a (frames, Q) sequence through generator `prefix` ("G" or "F")."""
    if prefix not in ("G", "F"):
        raise ValueError(f"generator prefix must be 'G' or 'F', got {prefix!r}")
    cfg = model.config
    x = seq if isinstance(seq, Tensor) else Tensor(_check_seq(seq, cfg.envelope_order))
    h = _stack(model, prefix, x, cfg.gen_blocks)
    return h.reshape(cfg.envelope_order, x.shape[0]).transpose()


def discriminate(model: CycleGanModel, prefix: str, seq) -> Tensor:
    """Scalar in (0, 1): sigmoid per patch position, averaged over time."""
    if prefix not in ("DX", "DY"):
        raise ValueError(f"discriminator prefix must be 'DX' or 'DY', got {prefix!r}")
    cfg = model.config
    x = seq if isinstance(seq, Tensor) else Tensor(_check_seq(seq, cfg.envelope_order))
    h = _stack(model, prefix, x, cfg.disc_blocks)
    return tmean(sigmoid(h.reshape(x.shape[0])))


def adversarial_loss(d_real, d_fake) -> Tensor:
    """E[log d_real] + E[log(1 - d_fake)]; the discriminator maximizes this."""
    dr = clip(d_real if isinstance(d_real, Tensor) else Tensor(np.asarray(d_real, dtype=np.float64)),
              EPS, 1.0 - EPS)
    df = clip(d_fake if isinstance(d_fake, Tensor) else Tensor(np.asarray(d_fake, dtype=np.float64)),
              EPS, 1.0 - EPS)
    return tmean(dr.log()) + tmean((1.0 - df).log())


def generator_surrogate(d_fake) -> Tensor:
    """Non-saturating -log D(fake) the generators minimize."""
    df = clip(d_fake if isinstance(d_fake, Tensor) else Tensor(np.asarray(d_fake, dtype=np.float64)),
              EPS, 1.0 - EPS)
    return -tmean(df.log())


def cycle_loss(x, fgx, y, gfy) -> Tensor:
    """Mean L1 of both round trips: F(G(x)) against x and G(F(y)) against y."""
    xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    yt = y if isinstance(y, Tensor) else Tensor(np.asarray(y, dtype=np.float64))
    if tuple(fgx.shape) != tuple(xt.shape) or tuple(gfy.shape) != tuple(yt.shape):
        raise ValueError(
            f"cycle shapes mismatch: {tuple(fgx.shape)} vs {tuple(xt.shape)}, "
            f"{tuple(gfy.shape)} vs {tuple(yt.shape)}"
        )
    return nn.l1_loss(fgx, xt) + nn.l1_loss(gfy, yt)


def total_loss(adv_g, adv_f, cyc, lambda_cyc: float):
    if lambda_cyc < 0:
        raise ValueError(f"lambda_cyc must be >= 0, got {lambda_cyc}")
    return adv_g + adv_f + cyc * lambda_cyc


def discriminator_step(model: CycleGanModel, x, y, opt: OptimState) -> tuple:
    """One update of D_X and D_Y on a real pair and detached fakes.

    Returns (d_x value, d_y value) of the maximized expression before the step.
    """
    cfg = model.config
    xt = Tensor(_check_seq(x, cfg.envelope_order))
    yt = Tensor(_check_seq(y, cfg.envelope_order))
    with nn.no_grad():
        fake_y = generate(model, "G", xt).data.copy()
        fake_x = generate(model, "F", yt).data.copy()
    model.store.zero_grad()
    adv_y = adversarial_loss(discriminate(model, "DY", yt), discriminate(model, "DY", Tensor(fake_y)))
    adv_x = adversarial_loss(discriminate(model, "DX", xt), discriminate(model, "DX", Tensor(fake_x)))
    (-(adv_x + adv_y)).backward()
    adam_step({**model.store.subset("DX"), **model.store.subset("DY")}, opt, cfg.lr_d)
    return float(adv_x.data), float(adv_y.data)


def generator_step(model: CycleGanModel, x, y, opt: OptimState) -> tuple:
    """One update of G and F on the surrogate adversarial terms plus the cycle.

    Returns (adv_g, adv_f, cyc, total) values before the step.
    """
    cfg = model.config
    xt = Tensor(_check_seq(x, cfg.envelope_order))
    yt = Tensor(_check_seq(y, cfg.envelope_order))
    model.store.zero_grad()
    fake_y = generate(model, "G", xt)
    fake_x = generate(model, "F", yt)
    adv_g = generator_surrogate(discriminate(model, "DY", fake_y))
    adv_f = generator_surrogate(discriminate(model, "DX", fake_x))
    cyc = cycle_loss(xt, generate(model, "F", fake_y), yt, generate(model, "G", fake_x))
    total = total_loss(adv_g, adv_f, cyc, cfg.lambda_cyc)
    total.backward()
    adam_step({**model.store.subset("G"), **model.store.subset("F")}, opt, cfg.lr_g)
    return float(adv_g.data), float(adv_f.data), float(cyc.data), float(total.data)


def train_step(model: CycleGanModel, x, y, opt_d: OptimState, opt_g: OptimState,
               step: int = 0) -> LossRecord:
    """Discriminators first on detached fakes, then generators."""
    d_x, d_y = discriminator_step(model, x, y, opt_d)
    adv_g, adv_f, cyc, total = generator_step(model, x, y, opt_g)
    rec = LossRecord(step, adv_g, adv_f, d_x, d_y, cyc, total)
    vals = (adv_g, adv_f, d_x, d_y, cyc, total)
    if not all(np.isfinite(v) for v in vals):
        raise RuntimeError(
            f"non-finite loss at step {step} (seed {model.config.seed}): {rec}"
        )
    return rec


def train_cyclegan(model: CycleGanModel, xs: list, ys: list, log_every: int = 0) -> list:
    """Minibatch-1 alternating training over two unpaired domains.

    `xs` and `ys` are lists of (frames, Q) arrays. Returns one LossRecord per
    step.
    """
    cfg = model.config
    if not xs or not ys:
        raise ValueError("both domains need at least one sequence")
    rng = np.random.default_rng(cfg.seed)
    opt_d, opt_g = OptimState(), OptimState()
    records = []
    for step in range(cfg.steps):
        x = xs[rng.integers(0, len(xs))]
        y = ys[rng.integers(0, len(ys))]
        records.append(train_step(model, x, y, opt_d, opt_g, step))
        if log_every and step % log_every == 0:
            r = records[-1]
            print(f"step {r.step:4d} cyc {r.cyc:.4f} adv_G {r.adv_g:.4f} "
                  f"adv_F {r.adv_f:.4f} total {r.total:.4f}")
    return records


def eval_cycle(model: CycleGanModel, xs: list, ys: list) -> float:
    """Mean cycle loss over whole domain lists, outside the training jitter."""
    with nn.no_grad():
        vals = []
        for x, y in zip(xs, ys):
            xt = Tensor(_check_seq(x, model.config.envelope_order))
            yt = Tensor(_check_seq(y, model.config.envelope_order))
            fgx = generate(model, "F", generate(model, "G", xt))
            gfy = generate(model, "G", generate(model, "F", yt))
            vals.append(float(cycle_loss(xt, fgx, yt, gfy).data))
    return float(np.mean(vals))


def save_loss_csv(records: list, path) -> None:
    """Append loss curves as CSV rows, writing the header on a fresh file."""
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(["step", "adv_G", "adv_F", "d_X", "d_Y", "cyc", "total"])
        for r in records:
            writer.writerow([r.step, r.adv_g, r.adv_f, r.d_x, r.d_y, r.cyc, r.total])


def convert(model: CycleGanModel, feats: WorldFeatures, direction: str,
            src_stats: PitchStats, tgt_stats: PitchStats) -> WorldFeatures:
    """Feature-space conversion: envelope through G ("x2y") or F ("y2x"),
    pitch through the log-Gaussian map, aperiodicity untouched."""
    if direction not in ("x2y", "y2x"):
        raise ValueError(f"direction must be 'x2y' or 'y2x', got {direction!r}")
    prefix = "G" if direction == "x2y" else "F"
    with nn.no_grad():
        env = generate(model, prefix, feats.envelope.values).data.copy()
    f0 = convert_pitch(feats.f0, src_stats, tgt_stats)
    ap = Aperiodicity(feats.aperiodicity.values.copy())
    return WorldFeatures(f0, SpectralEnvelope(env), ap)


def make_shift_task(n_seqs: int = 8, frames: int = 48, order: int = 32,
                    offset: float = 1.0, seed: int = 0) -> tuple:
    """Synthetic unpaired domains: Y sequences are X-process draws plus a
    fixed envelope offset. Returns (xs, ys)."""
    rng = np.random.default_rng(seed)
    win = np.hanning(9)
    win /= win.sum()

    def draw():
        z = rng.standard_normal((frames + 8, order))
        # smooth along time so sequences look like slowly varying envelopes
        sm = np.apply_along_axis(lambda c: np.convolve(c, win, mode="same"), 0, z)
        return sm[4:frames + 4] / max(sm.std(), 1e-12)

    xs = [draw() for _ in range(n_seqs)]
    ys = [draw() + offset for _ in range(n_seqs)]
    return xs, ys
