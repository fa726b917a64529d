"""Character recognizer: conv stem, residual conv blocks, a linear bridge that
consumes the frequency axis, stacked bidirectional GRUs, and a GELU head over
the 29-symbol alphabet, trained with CTC under a one-cycle schedule.

The `scale` knob shrinks every width by the same factor so the toy corpus
trains in minutes while keeping the full-size layer stack.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .audio import AudioClip, DspConfig, MelSpectrogram, mel_spectrogram
from .ctc import DEFAULT_ALPHABET, Alphabet, ctc_loss_op, greedy_decode, normalize_text
from .nn import ParamStore, Tensor, adam_step, one_cycle_lr
from .nn.tensor import gelu, log_softmax

LOG_FLOOR = np.log(1e-10)


@dataclass
class AsrConfig:
    conv_filters: int = 32
    n_res_blocks: int = 3
    fc_features: int = 256
    n_gru_layers: int = 4
    gru_hidden: int = 512
    head_hidden: int = 512
    alphabet_size: int = 29
    n_mels: int = 128
    time_stride: int = 2
    batch_size: int = 8
    max_lr: float = 5e-4
    epochs: int = 30
    warmup_frac: float = 0.05
    scale: float = 1.0
    # featurization grid; a wider hop shortens a toy-corpus character to a
    # few output frames after the stride-2 stem, which keeps blank frames
    # from dominating early CTC losses
    hop: int = 256
    window_len: int = 1024
    n_fft: int = 1024

    def __post_init__(self):
        for name in ("conv_filters", "n_res_blocks", "fc_features", "n_gru_layers",
                     "gru_hidden", "head_hidden", "alphabet_size", "n_mels",
                     "time_stride", "batch_size", "epochs", "hop"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 < self.scale <= 1:
            raise ValueError(f"scale must be in (0, 1], got {self.scale}")

    def _s(self, n: int) -> int:
        return max(1, int(round(n * self.scale)))

    @property
    def conv_filters_s(self) -> int:
        return self._s(self.conv_filters)

    @property
    def fc_features_s(self) -> int:
        return self._s(self.fc_features)

    @property
    def gru_hidden_s(self) -> int:
        return self._s(self.gru_hidden)

    @property
    def head_hidden_s(self) -> int:
        return self._s(self.head_hidden)

    @property
    def n_mels_s(self) -> int:
        return self._s(self.n_mels)

    def dsp(self) -> DspConfig:
        return DspConfig(n_mels=self.n_mels_s, hop=self.hop,
                         window_len=self.window_len, n_fft=self.n_fft)


@dataclass
class AsrModel:
    store: ParamStore
    config: AsrConfig


@dataclass
class AsrExample:
    utt_id: str
    mel: np.ndarray  # (T, n_mels) log-mel values
    target: np.ndarray  # label indices, no blanks
    text: str = ""


@dataclass
class TrainRecord:
    epoch: int
    step: int
    loss: float
    lr: float
    cer: float


def build_asr(config: AsrConfig, seed: int = 0) -> AsrModel:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    C, F = config.conv_filters_s, config.n_mels_s
    nn.add_conv2d(store, rng, "stem", 1, C, 3, 3)
    for i in range(config.n_res_blocks):
        nn.add_conv2d(store, rng, f"block{i}.conv1", C, C, 3, 3)
        nn.add_layer_norm(store, f"block{i}.ln1", C * F)
        nn.add_conv2d(store, rng, f"block{i}.conv2", C, C, 3, 3)
        nn.add_layer_norm(store, f"block{i}.ln2", C * F)
        # damp the residual branch at init: a unit-variance random branch
        # buries the stem features it is added to (stem output std ~0.27)
        store[f"block{i}.ln2.gamma"].data[:] = 0.1
    nn.add_linear(store, rng, "bridge", C * F, config.fc_features_s)
    h = config.gru_hidden_s
    in_dim = config.fc_features_s
    for i in range(config.n_gru_layers):
        nn.add_bigru(store, rng, f"gru{i}", in_dim, h)
        # start the update gates mostly closed so each layer passes frames
        # through nearly unmixed until recurrence proves useful
        for name in (f"gru{i}.b_ih", f"gru{i}.rev.b_ih"):
            store[name].data[h : 2 * h] = -2.0
        in_dim = 2 * h
    nn.add_linear(store, rng, "head", in_dim, config.head_hidden_s)
    # uniform 1/sqrt(fan_in) weights shrink activations by 1/sqrt(3) per
    # matmul; after four GRU layers the head input std is ~0.09 and GELU
    # leaves the units nearly dead (output std ~0.03). A positive bias
    # keeps them on the live side of the GELU from step one.
    store["head.b"].data[:] = 0.5
    nn.add_linear(store, rng, "out", config.head_hidden_s, config.alphabet_size)
    return AsrModel(store, config)


def out_frames(t_in: int, stride: int = 2) -> int:
    return -(-t_in // stride)


def _norm_layer(store, prefix, x: Tensor, B, T, C, F) -> Tensor:
    flat = x.transpose(0, 2, 1, 3).reshape(B * T, C * F)
    y = nn.apply_layer_norm(store, prefix, flat)
    return y.reshape(B, T, C, F).transpose(0, 2, 1, 3)


def _trunk(model: AsrModel, batch: Tensor) -> Tensor:
    """(B, 1, T, F) standardized mels -> (T', B, fc) bridge features."""
    cfg = model.config
    store = model.store
    C, F = cfg.conv_filters_s, cfg.n_mels_s
    x = gelu(nn.apply_conv2d(store, "stem", batch, stride=(cfg.time_stride, 1), pad=(1, 1)))
    B, _, T, _ = x.shape
    for i in range(cfg.n_res_blocks):
        y = nn.apply_conv2d(store, f"block{i}.conv1", x, pad=(1, 1))
        y = gelu(_norm_layer(store, f"block{i}.ln1", y, B, T, C, F))
        y = nn.apply_conv2d(store, f"block{i}.conv2", y, pad=(1, 1))
        y = _norm_layer(store, f"block{i}.ln2", y, B, T, C, F)
        x = gelu(x + y)
    feats = x.transpose(2, 0, 1, 3).reshape(T, B, C * F)
    return nn.apply_linear(store, "bridge", feats)


def _head(model: AsrModel, seq: Tensor) -> Tensor:
    store = model.store
    x = seq
    for i in range(model.config.n_gru_layers):
        x = nn.gru_layer(x, store, f"gru{i}", model.config.gru_hidden_s, bidirectional=True)
    x = gelu(nn.apply_linear(store, "head", x))
    return nn.apply_linear(store, "out", x)


def _standardize(mel: np.ndarray) -> np.ndarray:
    mu = mel.mean()
    sd = mel.std()
    return (mel - mu) / max(sd, 1e-6)


def forward_batch(model: AsrModel, mels: list) -> list:
    """Per-item log-prob matrices for a batch of raw log-mel arrays.

    Items are padded to the batch max length with log-floor frames; the
    padded tail is cut from each item's logits before log-softmax, so padding
    never reaches the loss.
    """
    cfg = model.config
    for m in mels:
        if m.ndim != 2 or m.shape[1] != cfg.n_mels_s:
            raise ValueError(f"expected mel width {cfg.n_mels_s}, got shape {m.shape}")
    t_max = max(m.shape[0] for m in mels)
    stacked = np.full((len(mels), 1, t_max, cfg.n_mels_s), LOG_FLOOR, dtype=np.float64)
    for b, m in enumerate(mels):
        stacked[b, 0, : m.shape[0]] = m
        # stats come from the true frames only but rescale the padding too
        stacked[b, 0] = (stacked[b, 0] - m.mean()) / max(m.std(), 1e-6)
    batch = Tensor(stacked.astype(np.float32))
    logits = _head(model, _trunk(model, batch))  # (T', B, |A|)
    out = []
    for b, m in enumerate(mels):
        t_out = out_frames(m.shape[0], cfg.time_stride)
        out.append(log_softmax(logits[0:t_out, b]))
    return out


def asr_forward(model: AsrModel, mel) -> np.ndarray:
    """LogitMatrix for one utterance; rows log-sum-exp to 0."""
    values = mel.values if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    with nn.no_grad():
        return forward_batch(model, [values])[0].data.astype(np.float64)


def transcribe(model: AsrModel, clip: AudioClip, dsp: DspConfig = None,
               alphabet: Alphabet = DEFAULT_ALPHABET) -> str:
    logits = asr_forward(model, mel_spectrogram(clip, dsp or model.config.dsp()))
    return alphabet.decode(greedy_decode(logits))


def levenshtein(ref, hyp) -> int:
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def cer(ref: str, hyp: str) -> float:
    return levenshtein(ref, hyp) / max(1, len(ref))


def wer(ref: str, hyp: str) -> float:
    return levenshtein(ref.split(), hyp.split()) / max(1, len(ref.split()))


def featurize(utterances, dsp: DspConfig = DspConfig(),
              alphabet: Alphabet = DEFAULT_ALPHABET) -> list:
    """Load each utterance's audio and produce (mel, label) training examples."""
    from .audio import load_wav

    out = []
    for u in utterances:
        mel = mel_spectrogram(load_wav(u.audio_path), dsp)
        text = normalize_text(u.transcript, alphabet)
        out.append(AsrExample(u.utt_id, mel.values, alphabet.encode(text), text))
    return out


def eval_cer(model: AsrModel, examples, alphabet: Alphabet = DEFAULT_ALPHABET) -> float:
    if not examples:
        return float("nan")
    total = 0.0
    for ex in examples:
        logits = asr_forward(model, ex.mel)
        hyp = alphabet.decode(greedy_decode(logits))
        total += cer(ex.text, hyp)
    return total / len(examples)


def train_asr(model: AsrModel, train_set: list, eval_set: list, seed: int = 0,
              log_every: int = 0, target_cer: float = 0.0) -> list:
    """CTC training with Adam under a one-cycle schedule.

    Returns per-epoch TrainRecords; the model keeps the parameters of its
    best-CER epoch. Stops early once eval CER reaches target_cer.
    """
    cfg = model.config
    rng = np.random.default_rng(seed)
    n_batches = -(-len(train_set) // cfg.batch_size)
    total_steps = cfg.epochs * n_batches
    state = nn.OptimState()
    params = model.store
    history = []
    best = (float("inf"), None)
    step = 0
    by_length = np.argsort([len(ex.mel) for ex in train_set], kind="stable")
    for epoch in range(cfg.epochs):
        # shortest-first on the first pass keeps early CTC losses away from
        # the all-blank plateau; random order afterwards
        order = by_length if epoch == 0 else rng.permutation(len(train_set))
        epoch_loss = 0.0
        lr = 0.0
        for b in range(n_batches):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            items = [train_set[i] for i in idx]
            params.zero_grad()
            logit_list = forward_batch(model, [it.mel for it in items])
            losses = [ctc_loss_op(lg, it.target) for lg, it in zip(logit_list, items)]
            loss = losses[0]
            for extra in losses[1:]:
                loss = loss + extra
            loss = loss * (1.0 / len(items))
            if not np.isfinite(loss.data):
                ids = [it.utt_id for it in items]
                raise RuntimeError(f"non-finite CTC loss at epoch {epoch} step {step} on batch {ids}")
            loss.backward()
            lr = one_cycle_lr(min(step, total_steps), total_steps, cfg.max_lr, cfg.warmup_frac)
            adam_step(params, state, lr)
            epoch_loss += float(loss.data)
            step += 1
        val = eval_cer(model, eval_set)
        history.append(TrainRecord(epoch, step, epoch_loss / n_batches, lr, val))
        if log_every and (epoch % log_every == 0 or epoch == cfg.epochs - 1):
            print(f"epoch {epoch:3d} loss {epoch_loss / n_batches:8.4f} lr {lr:.2e} cer {val:.3f}")
        if val < best[0]:
            best = (val, {k: v.data.copy() for k, v in params.items()})
        if val <= target_cer:
            break
    if best[1] is not None:
        for k, v in params.items():
            v.data[...] = best[1][k]
    return history
