"""Style-conditioned text-to-mel synthesizer.

Character embeddings run through a conv stack and a bi-LSTM; the speaker
embedding is concatenated onto every encoder state to form the attention
memory. An autoregressive decoder with location-sensitive attention emits one
mel frame per step plus a stop probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .ctc import DEFAULT_ALPHABET, Alphabet, normalize_text
from .nn import ParamStore
from .nn.optim import OptimState, adam_step
from .nn.tensor import Tensor, concat, gelu, sigmoid, softmax, stack, tanh

SPK_DIM = 256


@dataclass
class SynthConfig:
    char_embed_dim: int = 256
    enc_conv_layers: int = 3
    enc_kernel: int = 5
    enc_lstm_hidden: int = 256  # per direction
    attn_dim: int = 128
    attn_location_filters: int = 32
    attn_location_kernel: int = 31
    prenet_dims: tuple = (256, 256)
    dec_lstm_layers: int = 2
    dec_lstm_hidden: int = 512
    mel_dim: int = 128
    max_decoder_steps: int = 400
    stop_threshold: float = 0.5
    scale: float = 1.0
    # affine frame normalization: raw log-mels sit near mean -5 with std 3.6
    # on the tone corpus, far from the zero init of the mel head; the decoder
    # runs on (mel - mel_offset) / mel_scale and outputs are mapped back
    mel_offset: float = -5.0
    mel_scale: float = 4.0
    # training; the prenet dropout is not regularization but an information
    # bottleneck: with clean previous frames the decoder copies them and
    # ignores attention, which free-running synthesis then cannot survive
    lr: float = 2e-3
    steps: int = 500
    prenet_dropout: float = 0.5

    def _s(self, n: int) -> int:
        return max(1, int(round(n * self.scale)))

    @property
    def char_embed_dim_s(self):
        return self._s(self.char_embed_dim)

    @property
    def enc_lstm_hidden_s(self):
        return self._s(self.enc_lstm_hidden)

    @property
    def attn_dim_s(self):
        return self._s(self.attn_dim)

    @property
    def attn_location_filters_s(self):
        return self._s(self.attn_location_filters)

    @property
    def prenet_dims_s(self):
        return tuple(self._s(d) for d in self.prenet_dims)

    @property
    def dec_lstm_hidden_s(self):
        return self._s(self.dec_lstm_hidden)

    @property
    def memory_dim(self):
        return 2 * self.enc_lstm_hidden_s + SPK_DIM


@dataclass
class SynthModel:
    store: ParamStore
    config: SynthConfig


@dataclass
class AttentionState:
    prev: np.ndarray  # last alignment weights, (L,)
    cum: np.ndarray  # additive history of weights, (L,)


@dataclass
class SynthesisResult:
    mel: np.ndarray  # (T, mel_dim)
    stop_probs: np.ndarray
    alignments: np.ndarray  # (T, L)
    truncated: bool = False


def build_synth(config: SynthConfig, seed: int = 0) -> SynthModel:
    if config.mel_dim < 1 or config.dec_lstm_layers < 1 or config.mel_scale == 0:
        raise ValueError(f"invalid synth config: {config}")
    rng = np.random.default_rng(seed)
    store = ParamStore()
    E = config.char_embed_dim_s
    store.add("embed.table", nn.uniform_init(rng, (len(DEFAULT_ALPHABET.symbols), E), E))
    for i in range(config.enc_conv_layers):
        nn.add_conv1d(store, rng, f"enc{i}.conv", E, E, config.enc_kernel)
        nn.add_layer_norm(store, f"enc{i}.ln", E)
    nn.add_bilstm(store, rng, "enc.lstm", E, config.enc_lstm_hidden_s)

    A, F = config.attn_dim_s, config.attn_location_filters_s
    D = config.dec_lstm_hidden_s
    nn.add_linear(store, rng, "attn.query", D, A)
    nn.add_linear(store, rng, "attn.memory", config.memory_dim, A)
    nn.add_conv1d(store, rng, "attn.loc_conv", 1, F, config.attn_location_kernel)
    nn.add_linear(store, rng, "attn.loc_proj", F, A)
    nn.add_linear(store, rng, "attn.v", A, 1)

    p_in = config.mel_dim
    for i, p_out in enumerate(config.prenet_dims_s):
        nn.add_linear(store, rng, f"prenet{i}", p_in, p_out)
        p_in = p_out
    dec_in = p_in + config.memory_dim
    for i in range(config.dec_lstm_layers):
        nn.add_lstm(store, rng, f"dec{i}", dec_in, D)
        dec_in = D
    nn.add_linear(store, rng, "mel_out", D, config.mel_dim)
    nn.add_linear(store, rng, "stop", D, 1)
    # an untrained stop head sits at sigmoid(0) = 0.5, exactly the firing
    # threshold; start it firmly off so only training can raise it
    store["stop.b"].data[:] = -3.0
    return SynthModel(store, config)


def encode_text(model: SynthModel, text: str) -> Tensor:
    """(L, 2·enc_hidden) encoder states, one row per character."""
    if not text:
        raise ValueError("cannot encode empty text")
    cfg = model.config
    ids = DEFAULT_ALPHABET.encode(text)
    x = nn.embedding(model.store["embed.table"], np.asarray(ids))  # (L, E)
    seq = x.transpose().reshape(1, cfg.char_embed_dim_s, len(ids))
    pad = cfg.enc_kernel // 2
    for i in range(cfg.enc_conv_layers):
        seq = nn.apply_conv1d(model.store, f"enc{i}.conv", seq, pad=pad)
        flat = seq.reshape(cfg.char_embed_dim_s, len(ids)).transpose()
        flat = gelu(nn.apply_layer_norm(model.store, f"enc{i}.ln", flat))
        seq = flat.transpose().reshape(1, cfg.char_embed_dim_s, len(ids))
    states = seq.reshape(cfg.char_embed_dim_s, len(ids)).transpose()  # (L, E)
    out, _ = nn.lstm_layer(states, model.store, "enc.lstm", cfg.enc_lstm_hidden_s,
                           bidirectional=True)
    return out


def condition(states: Tensor, spk_embedding) -> Tensor:
    """Append the speaker embedding to every encoder state row."""
    spk = np.asarray(spk_embedding, dtype=np.float64)
    if spk.shape != (SPK_DIM,):
        raise ValueError(f"speaker embedding must be ({SPK_DIM},), got {spk.shape}")
    if abs(np.linalg.norm(spk) - 1.0) > 1e-5:
        raise ValueError("speaker embedding must be unit norm")
    L = states.shape[0]
    tile = Tensor(np.tile(spk, (L, 1)).astype(states.dtype))
    return concat([states, tile], axis=1)


def attend(model: SynthModel, query: Tensor, memory: Tensor, mem_proj: Tensor,
           attn_state: AttentionState) -> tuple:
    """One location-sensitive attention pass.

    Returns (context, weights Tensor, new AttentionState). `mem_proj` is the
    memory projection, precomputed once per utterance.
    """
    cfg = model.config
    L = memory.shape[0]
    q = nn.apply_linear(model.store, "attn.query", query)  # (A,)
    loc_in = Tensor(attn_state.cum.reshape(1, 1, L).astype(memory.dtype))
    pad = cfg.attn_location_kernel // 2
    loc = nn.apply_conv1d(model.store, "attn.loc_conv", loc_in, pad=pad)
    loc = loc.reshape(cfg.attn_location_filters_s, L).transpose()  # (L, F)
    loc = nn.apply_linear(model.store, "attn.loc_proj", loc)  # (L, A)
    energies = nn.apply_linear(model.store, "attn.v", tanh(mem_proj + loc + q))
    weights = softmax(energies.reshape(L))
    context = weights.reshape(1, L) @ memory  # (1, mem_dim)
    new_state = AttentionState(prev=weights.data.copy(),
                               cum=attn_state.cum + weights.data)
    return context.reshape(memory.shape[1]), weights, new_state


def _prenet(model: SynthModel, frame: Tensor, rng=None) -> Tensor:
    cfg = model.config
    x = frame
    for i in range(len(cfg.prenet_dims)):
        x = gelu(nn.apply_linear(model.store, f"prenet{i}", x))
        if rng is not None and cfg.prenet_dropout > 0:
            keep = 1.0 - cfg.prenet_dropout
            mask = (rng.random(tuple(x.shape)) < keep) / keep
            x = x * Tensor(mask.astype(np.float64))
    return x


@dataclass
class DecoderState:
    h: list
    c: list
    attn: AttentionState

    @classmethod
    def initial(cls, model: SynthModel, memory_len: int) -> "DecoderState":
        cfg = model.config
        D = cfg.dec_lstm_hidden_s
        return cls(
            h=[Tensor(np.zeros(D)) for _ in range(cfg.dec_lstm_layers)],
            c=[Tensor(np.zeros(D)) for _ in range(cfg.dec_lstm_layers)],
            attn=AttentionState(prev=np.zeros(memory_len), cum=np.zeros(memory_len)),
        )


def decode_step(model: SynthModel, prev_frame: Tensor, state: DecoderState,
                memory: Tensor, mem_proj: Tensor, rng=None) -> tuple:
    """(mel frame, stop probability, weights, new state) for one decoder step.

    `rng` enables prenet dropout and is only passed during training."""
    cfg = model.config
    context, weights, attn_state = attend(model, state.h[-1], memory, mem_proj, state.attn)
    x = concat([_prenet(model, prev_frame, rng), context])
    hs, cs = [], []
    for i in range(cfg.dec_lstm_layers):
        h, c = nn.lstm_step(model.store, f"dec{i}", x, state.h[i], state.c[i],
                            cfg.dec_lstm_hidden_s)
        hs.append(h)
        cs.append(c)
        x = h
    frame = nn.apply_linear(model.store, "mel_out", x)
    stop = sigmoid(nn.apply_linear(model.store, "stop", x))
    return frame, stop, weights, DecoderState(hs, cs, attn_state)


def _prepare_memory(model: SynthModel, text: str, spk_embedding):
    states = encode_text(model, text)
    memory = condition(states, spk_embedding)
    mem_proj = nn.apply_linear(model.store, "attn.memory", memory)
    return memory, mem_proj


def synthesize(model: SynthModel, text: str, spk_embedding,
               alphabet: Alphabet = DEFAULT_ALPHABET) -> SynthesisResult:
    """Free-running decoding until the stop head fires or the step cap hits."""
    cfg = model.config
    text = normalize_text(text, alphabet)
    with nn.no_grad():
        memory, mem_proj = _prepare_memory(model, text, spk_embedding)
        state = DecoderState.initial(model, memory.shape[0])
        prev = Tensor(np.zeros(cfg.mel_dim))
        frames, stops, aligns = [], [], []
        truncated = True
        for _ in range(cfg.max_decoder_steps):
            frame, stop, weights, state = decode_step(model, prev, state, memory, mem_proj)
            frames.append(frame.data.copy())
            stops.append(float(stop.data))
            aligns.append(weights.data.copy())
            prev = frame
            if stops[-1] > cfg.stop_threshold:
                truncated = False
                break
    mel = np.asarray(frames) * cfg.mel_scale + cfg.mel_offset
    return SynthesisResult(mel, np.asarray(stops), np.asarray(aligns),
                           truncated=truncated)


def synth_loss(pred_mel: Tensor, target_mel: np.ndarray, stop_pred: Tensor,
               stop_target: np.ndarray) -> Tensor:
    """MSE on mel frames plus binary cross-entropy on the stop track."""
    if tuple(pred_mel.shape) != tuple(np.shape(target_mel)):
        raise ValueError(
            f"mel shape mismatch: {tuple(pred_mel.shape)} vs {tuple(np.shape(target_mel))}"
        )
    return nn.mse_loss(pred_mel, Tensor(np.asarray(target_mel, dtype=np.float64))) + \
        nn.bce_loss(stop_pred, Tensor(np.asarray(stop_target, dtype=np.float64)))


def teacher_forced(model: SynthModel, text: str, target_mel: np.ndarray,
                   spk_embedding, rng=None) -> tuple:
    """(loss Tensor, alignment ndarray) for one utterance under teacher forcing."""
    cfg = model.config
    tgt = (np.asarray(target_mel, dtype=np.float64) - cfg.mel_offset) / cfg.mel_scale
    memory, mem_proj = _prepare_memory(model, text, spk_embedding)
    state = DecoderState.initial(model, memory.shape[0])
    T = tgt.shape[0]
    prev = Tensor(np.zeros(cfg.mel_dim))
    frames, stops, aligns = [], [], []
    for t in range(T):
        frame, stop, weights, state = decode_step(model, prev, state, memory, mem_proj, rng)
        frames.append(frame)
        stops.append(stop.reshape(()))
        aligns.append(weights.data.copy())
        prev = Tensor(tgt[t])
    pred = stack(frames)
    stop_pred = stack(stops)
    stop_target = np.zeros(T)
    stop_target[-1] = 1.0
    return synth_loss(pred, tgt, stop_pred, stop_target), np.asarray(aligns)


def train_synth(model: SynthModel, dataset: list, seed: int = 0,
                log_every: int = 0) -> list:
    """Teacher-forced training; dataset rows are (text, mel ndarray, embedding).

    Returns per-step losses. Steps cycle through the dataset in seeded random
    order.
    """
    cfg = model.config
    if not dataset:
        raise ValueError("empty synthesis dataset")
    norm = [(normalize_text(t), np.asarray(m, dtype=np.float64), s) for t, m, s in dataset]
    for text, mel, _ in norm:
        if not text:
            raise ValueError("dataset contains an empty transcript")
        if mel.ndim != 2 or mel.shape[1] != cfg.mel_dim:
            raise ValueError(f"mel width must be {cfg.mel_dim}, got {mel.shape}")
    rng = np.random.default_rng(seed)
    opt = OptimState()
    history = []
    for step in range(cfg.steps):
        text, mel, spk = norm[rng.integers(0, len(norm))]
        model.store.zero_grad()
        loss, _ = teacher_forced(model, text, mel, spk, rng)
        if not np.isfinite(loss.data):
            raise RuntimeError(f"non-finite synthesis loss at step {step} on {text!r}")
        loss.backward()
        adam_step(model.store, opt, cfg.lr)
        history.append(float(loss.data))
        if log_every and step % log_every == 0:
            print(f"step {step:4d} loss {history[-1]:.5f}")
    return history
