"""Speaker encoder: mel windows through an LSTM stack to a unit 256-d embedding.

Training follows the generalized end-to-end recipe: batches of N speakers
by M random utterance crops, softmax cross-entropy over scaled cosines to
speaker centroids, own centroid computed with the embedding itself left out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import ParamStore
from .nn.optim import OptimState, adam_step
from .nn.tensor import Tensor, concat, log_softmax, stack, tsum

EMBED_DIM = 256


@dataclass
class SpeakerConfig:
    n_layers: int = 3
    lstm_hidden: int = 256
    n_mels: int = 128
    window: int = 40
    scale: float = 1.0
    # training
    n_speakers_batch: int = 2
    m_utts_batch: int = 4
    steps: int = 300
    lr: float = 1e-3

    def _s(self, n: int) -> int:
        return max(1, int(round(n * self.scale)))

    @property
    def lstm_hidden_s(self) -> int:
        return self._s(self.lstm_hidden)


@dataclass
class EncoderModel:
    store: ParamStore
    config: SpeakerConfig


def build_encoder(config: SpeakerConfig, seed: int = 0) -> EncoderModel:
    if config.n_layers < 1 or config.window < 1:
        raise ValueError(f"invalid encoder config: {config}")
    rng = np.random.default_rng(seed)
    store = ParamStore()
    in_dim = config.n_mels
    for i in range(config.n_layers):
        nn.add_lstm(store, rng, f"lstm{i}", in_dim, config.lstm_hidden_s)
        in_dim = config.lstm_hidden_s
    nn.add_linear(store, rng, "proj", in_dim, EMBED_DIM)
    # scaled-cosine parameters of the contrastive objective
    store.add("sim.w", np.array([10.0]))
    store.add("sim.b", np.array([-5.0]))
    return EncoderModel(store, config)


def _encode_window(model: EncoderModel, window: Tensor) -> Tensor:
    """(window, n_mels) -> unnormalized (EMBED_DIM,) projection of the final state."""
    cfg = model.config
    x = window
    state = None
    for i in range(cfg.n_layers):
        x, state = nn.lstm_layer(x, model.store, f"lstm{i}", cfg.lstm_hidden_s)
    h_final = state[0]
    return nn.apply_linear(model.store, "proj", h_final)


def _window_starts(n_frames: int, window: int) -> list:
    hop = window // 2
    starts = list(range(0, n_frames - window + 1, hop))
    # cover the tail when the hop grid misses it
    if starts[-1] + window < n_frames:
        starts.append(n_frames - window)
    return starts


def embed(model: EncoderModel, mel) -> np.ndarray:
    """Average windowed encodings into one unit-norm embedding."""
    values = np.asarray(mel.values if hasattr(mel, "values") else mel, dtype=np.float64)
    w = model.config.window
    if values.ndim != 2 or values.shape[1] != model.config.n_mels:
        raise ValueError(f"expected (frames, {model.config.n_mels}) mel, got {values.shape}")
    if values.shape[0] < w:
        raise ValueError(
            f"input has {values.shape[0]} frames; embedding needs at least {w}"
        )
    with nn.no_grad():
        outs = []
        for s in _window_starts(values.shape[0], w):
            win = Tensor(values[s : s + w])
            outs.append(_encode_window(model, win).data)
    mean = np.mean(outs, axis=0)
    return mean / max(np.linalg.norm(mean), 1e-12)


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(np.asarray(a), np.asarray(b)))


def contrastive_loss(embeddings: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Generalized end-to-end softmax loss over an (N, M, D) embedding batch.

    Rows need not be pre-normalized; cosines are computed explicitly. The own
    centroid excludes the embedding being scored, otherwise trivial solutions
    score themselves.
    """
    N, M, D = embeddings.shape
    if N < 2 or M < 2:
        raise ValueError(f"contrastive batch needs N >= 2 and M >= 2, got {(N, M)}")
    e = embeddings
    norm_e = (e * e).sum(axis=-1, keepdims=True).sqrt()
    sums = tsum(e, axis=1)  # (N, D)

    own = (sums.reshape((N, 1, D)) - e) * (1.0 / (M - 1))  # leave-one-out centroids
    norm_own = (own * own).sum(axis=-1, keepdims=True).sqrt()
    cos_own = (e * own).sum(axis=-1) / (norm_e * norm_own).reshape((N, M))  # (N, M)

    cents = sums * (1.0 / M)  # (N, D)
    norm_c = (cents * cents).sum(axis=-1, keepdims=True).sqrt()
    flat = e.reshape((N * M, D))
    cos_all = (flat @ cents.transpose()) / (norm_e.reshape((N * M, 1)) * norm_c.transpose())

    own_mask = np.repeat(np.eye(N), M, axis=0)  # (N*M, N), 1 at own speaker column
    cos = cos_all * (1.0 - own_mask) + cos_own.reshape((N * M, 1)) * own_mask

    w_pos = nn.tensor.clip(w, 1e-3, 1e6)
    scores = cos * w_pos + b
    logp = log_softmax(scores, axis=-1)
    return -(logp * own_mask).sum() * (1.0 / (N * M))


def _random_crop(rng, mel: np.ndarray, window: int) -> np.ndarray:
    if mel.shape[0] < window:
        raise ValueError(f"utterance too short to crop: {mel.shape[0]} < {window}")
    start = rng.integers(0, mel.shape[0] - window + 1)
    return mel[start : start + window]


def same_cross_gap(model: EncoderModel, mels_by_speaker: dict) -> tuple:
    """(gap, mean same-speaker cosine, mean cross-speaker cosine) over all pairs."""
    embs = {spk: [embed(model, m) for m in mels] for spk, mels in mels_by_speaker.items()}
    same, cross = [], []
    speakers = sorted(embs)
    for i, si in enumerate(speakers):
        for a_idx, a in enumerate(embs[si]):
            for b_idx, bvec in enumerate(embs[si]):
                if a_idx < b_idx:
                    same.append(similarity(a, bvec))
        for sj in speakers[i + 1 :]:
            for a in embs[si]:
                for bvec in embs[sj]:
                    cross.append(similarity(a, bvec))
    mean_same = float(np.mean(same)) if same else float("nan")
    mean_cross = float(np.mean(cross)) if cross else float("nan")
    return mean_same - mean_cross, mean_same, mean_cross


def train_encoder(model: EncoderModel, train_by_speaker: dict, seed: int = 0,
                  log_every: int = 0) -> list:
    """GE2E training over random N-speaker M-crop batches; returns loss history."""
    cfg = model.config
    speakers = sorted(train_by_speaker)
    if len(speakers) < 2:
        raise ValueError(f"need at least 2 speakers to contrast, got {len(speakers)}")
    for spk, mels in train_by_speaker.items():
        if len(mels) < 1:
            raise ValueError(f"speaker {spk} has no utterances")
    rng = np.random.default_rng(seed)
    opt = OptimState()
    history = []
    n = min(cfg.n_speakers_batch, len(speakers))
    for step in range(cfg.steps):
        chosen = rng.choice(len(speakers), size=n, replace=False)
        rows = []
        for si in chosen:
            mels = train_by_speaker[speakers[si]]
            utt_ids = rng.integers(0, len(mels), size=cfg.m_utts_batch)
            crops = [_random_crop(rng, mels[u], cfg.window) for u in utt_ids]
            rows.append(stack([_encode_window(model, Tensor(c)) for c in crops]))
        batch = stack(rows)  # (N, M, D)
        model.store.zero_grad()
        loss = contrastive_loss(batch, model.store["sim.w"], model.store["sim.b"])
        if not np.isfinite(loss.data):
            raise RuntimeError(f"non-finite contrastive loss at step {step}")
        loss.backward()
        adam_step(model.store, opt, cfg.lr)
        # the scaled-softmax weight must stay positive
        np.maximum(model.store["sim.w"].data, 1e-3, out=model.store["sim.w"].data)
        history.append(float(loss.data))
        if log_every and step % log_every == 0:
            print(f"step {step:4d} loss {history[-1]:.4f}")
    return history
