"""CTC loss with analytic gradient, a brute-force alignment oracle, and
greedy decoding over a 29-symbol character alphabet (blank, a-z, space,
apostrophe).

The dynamic program runs entirely in log space; naive probability-space
recursions underflow once T passes a few dozen frames.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .nn import Tensor
from .nn.tensor import _make

NEG_INF = -np.inf


@dataclass(frozen=True)
class Alphabet:
    symbols: tuple = field(default=("<blank>",) + tuple("abcdefghijklmnopqrstuvwxyz") + (" ", "'"))

    def __post_init__(self):
        if self.symbols[0] != "<blank>":
            raise ValueError("symbol 0 must be the blank")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be unique")

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def blank(self) -> int:
        return 0

    def encode(self, text: str) -> np.ndarray:
        idx = []
        for ch in text:
            try:
                idx.append(self.symbols.index(ch))
            except ValueError:
                raise ValueError(f"character {ch!r} not in alphabet") from None
        return np.array(idx, dtype=np.int64)

    def decode(self, indices) -> str:
        return "".join(self.symbols[int(i)] for i in indices if int(i) != self.blank)


DEFAULT_ALPHABET = Alphabet()


def normalize_text(text: str, alphabet: Alphabet = DEFAULT_ALPHABET) -> str:
    """Lowercase, drop characters outside the alphabet, squeeze whitespace runs."""
    keep = set(alphabet.symbols[1:])
    kept = "".join(ch if ch in keep else " " if ch.isspace() else "" for ch in text.lower())
    return " ".join(kept.split())


def _extend_with_blanks(target: np.ndarray) -> np.ndarray:
    ext = np.zeros(2 * len(target) + 1, dtype=np.int64)
    ext[1::2] = target
    return ext


def min_frames_for(target) -> int:
    """Shortest T that can emit the target: one frame per symbol plus a blank
    between each adjacent repeat."""
    target = np.asarray(target)
    repeats = int(np.sum(target[1:] == target[:-1])) if len(target) > 1 else 0
    return len(target) + repeats


def _validate(logits: np.ndarray, target: np.ndarray):
    if logits.ndim != 2:
        raise ValueError(f"logits must be T x |A|, got shape {logits.shape}")
    T, A = logits.shape
    if len(target) and (target.min() < 1 or target.max() >= A):
        raise ValueError(f"target indices must lie in [1, {A}), got {target.tolist()}")
    need = min_frames_for(target)
    if T < need:
        raise ValueError(f"target needs at least {need} frames but logits have only {T}")


def ctc_loss(logits: np.ndarray, target) -> tuple:
    """Negative log total probability of all frame paths collapsing to target.

    logits holds per-frame log-probabilities (rows log-sum-exp to 0). Returns
    (loss, gradient wrt logits); the gradient is zero at symbols the extended
    target never visits.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.int64)
    _validate(logits, target)
    T = logits.shape[0]
    ext = _extend_with_blanks(target)
    S = ext.size
    lp = logits[:, ext]  # (T, S) log-prob of each extended symbol per frame

    # skip from s-2 to s is legal when s is a label differing from the label two back
    can_skip = np.zeros(S, dtype=bool)
    can_skip[2:] = (ext[2:] != 0) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = lp[0, 0]
    if S > 1:
        alpha[0, 1] = lp[0, 1]
    for t in range(1, T):
        stay = alpha[t - 1]
        step = np.full(S, NEG_INF)
        step[1:] = alpha[t - 1, :-1]
        skip = np.full(S, NEG_INF)
        skip[2:] = alpha[t - 1, :-2]
        skip = np.where(can_skip, skip, NEG_INF)
        alpha[t] = _logsumexp3(stay, step, skip) + lp[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = lp[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = lp[T - 1, S - 2]
    skip_fwd = np.zeros(S, dtype=bool)
    skip_fwd[:-2] = can_skip[2:]
    for t in range(T - 2, -1, -1):
        stay = beta[t + 1]
        step = np.full(S, NEG_INF)
        step[:-1] = beta[t + 1, 1:]
        skip = np.full(S, NEG_INF)
        skip[:-2] = beta[t + 1, 2:]
        skip = np.where(skip_fwd, skip, NEG_INF)
        beta[t] = _logsumexp3(stay, step, skip) + lp[t]

    tail = alpha[T - 1, S - 1] if S == 1 else np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    loss = -tail

    # alpha and beta both carry frame t's emission, divide it out once
    occupancy = alpha + beta - lp + loss  # = ln(alpha*beta / (p * P)) per (t, s)
    grad = np.zeros_like(logits)
    contrib = np.exp(occupancy)
    for s in range(S):
        grad[:, ext[s]] -= contrib[:, s]
    return float(loss), grad


def _logsumexp3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.exp(a - safe) + np.exp(b - safe) + np.exp(c - safe))
    return np.where(np.isfinite(m), out, NEG_INF)


def ctc_loss_op(logits: Tensor, target) -> Tensor:
    """ctc_loss as a graph node so training can backprop through it."""
    loss, grad = ctc_loss(logits.data.astype(np.float64), target)
    out_data = np.array(loss, dtype=logits.data.dtype)

    def backward(g):
        logits.accumulate(g * grad.astype(logits.data.dtype))

    return _make(out_data, (logits,), backward)


def ctc_brute_force(logits: np.ndarray, target, max_t: int = 12, max_a: int = 5) -> float:
    """Literal enumeration of every |A|^T frame path; ground truth for ctc_loss.

    Paths are scored in chunks so peak memory stays bounded even at the size
    limit.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.int64)
    T, A = logits.shape
    if T > max_t or A > max_a:
        raise ValueError(f"brute force limited to T<={max_t}, |A|<={max_a}; got T={T}, |A|={A}")
    _validate(logits, target)
    L = len(target)

    total = NEG_INF
    chunk = 1 << 18
    it = itertools.product(range(A), repeat=T)
    while True:
        block = np.fromiter(itertools.chain.from_iterable(itertools.islice(it, chunk)),
                            dtype=np.int64)
        if block.size == 0:
            break
        paths = block.reshape(-1, T)
        scores = logits[np.arange(T)[None, :], paths].sum(axis=1)
        mask = _collapses_to(paths, target, L)
        if mask.any():
            m = scores[mask]
            peak = m.max()
            total = np.logaddexp(total, peak + np.log(np.exp(m - peak).sum()))
    if not np.isfinite(total):
        raise ValueError("no frame path collapses to the target")
    return float(-total)


def _collapses_to(paths: np.ndarray, target: np.ndarray, L: int) -> np.ndarray:
    P, T = paths.shape
    first = np.ones((P, 1), dtype=bool)
    changed = paths[:, 1:] != paths[:, :-1]
    kept = np.concatenate([first, changed], axis=1) & (paths != 0)
    counts = kept.sum(axis=1)
    ok = counts == L
    if L == 0 or not ok.any():
        return ok
    pos = np.cumsum(kept, axis=1) - 1
    buf = np.zeros((P, L), dtype=np.int64)
    rows, cols = np.nonzero(kept)
    sel = ok[rows]
    buf[rows[sel], pos[rows[sel], cols[sel]]] = paths[rows[sel], cols[sel]]
    ok &= (buf == target[None, :]).all(axis=1)
    return ok


def collapse(path) -> np.ndarray:
    """Merge adjacent repeats, then delete blanks."""
    path = np.asarray(path, dtype=np.int64)
    if path.size == 0:
        return path
    kept = np.concatenate([[True], path[1:] != path[:-1]])
    out = path[kept]
    return out[out != 0]


def greedy_decode(logits: np.ndarray) -> np.ndarray:
    """Per-frame argmax then collapse; argmax breaks ties toward lower index."""
    return collapse(np.argmax(np.asarray(logits), axis=1))
