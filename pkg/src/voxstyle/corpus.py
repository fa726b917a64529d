"""Corpus handling: disk layout ingestion and a synthetic desk-scale corpus.

The toy generator gives every alphabet character a fixed formant pair, so
audio carries recoverable text content, while per-speaker pitch base and
formant scaling make speakers separable. That is all the structure the
recognizer, speaker encoder, and synthesizer need to train in minutes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioClip, save_wav
from .ctc import DEFAULT_ALPHABET, Alphabet, normalize_text

log = logging.getLogger(__name__)

_DEFAULT_VOCAB = (
    "bad", "come", "dig", "fox", "hush", "joke", "lamp",
    "mint", "quiz", "rust", "very", "wasp",
)


@dataclass(frozen=True)
class Utterance:
    speaker_id: str
    utt_id: str
    audio_path: Path
    transcript: str
    split: str = "train"


@dataclass
class Corpus:
    utterances: list

    def __post_init__(self):
        ids = [u.utt_id for u in self.utterances]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate utt_ids in corpus: {dup}")

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    @property
    def speakers(self) -> list:
        return sorted({u.speaker_id for u in self.utterances})

    def by_speaker(self, speaker_id: str) -> list:
        return [u for u in self.utterances if u.speaker_id == speaker_id]

    def split(self, tag: str) -> "Corpus":
        return Corpus([u for u in self.utterances if u.split == tag])


@dataclass
class ToyCorpusSpec:
    n_speakers: int = 2
    utts_per_speaker: int = 10
    vocabulary: tuple = _DEFAULT_VOCAB
    pitch_bases: tuple = (120.0, 220.0)
    formant_shifts: tuple = (1.0, 1.06)
    words_per_utt: tuple = (3, 5)
    seed: int = 0
    sample_rate: int = 16000
    char_seconds: float = 0.12
    edge_pause_seconds: float = 0.1

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ValueError(f"need at least 2 speakers, got {self.n_speakers}")
        if len(self.pitch_bases) != self.n_speakers or len(self.formant_shifts) != self.n_speakers:
            raise ValueError(
                f"pitch_bases/formant_shifts must list one value per speaker "
                f"({self.n_speakers}), got {len(self.pitch_bases)}/{len(self.formant_shifts)}"
            )


def char_formants(index: int) -> tuple:
    """Formant pair for alphabet symbol `index`; distinct for every index ≤ 28
    because 7 and 5 are coprime. Grid spacing stays above one mel filter
    bandwidth so neighboring characters land in different mel bands."""
    return 300.0 + 90.0 * (index % 7), 1400.0 + 450.0 * (index % 5)


def _synth_char(index: int, f0: float, shift: float, n: int, sr: int, rng) -> np.ndarray:
    f1, f2 = char_formants(index)
    f1, f2 = f1 * shift, f2 * shift
    t = np.arange(n) / sr
    k = np.arange(1, int(7600.0 / f0) + 1)
    freqs = k * f0
    amps = (
        np.exp(-0.5 * ((freqs - f1) / 50.0) ** 2)
        + 0.7 * np.exp(-0.5 * ((freqs - f2) / 70.0) ** 2)
        + 0.02 / k
    )
    phases = rng.uniform(0, 2 * np.pi, size=k.size)
    seg = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])).sum(axis=0)
    seg *= 0.1 / max(np.sqrt(np.mean(seg**2)), 1e-9)
    fade = min(160, n // 4)
    ramp = np.linspace(0.0, 1.0, fade)
    seg[:fade] *= ramp
    seg[-fade:] *= ramp[::-1]
    return seg


def synth_utterance(text: str, pitch_base: float, formant_shift: float,
                    rng, sr: int = 16000, char_seconds: float = 0.12,
                    edge_pause_seconds: float = 0.1,
                    alphabet: Alphabet = DEFAULT_ALPHABET) -> AudioClip:
    """Render one transcript as a sequence of formant tones.

    Each voiced character drifts up to ±3% around the speaker's pitch base so
    that per-speaker pitch statistics have nonzero spread.
    """
    n_char = int(round(char_seconds * sr))
    n_pause = int(round(edge_pause_seconds * sr))
    parts = [np.zeros(n_pause)]
    for ch in text:
        if ch == " ":
            parts.append(np.zeros(n_char))
            continue
        idx = int(alphabet.encode(ch)[0])
        f0 = pitch_base * np.exp(rng.uniform(-0.03, 0.03))
        parts.append(_synth_char(idx, f0, formant_shift, n_char, sr, rng))
    parts.append(np.zeros(n_pause))
    samples = np.concatenate(parts)
    samples += rng.normal(0.0, 5e-4, size=samples.size)
    return AudioClip(np.clip(samples, -1.0, 1.0), sr)


def gen_toy_corpus(spec: ToyCorpusSpec, out_dir) -> Corpus:
    """Materialize wavs and transcript files under out_dir; deterministic in seed."""
    for word in spec.vocabulary:
        for ch in word:
            if ch == " " or ch not in DEFAULT_ALPHABET.symbols[1:]:
                raise ValueError(f"vocabulary word {word!r} contains out-of-alphabet character {ch!r}")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(spec.seed)
    utts = []
    lo, hi = spec.words_per_utt
    for s in range(spec.n_speakers):
        speaker_id = f"spk{s}"
        spk_dir = out_dir / speaker_id
        spk_dir.mkdir(parents=True, exist_ok=True)
        lines = []
        for u in range(spec.utts_per_speaker):
            n_words = int(rng.integers(lo, hi + 1))
            words = [spec.vocabulary[int(rng.integers(0, len(spec.vocabulary)))] for _ in range(n_words)]
            text = " ".join(words)
            clip = synth_utterance(text, spec.pitch_bases[s], spec.formant_shifts[s], rng,
                                   sr=spec.sample_rate, char_seconds=spec.char_seconds,
                                   edge_pause_seconds=spec.edge_pause_seconds)
            utt_id = f"{speaker_id}_u{u:02d}"
            wav_path = spk_dir / f"{utt_id}.wav"
            save_wav(clip, wav_path)
            lines.append(f"{utt_id} {text}")
            split = "validation" if u % 5 == 4 else "train"
            utts.append(Utterance(speaker_id, utt_id, wav_path, text, split))
        (spk_dir / "transcript.txt").write_text("\n".join(lines) + "\n")
    return Corpus(utts)


def ingest_corpus(root, val_every: int = 5) -> Corpus:
    """Read root/<speaker>/<utt>.wav plus per-speaker transcript files.

    Utterances missing either audio or a transcript line are logged and
    skipped; transcripts are normalized to the alphabet with a log line when
    normalization changed the text.
    """
    root = Path(root)
    utts = []
    seen = {}
    for spk_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        speaker_id = spk_dir.name
        transcript_path = spk_dir / "transcript.txt"
        texts = {}
        if transcript_path.exists():
            for line in transcript_path.read_text().splitlines():
                line = line.strip()
                if not line:
                    continue
                utt_id, _, text = line.partition(" ")
                if utt_id in texts:
                    raise ValueError(f"duplicate utt_id {utt_id!r} in {transcript_path}")
                texts[utt_id] = text
        wavs = {p.stem: p for p in sorted(spk_dir.glob("*.wav"))}
        for utt_id in sorted(set(texts) | set(wavs)):
            if utt_id not in wavs:
                log.warning("skipping %s/%s: transcript without audio", speaker_id, utt_id)
                continue
            if utt_id not in texts:
                log.warning("skipping %s: audio without transcript line", wavs[utt_id])
                continue
            raw = texts[utt_id]
            norm = normalize_text(raw)
            if norm != raw:
                log.warning("normalized transcript for %s/%s: %r -> %r", speaker_id, utt_id, raw, norm)
            if utt_id in seen:
                raise ValueError(
                    f"duplicate utt_id {utt_id!r}: {wavs[utt_id]} collides with {seen[utt_id]}"
                )
            seen[utt_id] = wavs[utt_id]
            idx = len([u for u in utts if u.speaker_id == speaker_id])
            split = "validation" if idx % val_every == val_every - 1 else "train"
            utts.append(Utterance(speaker_id, utt_id, wavs[utt_id], norm, split))
    if not utts:
        raise ValueError(f"no usable utterances under {root}")
    return Corpus(utts)
