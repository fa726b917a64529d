"""End-to-end orchestration: configuration, checkpoints, spectrogram images,
voice conversion (recognize, embed, synthesize, invert), and the evaluation
report.

The conversion path chains the trained recognizer, speaker encoder, and
synthesizer: content audio is transcribed, style audio is embedded, the
synthesizer renders the transcript in the style speaker's voice, and
Griffin-Lim turns the mel frames back into a waveform.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import numpy as np

from .asr import AsrConfig, AsrModel, cer, transcribe
from .audio import AudioClip, DspConfig, MelSpectrogram, griffin_lim, load_wav, mel_spectrogram, save_wav
from .corpus import Corpus, ToyCorpusSpec
from .ctc import DEFAULT_ALPHABET
from .cyclegan import CycleGanConfig
from .nn import ParamStore
from .speaker import EMBED_DIM, EncoderModel, SpeakerConfig, embed, similarity
from .synth import SynthConfig, SynthModel, synthesize
from .world import WorldConfig

log = logging.getLogger(__name__)


@dataclass
class PipelinePaths:
    work_dir: str = "runs"
    corpus_dir: str = "runs/toy_corpus"
    asr_ckpt: str = "runs/asr.ckpt"
    encoder_ckpt: str = "runs/encoder.ckpt"
    synth_ckpt: str = "runs/synth.ckpt"
    cyclegan_ckpt: str = "runs/cyclegan.ckpt"


@dataclass
class PipelineConfig:
    dsp: DspConfig = field(default_factory=DspConfig)
    asr: AsrConfig = field(default_factory=AsrConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    encoder: SpeakerConfig = field(default_factory=SpeakerConfig)
    cyclegan: CycleGanConfig = field(default_factory=CycleGanConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    corpus: ToyCorpusSpec = field(default_factory=ToyCorpusSpec)
    paths: PipelinePaths = field(default_factory=PipelinePaths)

    def validate(self) -> None:
        """Reject cross-module dimension mismatches before any training."""
        problems = []
        if self.asr.alphabet_size != len(DEFAULT_ALPHABET.symbols):
            problems.append(
                f"asr.alphabet_size {self.asr.alphabet_size} != alphabet size "
                f"{len(DEFAULT_ALPHABET.symbols)}"
            )
        if self.synth.mel_dim != self.dsp.n_mels:
            problems.append(f"synth.mel_dim {self.synth.mel_dim} != dsp.n_mels {self.dsp.n_mels}")
        if self.encoder.n_mels != self.dsp.n_mels:
            problems.append(f"encoder.n_mels {self.encoder.n_mels} != dsp.n_mels {self.dsp.n_mels}")
        if self.cyclegan.envelope_order != self.world.envelope_order:
            problems.append(
                f"cyclegan.envelope_order {self.cyclegan.envelope_order} != "
                f"world.envelope_order {self.world.envelope_order}"
            )
        if problems:
            raise ValueError("pipeline config mismatch: " + "; ".join(problems))


def _coerce(raw: str, current):
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        elem = current[0] if current else ""
        return tuple(_coerce(p, elem) for p in parts)
    return raw


def load_config(path) -> PipelineConfig:
    """Parse a plain-text `section.key = value` file into a PipelineConfig.

    Unknown sections or keys are errors; types follow the dataclass defaults.
    """
    cfg = PipelineConfig()
    sections = {f.name: getattr(cfg, f.name) for f in dc_fields(cfg)}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected 'section.key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        section, _, attr = key.partition(".")
        if section not in sections or not attr:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        target = sections[section]
        if not hasattr(target, attr):
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            setattr(target, attr, _coerce(raw, getattr(target, attr)))
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: bad value for {key}: {e}") from e
    # re-run the dataclass validators on the mutated sections
    for name, obj in sections.items():
        post = getattr(obj, "__post_init__", None)
        if post is not None:
            post()
    cfg.validate()
    return cfg


def save_checkpoint(store: ParamStore, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(store.to_bytes())


def load_checkpoint(store: ParamStore, path) -> None:
    """Fill `store` from a checkpoint; format, version, and shapes validated."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint {path} not found; train the model first")
    store.load_bytes(path.read_bytes())


def export_spectrogram_image(mel, path) -> None:
    """Write a binary PGM: one pixel per mel cell, min-max scaled to 0..255,
    time left-to-right, low frequencies at the bottom. A constant input has no
    scale, so it renders as mid-gray (128)."""
    vals = np.asarray(mel.values if hasattr(mel, "values") else mel, dtype=np.float64)
    if vals.ndim != 2 or vals.size == 0:
        raise ValueError(f"mel must be a non-empty (frames, n_mels) array, got shape {vals.shape}")
    lo, hi = float(vals.min()), float(vals.max())
    if hi > lo:
        px = np.round((vals - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        px = np.full(vals.shape, 128, dtype=np.uint8)
    img = px.T[::-1]  # rows become mel bins, top row = highest band
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + np.ascontiguousarray(img).tobytes())


@dataclass
class PipelineModels:
    asr: AsrModel
    encoder: EncoderModel
    synth: SynthModel


@dataclass
class ConversionResult:
    out_wav: Path
    transcript: str
    image_paths: dict
    gl_error: float
    truncated: bool


def convert_voice(content_path, style_path, models: PipelineModels, out_dir,
                  dsp: DspConfig = None, gl_iterations: int = 60) -> ConversionResult:
    """content.wav + style.wav -> out_dir/converted.wav plus the transcript and
    the three spectrogram images (content, style, output). Inputs are only
    read."""
    dsp = dsp or DspConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    content = load_wav(content_path)
    style = load_wav(style_path)

    transcript = transcribe(models.asr, content)
    if not transcript.strip():
        raise ValueError(
            f"transcription of {content_path} is empty; provide a longer content clip"
        )
    style_mel = mel_spectrogram(style, dsp)
    spk = embed(models.encoder, style_mel)
    result = synthesize(models.synth, transcript, spk)
    if result.truncated:
        log.warning("synthesis hit the %d-step cap before the stop token",
                    models.synth.config.max_decoder_steps)
    out_mel = MelSpectrogram(result.mel, hop_seconds=dsp.hop_seconds)
    clip, errors = griffin_lim(out_mel, iterations=gl_iterations, config=dsp, return_errors=True)
    out_wav = out_dir / "converted.wav"
    save_wav(clip, out_wav)
    (out_dir / "transcript.txt").write_text(transcript + "\n")

    image_paths = {}
    for name, m in (("content", mel_spectrogram(content, dsp)),
                    ("style", style_mel),
                    ("output", out_mel)):
        image_paths[name] = out_dir / f"{name}.pgm"
        export_spectrogram_image(m, image_paths[name])
    return ConversionResult(out_wav, transcript, image_paths, float(errors[-1]),
                            result.truncated)


@dataclass
class EvalRow:
    content_utt: str
    style_utt: str
    cer: float
    margin: float
    gl_error: float


@dataclass
class EvalReport:
    rows: list
    csv_path: Path
    summary_path: Path

    @property
    def mean_cer(self) -> float:
        return float(np.mean([r.cer for r in self.rows]))

    @property
    def n_margin_positive(self) -> int:
        return sum(1 for r in self.rows if r.margin > 0)


def _pick_pairs(corpus: Corpus, n_pairs: int, rng) -> list:
    """Cross-speaker (content, style) utterance pairs, validation split first."""
    val = [u for u in corpus if u.split == "validation"]
    pool = val if len(val) >= 2 else list(corpus)
    pairs = [(c, s) for c in pool for s in pool if c.speaker_id != s.speaker_id]
    if not pairs:
        raise ValueError("need utterances from at least 2 speakers to build eval pairs")
    if len(pairs) < n_pairs:
        extra = [(c, s) for c in pool for s in corpus
                 if c.speaker_id != s.speaker_id and (c, s) not in pairs]
        pairs = pairs + extra
    idx = rng.permutation(len(pairs))[:n_pairs]
    return [pairs[int(i)] for i in idx]


def eval_end2end(corpus: Corpus, models: PipelineModels, out_dir,
                 dsp: DspConfig = None, n_pairs: int = 10, seed: int = 0,
                 gl_iterations: int = 60) -> EvalReport:
    """Convert held-out cross-speaker pairs and score each conversion: CER of
    the output transcript against the content transcript, style-minus-content
    embedding margin, and the Griffin-Lim convergence error."""
    dsp = dsp or DspConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for i, (content_u, style_u) in enumerate(_pick_pairs(corpus, n_pairs, rng)):
        pair_dir = out_dir / f"pair_{i:02d}"
        res = convert_voice(content_u.audio_path, style_u.audio_path, models, pair_dir,
                            dsp=dsp, gl_iterations=gl_iterations)
        out_clip = load_wav(res.out_wav)
        out_text = transcribe(models.asr, out_clip)
        e_out = embed(models.encoder, mel_spectrogram(out_clip, dsp))
        e_style = embed(models.encoder, mel_spectrogram(load_wav(style_u.audio_path), dsp))
        e_content = embed(models.encoder, mel_spectrogram(load_wav(content_u.audio_path), dsp))
        margin = similarity(e_out, e_style) - similarity(e_out, e_content)
        rows.append(EvalRow(content_u.utt_id, style_u.utt_id,
                            cer(res.transcript, out_text), float(margin), res.gl_error))

    csv_path = out_dir / "eval.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["content_utt", "style_utt", "cer", "margin", "gl_error"])
        for r in rows:
            writer.writerow([r.content_utt, r.style_utt, f"{r.cer:.6f}",
                             f"{r.margin:.6f}", f"{r.gl_error:.6f}"])
    report = EvalReport(rows, csv_path, out_dir / "summary.txt")
    lines = [
        f"pairs evaluated: {len(rows)}",
        f"mean content CER: {report.mean_cer:.4f}",
        f"pairs with output closer to style: {report.n_margin_positive}/{len(rows)}",
        f"mean Griffin-Lim convergence error: {np.mean([r.gl_error for r in rows]):.4f}",
    ]
    report.summary_path.write_text("\n".join(lines) + "\n")
    return report
