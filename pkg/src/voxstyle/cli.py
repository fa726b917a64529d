"""Command-line pipeline: one subcommand per training stage plus conversion,
evaluation, and a gradient self-check.

Every subcommand accepts --config (plain-text `section.key = value`), --seed,
and --out. Training commands read the corpus from `paths.corpus_dir`, write a
checkpoint and a metrics CSV into --out, and are bit-reproducible for a fixed
seed. `convert` and `eval` load checkpoints from the `paths` section, so runs
that train into a non-default --out need the config to point there.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .asr import build_asr, eval_cer, featurize, train_asr
from .audio import load_wav, mel_spectrogram
from .corpus import ToyCorpusSpec, gen_toy_corpus, ingest_corpus
from .cyclegan import build_cyclegan, save_loss_csv, train_cyclegan
from .gradsuite import TOL, run_gradient_suite
from .pipeline import (
    PipelineConfig,
    PipelineModels,
    convert_voice,
    eval_end2end,
    load_checkpoint,
    load_config,
    save_checkpoint,
)
from .speaker import build_encoder, embed, train_encoder
from .synth import build_synth, train_synth
from .world import world_features


def _load_cfg(args) -> PipelineConfig:
    if args.config:
        return load_config(args.config)
    cfg = PipelineConfig()
    cfg.validate()
    return cfg


def _out_dir(args, cfg: PipelineConfig) -> Path:
    out = Path(args.out) if args.out else Path(cfg.paths.work_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _corpus(cfg: PipelineConfig):
    root = Path(cfg.paths.corpus_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory {root} not found; run gen-toy first")
    return ingest_corpus(root)


def _corpus_mels(corpus, dsp):
    return {u.utt_id: mel_spectrogram(load_wav(u.audio_path), dsp).values for u in corpus}


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _load_models(cfg: PipelineConfig, seed: int) -> PipelineModels:
    asr = build_asr(cfg.asr, seed=seed)
    load_checkpoint(asr.store, cfg.paths.asr_ckpt)
    encoder = build_encoder(cfg.encoder, seed=seed)
    load_checkpoint(encoder.store, cfg.paths.encoder_ckpt)
    synth = build_synth(cfg.synth, seed=seed)
    load_checkpoint(synth.store, cfg.paths.synth_ckpt)
    return PipelineModels(asr=asr, encoder=encoder, synth=synth)


def cmd_gen_toy(args) -> int:
    cfg = _load_cfg(args)
    spec = cfg.corpus
    spec.seed = args.seed
    out = Path(args.out) if args.out else Path(cfg.paths.corpus_dir)
    corpus = gen_toy_corpus(spec, out)
    print(f"wrote {len(corpus)} utterances for {len(corpus.speakers)} speakers to {out}")
    return 0


def cmd_featurize(args) -> int:
    cfg = _load_cfg(args)
    corpus = _corpus(cfg)
    out = _out_dir(args, cfg) / "features"
    out.mkdir(exist_ok=True)
    rows = []
    for u in corpus:
        mel = mel_spectrogram(load_wav(u.audio_path), cfg.dsp)
        np.save(out / f"{u.utt_id}.npy", mel.values)
        rows.append([u.utt_id, u.speaker_id, u.split, mel.values.shape[0],
                     str(out / f"{u.utt_id}.npy")])
    _write_csv(out / "index.csv", ["utt_id", "speaker", "split", "frames", "path"], rows)
    print(f"featurized {len(rows)} utterances into {out}")
    return 0


def cmd_train_asr(args) -> int:
    cfg = _load_cfg(args)
    corpus = _corpus(cfg)
    out = _out_dir(args, cfg)
    model = build_asr(cfg.asr, seed=args.seed)
    examples = featurize(corpus.utterances, cfg.asr.dsp())
    # desk scale: train and report CER on the full corpus
    records = train_asr(model, examples, examples, seed=args.seed)
    save_checkpoint(model.store, out / "asr.ckpt")
    _write_csv(out / "asr_metrics.csv", ["epoch", "step", "loss", "lr", "cer"],
               [[r.epoch, r.step, f"{r.loss:.6f}", f"{r.lr:.2e}", f"{r.cer:.4f}"] for r in records])
    print(f"asr: {len(records)} epochs, final cer {eval_cer(model, examples):.4f}, "
          f"checkpoint {out / 'asr.ckpt'}")
    return 0


def cmd_train_encoder(args) -> int:
    cfg = _load_cfg(args)
    corpus = _corpus(cfg)
    out = _out_dir(args, cfg)
    mels = _corpus_mels(corpus, cfg.dsp)
    by_speaker = {}
    for u in corpus:
        by_speaker.setdefault(u.speaker_id, []).append(mels[u.utt_id])
    model = build_encoder(cfg.encoder, seed=args.seed)
    history = train_encoder(model, by_speaker, seed=args.seed)
    save_checkpoint(model.store, out / "encoder.ckpt")
    _write_csv(out / "encoder_loss.csv", ["step", "loss"],
               [[i, f"{v:.6f}"] for i, v in enumerate(history)])
    print(f"encoder: {len(history)} steps, final loss {history[-1]:.4f}, "
          f"checkpoint {out / 'encoder.ckpt'}")
    return 0


def cmd_train_synth(args) -> int:
    cfg = _load_cfg(args)
    corpus = _corpus(cfg)
    out = _out_dir(args, cfg)
    encoder = build_encoder(cfg.encoder, seed=args.seed)
    load_checkpoint(encoder.store, cfg.paths.encoder_ckpt)
    mels = _corpus_mels(corpus, cfg.dsp)
    dataset = [(u.transcript, mels[u.utt_id], embed(encoder, mels[u.utt_id]))
               for u in corpus]
    model = build_synth(cfg.synth, seed=args.seed)
    history = train_synth(model, dataset, seed=args.seed)
    save_checkpoint(model.store, out / "synth.ckpt")
    _write_csv(out / "synth_loss.csv", ["step", "loss"],
               [[i, f"{v:.6f}"] for i, v in enumerate(history)])
    print(f"synth: {len(history)} steps, final loss {history[-1]:.5f}, "
          f"checkpoint {out / 'synth.ckpt'}")
    return 0


def cmd_train_cyclegan(args) -> int:
    cfg = _load_cfg(args)
    corpus = _corpus(cfg)
    out = _out_dir(args, cfg)
    speakers = corpus.speakers
    if len(speakers) != 2:
        raise ValueError(f"cyclegan training maps between exactly 2 speakers, corpus has {len(speakers)}")
    domains = []
    for spk in speakers:
        seqs = []
        for u in corpus.by_speaker(spk):
            feats = world_features(load_wav(u.audio_path), cfg.world)
            seqs.append(feats.envelope.values)
        domains.append(seqs)
    model = build_cyclegan(cfg.cyclegan, seed=args.seed)
    records = train_cyclegan(model, domains[0], domains[1])
    save_checkpoint(model.store, out / "cyclegan.ckpt")
    save_loss_csv(records, out / "cyclegan_loss.csv")
    print(f"cyclegan {speakers[0]}<->{speakers[1]}: {len(records)} steps, "
          f"final cycle {records[-1].cyc:.4f}, checkpoint {out / 'cyclegan.ckpt'}")
    return 0


def cmd_convert(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args, cfg)
    models = _load_models(cfg, args.seed)
    result = convert_voice(args.content, args.style, models, out, dsp=cfg.dsp)
    print(f"transcript: {result.transcript!r}")
    if result.truncated:
        print("warning: synthesis hit the decoder step limit", file=sys.stderr)
    print(f"wrote {result.out_wav}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    corpus = _corpus(cfg)
    out = _out_dir(args, cfg)
    models = _load_models(cfg, args.seed)
    report = eval_end2end(corpus, models, out, dsp=cfg.dsp,
                          n_pairs=args.pairs, seed=args.seed)
    print(Path(report.summary_path).read_text(), end="")
    print(f"rows: {report.csv_path}")
    return 0


def cmd_gradcheck(args) -> int:
    failures = 0
    for name, err in run_gradient_suite(seed=args.seed):
        ok = err <= TOL
        failures += not ok
        print(f"{name:14s} {err:.3e} {'ok' if ok else 'FAIL'}")
    if failures:
        print(f"{failures} gradient check(s) above {TOL:.0e}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxstyle", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", default=None,
                       help="plain-text config file; defaults are used when omitted")
        p.add_argument("--seed", metavar="N", type=int, default=0)
        p.add_argument("--out", metavar="DIR", default=None,
                       help="output directory (default: paths.work_dir)")
        p.set_defaults(func=func)
        return p

    add("gen-toy", cmd_gen_toy, "generate the synthetic two-speaker corpus")
    add("featurize", cmd_featurize, "write log-mel features and an index CSV")
    add("train-asr", cmd_train_asr, "train the recognizer on the corpus")
    add("train-encoder", cmd_train_encoder, "train the speaker encoder")
    add("train-synth", cmd_train_synth, "train the synthesizer (needs the encoder checkpoint)")
    add("train-cyclegan", cmd_train_cyclegan, "train the envelope converter between the two speakers")
    p = add("convert", cmd_convert, "convert a content clip into a style speaker's voice")
    p.add_argument("--content", metavar="WAV", required=True)
    p.add_argument("--style", metavar="WAV", required=True)
    p = add("eval", cmd_eval, "run the end-to-end conversion report on held-out pairs")
    p.add_argument("--pairs", metavar="N", type=int, default=10)
    add("gradcheck", cmd_gradcheck, "finite-difference check every differentiable op")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
