"""WORLD-style source-filter decomposition and log-Gaussian pitch mapping.

Three per-frame features on a 25 ms / 10 ms grid, independent of the STFT
grid used elsewhere: fundamental frequency from normalized autocorrelation,
a liftered cepstral envelope, and residual-to-total energy ratios in four
octave bands. Unvoiced frames carry f0 = 0 and aperiodicity 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioClip, Stft, n_stft_frames, stft


@dataclass
class WorldConfig:
    frame_len: int = 400
    hop: int = 160
    n_fft: int = 512
    f0_min: float = 60.0
    f0_max: float = 400.0
    voicing_threshold: float = 0.3
    envelope_order: int = 32
    n_bands: int = 4


@dataclass
class F0Contour:
    """Per-frame f0 in Hz; 0 marks unvoiced frames."""

    values: np.ndarray
    hop_seconds: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError(f"f0 contour must be 1-D, got shape {self.values.shape}")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("f0 values must be finite and non-negative")

    @property
    def voiced_mask(self) -> np.ndarray:
        return self.values > 0

    @property
    def n_frames(self) -> int:
        return self.values.size


@dataclass
class SpectralEnvelope:
    """Frames x Q liftered cepstral coefficients of the log magnitude."""

    values: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def order(self) -> int:
        return self.values.shape[1]


@dataclass
class Aperiodicity:
    """Frames x B band ratios of non-harmonic to total energy, in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        if np.any(self.values < 0) or np.any(self.values > 1):
            raise ValueError("aperiodicity ratios must lie in [0, 1]")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass
class WorldFeatures:
    f0: F0Contour
    envelope: SpectralEnvelope
    aperiodicity: Aperiodicity

    def __post_init__(self):
        counts = (self.f0.n_frames, self.envelope.n_frames, self.aperiodicity.n_frames)
        if len(set(counts)) != 1:
            raise ValueError(f"frame counts disagree: f0/envelope/aperiodicity = {counts}")

    @property
    def n_frames(self) -> int:
        return self.f0.n_frames


@dataclass
class PitchStats:
    """Mean and spread of ln(f0) over voiced frames."""

    mu_log: float
    sigma_log: float

    def __post_init__(self):
        if not self.sigma_log > 0:
            raise ValueError(f"sigma_log must be positive, got {self.sigma_log}")


def _frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    frames = n_stft_frames(x.size, frame_len, hop)
    padded = (frames - 1) * hop + frame_len
    if padded > x.size:
        x = np.concatenate([x, np.zeros(padded - x.size)])
    idx = np.arange(frame_len)[None, :] + hop * np.arange(frames)[:, None]
    return x[idx]


def estimate_f0(clip: AudioClip, f0_min: float = 60.0, f0_max: float = 400.0,
                config: WorldConfig = WorldConfig()) -> F0Contour:
    """Normalized-autocorrelation pitch tracking.

    Among lags whose correlation comes within 15% of the frame maximum, the
    smallest is taken, which stops period doubling onto subharmonics. A
    parabolic fit around the winning lag gives sub-sample period resolution.
    """
    sr = clip.sample_rate
    if not 0 < f0_min < f0_max < sr / 2:
        raise ValueError(f"need 0 < f0_min < f0_max < Nyquist, got [{f0_min}, {f0_max}]")
    segs = _frame_signal(clip.samples, config.frame_len, config.hop)
    segs = segs - segs.mean(axis=1, keepdims=True)
    lag_lo = max(2, int(np.floor(sr / f0_max)))
    lag_hi = min(config.frame_len - 2, int(np.ceil(sr / f0_min)))
    if lag_hi <= lag_lo:
        raise ValueError(f"frame of {config.frame_len} samples cannot hold lags for f0_min={f0_min}")
    n_frames, W = segs.shape
    corr = np.zeros((n_frames, lag_hi + 2))
    sq = segs * segs
    for lag in range(lag_lo - 1, lag_hi + 2):
        a = segs[:, : W - lag]
        b = segs[:, lag:]
        denom = np.sqrt(sq[:, : W - lag].sum(axis=1) * sq[:, lag:].sum(axis=1))
        corr[:, lag] = np.where(denom > 1e-12, (a * b).sum(axis=1) / np.maximum(denom, 1e-12), 0.0)

    f0 = np.zeros(n_frames)
    search = corr[:, lag_lo : lag_hi + 1]
    peak = search.max(axis=1)
    is_peak = (corr[:, lag_lo : lag_hi + 1] >= corr[:, lag_lo - 1 : lag_hi]) & (
        corr[:, lag_lo : lag_hi + 1] >= corr[:, lag_lo + 1 : lag_hi + 2]
    )
    for i in range(n_frames):
        if peak[i] < config.voicing_threshold:
            continue
        near = np.nonzero(is_peak[i] & (search[i] >= 0.85 * peak[i]))[0]
        if near.size == 0:
            near = np.nonzero(search[i] == peak[i])[0]
        lag = lag_lo + near[0]
        prev_c, c, next_c = corr[i, lag - 1], corr[i, lag], corr[i, lag + 1]
        denom = prev_c - 2 * c + next_c
        delta = 0.0 if abs(denom) < 1e-12 else np.clip(0.5 * (prev_c - next_c) / denom, -0.5, 0.5)
        f0[i] = np.clip(sr / (lag + delta), f0_min, f0_max)
    return F0Contour(f0, hop_seconds=config.hop / sr)


def spectral_envelope(spec: Stft, order: int = 32) -> SpectralEnvelope:
    """Real cepstrum of the log magnitude, kept to the first `order` coefficients."""
    if not 0 < order < spec.n_bins:
        raise ValueError(f"envelope order must be in (0, {spec.n_bins}), got {order}")
    mag = np.abs(spec.values)
    # floor scales with the frame peak so that rescaling the waveform shifts
    # only the zeroth cepstral coefficient
    floor = np.maximum(mag.max(axis=1, keepdims=True) * 1e-8, 1e-10)
    log_mag = np.log(np.maximum(mag, floor))
    cep = np.fft.irfft(log_mag, n=spec.n_fft, axis=1)
    return SpectralEnvelope(cep[:, :order].copy())


def envelope_to_log_spectrum(env: SpectralEnvelope, n_fft: int) -> np.ndarray:
    """Smooth log-magnitude half spectrum implied by the liftered cepstrum."""
    Q = env.order
    full = np.zeros((env.n_frames, n_fft))
    full[:, :Q] = env.values
    full[:, n_fft - Q + 1 :] = env.values[:, 1:][:, ::-1]
    return np.fft.rfft(full, n=n_fft, axis=1).real


_BAND_EDGES_HZ = (0.0, 1000.0, 2000.0, 4000.0, 8000.0)


def aperiodicity(clip: AudioClip, f0: F0Contour, config: WorldConfig = WorldConfig()) -> Aperiodicity:
    """Residual-to-total energy ratio per frame in 4 octave bands.

    The periodic part of a voiced frame is predicted as the average of the
    signal one pitch period back and forward (linear interpolation for
    fractional periods); what the prediction misses is the residual.
    """
    sr = clip.sample_rate
    frames = n_stft_frames(clip.samples.size, config.frame_len, config.hop)
    if frames != f0.n_frames:
        raise ValueError(f"f0 has {f0.n_frames} frames but clip analyzes to {frames}")
    pad = int(np.ceil(sr / config.f0_min)) + 2
    x = np.concatenate([np.zeros(pad), clip.samples, np.zeros(pad + config.frame_len)])

    bins = np.fft.rfftfreq(config.frame_len, d=1.0 / sr)
    band_masks = [
        (bins >= lo) & (bins < hi) if hi < sr / 2 else (bins >= lo)
        for lo, hi in zip(_BAND_EDGES_HZ[:-1], _BAND_EDGES_HZ[1:])
    ]

    out = np.ones((frames, config.n_bands))
    for t in range(frames):
        if f0.values[t] <= 0:
            continue
        period = sr / f0.values[t]
        base = pad + t * config.hop
        n = base + np.arange(config.frame_len)
        seg = x[n]

        def shifted(offset):
            pos = n + offset
            lo = np.floor(pos).astype(int)
            frac = pos - lo
            return (1 - frac) * x[lo] + frac * x[lo + 1]

        periodic = 0.5 * (shifted(-period) + shifted(period))
        res_spec = np.abs(np.fft.rfft(seg - periodic)) ** 2
        tot_spec = np.abs(np.fft.rfft(seg)) ** 2
        for b, mask in enumerate(band_masks):
            tot = tot_spec[mask].sum()
            out[t, b] = 1.0 if tot < 1e-12 else min(1.0, res_spec[mask].sum() / tot)
    return Aperiodicity(out)


def world_features(clip: AudioClip, config: WorldConfig = WorldConfig()) -> WorldFeatures:
    """f0, envelope, and aperiodicity on one shared 25 ms / 10 ms frame grid."""
    f0 = estimate_f0(clip, config.f0_min, config.f0_max, config)
    spec = stft(clip, window_len=config.frame_len, hop=config.hop, n_fft=config.n_fft)
    env = spectral_envelope(spec, config.envelope_order)
    ap = aperiodicity(clip, f0, config)
    return WorldFeatures(f0, env, ap)


def pitch_stats(f0: F0Contour) -> PitchStats:
    """Mean/std of ln(f0) over voiced frames; needs spread to define a mapping."""
    voiced = f0.values[f0.voiced_mask]
    if voiced.size < 2:
        raise ValueError(f"need at least 2 voiced frames to fit pitch stats, got {voiced.size}")
    logs = np.log(voiced)
    sigma = float(logs.std())
    if sigma <= 0:
        raise ValueError("pitch has zero variance; cannot fit log-Gaussian stats")
    return PitchStats(mu_log=float(logs.mean()), sigma_log=sigma)


def convert_pitch(f0: F0Contour, src: PitchStats, tgt: PitchStats) -> F0Contour:
    """ln f0' = (ln f0 - mu_src) * (sigma_tgt / sigma_src) + mu_tgt on voiced frames."""
    if src.sigma_log <= 0:
        raise ValueError("source sigma_log must be positive")
    if src.mu_log == tgt.mu_log and src.sigma_log == tgt.sigma_log:
        return F0Contour(f0.values.copy(), hop_seconds=f0.hop_seconds)
    out = np.zeros_like(f0.values)
    m = f0.voiced_mask
    out[m] = np.exp((np.log(f0.values[m]) - src.mu_log) * (tgt.sigma_log / src.sigma_log) + tgt.mu_log)
    return F0Contour(out, hop_seconds=f0.hop_seconds)
