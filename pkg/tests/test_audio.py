import numpy as np
import pytest

from voxstyle.audio import (
    AudioClip,
    DspConfig,
    WavFormatError,
    griffin_lim,
    hann_window,
    hz_to_mel,
    load_wav,
    mel_filterbank,
    mel_spectrogram,
    n_stft_frames,
    save_wav,
    stft,
)

SR = 16000


def sine(freq, seconds=1.0, amp=0.5, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), sr)


# -- WAV I/O --------------------------------------------------------------------


def test_wav_round_trip_quantization_bound(tmp_path):
    clip = sine(440, seconds=0.1)
    save_wav(clip, tmp_path / "a.wav")
    back = load_wav(tmp_path / "a.wav")
    assert back.sample_rate == SR
    assert np.max(np.abs(back.samples - clip.samples)) <= 1.0 / 32768


def test_wav_full_scale_code(tmp_path):
    clip = AudioClip(np.array([32767.0 / 32768.0] * 8), SR)
    save_wav(clip, tmp_path / "b.wav")
    assert load_wav(tmp_path / "b.wav").samples[0] == pytest.approx(0.99997, abs=1e-5)


def test_wav_rejects_non_riff(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"not audio at all")
    with pytest.raises(WavFormatError):
        load_wav(tmp_path / "bad.wav")


def test_clip_rejects_nonfinite():
    with pytest.raises(ValueError):
        AudioClip(np.array([0.0, np.nan]), SR)


# -- STFT -----------------------------------------------------------------------


def test_stft_sine_peak_bin_is_analytic():
    spec = stft(sine(440), window_len=1024, hop=256, n_fft=1024)
    mags = np.abs(spec.values)
    mid = mags[10:-10]
    expect = round(440 * 1024 / SR)  # = 28
    assert np.all(np.argmax(mid, axis=1) == expect)


def test_stft_zero_clip_is_zero():
    spec = stft(AudioClip(np.zeros(4000), SR))
    assert np.max(np.abs(spec.values)) == 0.0


def test_stft_linearity():
    clip = sine(300, seconds=0.3)
    a = stft(clip).values
    b = stft(AudioClip(2.5 * clip.samples, SR)).values
    assert np.linalg.norm(b - 2.5 * a) / np.linalg.norm(b) < 1e-6


def test_stft_parseval_per_frame():
    clip = sine(523, seconds=0.2)
    spec = stft(clip, window_len=1024, hop=256, n_fft=1024)
    x = np.concatenate([clip.samples, np.zeros(4096)])
    win = hann_window(1024)
    t = 3
    seg = x[t * 256 : t * 256 + 1024] * win
    # rfft halves need doubling except DC and Nyquist
    power = np.abs(spec.values[t]) ** 2
    total = power[0] + power[-1] + 2 * power[1:-1].sum()
    assert total / 1024 == pytest.approx(np.sum(seg**2), rel=1e-6)


def test_stft_short_clip_rejected():
    with pytest.raises(ValueError):
        stft(AudioClip(np.zeros(100), SR), window_len=1024)


def test_frame_count_contract():
    assert n_stft_frames(1024, 1024, 256) == 1
    assert n_stft_frames(1025, 1024, 256) == 2
    assert n_stft_frames(16000, 1024, 256) == 60


# -- mel ------------------------------------------------------------------------


def test_filterbank_shape_and_peaks():
    fb = mel_filterbank(128, SR, 1024, 0.0, 8000.0)
    assert fb.weights.shape == (128, 513)
    np.testing.assert_allclose(fb.weights.max(axis=1), 1.0)
    assert np.all(fb.weights >= 0)
    assert np.all(np.diff(fb.center_freqs) > 0)


def test_filterbank_too_many_mels():
    with pytest.raises(ValueError):
        mel_filterbank(400, SR, 256)


def test_mel_spectrogram_silence_is_floor():
    cfg = DspConfig()
    mel = mel_spectrogram(AudioClip(np.zeros(4000), SR), cfg)
    np.testing.assert_allclose(mel.values, np.log(cfg.log_floor))


def test_mel_spectrogram_width_and_tone_bin():
    cfg = DspConfig()
    mel = mel_spectrogram(sine(440), cfg)
    assert mel.n_mels == 128
    # the winning filter is the one whose triangle contains 440 Hz; compute it
    # from the mel grid rather than from the filterbank under test
    import voxstyle.audio as audio

    pts = audio.mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(8000.0), 130))
    expect = np.argmin(np.abs(pts[1:-1] - 440.0))
    rows = np.argmax(mel.values[10:-10], axis=1)
    assert np.all(rows == rows[0])
    assert abs(int(rows[0]) - int(expect)) <= 1


# -- Griffin-Lim ------------------------------------------------------------------


def test_griffin_lim_sine_converges():
    mel = mel_spectrogram(sine(440))
    clip, errors = griffin_lim(mel, iterations=60, return_errors=True)
    assert errors[-1] < 0.1
    assert clip.sample_rate == SR


def test_griffin_lim_more_iterations_never_worse():
    mel = mel_spectrogram(sine(440, seconds=0.3))
    _, e1 = griffin_lim(mel, iterations=1, return_errors=True)
    _, e60 = griffin_lim(mel, iterations=60, return_errors=True)
    assert e60[-1] <= e1[-1]
    assert np.all(np.diff(e60) <= 1e-12)


def test_griffin_lim_floor_mel_is_silent():
    cfg = DspConfig()
    floor = np.full((20, cfg.n_mels), np.log(cfg.log_floor))
    from voxstyle.audio import MelSpectrogram

    clip = griffin_lim(MelSpectrogram(floor, cfg.hop_seconds), iterations=5)
    assert np.sqrt(np.mean(clip.samples**2)) < 1e-3


def test_griffin_lim_rejects_zero_iterations():
    mel = mel_spectrogram(sine(440, seconds=0.2))
    with pytest.raises(ValueError):
        griffin_lim(mel, iterations=0)
