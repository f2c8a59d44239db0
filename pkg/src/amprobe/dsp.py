"""Waveform front-end: MFCC extraction, CMVN, and speed perturbation.

All functions are pure and deterministic (dither defaults to 0), so two
calls on the same input produce bit-identical output.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.fft
import scipy.signal

from .validation import check_feature_array, check_finite, check_sample_rate

LOG_ENERGY_FLOOR = 1e-10


@dataclass(frozen=True)
class Waveform:
    """Mono audio in [-1, 1] with its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D sequence")
        check_finite(samples, "waveform")
        if np.max(np.abs(samples)) > 1.0 + 1e-6:
            raise ValueError("waveform samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", check_sample_rate(self.sample_rate))

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate


@dataclass
class FeatureMatrix:
    """T x D frame features plus provenance (frame shift, source tag).

    source_tag is "mfcc" for front-end features and "layerK" for tapped
    acoustic-model activations.
    """

    values: np.ndarray
    frame_shift_s: float = 0.010
    source_tag: str = "mfcc"

    def __post_init__(self):
        self.values = check_feature_array(self.values, name="FeatureMatrix.values")
        if self.frame_shift_s <= 0:
            raise ValueError("frame_shift_s must be positive")

    @property
    def num_frames(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class MfccConfig:
    n_coeffs: int = 40
    window_s: float = 0.025
    shift_s: float = 0.010
    n_mel_filters: int = 40
    pre_emphasis: float = 0.97
    window_fn: str = "povey"
    dither: float = 0.0
    low_freq: float = 20.0
    high_freq: float | None = None  # None -> Nyquist

    def __post_init__(self):
        if self.n_coeffs > self.n_mel_filters:
            raise ValueError("n_coeffs must not exceed n_mel_filters")
        if not (self.window_s > self.shift_s > 0):
            raise ValueError("require window_s > shift_s > 0")
        if self.window_fn not in ("povey", "hamming", "hanning", "rectangular"):
            raise ValueError(f"unknown window_fn {self.window_fn!r}")


def _window(name, length):
    n = np.arange(length)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / (length - 1))
    if name == "povey":
        return hann**0.85
    if name == "hanning":
        return hann
    if name == "hamming":
        return 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (length - 1))
    return np.ones(length)


def mel_scale(freq_hz):
    return 1127.0 * np.log1p(np.asarray(freq_hz, dtype=np.float64) / 700.0)


def inverse_mel_scale(mel):
    return 700.0 * (np.expm1(np.asarray(mel, dtype=np.float64) / 1127.0))


def mel_filterbank(n_filters, n_fft, sample_rate, low_freq, high_freq):
    """Triangular mel filterbank as an (n_filters, n_fft//2 + 1) matrix."""
    nyquist = sample_rate / 2.0
    if high_freq is None:
        high_freq = nyquist
    if not (0 <= low_freq < high_freq <= nyquist):
        raise ValueError(
            f"require 0 <= low_freq < high_freq <= {nyquist}, got ({low_freq}, {high_freq})"
        )
    mel_pts = np.linspace(mel_scale(low_freq), mel_scale(high_freq), n_filters + 2)
    freq_pts = inverse_mel_scale(mel_pts)
    fft_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    bank = np.zeros((n_filters, fft_freqs.size))
    for i in range(n_filters):
        left, center, right = freq_pts[i], freq_pts[i + 1], freq_pts[i + 2]
        up = (fft_freqs - left) / (center - left)
        down = (right - fft_freqs) / (right - center)
        bank[i] = np.maximum(0.0, np.minimum(up, down))
    return bank


def num_frames(n_samples, window_samples, shift_samples):
    if n_samples < window_samples:
        raise ValueError(
            f"waveform of {n_samples} samples is shorter than one window "
            f"({window_samples} samples)"
        )
    return 1 + (n_samples - window_samples) // shift_samples


def frame_signal(samples, window_samples, shift_samples):
    n_frames = num_frames(len(samples), window_samples, shift_samples)
    idx = np.arange(window_samples)[None, :] + shift_samples * np.arange(n_frames)[:, None]
    return samples[idx]


def compute_log_mel(wave: Waveform, cfg: MfccConfig = MfccConfig(), dither_seed=0):
    """Log mel-filterbank energies, the stage right before the DCT.

    Returned as a float64 (T, n_mel_filters) array; exposed separately so the
    log-domain scale behaviour can be checked without the DCT on top.
    """
    sr = wave.sample_rate
    win = int(round(cfg.window_s * sr))
    shift = int(round(cfg.shift_s * sr))
    x = wave.samples.astype(np.float64)
    if cfg.dither > 0:
        rng = np.random.default_rng(dither_seed)
        x = x + cfg.dither * rng.standard_normal(x.shape)
    if cfg.pre_emphasis > 0:
        x = np.concatenate([[x[0] * (1.0 - cfg.pre_emphasis)], x[1:] - cfg.pre_emphasis * x[:-1]])
    frames = frame_signal(x, win, shift) * _window(cfg.window_fn, win)
    n_fft = 1 << (win - 1).bit_length()
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    bank = mel_filterbank(cfg.n_mel_filters, n_fft, sr, cfg.low_freq, cfg.high_freq)
    energies = power @ bank.T
    return np.log(np.maximum(energies, LOG_ENERGY_FLOOR))


def compute_mfcc(wave: Waveform, cfg: MfccConfig = MfccConfig(), dither_seed=0) -> FeatureMatrix:
    """MFCCs: pre-emphasis, windowed framing, power spectrum, mel filterbank,
    floored log, orthonormal DCT-II truncated to n_coeffs.

    Frame count is 1 + floor((N - window) / shift); no padding at the edges.
    """
    log_mel = compute_log_mel(wave, cfg, dither_seed)
    coeffs = scipy.fft.dct(log_mel, type=2, axis=1, norm="ortho")[:, : cfg.n_coeffs]
    return FeatureMatrix(coeffs.astype(np.float32), frame_shift_s=cfg.shift_s, source_tag="mfcc")


def apply_cmvn(feats: FeatureMatrix, variance_floor=1e-8) -> FeatureMatrix:
    """Per-utterance mean/variance normalization, one dimension at a time.

    Near-constant dimensions (variance below the floor) are mean-centered
    but not scaled, so silence never divides by ~0.
    """
    values = feats.values.astype(np.float64)
    if values.shape[0] < 2:
        raise ValueError("CMVN needs at least 2 frames")
    mean = values.mean(axis=0)
    var = values.var(axis=0)
    scale = np.where(var >= variance_floor, 1.0 / np.sqrt(np.maximum(var, variance_floor)), 1.0)
    out = (values - mean) * scale
    return FeatureMatrix(out.astype(np.float32), feats.frame_shift_s, feats.source_tag)


def speed_perturb(wave: Waveform, rate: float) -> Waveform:
    """Resampling-based speed perturbation (duration and pitch move together).

    Output length is round(N / rate) to within one sample; the nominal
    sample rate is unchanged.
    """
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    if rate == 1.0:
        return Waveform(wave.samples.copy(), wave.sample_rate)
    frac = Fraction(rate).limit_denominator(1000)
    out = scipy.signal.resample_poly(wave.samples, frac.denominator, frac.numerator)
    return Waveform(np.clip(out, -1.0, 1.0), wave.sample_rate)
