"""Hand-computed acoustic features: MFCC (+deltas) and long-term average spectrum."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.fft import dct, rfft

from .audio_io import CANONICAL_RATE
from .segmenter import CoughSegment

SPECTRAL_FLOOR = 1e-10

FRAME_LEN = 400   # 25 ms at 16 kHz
FRAME_HOP = 160   # 10 ms
N_FFT = 512
N_MELS = 40


class FeatureDescriptor(str, Enum):
    MFCC40 = "Mfcc40"
    MFCC40_DELTA_DELTA = "Mfcc40DeltaDelta"
    LTAS = "Ltas"


@dataclass(frozen=True)
class FeatureMatrix:
    frames: np.ndarray  # (n_frames, coeffs_per_frame)
    coeffs_per_frame: int
    frame_hop_s: float
    descriptor: FeatureDescriptor


@dataclass(frozen=True)
class LtasCurve:
    freqs_hz: np.ndarray
    power_db: np.ndarray
    fft_size: int


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT,
                   sr: int = CANONICAL_RATE, f_lo: float = 0.0,
                   f_hi: float = 8000.0) -> np.ndarray:
    """Triangular mel filters on rfft bins, area-normalised per filter."""
    mel_pts = np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    bank = np.zeros((n_mels, len(bin_freqs)))
    for m in range(n_mels):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (bin_freqs - lo) / (ctr - lo)
        down = (hi - bin_freqs) / (hi - ctr)
        bank[m] = np.maximum(0.0, np.minimum(up, down))
        # area normalisation keeps filter response comparable across bandwidths
        bank[m] *= 2.0 / (hi - lo)
    return bank


def frame_signal(x: np.ndarray, frame_len: int = FRAME_LEN, hop: int = FRAME_HOP) -> np.ndarray:
    if len(x) < frame_len:
        raise ValueError(f"signal shorter than one frame ({len(x)} < {frame_len})")
    n_frames = (len(x) - frame_len) // hop + 1
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return x[idx]


def log_mel_frames(x: np.ndarray, pre_emphasis: float | None = 0.97,
                   window: np.ndarray | None = None) -> np.ndarray:
    """(n_frames, 40) log mel energies of a 16 kHz signal."""
    x = np.asarray(x, dtype=np.float64)
    if pre_emphasis is not None:
        x = np.concatenate(([x[0] * (1.0 - pre_emphasis)], x[1:] - pre_emphasis * x[:-1]))
    frames = frame_signal(x)
    if window is None:
        window = np.hanning(FRAME_LEN)
    spec = np.abs(rfft(frames * window, n=N_FFT, axis=1))
    mel = spec @ mel_filterbank().T
    return np.log(np.maximum(mel, SPECTRAL_FLOOR))


def _deltas(c: np.ndarray, width: int = 2) -> np.ndarray:
    """Regression deltas over +-width frames, edges replicated."""
    padded = np.concatenate([np.repeat(c[:1], width, axis=0), c,
                             np.repeat(c[-1:], width, axis=0)], axis=0)
    denom = 2.0 * sum(n * n for n in range(1, width + 1))
    num = sum(n * (padded[width + n:len(c) + width + n] - padded[width - n:len(c) + width - n])
              for n in range(1, width + 1))
    return num / denom


def compute_mfcc(segment: CoughSegment) -> FeatureMatrix:
    """40 MFCCs plus delta and delta-delta per 25 ms frame (10 ms hop).

    Pipeline: pre-emphasis 0.97 -> Hann frames -> 512-point magnitude
    spectrum -> 40 triangular mel filters (0-8 kHz) -> log -> DCT-II ->
    append regression deltas -> 120-dim frames.
    """
    if len(segment.samples) == 0:
        raise ValueError("empty segment")
    logmel = log_mel_frames(segment.samples)
    cc = dct(logmel, type=2, norm="ortho", axis=1)[:, :N_MELS]
    d1 = _deltas(cc)
    d2 = _deltas(d1)
    frames = np.concatenate([cc, d1, d2], axis=1)
    return FeatureMatrix(frames=frames, coeffs_per_frame=frames.shape[1],
                         frame_hop_s=FRAME_HOP / CANONICAL_RATE,
                         descriptor=FeatureDescriptor.MFCC40_DELTA_DELTA)


def summarize_features(m: FeatureMatrix) -> np.ndarray:
    """Per-coefficient mean and std concatenated (240-dim for MFCC+deltas)."""
    if m.frames.shape[0] < 1:
        raise ValueError("empty feature matrix")
    return np.concatenate([m.frames.mean(axis=0), m.frames.std(axis=0)])


def compute_ltas(segments: list[CoughSegment], fft_size: int = 1024) -> LtasCurve:
    """Welch-style long-term average spectrum over a segment collection.

    1024-point Hann windows at 50% overlap; periodograms averaged over all
    windows of all segments; converted to dB relative to the maximum bin.
    """
    if not segments:
        raise ValueError("need at least one segment")
    window = np.hanning(fft_size)
    hop = fft_size // 2
    acc = np.zeros(fft_size // 2 + 1)
    count = 0
    for seg in segments:
        x = np.asarray(seg.samples, dtype=np.float64)
        if len(x) < fft_size:
            continue
        n_win = (len(x) - fft_size) // hop + 1
        idx = np.arange(fft_size)[None, :] + hop * np.arange(n_win)[:, None]
        spec = np.abs(rfft(x[idx] * window, axis=1)) ** 2
        acc += spec.sum(axis=0)
        count += n_win
    if count == 0:
        raise ValueError("all segments shorter than one analysis window")
    avg = acc / count
    power_db = 10.0 * np.log10(np.maximum(avg, SPECTRAL_FLOOR))
    power_db -= power_db.max()
    freqs = np.arange(fft_size // 2 + 1) * CANONICAL_RATE / fft_size
    return LtasCurve(freqs_hz=freqs, power_db=power_db, fft_size=fft_size)


def ltas_to_csv(curve: LtasCurve) -> str:
    lines = ["freq_hz,power_db"]
    lines += [f"{f:.3f},{p:.6f}" for f, p in zip(curve.freqs_hz, curve.power_db)]
    return "\n".join(lines) + "\n"
