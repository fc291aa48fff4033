"""WAV loading, resampling and silence trimming.

All downstream processing assumes canonical mono 16 kHz float audio in
[-1, 1]. Loading keeps the source rate; `resample_to_16k` canonicalises.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

CANONICAL_RATE = 16000


class SourceDevice(str, Enum):
    HIGH_FIDELITY_MIC = "HighFidelityMic"
    SMARTPHONE = "Smartphone"
    SYNTHETIC = "Synthetic"


class AudioIoError(Exception):
    """Base class for WAV decoding failures."""


class MissingFileError(AudioIoError):
    pass


class MalformedWavError(AudioIoError):
    pass


class UnsupportedEncodingError(AudioIoError):
    pass


class UnsupportedRateError(AudioIoError):
    pass


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray  # float64 mono, in [-1, 1]
    sample_rate: int
    source_device: SourceDevice = SourceDevice.SYNTHETIC
    participant_id: str = ""
    session_index: int = 1
    recorded_at: str = ""  # ISO "YYYY-MM-DDTHH" (hour resolution)

    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


def load_wav(path: str | Path, **meta) -> AudioClip:
    """Decode a PCM RIFF WAV file to a mono float clip.

    Supports 8/16/24-bit integer and 32-bit float encodings. Multi-channel
    audio is averaged to mono. Integer samples are scaled by full-scale
    division (e.g. 16-bit value 16384 -> 0.5). Sample rate is preserved.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such file: {path}")
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"not a RIFF/WAVE file: {path}")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise MalformedWavError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            if len(body) < size:
                raise MalformedWavError("truncated data chunk")
            payload = body
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise MalformedWavError("missing fmt chunk")
    if payload is None:
        raise MalformedWavError("missing data chunk")

    audio_format, n_channels, sample_rate, _, _, bits = fmt
    if audio_format == _WAVE_FORMAT_EXTENSIBLE:
        # sub-format GUID starts with the effective format code
        raise UnsupportedEncodingError("WAVE_FORMAT_EXTENSIBLE not supported")
    if n_channels < 1:
        raise MalformedWavError("zero channels")

    if audio_format == _WAVE_FORMAT_PCM:
        if bits == 8:
            x = (data_to_array(payload, np.uint8).astype(np.float64) - 128.0) / 128.0
        elif bits == 16:
            x = data_to_array(payload, np.dtype("<i2")).astype(np.float64) / 32768.0
        elif bits == 24:
            raw = np.frombuffer(payload, dtype=np.uint8)
            raw = raw[: (len(raw) // 3) * 3].reshape(-1, 3)
            vals = (
                raw[:, 0].astype(np.int32)
                | (raw[:, 1].astype(np.int32) << 8)
                | (raw[:, 2].astype(np.int32) << 16)
            )
            vals = np.where(vals >= 1 << 23, vals - (1 << 24), vals)
            x = vals.astype(np.float64) / float(1 << 23)
        else:
            raise UnsupportedEncodingError(f"unsupported PCM bit depth: {bits}")
    elif audio_format == _WAVE_FORMAT_IEEE_FLOAT:
        if bits != 32:
            raise UnsupportedEncodingError(f"unsupported float bit depth: {bits}")
        x = data_to_array(payload, np.dtype("<f4")).astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"unsupported audio format code: {audio_format}")

    if n_channels > 1:
        x = x[: (len(x) // n_channels) * n_channels]
        x = x.reshape(-1, n_channels).mean(axis=1)
    if len(x) == 0:
        raise MalformedWavError("empty data chunk")
    x = np.clip(x, -1.0, 1.0)
    return AudioClip(samples=x, sample_rate=int(sample_rate), **meta)


def data_to_array(payload: bytes, dtype) -> np.ndarray:
    itemsize = np.dtype(dtype).itemsize
    usable = (len(payload) // itemsize) * itemsize
    return np.frombuffer(payload[:usable], dtype=dtype)


def save_wav(path: str | Path, samples: np.ndarray, sample_rate: int = CANONICAL_RATE) -> None:
    """Write mono 16-bit PCM WAV."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    # scale by full-scale 32768 (clamped) so decode/re-encode is lossless
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    hdr = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16)
    hdr += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(hdr + payload)


def resample_to_16k(clip: AudioClip) -> AudioClip:
    """Band-limited resampling to the canonical 16 kHz rate.

    Uses polyphase filtering with a Kaiser window (beta 8.6). 16 kHz input
    is returned unchanged.
    """
    if clip.sample_rate < 8000:
        raise UnsupportedRateError(f"sample rate {clip.sample_rate} below 8000 Hz")
    if clip.sample_rate == CANONICAL_RATE:
        return clip
    from math import gcd

    g = gcd(CANONICAL_RATE, clip.sample_rate)
    up, down = CANONICAL_RATE // g, clip.sample_rate // g
    y = resample_poly(clip.samples, up, down, window=("kaiser", 8.6))
    target_len = int(round(len(clip.samples) * CANONICAL_RATE / clip.sample_rate))
    if len(y) > target_len:
        y = y[:target_len]
    elif len(y) < target_len:
        y = np.pad(y, (0, target_len - len(y)))
    y = np.clip(y, -1.0, 1.0)
    return replace(clip, samples=y, sample_rate=CANONICAL_RATE)


def frame_rms(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Per-frame RMS; the trailing partial frame is dropped."""
    if len(x) < frame_len:
        return np.array([np.sqrt(np.mean(x**2))]) if len(x) else np.array([])
    n_frames = (len(x) - frame_len) // hop + 1
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.sqrt(np.mean(x[idx] ** 2, axis=1))


def trim_silence(clip: AudioClip, floor_db: float = -40.0,
                 frame_s: float = 0.025, hop_s: float = 0.010) -> AudioClip:
    """Drop leading/trailing frames whose RMS is below peak RMS + floor_db.

    floor_db is relative to the peak frame (must be negative). An all-silent
    clip yields an empty-sample clip, which downstream treats as no-cough.
    """
    if floor_db >= 0:
        raise ValueError("floor_db must be negative (relative to peak)")
    frame_len = int(round(frame_s * clip.sample_rate))
    hop = int(round(hop_s * clip.sample_rate))
    rms = frame_rms(clip.samples, frame_len, hop)
    if len(rms) == 0 or np.max(rms) <= 0.0:
        return replace(clip, samples=clip.samples[:0])
    threshold = np.max(rms) * 10.0 ** (floor_db / 20.0)
    above = np.flatnonzero(rms >= threshold)
    if len(above) == 0:
        return replace(clip, samples=clip.samples[:0])
    start = above[0] * hop
    if above[-1] == len(rms) - 1:
        end = len(clip.samples)  # final frame above floor keeps the tail
    else:
        end = min(len(clip.samples), above[-1] * hop + frame_len)
    return replace(clip, samples=clip.samples[start:end])
