"""Energy-based cough extraction, background spans and white-noise stand-ins.

The detector is deliberately gain-invariant: the frame-energy threshold is
relative (median + k * (p95 - median)), so microphone gain and device
differences do not shift detections.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .audio_io import CANONICAL_RATE, AudioClip, SourceDevice, frame_rms


class SegmentKind(str, Enum):
    COUGH = "Cough"
    BACKGROUND = "Background"
    WHITE_NOISE = "WhiteNoise"


@dataclass(frozen=True)
class DetectorConfig:
    frame_s: float = 0.025
    hop_s: float = 0.010
    k: float = 0.25              # threshold = median + k * (p95 - median)
    merge_gap_s: float = 0.150   # supra-threshold runs closer than this merge
    min_event_s: float = 0.060   # shorter merged runs are discarded
    context_pad_s: float = 0.200


@dataclass(frozen=True)
class CoughSegment:
    samples: np.ndarray  # 16 kHz mono
    onset_s: float
    offset_s: float
    kind: SegmentKind
    participant_id: str = ""
    session_index: int = 1
    source_device: SourceDevice = SourceDevice.SYNTHETIC
    context_pad_s: float = 0.0

    def duration_s(self) -> float:
        return self.offset_s - self.onset_s


def _segment_meta(clip: AudioClip) -> dict:
    return dict(
        participant_id=clip.participant_id,
        session_index=clip.session_index,
        source_device=clip.source_device,
    )


def detect_coughs(clip: AudioClip, config: DetectorConfig = DetectorConfig()) -> list[CoughSegment]:
    """Extract cough events with 200 ms of leading/trailing context.

    Frame RMS energy is thresholded adaptively; supra-threshold runs closer
    than the merge gap are joined, runs shorter than the minimum event
    length are dropped, and survivors are padded by the context margin
    (clipped at clip bounds). Segments come back ordered by onset.
    """
    sr = clip.sample_rate
    frame_len = int(round(config.frame_s * sr))
    hop = int(round(config.hop_s * sr))
    rms = frame_rms(clip.samples, frame_len, hop)
    if len(rms) == 0:
        return []
    energy = rms**2
    med = np.median(energy)
    p95 = np.percentile(energy, 95)
    threshold = med + config.k * (p95 - med)
    above = energy > threshold
    if not above.any():
        return []

    # group supra-threshold frames into runs of [first, last] frame indices
    idx = np.flatnonzero(above)
    breaks = np.flatnonzero(np.diff(idx) > 1)
    runs = []
    start = 0
    for b in breaks:
        runs.append((idx[start], idx[b]))
        start = b + 1
    runs.append((idx[start], idx[-1]))

    # merge runs separated by less than the merge gap (in seconds)
    merged = [runs[0]]
    for lo, hi in runs[1:]:
        prev_lo, prev_hi = merged[-1]
        gap_s = (lo - prev_hi) * config.hop_s
        if gap_s < config.merge_gap_s:
            merged[-1] = (prev_lo, hi)
        else:
            merged.append((lo, hi))

    out = []
    clip_dur = len(clip.samples) / sr
    for lo, hi in merged:
        # event length counted in hops so frame-window smear does not
        # inflate short transients past the minimum
        if (hi - lo + 1) * config.hop_s < config.min_event_s:
            continue
        onset = lo * config.hop_s
        offset = hi * config.hop_s + config.frame_s
        onset = max(0.0, onset - config.context_pad_s)
        offset = min(clip_dur, offset + config.context_pad_s)
        a, b = int(round(onset * sr)), int(round(offset * sr))
        out.append(CoughSegment(
            samples=clip.samples[a:b],
            onset_s=a / sr,
            offset_s=b / sr,
            kind=SegmentKind.COUGH,
            context_pad_s=config.context_pad_s,
            **_segment_meta(clip),
        ))
    return out


def extract_background(clip: AudioClip, cough_segments: list[CoughSegment],
                       target_duration_s: float) -> list[CoughSegment]:
    """Slice the non-cough complement into fixed-length background windows.

    Windows are non-overlapping; complement spans shorter than the target
    duration are dropped.
    """
    sr = clip.sample_rate
    n = len(clip.samples)
    covered = np.zeros(n, dtype=bool)
    for seg in cough_segments:
        a = max(0, int(round(seg.onset_s * sr)))
        b = min(n, int(round(seg.offset_s * sr)))
        covered[a:b] = True

    win = int(round(target_duration_s * sr))
    out = []
    free = np.flatnonzero(~covered)
    if len(free) == 0 or win <= 0:
        return out
    # split free indices into contiguous spans
    splits = np.flatnonzero(np.diff(free) > 1)
    span_starts = np.concatenate(([0], splits + 1))
    span_ends = np.concatenate((splits, [len(free) - 1]))
    for s, e in zip(span_starts, span_ends):
        a, b = free[s], free[e] + 1
        pos = a
        while pos + win <= b:
            out.append(CoughSegment(
                samples=clip.samples[pos:pos + win],
                onset_s=pos / sr,
                offset_s=(pos + win) / sr,
                kind=SegmentKind.BACKGROUND,
                **_segment_meta(clip),
            ))
            pos += win
    return out


def generate_white_noise(duration_s: float, seed: int, **meta) -> CoughSegment:
    """Seeded uniform white noise in [-0.5, 0.5], kind WhiteNoise."""
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    n = int(round(duration_s * CANONICAL_RATE))
    rng = np.random.default_rng(seed)
    samples = rng.uniform(-0.5, 0.5, size=n)
    return CoughSegment(
        samples=samples, onset_s=0.0, offset_s=n / CANONICAL_RATE,
        kind=SegmentKind.WHITE_NOISE, **meta,
    )


def fit_duration(segment: CoughSegment, target_s: float,
                 frame_s: float = 0.025, hop_s: float = 0.010) -> CoughSegment:
    """Fix a segment to exactly round(target_s * 16 kHz) samples.

    Longer segments are centre-cropped around the peak-energy frame so
    context on both sides of the cough peak is preserved; shorter segments
    are zero-padded symmetrically.
    """
    if len(segment.samples) == 0:
        raise ValueError("cannot duration-fit an empty segment")
    sr = CANONICAL_RATE
    target_len = int(round(target_s * sr))
    x = segment.samples
    if len(x) == target_len:
        return segment
    if len(x) > target_len:
        rms = frame_rms(x, int(round(frame_s * sr)), int(round(hop_s * sr)))
        peak_frame = int(np.argmax(rms))
        centre = peak_frame * int(round(hop_s * sr)) + int(round(frame_s * sr)) // 2
        a = centre - target_len // 2
        a = min(max(a, 0), len(x) - target_len)
        y = x[a:a + target_len]
        onset = segment.onset_s + a / sr
    else:
        pad = target_len - len(x)
        left = pad // 2
        y = np.pad(x, (left, pad - left))
        onset = segment.onset_s
    return replace(segment, samples=y, onset_s=onset, offset_s=onset + target_len / sr)
