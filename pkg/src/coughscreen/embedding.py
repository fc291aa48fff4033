"""Embedding providers: file-ingested vectors or a deterministic synthetic stand-in.

The synthetic provider replaces foundation-model inference with a fixed
seeded projection of log-mel energies, so the whole pipeline runs and is
testable without any ML runtime. The file provider ingests embeddings
exported offline by any external tool.

Embedding container format: a binary file holding a JSON index
(segment-id -> {offset, count, dim}) followed by a little-endian float32
payload. The index length is a uint32 prefix.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import rfft

from .features import SPECTRAL_FLOOR, mel_filterbank
from .segmenter import CoughSegment

SYNTHETIC_DIM = 64
SYNTHETIC_STEP = 320  # 20 ms at 16 kHz, one vector per step
SYNTHETIC_DEFAULT_SEED = 20230416


@dataclass(frozen=True)
class EmbeddingSequence:
    vectors: np.ndarray  # (n_steps, dim)
    dim: int
    provider_id: str


class EmbeddingError(Exception):
    pass


def global_average_pool(e: EmbeddingSequence) -> np.ndarray:
    """Arithmetic mean over time-steps."""
    if e.vectors.shape[0] == 0:
        raise EmbeddingError("empty embedding sequence")
    return e.vectors.mean(axis=0)


class SyntheticEmbeddingProvider:
    """Deterministic 64-dim embeddings: per-20 ms log-mel energies projected
    through a fixed seeded random 40->64 matrix followed by tanh."""

    def __init__(self, seed: int = SYNTHETIC_DEFAULT_SEED):
        rng = np.random.default_rng(seed)
        self.projection = rng.normal(0.0, 1.0 / np.sqrt(40.0), size=(40, SYNTHETIC_DIM))
        self.provider_id = f"synthetic:{seed}"
        self._bank = mel_filterbank(n_fft=SYNTHETIC_STEP)

    def provide(self, segment: CoughSegment) -> EmbeddingSequence:
        x = np.asarray(segment.samples, dtype=np.float64)
        if len(x) < SYNTHETIC_STEP:
            raise EmbeddingError("segment shorter than one embedding step")
        n_steps = len(x) // SYNTHETIC_STEP
        frames = x[: n_steps * SYNTHETIC_STEP].reshape(n_steps, SYNTHETIC_STEP)
        spec = np.abs(rfft(frames, axis=1))
        mel = np.log(np.maximum(spec @ self._bank.T, SPECTRAL_FLOOR))
        vecs = np.tanh(mel @ self.projection)
        return EmbeddingSequence(vectors=vecs, dim=SYNTHETIC_DIM, provider_id=self.provider_id)


_MAGIC = b"CSEM"


def write_embeddings(path: str | Path, table: dict[str, np.ndarray]) -> None:
    """Write a segment-id -> vectors mapping in the container format."""
    index = {}
    payload = bytearray()
    offset = 0
    for seg_id, vecs in table.items():
        vecs = np.ascontiguousarray(vecs, dtype="<f4")
        if vecs.ndim != 2:
            raise EmbeddingError(f"vectors for {seg_id!r} must be 2-D")
        index[seg_id] = {"offset": offset, "count": int(vecs.shape[0]), "dim": int(vecs.shape[1])}
        payload += vecs.tobytes()
        offset += vecs.size
    index_bytes = json.dumps(index, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(index_bytes)))
        fh.write(index_bytes)
        fh.write(bytes(payload))


def segment_id(segment: CoughSegment) -> str:
    return f"{segment.participant_id}/{segment.session_index}/{segment.onset_s:.3f}"


class FileEmbeddingProvider:
    """Reads embeddings from a container file; the index is memoised after
    one-time load so the provider is shareable across parallel workers."""

    def __init__(self, path: str | Path, provider_id: str | None = None):
        self.path = Path(path)
        if not self.path.is_file():
            raise EmbeddingError(f"embedding container not found: {path}")
        with open(self.path, "rb") as fh:
            magic = fh.read(4)
            if magic != _MAGIC:
                raise EmbeddingError(f"bad container magic in {path}")
            (n,) = struct.unpack("<I", fh.read(4))
            self.index = json.loads(fh.read(n))
            self._payload_start = 8 + n
        self.provider_id = provider_id or f"file:{self.path.name}"

    def provide(self, segment: CoughSegment) -> EmbeddingSequence:
        key = segment_id(segment)
        entry = self.index.get(key)
        if entry is None:
            raise EmbeddingError(f"no embeddings stored for segment {key!r}")
        count, dim = entry["count"], entry["dim"]
        with open(self.path, "rb") as fh:
            fh.seek(self._payload_start + entry["offset"] * 4)
            raw = fh.read(count * dim * 4)
        vecs = np.frombuffer(raw, dtype="<f4").reshape(count, dim).astype(np.float64)
        return EmbeddingSequence(vectors=vecs, dim=dim, provider_id=self.provider_id)
