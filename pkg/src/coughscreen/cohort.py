"""Participant data model, study manifest ingestion, and the synthetic
cohort simulator.

The simulator makes the whole pipeline testable without clinical data:
coughs are amplitude-modulated filtered noise bursts whose spectral tilt is
drawn from a group-dependent distribution (TB profile: energy deficit near
200 Hz, surplus above 1.5 kHz, scaled by the configured effect size).
Demographics are drawn to match the real cohort's group-wise means and
ranges. Everything is deterministic per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.fft import irfft, rfft

from .audio_io import CANONICAL_RATE, SourceDevice, save_wav

SCHEMA_VERSION = 1


class Group(str, Enum):
    TB_POS = "TBpos"
    OR = "OR"
    HC = "HC"


class Gender(str, Enum):
    MALE = "male"
    FEMALE = "female"


class Site(str, Enum):
    KANYAMA = "Kanyama"
    CHAWAMA = "Chawama"
    SYNTHETIC = "Synthetic"


class ManifestError(Exception):
    pass


@dataclass(frozen=True)
class Participant:
    participant_id: str
    group: Group
    gender: Gender
    age_years: int
    bmi: float
    symptom_present: bool
    hiv_positive: bool
    site: Site = Site.SYNTHETIC
    recorded_at: str = ""  # ISO "YYYY-MM-DDTHH"

    def validate(self) -> None:
        if self.age_years < 18:
            raise ManifestError(f"{self.participant_id}: age must be >= 18")
        if self.bmi < 10:
            raise ManifestError(f"{self.participant_id}: BMI must be >= 10")
        symptomatic = self.group in (Group.TB_POS, Group.OR)
        if self.symptom_present != symptomatic:
            raise ManifestError(
                f"{self.participant_id}: symptom_present must be "
                f"{symptomatic} for group {self.group.value} "
                "(symptom-presence-by-group invariant)")

    def recording_hour(self) -> int:
        return int(self.recorded_at.split("T")[1]) if "T" in self.recorded_at else 0


@dataclass(frozen=True)
class Recording:
    participant_id: str
    session_index: int
    device: SourceDevice
    path: str  # wav path or embedding reference, relative to the manifest


@dataclass
class StudyManifest:
    participants: list[Participant]
    recordings: list[Recording]
    root: Path = field(default_factory=Path)
    schema_version: int = SCHEMA_VERSION

    def participant(self, pid: str) -> Participant:
        for p in self.participants:
            if p.participant_id == pid:
                return p
        raise KeyError(pid)

    def validate(self, check_files: bool = True) -> None:
        ids = [p.participant_id for p in self.participants]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate participant_id: {dupes}")
        for p in self.participants:
            p.validate()
        known = set(ids)
        with_recordings = set()
        for r in self.recordings:
            if r.participant_id not in known:
                raise ManifestError(
                    f"recording references undeclared participant {r.participant_id!r}")
            with_recordings.add(r.participant_id)
            if check_files and not (self.root / r.path).is_file():
                raise ManifestError(f"dangling file reference: {r.path}")
        orphans = known - with_recordings
        if orphans:
            raise ManifestError(f"participants without recordings: {sorted(orphans)}")

    def group_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for p in self.participants:
            counts[p.group.value] = counts.get(p.group.value, 0) + 1
        return counts


def load_manifest(path: str | Path, check_files: bool = True) -> StudyManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest is not valid JSON: {e}") from e
    try:
        participants = [
            Participant(
                participant_id=p["participant_id"],
                group=Group(p["group"]),
                gender=Gender(p["gender"]),
                age_years=int(p["age_years"]),
                bmi=float(p["bmi"]),
                symptom_present=bool(p["symptom_present"]),
                hiv_positive=bool(p["hiv_positive"]),
                site=Site(p.get("site", "Synthetic")),
                recorded_at=p.get("recorded_at", ""),
            )
            for p in doc["participants"]
        ]
        recordings = [
            Recording(
                participant_id=r["participant_id"],
                session_index=int(r["session_index"]),
                device=SourceDevice(r["device"]),
                path=r["path"],
            )
            for r in doc["recordings"]
        ]
    except (KeyError, ValueError) as e:
        raise ManifestError(f"manifest schema violation: {e}") from e
    manifest = StudyManifest(participants=participants, recordings=recordings,
                             root=path.parent,
                             schema_version=doc.get("schema_version", SCHEMA_VERSION))
    manifest.validate(check_files=check_files)
    return manifest


def save_manifest(manifest: StudyManifest, path: str | Path) -> None:
    doc = {
        "schema_version": manifest.schema_version,
        "participants": [
            {
                "participant_id": p.participant_id,
                "group": p.group.value,
                "gender": p.gender.value,
                "age_years": p.age_years,
                "bmi": p.bmi,
                "symptom_present": p.symptom_present,
                "hiv_positive": p.hiv_positive,
                "site": p.site.value,
                "recorded_at": p.recorded_at,
            }
            for p in manifest.participants
        ],
        "recordings": [
            {
                "participant_id": r.participant_id,
                "session_index": r.session_index,
                "device": r.device.value,
                "path": r.path,
            }
            for r in manifest.recordings
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2))


# ------------------------------------------------------------- simulator

# group-wise demographic profiles: (age mean, sd, range), (bmi mean, sd, range),
# male fraction, HIV fraction
DEMOGRAPHICS = {
    Group.TB_POS: {"age": (34, 10, (18, 73)), "bmi": (19, 3, (14, 29)),
                   "male_frac": 0.77, "hiv_frac": 0.31},
    Group.OR: {"age": (37, 13, (18, 71)), "bmi": (22, 4, (14, 40)),
               "male_frac": 0.64, "hiv_frac": 0.34},
    Group.HC: {"age": (32, 11, (18, 73)), "bmi": (24, 6, (15, 48)),
               "male_frac": 0.60, "hiv_frac": 0.12},
}


@dataclass(frozen=True)
class CohortSpec:
    group_sizes: dict[Group, int] = field(default_factory=lambda: {
        Group.TB_POS: 50, Group.OR: 40, Group.HC: 40})
    effect_size: float = 2.0         # scales the TB spectral-tilt difference
    background_confound: float = 0.0  # group correlation of background tilt
    sessions: int = 3
    # loud enough that non-cough noise survives the -40 dB silence trim,
    # as real recording-room background does
    background_level: float = 0.04
    seed: int = 1

    def validate(self) -> None:
        if any(n < 1 for n in self.group_sizes.values()):
            raise ManifestError("group sizes must be >= 1")
        if self.sessions < 1:
            raise ManifestError("sessions must be >= 1")


def _tilt_gain(freqs: np.ndarray, tilt: float) -> np.ndarray:
    """Spectral gain implementing the TB-profile tilt: a dip around 200 Hz
    and a boost above 1.5 kHz, each scaled by `tilt`."""
    dip = np.exp(-0.5 * ((freqs - 200.0) / 120.0) ** 2)
    boost = 1.0 / (1.0 + np.exp(-(freqs - 1500.0) / 250.0))
    return np.exp(tilt * (0.6 * boost - 0.6 * dip))


def _shaped_noise(rng: np.random.Generator, n: int, tilt: float,
                  base_rolloff_hz: float = 900.0) -> np.ndarray:
    white = rng.normal(0.0, 1.0, size=n)
    spec = rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / CANONICAL_RATE)
    gain = _tilt_gain(freqs, tilt) / (1.0 + freqs / base_rolloff_hz)
    x = irfft(spec * gain, n=n)
    peak = np.abs(x).max()
    return x / peak if peak > 0 else x


def synth_cough_burst(rng: np.random.Generator, tilt: float) -> np.ndarray:
    """One cough: 120-400 ms of shaped noise under an attack/decay envelope."""
    dur = rng.uniform(0.12, 0.40)
    n = int(round(dur * CANONICAL_RATE))
    x = _shaped_noise(rng, n, tilt)
    t = np.arange(n) / CANONICAL_RATE
    attack = 0.015
    env = np.minimum(t / attack, 1.0) * np.exp(-t / (0.35 * dur))
    y = x * env
    return 0.6 * y / (np.abs(y).max() + 1e-12)


def simulate_cohort(spec: CohortSpec, out_dir: str | Path) -> StudyManifest:
    """Generate WAV files and a manifest for a synthetic cohort.

    Per participant: `spec.sessions` sessions of 2-3 coughs each, written as
    one WAV per session (one high-fidelity-mic session replaced by a
    smartphone session so device strata are populated). The per-participant
    spectral tilt is `effect_size` for TB and 0 otherwise, plus seeded
    jitter; background noise carries a group tilt only when
    `background_confound` > 0.
    """
    spec.validate()
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    participants: list[Participant] = []
    recordings: list[Recording] = []

    idx = 0
    for group in (Group.TB_POS, Group.OR, Group.HC):
        profile = DEMOGRAPHICS[group]
        for _ in range(spec.group_sizes[group]):
            rng = np.random.default_rng([spec.seed, idx])
            pid = f"SYN{idx:04d}"
            age_mu, age_sd, age_range = profile["age"]
            bmi_mu, bmi_sd, bmi_range = profile["bmi"]
            age = int(np.clip(round(rng.normal(age_mu, age_sd)), *age_range))
            bmi = float(np.clip(rng.normal(bmi_mu, bmi_sd), *bmi_range))
            gender = Gender.MALE if rng.random() < profile["male_frac"] else Gender.FEMALE
            hiv = bool(rng.random() < profile["hiv_frac"])
            day = int(rng.integers(0, 28)) + 1
            hour = int(rng.integers(8, 17))
            participant = Participant(
                participant_id=pid, group=group, gender=gender,
                age_years=age, bmi=bmi,
                symptom_present=group in (Group.TB_POS, Group.OR),
                hiv_positive=hiv, site=Site.SYNTHETIC,
                recorded_at=f"2024-02-{day:02d}T{hour:02d}",
            )
            participants.append(participant)

            tb = group is Group.TB_POS
            # jitter is drawn per cough, not per participant: a stable
            # per-participant acoustic trait would let cross-validation
            # pick up chance label correlations even at effect size 0
            base_tilt = spec.effect_size if tb else 0.0
            bg_tilt = spec.background_confound * (1.0 if tb else 0.0)
            for session in range(1, spec.sessions + 1):
                device = (SourceDevice.SMARTPHONE if session == spec.sessions
                          else SourceDevice.HIGH_FIDELITY_MIC)
                n_coughs = int(rng.integers(2, 4))
                pieces = []
                for _ in range(n_coughs):
                    gap = int(round(rng.uniform(0.6, 1.0) * CANONICAL_RATE))
                    pieces.append(np.zeros(gap))
                    pieces.append(synth_cough_burst(
                        rng, base_tilt + rng.normal(0.0, 0.15)))
                # trailing non-cough span long enough for 3 s background windows
                pieces.append(np.zeros(int(round(rng.uniform(3.6, 4.2) * CANONICAL_RATE))))
                signal = np.concatenate(pieces)
                bg = spec.background_level * _shaped_noise(rng, len(signal), bg_tilt)
                signal = np.clip(signal + bg, -1.0, 1.0)
                rel = f"audio/{pid}_s{session}.wav"
                save_wav(out_dir / rel, signal)
                recordings.append(Recording(participant_id=pid, session_index=session,
                                            device=device, path=rel))
            idx += 1

    manifest = StudyManifest(participants=participants, recordings=recordings, root=out_dir)
    manifest.validate()
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
