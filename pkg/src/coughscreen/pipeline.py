"""End-to-end orchestration: manifest -> segments -> features -> CV ->
participant scores -> evaluation report. Shared by the CLI and the HTTP
service so both score identical inputs identically.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio_io
from .audio_io import AudioClip, SourceDevice
from .classifier import (CLASS_ORDER, OptimizerSettings, SegmentScores,
                         SoftmaxModel, from_json, predict_batch, to_json, train)
from .cohort import Group, Participant, StudyManifest
from .embedding import (EmbeddingSequence, FileEmbeddingProvider,
                        SyntheticEmbeddingProvider, global_average_pool)
from .evaluation import (DEFAULT_TAU_GRID, EvaluationError, FoldAssignment,
                         Task, auroc, bootstrap_ci, make_folds,
                         anova_recording_hour, threshold_sweep)
from .features import compute_mfcc, summarize_features
from .fusion import (DemographicStandardizer, build_fusion_vector, score_task,
                     soft_vote, train_stacker)
from .segmenter import (CoughSegment, DetectorConfig, SegmentKind,
                        detect_coughs, extract_background, fit_duration,
                        generate_white_noise)

PIPELINE_OPT = OptimizerSettings(tol=1e-5, max_iters=2000)
DEFAULT_L2 = 1e-2
DEFAULT_DURATION_S = 3.0

TASK_GROUPS = {
    Task.TB_VS_REST: (Group.TB_POS, Group.OR, Group.HC),
    Task.TB_VS_OR: (Group.TB_POS, Group.OR),
    Task.TB_VS_HC: (Group.TB_POS, Group.HC),
}


# ------------------------------------------------------------ providers

class MfccProvider:
    """Pooled MFCC statistics as the feature vector (baseline classifier)."""
    provider_id = "mfcc-baseline"

    def feature(self, segment: CoughSegment) -> np.ndarray:
        return summarize_features(compute_mfcc(segment))


class PooledEmbeddingProvider:
    """Global-average-pooled embeddings from any embedding provider."""

    def __init__(self, inner):
        self.inner = inner
        self.provider_id = inner.provider_id

    def feature(self, segment: CoughSegment) -> np.ndarray:
        return global_average_pool(self.inner.provide(segment))


def make_provider(name: str, embedding_path: str | None = None,
                  synthetic_seed: int | None = None):
    if name == "mfcc-baseline":
        return MfccProvider()
    if name == "synthetic":
        inner = (SyntheticEmbeddingProvider(synthetic_seed)
                 if synthetic_seed is not None else SyntheticEmbeddingProvider())
        return PooledEmbeddingProvider(inner)
    if name == "embedding-file":
        if not embedding_path:
            raise ValueError("embedding-file provider needs an embedding container path")
        return PooledEmbeddingProvider(FileEmbeddingProvider(embedding_path))
    raise ValueError(f"unknown provider {name!r}")


# ------------------------------------------------------------ dataset

@dataclass(frozen=True)
class SegmentRecord:
    participant_id: str
    device: SourceDevice
    kind: SegmentKind
    feature: np.ndarray


@dataclass
class PreparedDataset:
    manifest: StudyManifest
    records: list[SegmentRecord]
    duration_s: float
    provider_id: str

    def by_kind(self, kind: SegmentKind) -> list[SegmentRecord]:
        return [r for r in self.records if r.kind == kind]


def prepare_clip(rec, manifest: StudyManifest, trim_db: float = -40.0) -> AudioClip:
    clip = audio_io.load_wav(
        manifest.root / rec.path, participant_id=rec.participant_id,
        session_index=rec.session_index, source_device=rec.device)
    clip = audio_io.resample_to_16k(clip)
    return audio_io.trim_silence(clip, trim_db)


def prepare_dataset(manifest: StudyManifest, provider,
                    duration_s: float = DEFAULT_DURATION_S,
                    detector: DetectorConfig = DetectorConfig(),
                    device_filter: SourceDevice | None = None,
                    with_background: bool = False,
                    with_white_noise: bool = False,
                    trim_db: float = -40.0,
                    noise_seed: int = 0) -> PreparedDataset:
    """Load, segment and featurise every recording of the manifest."""
    if not 1.0 <= duration_s <= 6.0:
        raise ValueError("duration_s must be in [1, 6]")
    records: list[SegmentRecord] = []
    noise_counter: dict[str, int] = {}
    for rec in manifest.recordings:
        if device_filter is not None and rec.device != device_filter:
            continue
        clip = prepare_clip(rec, manifest, trim_db)
        if len(clip.samples) == 0:
            continue
        coughs = detect_coughs(clip, detector)
        for seg in coughs:
            fitted = fit_duration(seg, duration_s)
            records.append(SegmentRecord(rec.participant_id, rec.device,
                                         SegmentKind.COUGH, provider.feature(fitted)))
        if with_background:
            for seg in extract_background(clip, coughs, duration_s):
                records.append(SegmentRecord(rec.participant_id, rec.device,
                                             SegmentKind.BACKGROUND, provider.feature(seg)))
        if with_white_noise:
            for seg in coughs:
                n = noise_counter.get(rec.participant_id, 0)
                noise_counter[rec.participant_id] = n + 1
                noise = generate_white_noise(
                    duration_s,
                    seed=zlib.crc32(
                        f"{noise_seed}:{rec.participant_id}:{n}".encode()))
                records.append(SegmentRecord(rec.participant_id, rec.device,
                                             SegmentKind.WHITE_NOISE,
                                             provider.feature(noise)))
    return PreparedDataset(manifest=manifest, records=records,
                           duration_s=duration_s, provider_id=provider.provider_id)


GROUP_INDEX = {Group.TB_POS: 0, Group.OR: 1, Group.HC: 2}


def _features_labels(records: list[SegmentRecord], manifest: StudyManifest,
                     ids: set[str]) -> tuple[np.ndarray, np.ndarray]:
    rows = [r for r in records if r.participant_id in ids]
    X = np.stack([r.feature for r in rows])
    y = np.array([GROUP_INDEX[manifest.participant(r.participant_id).group] for r in rows])
    return X, y


# ------------------------------------------------------------ CV run

@dataclass
class ParticipantRow:
    participant_id: str
    group: Group
    hiv_positive: bool
    recorded_at: str
    mean_probs: np.ndarray                       # all devices combined
    mean_logits: np.ndarray
    device_probs: dict[str, np.ndarray]          # per device stratum
    fused: dict[str, float] = field(default_factory=dict)   # task -> score
    fold: int = -1


def run_cross_validation(dataset: PreparedDataset, k: int = 10, seed: int = 0,
                         l2_strength: float = DEFAULT_L2,
                         opt: OptimizerSettings = PIPELINE_OPT,
                         train_kind: SegmentKind = SegmentKind.COUGH,
                         test_kind: SegmentKind = SegmentKind.COUGH,
                         with_stacker: bool = True) -> list[ParticipantRow]:
    """Stratified participant-level CV producing soft-voted predictions.

    The 3-way classifier trains on `train_kind` segments of the train
    folds and scores `test_kind` segments of the test fold. The stacker
    for a fold trains on out-of-fold acoustic predictions of that fold's
    training participants only (strict leakage control).
    """
    manifest = dataset.manifest
    train_records = dataset.by_kind(train_kind)
    test_records = dataset.by_kind(test_kind)
    if not train_records or not test_records:
        raise EvaluationError(f"no segments of the requested kinds "
                              f"({train_kind.value}/{test_kind.value})")
    folds = make_folds(manifest.participants, k=k, seed=seed)

    rows: dict[str, ParticipantRow] = {}
    for f in range(k):
        train_ids, test_ids = folds.train_test(f)
        assert not train_ids & test_ids, "participant leaked between train and test"
        X, y = _features_labels(train_records, manifest, train_ids)
        model = train(X, y, l2_strength, opt, classes=CLASS_ORDER)
        fold_test = [r for r in test_records if r.participant_id in test_ids]
        if not fold_test:
            continue
        P = predict_batch(model, np.stack([r.feature for r in fold_test]))
        per_pid: dict[str, list[tuple[SegmentScores, SourceDevice]]] = {}
        for r, p in zip(fold_test, P):
            logits = np.log(np.maximum(p, 1e-300))
            s = SegmentScores(segment_id="", logits=logits, probs=p)
            per_pid.setdefault(r.participant_id, []).append((s, r.device))
        for pid, pairs in per_pid.items():
            scores = [s for s, _ in pairs]
            devices = [d for _, d in pairs]
            pred = soft_vote(scores, pid)
            device_probs = {}
            for dev in {d for d in devices}:
                device_probs[dev.value] = soft_vote(scores, pid, device=dev,
                                                    devices=devices).mean_probs
            part = manifest.participant(pid)
            rows[pid] = ParticipantRow(
                participant_id=pid, group=part.group,
                hiv_positive=part.hiv_positive, recorded_at=part.recorded_at,
                mean_probs=pred.mean_probs, mean_logits=pred.mean_logits,
                device_probs=device_probs, fold=f)

    if with_stacker:
        _attach_stacked_scores(rows, manifest, folds)
    return list(rows.values())


def _soft_pred(row: ParticipantRow):
    from .fusion import ParticipantPrediction
    return ParticipantPrediction(
        participant_id=row.participant_id, mean_probs=row.mean_probs,
        mean_logits=row.mean_logits, predicted_class="", segment_count=1)


def _attach_stacked_scores(rows: dict[str, ParticipantRow],
                           manifest: StudyManifest, folds: FoldAssignment) -> None:
    for f in range(folds.k):
        train_ids, test_ids = folds.train_test(f)
        train_rows = [rows[p] for p in sorted(train_ids) if p in rows]
        test_rows = [rows[p] for p in sorted(test_ids) if p in rows]
        if not train_rows or not test_rows:
            continue
        std = DemographicStandardizer.fit(
            [manifest.participant(r.participant_id) for r in train_rows])
        for task in Task:
            allowed = TASK_GROUPS[task]
            tr = [r for r in train_rows if r.group in allowed]
            vecs = np.stack([build_fusion_vector(
                _soft_pred(r), manifest.participant(r.participant_id), std) for r in tr])
            labels = np.array([int(r.group is Group.TB_POS) for r in tr])
            if len(np.unique(labels)) < 2:
                continue
            stacker = train_stacker(vecs, labels, opt=PIPELINE_OPT)
            for r in test_rows:
                if r.group not in allowed:
                    continue
                v = build_fusion_vector(_soft_pred(r),
                                        manifest.participant(r.participant_id), std)
                r.fused[task.value] = score_task(stacker, v)


# ------------------------------------------------------------ reporting

def task_scores(rows: list[ParticipantRow], task: Task,
                fused: bool = False,
                device: str | None = None) -> list[tuple[float, int]]:
    """(score, is_tb) pairs for one task, restricted to the task's groups."""
    allowed = TASK_GROUPS[task]
    out = []
    for r in rows:
        if r.group not in allowed:
            continue
        if fused:
            if task.value not in r.fused:
                continue
            score = r.fused[task.value]
        elif device is not None:
            if device not in r.device_probs:
                continue
            score = float(r.device_probs[device][0])
        else:
            score = float(r.mean_probs[0])
        out.append((score, int(r.group is Group.TB_POS)))
    return out


def evaluate_rows(rows: list[ParticipantRow], taus=DEFAULT_TAU_GRID,
                  n_resamples: int = 0, seed: int = 0) -> dict:
    """Per-task AUROC (audio-only and fused), threshold sweep on fused
    scores, TPP verdicts, device and HIV strata, recording-hour ANOVA."""
    report: dict = {"tasks": {}, "strata": {}, "n_participants": len(rows)}
    for task in Task:
        entry: dict = {}
        audio = task_scores(rows, task)
        entry["audio_auroc"] = auroc(audio)
        if n_resamples:
            entry["audio_auroc_ci95"] = bootstrap_ci(audio, auroc, n_resamples, seed)
        fused = task_scores(rows, task, fused=True)
        if fused and any(l == 1 for _, l in fused) and any(l == 0 for _, l in fused):
            entry["fused_auroc"] = auroc(fused)
            if n_resamples:
                entry["fused_auroc_ci95"] = bootstrap_ci(fused, auroc, n_resamples, seed)
            sweep = threshold_sweep(fused, taus, n_resamples=n_resamples, seed=seed)
            entry["sweep"] = [_sweep_row_dict(r) for r in sweep]
        report["tasks"][task.value] = entry

    # device strata (audio-only scores, TB vs Rest)
    for device in (SourceDevice.HIGH_FIDELITY_MIC.value, SourceDevice.SMARTPHONE.value):
        scored = task_scores(rows, Task.TB_VS_REST, device=device)
        if scored and any(l for _, l in scored) and not all(l for _, l in scored):
            report["strata"][f"device:{device}"] = {
                "auroc": auroc(scored), "n": len(scored),
                "low_n": len(scored) < 20}
    # HIV stratum
    for flag, name in ((True, "hiv_positive"), (False, "hiv_negative")):
        sub = [r for r in rows if r.hiv_positive is flag]
        scored = [(float(r.mean_probs[0]), int(r.group is Group.TB_POS)) for r in sub]
        if scored and any(l for _, l in scored) and not all(l for _, l in scored):
            report["strata"][name] = {"auroc": auroc(scored), "n": len(scored),
                                      "low_n": len(scored) < 20}

    hours_by_group: dict[str, list[float]] = {}
    for r in rows:
        if "T" in r.recorded_at:
            hours_by_group.setdefault(r.group.value, []).append(
                float(r.recorded_at.split("T")[1]))
    if len(hours_by_group) >= 2 and all(len(v) >= 2 for v in hours_by_group.values()):
        f_stat, p, dof = anova_recording_hour(list(hours_by_group.values()))
        report["recording_hour_anova"] = {"F": f_stat, "p": p, "dof": list(dof)}
    return report


def _sweep_row_dict(row: dict) -> dict:
    m = row["metrics"]
    c = row["confusion"]
    total = c.tp + c.fp + c.fn + c.tn
    return {
        "tau": row["tau"],
        "sensitivity": m.sensitivity, "specificity": m.specificity,
        "ppv": m.ppv, "npv": m.npv, "f1": m.f1, "auroc": m.auroc,
        # PPV/NPV are prevalence-dependent, so the prevalence they were
        # computed at is always reported next to them
        "prevalence": (c.tp + c.fn) / total if total else math.nan,
        "ci95": {k: list(v) for k, v in m.ci95.items()},
        "tpp": {name: v.passed for name, v in row["tpp"].items()},
    }


ADVERSARIAL_CONDITIONS = {
    "WhiteWhite": (SegmentKind.WHITE_NOISE, SegmentKind.WHITE_NOISE),
    "BgBg": (SegmentKind.BACKGROUND, SegmentKind.BACKGROUND),
    "CoughBg": (SegmentKind.COUGH, SegmentKind.BACKGROUND),
    "CoughCough": (SegmentKind.COUGH, SegmentKind.COUGH),
}


def run_adversarial(dataset: PreparedDataset, k: int = 10, seed: int = 0,
                    conditions=tuple(ADVERSARIAL_CONDITIONS)) -> dict:
    """Train/test across segment-kind conditions; audio-only AUROC per task.

    CoughCough is the reference condition; the Bg conditions require
    background segments in the dataset.
    """
    out: dict = {}
    for name in conditions:
        train_kind, test_kind = ADVERSARIAL_CONDITIONS[name]
        for kind in (train_kind, test_kind):
            if not dataset.by_kind(kind):
                raise EvaluationError(
                    f"condition {name} needs {kind.value} segments, none in dataset")
        rows = run_cross_validation(dataset, k=k, seed=seed,
                                    train_kind=train_kind, test_kind=test_kind,
                                    with_stacker=False)
        out[name] = {task.value: auroc(task_scores(rows, task)) for task in Task}
    return out


def duration_sweep(manifest: StudyManifest, provider, durations=(1, 2, 3, 4, 5, 6),
                   k: int = 10, seed: int = 0,
                   detector: DetectorConfig = DetectorConfig()) -> dict:
    """Audio-only AUROC per task at each segment duration, as a flat table."""
    table: dict = {task.value: {} for task in Task}
    for d in durations:
        dataset = prepare_dataset(manifest, provider, duration_s=float(d),
                                  detector=detector)
        rows = run_cross_validation(dataset, k=k, seed=seed, with_stacker=False)
        for task in Task:
            table[task.value][str(d)] = auroc(task_scores(rows, task))
    return table


# ------------------------------------------------------------ model bundle

@dataclass
class ModelBundle:
    """Everything needed to score a new screening session."""
    classifier: SoftmaxModel
    stackers: dict[str, SoftmaxModel]           # task value -> meta model
    demographics: DemographicStandardizer
    provider_name: str
    synthetic_seed: int | None
    duration_s: float
    default_tau: float = 0.38                   # WHO-TPP-meeting operating point
    sweep: dict = field(default_factory=dict)   # task -> sweep rows
    model_id: str = "bundle"

    def save(self, path: str | Path) -> None:
        doc = {
            "model_id": self.model_id,
            "classifier": json.loads(to_json(self.classifier)),
            "stackers": {k: json.loads(to_json(v)) for k, v in self.stackers.items()},
            "demographics": self.demographics.to_dict(),
            "provider_name": self.provider_name,
            "synthetic_seed": self.synthetic_seed,
            "duration_s": self.duration_s,
            "default_tau": self.default_tau,
            "sweep": self.sweep,
        }
        Path(path).write_text(json.dumps(doc, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "ModelBundle":
        doc = json.loads(Path(path).read_text())
        return cls(
            classifier=from_json(json.dumps(doc["classifier"])),
            stackers={k: from_json(json.dumps(v)) for k, v in doc["stackers"].items()},
            demographics=DemographicStandardizer.from_dict(doc["demographics"]),
            provider_name=doc["provider_name"],
            synthetic_seed=doc.get("synthetic_seed"),
            duration_s=doc["duration_s"],
            default_tau=doc.get("default_tau", 0.38),
            sweep=doc.get("sweep", {}),
            model_id=doc.get("model_id", "bundle"),
        )

    def provider(self):
        return make_provider(self.provider_name, synthetic_seed=self.synthetic_seed)


def train_bundle(manifest: StudyManifest, provider, provider_name: str,
                 synthetic_seed: int | None = None,
                 duration_s: float = DEFAULT_DURATION_S, k: int = 10,
                 seed: int = 0, l2_strength: float = DEFAULT_L2,
                 detector: DetectorConfig = DetectorConfig()) -> tuple[ModelBundle, dict]:
    """Fit the deployable bundle: 3-way classifier on all cough segments,
    stackers on out-of-fold acoustic scores, plus the evaluation report."""
    dataset = prepare_dataset(manifest, provider, duration_s=duration_s,
                              detector=detector)
    rows = run_cross_validation(dataset, k=k, seed=seed, l2_strength=l2_strength)
    report = evaluate_rows(rows)

    all_ids = {p.participant_id for p in manifest.participants}
    X, y = _features_labels(dataset.by_kind(SegmentKind.COUGH), manifest, all_ids)
    clf = train(X, y, l2_strength, PIPELINE_OPT, classes=CLASS_ORDER,
                provider_id=provider.provider_id, duration_s=duration_s)

    std = DemographicStandardizer.fit(manifest.participants)
    stackers: dict[str, SoftmaxModel] = {}
    row_index = {r.participant_id: r for r in rows}
    for task in Task:
        allowed = TASK_GROUPS[task]
        tr = [r for r in rows if r.group in allowed]
        if not tr:
            continue
        vecs = np.stack([build_fusion_vector(
            _soft_pred(r), manifest.participant(r.participant_id), std) for r in tr])
        labels = np.array([int(r.group is Group.TB_POS) for r in tr])
        if len(np.unique(labels)) < 2:
            continue
        stackers[task.value] = train_stacker(vecs, labels, opt=PIPELINE_OPT)

    sweep = {t: report["tasks"][t].get("sweep", []) for t in report["tasks"]}
    bundle = ModelBundle(classifier=clf, stackers=stackers, demographics=std,
                         provider_name=provider_name, synthetic_seed=synthetic_seed,
                         duration_s=duration_s, sweep=sweep,
                         model_id=f"{provider_name}-{duration_s:g}s-seed{seed}")
    return bundle, report


# ------------------------------------------------------------ single-session scoring

def segment_clip_for_scoring(bundle: ModelBundle, clip: AudioClip,
                             detector: DetectorConfig = DetectorConfig()) -> list[CoughSegment]:
    clip = audio_io.resample_to_16k(clip)
    trimmed = audio_io.trim_silence(clip)
    if len(trimmed.samples) == 0:
        return []
    return detect_coughs(trimmed, detector)


def score_session(bundle: ModelBundle, segments: list[CoughSegment],
                  participant: Participant, task: Task) -> float:
    """Deterministic score for one session's cough segments + demographics."""
    if not segments:
        raise EvaluationError("no cough segments to score")
    provider = bundle.provider()
    feats = np.stack([provider.feature(fit_duration(s, bundle.duration_s))
                      for s in segments])
    P = predict_batch(bundle.classifier, feats)
    scores = [SegmentScores(segment_id="", logits=np.log(np.maximum(p, 1e-300)), probs=p)
              for p in P]
    pred = soft_vote(scores, participant.participant_id)
    vec = build_fusion_vector(pred, participant, bundle.demographics)
    stacker = bundle.stackers.get(task.value)
    if stacker is None:
        raise EvaluationError(f"bundle has no stacker for task {task.value}")
    return score_task(stacker, vec)


def rows_to_csv(rows: list[ParticipantRow]) -> str:
    header = ("participant_id,group,device_stratum,p_tb,p_or,p_hc,"
              "fused_TbVsRest,fused_TbVsOr,fused_TbVsHc")
    lines = [header]
    for r in sorted(rows, key=lambda r: r.participant_id):
        devices = ";".join(sorted(r.device_probs)) or "all"
        fused = [r.fused.get(t.value, math.nan) for t in Task]
        lines.append(",".join([
            r.participant_id, r.group.value, devices,
            *(f"{v:.9f}" for v in r.mean_probs),
            *(f"{v:.9f}" for v in fused),
        ]))
    return "\n".join(lines) + "\n"


def report_to_text(report: dict) -> str:
    """Human-readable rendering of the evaluation report."""
    lines = [f"participants evaluated: {report.get('n_participants', '?')}", ""]
    for task, entry in report.get("tasks", {}).items():
        lines.append(f"== {task} ==")
        lines.append(f"  audio-only AUROC: {entry['audio_auroc']:.3f}")
        if "fused_auroc" in entry:
            lines.append(f"  fused AUROC:      {entry['fused_auroc']:.3f}")
        for row in entry.get("sweep", []):
            tpp = " ".join(f"{k}={'PASS' if v else 'fail'}" for k, v in row["tpp"].items())
            lines.append(
                f"  tau={row['tau']:.2f}  sens={row['sensitivity']:.3f} "
                f"spec={row['specificity']:.3f} ppv={_fmt(row['ppv'])} "
                f"npv={_fmt(row['npv'])} f1={_fmt(row['f1'])}  {tpp}")
        lines.append("")
    if report.get("strata"):
        lines.append("== strata (audio-only, TB vs Rest) ==")
        for name, s in report["strata"].items():
            flag = "  [low n]" if s.get("low_n") else ""
            lines.append(f"  {name}: AUROC {s['auroc']:.3f} (n={s['n']}){flag}")
        lines.append("")
    if "recording_hour_anova" in report:
        a = report["recording_hour_anova"]
        lines.append(f"recording-hour ANOVA: F({a['dof'][0]}, {a['dof'][1]}) = "
                     f"{a['F']:.3f}, p = {a['p']:.4f}")
    return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    return "n/a" if (isinstance(v, float) and math.isnan(v)) else f"{v:.3f}"
