"""Participant-level soft voting and demographic stacking fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import SourceDevice
from .classifier import (CLASS_ORDER, OptimizerSettings, SegmentScores,
                         SoftmaxModel, predict_batch, train)
from .cohort import Gender, Participant
from .evaluation import Task

TB_INDEX = 0  # position of the TB class in CLASS_ORDER


class FusionError(Exception):
    pass


@dataclass(frozen=True)
class ParticipantPrediction:
    participant_id: str
    mean_probs: np.ndarray    # (3,) soft vote
    mean_logits: np.ndarray   # (3,) centred across classes
    predicted_class: str
    segment_count: int
    device_stratum: SourceDevice | None = None


@dataclass
class DemographicStandardizer:
    """Training-fold mean/std of age and BMI."""
    age_mean: float
    age_std: float
    bmi_mean: float
    bmi_std: float

    @classmethod
    def fit(cls, participants: list[Participant]) -> "DemographicStandardizer":
        ages = np.array([p.age_years for p in participants], dtype=np.float64)
        bmis = np.array([p.bmi for p in participants], dtype=np.float64)
        return cls(age_mean=float(ages.mean()), age_std=float(ages.std()) or 1.0,
                   bmi_mean=float(bmis.mean()), bmi_std=float(bmis.std()) or 1.0)

    def to_dict(self) -> dict:
        return {"age_mean": self.age_mean, "age_std": self.age_std,
                "bmi_mean": self.bmi_mean, "bmi_std": self.bmi_std}

    @classmethod
    def from_dict(cls, d: dict) -> "DemographicStandardizer":
        return cls(**d)


def soft_vote(scores: list[SegmentScores], participant_id: str,
              device: SourceDevice | None = None,
              devices: list[SourceDevice] | None = None) -> ParticipantPrediction:
    """Average segment probabilities into one participant prediction.

    When `device` is given, only segments recorded on that device count
    (`devices` carries the per-segment device, aligned with `scores`).
    Argmax ties break toward TB (screening favours sensitivity). Mean
    logits are centred across classes before averaging, since softmax
    logits are defined only up to an additive constant.
    """
    if device is not None:
        if devices is None:
            raise FusionError("device filter requires per-segment devices")
        scores = [s for s, d in zip(scores, devices) if d == device]
    if not scores:
        raise FusionError(f"no segments for participant {participant_id}"
                          + (f" on device {device.value}" if device else ""))
    probs = np.stack([s.probs for s in scores])
    logits = np.stack([s.logits - s.logits.mean() for s in scores])
    mean_probs = probs.mean(axis=0)
    mean_logits = logits.mean(axis=0)
    # argmax with tie-break toward TB: TB wins any tie with the max
    best = mean_probs.max()
    winner = TB_INDEX if mean_probs[TB_INDEX] >= best else int(np.argmax(mean_probs))
    return ParticipantPrediction(
        participant_id=participant_id, mean_probs=mean_probs,
        mean_logits=mean_logits, predicted_class=CLASS_ORDER[winner],
        segment_count=len(scores), device_stratum=device,
    )


FUSION_DIM = 7  # 3 centred logits + age + gender + bmi + symptom


def build_fusion_vector(pred: ParticipantPrediction, participant: Participant,
                        standardizer: DemographicStandardizer) -> np.ndarray:
    """Fixed-order concatenation [z1, z2, z3, age, gender, bmi, symptom].

    Age and BMI are standardised with training-fold statistics; gender is
    1 for male, symptom 1 for present. Missing demographics are an error,
    never imputed.
    """
    for name in ("age_years", "gender", "bmi", "symptom_present"):
        if getattr(participant, name, None) is None:
            raise FusionError(f"{participant.participant_id}: missing {name}")
    participant.validate()
    return np.array([
        pred.mean_logits[0], pred.mean_logits[1], pred.mean_logits[2],
        (participant.age_years - standardizer.age_mean) / standardizer.age_std,
        1.0 if participant.gender is Gender.MALE else 0.0,
        (participant.bmi - standardizer.bmi_mean) / standardizer.bmi_std,
        1.0 if participant.symptom_present else 0.0,
    ])


STACKER_CLASSES = ("not_tb", "tb")


def train_stacker(vectors: np.ndarray, tb_labels: np.ndarray,
                  l2_strength: float = 1.0,
                  opt: OptimizerSettings = OptimizerSettings()) -> SoftmaxModel:
    """Binary LR meta-classifier over fusion vectors.

    Callers must build `vectors` from out-of-fold acoustic predictions so
    no participant's own training-fold classifier scores itself. Labels
    are 1 for TB. For the pairwise tasks the caller restricts rows to the
    two groups involved.
    """
    y = np.asarray(tb_labels, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise FusionError("stacker training set contains a single class")
    return train(np.asarray(vectors, dtype=np.float64), y, l2_strength, opt,
                 classes=STACKER_CLASSES)


def score_task(meta_model: SoftmaxModel, fusion_vector: np.ndarray) -> float:
    """Probability the participant is TB, from the meta-classifier."""
    v = np.asarray(fusion_vector, dtype=np.float64)
    if v.shape[-1] != meta_model.weights.shape[1]:
        raise FusionError(f"fusion vector dim {v.shape[-1]} does not match "
                          f"meta-model dim {meta_model.weights.shape[1]}")
    return float(predict_batch(meta_model, v[None, :])[0, 1])
