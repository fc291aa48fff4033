"""Statistical evaluation: stratified folds, diagnostic metrics, AUROC,
bootstrap confidence intervals, threshold sweeps, WHO TPP gating, and the
recording-hour ANOVA.

Undefined metric ratios (zero denominator) surface as NaN, never as 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.stats import f as f_dist
from scipy.stats import rankdata


class Task(str, Enum):
    TB_VS_REST = "TbVsRest"
    TB_VS_OR = "TbVsOr"
    TB_VS_HC = "TbVsHc"


class EvaluationError(Exception):
    pass


# ---------------------------------------------------------------- folds

@dataclass(frozen=True)
class FoldAssignment:
    fold_of: dict[str, int]  # participant_id -> fold index
    k: int

    def train_test(self, fold: int) -> tuple[set[str], set[str]]:
        test = {p for p, f in self.fold_of.items() if f == fold}
        train = {p for p, f in self.fold_of.items() if f != fold}
        return train, test


def make_folds(participants, k: int = 10, seed: int = 0) -> FoldAssignment:
    """Stratified k-fold assignment on (group, gender), deterministic per seed.

    Participants are shuffled within each stratum and dealt round-robin;
    the dealing offset advances across strata so fold sizes stay balanced.
    All of a participant's segments follow the participant (assignment is
    by participant id only).
    """
    if k < 2:
        raise EvaluationError("k must be at least 2")
    if k > len(participants):
        raise EvaluationError("more folds than participants")
    rng = np.random.default_rng(seed)
    strata: dict[tuple, list[str]] = {}
    for p in participants:
        strata.setdefault((p.group.value, p.gender.value), []).append(p.participant_id)
    fold_of = {}
    offset = 0
    for key in sorted(strata):
        ids = sorted(strata[key])
        rng.shuffle(ids)
        for i, pid in enumerate(ids):
            fold_of[pid] = (offset + i) % k
        offset += len(ids)
    return FoldAssignment(fold_of=fold_of, k=k)


# ---------------------------------------------------------------- metrics

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass
class MetricSet:
    auroc: float = math.nan
    sensitivity: float = math.nan
    specificity: float = math.nan
    ppv: float = math.nan
    npv: float = math.nan
    f1: float = math.nan
    ci95: dict[str, tuple[float, float]] = field(default_factory=dict)


def confusion_at_threshold(scored: list[tuple[float, int]], tau: float) -> ConfusionCounts:
    """Counts with the inclusive rule: positive iff score >= tau."""
    if not scored:
        raise EvaluationError("no scores")
    if not 0.0 < tau < 1.0:
        raise EvaluationError(f"threshold {tau} outside (0, 1)")
    tp = fp = fn = tn = 0
    for score, label in scored:
        positive = score >= tau
        if label:
            tp += positive
            fn += not positive
        else:
            fp += positive
            tn += not positive
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def _ratio(num: int, den: int) -> float:
    return num / den if den else math.nan


def metrics_from_confusion(c: ConfusionCounts) -> MetricSet:
    return MetricSet(
        sensitivity=_ratio(c.tp, c.tp + c.fn),
        specificity=_ratio(c.tn, c.tn + c.fp),
        ppv=_ratio(c.tp, c.tp + c.fp),
        npv=_ratio(c.tn, c.tn + c.fn),
        f1=_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
    )


def auroc(scored: list[tuple[float, int]]) -> float:
    """Mann-Whitney AUROC via rank-sum with average-rank tie correction."""
    scores = np.array([s for s, _ in scored], dtype=np.float64)
    labels = np.array([l for _, l in scored], dtype=np.int64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# ---------------------------------------------------------------- bootstrap

def bootstrap_ci(scored: list[tuple[float, int]], metric_fn,
                 n_resamples: int = 10000, seed: int = 0,
                 max_undefined_frac: float = 0.5) -> tuple[float, float]:
    """95% percentile interval from participant-level resampling.

    Resamples where the metric is undefined (NaN or single-class) are
    skipped; more than `max_undefined_frac` undefined resamples aborts.
    Deterministic given the seed.
    """
    if not scored:
        raise EvaluationError("no scores to resample")
    point = metric_fn(scored)
    if not np.isfinite(point):
        raise EvaluationError("metric undefined on the original sample")
    rng = np.random.default_rng(seed)
    n = len(scored)
    values = []
    undefined = 0
    for _ in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        sample = [scored[i] for i in idx]
        try:
            v = metric_fn(sample)
        except EvaluationError:
            v = math.nan
        if math.isnan(v):
            undefined += 1
        else:
            values.append(v)
    if undefined > max_undefined_frac * n_resamples:
        raise EvaluationError(
            f"metric undefined on {undefined}/{n_resamples} bootstrap resamples")
    lo, hi = np.percentile(values, [2.5, 97.5])
    return float(lo), float(hi)


# ---------------------------------------------------------------- sweep / TPP

DEFAULT_TAU_GRID = (0.36, 0.38, 0.40, 0.45, 0.50)


def threshold_sweep(scored: list[tuple[float, int]],
                    taus=DEFAULT_TAU_GRID,
                    n_resamples: int = 0, seed: int = 0) -> list[dict]:
    """One row of metrics per threshold, ascending; verifies that sensitivity
    is non-increasing and specificity non-decreasing down the table."""
    taus = list(taus)
    if taus != sorted(taus):
        raise EvaluationError("threshold grid must be sorted ascending")
    rows = []
    for tau in taus:
        c = confusion_at_threshold(scored, tau)
        m = metrics_from_confusion(c)
        m.auroc = auroc(scored)
        if n_resamples:
            for name, fn in [
                ("sensitivity", lambda s, t=tau: metrics_from_confusion(
                    confusion_at_threshold(s, t)).sensitivity),
                ("specificity", lambda s, t=tau: metrics_from_confusion(
                    confusion_at_threshold(s, t)).specificity),
                ("auroc", auroc),
            ]:
                try:
                    m.ci95[name] = bootstrap_ci(scored, fn, n_resamples, seed)
                except EvaluationError:
                    pass
        verdicts = {p.name: tpp_check(m.sensitivity, m.specificity, p)
                    for p in TppProfile}
        rows.append({"tau": tau, "metrics": m, "confusion": c, "tpp": verdicts})
    sens = [r["metrics"].sensitivity for r in rows]
    spec = [r["metrics"].specificity for r in rows]
    for a, b in zip(sens, sens[1:]):
        if not (math.isnan(a) or math.isnan(b)) and b > a + 1e-12:
            raise EvaluationError("sensitivity increased across the sweep")
    for a, b in zip(spec, spec[1:]):
        if not (math.isnan(a) or math.isnan(b)) and b < a - 1e-12:
            raise EvaluationError("specificity decreased across the sweep")
    return rows


class TppProfile(Enum):
    WHO_2021 = (0.90, 0.70)
    WHO_2025 = (0.90, 0.60)


@dataclass(frozen=True)
class TppVerdict:
    profile: TppProfile
    passed: bool
    margin: tuple[float, float]  # (sens - floor, spec - floor)


def tpp_check(sens: float, spec: float, profile: TppProfile) -> TppVerdict:
    """WHO target product profile gate; floors are strict inequalities."""
    floor_sens, floor_spec = profile.value
    return TppVerdict(
        profile=profile,
        passed=bool(sens > floor_sens and spec > floor_spec),
        margin=(sens - floor_sens, spec - floor_spec),
    )


# ---------------------------------------------------------------- ANOVA

def anova_recording_hour(groups: list[list[float]]) -> tuple[float, float, tuple[int, int]]:
    """One-way ANOVA of recording hour across groups.

    Returns (F, p, (df_between, df_within)). F comes from between/within
    mean squares; p from the F distribution survival function.
    """
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2 or any(len(g) < 2 for g in groups):
        raise EvaluationError("need at least two groups with two observations each")
    n_total = sum(len(g) for g in groups)
    grand = np.concatenate(groups).mean()
    ss_between = sum(len(g) * (g.mean() - grand) ** 2 for g in groups)
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in groups)
    df_b = len(groups) - 1
    df_w = n_total - len(groups)
    ms_between = ss_between / df_b
    ms_within = ss_within / df_w
    if ms_within == 0.0:
        return 0.0 if ms_between == 0.0 else math.inf, 1.0 if ms_between == 0.0 else 0.0, (df_b, df_w)
    f_stat = ms_between / ms_within
    p = float(f_dist.sf(f_stat, df_b, df_w))
    return float(f_stat), p, (df_b, df_w)
