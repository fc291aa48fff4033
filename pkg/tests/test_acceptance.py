"""Acceptance gate: one test per release criterion, each printing a
single PASS/FAIL line (run with -s to see them)."""

import json
import shutil
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient
from scipy.stats import kstest, norm

from coughscreen.audio_io import save_wav
from coughscreen.classifier import loss_and_grad
from coughscreen.cli import main as cli_main
from coughscreen.cohort import (CohortSpec, Gender, Group, Participant,
                                simulate_cohort)
from coughscreen.evaluation import (ConfusionCounts, TppProfile,
                                    anova_recording_hour, auroc, bootstrap_ci,
                                    make_folds, metrics_from_confusion,
                                    threshold_sweep, tpp_check)
from coughscreen.fusion import train_stacker
from coughscreen.pipeline import (make_provider, prepare_dataset,
                                  run_adversarial, run_cross_validation,
                                  task_scores, train_bundle, duration_sweep)
from coughscreen.segmenter import DetectorConfig, detect_coughs, fit_duration
from coughscreen.service import create_app
from coughscreen.evaluation import Task
from coughscreen.pipeline import prepare_clip


def check(name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f"  ({detail})"
    print(line)
    assert ok, line


# ------------------------------------------------------------- fixtures

@pytest.fixture(scope="module")
def sep_manifest(tmp_path_factory):
    """Separable reference cohort: 50/40/40, effect size 2.0, seed 1."""
    spec = CohortSpec(group_sizes={Group.TB_POS: 50, Group.OR: 40, Group.HC: 40},
                      effect_size=2.0, seed=1)
    return simulate_cohort(spec, tmp_path_factory.mktemp("acc_sep"))


@pytest.fixture(scope="module")
def sep_dataset(sep_manifest):
    return prepare_dataset(sep_manifest, make_provider("synthetic"),
                           with_background=True, with_white_noise=True)


@pytest.fixture(scope="module")
def acc_bundle_path(small_cohort, tmp_path_factory):
    bundle, _ = train_bundle(small_cohort, make_provider("synthetic"),
                             "synthetic", k=5, seed=0)
    path = tmp_path_factory.mktemp("acc_bundle") / "bundle.json"
    bundle.save(path)
    return path


# ------------------------------------------------------------- criteria

def test_auroc_matches_pairwise_oracle():
    rng = np.random.default_rng(0)
    start = time.time()
    worst = 0.0
    for trial in range(200):
        n = int(rng.integers(4, 101))
        scores = np.round(rng.random(n), 2)  # coarse grid forces ties
        labels = rng.integers(0, 2, n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        scored = list(zip(scores.tolist(), labels.tolist()))
        pos = [s for s, l in scored if l == 1]
        neg = [s for s, l in scored if l == 0]
        oracle = float(np.mean([[1.0 if p > q else 0.5 if p == q else 0.0
                                 for q in neg] for p in pos]))
        worst = max(worst, abs(auroc(scored) - oracle))
    elapsed = time.time() - start
    check("AUROC vs pairwise oracle", worst < 1e-12 and elapsed < 5.0,
          f"max err {worst:.2e}, {elapsed:.2f}s")


def test_metric_definitions_exhaustive():
    start = time.time()
    ok = True
    for tp in range(6):
        for fp in range(6):
            for fn in range(6):
                for tn in range(6):
                    m = metrics_from_confusion(ConfusionCounts(tp, fp, fn, tn))
                    for value, num, den in [
                        (m.sensitivity, tp, tp + fn),
                        (m.specificity, tn, tn + fp),
                        (m.ppv, tp, tp + fp),
                        (m.npv, tn, tn + fn),
                        (m.f1, 2 * tp, 2 * tp + fp + fn),
                    ]:
                        if den == 0:
                            ok &= bool(np.isnan(value))
                        else:
                            ok &= abs(value - num / den) < 1e-15
    elapsed = time.time() - start
    check("metric definitions on exhaustive grid", ok and elapsed < 1.0,
          f"{elapsed:.2f}s")


def test_tpp_gating_verdicts():
    ok = (tpp_check(0.903, 0.731, TppProfile.WHO_2021).passed
          and tpp_check(0.903, 0.731, TppProfile.WHO_2025).passed
          and not tpp_check(0.85, 0.70, TppProfile.WHO_2021).passed)
    check("TPP gating verdicts", ok)


def test_gradient_check():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(15, 5))
    y = rng.integers(0, 3, 15)
    Y = np.zeros((15, 3))
    Y[np.arange(15), y] = 1.0
    h = 1e-5
    worst = 0.0
    for _ in range(20):
        W = rng.normal(size=(3, 5))
        b = rng.normal(size=3)
        _, gW, gb = loss_and_grad(W, b, X, Y, 0.1)
        num = np.zeros_like(W)
        for i in range(3):
            for j in range(5):
                Wp, Wm = W.copy(), W.copy()
                Wp[i, j] += h
                Wm[i, j] -= h
                num[i, j] = (loss_and_grad(Wp, b, X, Y, 0.1)[0]
                             - loss_and_grad(Wm, b, X, Y, 0.1)[0]) / (2 * h)
        worst = max(worst, float(np.abs(gW - num).max() / np.abs(num).max()))
    check("analytic gradient vs finite differences", worst < 1e-4,
          f"max rel err {worst:.2e}")


def test_leakage_suite():
    rng = np.random.default_rng(2)
    ok = True
    for seed in range(50):
        sizes = {Group.TB_POS: int(rng.integers(20, 60)),
                 Group.OR: int(rng.integers(15, 50)),
                 Group.HC: int(rng.integers(15, 50))}
        parts, i = [], 0
        for group, n in sizes.items():
            for _ in range(n):
                gender = Gender.MALE if rng.random() < 0.7 else Gender.FEMALE
                parts.append(Participant(
                    participant_id=f"p{i:04d}", group=group, gender=gender,
                    age_years=30, bmi=22.0,
                    symptom_present=group is not Group.HC, hiv_positive=False))
                i += 1
        fa = make_folds(parts, k=10, seed=seed)
        counts = {g: [0] * 10 for g in Group}
        for p in parts:
            counts[p.group][fa.fold_of[p.participant_id]] += 1
        for f in range(10):
            train, test = fa.train_test(f)
            ok &= not (train & test)
            ok &= (train | test) == set(fa.fold_of)
        for group, per_fold in counts.items():
            target = sizes[group] / 10
            ok &= all(abs(c - target) <= 1 for c in per_fold)
    # stacker cannot depend on held-out rows
    vecs = rng.normal(size=(60, 7))
    labels = np.array([0, 1] * 30)
    a = train_stacker(vecs[:40], labels[:40])
    vecs[40:] += 1e9
    b = train_stacker(vecs[:40], labels[:40])
    ok &= bool(np.array_equal(a.weights, b.weights))
    check("leakage suite (50 fold assignments, stacker invariance)", ok)


def test_end_to_end_separable_and_null(sep_dataset, tmp_path_factory):
    start = time.time()
    rows = run_cross_validation(sep_dataset, k=10, seed=0, with_stacker=False)
    sep_auroc = auroc(task_scores(rows, Task.TB_VS_REST))

    null_spec = CohortSpec(group_sizes={Group.TB_POS: 50, Group.OR: 40,
                                        Group.HC: 40},
                           effect_size=0.0, seed=1)
    null_manifest = simulate_cohort(null_spec, tmp_path_factory.mktemp("acc_null"))
    null_dataset = prepare_dataset(null_manifest, make_provider("synthetic"))
    null_rows = run_cross_validation(null_dataset, k=10, seed=0,
                                     with_stacker=False)
    null_auroc = auroc(task_scores(null_rows, Task.TB_VS_REST))
    elapsed = time.time() - start
    check("end-to-end separable and null cohorts",
          sep_auroc >= 0.95 and 0.40 <= null_auroc <= 0.60 and elapsed < 600,
          f"effect 2.0 AUROC {sep_auroc:.3f}, effect 0 AUROC {null_auroc:.3f}, "
          f"{elapsed:.0f}s")


def test_adversarial_conditions(sep_dataset):
    table = run_adversarial(sep_dataset, k=10, seed=0)
    ww = table["WhiteWhite"][Task.TB_VS_REST.value]
    cb = table["CoughBg"][Task.TB_VS_REST.value]
    cc = table["CoughCough"][Task.TB_VS_REST.value]
    check("adversarial segment-source conditions",
          0.40 <= ww <= 0.60 and 0.40 <= cb <= 0.60 and cc >= 0.95,
          f"WhiteWhite {ww:.3f}, CoughBg {cb:.3f}, CoughCough {cc:.3f}")


def test_duration_sweep_and_fit_exactness(small_cohort):
    table = duration_sweep(small_cohort, make_provider("synthetic"),
                           durations=(1, 2, 3, 4, 5, 6), k=5, seed=0)
    shape_ok = (set(table) == {t.value for t in Task}
                and all(set(row) == {"1", "2", "3", "4", "5", "6"}
                        for row in table.values()))
    length_ok = True
    detector = DetectorConfig()
    for rec in small_cohort.recordings:
        clip = prepare_clip(rec, small_cohort)
        for seg in detect_coughs(clip, detector):
            for d in (1, 2, 3, 4, 5, 6):
                fitted = fit_duration(seg, float(d))
                length_ok &= len(fitted.samples) == int(round(d * 16000))
    check("duration sweep table and fit_duration exactness",
          shape_ok and length_ok,
          "AUROC@3s " + ", ".join(f"{t}={table[t]['3']:.2f}" for t in table))


def test_bootstrap_coverage():
    start = time.time()
    mu = 1.0
    truth = float(norm.cdf(mu / np.sqrt(2)))  # binormal AUROC
    rng = np.random.default_rng(123)
    covered = 0
    n_rep = 200
    for i in range(n_rep):
        pos = rng.normal(mu, 1.0, 50)
        neg = rng.normal(0.0, 1.0, 50)
        scored = [(float(s), 1) for s in pos] + [(float(s), 0) for s in neg]
        lo, hi = bootstrap_ci(scored, auroc, n_resamples=2000, seed=i)
        covered += lo <= truth <= hi
    coverage = covered / n_rep
    # fixed seed -> bit-identical intervals
    scored = ([(float(s), 1) for s in rng.normal(mu, 1.0, 50)]
              + [(float(s), 0) for s in rng.normal(0.0, 1.0, 50)])
    identical = (bootstrap_ci(scored, auroc, n_resamples=2000, seed=9)
                 == bootstrap_ci(scored, auroc, n_resamples=2000, seed=9))
    elapsed = time.time() - start
    check("bootstrap CI coverage",
          0.92 <= coverage <= 0.98 and identical and elapsed < 300,
          f"coverage {coverage:.3f} vs truth {truth:.3f}, {elapsed:.0f}s")


def test_sweep_monotonicity():
    rng = np.random.default_rng(3)
    ok = True
    for _ in range(50):
        n = int(rng.integers(10, 200))
        scored = [(float(rng.random()), int(rng.random() < 0.4))
                  for _ in range(n)]
        if not any(l for _, l in scored) or all(l for _, l in scored):
            continue
        rows = threshold_sweep(scored)
        sens = [r["metrics"].sensitivity for r in rows]
        spec = [r["metrics"].specificity for r in rows]
        ok &= all(b <= a for a, b in zip(sens, sens[1:]))
        ok &= all(b >= a for a, b in zip(spec, spec[1:]))
    check("threshold sweep monotonicity", ok)


def test_anova_oracle_and_null():
    groups = [[1.0, 2.0], [1.0, 2.0], [5.0, 6.0]]
    f_stat, _, dof = anova_recording_hour(groups)
    means = [1.5, 1.5, 5.5]
    grand = 17.0 / 6
    ssb = sum(2 * (m - grand) ** 2 for m in means)
    ssw = sum(sum((x - m) ** 2 for x in g) for g, m in zip(groups, means))
    f_oracle = (ssb / 2) / (ssw / 3)
    exact = abs(f_stat - f_oracle) < 1e-9 and dof == (2, 3)

    rng = np.random.default_rng(4)
    ps = []
    for _ in range(400):
        null_groups = [rng.normal(12, 2, 30).tolist() for _ in range(3)]
        ps.append(anova_recording_hour(null_groups)[1])
    uniform = kstest(ps, "uniform").pvalue > 0.05
    check("ANOVA textbook oracle and null uniformity", exact and uniform,
          f"|F err| {abs(f_stat - f_oracle):.1e}, KS p {kstest(ps, 'uniform').pvalue:.3f}")


def test_service_cli_equivalence(acc_bundle_path, small_cohort, tmp_path,
                                 capsys):
    rec = small_cohort.recordings[0]
    wav_path = small_cohort.root / rec.path

    rc = cli_main(["score", "--bundle", str(acc_bundle_path),
                   "--wav", str(wav_path), "--age", "40", "--gender", "male",
                   "--bmi", "19.5", "--symptom", "--task", "TbVsRest",
                   "--out", str(tmp_path)])
    assert rc == 0
    cli_score = json.loads(capsys.readouterr().out)["score"]

    client = TestClient(create_app(acc_bundle_path))
    sid = client.post("/sessions").json()["session_id"]
    client.post(f"/sessions/{sid}/recordings", content=wav_path.read_bytes())
    client.put(f"/sessions/{sid}/demographics",
               json={"age": 40, "gender": "male", "bmi": 19.5, "symptom": True})
    http_score = client.post(f"/sessions/{sid}/score",
                             params={"task": "tb_vs_rest"}).json()["score"]
    identical = cli_score == http_score

    # 1000 random request sequences against a reference state machine
    burst = np.zeros(2 * 16000)
    t = np.arange(4000) / 16000
    burst[16000:20000] = 0.5 * np.sin(2 * np.pi * 800 * t) * np.exp(-t * 20)
    short = tmp_path / "short.wav"
    save_wav(short, burst)
    cough_bytes = short.read_bytes()
    silent = tmp_path / "silent.wav"
    save_wav(silent, np.zeros(16000))
    silent_bytes = silent.read_bytes()

    rng = np.random.default_rng(0)
    actions = ("upload", "upload_silent", "demographics", "score", "close")
    legal = True
    for _ in range(1000):
        sid = client.post("/sessions").json()["session_id"]
        state = "Open"
        has_segments = has_demo = False
        for _ in range(5):
            action = actions[rng.integers(len(actions))]
            if action == "upload":
                r = client.post(f"/sessions/{sid}/recordings",
                                content=cough_bytes)
                if state in ("Open", "HasAudio", "HasDemographics"):
                    legal &= r.status_code == 200
                    has_segments = True
                    if state == "Open":
                        state = "HasAudio"
                else:
                    legal &= r.status_code == 409
            elif action == "upload_silent":
                r = client.post(f"/sessions/{sid}/recordings",
                                content=silent_bytes)
                if state in ("Open", "HasAudio", "HasDemographics"):
                    legal &= r.status_code == 200 and r.json()["state"] == state
                else:
                    legal &= r.status_code == 409
            elif action == "demographics":
                r = client.put(f"/sessions/{sid}/demographics",
                               json={"age": 30, "gender": "female",
                                     "bmi": 21.0, "symptom": False})
                if state in ("Open", "HasAudio", "HasDemographics"):
                    legal &= r.status_code == 200
                    has_demo = True
                    if has_segments:
                        state = "HasDemographics"
                else:
                    legal &= r.status_code == 409
            elif action == "score":
                r = client.post(f"/sessions/{sid}/score")
                if state == "HasDemographics":
                    legal &= r.status_code == 200
                    state = "Scored"
                else:
                    legal &= r.status_code == 409
            else:
                r = client.post(f"/sessions/{sid}/close")
                if state == "Scored":
                    legal &= r.status_code == 200
                    state = "Closed"
                else:
                    legal &= r.status_code == 409
            if not legal:
                break
        if not legal:
            break
    check("service/CLI score equivalence and state machine",
          identical and legal,
          f"score {cli_score:.6f}, 1000 sequences")


def test_console_contract_suite():
    frontend = Path(__file__).resolve().parents[1] / "frontend"
    if not (frontend / "package.json").is_file():
        pytest.skip("browser console not built")
    if shutil.which("npx") is None:
        pytest.skip("node toolchain unavailable")
    proc = subprocess.run(["npx", "vitest", "run"], cwd=frontend,
                          capture_output=True, text=True, timeout=300)
    check("browser console contract tests", proc.returncode == 0,
          (proc.stdout + proc.stderr).strip().splitlines()[-1]
          if (proc.stdout or proc.stderr) else "")
