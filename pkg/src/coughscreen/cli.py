"""Command-line entry point for the reproduction workflow.

Subcommands: simulate | segment | train | evaluate | sweep | adversarial |
ltas | score | serve. Options come from an optional JSON config file plus
flags; flags win over the file. Every run writes a run-metadata record
(config, seeds, package version) into the output directory so it can be
replayed exactly.

Exit codes: 2 config error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__, audio_io
from .audio_io import AudioIoError, SourceDevice
from .cohort import (CohortSpec, Gender, Group, ManifestError, Participant,
                     load_manifest, simulate_cohort)
from .evaluation import DEFAULT_TAU_GRID, EvaluationError, Task
from .features import compute_ltas, ltas_to_csv
from .fusion import FusionError
from .pipeline import (DEFAULT_DURATION_S, ModelBundle, duration_sweep,
                       evaluate_rows, make_provider, prepare_clip,
                       prepare_dataset, report_to_text, rows_to_csv,
                       run_adversarial, run_cross_validation, score_session,
                       segment_clip_for_scoring, task_scores, train_bundle)
from .segmenter import DetectorConfig, SegmentKind, detect_coughs

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


class ConfigError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coughscreen")
    p.add_argument("--config", help="JSON config file; flags override its values")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--manifest")
        sp.add_argument("--provider", default=None,
                        choices=["mfcc-baseline", "embedding-file", "synthetic"])
        sp.add_argument("--embeddings", help="embedding container path")
        sp.add_argument("--duration", type=float, default=None)
        sp.add_argument("--thresholds", default=None,
                        help="comma-separated threshold grid")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--jobs", type=int, default=None)
        sp.add_argument("--device", choices=["mic", "phone", "all"], default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--folds", type=int, default=None)
        sp.add_argument("--resamples", type=int, default=None)
        sp.add_argument("--detector-k", type=float, default=None)

    sp = sub.add_parser("simulate", help="generate a synthetic cohort")
    common(sp)
    sp.add_argument("--group-sizes", default=None, help="e.g. 50,40,40")
    sp.add_argument("--effect-size", type=float, default=None)
    sp.add_argument("--background-confound", type=float, default=None)

    for name in ("segment", "train", "evaluate", "adversarial", "ltas"):
        common(sub.add_parser(name))
    sp = sub.add_parser("sweep", help="threshold sweep with TPP verdicts")
    common(sp)
    sp = sub.add_parser("score", help="score one participant's WAVs with a bundle")
    common(sp)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--wav", action="append", required=True)
    sp.add_argument("--age", type=int, required=True)
    sp.add_argument("--gender", choices=["male", "female"], required=True)
    sp.add_argument("--bmi", type=float, required=True)
    sp.add_argument("--symptom", action="store_true")
    sp.add_argument("--task", default="TbVsRest")
    sp.add_argument("--tau", type=float, default=None)
    sp = sub.add_parser("serve", help="run the screening HTTP service")
    common(sp)
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    return p


DEFAULTS = {
    "provider": "synthetic",
    "duration": DEFAULT_DURATION_S,
    "seed": 0,
    "folds": 10,
    "resamples": 0,
    "device": "all",
    "out": "out",
    "thresholds": ",".join(str(t) for t in DEFAULT_TAU_GRID),
    "jobs": 1,
    "detector_k": 0.25,
}


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            cfg.update(json.loads(path.read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
    for key, value in vars(args).items():
        if key in ("config", "command"):
            continue
        if value is not None:
            cfg[key] = value
    taus = cfg["thresholds"]
    if isinstance(taus, str):
        taus = [float(t) for t in taus.split(",") if t]
    if any(not 0.0 < t < 1.0 for t in taus):
        raise ConfigError("all thresholds must be in (0, 1)")
    cfg["thresholds"] = taus
    if not 1.0 <= float(cfg["duration"]) <= 6.0:
        raise ConfigError("duration must be in [1, 6] seconds")
    return cfg


def device_filter(cfg: dict) -> SourceDevice | None:
    return {"mic": SourceDevice.HIGH_FIDELITY_MIC,
            "phone": SourceDevice.SMARTPHONE,
            "all": None}[cfg.get("device", "all")]


def write_run_metadata(cfg: dict, command: str, out_dir: Path) -> None:
    record = {"command": command, "config": {k: v for k, v in cfg.items()},
              "package_version": __version__}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_metadata.json").write_text(json.dumps(record, indent=2, default=str))


def get_manifest(cfg: dict):
    if not cfg.get("manifest"):
        raise ConfigError("--manifest is required for this subcommand")
    return load_manifest(cfg["manifest"])


def get_provider(cfg: dict):
    return make_provider(cfg["provider"], embedding_path=cfg.get("embeddings"),
                         synthetic_seed=cfg.get("synthetic_seed"))


def cmd_simulate(cfg: dict, out_dir: Path) -> None:
    sizes = cfg.get("group_sizes") or "50,40,40"
    if isinstance(sizes, str):
        sizes = [int(s) for s in sizes.split(",")]
    spec = CohortSpec(
        group_sizes={Group.TB_POS: sizes[0], Group.OR: sizes[1], Group.HC: sizes[2]},
        effect_size=float(cfg.get("effect_size", 2.0)),
        background_confound=float(cfg.get("background_confound", 0.0)),
        seed=int(cfg["seed"]))
    manifest = simulate_cohort(spec, out_dir)
    print(f"wrote {len(manifest.participants)} participants, "
          f"{len(manifest.recordings)} recordings to {out_dir}")


def cmd_segment(cfg: dict, out_dir: Path) -> None:
    manifest = get_manifest(cfg)
    detector = DetectorConfig(k=float(cfg["detector_k"]))
    rows = ["participant_id,session_index,device,onset_s,offset_s"]
    for rec in manifest.recordings:
        clip = prepare_clip(rec, manifest)
        for seg in detect_coughs(clip, detector):
            rows.append(f"{rec.participant_id},{rec.session_index},"
                        f"{rec.device.value},{seg.onset_s:.3f},{seg.offset_s:.3f}")
    (out_dir / "segments.csv").write_text("\n".join(rows) + "\n")
    print(f"{len(rows) - 1} cough segments -> {out_dir / 'segments.csv'}")


def cmd_train(cfg: dict, out_dir: Path) -> None:
    manifest = get_manifest(cfg)
    bundle, report = train_bundle(
        manifest, get_provider(cfg), cfg["provider"],
        synthetic_seed=cfg.get("synthetic_seed"),
        duration_s=float(cfg["duration"]), k=int(cfg["folds"]),
        seed=int(cfg["seed"]),
        detector=DetectorConfig(k=float(cfg["detector_k"])))
    bundle.save(out_dir / "bundle.json")
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, default=str))
    print(f"bundle -> {out_dir / 'bundle.json'}")


def _run_eval(cfg: dict):
    manifest = get_manifest(cfg)
    dataset = prepare_dataset(
        manifest, get_provider(cfg), duration_s=float(cfg["duration"]),
        detector=DetectorConfig(k=float(cfg["detector_k"])),
        device_filter=device_filter(cfg))
    rows = run_cross_validation(dataset, k=int(cfg["folds"]), seed=int(cfg["seed"]))
    return manifest, rows


def cmd_evaluate(cfg: dict, out_dir: Path) -> None:
    manifest, rows = _run_eval(cfg)
    report = evaluate_rows(rows, taus=cfg["thresholds"],
                           n_resamples=int(cfg["resamples"]), seed=int(cfg["seed"]))
    if cfg.get("duration_sweep"):
        report["duration_sweep"] = duration_sweep(
            manifest, get_provider(cfg), k=int(cfg["folds"]), seed=int(cfg["seed"]))
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, default=str))
    (out_dir / "report.txt").write_text(report_to_text(report))
    (out_dir / "participant_scores.csv").write_text(rows_to_csv(rows))
    print(report_to_text(report))


def cmd_sweep(cfg: dict, out_dir: Path) -> None:
    cmd_evaluate(cfg, out_dir)


def cmd_adversarial(cfg: dict, out_dir: Path) -> None:
    manifest = get_manifest(cfg)
    dataset = prepare_dataset(
        manifest, get_provider(cfg), duration_s=float(cfg["duration"]),
        detector=DetectorConfig(k=float(cfg["detector_k"])),
        with_background=True, with_white_noise=True)
    table = run_adversarial(dataset, k=int(cfg["folds"]), seed=int(cfg["seed"]))
    (out_dir / "adversarial.json").write_text(json.dumps(table, indent=2))
    print(f"{'condition':<12} " + " ".join(f"{t.value:>10}" for t in Task))
    for name, row in table.items():
        print(f"{name:<12} " + " ".join(f"{row[t.value]:>10.3f}" for t in Task))


def cmd_ltas(cfg: dict, out_dir: Path) -> None:
    manifest = get_manifest(cfg)
    detector = DetectorConfig(k=float(cfg["detector_k"]))
    by_group: dict[str, list] = {}
    for rec in manifest.recordings:
        clip = prepare_clip(rec, manifest)
        group = manifest.participant(rec.participant_id).group.value
        by_group.setdefault(group, []).extend(detect_coughs(clip, detector))
    for group, segs in by_group.items():
        curve = compute_ltas(segs)
        (out_dir / f"ltas_{group}.csv").write_text(ltas_to_csv(curve))
    print(f"LTAS CSVs -> {out_dir}")


def cmd_score(cfg: dict, args: argparse.Namespace, out_dir: Path) -> None:
    bundle = ModelBundle.load(args.bundle)
    segments = []
    for wav in args.wav:
        clip = audio_io.load_wav(wav)
        segments.extend(segment_clip_for_scoring(bundle, clip))
    # group is unknown for a live screening subject; pick one consistent
    # with the symptom flag so the Participant invariants hold
    participant = Participant(
        participant_id="cli", group=Group.TB_POS if args.symptom else Group.HC,
        gender=Gender(args.gender), age_years=args.age, bmi=args.bmi,
        symptom_present=args.symptom, hiv_positive=False)
    task = Task(args.task)
    score = score_session(bundle, segments, participant, task)
    tau = args.tau if args.tau is not None else bundle.default_tau
    decision = "refer" if score >= tau else "no-refer"
    out = {"score": score, "threshold": tau, "decision": decision,
           "task": task.value, "model_id": bundle.model_id,
           "n_segments": len(segments)}
    print(json.dumps(out, indent=2))


def cmd_serve(cfg: dict, args: argparse.Namespace) -> None:
    import uvicorn

    from .service import create_app
    app = create_app(args.bundle)
    uvicorn.run(app, host=args.host, port=args.port)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        out_dir = Path(cfg["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        write_run_metadata(cfg, args.command, out_dir)
        if args.command == "simulate":
            cmd_simulate(cfg, out_dir)
        elif args.command == "segment":
            cmd_segment(cfg, out_dir)
        elif args.command == "train":
            cmd_train(cfg, out_dir)
        elif args.command in ("evaluate", "sweep"):
            cmd_evaluate(cfg, out_dir)
        elif args.command == "adversarial":
            cmd_adversarial(cfg, out_dir)
        elif args.command == "ltas":
            cmd_ltas(cfg, out_dir)
        elif args.command == "score":
            cmd_score(cfg, args, out_dir)
        elif args.command == "serve":
            cmd_serve(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ManifestError, AudioIoError, EvaluationError, FusionError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # pragma: no cover
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
