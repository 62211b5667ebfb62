"""Command-line entry points for batch runs.

Commands: ingest, categorize, cluster, crop, train, predict, evaluate,
calibrate, schedule. All file outputs are written atomically (temp file +
rename); ``--dry-run`` prints what would happen and writes nothing.
Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .config import RunConfig
from .core import ImageSample, Label, ensure_pixels
from .datapipe import (
    ClusterAssignment,
    CropKind,
    Manifest,
    build_attribute_predictor,
    build_embedder,
    build_folds,
    categorize_all,
    cluster_fakes,
    extract_crops,
    load_manifest,
    save_manifest,
)
from .ensemble import (
    EnsembleConfig,
    build_provider,
    detect_parts,
    facecrop_score,
    final_pipeline_score,
    read_score_file,
    write_score_file,
)
from .errors import (
    ConfigurationError,
    IngestionError,
    InvalidInputError,
    SfanetError,
)
from .heads.bundle import MODEL_NAMES, build_bundle, load_bundle, save_bundle
from .metrics import (
    ScoredSet,
    full_report,
    load_scored_set,
    threshold_sweep,
)
from .trainsched import (
    LabeledImages,
    make_schedule,
    run_sequential,
    train_epochs,
)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    os.replace(tmp, path)


def _write_csv_rows(path: Path, header: list[str], rows: list[list]) -> None:
    import csv

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(getattr(args, "config", None))
    seed = getattr(args, "seed", None)
    if seed is not None:
        for section in ("data", "train", "model"):
            cfg.override(section, "seed", seed)
    if getattr(args, "threshold", None) is not None:
        cfg.override("eval", "threshold", args.threshold)
    if getattr(args, "k", None) is not None:
        cfg.override("data", "k", args.k)
    if getattr(args, "stub_providers", False):
        cfg.override("provider", "face_parts", "stub_template")
        cfg.override("provider", "attributes", "stub_hash")
        cfg.override("provider", "embedder", "stub_pixels")
    return cfg


# ---------------------------------------------------------------------------
# Command handlers
# ---------------------------------------------------------------------------


def _cmd_ingest(args: argparse.Namespace) -> int:
    _ = _resolve_config(args)
    if bool(args.from_dir) == bool(args.from_csv):
        raise ConfigurationError("ingest needs exactly one of --from-dir / --from-csv")
    if args.from_csv:
        manifest = load_manifest(args.from_csv)
    else:
        root = Path(args.from_dir)
        if not root.is_dir():
            raise IngestionError(f"not a directory: {root}")
        origin = args.origin or root.name
        samples = []
        for label_name in ("real", "fake"):
            subdir = root / label_name
            if not subdir.is_dir():
                continue
            for file in sorted(subdir.iterdir()):
                if file.suffix.lower() not in IMAGE_SUFFIXES:
                    continue
                samples.append(
                    ImageSample(
                        id=f"{label_name}_{file.stem}",
                        path=file,
                        label=Label.parse(label_name),
                        origin=origin,
                    )
                )
        if not samples:
            raise IngestionError(f"empty manifest: no images under {root}/real or {root}/fake")
        manifest = Manifest.from_samples(samples)
    if not args.dry_run:
        save_manifest(manifest, args.output)
    print(f"manifest: {len(manifest)} samples, counts={manifest.counts}")
    print(f"checksum: {manifest.checksum}")
    return 0


def _cmd_categorize(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    manifest = load_manifest(args.manifest)
    predictor = build_attribute_predictor(cfg.get("provider", "attributes"))
    assignment, report = categorize_all(
        predictor, manifest.samples, emotion_groups=cfg.emotion_groups()
    )
    categorized = tuple(
        ImageSample(
            id=s.id,
            path=s.path,
            label=s.label,
            origin=s.origin,
            category=assignment[s.id],
        )
        for s in manifest.samples
    )
    if not args.dry_run:
        save_manifest(Manifest.from_samples(categorized), args.output)
        if args.report:
            _write_json(
                Path(args.report),
                {**report.to_dict(), "config_hash": cfg.config_hash()},
            )
    for name, count in sorted(report.counts.items()):
        print(f"{name}: {count}")
    print(f"uncategorized: {report.uncategorized}")
    return 0


def _cmd_cluster(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    manifest = load_manifest(args.manifest)
    fakes = manifest.fake_samples()
    if not fakes:
        raise IngestionError("manifest has no fake samples to cluster")
    embedder = build_embedder(cfg.get("provider", "embedder"))
    embeddings = [(s.id, embedder.embed(s)) for s in fakes]
    k = int(cfg.get("data", "k"))
    seed = int(cfg.get("data", "seed"))
    assignment = cluster_fakes(embeddings, k=k, seed=seed)
    if not args.dry_run:
        assignment.save(args.output, extra={"config_hash": cfg.config_hash()})
    sizes = [len(assignment.members(c)) for c in range(assignment.k)]
    print(f"clusters: k={assignment.k}, sizes={sizes}, inertia={assignment.inertia:.4f}")
    return 0


def _cmd_crop(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    from PIL import Image

    manifest = load_manifest(args.manifest)
    provider = build_provider(cfg.get("provider", "face_parts"))
    out_dir = Path(args.output_dir)
    rows = []
    counts = {CropKind.DUAL_CROP: 0, CropKind.FULL_IMAGE: 0}
    if not args.dry_run:
        for sub in ("eyes", "lips", "full"):
            (out_dir / sub).mkdir(parents=True, exist_ok=True)
    for sample in manifest.samples:
        report = detect_parts(provider, sample)
        result = extract_crops(sample, report)
        counts[result.kind] += 1
        if result.kind == CropKind.DUAL_CROP:
            eyes_path = out_dir / "eyes" / f"{sample.id}.png"
            lips_path = out_dir / "lips" / f"{sample.id}.png"
            if not args.dry_run:
                Image.fromarray(result.eyes_crop).save(eyes_path)
                Image.fromarray(result.lips_crop).save(lips_path)
            rows.append([sample.id, result.kind, str(eyes_path), str(lips_path)])
        else:
            full_path = out_dir / "full" / f"{sample.id}.png"
            if not args.dry_run:
                Image.fromarray(ensure_pixels(sample)).save(full_path)
            rows.append([sample.id, result.kind, "", ""])
    if not args.dry_run:
        _write_csv_rows(
            out_dir / "crops.csv", ["id", "kind", "eyes_path", "lips_path"], rows
        )
    print(
        f"crops: dual={counts[CropKind.DUAL_CROP]}, "
        f"full_image={counts[CropKind.FULL_IMAGE]}"
    )
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    model_config = cfg.model_config(
        name=args.model,
        resolution=(args.resolution, args.resolution) if args.resolution else None,
        patch_size=args.patch_size,
        spatial_dim=args.spatial_dim,
        freq_dim=args.freq_dim,
        extractor=args.extractor,
    )
    train_config = cfg.train_config(
        epochs_per_phase=args.epochs_per_phase, finetune_epochs=args.finetune_epochs
    )
    manifest = load_manifest(args.train_manifest)
    val = None
    if args.val_manifest:
        val = LabeledImages.from_samples(load_manifest(args.val_manifest).samples)
    policy = cfg.policy()
    out_dir = Path(args.output_dir)

    if args.sequential:
        if not args.assignment:
            raise ConfigurationError("--sequential requires --assignment")
        assignment = ClusterAssignment.load(args.assignment)
        folds = build_folds(manifest, assignment)
        schedule = make_schedule(
            assignment.k, train_config.epochs_per_phase, train_config.finetune_epochs
        )
        plan = ", ".join(f"{p.dataset}x{p.epochs}" for p in schedule.phases)
        print(f"plan: {plan} (seed={train_config.seed})")
        if args.dry_run:
            return 0
        bundle = build_bundle(model_config)
        bundle, records = run_sequential(
            bundle,
            folds,
            manifest,
            schedule,
            train_config,
            out_dir,
            val=val,
            policy=policy,
            resume=args.resume,
        )
        last = records[-1]
        if last.val_metrics:
            print(
                f"final: loss={last.epoch_losses[-1]:.4f} "
                f"val_accuracy={last.val_metrics['val_accuracy']:.4f}"
            )
        else:
            print(f"final: loss={last.epoch_losses[-1]:.4f}")
    else:
        print(f"plan: train x{args.epochs} epochs (seed={train_config.seed})")
        if args.dry_run:
            return 0
        bundle = build_bundle(model_config)
        data = LabeledImages.from_samples(manifest.samples)
        bundle, losses = train_epochs(
            bundle, data, args.epochs, train_config, out_dir, val=val, policy=policy
        )
        print(f"final: loss={losses[-1]:.4f}")

    final_path = out_dir / f"{model_config.name}-final.ckpt"
    save_bundle(
        bundle,
        final_path,
        extra_meta={
            "run_config_hash": cfg.config_hash(),
            "train_config": train_config.to_dict(),
        },
    )
    print(f"checkpoint: {final_path}")
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    manifest = load_manifest(args.manifest)
    provider = build_provider(cfg.get("provider", "face_parts"))
    policy = cfg.policy()
    records = []
    if args.pipeline == "final":
        for flag in ("swinatten", "swinfusion", "sfnet"):
            if getattr(args, flag) is None:
                raise ConfigurationError(f"final pipeline requires --{flag} CKPT")
        ensemble = EnsembleConfig(
            swinatten=load_bundle(args.swinatten),
            swinfusion=load_bundle(args.swinfusion),
            sfnet=load_bundle(args.sfnet),
            policy=policy,
        )
        for sample in manifest.samples:
            records.append(final_pipeline_score(ensemble, provider, sample))
    else:
        if not args.eyes or not args.lips:
            raise ConfigurationError("facecrop pipeline requires --eyes and --lips CKPTs")
        eyes = load_bundle(args.eyes)
        lips = load_bundle(args.lips)
        for sample in manifest.samples:
            records.append(facecrop_score(eyes, lips, provider, sample, policy))
    if not args.dry_run:
        write_score_file(records, args.output)
    paths: dict[str, int] = {}
    for rec in records:
        paths[rec.path_taken] = paths.get(rec.path_taken, 0) + 1
    print(f"predicted {len(records)} images; paths={dict(sorted(paths.items()))}")
    return 0


def _labeled_scores(scores_path: str, manifest_path: Optional[str]) -> ScoredSet:
    """Accept either a labeled score CSV or a prediction file plus a manifest."""
    path = Path(scores_path)
    if not path.exists():
        raise IngestionError(f"score file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
    if header == "id,score,label":
        return load_scored_set(path)
    records = read_score_file(path)
    if manifest_path is None:
        raise ConfigurationError(
            "prediction score files carry no ground truth; pass --manifest to join labels"
        )
    labels = {s.id: s.label for s in load_manifest(manifest_path).samples}
    entries = []
    for rec in records:
        label = labels.get(rec.id)
        if label is None:
            raise IngestionError(f"no label for sample {rec.id!r} in {manifest_path}")
        entries.append((rec.id, rec.score_fused, label))
    return ScoredSet.from_entries(entries)


def _cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    sset = _labeled_scores(args.scores, args.manifest)
    c_miss, c_fa, p_target = cfg.dcf_params()
    report = full_report(
        sset,
        cfg.policy(),
        positive=cfg.positive_label(),
        c_miss=c_miss,
        c_fa=c_fa,
        p_target=p_target,
    )
    for line in report.format_lines():
        print(line)
    if args.output and not args.dry_run:
        _write_json(
            Path(args.output),
            {**report.to_record(), "config_hash": cfg.config_hash()},
        )
    return 0


def _parse_grid(text: str) -> np.ndarray:
    try:
        start, stop, step = (float(part) for part in text.split(":"))
    except ValueError:
        raise ConfigurationError(
            f"--grid expects start:stop:step, got {text!r}"
        ) from None
    if step <= 0 or not 0 < start <= stop < 1:
        raise ConfigurationError(f"bad threshold grid {text!r}")
    return np.round(np.arange(start, stop + step / 2, step), 10)


def _cmd_calibrate(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    sset = _labeled_scores(args.scores, args.manifest)
    c_miss, c_fa, p_target = cfg.dcf_params()
    grid = _parse_grid(args.grid) if args.grid else None
    rows = threshold_sweep(
        sset, grid, positive=cfg.positive_label(), c_miss=c_miss, c_fa=c_fa, p_target=p_target
    )
    header = ["threshold", "tp", "fp", "tn", "fn", "accuracy", "fpr", "fnr", "dcf"]
    if args.output and not args.dry_run:
        _write_csv_rows(
            Path(args.output),
            header,
            [
                [
                    f"{r['threshold']:.10g}",
                    r["tp"],
                    r["fp"],
                    r["tn"],
                    r["fn"],
                    f"{r['accuracy']:.10g}",
                    f"{r['fpr']:.10g}",
                    f"{r['fnr']:.10g}",
                    f"{r['dcf']:.10g}",
                ]
                for r in rows
            ],
        )
    best = max(rows, key=lambda r: r["accuracy"])
    from .metrics import eer as eer_fn, min_dcf as min_dcf_fn

    print(
        f"best: threshold={best['threshold']:.4f} accuracy={best['accuracy']:.4f} "
        f"dcf={best['dcf']:.4f}"
    )
    print(f"eer={eer_fn(sset):.6f}")
    print(f"min_dcf={min_dcf_fn(sset, c_miss, c_fa, p_target):.6f}")
    return 0


def _cmd_schedule(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    k = int(cfg.get("data", "k"))
    schedule = make_schedule(k, args.epochs, args.finetune)
    print(
        f"schedule: k={k}, epochs_per_phase={args.epochs}, "
        f"finetune_epochs={args.finetune}, total_epochs={schedule.total_epochs}"
    )
    for i, phase in enumerate(schedule.phases, start=1):
        print(f"phase {i}: {phase.dataset} ({phase.epochs} epochs)")
    if args.output and not args.dry_run:
        _write_json(
            Path(args.output),
            {**schedule.to_dict(), "config_hash": cfg.config_hash()},
        )
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config file (or $SFANET_CONFIG)")
    common.add_argument("--seed", type=int, help="seed for data, training, and init")
    common.add_argument("--threshold", type=float, help="decision threshold")
    common.add_argument("--k", type=int, help="number of fake clusters")
    common.add_argument(
        "--stub-providers",
        action="store_true",
        help="force deterministic stub providers over config values",
    )
    common.add_argument(
        "--dry-run", action="store_true", help="print the plan; write nothing"
    )

    parser = argparse.ArgumentParser(
        prog="sfanet",
        description="Spatial-frequency deepfake detection: data, training, ensemble, metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="build or verify a manifest CSV")
    p.add_argument("--from-dir", help="directory with real/ and fake/ image subdirs")
    p.add_argument("--from-csv", help="existing manifest CSV to validate")
    p.add_argument("--origin", help="origin tag (defaults to the directory name)")
    p.add_argument("--output", required=True)
    p.set_defaults(handler=_cmd_ingest)

    p = sub.add_parser(
        "categorize", parents=[common], help="fill attribute categories into a manifest"
    )
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--report", help="write per-category counts as JSON")
    p.set_defaults(handler=_cmd_categorize)

    p = sub.add_parser(
        "cluster", parents=[common], help="k-means cluster the fake set's embeddings"
    )
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", required=True, help="assignment JSON path")
    p.set_defaults(handler=_cmd_cluster)

    p = sub.add_parser(
        "crop", parents=[common], help="extract eyes/lips crops gated on face parts"
    )
    p.add_argument("--manifest", required=True)
    p.add_argument("--output-dir", required=True)
    p.set_defaults(handler=_cmd_crop)

    p = sub.add_parser("train", parents=[common], help="train a model bundle")
    p.add_argument("--model", required=True, choices=MODEL_NAMES)
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--val-manifest")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--epochs", type=int, default=3, help="epochs for plain training")
    p.add_argument("--sequential", action="store_true", help="use the fold schedule")
    p.add_argument("--assignment", help="cluster assignment JSON (for --sequential)")
    p.add_argument("--epochs-per-phase", type=int)
    p.add_argument("--finetune-epochs", type=int)
    p.add_argument("--resume", action="store_true", help="continue from checkpoints")
    p.add_argument("--resolution", type=int, help="square input resolution")
    p.add_argument("--patch-size", type=int)
    p.add_argument("--spatial-dim", type=int)
    p.add_argument("--freq-dim", type=int)
    p.add_argument("--extractor", help="extractor preset name")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("predict", parents=[common], help="score a manifest of images")
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", required=True, help="score CSV path")
    p.add_argument("--pipeline", choices=("final", "facecrop"), default="final")
    p.add_argument("--swinatten", help="swinatten checkpoint (final pipeline)")
    p.add_argument("--swinfusion", help="swinfusion checkpoint (final pipeline)")
    p.add_argument("--sfnet", help="sfnet checkpoint (final pipeline)")
    p.add_argument("--eyes", help="eyes-crop checkpoint (facecrop pipeline)")
    p.add_argument("--lips", help="lips-crop checkpoint (facecrop pipeline)")
    p.set_defaults(handler=_cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="metric report for a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--manifest", help="manifest supplying labels for prediction files")
    p.add_argument("--output", help="write the report as JSON")
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser(
        "calibrate", parents=[common], help="threshold sweep over a labeled score file"
    )
    p.add_argument("--scores", required=True)
    p.add_argument("--manifest", help="manifest supplying labels for prediction files")
    p.add_argument("--output", help="write the sweep as CSV")
    p.add_argument("--grid", help="threshold grid start:stop:step")
    p.set_defaults(handler=_cmd_calibrate)

    p = sub.add_parser(
        "schedule", parents=[common], help="print or save the sequential-training plan"
    )
    p.add_argument("--epochs", type=int, default=3, help="epochs per fold phase")
    p.add_argument("--finetune", type=int, default=3, help="full-dataset epochs")
    p.add_argument("--output", help="write the schedule as JSON")
    p.set_defaults(handler=_cmd_schedule)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigurationError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SfanetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
