"""Command-line entry point.

Subcommands: ``gen`` (phantom datasets), ``reformat`` (synthetic volume ->
curved reformation), ``train`` (staged pipeline over folds), ``eval``
(probe or classifier protocol), ``project`` (2D embedding scatter).
Results go to files under --out, logs to stderr, summaries to stdout.
Every run writes a ``run.json`` echoing the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import phantom
from .backbone import NetworkConfig, load_model, save_model
from .evaluation import (
    FoldSummary,
    binary_fracture_labels,
    embed_samples,
    evaluate_classifier,
    evaluate_probe_protocol,
    projection_csv,
    projection_svg,
    project_2d,
)
from .mining import GradeLabel, folds_from_json, folds_to_json, make_folds
from .pipeline import (
    STAGE_FRACTURE,
    STAGE_LABEL,
    STAGE_REPRESENTATION,
    PipelineConfig,
    StagePlan,
    run_pipeline,
)

log = logging.getLogger("spinemetric")

NETWORK_PRESETS = {
    "full": NetworkConfig(),
    "reduced": NetworkConfig(input_size=28, conv_channels=(8, 16), linear_dims=(32, 8)),
    "tiny": NetworkConfig(input_size=16, conv_channels=(6, 12), linear_dims=(24, 8)),
}


def _write_run_json(out_dir: Path, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.json").write_text(
        json.dumps(resolved, sort_keys=True, separators=(",", ":")) + "\n"
    )


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _dataset_manifest_path(dataset) -> Path:
    p = Path(dataset)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.exists():
        raise FileNotFoundError(
            f"dataset manifest not found at {p}; run `spinemetric gen` first "
            f"or pass the manifest path explicitly"
        )
    return p


# --- gen ---------------------------------------------------------------


def cmd_gen(args) -> int:
    out_dir = Path(args.out)
    cfg_file = _load_config_file(args.config)
    seed = args.seed if args.seed is not None else cfg_file.get("seed", 0)
    config = phantom.PhantomConfig(seed=seed, jitter_px=cfg_file.get("jitter_px", 0))

    if args.counts:
        totals = {g: 0 for g in phantom.PAPER_GRADE_TOTALS}
        for part in args.counts.split(","):
            key, val = part.split("=")
            totals[GradeLabel[key.strip().upper()]] = int(val)
        if any(v < 0 for v in totals.values()):
            raise ValueError("counts must be nonnegative")
        counts = phantom.counts_at_ratio(totals, scale=1.0)
    elif args.preset == "paper-ratio":
        counts = phantom.counts_at_ratio(phantom.PAPER_GRADE_TOTALS, scale=args.scale)
    else:
        raise ValueError(f"unknown preset {args.preset!r}")

    total = sum(counts.values())
    if total <= 0:
        raise ValueError("requested dataset is empty (count 0)")
    log.info("generating %d samples into %s", total, out_dir)

    samples, manifest = phantom.generate_dataset(config, counts, seed=seed)
    manifest = phantom.save_dataset(samples, manifest, out_dir)
    digest = phantom.manifest_digest(manifest)
    _write_run_json(
        out_dir,
        {
            "command": "gen",
            "seed": seed,
            "preset": args.preset,
            "scale": args.scale,
            "counts": args.counts,
            "total": total,
            "manifest_digest": digest,
        },
    )
    print(digest)
    return 0


# --- reformat ------------------------------------------------------------


def cmd_reformat(args) -> int:
    out_dir = Path(args.out)
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng([seed, 555])
    if args.grades:
        grades = [GradeLabel[g.strip().upper()] for g in args.grades.split(",")]
        if len(grades) != args.vertebrae:
            raise ValueError("--grades length must equal --vertebrae")
    else:
        grades = [
            GradeLabel(int(rng.choice([0, 0, 0, 2, 3]))) for _ in range(args.vertebrae)
        ]

    config = phantom.PhantomConfig(seed=seed)
    volume = phantom.generate_spine_volume(
        config, n_vertebrae=args.vertebrae, curvature=args.curvature, grades=grades, seed=seed
    )
    reformation = phantom.reformat_curved(volume)

    out_dir.mkdir(parents=True, exist_ok=True)
    phantom.write_volume(out_dir / "volume.vvol", volume)
    phantom.write_sample_tensor(out_dir / "reformation.vpat", reformation.image[None])
    centroid_doc = {
        "labels": reformation.labels,
        "centroids_rc": [[r, c] for r, c in reformation.centroids_rc],
        "out_of_bounds_fraction": float(reformation.out_of_bounds.mean()),
    }
    (out_dir / "centroids.json").write_text(
        json.dumps(centroid_doc, sort_keys=True, separators=(",", ":")) + "\n"
    )
    _write_run_json(
        out_dir,
        {
            "command": "reformat",
            "seed": seed,
            "vertebrae": args.vertebrae,
            "curvature": args.curvature,
            "grades": [int(g) for g in grades],
            "rows": int(reformation.image.shape[0]),
            "cols": int(reformation.image.shape[1]),
        },
    )
    print(f"reformation {reformation.image.shape[0]}x{reformation.image.shape[1]}")
    return 0


# --- train ---------------------------------------------------------------


def _build_pipeline_config(args, cfg_file) -> PipelineConfig:
    base = PipelineConfig.from_dict(cfg_file["pipeline"]) if "pipeline" in cfg_file else PipelineConfig()
    if args.network:
        base = replace(base, network=NETWORK_PRESETS[args.network])
    if args.stages:
        tokens = [t.strip() for t in args.stages.split(",") if t.strip()]
        rep_losses = [t for t in tokens if t in ("contrastive", "triplet", "grading")]
        if len(rep_losses) > 1:
            raise ValueError("at most one representation loss may be listed")
        epochs = {p.stage: p.epochs for p in base.stages}
        batch = {p.stage: p.batch_size for p in base.stages}
        plans = []
        if "label" in tokens:
            plans.append(StagePlan(STAGE_LABEL, "contrastive",
                                   epochs=epochs.get(STAGE_LABEL, 30),
                                   batch_size=batch.get(STAGE_LABEL, 32)))
        if rep_losses:
            plans.append(StagePlan(STAGE_REPRESENTATION, rep_losses[0],
                                   epochs=epochs.get(STAGE_REPRESENTATION, 30),
                                   batch_size=batch.get(STAGE_REPRESENTATION, 32)))
        if "fracture" in tokens:
            plans.append(StagePlan(STAGE_FRACTURE, "cross_entropy",
                                   epochs=epochs.get(STAGE_FRACTURE, 40),
                                   batch_size=batch.get(STAGE_FRACTURE, 32)))
        known = set(rep_losses) | {"label", "fracture"}
        unknown = [t for t in tokens if t not in known]
        if unknown:
            raise ValueError(f"unknown stage tokens: {unknown}")
        if not plans:
            raise ValueError("--stages selected no stages")
        base = replace(base, stages=tuple(plans))
    if args.epochs:
        counts = [int(v) for v in args.epochs.split(",")]
        if len(counts) != len(base.stages):
            raise ValueError(
                f"--epochs needs {len(base.stages)} comma-separated values"
            )
        base = replace(
            base,
            stages=tuple(replace(p, epochs=e) for p, e in zip(base.stages, counts)),
        )
    if args.seed is not None:
        base = replace(base, seed=args.seed)
    return base


def _train_one_fold(payload):
    """Worker for fold-level parallelism; reloads the dataset from disk."""
    manifest_path, config_json, fold_json, out_dir = payload
    samples, _ = phantom.load_dataset(manifest_path)
    config = PipelineConfig.from_dict(json.loads(config_json))
    fold = folds_from_json(fold_json)[0]
    fold_dir = Path(out_dir) / f"fold_{fold.fold_id:02d}"
    fold_dir.mkdir(parents=True, exist_ok=True)

    model, metrics, records = run_pipeline(config, samples, fold, checkpoint_dir=fold_dir)
    save_model(model, fold_dir / "final.gmck")
    record_doc = {
        "seed": config.seed,
        "config_digest": hashlib.sha256(config.to_json().encode()).hexdigest(),
        "fold_id": fold.fold_id,
        "stages": [r.to_dict() for r in records],
    }
    (fold_dir / "records.json").write_text(json.dumps(record_doc, sort_keys=True) + "\n")
    (fold_dir / "metrics.json").write_text(
        json.dumps(metrics.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"
    )
    return fold.fold_id, metrics.to_dict()


def cmd_train(args) -> int:
    cfg_file = _load_config_file(args.config)
    dataset = args.dataset or cfg_file.get("dataset")
    if not dataset:
        raise ValueError("no dataset given (use --dataset or a config file entry)")
    manifest_path = _dataset_manifest_path(dataset)
    samples, manifest = phantom.load_dataset(manifest_path)
    config = _build_pipeline_config(args, cfg_file)
    out_dir = Path(args.out)

    n_folds = args.folds if args.folds is not None else int(cfg_file.get("folds", 15))
    test_fraction = (
        args.test_fraction
        if args.test_fraction is not None
        else float(cfg_file.get("test_fraction", 0.25))
    )
    labels = [s.grade for s in samples]
    folds = make_folds(labels, n_folds=n_folds, test_fraction=test_fraction, seed=config.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "folds.json").write_text(folds_to_json(folds) + "\n")

    _write_run_json(
        out_dir,
        {
            "command": "train",
            "dataset": str(manifest_path),
            "dataset_digest": phantom.manifest_digest(manifest),
            "pipeline": config.to_dict(),
            "folds": n_folds,
            "test_fraction": test_fraction,
            "jobs": args.jobs,
        },
    )

    payloads = [
        (str(manifest_path), config.to_json(), folds_to_json([fold]), str(out_dir))
        for fold in folds
    ]
    results = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for fold_id, metrics in pool.map(_train_one_fold, payloads):
                log.info("fold %d done: f1=%.3f", fold_id, metrics["f1"])
                results.append((fold_id, metrics))
    else:
        for payload in payloads:
            fold_id, metrics = _train_one_fold(payload)
            log.info("fold %d done: f1=%.3f", fold_id, metrics["f1"])
            results.append((fold_id, metrics))

    results.sort()
    print(json.dumps({"folds_trained": len(results)}))
    return 0


# --- eval ----------------------------------------------------------------


def _print_summary_table(title: str, rows) -> None:
    print(title)
    print(f"{'Setup':<16} {'SN':>12} {'SP':>12} {'F1':>12}")
    for name, summary in rows:
        m, s = summary.mean, summary.std
        print(
            f"{name:<16} "
            f"{100 * m['sensitivity']:5.1f} ± {100 * s['sensitivity']:4.1f} "
            f"{100 * m['specificity']:5.1f} ± {100 * s['specificity']:4.1f} "
            f"{100 * m['f1']:5.1f} ± {100 * s['f1']:4.1f}"
        )


def cmd_eval(args) -> int:
    manifest_path = _dataset_manifest_path(args.dataset)
    samples, _ = phantom.load_dataset(manifest_path)
    out_dir = Path(args.out)
    seed = args.seed if args.seed is not None else 0

    if args.protocol == "probe":
        if not args.checkpoint:
            raise ValueError("--protocol probe requires --checkpoint")
        model = load_model(args.checkpoint)
        labels = [s.grade for s in samples]
        folds = make_folds(labels, n_folds=args.folds, test_fraction=args.test_fraction, seed=seed)
        summary = evaluate_probe_protocol(model, samples, folds, n_steps=args.probe_steps)
        name = Path(args.checkpoint).stem
    elif args.protocol == "classify":
        if not args.run:
            raise ValueError("--protocol classify requires --run (a train output dir)")
        run_dir = Path(args.run)
        folds = folds_from_json((run_dir / "folds.json").read_text())
        models = [
            load_model(run_dir / f"fold_{f.fold_id:02d}" / "final.gmck") for f in folds
        ]
        summary = evaluate_classifier(models, samples, folds)
        name = run_dir.name
    else:
        raise ValueError(f"unknown protocol {args.protocol!r}")

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(summary.to_json() + "\n")
    _write_run_json(
        out_dir,
        {
            "command": "eval",
            "protocol": args.protocol,
            "dataset": str(manifest_path),
            "checkpoint": args.checkpoint,
            "run": args.run,
            "folds": len(summary.folds),
            "seed": seed,
        },
    )
    _print_summary_table(f"protocol={args.protocol}", [(name, summary)])
    return 0


# --- project -------------------------------------------------------------


def cmd_project(args) -> int:
    manifest_path = _dataset_manifest_path(args.dataset)
    samples, _ = phantom.load_dataset(manifest_path)
    model = load_model(args.checkpoint)
    out_dir = Path(args.out)

    emb = embed_samples(model, samples)
    coords = project_2d(emb)
    ids = [s.id for s in samples]
    grades = [s.grade for s in samples]

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "projection.csv").write_text(projection_csv(ids, grades, coords))
    (out_dir / "projection.svg").write_text(projection_svg(grades, coords))
    _write_run_json(
        out_dir,
        {
            "command": "project",
            "dataset": str(manifest_path),
            "checkpoint": args.checkpoint,
            "samples": len(samples),
        },
    )
    print(f"projected {len(samples)} embeddings")
    return 0


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinemetric",
        description="Grade-aware metric learning on vertebra phantoms",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log more (-v, -vv)")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a phantom patch dataset")
    p.add_argument("--preset", default="paper-ratio", help="dataset preset (paper-ratio)")
    p.add_argument("--scale", type=float, default=1.0, help="scale factor on preset class totals")
    p.add_argument("--counts", help="explicit per-grade totals, e.g. g0=100,g2=30,g3=10")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("reformat", help="synthesize a spine volume and reformat it")
    p.add_argument("--vertebrae", type=int, default=17)
    p.add_argument("--curvature", type=float, default=0.3)
    p.add_argument("--grades", help="comma list of per-vertebra grades (g0/g2/g3)")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reformat)

    p = sub.add_parser("train", help="run the staged training pipeline over folds")
    p.add_argument("--dataset", help="dataset directory or manifest.json")
    p.add_argument("--stages", help="comma list: label, one of contrastive/triplet/grading, fracture")
    p.add_argument("--epochs", help="comma list of per-stage epoch counts")
    p.add_argument("--network", choices=sorted(NETWORK_PRESETS), help="network preset")
    p.add_argument("--folds", type=int, help="number of folds (default 15)")
    p.add_argument("--test-fraction", type=float, help="test split share (default 0.25)")
    p.add_argument("--config", help="JSON config file with a 'pipeline' section")
    p.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    p.add_argument("--jobs", type=int, default=1, help="parallel fold workers")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or training run")
    p.add_argument("--protocol", choices=("probe", "classify"), required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", help="embedding checkpoint (probe protocol)")
    p.add_argument("--run", help="train output directory (classify protocol)")
    p.add_argument("--folds", type=int, default=15)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--probe-steps", type=int, default=100_000)
    p.add_argument("--seed", type=int, help="fold RNG seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("project", help="2D PCA scatter of a checkpoint's embeddings")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # single-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
