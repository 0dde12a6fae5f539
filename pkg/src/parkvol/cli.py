"""Command-line pipeline: phantom-gen -> train -> evaluate / bench.

All paths in manifests are relative to the working directory so a whole
run can be archived or moved. Exit codes: 0 success, 1 job/pipeline
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import multiprocessing
import os
import sys
from pathlib import Path

import numpy as np

from . import phantom
from .errors import InvalidArgument, ParkvolError, RefusedOverwrite
from .evaluation.metrics import DEFAULT_TASKS, VolumeFeatures, dice_score, features_from_masks
from .evaluation.report import run_task_matrix, write_task_svg
from .evaluation.timing import measure_segmentation_time
from .io import STRUCTURES, load_nifti
from .models import (
    UNETRConfig,
    VNetConfig,
    build_model,
    desk_unetr_config,
    desk_vnet_config,
    full_unetr_config,
    full_vnet_config,
    load_checkpoint,
    segment_structure,
)
from .training import FoldAssignment, TrainSpec, make_folds, train, write_history_csv

BACKBONES = ("cnn", "vit")

PRESETS = {
    "desk": {
        "dims": phantom.DESK_DIMS,
        "spacing": phantom.DESK_SPACING,
        "train": {
            # Reduced budgets and a bumped learning rate for the small grid;
            # early stopping ends most jobs well before the cap.
            "cnn": {"learning_rate": 1e-3, "epochs": 200, "patience": 20, "stop_loss": 0.004},
            "vit": {"learning_rate": 3e-3, "iterations": 2000, "patience": 20, "stop_loss": 0.004},
        },
    },
    "full": {
        "dims": phantom.FULL_DIMS,
        "spacing": phantom.FULL_SPACING,
        "train": {
            "cnn": {"learning_rate": 1e-4, "epochs": 100},
            "vit": {"learning_rate": 1e-4, "iterations": 20000},
        },
    },
}


def backbone_config(backbone: str, preset: str, dims) -> VNetConfig | UNETRConfig:
    if preset == "desk":
        return desk_vnet_config(dims) if backbone == "cnn" else desk_unetr_config(dims)
    return full_vnet_config(dims) if backbone == "cnn" else full_unetr_config(dims)


def derive_seed(*parts) -> int:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**31 - 1)


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True))
    tmp.replace(path)


def _parse_sizes(text: str) -> dict[phantom.Condition, int]:
    sizes = {}
    for chunk in text.split(","):
        if not chunk:
            continue
        try:
            key, value = chunk.split("=")
            sizes[phantom.Condition.from_label(key.strip())] = int(value)
        except (ValueError, InvalidArgument) as exc:
            raise InvalidArgument(f"bad --sizes entry {chunk!r}: {exc}") from exc
    if not sizes:
        raise InvalidArgument("--sizes parsed to nothing")
    return sizes


# ---------------------------------------------------------------- phantom-gen

def cmd_phantom_gen(args) -> int:
    workdir = Path(args.workdir)
    out_dir = workdir / args.out
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        raise RefusedOverwrite(f"{out_dir} exists and is not empty (use --force)")
    preset = PRESETS[args.preset]
    sizes = _parse_sizes(args.sizes)
    cohort = phantom.generate_cohort(args.seed, sizes, preset["dims"], spacing=preset["spacing"])
    run_config = {
        "command": "phantom-gen",
        "seed": args.seed,
        "preset": args.preset,
        "dims": list(preset["dims"]),
        "spacing": list(preset["spacing"]),
        "sizes": {c.value: n for c, n in sizes.items()},
    }
    manifest = phantom.save_cohort(cohort, out_dir, args.seed, extra_config=run_config)
    print(f"wrote {len(cohort)} subjects under {out_dir} (manifest: {manifest})")
    return 0


# ---------------------------------------------------------------------- train

def _load_subjects(manifest_path: Path, ids) -> list:
    manifest = phantom.load_cohort_manifest(manifest_path)
    wanted = set(ids) if ids is not None else None
    out = []
    for entry in manifest["subjects"]:
        if wanted is None or entry["id"] in wanted:
            out.append(phantom.load_subject(manifest_path, entry))
    if wanted is not None and len(out) != len(wanted):
        missing = wanted - {s.id for s in out}
        raise InvalidArgument(f"cohort manifest lacks subjects: {sorted(missing)[:10]}")
    return out


def _train_job(job: dict) -> dict:
    """Run one (backbone, structure, fold) training job. Used by workers."""
    import torch

    torch.set_num_threads(int(os.environ.get("PARKVOL_TORCH_THREADS", "1")))
    try:
        if job["backbone"] == "cnn":
            config = VNetConfig.from_dict(job["config"])
        else:
            config = UNETRConfig.from_dict(job["config"])
        model = build_model(job["backbone"], config, job["model_seed"])
        subjects = _load_subjects(Path(job["manifest"]), job["train_ids"])
        spec = TrainSpec.from_dict(job["spec"])
        _, history = train(model, subjects, job["structure"], spec,
                           checkpoint_path=Path(job["checkpoint"]))
        write_history_csv(history, Path(job["history"]))
        return {
            "job_id": job["job_id"],
            "status": "done",
            "epochs": len(history),
            "final_loss": history[-1].mean_loss if history else None,
        }
    except ParkvolError as exc:
        return {"job_id": job["job_id"], "status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def _run_jobs(jobs: list[dict], workers: int) -> list[dict]:
    if not jobs:
        return []
    if workers <= 1:
        return [_train_job(job) for job in jobs]
    ctx = multiprocessing.get_context("spawn")
    results = []
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        futures = {pool.submit(_train_job, job): job for job in jobs}
        for fut in concurrent.futures.as_completed(futures):
            results.append(fut.result())
    return results


def cmd_train(args) -> int:
    workdir = Path(args.workdir)
    manifest_path = workdir / args.cohort
    models_dir = workdir / args.out
    models_dir.mkdir(parents=True, exist_ok=True)
    manifest = phantom.load_cohort_manifest(manifest_path)
    preset = PRESETS[args.preset]
    dims = tuple(manifest["dims"])

    backbones = BACKBONES if args.backbone == "both" else (args.backbone,)
    structures = tuple(args.structures.split(",")) if args.structures else STRUCTURES
    unknown = [s for s in structures if s not in STRUCTURES]
    if unknown:
        raise InvalidArgument(f"unknown structures: {unknown}")

    fold_seed = derive_seed(args.seed, "folds")
    folds_path = models_dir / "folds.json"
    pairs = [(e["id"], e["condition"]) for e in manifest["subjects"]]
    if folds_path.exists():
        folds = FoldAssignment.from_dict(json.loads(folds_path.read_text()))
        if folds.k != args.folds or folds.seed != fold_seed:
            raise InvalidArgument(
                f"{folds_path} was built with k={folds.k}, seed={folds.seed}; "
                "rerun with matching --folds/--seed or clear the models directory"
            )
    else:
        folds = make_folds(pairs, k=args.folds, seed=fold_seed)
        _write_json(folds_path, folds.to_dict())

    jobs_path = models_dir / "jobs.json"
    statuses: dict[str, dict] = {}
    if jobs_path.exists():
        statuses = {j["job_id"]: j for j in json.loads(jobs_path.read_text())["jobs"]}

    jobs, skipped = [], 0
    for backbone in backbones:
        config = backbone_config(backbone, args.preset, dims)
        base_spec = dict(preset["train"][backbone])
        if args.epochs is not None:
            base_spec.pop("iterations", None)
            base_spec["epochs"] = args.epochs
        if args.iterations is not None:
            base_spec.pop("epochs", None)
            base_spec["iterations"] = args.iterations
        if args.learning_rate is not None:
            base_spec["learning_rate"] = args.learning_rate
        for structure in structures:
            for fold in range(folds.k):
                job_id = f"{backbone}_{structure}_fold{fold}"
                ckpt = models_dir / f"{job_id}.ckpt.npz"
                prior = statuses.get(job_id)
                if prior and prior.get("status") == "done" and ckpt.exists() and not args.retrain:
                    skipped += 1
                    continue
                spec = TrainSpec(
                    seed=derive_seed(args.seed, backbone, structure, fold), **base_spec
                )
                job = {
                    "job_id": job_id,
                    "backbone": backbone,
                    "structure": structure,
                    "fold": fold,
                    "manifest": str(manifest_path),
                    "train_ids": folds.train_ids(fold),
                    "config": config.to_dict(),
                    "model_seed": derive_seed(args.seed, backbone, structure, fold, "init"),
                    "spec": spec.to_dict(),
                    "checkpoint": str(ckpt),
                    "history": str(models_dir / f"{job_id}.history.csv"),
                }
                statuses[job_id] = {
                    "job_id": job_id,
                    "backbone": backbone,
                    "structure": structure,
                    "fold": fold,
                    "checkpoint": str(ckpt.relative_to(workdir)),
                    "history": str((models_dir / f"{job_id}.history.csv").relative_to(workdir)),
                    "cohort_manifest": str(manifest_path.relative_to(workdir)),
                    "spec": spec.to_dict(),
                    "status": "pending",
                }
                jobs.append(job)

    workers = args.workers or int(os.environ.get("PARKVOL_WORKERS", "0")) or min(2, os.cpu_count() or 1)
    print(f"{len(jobs)} training jobs to run ({skipped} already done), workers={workers}")
    results = _run_jobs(jobs, workers)
    failed = 0
    for res in results:
        entry = statuses[res["job_id"]]
        entry.update(res)
        if res["status"] != "done":
            failed += 1
            print(f"job {res['job_id']} FAILED: {res.get('error')}", file=sys.stderr)

    run_config = {
        "command": "train",
        "seed": args.seed,
        "preset": args.preset,
        "backbones": list(backbones),
        "folds": folds.k,
        "cohort": str(manifest_path.relative_to(workdir)),
    }
    _write_json(jobs_path, {"format": "parkvol-jobs-v1", "run_config": run_config,
                            "jobs": sorted(statuses.values(), key=lambda j: j["job_id"])})
    done = sum(1 for j in statuses.values() if j.get("status") == "done")
    print(f"training complete: {done}/{len(statuses)} jobs done, {failed} failed")
    return 1 if failed else 0


# ------------------------------------------------------------------- evaluate

def _checkpoint_path(models_dir: Path, backbone: str, structure: str, fold: int) -> Path:
    path = models_dir / f"{backbone}_{structure}_fold{fold}.ckpt.npz"
    if not path.exists():
        raise InvalidArgument(f"missing checkpoint for job {backbone}_{structure}_fold{fold}: {path}")
    return path


def _available_backbones(models_dir: Path) -> list[str]:
    found = []
    for backbone in BACKBONES:
        if list(models_dir.glob(f"{backbone}_*_fold0.ckpt.npz")):
            found.append(backbone)
    return found


def cmd_evaluate(args) -> int:
    import torch

    torch.set_num_threads(int(os.environ.get("PARKVOL_TORCH_THREADS", "1")))
    workdir = Path(args.workdir)
    manifest_path = workdir / args.cohort
    models_dir = workdir / args.models
    out_dir = workdir / args.out
    manifest = phantom.load_cohort_manifest(manifest_path)
    folds = FoldAssignment.from_dict(json.loads((models_dir / "folds.json").read_text()))

    backbones = args.backbones.split(",") if args.backbones else _available_backbones(models_dir)
    if not backbones:
        raise InvalidArgument(f"no checkpoints found under {models_dir}")

    features_by_method: dict[str, list[VolumeFeatures]] = {m: [] for m in backbones}
    features_by_method["reference"] = []
    dice_folds: dict[str, dict[str, list[list[float]]]] = {
        s: {b: [[] for _ in range(folds.k)] for b in backbones} for s in STRUCTURES
    }

    for fold in range(folds.k):
        test_ids = folds.test_ids(fold)
        subjects = _load_subjects(manifest_path, test_ids)
        for backbone in backbones:
            models = {
                s: load_checkpoint(_checkpoint_path(models_dir, backbone, s, fold))
                for s in STRUCTURES
            }
            for sub in subjects:
                masks = {
                    s: segment_structure(models[s], sub.volume, threshold=args.threshold)
                    for s in STRUCTURES
                }
                for s in STRUCTURES:
                    dice_folds[s][backbone][fold].append(
                        dice_score(masks[s], sub.reference_masks[s])
                    )
                features_by_method[backbone].append(
                    features_from_masks(sub.id, sub.condition.value, masks)
                )
        for sub in subjects:
            features_by_method["reference"].append(
                features_from_masks(sub.id, sub.condition.value, sub.reference_masks)
            )

    present = {e["condition"] for e in manifest["subjects"]}
    tasks = [t for t in DEFAULT_TASKS if t.positive <= present and t.negative <= present]
    if not tasks:
        raise InvalidArgument(f"no evaluable tasks for cohort conditions {sorted(present)}")
    report = run_task_matrix(features_by_method, tasks, folds)
    for s in STRUCTURES:
        report.dice[s] = {}
        for backbone in backbones:
            per_fold = [float(np.mean(v)) for v in dice_folds[s][backbone] if v]
            report.dice[s][backbone] = {
                "fold_values": per_fold,
                "mean": float(np.mean(per_fold)),
                "std": float(np.std(per_fold)),
            }
    report.run_config = {
        "command": "evaluate",
        "seed": manifest["seed"],
        "threshold": args.threshold,
        "cohort": str(manifest_path.relative_to(workdir)),
        "models": str(models_dir.relative_to(workdir)),
        "backbones": backbones,
        "methods": list(features_by_method),
    }

    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_json(out_dir / "report.json")
    report.write_dice_csv(out_dir / "dice_table.csv")
    report.write_single_feature_csv(out_dir / "auc_single_feature.csv")
    report.write_combined_csv(out_dir / "auc_combined.csv")
    _write_features_csv(out_dir / "features.csv", features_by_method)
    if args.plots:
        for task in report.tasks:
            slug = task.lower().replace(" ", "_").replace(".", "").replace("-", "")
            write_task_svg(report, task, out_dir / "plots" / f"auc_{slug}.svg")
    print(f"evaluation written to {out_dir}")
    return 0


def _write_features_csv(path: Path, features_by_method: dict[str, list[VolumeFeatures]]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "subject_id", "condition", *STRUCTURES])
        for method in sorted(features_by_method):
            for feats in sorted(features_by_method[method], key=lambda f: f.subject_id):
                writer.writerow(
                    [method, feats.subject_id, feats.condition]
                    + [f"{feats.volumes[s]:.6f}" for s in STRUCTURES]
                )


# ----------------------------------------------------------------------- bench

def cmd_bench(args) -> int:
    import torch

    # timing runs exclusively in this process; no worker pool
    torch.set_num_threads(int(os.environ.get("PARKVOL_TORCH_THREADS", "2")))
    workdir = Path(args.workdir)
    manifest_path = workdir / args.cohort
    models_dir = workdir / args.models
    out_dir = workdir / args.out
    manifest = phantom.load_cohort_manifest(manifest_path)

    backbones = args.backbones.split(",") if args.backbones else _available_backbones(models_dir)
    if not backbones:
        raise InvalidArgument(f"no checkpoints found under {models_dir}")
    entries = manifest["subjects"][: args.n_volumes]
    volumes = [load_nifti(manifest_path.parent / e["volume"]) for e in entries]

    reports = {}
    for backbone in backbones:
        models = {
            s: load_checkpoint(_checkpoint_path(models_dir, backbone, s, args.fold))
            for s in STRUCTURES
        }
        reports[backbone] = measure_segmentation_time(models, volumes, repeats=args.repeats,
                                                      backbone=backbone)
        print(reports[backbone].format_table())

    ratios = {}
    for a in backbones:
        for b in backbones:
            if a != b:
                ratios[f"{a}/{b}"] = reports[a].total["mean"] / reports[b].total["mean"]

    payload = {
        "format": "parkvol-bench-v1",
        "run_config": {
            "command": "bench",
            "seed": manifest["seed"],
            "repeats": args.repeats,
            "n_volumes": len(volumes),
            "fold": args.fold,
            "backbones": backbones,
        },
        "timings": {b: r.to_dict() for b, r in reports.items()},
        "total_ratios": ratios,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "bench.json", payload)
    with open(out_dir / "bench_history.jsonl", "a") as fh:
        fh.write(json.dumps(payload, sort_keys=True) + "\n")
    if ratios:
        print("total-time ratios:", json.dumps(ratios, sort_keys=True))
    return 0


# ------------------------------------------------------------------------ main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parkvol", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workdir", default=".", help="directory all paths are relative to")
    common.add_argument("--seed", type=int, default=7)
    common.add_argument("--preset", choices=list(PRESETS), default="desk")

    p = sub.add_parser("phantom-gen", parents=[common], help="generate a phantom cohort")
    p.add_argument("--sizes", required=True,
                   help="per-condition counts, e.g. normal=15,pd=15,psp=9,msac=9,msap=9")
    p.add_argument("--out", default="cohort")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser("train", parents=[common], help="train per-structure models over folds")
    p.add_argument("--cohort", default="cohort/manifest.json")
    p.add_argument("--out", default="models")
    p.add_argument("--backbone", choices=[*BACKBONES, "both"], default="cnn")
    p.add_argument("--structures", default=None, help="comma list; default all six")
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--epochs", type=int, default=None, help="override preset budget")
    p.add_argument("--iterations", type=int, default=None, help="override preset budget")
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--retrain", action="store_true", help="ignore completed-job cache")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="out-of-fold evaluation reports")
    p.add_argument("--cohort", default="cohort/manifest.json")
    p.add_argument("--models", default="models")
    p.add_argument("--out", default="reports")
    p.add_argument("--backbones", default=None, help="comma list; default: every trained backbone")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", parents=[common], help="segmentation timing per backbone")
    p.add_argument("--cohort", default="cohort/manifest.json")
    p.add_argument("--models", default="models")
    p.add_argument("--out", default="bench")
    p.add_argument("--backbones", default=None)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--n-volumes", type=int, default=2)
    p.add_argument("--fold", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParkvolError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
