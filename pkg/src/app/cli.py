"""
COMMAND LINE - phantom generation, training, inference, evaluation, inspection
==============================================================================

Usage:
    python -m src.app.cli phantom-gen --count 10 --out-dir data/phantoms --seed 1
    python -m src.app.cli train --objective loc --data data/phantoms --out artifacts
    python -m src.app.cli infer --image case.mha --loc-model artifacts/loc.scnw \
        --seg-model artifacts/seg.scnw --out pred.mha --stats pred_stats.tsv
    python -m src.app.cli eval --pred-dir preds --gt-dir data/phantoms --out report
    python -m src.app.cli inspect --arch seg --dims 32x32x32 --compare-paper

Exit codes: 0 success, 2 usage error, 1 runtime error.
"""

import argparse
import glob
import os
import sys
import time
from typing import List, Optional, Sequence

import mlflow
import pandas as pd
from joblib import Parallel, delayed

from src.data.load_data import MANIFEST_NAME, kfold_splits, load_data, load_dataset, load_manifest, save_case, write_manifest
from src.data.metaimage import read_metaimage, write_metaimage
from src.data.phantom import PhantomSpec, generate_phantom
from src.engine.rng import PHANTOM_STREAM, make_rng
from src.features.build_features import OBJECTIVES
from src.models.accounting import compare_with_published, count_flops, count_parameters, flops_by_op
from src.models.checkpoint import load_weights
from src.models.evaluate import NSD_TOLERANCE_MM, ORGANS, evaluate
from src.models.memory import plan_memory
from src.models.train import train_model
from src.serving.inference import HEADS, find_model, infer
from src.utils.config import Config, ConfigError, load_config
from src.utils.validate_data import validate_label_volume, validate_manifest, validate_volume

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    """Arguments that parse but cannot be used."""


def parse_dims(text: str) -> tuple:
    """'ZxYxX' -> (Z, Y, X)."""
    parts = text.lower().replace(",", "x").split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise UsageError(f"Invalid dims {text!r}; expected ZxYxX") from None
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise UsageError(f"Invalid dims {text!r}; expected three positive sizes ZxYxX")
    return dims


# =============================================================================
# PHANTOM-GEN
# =============================================================================

def _write_phantom(out_dir: str, name: str, spec: PhantomSpec, seed: int, index: int) -> str:
    image, labels = generate_phantom(spec, make_rng(seed, PHANTOM_STREAM, index))
    save_case(out_dir, name, image, labels)
    return name


def cmd_phantom_gen(args: argparse.Namespace) -> int:
    if args.count < 0:
        raise UsageError(f"--count must be >= 0, got {args.count}")
    cfg = load_config(args.config, {"seed": args.seed, "phantom_distractors": args.distractors})
    spec = cfg.phantom_spec()

    os.makedirs(args.out_dir, exist_ok=True)
    names = [f"{i:03d}" for i in range(args.count)]
    Parallel(n_jobs=args.jobs)(
        delayed(_write_phantom)(args.out_dir, name, spec, cfg.seed, i) for i, name in enumerate(names)
    )
    manifest = write_manifest(args.out_dir, names)
    print(f"✅ {len(names)} phantoms written to {args.out_dir} (seed {cfg.seed}, {spec.distractors} distractors)")
    print(f"✅ Manifest saved to {manifest}")
    return EXIT_OK


# =============================================================================
# TRAIN
# =============================================================================

def _network(cfg: Config, objective: str):
    return cfg.loc_network() if objective == "loc" else cfg.seg_network()


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, {"seed": args.seed, "iterations": args.iterations})
    if not os.path.exists(args.data):
        raise FileNotFoundError(f"File not found: {args.data}")

    manifest = os.path.join(args.data, MANIFEST_NAME) if os.path.isdir(args.data) else args.data
    validate_manifest(load_data(manifest), os.path.dirname(os.path.abspath(manifest)), raise_on_fail=True)
    cases = load_manifest(manifest)
    if args.folds:
        if not 0 <= args.fold < args.folds:
            raise UsageError(f"--fold must be in [0, {args.folds}), got {args.fold}")
        train_idx, held_out = kfold_splits(len(cases), args.folds, cfg.seed)[args.fold]
        cases = [cases[i] for i in train_idx]
        print(f"✅ Fold {args.fold}/{args.folds}: {len(cases)} training cases, {len(held_out)} held out")

    dataset = load_dataset(cases)
    for case, (image, labels) in zip(cases, dataset):
        validate_volume(image, raise_on_fail=True)
        validate_label_volume(labels, max_label=cfg.labels - 1, reference=image, raise_on_fail=True)
    print(f"✅ {len(dataset)} cases loaded and validated from {args.data}")

    os.makedirs(args.out, exist_ok=True)
    checkpoint = os.path.join(args.out, f"{args.objective}.scnw")
    log_path = os.path.join(args.out, f"{args.objective}_loss.tsv")
    open(log_path, "w").close()

    net = _network(cfg, args.objective)
    train_cfg = cfg.train_config()

    start = time.perf_counter()
    if args.mlflow:
        mlflow.set_tracking_uri(f"file://{os.path.abspath(os.path.join(args.out, 'mlruns'))}")
        mlflow.set_experiment("Organ Segmentation Training")
        with mlflow.start_run(run_name=f"train_{args.objective}"):
            mlflow.log_params(cfg.model_dump())
            result = train_model(dataset, net, train_cfg, args.objective, log_path, checkpoint, args.progress)
            mlflow.log_artifact(log_path)
    else:
        result = train_model(dataset, net, train_cfg, args.objective, log_path, checkpoint, args.progress)

    final = result.history[-1]
    print(f"✅ {train_cfg.iterations} iterations in {time.perf_counter() - start:.1f}s; final loss {final.total:.6f}")
    print(f"✅ Checkpoint saved to {checkpoint}")
    print(f"✅ Loss log saved to {log_path}")
    return EXIT_OK


# =============================================================================
# INFER
# =============================================================================

def write_stats(path: str, rows: Sequence[tuple]) -> None:
    """Tab-separated key/value lines."""
    pd.DataFrame(list(rows), columns=["key", "value"]).to_csv(path, sep="\t", index=False, header=False)


def cmd_infer(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    image = read_metaimage(args.image)
    validate_volume(image, raise_on_fail=True)

    loc_net = load_weights(cfg.loc_network(), find_model("loc", args.loc_model or cfg.loc_model or None))
    seg_net = load_weights(cfg.seg_network(), find_model("seg", args.seg_model or cfg.seg_model or None))

    labels, stats = infer(
        image, loc_net, seg_net,
        loc_bounds=cfg.localization_bounds(), seg_bounds=cfg.segmentation_bounds(),
        sigma=cfg.smoothing_sigma, pad_voxels=cfg.roi_pad_voxels, head=args.head,
    )
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_metaimage(labels, args.out)
    print(f"✅ Labels saved to {args.out} ({stats.total_seconds:.2f}s, {stats.total_flops} FLOPs)")

    if args.stats:
        write_stats(args.stats, stats.as_rows())
        print(f"✅ Stats saved to {args.stats}")
    return EXIT_OK


# =============================================================================
# EVAL
# =============================================================================

def _case_name(filename: str, pattern: str) -> str:
    prefix, _, suffix = pattern.partition("*")
    stem = filename[len(prefix):] if prefix and filename.startswith(prefix) else filename
    return stem[: -len(suffix)] if suffix and stem.endswith(suffix) else stem


def cmd_eval(args: argparse.Namespace) -> int:
    for directory in (args.pred_dir, args.gt_dir):
        if not os.path.isdir(directory):
            raise FileNotFoundError(f"File not found: {directory}")

    gt_paths = sorted(glob.glob(os.path.join(args.gt_dir, args.pattern)))
    if not gt_paths:
        raise FileNotFoundError(f"No ground-truth files matching {args.pattern} in {args.gt_dir}")

    names = [_case_name(os.path.basename(p), args.pattern) for p in gt_paths]
    pred_paths = [os.path.join(args.pred_dir, os.path.basename(p)) for p in gt_paths]
    missing = [name for name, p in zip(names, pred_paths) if not os.path.exists(p)]
    if missing:
        raise FileNotFoundError(f"Missing predictions for cases: {missing}")

    max_label = max(value for values in ORGANS.values() for value in values)
    cases = []
    for name, gt_path, pred_path in zip(names, gt_paths, pred_paths):
        gt, pred = read_metaimage(gt_path, as_label=True), read_metaimage(pred_path, as_label=True)
        checks = (
            (gt_path, validate_label_volume(gt, max_label)),
            (pred_path, validate_label_volume(pred, max_label, reference=gt)),
        )
        for subject, report in checks:
            if not report["success"]:
                failed = [t["test"] for t in report["failed_tests"]]
                raise ValueError(f"Case {name}: {subject} failed validation {failed}")
        cases.append((gt, pred))
    report = evaluate(cases, names=names, tau_mm=args.tau, n_jobs=args.jobs)
    paths = report.write(args.out)

    print(report.to_text(), end="")
    print(f"✅ {len(cases)} cases evaluated; reports saved to {paths['cases']}, {paths['summary']}, {paths['text']}")
    return EXIT_OK


# =============================================================================
# INSPECT
# =============================================================================

def _format_number(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return f"{value:,}"


def cmd_inspect(args: argparse.Namespace) -> int:
    dims = parse_dims(args.dims)
    cfg = load_config(args.config)
    net = _network(cfg, args.arch)
    if any(d % net.divisor for d in dims):
        raise UsageError(f"--dims {args.dims} must be divisible by {net.divisor} for the {args.arch} network")

    plan = plan_memory(net, dims)
    print(f"arch\t{args.arch}")
    print(f"dims (z, y, x)\t{'x'.join(str(d) for d in dims)}")
    print(f"parameters\t{count_parameters(net):,}")
    print(f"flops\t{count_flops(net, dims):,}")
    for op, flops in flops_by_op(net, dims).items():
        if flops:
            print(f"  flops[{op}]\t{flops:,}")
    print(f"arena peak bytes\t{plan.peak_bytes:,}")
    print(f"arena naive bytes\t{plan.naive_bytes:,}")
    print(f"arena savings\t{100.0 * plan.savings:.1f}%")

    if args.compare_paper:
        print("\nquantity\tcomputed\tpublished\tdelta %")
        for row in compare_with_published(args.arch, net, dims):
            delta = "-" if row["delta_percent"] is None else f"{row['delta_percent']:+.2f}"
            print(f"{row['quantity']}\t{_format_number(row['computed'])}\t{_format_number(row['published'])}\t{delta}")
    return EXIT_OK


# =============================================================================
# ARGUMENTS
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segment", description="Two-stage multi-organ segmentation on CPU.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom-gen", help="Write synthetic phantom cases and a manifest.")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--distractors", type=int, help="Distractor blobs per phantom (overrides phantom_distractors).")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(handler=cmd_phantom_gen)

    p = sub.add_parser("train", help="Train the localization U-Net or the SCN.")
    p.add_argument("--objective", choices=OBJECTIVES, required=True)
    p.add_argument("--data", required=True, help="Manifest CSV or a directory holding manifest.csv.")
    p.add_argument("--out", required=True, help="Directory for <objective>.scnw and <objective>_loss.tsv.")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--folds", type=int, default=0, help="Train on the training part of a k-fold split.")
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--mlflow", action="store_true", help="Track the run with mlflow under <out>/mlruns.")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("infer", help="Segment one image.")
    p.add_argument("--image", required=True)
    p.add_argument("--loc-model")
    p.add_argument("--seg-model")
    p.add_argument("--out", required=True)
    p.add_argument("--stats")
    p.add_argument("--head", choices=HEADS, default="final")
    p.add_argument("--config")
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("eval", help="Score predicted label files against ground truth.")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--out", default="eval_report")
    p.add_argument("--pattern", default="label_*.mha")
    p.add_argument("--tau", type=float, default=NSD_TOLERANCE_MM, help="NSD tolerance in mm.")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("inspect", help="Parameter, FLOP and memory accounting.")
    p.add_argument("--arch", choices=OBJECTIVES, required=True)
    p.add_argument("--dims", required=True, help="Input size ZxYxX.")
    p.add_argument("--compare-paper", action="store_true", help="Compare with the published counts.")
    p.add_argument("--config")
    p.set_defaults(handler=cmd_inspect)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        return args.handler(args)
    except (UsageError, ConfigError) as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"❌ {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
