#!/usr/bin/env python3
"""
Multi-Organ Segmentation - Desk-Scale End-to-End Experiment

Phantoms with distractor blobs -> train/held-out split -> localization U-Net
-> SCN -> inference on held-out cases with the final and the local head ->
DSC / NSD / spurious-component comparison, all tracked in mlflow.

Usage:
    python scripts/run_pipeline.py [config file]
"""

import os
import sys
import time

import mlflow
import numpy as np
from sklearn.model_selection import train_test_split

# Add project root to path for imports
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.data import generate_phantom, load_manifest, load_dataset, save_case, write_manifest
from src.engine.rng import PHANTOM_STREAM, make_rng
from src.features import pad_roi
from src.models import count_flops, count_parameters, evaluate, train_model
from src.serving import RunStats, localize, segment
from src.utils import load_config, validate_label_volume, validate_volume

# === Configuration ===
PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
DATA_DIR = os.path.join(PROJECT_ROOT, "data", "phantoms")
ARTIFACTS_DIR = os.path.join(PROJECT_ROOT, "artifacts")
PREDICTIONS_DIR = os.path.join(ARTIFACTS_DIR, "predictions")
MLFLOW_URI = f"file://{PROJECT_ROOT}/mlruns"
DEFAULT_CONFIG = os.path.join(PROJECT_ROOT, "configs", "desk_scale.cfg")

N_CASES = 80
N_HELD_OUT = 16
TARGET_DSC = 0.85

os.makedirs(DATA_DIR, exist_ok=True)
os.makedirs(PREDICTIONS_DIR, exist_ok=True)


def banner(title: str, first: bool = False):
    print(("" if first else "\n") + "=" * 60)
    print(title)
    print("=" * 60)


def main(config_path: str = DEFAULT_CONFIG):
    cfg = load_config(config_path)
    mlflow.set_tracking_uri(MLFLOW_URI)
    mlflow.set_experiment("Multi-Organ Segmentation Pipeline")

    with mlflow.start_run(run_name="desk_scale"):
        mlflow.log_params(cfg.model_dump())
        mlflow.log_param("n_cases", N_CASES)
        mlflow.log_param("n_held_out", N_HELD_OUT)

        # =========================================================================
        # STAGE 1: PHANTOM GENERATION & VALIDATION
        # =========================================================================
        banner("STAGE 1: PHANTOM GENERATION & VALIDATION", first=True)

        t0 = time.time()
        spec = cfg.phantom_spec()
        names = [f"{i:03d}" for i in range(N_CASES)]
        for i, name in enumerate(names):
            image, labels = generate_phantom(spec, make_rng(cfg.seed, PHANTOM_STREAM, i))
            image_val = validate_volume(image)
            label_val = validate_label_volume(labels, max_label=cfg.labels - 1, reference=image)
            if not (image_val['success'] and label_val['success']):
                raise ValueError(f"Phantom {name} validation failed.")
            save_case(DATA_DIR, name, image, labels)
        write_manifest(DATA_DIR, names)
        print(f"✅ {N_CASES} phantoms written to {DATA_DIR} ({spec.distractors} distractors each)")
        mlflow.log_metric("phantom_time", time.time() - t0)

        # =========================================================================
        # STAGE 2: TRAIN / HELD-OUT SPLIT
        # =========================================================================
        banner("STAGE 2: TRAIN / HELD-OUT SPLIT")

        cases = load_manifest(DATA_DIR)
        train_cases, held_out_cases = train_test_split(cases, test_size=N_HELD_OUT, random_state=cfg.seed)
        train_set = load_dataset(train_cases)
        print(f"✅ {len(train_cases)} training cases, {len(held_out_cases)} held out")

        # =========================================================================
        # STAGE 3: LOCALIZATION TRAINING
        # =========================================================================
        t1 = time.time()
        banner("STAGE 3: LOCALIZATION TRAINING")

        loc_net = cfg.loc_network()
        print(f"✅ Localization U-Net: {count_parameters(loc_net):,} parameters")
        loc_log = os.path.join(ARTIFACTS_DIR, "loc_loss.tsv")
        open(loc_log, "w").close()
        loc_result = train_model(
            train_set, loc_net, cfg.train_config(), "loc",
            log_path=loc_log, checkpoint_path=os.path.join(ARTIFACTS_DIR, "loc.scnw"), progress=True,
        )
        loc_net = loc_result.ema_network()
        print(f"✅ Localization trained; final loss {loc_result.history[-1].total:.4f}")
        mlflow.log_metric("loc_train_time", time.time() - t1)
        mlflow.log_artifact(loc_log)

        # =========================================================================
        # STAGE 4: SCN TRAINING
        # =========================================================================
        t2 = time.time()
        banner("STAGE 4: SCN TRAINING")

        seg_net = cfg.seg_network()
        print(f"✅ SCN: {count_parameters(seg_net):,} parameters, "
              f"{count_flops(seg_net, (32, 32, 32)):,} FLOPs at 32^3")
        seg_log = os.path.join(ARTIFACTS_DIR, "seg_loss.tsv")
        open(seg_log, "w").close()
        seg_result = train_model(
            train_set, seg_net, cfg.train_config(), "seg",
            log_path=seg_log, checkpoint_path=os.path.join(ARTIFACTS_DIR, "seg.scnw"), progress=True,
        )
        seg_net = seg_result.ema_network()
        print(f"✅ SCN trained; final loss {seg_result.history[-1].total:.4f}")
        mlflow.log_metric("seg_train_time", time.time() - t2)
        mlflow.log_artifact(seg_log)

        # =========================================================================
        # STAGE 5: HELD-OUT INFERENCE (final and local head)
        # =========================================================================
        t3 = time.time()
        banner("STAGE 5: HELD-OUT INFERENCE")

        pairs = {"final": [], "local": []}
        seconds, peak = [], 0
        for case in held_out_cases:
            image, gt = case.load()
            stats = RunStats()
            start = time.perf_counter()
            roi = localize(image, loc_net, cfg.localization_bounds(), cfg.smoothing_sigma, stats)
            padded = pad_roi(roi, "inference", pad_voxels=cfg.roi_pad_voxels,
                             pad_spacing=cfg.segmentation_bounds().base_spacing)
            for head in pairs:
                pred = segment(image, padded, seg_net, cfg.segmentation_bounds(), head, stats)
                pairs[head].append((gt, pred))
                if head == "final":
                    save_case(PREDICTIONS_DIR, case.name, image, pred)
            seconds.append(time.perf_counter() - start)
            peak = max(peak, stats.peak_arena_bytes)
        print(f"✅ {len(held_out_cases)} cases segmented; mean {np.mean(seconds):.2f}s per case (both heads)")
        mlflow.log_metric("inference_time", time.time() - t3)
        mlflow.log_metric("peak_arena_bytes", peak)

        # =========================================================================
        # STAGE 6: EVALUATION
        # =========================================================================
        banner("STAGE 6: EVALUATION")

        names = [case.name for case in held_out_cases]
        reports = {}
        for head, head_pairs in pairs.items():
            report = evaluate(head_pairs, names=names, runtime_seconds=float(np.mean(seconds)), peak_arena_bytes=peak)
            paths = report.write(os.path.join(ARTIFACTS_DIR, f"eval_{head}"))
            mlflow.log_artifact(paths["text"])
            for _, row in report.summary.iterrows():
                mlflow.log_metric(f"{head}_dsc_{row['organ']}", row["dsc_mean"])
                mlflow.log_metric(f"{head}_nsd_{row['organ']}", row["nsd_mean"])
                mlflow.log_metric(f"{head}_spurious_{row['organ']}", row["spurious_mean"])
            reports[head] = report
            print(f"--- {head} head ---")
            print(report.to_text(), end="")

        mean_dsc = reports["final"].summary["dsc_mean"].mean() / 100.0
        spurious = {head: reports[head].cases["spurious"].mean() for head in reports}
        mlflow.log_metric("mean_dsc", mean_dsc)
        mlflow.log_metric("spurious_final", spurious["final"])
        mlflow.log_metric("spurious_local", spurious["local"])

        # =========================================================================
        # STAGE 7: LOGGING MODELS FOR INFERENCE
        # =========================================================================
        banner("STAGE 7: LOGGING MODELS FOR INFERENCE")

        for name in ("loc", "seg"):
            path = os.path.join(ARTIFACTS_DIR, f"{name}.scnw")
            mlflow.log_artifact(path)
            print(f"✅ {name} checkpoint (raw and EMA weights) logged from {path}")

        # =========================================================================
        # COMPLETE
        # =========================================================================
        banner("✅ PIPELINE COMPLETE")
        status = "✅" if mean_dsc >= TARGET_DSC else "❌"
        print(f"{status} Mean DSC (final head): {mean_dsc:.4f} (target {TARGET_DSC})")
        status = "✅" if spurious["final"] <= spurious["local"] else "❌"
        print(f"{status} Spurious components per organ: final {spurious['final']:.3f}, local {spurious['local']:.3f}")
        print(f"\n📝 Next steps:")
        print(f"  1. Run: python -m src.app.cli infer --image <case.mha> --out <pred.mha> --stats <stats.tsv>")
        print(f"  2. View MLflow: mlflow ui")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else DEFAULT_CONFIG)
