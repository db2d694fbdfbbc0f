"""End-to-end orchestration: ingestion, fusion, evaluation, report assembly.

Frames are the unit of parallelism for fusion; every aggregate in the
report is an order-independent reduction, so parallel and sequential runs
produce byte-identical output.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from typing import Mapping, Sequence

from .config import PipelineConfig
from .detmodel import EvalReport, Frame, parse_frames, parse_ground_truth, write_report
from .errors import ValidationError
from .fusion import FusedDetection, fuse_frame, parse_fused, write_fused
from .metrics import SweepResult, evaluate_sweep
from .synth import SynthConfig, SynthResult, generate, write_outputs

SCHEMA_VERSION = 1


def _fuse_one(args) -> list[FusedDetection]:
    frame, nms_iou, cluster_iou, min_size, metric = args
    return fuse_frame(frame, nms_iou, cluster_iou, min_size, metric)


def fuse_frames(
    frames: Sequence[Frame], config: PipelineConfig, workers: int = 1
) -> list[tuple[str, list[FusedDetection]]]:
    """Fuse every frame, optionally across a process pool.

    Output order follows input order regardless of worker count.
    """
    if workers < 1:
        raise ValidationError(f"workers must be >= 1, got {workers}")
    args = [
        (
            frame,
            config.nms_iou,
            config.cluster_iou,
            config.effective_min_cluster_size,
            config.cluster_metric,
        )
        for frame in frames
    ]
    if workers == 1 or len(frames) < 2:
        fused = [_fuse_one(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunk = max(1, len(args) // (workers * 4))
            fused = list(pool.map(_fuse_one, args, chunksize=chunk))
    return [(frame.frame_id, dets) for frame, dets in zip(frames, fused)]


def run_fuse(dets_path: str, out_path: str, config: PipelineConfig, workers: int = 1) -> int:
    """CLI body for `uqdet fuse`; returns the frame count."""
    frames = parse_frames(dets_path, num_heads=config.heads, num_classes=config.classes)
    fused = fuse_frames(frames, config, workers)
    write_fused(fused, out_path)
    return len(frames)


def _clean(value):
    """Report-friendly scalar: non-finite floats become null."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def build_report(sweep: SweepResult, config: PipelineConfig) -> EvalReport:
    """Assemble the report dict from a sweep result.

    Headline keys carry the sweep averages; ``per_threshold`` keeps the full
    breakdown.  ``splits`` records which half of the data each headline
    number was computed on.
    """
    per_threshold = []
    for tr in sweep.thresholds:
        per_threshold.append(
            {
                "iou_threshold": tr.iou_threshold,
                "f1_thresholds": {str(k): _clean(v) for k, v in tr.f1_thresholds.items()},
                "f1": {str(k): _clean(v) for k, v in tr.f1_values.items()},
                "temperatures": {
                    str(k): {
                        "temperature": fit.temperature,
                        "fitted": fit.fitted,
                        "samples": fit.samples,
                    }
                    for k, fit in tr.temperatures.items()
                },
                "partitions_full": tr.partitions_full,
                "partitions_eval": tr.partitions_eval,
                "scores": tr.scores,
                "mce_cls": tr.mce_cls,
                "ce_reg": tr.ce_reg,
                "mce_bin_counts": tr.mce_bin_counts,
                "ap_per_class": {str(k): v for k, v in tr.ap_per_class.items()},
                "map": tr.map,
            }
        )
    config_echo = {k: _clean(v) if isinstance(v, float) else v for k, v in config.to_mapping().items()}
    data = {
        "schema_version": SCHEMA_VERSION,
        "config": config_echo,
        "frames": {
            "total": sweep.num_frames,
            "recal": sweep.num_recal,
            "eval": sweep.num_eval,
        },
        "splits": {
            "map": "full",
            "partitions": "full",
            "scores": "eval",
            "calibration": "eval",
        },
        "map": sweep.map,
        "map_per_class": {str(k): v for k, v in sweep.map_per_class.items()},
        "partitions": sweep.headline_partitions,
        "scores": sweep.scores,
        "mce_cls": sweep.mce_cls,
        "ce_reg": sweep.ce_reg,
        "per_threshold": per_threshold,
        "warnings": sweep.warnings,
    }
    return EvalReport(data)


def write_calibration(sweep: SweepResult, config: PipelineConfig, sink) -> None:
    """Write the fitted (iou_threshold, class) calibration records as JSON."""
    records = []
    for tr in sweep.thresholds:
        for k in sorted(tr.temperatures):
            records.append(
                {
                    "iou_threshold": tr.iou_threshold,
                    "class_id": k,
                    "score_threshold": _clean(tr.f1_thresholds[k]),
                    "temperature": tr.temperatures[k].temperature,
                }
            )
    text = json.dumps(records, sort_keys=True, indent=2) + "\n"
    if isinstance(sink, (str, bytes)):
        with open(sink, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sink.write(text)


def run_evaluate(
    fused_path,
    gt_path,
    config: PipelineConfig,
    out_path: str | None = None,
    calibration_out: str | None = None,
    *,
    recal_ids: Sequence[str] | None = None,
    eval_ids: Sequence[str] | None = None,
) -> EvalReport:
    """CLI body for `uqdet evaluate`.

    ``fused_path`` may also be in-memory (frame_id, detections) pairs and
    ``gt_path`` an in-memory mapping, which the staged-vs-composed pipeline
    tests rely on.
    """
    if isinstance(fused_path, (str, bytes)):
        fused = parse_fused(fused_path, num_classes=config.classes)
    else:
        fused = list(fused_path)
    if isinstance(gt_path, (str, bytes)) or hasattr(gt_path, "read"):
        gt: Mapping = parse_ground_truth(gt_path, num_classes=config.classes)
    else:
        gt = gt_path
    sweep = evaluate_sweep(fused, gt, config, recal_ids=recal_ids, eval_ids=eval_ids)
    report = build_report(sweep, config)
    if out_path is not None:
        write_report(report, out_path)
    if calibration_out is not None:
        write_calibration(sweep, config, calibration_out)
    return report


def run_synth(cfg: SynthConfig, out_dir: str) -> dict[str, str]:
    """CLI body for `uqdet synth`; returns the written file paths."""
    result: SynthResult = generate(cfg)
    return write_outputs(result, out_dir)


def run_losses_check(samples: int = 1000, seed: int = 20240917) -> tuple[dict, bool]:
    """CLI body for `uqdet losses-check`; returns (report, all_passed)."""
    from .losses import gradient_check_report

    report = gradient_check_report(samples=samples, seed=seed)
    return report, bool(report["max_rel_error"] < 1e-4)
