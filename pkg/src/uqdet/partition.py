"""TP / FP_ML / FP_BG partitioning against ground truth and F1 thresholds.

Detections are matched greedily in descending score order.  A detection
becomes a true positive when its best same-class unmatched ground-truth
overlap reaches the TP IoU threshold (consuming that object); otherwise it
is a mislocalized false positive when it still overlaps a same-class object
at IoU >= 0.1 (matched or not, nothing consumed), and a background false
positive when it overlaps nothing of its class.  Ground truth left unmatched
counts as false negatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ValidationError
from .geometry import iou_matrix

# Overlap floor separating mislocalized from background false positives.
FP_ML_MIN_IOU = 0.1

# tp_iou at or below the FP floor would make the FP_ML band empty.
MIN_TP_IOU = 0.1

KIND_TP = "tp"
KIND_FP_ML = "fp_ml"
KIND_FP_BG = "fp_bg"


class Outcome(NamedTuple):
    """Match outcome for one detection (indices into the caller's lists)."""

    det_index: int
    kind: str
    gt_index: int | None
    iou: float


def greedy_outcomes(
    order: Sequence[int],
    det_classes: np.ndarray,
    gt_classes: np.ndarray,
    iou: np.ndarray,
    tp_iou: float,
    class_aware_fp_ml: bool = True,
) -> list[Outcome]:
    """Core greedy matcher over pre-sorted detection indices.

    ``order`` lists detection indices in descending score.  Because ground
    truth is only consumed by same-class TP matches, running this on a
    single class's detections gives the same outcomes as running it on the
    full set, which the threshold sweeps exploit.
    """
    if tp_iou <= MIN_TP_IOU:
        raise ValidationError(f"tp_iou must exceed {MIN_TP_IOU}, got {tp_iou}")
    n_gt = len(gt_classes)
    matched = np.zeros(n_gt, dtype=bool)
    outcomes: list[Outcome] = []
    for i in order:
        row = iou[i]
        same = gt_classes == det_classes[i]
        cand = same & ~matched
        if cand.any():
            j = int(np.argmax(np.where(cand, row, -1.0)))
            if row[j] >= tp_iou:
                matched[j] = True
                outcomes.append(Outcome(i, KIND_TP, j, float(row[j])))
                continue
        pool = same if class_aware_fp_ml else np.ones(n_gt, dtype=bool)
        if pool.any():
            j = int(np.argmax(np.where(pool, row, -1.0)))
            if row[j] >= FP_ML_MIN_IOU:
                outcomes.append(Outcome(i, KIND_FP_ML, j, float(row[j])))
                continue
        best = float(row.max()) if n_gt else 0.0
        outcomes.append(Outcome(i, KIND_FP_BG, None, best))
    return outcomes


@dataclass
class PartitionResult:
    """Partitioned detections for one frame at one operating point.

    ``tp`` and ``fp_ml`` hold (detection, ground-truth object, iou) triples;
    ``fp_bg`` holds bare detections (they overlap nothing of their class).
    """

    tp: list
    fp_ml: list
    fp_bg: list
    fn_count: int
    num_gt: int

    @property
    def counts(self) -> dict[str, int]:
        return {
            "tp": len(self.tp),
            "fp_ml": len(self.fp_ml),
            "fp_bg": len(self.fp_bg),
            "fn": self.fn_count,
        }


def _det_class(det) -> int:
    return det.cls.argmax


def match_partitions(
    detections: Sequence,
    ground_truth: Sequence,
    tp_iou: float,
    score_threshold: float = 0.0,
    *,
    class_aware_fp_ml: bool = True,
    iou_mode: str = "3d",
    iou: np.ndarray | None = None,
) -> PartitionResult:
    """Partition one frame's detections against its ground truth.

    Detections below ``score_threshold`` are ignored entirely.  ``iou`` may
    supply a precomputed matrix over the full detection list (rows) and
    ground truth (columns).  Every surviving detection lands in exactly one
    of tp / fp_ml / fp_bg.
    """
    kept = [i for i, d in enumerate(detections) if d.score >= score_threshold]
    det_classes = np.array([_det_class(detections[i]) for i in kept], dtype=int)
    gt_classes = np.array([g.class_id for g in ground_truth], dtype=int)
    if iou is None:
        sub = iou_matrix([detections[i].box for i in kept], [g.box for g in ground_truth], iou_mode)
    else:
        iou = np.asarray(iou, dtype=float)
        if iou.shape != (len(detections), len(ground_truth)):
            raise ValidationError(
                f"iou matrix shape {iou.shape} does not match "
                f"({len(detections)}, {len(ground_truth)})"
            )
        sub = iou[kept, :]
    order = sorted(range(len(kept)), key=lambda r: (-detections[kept[r]].score, kept[r]))
    outcomes = greedy_outcomes(order, det_classes, gt_classes, sub, tp_iou, class_aware_fp_ml)
    result = PartitionResult(tp=[], fp_ml=[], fp_bg=[], fn_count=0, num_gt=len(ground_truth))
    for out in outcomes:
        det = detections[kept[out.det_index]]
        if out.kind == KIND_TP:
            result.tp.append((det, ground_truth[out.gt_index], out.iou))
        elif out.kind == KIND_FP_ML:
            result.fp_ml.append((det, ground_truth[out.gt_index], out.iou))
        else:
            result.fp_bg.append(det)
    result.fn_count = len(ground_truth) - len(result.tp)
    return result


class F1Threshold(NamedTuple):
    """Best operating score threshold for a detection set."""

    threshold: float
    f1: float
    no_detections: bool


def f1_from_scored(scores: np.ndarray, is_tp: np.ndarray, total_gt: int) -> F1Threshold:
    """Scan candidate thresholds given per-detection (score, is-TP) pairs.

    Candidates are the distinct detection scores; keeping all detections
    with score >= candidate, F1 = 2 TP / (2 TP + FP + FN).  Ties go to the
    higher threshold.  With no detections at all the threshold is +inf
    (nothing can be kept) and the caller should surface a warning.
    """
    if total_gt < 1:
        raise ValidationError("f1 threshold search requires at least one ground-truth object")
    scores = np.asarray(scores, dtype=float)
    is_tp = np.asarray(is_tp, dtype=bool)
    if scores.size == 0:
        return F1Threshold(threshold=math.inf, f1=0.0, no_detections=True)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    tp_cum = np.cumsum(is_tp[order])
    det_cum = np.arange(1, s.size + 1)
    # Cut after the last detection of each distinct score.
    last = np.nonzero(np.append(s[1:] != s[:-1], True))[0]
    best_f1 = -1.0
    best_threshold = math.inf
    for e in last:
        tp = int(tp_cum[e])
        fp = int(det_cum[e]) - tp
        fn = total_gt - tp
        f1 = 2.0 * tp / (2.0 * tp + fp + fn) if tp else 0.0
        if f1 > best_f1:
            best_f1 = f1
            best_threshold = float(s[e])
    return F1Threshold(threshold=best_threshold, f1=best_f1, no_detections=False)


def f1_score_threshold(
    frame_pairs: Sequence[tuple[Sequence, Sequence]],
    tp_iou: float,
    *,
    class_aware_fp_ml: bool = True,
    iou_mode: str = "3d",
) -> F1Threshold:
    """Find the score threshold maximizing F1 over (detections, ground truth) frames.

    Matching runs unthresholded per frame; the greedy outcome of a detection
    depends only on higher-scoring detections, so every candidate threshold
    reuses the same matches.
    """
    scores: list[float] = []
    tps: list[bool] = []
    total_gt = 0
    for dets, gts in frame_pairs:
        total_gt += len(gts)
        if not len(dets):
            continue
        det_classes = np.array([_det_class(d) for d in dets], dtype=int)
        gt_classes = np.array([g.class_id for g in gts], dtype=int)
        iou = iou_matrix([d.box for d in dets], [g.box for g in gts], iou_mode)
        order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
        outcomes = greedy_outcomes(order, det_classes, gt_classes, iou, tp_iou, class_aware_fp_ml)
        for out in outcomes:
            scores.append(dets[out.det_index].score)
            tps.append(out.kind == KIND_TP)
    return f1_from_scored(np.array(scores), np.array(tps), total_gt)
