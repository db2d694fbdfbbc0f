"""Scoring rules, information measures, calibration errors, AP40, and the
IoU-threshold evaluation sweep.

Per-detection scores are pure functions; the sweep ties them together with
the recalibration/evaluation split: per IoU threshold it fits per-class F1
score thresholds and temperatures on the recal half, applies both to the
eval half, partitions, and scores each partition.  mAP and partition counts
are computed on the full frame set (no score threshold) so they do not
depend on the split.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .calibrate import MIN_FIT_SAMPLES, TemperatureFit, apply_temperature, fit_temperature
from .config import PipelineConfig, split_frame_ids
from .detmodel import ClassDistribution
from .errors import NumericalError, ValidationError
from .geometry import iou_matrix, wrap_residual
from .partition import KIND_FP_BG, KIND_FP_ML, KIND_TP, Outcome, f1_from_scored, greedy_outcomes

NLL_PROB_FLOOR = 1e-12

YAW_INDEX = 6

PARTITIONS = (KIND_TP, KIND_FP_ML, KIND_FP_BG)
SCORE_NAMES = ("nll_cls", "brier", "nll_reg", "energy", "se", "mi")


def _probs_of(dist) -> np.ndarray:
    if isinstance(dist, ClassDistribution):
        return dist.probs
    p = np.asarray(dist, dtype=float).reshape(-1)
    if p.size < 1 or not np.all(np.isfinite(p)) or np.any(p < 0.0):
        raise ValidationError(f"invalid probability vector: {p!r}")
    return p


def _check_label(label, num_classes: int) -> int:
    if not isinstance(label, (int, np.integer)) or isinstance(label, bool):
        raise ValidationError(f"label must be an integer, got {label!r}")
    label = int(label)
    if not (0 <= label < num_classes):
        raise ValidationError(f"label {label} outside [0, {num_classes})")
    return label


def nll_classification(cls, label: int) -> float:
    """Negative log probability of the true class, floored at 1e-12.

    A zero-probability label therefore saturates at -ln(1e-12) ~ 27.63
    rather than diverging.
    """
    p = _probs_of(cls)
    label = _check_label(label, p.size)
    return -math.log(max(float(p[label]), NLL_PROB_FLOOR))


def brier(cls, label: int) -> float:
    """Squared error between the distribution and the one-hot label; range [0, 2]."""
    p = _probs_of(cls)
    label = _check_label(label, p.size)
    onehot = np.zeros_like(p)
    onehot[label] = 1.0
    return float(np.sum((p - onehot) ** 2))


def shannon_entropy(cls) -> float:
    """Entropy in nats with the 0 * ln 0 = 0 convention."""
    p = _probs_of(cls)
    nz = p > 0.0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def mutual_information(members: Sequence) -> float:
    """Entropy of the member-average distribution minus mean member entropy.

    This is the epistemic part of the predictive entropy: zero when all
    members agree, at most ln K when they disagree maximally.  Clamped at 0
    against float cancellation.
    """
    if not len(members):
        raise ValidationError("mutual_information needs at least one member")
    probs = np.stack([_probs_of(m) for m in members])
    mean = probs.mean(axis=0)
    mi = shannon_entropy(mean) - float(np.mean([shannon_entropy(p) for p in probs]))
    return max(mi, 0.0)


def _check_gaussian_inputs(mean, var, y, require_positive_var: bool):
    m = np.asarray(mean, dtype=float).reshape(-1)
    v = np.asarray(var, dtype=float).reshape(-1)
    t = np.asarray(y, dtype=float).reshape(-1)
    if not (m.size == v.size == t.size) or m.size == 0:
        raise ValidationError("mean, var, y must be non-empty and equally sized")
    for name, arr in (("mean", m), ("var", v), ("y", t)):
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"{name} contains non-finite values: {arr!r}")
    if require_positive_var:
        if np.any(v <= 0.0):
            raise ValidationError(f"variances must be positive: {v!r}")
    elif np.any(v < 0.0):
        raise ValidationError(f"variances must be non-negative: {v!r}")
    return m, v, t


def nll_regression_gaussian(mean, var, y) -> float:
    """Diagonal-Gaussian negative log density of ``y``, summed over dims.

    For 7-vectors (box layout) the yaw residual is wrapped to (-pi, pi]
    before entering the quadratic term.
    """
    m, v, t = _check_gaussian_inputs(mean, var, y, require_positive_var=True)
    r = t - m
    if r.size == 7:
        r[YAW_INDEX] = wrap_residual(r[YAW_INDEX])
    nll = float(np.sum(0.5 * np.log(2.0 * math.pi * v) + r * r / (2.0 * v)))
    if math.isnan(nll):
        raise NumericalError("nll_regression_gaussian produced NaN")
    return nll


def energy_score(mean, var, y, samples: int = 256, seed: int = 0) -> float:
    """Monte-Carlo energy score of a diagonal Gaussian against ``y``.

    Estimator: (1/m) sum_i ||X_i - y|| - (1/(2(m-1))) sum_i ||X_i - X_{i+1}||
    over consecutive sample pairs; both terms are unbiased, so the score
    converges to E||X - y|| - 0.5 E||X - X'||.  Deterministic for a fixed
    seed.  For 7-vectors the target yaw is moved to the branch nearest the
    predicted yaw so the norm sees the wrapped residual.
    """
    if samples < 2:
        raise ValidationError(f"energy_score needs samples >= 2, got {samples}")
    m, v, t = _check_gaussian_inputs(mean, var, y, require_positive_var=False)
    if t.size == 7:
        t = t.copy()
        t[YAW_INDEX] = m[YAW_INDEX] + wrap_residual(t[YAW_INDEX] - m[YAW_INDEX])
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = m + np.sqrt(v) * rng.standard_normal((samples, m.size))
    term_y = float(np.mean(np.linalg.norm(x - t, axis=1)))
    term_pair = float(np.sum(np.linalg.norm(x[1:] - x[:-1], axis=1))) / (2.0 * (samples - 1))
    return term_y - term_pair


def mce_bin_table(pairs: Sequence, bins: int = 10):
    """Per-(class, bin) tallies behind the marginal calibration error.

    Returns (mce, counts, mean_prob, freq) where the arrays have shape
    (K, bins); empty cells hold NaN in the mean/freq tables.
    """
    if bins < 2:
        raise ValidationError(f"bins must be >= 2, got {bins}")
    if not len(pairs):
        raise ValidationError("marginal_calibration_error needs at least one detection")
    probs = np.stack([_probs_of(c) for c, _ in pairs])
    labels = np.array([_check_label(l, probs.shape[1]) for _, l in pairs], dtype=int)
    n, k = probs.shape
    idx = np.minimum((probs * bins).astype(int), bins - 1)
    counts = np.zeros((k, bins), dtype=int)
    prob_sum = np.zeros((k, bins))
    hit_sum = np.zeros((k, bins))
    for cls_id in range(k):
        col = idx[:, cls_id]
        np.add.at(counts[cls_id], col, 1)
        np.add.at(prob_sum[cls_id], col, probs[:, cls_id])
        np.add.at(hit_sum[cls_id], col, (labels == cls_id).astype(float))
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_prob = np.where(counts > 0, prob_sum / np.maximum(counts, 1), math.nan)
        freq = np.where(counts > 0, hit_sum / np.maximum(counts, 1), math.nan)
    occupied = counts > 0
    mce = float(np.mean(np.abs(freq[occupied] - mean_prob[occupied])))
    return mce, counts, mean_prob, freq


def marginal_calibration_error(pairs: Sequence, bins: int = 10) -> float:
    """Mean absolute (frequency - confidence) gap over occupied (class, bin) cells.

    Every class's probability column is binned into ``bins`` equal-width
    bins; each non-empty cell contributes equally (ACE-style weighting).
    """
    mce, _, _, _ = mce_bin_table(pairs, bins)
    return mce


def regression_calibration_error(matched: Sequence, levels: int = 10) -> float:
    """Quantile-based calibration error of per-dimension Gaussian predictions.

    For each matched (mean, var, y) triple the PIT value
    u = Phi((y - mean) / sigma) is computed per dimension (yaw residual
    wrapped); the squared gap between nominal quantiles j/levels and the
    empirical fraction of u at or below them is averaged over levels and
    then over the 7 dimensions.
    """
    if levels < 2:
        raise ValidationError(f"levels must be >= 2, got {levels}")
    if not len(matched):
        raise ValidationError("regression_calibration_error needs at least one match")
    means = np.stack([np.asarray(m, dtype=float).reshape(-1) for m, _, _ in matched])
    variances = np.stack([np.asarray(v, dtype=float).reshape(-1) for _, v, _ in matched])
    targets = np.stack([np.asarray(y, dtype=float).reshape(-1) for _, _, y in matched])
    if means.shape[1] != 7:
        raise ValidationError(f"regression CE expects 7-dim entries, got {means.shape[1]}")
    for name, arr in (("mean", means), ("var", variances), ("y", targets)):
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"{name} contains non-finite values")
    if np.any(variances <= 0.0):
        raise ValidationError("variances must be positive for calibration")
    resid = targets - means
    resid[:, YAW_INDEX] = np.array([wrap_residual(r) for r in resid[:, YAW_INDEX]])
    u = ndtr(resid / np.sqrt(variances))
    p = np.arange(1, levels + 1) / levels
    # (levels, n, 7) comparison collapsed over samples.
    phat = (u[None, :, :] <= p[:, None, None]).mean(axis=1)
    ce_per_dim = np.mean((p[:, None] - phat) ** 2, axis=0)
    return float(np.mean(ce_per_dim))


def _ap40_from_curve(scores, frame_pos, det_idx, is_tp, total_gt: int) -> float:
    order = np.lexsort((det_idx, frame_pos, -scores))
    tp_cum = np.cumsum(is_tp[order])
    det_cum = np.arange(1, len(order) + 1)
    recalls = tp_cum / total_gt
    precisions = tp_cum / det_cum
    prec_rmax = np.maximum.accumulate(precisions[::-1])[::-1]
    ap = 0.0
    for j in range(1, 41):
        idx = np.searchsorted(recalls, j / 40.0, side="left")
        if idx < recalls.size:
            ap += float(prec_rmax[idx])
    return ap / 40.0


def ap40(frame_pairs: Sequence[tuple[Sequence, Sequence]], tp_iou: float, *, iou_mode: str = "3d"):
    """Average precision at 40 recall points for one class.

    ``frame_pairs`` holds (detections, ground-truth objects) per frame,
    already filtered to a single class.  Matching is greedy per frame in
    descending score; the precision-recall curve is built over the global
    score ranking.  Returns None when the class has no ground truth (AP is
    undefined there and the class is excluded from mAP).
    """
    scores: list[float] = []
    frame_pos: list[int] = []
    det_idx: list[int] = []
    is_tp: list[bool] = []
    total_gt = 0
    for pos, (dets, gts) in enumerate(frame_pairs):
        total_gt += len(gts)
        if not len(dets):
            continue
        zeros_d = np.zeros(len(dets), dtype=int)
        zeros_g = np.zeros(len(gts), dtype=int)
        iou = iou_matrix([d.box for d in dets], [g.box for g in gts], iou_mode)
        order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
        for out in greedy_outcomes(order, zeros_d, zeros_g, iou, tp_iou):
            scores.append(dets[out.det_index].score)
            frame_pos.append(pos)
            det_idx.append(out.det_index)
            is_tp.append(out.kind == KIND_TP)
    if total_gt == 0:
        return None
    if not scores:
        return 0.0
    return _ap40_from_curve(
        np.array(scores), np.array(frame_pos), np.array(det_idx), np.array(is_tp), total_gt
    )


# ---------------------------------------------------------------------------
# Evaluation sweep


def _energy_seed(base_seed: int, frame_id: str, det_index: int, tp_iou: float) -> int:
    token = f"{frame_id}|{det_index}|{tp_iou:.4f}".encode("utf-8")
    return (zlib.crc32(token) ^ (base_seed & 0xFFFFFFFF)) & 0xFFFFFFFF


@dataclass
class _FrameEval:
    """Per-frame caches shared by every threshold of the sweep."""

    frame_id: str
    dets: Sequence
    gts: Sequence
    det_classes: np.ndarray
    gt_classes: np.ndarray
    scores: np.ndarray
    iou: np.ndarray
    class_order: dict[int, list[int]]
    outcome_cache: dict = field(default_factory=dict)

    def outcomes(self, tp_iou: float, class_id: int, class_aware: bool) -> list[Outcome]:
        key = (tp_iou, class_id)
        hit = self.outcome_cache.get(key)
        if hit is None:
            hit = greedy_outcomes(
                self.class_order.get(class_id, []),
                self.det_classes,
                self.gt_classes,
                self.iou,
                tp_iou,
                class_aware,
            )
            self.outcome_cache[key] = hit
        return hit


def _build_frame_eval(frame_id: str, dets: Sequence, gts: Sequence, classes: int) -> _FrameEval:
    det_classes = np.array([d.cls.argmax for d in dets], dtype=int)
    gt_classes = np.array([g.class_id for g in gts], dtype=int)
    if gt_classes.size and (gt_classes.min() < 0 or gt_classes.max() >= classes):
        raise ValidationError(
            f"frame {frame_id}: ground-truth class outside [0, {classes})"
        )
    scores = np.array([d.score for d in dets], dtype=float)
    iou = iou_matrix([d.box for d in dets], [g.box for g in gts], "3d")
    class_order: dict[int, list[int]] = {}
    for k in range(classes):
        idx = [i for i in range(len(dets)) if det_classes[i] == k]
        idx.sort(key=lambda i: (-scores[i], i))
        class_order[k] = idx
    return _FrameEval(
        frame_id=frame_id,
        dets=dets,
        gts=gts,
        det_classes=det_classes,
        gt_classes=gt_classes,
        scores=scores,
        iou=iou,
        class_order=class_order,
    )


@dataclass
class ThresholdResult:
    """Everything computed at one IoU threshold of the sweep."""

    iou_threshold: float
    f1_thresholds: dict[int, float]
    f1_values: dict[int, float]
    temperatures: dict[int, TemperatureFit]
    partitions_full: dict[str, int]
    partitions_eval: dict[str, int]
    scores: dict[str, dict[str, float | None]]
    mce_cls: float | None
    ce_reg: float | None
    mce_bin_counts: list[int]
    ap_per_class: dict[int, float | None]
    map: float | None
    warnings: list[str]


@dataclass
class SweepResult:
    """Sweep output: headline aggregates plus the per-threshold breakdown."""

    thresholds: list[ThresholdResult]
    headline_partitions: dict[str, int]
    map: float | None
    map_per_class: dict[int, float | None]
    scores: dict[str, dict[str, float | None]]
    mce_cls: float | None
    ce_reg: float | None
    num_frames: int
    num_recal: int
    num_eval: int
    recal_ids: list[str]
    eval_ids: list[str]
    warnings: list[str]


def _mean_or_none(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def _class_f1_fit(
    frames: list[_FrameEval], t: float, class_id: int, class_aware: bool, warnings: list[str]
) -> tuple[float, float]:
    scores: list[float] = []
    tps: list[bool] = []
    total_gt = 0
    for fe in frames:
        total_gt += int(np.sum(fe.gt_classes == class_id))
        for out in fe.outcomes(t, class_id, class_aware):
            scores.append(float(fe.scores[out.det_index]))
            tps.append(out.kind == KIND_TP)
    if total_gt == 0:
        warnings.append(
            f"iou {t:.2f} class {class_id}: no recalibration ground truth; score threshold 0"
        )
        return 0.0, math.nan
    res = f1_from_scored(np.array(scores), np.array(tps), total_gt)
    if res.no_detections:
        warnings.append(
            f"iou {t:.2f} class {class_id}: no recalibration detections; threshold +inf"
        )
    return res.threshold, res.f1


def _class_temperature_fit(
    frames: list[_FrameEval],
    t: float,
    class_id: int,
    score_threshold: float,
    config: PipelineConfig,
    warnings: list[str],
) -> TemperatureFit:
    logits: list[np.ndarray] = []
    labels: list[int] = []
    condition_on_label = config.calibrate_conditioning == "gt_label"
    source_classes = range(config.classes) if condition_on_label else (class_id,)
    for fe in frames:
        for k in source_classes:
            for out in fe.outcomes(t, k, config.class_aware_fp_ml):
                if fe.scores[out.det_index] < score_threshold:
                    break
                if out.kind == KIND_FP_BG:
                    continue
                label = int(fe.gt_classes[out.gt_index])
                if condition_on_label and label != class_id:
                    continue
                logits.append(fe.dets[out.det_index].cls.logits)
                labels.append(label)
    fit = fit_temperature(np.array(logits), np.array(labels)) if logits else TemperatureFit(
        temperature=1.0, nll=math.nan, fitted=False, samples=0
    )
    if not fit.fitted:
        warnings.append(
            f"iou {t:.2f} class {class_id}: {fit.samples} matched samples "
            f"(< {MIN_FIT_SAMPLES}); temperature kept at 1"
        )
    return fit


def _evaluate_threshold(
    t: float,
    recal: list[_FrameEval],
    ev: list[_FrameEval],
    all_frames: list[_FrameEval],
    config: PipelineConfig,
) -> ThresholdResult:
    warnings: list[str] = []
    f1_thresholds: dict[int, float] = {}
    f1_values: dict[int, float] = {}
    temperatures: dict[int, TemperatureFit] = {}
    for k in range(config.classes):
        thr, f1 = _class_f1_fit(recal, t, k, config.class_aware_fp_ml, warnings)
        f1_thresholds[k] = thr
        f1_values[k] = f1
        temperatures[k] = _class_temperature_fit(recal, t, k, thr, config, warnings)

    # Full-set partition counts, no score threshold (split independent).
    full_counts = {"tp": 0, "fp_ml": 0, "fp_bg": 0, "fn": 0}
    for fe in all_frames:
        tp_here = 0
        for k in range(config.classes):
            for out in fe.outcomes(t, k, config.class_aware_fp_ml):
                full_counts[out.kind] += 1
                tp_here += out.kind == KIND_TP
        full_counts["fn"] += len(fe.gts) - tp_here

    # Eval-split partitions at the fitted per-class thresholds, then scores.
    eval_counts = {"tp": 0, "fp_ml": 0, "fp_bg": 0, "fn": 0}
    metric_acc: dict[str, dict[str, list[float]]] = {
        part: {name: [] for name in SCORE_NAMES} for part in PARTITIONS
    }
    mce_pairs: list[tuple[ClassDistribution, int]] = []
    ce_triples: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    for fe in ev:
        tp_here = 0
        for k in range(config.classes):
            thr = f1_thresholds[k]
            temp = temperatures[k].temperature
            for out in fe.outcomes(t, k, config.class_aware_fp_ml):
                if fe.scores[out.det_index] < thr:
                    break
                det = fe.dets[out.det_index]
                eval_counts[out.kind] += 1
                tp_here += out.kind == KIND_TP
                tempered = apply_temperature(det.cls, temp)
                acc = metric_acc[out.kind]
                acc["se"].append(det.se)
                acc["mi"].append(det.mi)
                if out.kind == KIND_FP_BG:
                    label = config.background_class_id
                else:
                    label = int(fe.gt_classes[out.gt_index])
                if label is not None:
                    acc["nll_cls"].append(nll_classification(tempered, label))
                    acc["brier"].append(brier(tempered, label))
                if out.kind != KIND_FP_BG:
                    mce_pairs.append((tempered, label))
                    mean_vec = det.box.to_vector()
                    var_vec = np.asarray(det.total_var, dtype=float)
                    y_vec = fe.gts[out.gt_index].box.to_vector()
                    ce_triples.append((mean_vec, var_vec, y_vec))
                    acc["nll_reg"].append(nll_regression_gaussian(mean_vec, var_vec, y_vec))
                    acc["energy"].append(
                        energy_score(
                            mean_vec,
                            var_vec,
                            y_vec,
                            config.energy_samples,
                            _energy_seed(config.seed, fe.frame_id, out.det_index, t),
                        )
                    )
        eval_counts["fn"] += len(fe.gts) - tp_here

    scores = {
        part: {name: _mean_or_none(metric_acc[part][name]) for name in SCORE_NAMES}
        for part in PARTITIONS
    }
    if mce_pairs:
        mce, counts, _, _ = mce_bin_table(mce_pairs, config.mce_bins)
        bin_counts = [int(c) for c in counts.sum(axis=0)]
    else:
        mce = None
        bin_counts = [0] * config.mce_bins
        warnings.append(f"iou {t:.2f}: no matched eval detections; MCE undefined")
    ce = regression_calibration_error(ce_triples, config.ce_levels) if ce_triples else None
    if ce is None and not mce_pairs:
        pass  # single warning above covers both
    elif ce is None:
        warnings.append(f"iou {t:.2f}: no matched eval detections; CE undefined")

    # AP per class on the full set.
    ap_per_class: dict[int, float | None] = {}
    for k in range(config.classes):
        scores_k: list[float] = []
        frame_pos: list[int] = []
        det_idx: list[int] = []
        is_tp: list[bool] = []
        total_gt = 0
        for pos, fe in enumerate(all_frames):
            total_gt += int(np.sum(fe.gt_classes == k))
            for out in fe.outcomes(t, k, config.class_aware_fp_ml):
                scores_k.append(float(fe.scores[out.det_index]))
                frame_pos.append(pos)
                det_idx.append(out.det_index)
                is_tp.append(out.kind == KIND_TP)
        if total_gt == 0:
            ap_per_class[k] = None
            warnings.append(f"iou {t:.2f} class {k}: no ground truth; excluded from mAP")
        elif not scores_k:
            ap_per_class[k] = 0.0
        else:
            ap_per_class[k] = _ap40_from_curve(
                np.array(scores_k),
                np.array(frame_pos),
                np.array(det_idx),
                np.array(is_tp),
                total_gt,
            )
    defined = [v for v in ap_per_class.values() if v is not None]
    map_t = _mean_or_none(defined)
    return ThresholdResult(
        iou_threshold=t,
        f1_thresholds=f1_thresholds,
        f1_values=f1_values,
        temperatures=temperatures,
        partitions_full=full_counts,
        partitions_eval=eval_counts,
        scores=scores,
        mce_cls=mce,
        ce_reg=ce,
        mce_bin_counts=bin_counts,
        ap_per_class=ap_per_class,
        map=map_t,
        warnings=warnings,
    )


def evaluate_sweep(
    fused_frames: Sequence[tuple[str, Sequence]],
    ground_truth: Mapping[str, Sequence],
    config: PipelineConfig,
    *,
    recal_ids: Sequence[str] | None = None,
    eval_ids: Sequence[str] | None = None,
) -> SweepResult:
    """Run the full IoU-threshold sweep over fused detections.

    ``fused_frames`` is (frame_id, fused detections) pairs; ``ground_truth``
    must cover exactly the same frame ids.  The recal/eval split defaults to
    the config rule but explicit id lists may be supplied (they must be
    disjoint and cover every frame).
    """
    ids = [fid for fid, _ in fused_frames]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate frame ids in fused input")
    missing = sorted(set(ids) - set(ground_truth))
    if missing:
        raise ValidationError(f"ground truth missing for frames: {missing[:5]!r}")
    extra = sorted(set(ground_truth) - set(ids))
    if extra:
        raise ValidationError(f"ground truth has frames absent from fused input: {extra[:5]!r}")

    if (recal_ids is None) != (eval_ids is None):
        raise ValidationError("recal_ids and eval_ids must be given together")
    if recal_ids is None:
        recal_list, eval_list = split_frame_ids(ids, config.split)
    else:
        recal_list = list(recal_ids)
        eval_list = list(eval_ids)
        overlap = set(recal_list) & set(eval_list)
        if overlap:
            raise ValidationError(f"recal/eval splits overlap: {sorted(overlap)[:5]!r}")
        if set(recal_list) | set(eval_list) != set(ids):
            raise ValidationError("recal/eval splits must cover every frame id")
    recal_set = set(recal_list)
    eval_set = set(eval_list)

    frames = [
        _build_frame_eval(fid, dets, ground_truth[fid], config.classes)
        for fid, dets in fused_frames
    ]
    recal = [fe for fe in frames if fe.frame_id in recal_set]
    ev = [fe for fe in frames if fe.frame_id in eval_set]

    warnings: list[str] = []
    if not recal:
        warnings.append("recalibration split is empty; thresholds fall back to 0")
    if not ev:
        warnings.append("evaluation split is empty; scores undefined")

    per_threshold = [
        _evaluate_threshold(t, recal, ev, frames, config) for t in config.sweep_thresholds()
    ]

    # Headline partition counts: full set, no score threshold, at config.tp_iou.
    headline = {"tp": 0, "fp_ml": 0, "fp_bg": 0, "fn": 0}
    for fe in frames:
        tp_here = 0
        for k in range(config.classes):
            for out in fe.outcomes(config.tp_iou, k, config.class_aware_fp_ml):
                headline[out.kind] += 1
                tp_here += out.kind == KIND_TP
        headline["fn"] += len(fe.gts) - tp_here

    scores_avg = {
        part: {
            name: _mean_or_none(
                [
                    tr.scores[part][name]
                    for tr in per_threshold
                    if tr.scores[part][name] is not None
                ]
            )
            for name in SCORE_NAMES
        }
        for part in PARTITIONS
    }
    map_per_class = {
        k: _mean_or_none(
            [tr.ap_per_class[k] for tr in per_threshold if tr.ap_per_class[k] is not None]
        )
        for k in range(config.classes)
    }
    for tr in per_threshold:
        warnings.extend(tr.warnings)

    return SweepResult(
        thresholds=per_threshold,
        headline_partitions=headline,
        map=_mean_or_none([tr.map for tr in per_threshold if tr.map is not None]),
        map_per_class=map_per_class,
        scores=scores_avg,
        mce_cls=_mean_or_none([tr.mce_cls for tr in per_threshold if tr.mce_cls is not None]),
        ce_reg=_mean_or_none([tr.ce_reg for tr in per_threshold if tr.ce_reg is not None]),
        num_frames=len(frames),
        num_recal=len(recal),
        num_eval=len(ev),
        recal_ids=recal_list,
        eval_ids=eval_list,
        warnings=warnings,
    )
