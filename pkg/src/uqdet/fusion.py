"""Per-head NMS, consensus clustering across heads, and probabilistic merging.

A cluster groups at most one detection per head; clusters reaching a strict
majority of the heads are merged into a single fused detection whose box is
the member mean (except yaw, taken from the highest-scoring member), whose
class distribution is the member average, and whose per-dimension variance
comes from the mixture of the member Gaussians.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .detmodel import ClassDistribution, Detection, Frame, _as_lines, _loads, _require
from .errors import ValidationError
from .geometry import Box7, bev_iou, iou_3d, wrap_residual
from .metrics import mutual_information, shannon_entropy

YAW_INDEX = 6


@dataclass(frozen=True)
class Cluster:
    """Group of detections, at most one per head."""

    members: tuple

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValidationError("cluster must have at least one member")
        head_ids = [m.head_id for m in members]
        if len(set(head_ids)) != len(head_ids):
            raise ValidationError(f"cluster holds duplicate head_ids: {head_ids}")
        object.__setattr__(self, "members", members)

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True, eq=False)
class FusedDetection:
    """Merged cluster output with uncertainty summaries.

    ``se`` and ``mi`` are the Shannon entropy of the merged distribution and
    the mutual information across members, both in nats; ``etv`` / ``atv``
    are the epistemic and aleatoric total variances (trace form).
    ``members`` keeps provenance when the detection was produced in-process;
    detections parsed back from a fused file have ``members = None``.
    """

    box: Box7
    total_var: np.ndarray
    cls: ClassDistribution
    score: float
    se: float
    mi: float
    etv: float
    atv: float
    cluster_size: int
    members: tuple | None = None

    def __post_init__(self):
        tv = np.asarray(self.total_var, dtype=float).reshape(-1)
        if tv.shape != (7,) or not np.all(np.isfinite(tv)) or np.any(tv < 0.0):
            raise ValidationError(f"total_var must be 7 finite non-negative reals: {tv!r}")
        tv = tv.copy()
        tv.setflags(write=False)
        object.__setattr__(self, "total_var", tv)
        if not isinstance(self.cls, ClassDistribution):
            raise ValidationError("cls must be a ClassDistribution")
        score = float(self.score)
        if not math.isfinite(score) or not (0.0 <= score <= 1.0):
            raise ValidationError(f"score must lie in [0, 1], got {self.score!r}")
        object.__setattr__(self, "score", score)
        for name in ("se", "mi", "etv", "atv"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValidationError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)
        if self.se < 0.0 or self.mi < 0.0 or self.etv < 0.0 or self.atv <= 0.0:
            raise ValidationError(
                f"need se >= 0, mi >= 0, etv >= 0, atv > 0; got "
                f"se={self.se} mi={self.mi} etv={self.etv} atv={self.atv}"
            )
        if self.mi > self.se + 1e-9:
            raise ValidationError(f"mi {self.mi} exceeds se {self.se} beyond tolerance")
        if not isinstance(self.cluster_size, int) or self.cluster_size < 1:
            raise ValidationError(f"cluster_size must be a positive int, got {self.cluster_size!r}")
        if self.members is not None:
            object.__setattr__(self, "members", tuple(self.members))

    def __eq__(self, other) -> bool:
        if not isinstance(other, FusedDetection):
            return NotImplemented
        return (
            self.box == other.box
            and np.array_equal(self.total_var, other.total_var)
            and np.array_equal(self.cls.probs, other.cls.probs)
            and (self.score, self.se, self.mi, self.etv, self.atv, self.cluster_size)
            == (other.score, other.se, other.mi, other.etv, other.atv, other.cluster_size)
        )


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression on BEV IoU within one head.

    Keeps detections in descending score order, dropping any candidate whose
    BEV IoU with an already-kept box exceeds ``iou_threshold``.
    """
    if not (0.0 < iou_threshold < 1.0):
        raise ValidationError(f"nms iou_threshold must lie in (0, 1), got {iou_threshold}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: list[Detection] = []
    for i in order:
        cand = dets[i]
        if all(bev_iou(k.box, cand.box) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept


def cluster_consensus(
    frame_heads: Sequence[Sequence[Detection]],
    iou_threshold: float,
    min_cluster_size: int | None = None,
    iou_metric: str = "bev",
) -> tuple[list[Cluster], list[Cluster]]:
    """Greedy consensus clustering across heads.

    The highest-scoring unassigned detection seeds a cluster; from every
    other head the unassigned detection with the highest IoU against the
    seed joins if that IoU exceeds ``iou_threshold``.  Clusters smaller than
    ``min_cluster_size`` (default: strict majority of the heads) are
    returned separately as discarded.  Every input detection lands in
    exactly one cluster, valid or discarded.
    """
    num_heads = len(frame_heads)
    if num_heads < 1:
        raise ValidationError("cluster_consensus needs at least one head")
    if min_cluster_size is None:
        min_cluster_size = num_heads // 2 + 1
    if not (1 <= min_cluster_size <= num_heads):
        raise ValidationError(
            f"min_cluster_size must lie in [1, {num_heads}], got {min_cluster_size}"
        )
    if iou_metric == "bev":
        iou_fn = bev_iou
    elif iou_metric == "3d":
        iou_fn = iou_3d
    else:
        raise ValidationError(f"iou_metric must be 'bev' or '3d', got {iou_metric!r}")

    pool = [(h, i, det) for h, head in enumerate(frame_heads) for i, det in enumerate(head)]
    # Deterministic processing order: score descending, then head, then index.
    pool.sort(key=lambda t: (-t[2].score, t[0], t[1]))
    assigned = [[False] * len(head) for head in frame_heads]
    valid: list[Cluster] = []
    discarded: list[Cluster] = []
    for h0, i0, seed in pool:
        if assigned[h0][i0]:
            continue
        assigned[h0][i0] = True
        members = [seed]
        for h, head in enumerate(frame_heads):
            if h == h0:
                continue
            best = None
            for i, det in enumerate(head):
                if assigned[h][i]:
                    continue
                iou = iou_fn(seed.box, det.box)
                if iou <= iou_threshold:
                    continue
                key = (iou, det.score, -i)
                if best is None or key > best[0]:
                    best = (key, i, det)
            if best is not None:
                assigned[h][best[1]] = True
                members.append(best[2])
        members.sort(key=lambda d: d.head_id)
        cluster = Cluster(members=tuple(members))
        (valid if cluster.size >= min_cluster_size else discarded).append(cluster)
    return valid, discarded


def mixture_moments(means, variances) -> tuple[float, float]:
    """Mean and variance of an equal-weight mixture of 1-D distributions.

    variance = avg(variance_i + mean_i^2) - mean^2, computed as the average
    member variance plus the spread of the means about their average so the
    result can never go negative through cancellation.
    """
    m = np.asarray(means, dtype=float).reshape(-1)
    v = np.asarray(variances, dtype=float).reshape(-1)
    if m.size == 0 or m.size != v.size:
        raise ValidationError("mixture_moments needs equal-length non-empty inputs")
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(v))):
        raise ValidationError("mixture_moments inputs must be finite")
    if np.any(v < 0.0):
        raise ValidationError(f"variances must be non-negative: {v!r}")
    mbar = float(np.mean(m))
    spread = float(np.mean((m - mbar) ** 2))
    return mbar, float(np.mean(v)) + spread


def _best_member(cluster: Cluster) -> Detection:
    """Highest-score member; ties broken toward the lowest head_id."""
    return min(cluster.members, key=lambda d: (-d.score, d.head_id))


def _yaw_deviations(cluster: Cluster, reference: float) -> np.ndarray:
    return np.array([wrap_residual(m.box.yaw - reference) for m in cluster.members])


def epistemic_total_variance(cluster: Cluster) -> float:
    """Trace of the population covariance of member box vectors.

    Divisor-n form, so single-member clusters give exactly 0.  Yaw enters as
    the wrapped deviation from the highest-scoring member's yaw so that
    angles straddling the wrap boundary do not inflate the spread.
    """
    if cluster.size == 1:
        return 0.0
    vecs = np.stack([m.box.to_vector() for m in cluster.members])
    vecs[:, YAW_INDEX] = _yaw_deviations(cluster, _best_member(cluster).box.yaw)
    return float(np.sum(np.var(vecs, axis=0)))


def aleatoric_total_variance(cluster: Cluster) -> float:
    """Trace of the mean predicted covariance: sum over dims of mean exp(log_var)."""
    variances = np.stack([m.variances for m in cluster.members])
    return float(np.sum(np.mean(variances, axis=0)))


def merge_cluster(cluster: Cluster) -> FusedDetection:
    """Merge a cluster into one fused detection.

    Linear box parameters are member means; yaw comes from the
    highest-scoring member (averaging opposite headings like 0 and pi would
    fabricate a sideways box).  The class distribution is the member
    average, the score its maximum probability, and per-dimension variances
    follow the mixture moments (yaw via wrapped deviations about the merged
    yaw).
    """
    members = cluster.members
    vecs = np.stack([m.box.to_vector() for m in members])
    variances = np.stack([m.variances for m in members])
    best = _best_member(cluster)
    merged_vec = vecs.mean(axis=0)
    merged_vec[YAW_INDEX] = best.box.yaw
    total_var = np.empty(7)
    for d in range(6):
        _, total_var[d] = mixture_moments(vecs[:, d], variances[:, d])
    _, total_var[YAW_INDEX] = mixture_moments(
        _yaw_deviations(cluster, best.box.yaw), variances[:, YAW_INDEX]
    )
    probs = np.stack([m.cls.probs for m in members]).mean(axis=0)
    merged_cls = ClassDistribution.from_probs(probs)
    member_dists = [m.cls for m in members]
    return FusedDetection(
        box=Box7.from_vector(merged_vec),
        total_var=total_var,
        cls=merged_cls,
        score=merged_cls.max_prob,
        se=shannon_entropy(merged_cls),
        mi=mutual_information(member_dists),
        etv=epistemic_total_variance(cluster),
        atv=aleatoric_total_variance(cluster),
        cluster_size=cluster.size,
        members=members,
    )


def fuse_frame(
    frame: Frame,
    nms_iou: float,
    cluster_iou: float,
    min_cluster_size: int | None = None,
    cluster_metric: str = "bev",
) -> list[FusedDetection]:
    """NMS each head, cluster across heads, merge the consensus clusters.

    Output is sorted by fused score descending (ties by merged x then y for
    determinism).
    """
    heads = [nms(head, nms_iou) for head in frame.heads]
    clusters, _ = cluster_consensus(heads, cluster_iou, min_cluster_size, cluster_metric)
    fused = [merge_cluster(c) for c in clusters]
    fused.sort(key=lambda f: (-f.score, f.box.x, f.box.y))
    return fused


def _fused_to_json(det: FusedDetection) -> dict:
    return {
        "box": [float(v) for v in det.box.to_vector()],
        "total_var": [float(v) for v in det.total_var],
        "probs": [float(v) for v in det.cls.probs],
        "score": float(det.score),
        "se": float(det.se),
        "mi": float(det.mi),
        "etv": float(det.etv),
        "atv": float(det.atv),
        "cluster_size": int(det.cluster_size),
    }


def write_fused(frames: Iterable[tuple[str, Sequence[FusedDetection]]], sink) -> None:
    """Write (frame_id, fused detections) pairs as JSONL."""
    own = isinstance(sink, (str, bytes))
    fh = open(sink, "w", encoding="utf-8") if own else sink
    try:
        for frame_id, dets in frames:
            obj = {"frame_id": frame_id, "fused": [_fused_to_json(d) for d in dets]}
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    finally:
        if own:
            fh.close()


def parse_fused(source, *, num_classes: int | None = None) -> list[tuple[str, list[FusedDetection]]]:
    """Parse a fused JSONL stream back into (frame_id, detections) pairs."""
    out: list[tuple[str, list[FusedDetection]]] = []
    seen: set[str] = set()
    for lineno, line in enumerate(_as_lines(source), start=1):
        if not line.strip():
            continue
        obj = _loads(line, lineno)
        if not isinstance(obj, dict):
            raise ValidationError(f"line {lineno}: expected a JSON object")
        frame_id = _require(obj, "frame_id", lineno)
        if not isinstance(frame_id, str) or not frame_id:
            raise ValidationError(f"line {lineno}: frame_id must be a non-empty string")
        if frame_id in seen:
            raise ValidationError(f"line {lineno}: duplicate frame_id {frame_id!r}")
        seen.add(frame_id)
        raw_list = _require(obj, "fused", lineno)
        if not isinstance(raw_list, list):
            raise ValidationError(f"line {lineno}: fused must be a list")
        dets = []
        for raw in raw_list:
            if not isinstance(raw, dict):
                raise ValidationError(f"line {lineno}: fused entries must be objects")
            probs = np.asarray(_require(raw, "probs", lineno), dtype=float).reshape(-1)
            if num_classes is not None and probs.size != num_classes:
                raise ValidationError(
                    f"line {lineno}: expected {num_classes} probs, got {probs.size}"
                )
            try:
                cls = ClassDistribution.from_probs(probs)
                det = FusedDetection(
                    box=Box7.from_vector(_require(raw, "box", lineno)),
                    total_var=np.asarray(_require(raw, "total_var", lineno), dtype=float),
                    cls=cls,
                    score=float(_require(raw, "score", lineno)),
                    se=float(_require(raw, "se", lineno)),
                    mi=float(_require(raw, "mi", lineno)),
                    etv=float(_require(raw, "etv", lineno)),
                    atv=float(_require(raw, "atv", lineno)),
                    cluster_size=int(_require(raw, "cluster_size", lineno)),
                )
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
            dets.append(det)
        out.append((frame_id, dets))
    return out
