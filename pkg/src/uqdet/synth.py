"""Synthetic multi-head detection datasets with known generating parameters.

The generator stands in for trained detector heads: ground-truth boxes are
rejection-sampled so their footprints never overlap, each head re-detects
every object with additive Gaussian noise and a configurable miss rate, and
background false positives land away from every object.  Because the noise,
predicted variances, logits, and label sampling all follow a known recipe,
downstream metrics have closed-form targets.

All randomness comes from one counter-based (Philox) generator in a fixed
draw order, so a fixed config reproduces byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .detmodel import (
    LOG_VAR_MAX,
    LOG_VAR_MIN,
    ClassDistribution,
    Detection,
    Frame,
    GroundTruthObject,
    softmax,
    write_frames,
    write_ground_truth,
)
from .errors import ValidationError
from .geometry import Box7, wrap_angle

# Logit scale standing in for infinity when the target confidence is 1.0;
# softmax saturates to an exact one-hot in float64 long before this.
SATURATED_SCALE = 1000.0

_MAX_TRIES = 10_000

# Proposal ranges for ground-truth boxes (car-like extents, meters).
_EXTENT_RANGES = ((2.5, 5.0), (1.4, 2.2), (1.3, 2.0))
_Z_RANGE = (-1.0, 1.0)

_DEFAULT_SIGMA = (0.3, 0.3, 0.1, 0.2, 0.15, 0.1, 0.05)


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs; see the module docstring for the construction."""

    seed: int = 0
    frames: int = 100
    heads: int = 2
    classes: int = 3
    gt_per_frame: float = 4.0
    miss_rate: float = 0.1
    fp_bg_rate: float = 1.0
    box_noise_sigma: tuple = _DEFAULT_SIGMA
    logit_temperature: float = 1.0
    variance_honesty: float = 1.0
    target_confidence: float | tuple = 0.8

    def __post_init__(self):
        if self.frames < 1:
            raise ValidationError(f"frames must be >= 1, got {self.frames}")
        if self.heads < 1:
            raise ValidationError(f"heads must be >= 1, got {self.heads}")
        if self.classes < 2:
            raise ValidationError(f"classes must be >= 2, got {self.classes}")
        if self.gt_per_frame < 0.0 or self.fp_bg_rate < 0.0:
            raise ValidationError("gt_per_frame and fp_bg_rate must be >= 0")
        if not (0.0 <= self.miss_rate <= 1.0):
            raise ValidationError(f"miss_rate must lie in [0, 1], got {self.miss_rate}")
        sigma = tuple(float(s) for s in np.asarray(self.box_noise_sigma, dtype=float).reshape(-1))
        if len(sigma) != 7 or any(s < 0.0 or not math.isfinite(s) for s in sigma):
            raise ValidationError(f"box_noise_sigma must be 7 non-negative reals: {sigma!r}")
        object.__setattr__(self, "box_noise_sigma", sigma)
        if not (self.logit_temperature > 0.0 and math.isfinite(self.logit_temperature)):
            raise ValidationError(f"logit_temperature must be positive, got {self.logit_temperature}")
        if not (self.variance_honesty > 0.0 and math.isfinite(self.variance_honesty)):
            raise ValidationError(f"variance_honesty must be positive, got {self.variance_honesty}")
        tc = self.target_confidence
        if isinstance(tc, (tuple, list)):
            if len(tc) != 2:
                raise ValidationError("target_confidence range must be (lo, hi)")
            lo, hi = float(tc[0]), float(tc[1])
            if not (lo <= hi):
                raise ValidationError(f"target_confidence range inverted: {tc!r}")
            object.__setattr__(self, "target_confidence", (lo, hi))
            bounds = (lo, hi)
        else:
            bounds = (float(tc), float(tc))
            object.__setattr__(self, "target_confidence", float(tc))
        floor = 1.0 / self.classes
        if bounds[0] <= floor or bounds[1] > 1.0:
            raise ValidationError(
                f"target_confidence must lie in (1/classes, 1] = ({floor:.4f}, 1], got {tc!r}"
            )

    def to_mapping(self) -> dict:
        out = dataclasses.asdict(self)
        out["box_noise_sigma"] = list(self.box_noise_sigma)
        if isinstance(self.target_confidence, tuple):
            out["target_confidence"] = list(self.target_confidence)
        return out

    @classmethod
    def from_mapping(cls, mapping, **overrides) -> "SynthConfig":
        """Build from a string mapping (key=value config file) plus overrides."""
        kwargs: dict = {}
        fields = {f.name for f in dataclasses.fields(cls)}
        for key, raw in mapping.items():
            if key not in fields:
                raise ValidationError(f"unknown synth config key {key!r}")
            kwargs[key] = _parse_synth_field(key, raw)
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in fields:
                raise ValidationError(f"unknown synth config key {key!r}")
            kwargs[key] = value
        return cls(**kwargs)


def _parse_synth_field(key: str, raw):
    """Coerce one mapping value; accepts strings or already-typed values."""
    ints = {"seed", "frames", "heads", "classes"}
    floats = {"gt_per_frame", "miss_rate", "fp_bg_rate", "logit_temperature", "variance_honesty"}
    try:
        if key in ints:
            return int(raw)
        if key in floats:
            return float(raw)
        if key == "box_noise_sigma":
            parts = raw.split(",") if isinstance(raw, str) else raw
            return tuple(float(p) for p in parts)
        if key == "target_confidence":
            if isinstance(raw, str):
                parts = [float(p) for p in raw.split(",")]
            elif isinstance(raw, (tuple, list)):
                parts = [float(p) for p in raw]
            else:
                parts = [float(raw)]
            return parts[0] if len(parts) == 1 else tuple(parts)
    except (TypeError, ValueError):
        raise ValidationError(f"synth config key {key!r}: cannot parse {raw!r}") from None
    raise ValidationError(f"unknown synth config key {key!r}")


@dataclass
class SynthResult:
    """Generated frames (ground truth attached), GT map, and the oracle record."""

    frames: list
    ground_truth: dict
    oracle: dict


def confidence_scale(p: float, classes: int) -> float:
    """Logit magnitude c such that softmax(c * e_k) peaks at probability p."""
    if not 1.0 / classes < p <= 1.0:
        raise ValidationError(
            f"target confidence {p!r} must exceed the uniform probability 1/{classes}"
        )
    if p >= 1.0:
        return SATURATED_SCALE
    return math.log(p * (classes - 1) / (1.0 - p))


def oracle_expected_nll_reg(cfg: SynthConfig) -> float:
    """Closed-form expected Gaussian regression NLL per matched detection.

    Valid only when the predicted variances are truthful (honesty = 1); then
    each dimension contributes 0.5 ln(2 pi sigma^2) + 0.5.
    """
    if cfg.variance_honesty != 1.0:
        raise ValidationError(
            f"closed-form NLL assumes variance_honesty = 1, got {cfg.variance_honesty}"
        )
    if any(s <= 0.0 for s in cfg.box_noise_sigma):
        raise ValidationError("closed-form NLL needs strictly positive box_noise_sigma")
    return sum(0.5 * math.log(2.0 * math.pi * s * s) + 0.5 for s in cfg.box_noise_sigma)


def _sample_target(rng, tc) -> float:
    if isinstance(tc, tuple):
        return float(rng.uniform(tc[0], tc[1]))
    return float(tc)


def _sample_gt_boxes(rng, n: int, half_width: float) -> list[Box7]:
    """Rejection-sample boxes whose centers keep 2 * max(l, w) separation.

    That distance exceeds the sum of any two footprint circumradii, so BEV
    (and hence 3D) IoU between ground-truth boxes is exactly zero.
    """
    boxes: list[Box7] = []
    for _ in range(n):
        for attempt in range(_MAX_TRIES):
            x = float(rng.uniform(-half_width, half_width))
            y = float(rng.uniform(-half_width, half_width))
            z = float(rng.uniform(*_Z_RANGE))
            l = float(rng.uniform(*_EXTENT_RANGES[0]))
            w = float(rng.uniform(*_EXTENT_RANGES[1]))
            h = float(rng.uniform(*_EXTENT_RANGES[2]))
            yaw = float(rng.uniform(-math.pi, math.pi))
            ok = True
            for b in boxes:
                min_dist = 2.0 * max(l, w, b.l, b.w)
                if math.hypot(x - b.x, y - b.y) < min_dist:
                    ok = False
                    break
            if ok:
                boxes.append(Box7(x, y, z, l, w, h, yaw))
                break
        else:
            raise ValidationError(
                f"could not place {n} ground-truth boxes in {_MAX_TRIES} tries; "
                "lower gt_per_frame"
            )
    return boxes


def _sample_fp_box(rng, gts: Sequence[Box7], half_width: float) -> Box7:
    """A box whose footprint circumcircle clears every ground-truth box."""
    for attempt in range(_MAX_TRIES):
        x = float(rng.uniform(-half_width, half_width))
        y = float(rng.uniform(-half_width, half_width))
        z = float(rng.uniform(*_Z_RANGE))
        l = float(rng.uniform(*_EXTENT_RANGES[0]))
        w = float(rng.uniform(*_EXTENT_RANGES[1]))
        h = float(rng.uniform(*_EXTENT_RANGES[2]))
        yaw = float(rng.uniform(-math.pi, math.pi))
        box = Box7(x, y, z, l, w, h, yaw)
        clear = all(
            math.hypot(x - g.x, y - g.y) > box.bev_circumradius + g.bev_circumradius + 0.5
            for g in gts
        )
        if clear:
            return box
    raise ValidationError(
        f"could not place a background box in {_MAX_TRIES} tries; lower fp_bg_rate or density"
    )


def generate(cfg: SynthConfig) -> SynthResult:
    """Generate frames, ground truth, and the per-detection oracle record.

    Construction per ground-truth object: a nominal class k and target
    confidence p are drawn, the emitted logits are c * e_k with
    c = confidence_scale(p), and the object's label is sampled from
    softmax(c * e_k / logit_temperature) - so temperature fitting on
    (logits, label) pairs recovers logit_temperature, and at temperature 1
    with confidence 1 the labels are exactly the nominal classes.
    Detected boxes add N(0, box_noise_sigma^2) noise (yaw wrapped); the
    predicted log-variance is ln(variance_honesty * sigma^2), clamped to the
    ingestion range.
    """
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    half_width = 20.0 * max(1.0, math.sqrt(cfg.gt_per_frame))
    sigma = np.array(cfg.box_noise_sigma)
    log_var = np.clip(
        np.log(np.maximum(cfg.variance_honesty * sigma * sigma, 1e-300)),
        LOG_VAR_MIN,
        LOG_VAR_MAX,
    )
    frames: list[Frame] = []
    gt_map: dict[str, tuple] = {}
    oracle_dets: list[dict] = []
    oracle_gts: list[dict] = []
    for f in range(cfg.frames):
        frame_id = f"frame_{f:06d}"
        n_gt = int(rng.poisson(cfg.gt_per_frame))
        gt_boxes = _sample_gt_boxes(rng, n_gt, half_width)
        nominal = []
        scales = []
        labels = []
        confidences = []
        for gi, box in enumerate(gt_boxes):
            k = int(rng.integers(0, cfg.classes))
            p = _sample_target(rng, cfg.target_confidence)
            c = confidence_scale(p, cfg.classes)
            probs_gen = softmax(_onehot_logits(c, k, cfg.classes) / cfg.logit_temperature)
            label = int(rng.choice(cfg.classes, p=probs_gen))
            nominal.append(k)
            scales.append(c)
            labels.append(label)
            confidences.append(p)
            oracle_gts.append(
                {
                    "frame_id": frame_id,
                    "gt_index": gi,
                    "nominal_class": k,
                    "label": label,
                    "confidence_target": p,
                    "logit_scale": c,
                }
            )
        objects = tuple(
            GroundTruthObject(box=box, class_id=labels[gi]) for gi, box in enumerate(gt_boxes)
        )
        heads = []
        for h in range(cfg.heads):
            dets: list[Detection] = []
            for gi, box in enumerate(gt_boxes):
                missed = bool(rng.random() < cfg.miss_rate)
                if missed:
                    continue
                noise = rng.normal(0.0, 1.0, size=7) * sigma
                vec = box.to_vector() + noise
                # Keep extents physical if a large noise draw cuts them down.
                vec[3:6] = np.maximum(vec[3:6], 0.05)
                vec[6] = wrap_angle(vec[6])
                logits = _onehot_logits(scales[gi], nominal[gi], cfg.classes)
                cls = ClassDistribution(logits)
                det = Detection(
                    box=Box7.from_vector(vec),
                    log_var=log_var,
                    cls=cls,
                    score=cls.max_prob,
                    head_id=h,
                )
                oracle_dets.append(
                    {
                        "frame_id": frame_id,
                        "head_id": h,
                        "det_index": len(dets),
                        "kind": "gt",
                        "gt_index": gi,
                        "nominal_class": nominal[gi],
                        "label": labels[gi],
                        "confidence_target": confidences[gi],
                    }
                )
                dets.append(det)
            n_fp = int(rng.poisson(cfg.fp_bg_rate))
            for _ in range(n_fp):
                box = _sample_fp_box(rng, gt_boxes, half_width)
                k = int(rng.integers(0, cfg.classes))
                p = _sample_target(rng, cfg.target_confidence)
                c = confidence_scale(p, cfg.classes)
                cls = ClassDistribution(_onehot_logits(c, k, cfg.classes))
                det = Detection(
                    box=box,
                    log_var=log_var,
                    cls=cls,
                    score=cls.max_prob,
                    head_id=h,
                )
                oracle_dets.append(
                    {
                        "frame_id": frame_id,
                        "head_id": h,
                        "det_index": len(dets),
                        "kind": "bg",
                        "gt_index": None,
                        "nominal_class": k,
                        "label": None,
                        "confidence_target": p,
                    }
                )
                dets.append(det)
            heads.append(tuple(dets))
        frames.append(Frame(frame_id=frame_id, heads=tuple(heads), ground_truth=objects))
        gt_map[frame_id] = objects
    oracle = {
        "config": cfg.to_mapping(),
        "sigma": [float(s) for s in sigma],
        "log_var": [float(v) for v in log_var],
        "ground_truth": oracle_gts,
        "detections": oracle_dets,
    }
    if cfg.variance_honesty == 1.0 and all(s > 0.0 for s in cfg.box_noise_sigma):
        oracle["expected_nll_reg"] = oracle_expected_nll_reg(cfg)
    else:
        oracle["expected_nll_reg"] = None
    return SynthResult(frames=frames, ground_truth=gt_map, oracle=oracle)


def _onehot_logits(scale: float, k: int, classes: int) -> np.ndarray:
    z = np.zeros(classes)
    z[k] = scale
    return z


def write_outputs(result: SynthResult, out_dir: str) -> dict[str, str]:
    """Write detections.jsonl, ground_truth.jsonl, detections.oracle.json."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "detections": os.path.join(out_dir, "detections.jsonl"),
        "ground_truth": os.path.join(out_dir, "ground_truth.jsonl"),
        "oracle": os.path.join(out_dir, "detections.oracle.json"),
    }
    write_frames(result.frames, paths["detections"])
    write_ground_truth(result.ground_truth, paths["ground_truth"])
    with open(paths["oracle"], "w", encoding="utf-8") as fh:
        json.dump(result.oracle, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return paths
