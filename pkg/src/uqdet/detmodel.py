"""Detection data model and the JSONL / report file formats.

A frame carries the per-head detection lists produced by a multi-output
detector plus (optionally) the ground-truth objects for that frame.  Every
detection has an oriented box, a per-dimension log-variance, and a class
distribution stored as logits.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, NumericalError, ValidationError
from .geometry import Box7

LOG_VAR_MIN = -20.0
LOG_VAR_MAX = 10.0

# Tolerance for accepting a probability vector as normalized at ingestion.
PROB_SUM_TOL = 1e-6

# Floor used when converting probabilities back to logits.
_PROB_FLOOR = 1e-300

_REPORT_SIG_DIGITS = 6


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax of a 1-D array."""
    z = np.asarray(logits, dtype=float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


class ClassDistribution:
    """Categorical class distribution stored as logits.

    ``probs`` is always the softmax of ``logits``; both arrays are read-only.
    """

    __slots__ = ("logits", "probs")

    def __init__(self, logits, _probs=None):
        z = np.asarray(logits, dtype=float).reshape(-1)
        if z.size < 2:
            raise ValidationError("class distribution needs at least two logits")
        if not np.all(np.isfinite(z)):
            raise ValidationError(f"logits must be finite, got {z!r}")
        p = softmax(z) if _probs is None else _probs
        z = z.copy()
        z.setflags(write=False)
        p.setflags(write=False)
        self.logits = z
        self.probs = p

    @classmethod
    def from_probs(cls, probs) -> "ClassDistribution":
        """Build from a probability vector.

        The vector must sum to 1 within ``PROB_SUM_TOL``; it is renormalized
        exactly and stored verbatim (exact zeros stay exact zeros), with
        logits chosen so that softmax reproduces it up to the floor.
        """
        p = np.asarray(probs, dtype=float).reshape(-1)
        if p.size < 2:
            raise ValidationError("probability vector needs at least two entries")
        if not np.all(np.isfinite(p)) or np.any(p < 0.0):
            raise ValidationError(f"probabilities must be finite and non-negative: {p!r}")
        total = p.sum()
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValidationError(
                f"probability vector sums to {total!r}, outside tolerance {PROB_SUM_TOL}"
            )
        if total != 1.0:
            p = p / total
        return cls(np.log(np.maximum(p, _PROB_FLOOR)), _probs=p.copy())

    @property
    def num_classes(self) -> int:
        return self.logits.size

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.probs))

    @property
    def max_prob(self) -> float:
        return float(self.probs[self.argmax])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClassDistribution):
            return NotImplemented
        return np.array_equal(self.logits, other.logits)

    def __repr__(self) -> str:
        return f"ClassDistribution(logits={self.logits.tolist()!r})"


def _frozen_vector(values, name: str, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.shape != (7,):
        raise ValidationError(f"{name} must have 7 entries, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} must be finite: {v!r}")
    if lo is not None and (np.any(v < lo) or np.any(v > hi)):
        raise ValidationError(f"{name} entries must lie in [{lo}, {hi}]: {v!r}")
    v = v.copy()
    v.setflags(write=False)
    return v


@dataclass(frozen=True, eq=False)
class Detection:
    """One raw detection from one head."""

    box: Box7
    log_var: np.ndarray
    cls: ClassDistribution
    score: float
    head_id: int

    def __post_init__(self):
        object.__setattr__(
            self, "log_var", _frozen_vector(self.log_var, "log_var", LOG_VAR_MIN, LOG_VAR_MAX)
        )
        if not isinstance(self.cls, ClassDistribution):
            raise ValidationError("cls must be a ClassDistribution")
        score = float(self.score)
        if not math.isfinite(score) or not (0.0 <= score <= 1.0):
            raise ValidationError(f"score must lie in [0, 1], got {self.score!r}")
        object.__setattr__(self, "score", score)
        if not isinstance(self.head_id, int) or self.head_id < 0:
            raise ValidationError(f"head_id must be a non-negative int, got {self.head_id!r}")

    @property
    def variances(self) -> np.ndarray:
        return np.exp(self.log_var)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Detection):
            return NotImplemented
        return (
            self.box == other.box
            and np.array_equal(self.log_var, other.log_var)
            and self.cls == other.cls
            and self.score == other.score
            and self.head_id == other.head_id
        )


@dataclass(frozen=True)
class GroundTruthObject:
    """Annotated object: oriented box plus an integer class id."""

    box: Box7
    class_id: int

    def __post_init__(self):
        if not isinstance(self.class_id, int) or self.class_id < 0:
            raise ValidationError(f"class_id must be a non-negative int, got {self.class_id!r}")


@dataclass(frozen=True)
class Frame:
    """All per-head detections for one frame, with optional ground truth."""

    frame_id: str
    heads: tuple
    ground_truth: tuple | None = None

    def __post_init__(self):
        if not isinstance(self.frame_id, str) or not self.frame_id:
            raise ValidationError(f"frame_id must be a non-empty string, got {self.frame_id!r}")
        heads = tuple(tuple(h) for h in self.heads)
        for idx, head in enumerate(heads):
            for det in head:
                if not isinstance(det, Detection):
                    raise ValidationError("heads must contain Detection objects")
                if det.head_id != idx:
                    raise ValidationError(
                        f"detection head_id {det.head_id} does not match its head index {idx}"
                    )
        object.__setattr__(self, "heads", heads)
        if self.ground_truth is not None:
            gt = tuple(self.ground_truth)
            for obj in gt:
                if not isinstance(obj, GroundTruthObject):
                    raise ValidationError("ground_truth must contain GroundTruthObject entries")
            object.__setattr__(self, "ground_truth", gt)

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    def all_detections(self) -> list:
        return [det for head in self.heads for det in head]


def _reject_constant(token: str):
    raise ValidationError(f"non-finite JSON value {token!r} is not allowed")


def _loads(line: str, lineno: int):
    try:
        return json.loads(line, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"line {lineno}: invalid JSON: {exc}") from None


def _as_lines(source) -> Iterable[str]:
    """Accept a path, a file object, or an iterable of lines."""
    if isinstance(source, (str, bytes)):
        with open(source, "r", encoding="utf-8") as fh:
            yield from fh
        return
    yield from source


def _require(obj: Mapping, key: str, lineno: int):
    if key not in obj:
        raise ValidationError(f"line {lineno}: missing required key {key!r}")
    return obj[key]


def parse_detection(raw: Mapping, head_id: int, lineno: int, num_classes: int | None) -> Detection:
    box_vec = _require(raw, "box", lineno)
    log_var = _require(raw, "log_var", lineno)
    logits = _require(raw, "logits", lineno)
    score = _require(raw, "score", lineno)
    try:
        box = Box7.from_vector(box_vec)
    except ValidationError as exc:
        raise ValidationError(f"line {lineno}: {exc}") from None
    if min(box.l, box.w, box.h) < 1e-6:
        raise ValidationError(f"line {lineno}: box extents below 1e-6 are rejected")
    lv = np.asarray(log_var, dtype=float).reshape(-1)
    if lv.shape != (7,) or not np.all(np.isfinite(lv)):
        raise ValidationError(f"line {lineno}: log_var must be 7 finite numbers")
    lv = np.clip(lv, LOG_VAR_MIN, LOG_VAR_MAX)
    z = np.asarray(logits, dtype=float).reshape(-1)
    if num_classes is not None and z.size != num_classes:
        raise ValidationError(
            f"line {lineno}: expected {num_classes} logits, got {z.size}"
        )
    try:
        cls = ClassDistribution(z)
        return Detection(box=box, log_var=lv, cls=cls, score=float(score), head_id=head_id)
    except ValidationError as exc:
        raise ValidationError(f"line {lineno}: {exc}") from None


def parse_frames(
    source,
    *,
    num_heads: int | None = None,
    num_classes: int | None = None,
) -> list[Frame]:
    """Parse a detections JSONL stream into a list of frames.

    Each line is ``{"frame_id": ..., "heads": [[det, ...], ...]}``.  When
    ``num_heads`` / ``num_classes`` are given, every line is checked against
    them; otherwise the first line fixes the head count.
    """
    frames: list[Frame] = []
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
        heads_raw = _require(obj, "heads", lineno)
        if not isinstance(heads_raw, list):
            raise ValidationError(f"line {lineno}: heads must be a list of lists")
        if num_heads is None:
            num_heads = len(heads_raw)
        if len(heads_raw) != num_heads:
            raise ValidationError(
                f"line {lineno}: expected {num_heads} heads, got {len(heads_raw)}"
            )
        heads = []
        for h, dets_raw in enumerate(heads_raw):
            if not isinstance(dets_raw, list):
                raise ValidationError(f"line {lineno}: head {h} must be a list")
            dets = []
            for raw in dets_raw:
                if not isinstance(raw, dict):
                    raise ValidationError(f"line {lineno}: detection entries must be objects")
                det = parse_detection(raw, h, lineno, num_classes)
                if num_classes is None:
                    num_classes = det.cls.num_classes
                dets.append(det)
            heads.append(tuple(dets))
        frames.append(Frame(frame_id=frame_id, heads=tuple(heads)))
    return frames


def parse_ground_truth(source, *, num_classes: int | None = None) -> dict[str, tuple]:
    """Parse a ground-truth JSONL stream into ``{frame_id: (objects, ...)}``.

    Each line is ``{"frame_id": ..., "objects": [{"box": [...7], "class_id": k}]}``.
    """
    out: dict[str, tuple] = {}
    for lineno, line in enumerate(_as_lines(source), start=1):
        if not line.strip():
            continue
        obj = _loads(line, lineno)
        if not isinstance(obj, dict):
            raise ValidationError(f"line {lineno}: expected a JSON object")
        frame_id = _require(obj, "frame_id", lineno)
        if not isinstance(frame_id, str) or not frame_id:
            raise ValidationError(f"line {lineno}: frame_id must be a non-empty string")
        if frame_id in out:
            raise ValidationError(f"line {lineno}: duplicate frame_id {frame_id!r}")
        objects_raw = _require(obj, "objects", lineno)
        if not isinstance(objects_raw, list):
            raise ValidationError(f"line {lineno}: objects must be a list")
        objects = []
        for raw in objects_raw:
            if not isinstance(raw, dict):
                raise ValidationError(f"line {lineno}: ground-truth entries must be objects")
            box_vec = _require(raw, "box", lineno)
            class_id = _require(raw, "class_id", lineno)
            if not isinstance(class_id, int) or isinstance(class_id, bool):
                raise ValidationError(f"line {lineno}: class_id must be an integer")
            if num_classes is not None and not (0 <= class_id < num_classes):
                raise ValidationError(
                    f"line {lineno}: class_id {class_id} outside [0, {num_classes})"
                )
            try:
                box = Box7.from_vector(box_vec)
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
            if min(box.l, box.w, box.h) < 1e-6:
                raise ValidationError(f"line {lineno}: box extents below 1e-6 are rejected")
            objects.append(GroundTruthObject(box=box, class_id=class_id))
        out[frame_id] = tuple(objects)
    return out


def attach_ground_truth(frames: Sequence[Frame], gt: Mapping[str, Sequence]) -> list[Frame]:
    """Return new frames with ground truth attached; every frame must have an entry."""
    missing = [f.frame_id for f in frames if f.frame_id not in gt]
    if missing:
        raise ValidationError(
            f"ground truth missing for {len(missing)} frame(s), e.g. {missing[:3]!r}"
        )
    return [
        Frame(frame_id=f.frame_id, heads=f.heads, ground_truth=tuple(gt[f.frame_id]))
        for f in frames
    ]


def parse_class_map(source) -> dict[int, str]:
    """Parse an ``id name`` class-map text stream.

    Ids must be unique and form the contiguous range 0..K-1.
    """
    mapping: dict[int, str] = {}
    for lineno, line in enumerate(_as_lines(source), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split(None, 1)
        if len(parts) != 2:
            raise ValidationError(f"line {lineno}: expected 'id name', got {stripped!r}")
        try:
            cid = int(parts[0])
        except ValueError:
            raise ValidationError(f"line {lineno}: class id must be an integer") from None
        if cid in mapping:
            raise ValidationError(f"line {lineno}: duplicate class id {cid}")
        mapping[cid] = parts[1]
    if not mapping:
        raise ValidationError("class map is empty")
    if sorted(mapping) != list(range(len(mapping))):
        raise ValidationError(f"class ids must form 0..{len(mapping) - 1}, got {sorted(mapping)}")
    return mapping


def _detection_to_json(det: Detection) -> dict:
    return {
        "box": [float(v) for v in det.box.to_vector()],
        "log_var": [float(v) for v in det.log_var],
        "logits": [float(v) for v in det.cls.logits],
        "score": float(det.score),
    }


def write_frames(frames: Iterable[Frame], sink) -> None:
    """Write frames as detections JSONL to a path or file object."""
    own = isinstance(sink, (str, bytes))
    fh = open(sink, "w", encoding="utf-8") if own else sink
    try:
        for frame in frames:
            obj = {
                "frame_id": frame.frame_id,
                "heads": [[_detection_to_json(d) for d in head] for head in frame.heads],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    finally:
        if own:
            fh.close()


def write_ground_truth(gt: Mapping[str, Sequence], sink) -> None:
    """Write a ground-truth map as JSONL to a path or file object."""
    own = isinstance(sink, (str, bytes))
    fh = open(sink, "w", encoding="utf-8") if own else sink
    try:
        for frame_id, objects in gt.items():
            obj = {
                "frame_id": frame_id,
                "objects": [
                    {"box": [float(v) for v in o.box.to_vector()], "class_id": int(o.class_id)}
                    for o in objects
                ],
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    finally:
        if own:
            fh.close()


def round_sig(x: float, digits: int = _REPORT_SIG_DIGITS) -> float:
    """Round to ``digits`` significant digits (reports use 6)."""
    if x == 0.0:
        return 0.0
    return float(f"{x:.{digits}g}")


def _normalize_report_value(value, path: str):
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if not math.isfinite(v):
            raise NumericalError(f"non-finite value at report path {path!r}: {v!r}")
        return round_sig(v)
    if isinstance(value, Mapping):
        out = {}
        for k, v in value.items():
            if not isinstance(k, str):
                raise ValidationError(f"report keys must be strings, got {k!r} at {path!r}")
            out[k] = _normalize_report_value(v, f"{path}.{k}")
        return out
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_normalize_report_value(v, f"{path}[{i}]") for i, v in enumerate(value)]
    raise ValidationError(f"unsupported report value type {type(value).__name__} at {path!r}")


_REPORT_REQUIRED_KEYS = frozenset({"map", "partitions", "scores", "mce_cls", "ce_reg"})


class EvalReport:
    """Evaluation report with deterministic, round-trippable serialization.

    Floats are normalized to 6 significant digits on construction, so
    reading back a written report reproduces an equal object byte for byte.
    """

    __slots__ = ("data",)

    def __init__(self, data: Mapping):
        if not isinstance(data, Mapping):
            raise ValidationError("report data must be a mapping")
        missing = _REPORT_REQUIRED_KEYS - set(data)
        if missing:
            raise ContractError(f"report missing required keys: {sorted(missing)}")
        self.data = _normalize_report_value(dict(data), "$")

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2) + "\n"

    def __eq__(self, other) -> bool:
        if not isinstance(other, EvalReport):
            return NotImplemented
        return self.data == other.data

    def __repr__(self) -> str:
        return f"EvalReport(keys={sorted(self.data)!r})"


def write_report(report: EvalReport, sink) -> None:
    """Serialize a report as canonical JSON (sorted keys, 6 significant digits)."""
    if not isinstance(report, EvalReport):
        raise ValidationError("write_report expects an EvalReport")
    text = report.to_json()
    if isinstance(sink, (str, bytes)):
        with open(sink, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sink.write(text)


def read_report(source) -> EvalReport:
    """Parse a report written by :func:`write_report`."""
    if isinstance(source, (str, bytes)):
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    elif isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        text = source.read()
    else:
        text = str(source)
    try:
        data = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid report JSON: {exc}") from None
    return EvalReport(data)
