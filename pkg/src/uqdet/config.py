"""Pipeline configuration, the key=value config-file grammar, and frame splits."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import ValidationError


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines into a string mapping.

    Blank lines and ``#`` comments are ignored; inline comments after a value
    are not supported.  Duplicate keys are an error.
    """
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValidationError(f"config line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ValidationError(f"config line {lineno}: empty key or value")
        if key in out:
            raise ValidationError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(value: str, target_type, key: str):
    try:
        if target_type is bool:
            low = value.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(value)
        return target_type(value)
    except (TypeError, ValueError):
        raise ValidationError(
            f"config key {key!r}: cannot parse {value!r} as {target_type.__name__}"
        ) from None


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for fusion and for the evaluation sweep.

    ``min_cluster_size`` of None means the consensus default, a strict
    majority of the heads.  The sweep runs IoU thresholds from ``iou_min``
    to ``iou_max`` inclusive in steps of ``iou_step``.
    """

    heads: int = 2
    classes: int = 3
    nms_iou: float = 0.5
    cluster_iou: float = 0.5
    cluster_metric: str = "bev"
    min_cluster_size: int | None = None
    tp_iou: float = 0.5
    iou_min: float = 0.5
    iou_max: float = 0.95
    iou_step: float = 0.05
    mce_bins: int = 10
    ce_levels: int = 10
    energy_samples: int = 256
    seed: int = 0
    split: str = "hash"
    class_aware_fp_ml: bool = True
    calibrate_conditioning: str = "argmax"
    background_class_id: int | None = None

    def __post_init__(self):
        if self.heads < 1:
            raise ValidationError(f"heads must be >= 1, got {self.heads}")
        if self.classes < 2:
            raise ValidationError(f"classes must be >= 2, got {self.classes}")
        for name in ("nms_iou", "cluster_iou"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValidationError(f"{name} must lie in (0, 1), got {v}")
        if self.cluster_metric not in ("bev", "3d"):
            raise ValidationError(f"cluster_metric must be 'bev' or '3d', got {self.cluster_metric!r}")
        if self.min_cluster_size is not None and not (1 <= self.min_cluster_size <= self.heads):
            raise ValidationError(
                f"min_cluster_size must lie in [1, heads], got {self.min_cluster_size}"
            )
        if self.tp_iou <= 0.1:
            raise ValidationError(f"tp_iou must exceed 0.1, got {self.tp_iou}")
        if not (0.1 < self.iou_min <= self.iou_max <= 1.0):
            raise ValidationError(
                f"need 0.1 < iou_min <= iou_max <= 1.0, got [{self.iou_min}, {self.iou_max}]"
            )
        if self.iou_step <= 0.0:
            raise ValidationError(f"iou_step must be positive, got {self.iou_step}")
        if self.mce_bins < 2:
            raise ValidationError(f"mce_bins must be >= 2, got {self.mce_bins}")
        if self.ce_levels < 2:
            raise ValidationError(f"ce_levels must be >= 2, got {self.ce_levels}")
        if self.energy_samples < 2:
            raise ValidationError(f"energy_samples must be >= 2, got {self.energy_samples}")
        if self.split not in ("hash", "alternate"):
            raise ValidationError(f"split must be 'hash' or 'alternate', got {self.split!r}")
        if self.calibrate_conditioning not in ("argmax", "gt_label"):
            raise ValidationError(
                f"calibrate_conditioning must be 'argmax' or 'gt_label', "
                f"got {self.calibrate_conditioning!r}"
            )
        if self.background_class_id is not None and not (
            0 <= self.background_class_id < self.classes
        ):
            raise ValidationError(
                f"background_class_id {self.background_class_id} outside [0, {self.classes})"
            )

    @property
    def effective_min_cluster_size(self) -> int:
        """Strict majority of heads unless overridden."""
        if self.min_cluster_size is not None:
            return self.min_cluster_size
        return self.heads // 2 + 1

    def sweep_thresholds(self) -> tuple[float, ...]:
        out = []
        i = 0
        while True:
            t = round(self.iou_min + i * self.iou_step, 10)
            if t > self.iou_max + 1e-9:
                break
            out.append(min(t, 1.0))
            i += 1
        if not out:
            raise ValidationError("IoU sweep is empty")
        return tuple(out)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str], **overrides) -> "PipelineConfig":
        """Build from a string mapping (config file) plus keyword overrides.

        Unknown keys are rejected to catch typos.  Overrides with value None
        are ignored.
        """
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs: dict = {}
        for key, raw in mapping.items():
            if key not in fields:
                raise ValidationError(f"unknown config key {key!r}")
            kwargs[key] = _parse_field(key, raw)
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in fields:
                raise ValidationError(f"unknown config key {key!r}")
            kwargs[key] = value
        return cls(**kwargs)

    def to_mapping(self) -> dict:
        out = dataclasses.asdict(self)
        return out


_FIELD_TYPES = {
    "heads": int,
    "classes": int,
    "nms_iou": float,
    "cluster_iou": float,
    "cluster_metric": str,
    "min_cluster_size": int,
    "tp_iou": float,
    "iou_min": float,
    "iou_max": float,
    "iou_step": float,
    "mce_bins": int,
    "ce_levels": int,
    "energy_samples": int,
    "seed": int,
    "split": str,
    "class_aware_fp_ml": bool,
    "calibrate_conditioning": str,
    "background_class_id": int,
}


def _parse_field(key: str, raw: str):
    if key in ("min_cluster_size", "background_class_id") and raw.lower() == "none":
        return None
    return _coerce(raw, _FIELD_TYPES[key], key)


def load_pipeline_config(path: str | None, **overrides) -> PipelineConfig:
    """Read a key=value config file (optional) and apply CLI overrides."""
    mapping: dict[str, str] = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            mapping = parse_config_text(fh.read())
    return PipelineConfig.from_mapping(mapping, **overrides)


def split_frame_ids(frame_ids: Sequence[str], mode: str = "hash") -> tuple[list[str], list[str]]:
    """Split frame ids into (recalibration, evaluation) halves.

    ``hash`` assigns by the parity of the first byte of sha1(frame_id), so
    membership is a pure function of the id.  ``alternate`` assigns by
    position: even indices recalibrate, odd indices evaluate.
    """
    recal: list[str] = []
    ev: list[str] = []
    if mode == "hash":
        for fid in frame_ids:
            digest = hashlib.sha1(fid.encode("utf-8")).digest()
            (recal if digest[0] % 2 == 0 else ev).append(fid)
    elif mode == "alternate":
        for i, fid in enumerate(frame_ids):
            (recal if i % 2 == 0 else ev).append(fid)
    else:
        raise ValidationError(f"unknown split mode {mode!r}")
    return recal, ev
