"""uqdet: probabilistic fusion and uncertainty evaluation for multi-head
3D object detections.

The library turns per-head detector outputs (oriented boxes with predicted
variances and class logits) into consensus-fused detections with epistemic
and aleatoric uncertainty summaries, then scores them against ground truth
with proper scoring rules, calibration errors, and AP40 across an IoU
threshold sweep.
"""

from .calibrate import TemperatureFit, apply_temperature, fit_temperature
from .config import PipelineConfig, parse_config_text, split_frame_ids
from .detmodel import (
    ClassDistribution,
    Detection,
    EvalReport,
    Frame,
    GroundTruthObject,
    parse_class_map,
    parse_frames,
    parse_ground_truth,
    read_report,
    write_frames,
    write_ground_truth,
    write_report,
)
from .errors import ContractError, NumericalError, UqdetError, ValidationError
from .fusion import (
    Cluster,
    FusedDetection,
    aleatoric_total_variance,
    cluster_consensus,
    epistemic_total_variance,
    fuse_frame,
    merge_cluster,
    mixture_moments,
    nms,
    parse_fused,
    write_fused,
)
from .geometry import (
    Box7,
    ConvexPolygon,
    bev_footprint,
    bev_iou,
    convex_intersection_area,
    iou_3d,
    iou_matrix,
    wrap_angle,
    wrap_residual,
)
from .losses import (
    LossConfig,
    aleatoric_regression_loss,
    focal_loss_softmax,
    gradient_check_report,
    log_bessel_i0,
    smooth_l1_loss,
    von_mises_loss,
)
from .metrics import (
    ap40,
    brier,
    energy_score,
    evaluate_sweep,
    marginal_calibration_error,
    mutual_information,
    nll_classification,
    nll_regression_gaussian,
    regression_calibration_error,
    shannon_entropy,
)
from .partition import F1Threshold, PartitionResult, f1_score_threshold, match_partitions
from .pipeline import build_report, fuse_frames, run_evaluate, run_fuse, run_losses_check, run_synth
from .synth import SynthConfig, SynthResult, generate, oracle_expected_nll_reg

__version__ = "0.1.0"

__all__ = [
    "Box7",
    "ClassDistribution",
    "Cluster",
    "ContractError",
    "ConvexPolygon",
    "Detection",
    "EvalReport",
    "F1Threshold",
    "Frame",
    "FusedDetection",
    "GroundTruthObject",
    "LossConfig",
    "NumericalError",
    "PartitionResult",
    "PipelineConfig",
    "SynthConfig",
    "SynthResult",
    "TemperatureFit",
    "UqdetError",
    "ValidationError",
    "aleatoric_regression_loss",
    "aleatoric_total_variance",
    "ap40",
    "apply_temperature",
    "bev_footprint",
    "bev_iou",
    "brier",
    "build_report",
    "cluster_consensus",
    "convex_intersection_area",
    "energy_score",
    "epistemic_total_variance",
    "evaluate_sweep",
    "f1_score_threshold",
    "fit_temperature",
    "focal_loss_softmax",
    "fuse_frame",
    "fuse_frames",
    "generate",
    "gradient_check_report",
    "iou_3d",
    "iou_matrix",
    "log_bessel_i0",
    "marginal_calibration_error",
    "match_partitions",
    "merge_cluster",
    "mixture_moments",
    "mutual_information",
    "nll_classification",
    "nll_regression_gaussian",
    "nms",
    "oracle_expected_nll_reg",
    "parse_class_map",
    "parse_config_text",
    "parse_frames",
    "parse_fused",
    "parse_ground_truth",
    "read_report",
    "regression_calibration_error",
    "run_evaluate",
    "run_fuse",
    "run_losses_check",
    "run_synth",
    "shannon_entropy",
    "split_frame_ids",
    "von_mises_loss",
    "wrap_angle",
    "wrap_residual",
    "write_frames",
    "write_fused",
    "write_ground_truth",
    "write_report",
]
