"""Command-line interface: fuse, evaluate, synth, losses-check."""

from __future__ import annotations

import functools
import sys

import click

from .config import load_pipeline_config, parse_config_text
from .errors import UqdetError
from .pipeline import run_evaluate, run_fuse, run_losses_check, run_synth
from .synth import SynthConfig


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except UqdetError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)

    return wrapper


_PIPELINE_FLAGS = (
    click.option("--heads", type=int, default=None, help="Number of detector heads."),
    click.option("--classes", type=int, default=None, help="Number of classes."),
    click.option("--nms-iou", type=float, default=None, help="Per-head NMS BEV IoU threshold."),
    click.option("--cluster-iou", type=float, default=None, help="Consensus clustering IoU threshold."),
    click.option(
        "--cluster-metric",
        type=click.Choice(["bev", "3d"]),
        default=None,
        help="IoU flavor used by clustering.",
    ),
    click.option("--min-cluster-size", type=int, default=None, help="Override the majority rule."),
    click.option("--tp-iou", type=float, default=None, help="IoU for the headline partition counts."),
    click.option("--iou-min", type=float, default=None, help="Sweep start (inclusive)."),
    click.option("--iou-max", type=float, default=None, help="Sweep end (inclusive)."),
    click.option("--iou-step", type=float, default=None, help="Sweep step."),
    click.option("--mce-bins", type=int, default=None, help="Probability bins for MCE."),
    click.option("--ce-levels", type=int, default=None, help="Quantile levels for regression CE."),
    click.option("--energy-samples", type=int, default=None, help="Monte-Carlo samples per energy score."),
    click.option("--seed", type=int, default=None, help="Base seed for stochastic metrics."),
    click.option(
        "--split",
        type=click.Choice(["hash", "alternate"]),
        default=None,
        help="Recal/eval frame split rule.",
    ),
    click.option(
        "--class-aware-fp-ml",
        type=click.BOOL,
        default=None,
        help="Require class agreement for FP_ML (true/false).",
    ),
    click.option(
        "--calibrate-conditioning",
        type=click.Choice(["argmax", "gt_label"]),
        default=None,
        help="Which detections enter class k's temperature fit.",
    ),
    click.option("--background-class-id", type=int, default=None, help="Class id scored for FP_BG."),
)


def _pipeline_options(fn):
    for opt in reversed(_PIPELINE_FLAGS):
        fn = opt(fn)
    return fn


_PIPELINE_KEYS = (
    "heads",
    "classes",
    "nms_iou",
    "cluster_iou",
    "cluster_metric",
    "min_cluster_size",
    "tp_iou",
    "iou_min",
    "iou_max",
    "iou_step",
    "mce_bins",
    "ce_levels",
    "energy_samples",
    "seed",
    "split",
    "class_aware_fp_ml",
    "calibrate_conditioning",
    "background_class_id",
)


def _build_config(config_path, kwargs):
    overrides = {k: kwargs[k] for k in _PIPELINE_KEYS}
    return load_pipeline_config(config_path, **overrides)


@click.group()
def uqdet():
    """Fuse multi-head 3D detections and evaluate their uncertainty."""


@uqdet.command()
@click.option("--dets", "dets_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--workers", type=int, default=1, show_default=True, help="Process pool size.")
@_pipeline_options
@_handle_errors
def fuse(dets_path, config_path, out_path, workers, **kwargs):
    """NMS each head, cluster across heads, merge, write fused JSONL."""
    config = _build_config(config_path, kwargs)
    n = run_fuse(dets_path, out_path, config, workers)
    click.echo(f"fused {n} frames -> {out_path}")


@uqdet.command()
@click.option("--fused", "fused_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@click.option("--calibration-out", type=click.Path(dir_okay=False), default=None)
@_pipeline_options
@_handle_errors
def evaluate(fused_path, gt_path, config_path, out_path, calibration_out, **kwargs):
    """Run the IoU sweep and write (or print) the evaluation report."""
    config = _build_config(config_path, kwargs)
    report = run_evaluate(fused_path, gt_path, config, out_path, calibration_out)
    if out_path is None:
        click.echo(report.to_json(), nl=False)
    else:
        click.echo(f"report -> {out_path}")


@uqdet.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--frames", type=int, default=None)
@click.option("--heads", type=int, default=None)
@click.option("--classes", type=int, default=None)
@click.option("--gt-per-frame", type=float, default=None)
@click.option("--miss-rate", type=float, default=None)
@click.option("--fp-bg-rate", type=float, default=None)
@click.option("--box-noise-sigma", type=str, default=None, help="7 comma-separated std devs.")
@click.option("--logit-temperature", type=float, default=None)
@click.option("--variance-honesty", type=float, default=None)
@click.option("--target-confidence", type=str, default=None, help="Value or lo,hi range.")
@_handle_errors
def synth(config_path, out_dir, box_noise_sigma, target_confidence, **kwargs):
    """Generate a synthetic multi-head dataset with oracle sidecar."""
    mapping = {}
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as fh:
            mapping = parse_config_text(fh.read())
    overrides = dict(kwargs)
    if box_noise_sigma is not None:
        overrides["box_noise_sigma"] = tuple(float(p) for p in box_noise_sigma.split(","))
    if target_confidence is not None:
        parts = [float(p) for p in target_confidence.split(",")]
        overrides["target_confidence"] = parts[0] if len(parts) == 1 else tuple(parts)
    cfg = SynthConfig.from_mapping(mapping, **overrides)
    paths = run_synth(cfg, out_dir)
    for name, path in sorted(paths.items()):
        click.echo(f"{name} -> {path}")


@uqdet.command("losses-check")
@click.option("--samples", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=20240917, show_default=True)
@_handle_errors
def losses_check(samples, seed):
    """Verify analytic loss gradients against finite differences."""
    report, ok = run_losses_check(samples=samples, seed=seed)
    width = max(len(name) for name in report["losses"])
    for name, entry in report["losses"].items():
        click.echo(
            f"{name:<{width}}  max rel err {entry['max_rel_error']:.3e}  "
            f"({entry['gradient_checks']} checks)"
        )
    click.echo(
        f"overall max rel err {report['max_rel_error']:.3e} over "
        f"{report['total_checks']} checks in {report['elapsed_seconds']:.2f}s"
    )
    click.echo("PASS" if ok else "FAIL")
    if not ok:
        sys.exit(1)


def main():
    uqdet(prog_name="uqdet")


if __name__ == "__main__":
    main()
