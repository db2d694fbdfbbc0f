"""Training losses with hand-derived gradients.

Everything here is closed form: attenuated (heteroscedastic) regression,
a von Mises negative log-likelihood for heading with a regularized
concentration, softmax focal loss, and smooth L1.  Gradients are returned
alongside each loss so they can be verified against finite differences
without any autodiff framework.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .geometry import wrap_residual

# Switch point between the power series and the asymptotic expansion of I0.
BESSEL_SWITCH = 15.0

# Default kappa regularizer: lambda_0 = ln(pi^2 / 3), the log-variance of a
# uniform heading on (-pi, pi].
LAMBDA_0 = math.log(math.pi**2 / 3.0)

YAW_INDEX = 6


@dataclass(frozen=True)
class LossConfig:
    """Hyperparameters shared by the loss functions."""

    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    lambda_v: float = 1.0
    lambda_0: float = LAMBDA_0
    smooth_l1_delta: float = 1.0 / 9.0

    def __post_init__(self):
        if self.focal_gamma < 0.0:
            raise ValidationError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if not (0.0 < self.focal_alpha <= 1.0):
            raise ValidationError(f"focal_alpha must lie in (0, 1], got {self.focal_alpha}")
        if self.lambda_v < 0.0:
            raise ValidationError(f"lambda_v must be >= 0, got {self.lambda_v}")
        if self.smooth_l1_delta <= 0.0:
            raise ValidationError(f"smooth_l1_delta must be > 0, got {self.smooth_l1_delta}")


DEFAULT_LOSS_CONFIG = LossConfig()


def _check_vectors(*arrays) -> list[np.ndarray]:
    out = []
    length = None
    for arr in arrays:
        a = np.asarray(arr, dtype=float).reshape(-1)
        if not np.all(np.isfinite(a)):
            raise ValidationError(f"loss inputs must be finite: {a!r}")
        if length is None:
            length = a.size
        elif a.size != length:
            raise ValidationError("loss inputs must have matching lengths")
        out.append(a)
    if length == 0:
        raise ValidationError("loss inputs must be non-empty")
    return out


def _residuals(y_gt: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Per-dimension residuals u - y, with the yaw dimension wrapped.

    Wrapping applies to index 6 when the vectors have 7 entries (box layout);
    shorter vectors are treated as purely linear.
    """
    r = u - y_gt
    if r.size == 7:
        r[YAW_INDEX] = wrap_residual(r[YAW_INDEX])
    return r


def aleatoric_regression_loss(y_gt, u, log_var) -> tuple[float, np.ndarray, np.ndarray]:
    """Attenuated L2 regression loss and its gradients.

    Per dimension the loss is ``0.5 * exp(-lv) * (u - y)^2 + 0.5 * lv`` and
    the total is the sum.  Returns ``(loss, dloss/du, dloss/dlog_var)``.
    """
    y, pred, lv = _check_vectors(y_gt, u, log_var)
    r = _residuals(y, pred)
    prec = np.exp(-lv)
    loss = float(np.sum(0.5 * prec * r * r + 0.5 * lv))
    grad_u = prec * r
    grad_lv = -0.5 * prec * r * r + 0.5
    if not math.isfinite(loss):
        raise NumericalError(f"aleatoric regression loss overflowed: {loss!r}")
    return loss, grad_u, grad_lv


def smooth_l1_loss(y_gt, u, delta: float = DEFAULT_LOSS_CONFIG.smooth_l1_delta) -> tuple[float, np.ndarray]:
    """Huber-style smooth L1: quadratic within ``delta``, linear outside.

    Returns ``(loss, dloss/du)``; the yaw dimension of 7-vectors is wrapped.
    """
    if delta <= 0.0:
        raise ValidationError(f"delta must be positive, got {delta}")
    y, pred = _check_vectors(y_gt, u)
    r = _residuals(y, pred)
    a = np.abs(r)
    quad = a <= delta
    loss = float(np.sum(np.where(quad, 0.5 * r * r / delta, a - 0.5 * delta)))
    grad = np.where(quad, r / delta, np.sign(r))
    return loss, grad


def _log_bessel_i0_series(x: float) -> float:
    """ln I0 via the ascending power series; accurate for small/moderate x."""
    q = 0.25 * x * x
    term = 1.0
    total = 1.0
    k = 0
    while True:
        k += 1
        term *= q / (k * k)
        total += term
        if term < 1e-18 * total:
            break
        if k > 600:  # pragma: no cover - series converges long before this
            raise NumericalError(f"I0 series failed to converge at x={x}")
    return math.log(total)


def _asymptotic_bracket(x: float, nu: int) -> float:
    """Bracket sum of the large-x expansion of I_nu, truncated adaptively.

    I_nu(x) ~ e^x / sqrt(2 pi x) * bracket(x, nu).  Terms follow the
    recurrence t_{k+1} = -t_k * (4 nu^2 - (2k+1)^2) / (8 (k+1) x); the sum is
    truncated when terms start growing (asymptotic series) or become
    negligible.
    """
    total = 1.0
    term = 1.0
    four_nu2 = 4.0 * nu * nu
    k = 0
    while True:
        nxt = -term * (four_nu2 - (2 * k + 1) ** 2) / (8.0 * (k + 1) * x)
        if abs(nxt) >= abs(term):
            break
        term = nxt
        total += term
        if abs(term) < 1e-18 * abs(total):
            break
        k += 1
    return total


def log_bessel_i0(x: float) -> float:
    """ln I0(x) for x >= 0, accurate over [0, ~700] without overflow.

    Uses the power series up to ``BESSEL_SWITCH`` and the exponentially
    scaled asymptotic expansion beyond it; the two branches agree at the
    switch to ~1e-15.
    """
    x = float(x)
    if not math.isfinite(x) or x < 0.0:
        raise ValidationError(f"log_bessel_i0 requires x >= 0, got {x!r}")
    if x <= BESSEL_SWITCH:
        return _log_bessel_i0_series(x)
    return x - 0.5 * math.log(2.0 * math.pi * x) + math.log(_asymptotic_bracket(x, 0))


def bessel_i1_i0_ratio(x: float) -> float:
    """A(x) = I1(x) / I0(x), the mean resultant length of a von Mises.

    Monotone from 0 at x = 0 toward 1 as x grows.  Small arguments use the
    two power series directly; large arguments use the ratio of asymptotic
    brackets (the e^x / sqrt(2 pi x) prefactors cancel).
    """
    x = float(x)
    if not math.isfinite(x) or x < 0.0:
        raise ValidationError(f"bessel_i1_i0_ratio requires x >= 0, got {x!r}")
    if x == 0.0:
        return 0.0
    if x <= BESSEL_SWITCH:
        q = 0.25 * x * x
        # I0 = sum t0_k, I1 = (x/2) * sum t1_k with matching recurrences.
        t0 = 1.0
        s0 = 1.0
        t1 = 1.0
        s1 = 1.0
        k = 0
        while True:
            k += 1
            t0 *= q / (k * k)
            t1 *= q / (k * (k + 1))
            s0 += t0
            s1 += t1
            if t0 < 1e-18 * s0 and t1 < 1e-18 * s1:
                break
        return 0.5 * x * s1 / s0
    return _asymptotic_bracket(x, 1) / _asymptotic_bracket(x, 0)


def _elu(z: float) -> float:
    return z if z > 0.0 else math.expm1(z)


def _elu_grad(z: float) -> float:
    return 1.0 if z > 0.0 else math.exp(z)


def von_mises_loss(
    theta: float,
    theta_t: float,
    log_var: float,
    config: LossConfig = DEFAULT_LOSS_CONFIG,
) -> tuple[float, float, float]:
    """Von Mises heading NLL with a soft penalty on tiny concentrations.

    With kappa = exp(-log_var) the loss is
    ``ln I0(kappa) - kappa cos(theta - theta_t) + lambda_v * ELU(log_var - lambda_0)``.
    Returns ``(loss, dloss/dtheta, dloss/dlog_var)``.
    """
    theta = float(theta)
    theta_t = float(theta_t)
    lv = float(log_var)
    for name, v in (("theta", theta), ("theta_t", theta_t), ("log_var", lv)):
        if not math.isfinite(v):
            raise ValidationError(f"{name} must be finite, got {v!r}")
    kappa = math.exp(-lv)
    if not math.isfinite(kappa):
        raise NumericalError(f"kappa overflowed for log_var={lv}")
    delta = theta - theta_t
    loss = (
        log_bessel_i0(kappa)
        - kappa * math.cos(delta)
        + config.lambda_v * _elu(lv - config.lambda_0)
    )
    grad_theta = kappa * math.sin(delta)
    # d kappa / d log_var = -kappa; d ln I0 / d kappa = A(kappa).
    ratio = bessel_i1_i0_ratio(kappa)
    grad_lv = -kappa * (ratio - math.cos(delta)) + config.lambda_v * _elu_grad(
        lv - config.lambda_0
    )
    if not math.isfinite(loss):
        raise NumericalError(f"von Mises loss overflowed: {loss!r}")
    return loss, grad_theta, grad_lv


def focal_loss_softmax(
    logits,
    label: int,
    config: LossConfig = DEFAULT_LOSS_CONFIG,
) -> tuple[float, np.ndarray]:
    """Softmax focal loss ``-alpha * (1 - p_t)^gamma * ln(p_t)`` with gradient.

    ``p_t`` is the softmax probability of the true class.  Returns
    ``(loss, dloss/dlogits)``; with gamma = 0 this reduces to weighted
    cross-entropy.
    """
    z = np.asarray(logits, dtype=float).reshape(-1)
    if z.size < 2:
        raise ValidationError("focal loss needs at least two classes")
    if not np.all(np.isfinite(z)):
        raise ValidationError(f"logits must be finite: {z!r}")
    if not isinstance(label, (int, np.integer)) or not (0 <= int(label) < z.size):
        raise ValidationError(f"label {label!r} outside [0, {z.size})")
    label = int(label)
    zs = z - z.max()
    e = np.exp(zs)
    p = e / e.sum()
    pt = float(p[label])
    pt = max(pt, 1e-300)
    gamma = config.focal_gamma
    alpha = config.focal_alpha
    one_minus = 1.0 - pt
    log_pt = math.log(pt)
    loss = -alpha * one_minus**gamma * log_pt
    # dL/dp_t, then chain through softmax: dp_t/dz_j = p_t (delta_tj - p_j).
    if gamma == 0.0:
        dl_dpt = -alpha / pt
    else:
        dl_dpt = alpha * gamma * one_minus ** (gamma - 1.0) * log_pt - alpha * one_minus**gamma / pt
    onehot = np.zeros_like(p)
    onehot[label] = 1.0
    grad = dl_dpt * pt * (onehot - p)
    if not math.isfinite(loss):
        raise NumericalError(f"focal loss overflowed: {loss!r}")
    return loss, grad


def _relative_error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric), 1e-8)
    return abs(analytic - numeric) / scale


def _central_diff(fn, x: float, h: float = 1e-5) -> float:
    return (fn(x + h) - fn(x - h)) / (2.0 * h)


def gradient_check_report(samples: int = 1000, seed: int = 20240917) -> dict:
    """Finite-difference verification of every analytic gradient.

    For each loss, ``samples`` random inputs are drawn away from
    non-smooth points (the wrap boundary, the smooth-L1 kink) and every
    partial derivative is compared against a central difference.  Returns a
    dict with per-loss maximum relative errors, counts, and elapsed time.
    """
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    cfg = DEFAULT_LOSS_CONFIG
    t0 = time.perf_counter()
    report: dict = {"samples": int(samples), "losses": {}}

    def record(name: str, max_err: float, checks: int):
        report["losses"][name] = {
            "max_rel_error": float(max_err),
            "gradient_checks": int(checks),
        }

    # Attenuated regression: 7-dim boxes, yaw residual kept away from +-pi.
    max_err = 0.0
    checks = 0
    for _ in range(samples):
        y = rng.normal(0.0, 2.0, size=7)
        u = y + rng.normal(0.0, 1.0, size=7)
        resid = rng.uniform(-2.9, 2.9)
        while abs(abs(resid) - math.pi) < 0.05:
            resid = rng.uniform(-2.9, 2.9)
        y[YAW_INDEX] = wrap_residual(rng.uniform(-math.pi, math.pi))
        u[YAW_INDEX] = y[YAW_INDEX] + resid
        lv = rng.uniform(-4.0, 4.0, size=7)
        _, gu, gl = aleatoric_regression_loss(y, u, lv)
        for d in range(7):
            def f_u(v, d=d):
                u2 = u.copy()
                u2[d] = v
                return aleatoric_regression_loss(y, u2, lv)[0]

            def f_l(v, d=d):
                l2 = lv.copy()
                l2[d] = v
                return aleatoric_regression_loss(y, u, l2)[0]

            max_err = max(max_err, _relative_error(gu[d], _central_diff(f_u, u[d])))
            max_err = max(max_err, _relative_error(gl[d], _central_diff(f_l, lv[d])))
            checks += 2
    record("aleatoric_regression", max_err, checks)

    # Von Mises: concentrations from ~0.02 up through the asymptotic branch.
    max_err = 0.0
    checks = 0
    for _ in range(samples):
        theta = rng.uniform(-math.pi, math.pi)
        theta_t = rng.uniform(-math.pi, math.pi)
        lv = rng.uniform(-5.5, 3.5)
        _, gt_, gl = von_mises_loss(theta, theta_t, lv, cfg)
        max_err = max(
            max_err,
            _relative_error(gt_, _central_diff(lambda v: von_mises_loss(v, theta_t, lv, cfg)[0], theta)),
            _relative_error(gl, _central_diff(lambda v: von_mises_loss(theta, theta_t, v, cfg)[0], lv)),
        )
        checks += 2
    record("von_mises", max_err, checks)

    # Softmax focal loss over 5 classes.  Saturated logits leave some
    # gradient components ~1e-9 while the loss stays O(1), so the default
    # step would drown them in subtractive cancellation; 1e-3 balances
    # cancellation against truncation (both scale with the component).
    max_err = 0.0
    checks = 0
    for _ in range(samples):
        z = rng.normal(0.0, 3.0, size=5)
        label = int(rng.integers(0, 5))
        _, grad = focal_loss_softmax(z, label, cfg)
        for j in range(5):
            def f_z(v, j=j):
                z2 = z.copy()
                z2[j] = v
                return focal_loss_softmax(z2, label, cfg)[0]

            max_err = max(max_err, _relative_error(grad[j], _central_diff(f_z, z[j], h=1e-3)))
            checks += 1
    record("focal_softmax", max_err, checks)

    # Smooth L1 on 7-dim boxes; residuals kept off the kink at |r| = delta.
    max_err = 0.0
    checks = 0
    delta = cfg.smooth_l1_delta
    for _ in range(samples):
        y = rng.normal(0.0, 1.0, size=7)
        r = rng.uniform(-0.5, 0.5, size=7)
        r[np.abs(np.abs(r) - delta) < 1e-4] += 3e-4
        r[np.abs(r) < 1e-4] += 3e-4
        u = y + r
        y[YAW_INDEX] = wrap_residual(y[YAW_INDEX])
        u[YAW_INDEX] = y[YAW_INDEX] + r[YAW_INDEX]
        _, grad = smooth_l1_loss(y, u, delta)
        for d in range(7):
            def f_u(v, d=d):
                u2 = u.copy()
                u2[d] = v
                return smooth_l1_loss(y, u2, delta)[0]

            max_err = max(max_err, _relative_error(grad[d], _central_diff(f_u, u[d])))
            checks += 1
    record("smooth_l1", max_err, checks)

    report["elapsed_seconds"] = time.perf_counter() - t0
    report["max_rel_error"] = max(v["max_rel_error"] for v in report["losses"].values())
    report["total_checks"] = sum(v["gradient_checks"] for v in report["losses"].values())
    return report
