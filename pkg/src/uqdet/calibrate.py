"""Temperature scaling for class distributions.

A single scalar temperature per class divides the logits before the softmax.
Fitting minimizes the mean classification NLL on held-out matched detections
via golden-section search; a guard keeps the identity temperature whenever it
is at least as good, so calibration can never hurt the fit criterion.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from .detmodel import ClassDistribution
from .errors import ValidationError

TEMPERATURE_BOUNDS = (0.05, 20.0)
TEMPERATURE_TOL = 1e-4

# Below this many samples a fit is unreliable; fall back to T = 1.
MIN_FIT_SAMPLES = 10

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


class TemperatureFit(NamedTuple):
    """Result of a per-class temperature fit."""

    temperature: float
    nll: float
    fitted: bool
    samples: int


def _nll_at(logit_matrix: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    """Mean NLL of labels under softmax(logits / T)."""
    z = logit_matrix / temperature
    m = z.max(axis=1)
    lse = m + np.log(np.exp(z - m[:, None]).sum(axis=1))
    picked = z[np.arange(len(labels)), labels]
    return float(np.mean(lse - picked))


def _golden_section(fn, lo: float, hi: float, tol: float) -> float:
    """Minimize a unimodal function on [lo, hi] to within ``tol``."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc = fn(c)
    fd = fn(d)
    while (b - a) > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def fit_temperature(
    logits: Sequence,
    labels: Sequence[int],
    bounds: tuple[float, float] = TEMPERATURE_BOUNDS,
    tol: float = TEMPERATURE_TOL,
) -> TemperatureFit:
    """Fit a scalar temperature minimizing mean NLL of ``labels``.

    ``logits`` is an (n, K) array-like, ``labels`` the matching integer
    ground-truth classes.  With fewer than ``MIN_FIT_SAMPLES`` samples the
    identity temperature is returned with ``fitted=False``.
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (0.0 < lo < hi):
        raise ValidationError(f"invalid temperature bounds {bounds!r}")
    z = np.asarray(logits, dtype=float)
    if z.ndim == 1:
        z = z.reshape(1, -1)
    y = np.asarray(labels, dtype=int).reshape(-1)
    if z.ndim != 2 or z.shape[0] != y.size:
        raise ValidationError(
            f"logits {z.shape} and labels {y.shape} must agree on sample count"
        )
    n = int(y.size)
    if n == 0:
        return TemperatureFit(temperature=1.0, nll=math.nan, fitted=False, samples=0)
    if not np.all(np.isfinite(z)):
        raise ValidationError("logits must be finite")
    if np.any(y < 0) or np.any(y >= z.shape[1]):
        raise ValidationError(f"labels must lie in [0, {z.shape[1]})")
    if n < MIN_FIT_SAMPLES:
        return TemperatureFit(temperature=1.0, nll=_nll_at(z, y, 1.0), fitted=False, samples=n)

    t_star = _golden_section(lambda t: _nll_at(z, y, t), lo, hi, tol)
    nll_star = _nll_at(z, y, t_star)
    nll_one = _nll_at(z, y, 1.0)
    # Guard: never return a temperature worse than the identity.
    if nll_one <= nll_star and lo <= 1.0 <= hi:
        return TemperatureFit(temperature=1.0, nll=nll_one, fitted=True, samples=n)
    return TemperatureFit(temperature=float(t_star), nll=nll_star, fitted=True, samples=n)


def apply_temperature(cls: ClassDistribution, temperature: float) -> ClassDistribution:
    """Return a new distribution with logits divided by ``temperature``.

    Temperatures above 1 flatten the distribution, below 1 sharpen it; the
    argmax class never changes.
    """
    t = float(temperature)
    if not math.isfinite(t) or t <= 0.0:
        raise ValidationError(f"temperature must be positive and finite, got {temperature!r}")
    if t == 1.0:
        return cls
    return ClassDistribution(cls.logits / t)
