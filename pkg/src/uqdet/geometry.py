"""Oriented-box geometry: BEV footprints, convex clipping, rotated IoU.

Boxes are upright: rotation is about the +z axis only, so the 3D overlap
factorizes into a rotated-rectangle intersection in the ground plane (BEV)
times a vertical interval overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError

TAU = 2.0 * math.pi

# Extents below this are degenerate for IoU purposes and rejected at ingestion.
MIN_EXTENT = 1e-6


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval [-pi, pi).

    The result is congruent to ``theta`` modulo 2*pi (up to float rounding).
    """
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValidationError(f"angle must be finite, got {theta!r}")
    wrapped = (theta + math.pi) % TAU - math.pi
    # Rounding in the modulo can land exactly on +pi; fold it back.
    if wrapped >= math.pi:
        wrapped -= TAU
    return wrapped


def wrap_residual(delta: float) -> float:
    """Wrap an angular difference to (-pi, pi].

    Mirror image of :func:`wrap_angle`; used for residuals so that a
    difference of exactly pi keeps its sign.
    """
    return -wrap_angle(-float(delta))


def wrap_residual_array(delta: np.ndarray) -> np.ndarray:
    """Vectorized :func:`wrap_residual`."""
    delta = np.asarray(delta, dtype=float)
    if not np.all(np.isfinite(delta)):
        raise ValidationError("angular residuals must be finite")
    wrapped = -((-delta + math.pi) % TAU - math.pi)
    np.subtract(wrapped, TAU, out=wrapped, where=wrapped > math.pi)
    return wrapped


@dataclass(frozen=True)
class Box7:
    """Oriented 3D box: center (x, y, z), extents (l, w, h), yaw about +z.

    Lengths are in meters and must be positive; ``l`` lies along the heading
    axis at yaw = 0 and ``z`` is the center of the vertical extent.  The yaw
    is normalized to [-pi, pi) on construction.
    """

    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    yaw: float

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.l, self.w, self.h, self.yaw)
        if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals):
            raise ValidationError(f"box parameters must be finite numbers: {vals!r}")
        if self.l <= 0.0 or self.w <= 0.0 or self.h <= 0.0:
            raise ValidationError(
                f"box extents must be positive, got l={self.l} w={self.w} h={self.h}"
            )
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "z", float(self.z))
        object.__setattr__(self, "l", float(self.l))
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @classmethod
    def from_vector(cls, vec: Sequence[float]) -> "Box7":
        vec = np.asarray(vec, dtype=float).reshape(-1)
        if vec.shape != (7,):
            raise ValidationError(f"box vector must have 7 entries, got shape {vec.shape}")
        return cls(*[float(v) for v in vec])

    def to_vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.l, self.w, self.h, self.yaw])

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    @property
    def bev_area(self) -> float:
        return self.l * self.w

    @property
    def bev_circumradius(self) -> float:
        """Radius of the smallest circle around the footprint, centered at (x, y)."""
        return 0.5 * math.hypot(self.l, self.w)

    @property
    def z_bounds(self) -> tuple[float, float]:
        half = 0.5 * self.h
        return (self.z - half, self.z + half)


class ConvexPolygon:
    """Convex polygon in the BEV plane with counter-clockwise vertices.

    An empty polygon (no vertices) is allowed and has zero area.  The vertex
    array is read-only once constructed.
    """

    __slots__ = ("vertices",)

    def __init__(self, vertices):
        v = np.asarray(vertices, dtype=float)
        if v.size == 0:
            v = np.empty((0, 2))
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValidationError(f"polygon vertices must be (n, 2), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("polygon vertices must be finite")
        if 0 < len(v) < 3:
            raise ValidationError("polygon needs at least 3 vertices (or none)")
        if len(v) >= 3 and _signed_area(v) < -1e-9:
            raise ValidationError("polygon vertices must be counter-clockwise")
        v = v.copy()
        v.setflags(write=False)
        self.vertices = v

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) == 0

    @property
    def area(self) -> float:
        if len(self.vertices) < 3:
            return 0.0
        return max(_signed_area(self.vertices), 0.0)

    def __len__(self) -> int:
        return len(self.vertices)

    def __repr__(self) -> str:
        return f"ConvexPolygon({self.vertices.tolist()!r})"


def _signed_area(v: np.ndarray) -> float:
    """Shoelace signed area; positive for counter-clockwise order."""
    x = v[:, 0]
    y = v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def bev_footprint(box: Box7) -> ConvexPolygon:
    """Counter-clockwise rectangle of the box footprint in the ground plane."""
    c = math.cos(box.yaw)
    s = math.sin(box.yaw)
    hl = 0.5 * box.l
    hw = 0.5 * box.w
    # Corners counter-clockwise in the box frame, then rotated and shifted.
    corners = np.array(
        [
            [hl, hw],
            [-hl, hw],
            [-hl, -hw],
            [hl, -hw],
        ]
    )
    rot = np.array([[c, -s], [s, c]])
    return ConvexPolygon(corners @ rot.T + np.array([box.x, box.y]))


def convex_intersection_area(a: ConvexPolygon, b: ConvexPolygon) -> float:
    """Area of the intersection of two convex polygons.

    Sutherland-Hodgman clipping of ``a`` against each edge of ``b``, then the
    shoelace formula.  Degenerate overlaps (shared edge or vertex only) give
    an area of 0 up to float rounding; the result is clamped to be
    non-negative.
    """
    if a.is_empty or b.is_empty:
        return 0.0
    poly = [(float(p[0]), float(p[1])) for p in a.vertices]
    clipper = b.vertices
    n_clip = len(clipper)
    for i in range(n_clip):
        if not poly:
            return 0.0
        ex0, ey0 = float(clipper[i][0]), float(clipper[i][1])
        ex1, ey1 = float(clipper[(i + 1) % n_clip][0]), float(clipper[(i + 1) % n_clip][1])
        dx = ex1 - ex0
        dy = ey1 - ey0
        out = []
        prev = poly[-1]
        dprev = dx * (prev[1] - ey0) - dy * (prev[0] - ex0)
        for cur in poly:
            dcur = dx * (cur[1] - ey0) - dy * (cur[0] - ex0)
            if dcur >= 0.0:
                if dprev < 0.0:
                    t = dprev / (dprev - dcur)
                    out.append(
                        (prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1]))
                    )
                out.append(cur)
            elif dprev >= 0.0:
                t = dprev / (dprev - dcur)
                out.append(
                    (prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1]))
                )
            prev = cur
            dprev = dcur
        poly = out
    if len(poly) < 3:
        return 0.0
    area = 0.0
    px, py = poly[-1]
    for cx, cy in poly:
        area += px * cy - cx * py
        px, py = cx, cy
    return max(0.5 * area, 0.0)


def _bev_quick_reject(a: Box7, b: Box7) -> bool:
    """True when the footprint circumcircles are disjoint (IoU must be 0)."""
    dx = a.x - b.x
    dy = a.y - b.y
    r = a.bev_circumradius + b.bev_circumradius
    return dx * dx + dy * dy > r * r


def bev_iou(a: Box7, b: Box7) -> float:
    """Intersection-over-union of the two footprints in the ground plane."""
    if _bev_quick_reject(a, b):
        return 0.0
    inter = convex_intersection_area(bev_footprint(a), bev_footprint(b))
    union = a.bev_area + b.bev_area - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_3d(a: Box7, b: Box7) -> float:
    """3D IoU of two upright boxes.

    The intersection volume is the BEV footprint intersection area times the
    overlap of the vertical extents.
    """
    za0, za1 = a.z_bounds
    zb0, zb1 = b.z_bounds
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0.0:
        return 0.0
    if _bev_quick_reject(a, b):
        return 0.0
    inter_area = convex_intersection_area(bev_footprint(a), bev_footprint(b))
    inter = inter_area * dz
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_matrix(boxes_a: Sequence[Box7], boxes_b: Sequence[Box7], mode: str = "3d") -> np.ndarray:
    """Pairwise IoU matrix with shape (len(boxes_a), len(boxes_b)).

    ``mode`` selects :func:`iou_3d` (default) or :func:`bev_iou`.
    """
    if mode == "3d":
        fn = iou_3d
    elif mode == "bev":
        fn = bev_iou
    else:
        raise ValidationError(f"unknown IoU mode {mode!r}")
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = fn(a, b)
    return out
