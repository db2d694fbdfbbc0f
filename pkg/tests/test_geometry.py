"""Geometry tests: angle wrapping, footprints, polygon clipping, IoU.

Analytic IoU values are cross-checked against grid-center counting
oracles from tests/oracles.py; the oracles themselves are validated
against a literal meshgrid on a handful of pairs.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from uqdet.errors import ValidationError
from uqdet.geometry import (
    Box7,
    ConvexPolygon,
    bev_footprint,
    bev_iou,
    convex_intersection_area,
    iou_3d,
    iou_matrix,
    wrap_angle,
    wrap_residual,
    wrap_residual_array,
)


def box(x=0.0, y=0.0, z=0.0, l=4.0, w=2.0, h=1.5, yaw=0.0):
    return Box7(x=x, y=y, z=z, l=l, w=w, h=h, yaw=yaw)


class TestWrapAngle:
    def test_identity_inside_range(self):
        for theta in (-math.pi, -1.0, 0.0, 1.0, 3.0):
            assert wrap_angle(theta) == pytest.approx(theta, abs=0.0)

    def test_half_open_interval(self):
        assert wrap_angle(math.pi) == pytest.approx(-math.pi)
        assert wrap_angle(-math.pi) == -math.pi

    @given(st.floats(-50.0, 50.0))
    def test_range(self, theta):
        w = wrap_angle(theta)
        assert -math.pi <= w < math.pi

    @given(st.floats(-20.0, 20.0), st.integers(-3, 3))
    def test_period(self, theta, k):
        """Adding full turns never changes the wrapped value (mod float noise)."""
        a = wrap_angle(theta)
        b = wrap_angle(theta + 2.0 * math.pi * k)
        assert min(abs(a - b), 2.0 * math.pi - abs(a - b)) < 1e-9

    def test_residual_half_open_other_side(self):
        """Residuals live in (-pi, pi]: pi stays pi, -pi flips to pi."""
        assert wrap_residual(math.pi) == pytest.approx(math.pi)
        assert wrap_residual(-math.pi) == pytest.approx(math.pi)
        assert wrap_residual(0.3) == pytest.approx(0.3)
        # Opposite headings separated by 0.2 across the branch cut.
        assert wrap_residual((math.pi - 0.1) - (-math.pi + 0.1)) == pytest.approx(-0.2)

    def test_residual_array_matches_scalar(self):
        deltas = np.linspace(-10.0, 10.0, 201)
        arr = wrap_residual_array(deltas)
        for d, a in zip(deltas, arr):
            assert a == pytest.approx(wrap_residual(float(d)), abs=1e-12)


class TestBox7:
    def test_yaw_normalized_on_construction(self):
        b = box(yaw=4.0)
        assert -math.pi <= b.yaw < math.pi
        assert b.yaw == pytest.approx(4.0 - 2.0 * math.pi)

    def test_vector_round_trip(self):
        v = np.array([1.0, -2.0, 0.5, 4.2, 1.8, 1.6, 0.7])
        b = Box7.from_vector(v)
        np.testing.assert_allclose(b.to_vector(), v)

    def test_volume_and_area(self):
        b = box(l=4.0, w=2.0, h=1.5)
        assert b.bev_area == pytest.approx(8.0)
        assert b.volume == pytest.approx(12.0)

    def test_rejects_nonpositive_extents(self):
        with pytest.raises(ValidationError):
            box(l=0.0)
        with pytest.raises(ValidationError):
            box(h=-1.0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            box(x=math.nan)
        with pytest.raises(ValidationError):
            box(yaw=math.inf)

    def test_z_bounds(self):
        b = box(z=1.0, h=2.0)
        assert b.z_bounds == (pytest.approx(0.0), pytest.approx(2.0))


class TestFootprint:
    def test_axis_aligned_corners(self):
        poly = bev_footprint(box(x=10.0, y=-5.0, l=4.0, w=2.0, yaw=0.0))
        got = {(round(px, 9), round(py, 9)) for px, py in poly.vertices}
        assert got == {(12.0, -4.0), (8.0, -4.0), (8.0, -6.0), (12.0, -6.0)}

    def test_counter_clockwise(self):
        poly = bev_footprint(box(yaw=0.4))
        v = np.asarray(poly.vertices)
        area2 = 0.0
        for i in range(len(v)):
            j = (i + 1) % len(v)
            area2 += v[i, 0] * v[j, 1] - v[j, 0] * v[i, 1]
        assert area2 > 0

    @given(st.floats(-math.pi, math.pi))
    def test_rotation_preserves_area(self, yaw):
        poly = bev_footprint(box(l=3.0, w=1.5, yaw=yaw))
        v = np.asarray(poly.vertices)
        area2 = 0.0
        for i in range(len(v)):
            j = (i + 1) % len(v)
            area2 += v[i, 0] * v[j, 1] - v[j, 0] * v[i, 1]
        assert 0.5 * area2 == pytest.approx(4.5, rel=1e-9)


class TestConvexIntersection:
    def test_identical_squares(self):
        p = bev_footprint(box(l=2.0, w=2.0))
        assert convex_intersection_area(p, p) == pytest.approx(4.0)

    def test_offset_unit_squares(self):
        a = bev_footprint(box(l=1.0, w=1.0))
        b = bev_footprint(box(x=0.5, y=0.5, l=1.0, w=1.0))
        assert convex_intersection_area(a, b) == pytest.approx(0.25)

    def test_disjoint(self):
        a = bev_footprint(box(l=1.0, w=1.0))
        b = bev_footprint(box(x=5.0, l=1.0, w=1.0))
        assert convex_intersection_area(a, b) == 0.0

    def test_rotated_square_octagon(self):
        """Unit square clipped with its own 45-degree rotation: area 2(sqrt2 - 1)."""
        a = bev_footprint(box(l=1.0, w=1.0))
        b = bev_footprint(box(l=1.0, w=1.0, yaw=math.pi / 4.0))
        assert convex_intersection_area(a, b) == pytest.approx(2.0 * (math.sqrt(2.0) - 1.0))

    def test_containment(self):
        outer = bev_footprint(box(l=4.0, w=4.0))
        inner = bev_footprint(box(l=1.0, w=1.0, yaw=1.1))
        assert convex_intersection_area(outer, inner) == pytest.approx(1.0)

    def test_edge_touching_is_zero(self):
        a = bev_footprint(box(l=2.0, w=2.0))
        b = bev_footprint(box(x=2.0, l=2.0, w=2.0))
        assert convex_intersection_area(a, b) == pytest.approx(0.0, abs=1e-12)

    def test_empty_polygon(self):
        empty = ConvexPolygon(())
        a = bev_footprint(box())
        assert convex_intersection_area(a, empty) == 0.0


class TestBevIou:
    def test_self_iou_is_one(self):
        b = box(yaw=0.3)
        assert bev_iou(b, b) == pytest.approx(1.0)

    def test_known_half_offset(self):
        """Unit squares offset by 0.5 in x: inter 0.5, union 1.5."""
        a = box(l=1.0, w=1.0)
        b = box(x=0.5, l=1.0, w=1.0)
        assert bev_iou(a, b) == pytest.approx(1.0 / 3.0)

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a = box(*rng.uniform(-2, 2, 2), 0.0, *rng.uniform(1, 4, 2), 1.5, rng.uniform(-4, 4))
            b = box(*rng.uniform(-2, 2, 2), 0.0, *rng.uniform(1, 4, 2), 1.5, rng.uniform(-4, 4))
            assert bev_iou(a, b) == pytest.approx(bev_iou(b, a), abs=1e-12)

    def test_far_apart_fast_path(self):
        assert bev_iou(box(), box(x=1e6)) == 0.0

    def test_range(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            a = box(*rng.uniform(-3, 3, 2), 0.0, *rng.uniform(0.5, 5, 2), 1.5, rng.uniform(-4, 4))
            b = box(*rng.uniform(-3, 3, 2), 0.0, *rng.uniform(0.5, 5, 2), 1.5, rng.uniform(-4, 4))
            assert 0.0 <= bev_iou(a, b) <= 1.0 + 1e-12


class TestIou3d:
    def test_half_vertical_overlap(self):
        """Same footprint, half z overlap: 0.5V over 1.5V."""
        a = box(z=0.0, h=1.0)
        b = box(z=0.5, h=1.0)
        assert iou_3d(a, b) == pytest.approx(1.0 / 3.0)

    def test_no_vertical_overlap(self):
        a = box(z=0.0, h=1.0)
        b = box(z=2.0, h=1.0)
        assert iou_3d(a, b) == 0.0

    def test_reduces_to_bev_when_z_identical(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            a = box(*rng.uniform(-2, 2, 2), 0.0, *rng.uniform(1, 4, 2), 1.5, rng.uniform(-4, 4))
            b = box(*rng.uniform(-2, 2, 2), 0.0, *rng.uniform(1, 4, 2), 1.5, rng.uniform(-4, 4))
            assert iou_3d(a, b) == pytest.approx(bev_iou(a, b), abs=1e-12)

    def test_self_iou_is_one(self):
        b = box(yaw=-2.0)
        assert iou_3d(b, b) == pytest.approx(1.0)


class TestRasterOracleAgreement:
    """Analytic IoU vs independent grid-center counting."""

    def test_column_count_equals_naive_grid(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            a = box(*rng.uniform(-1.5, 1.5, 2), 0.0, *rng.uniform(1.5, 4, 2), 1.5, rng.uniform(-4, 4))
            b = box(*rng.uniform(-1.5, 1.5, 2), 0.0, *rng.uniform(1.5, 4, 2), 1.5, rng.uniform(-4, 4))
            pa, pb = oracles.footprint(a), oracles.footprint(b)
            bounds = oracles._pair_bounds(pa, pb)
            assert oracles.raster_count_pair(pa, pb, bounds, 400) == (
                oracles.naive_raster_count_pair(pa, pb, bounds, 400)
            )

    def test_bev_matches_raster(self):
        rng = np.random.default_rng(21)
        for _ in range(60):
            a = box(*rng.uniform(-1.5, 1.5, 2), 0.0, *rng.uniform(2.5, 5, 1), *rng.uniform(1.4, 2.2, 1), 1.5, rng.uniform(-math.pi, math.pi))
            b = box(*rng.uniform(-1.5, 1.5, 2), 0.0, *rng.uniform(2.5, 5, 1), *rng.uniform(1.4, 2.2, 1), 1.5, rng.uniform(-math.pi, math.pi))
            assert abs(bev_iou(a, b) - oracles.raster_bev_iou(a, b, 2000)) < 1e-3

    def test_3d_matches_voxels(self):
        rng = np.random.default_rng(23)
        for _ in range(60):
            a = box(*rng.uniform(-1.5, 1.5, 2), rng.normal(0, 0.1), *rng.uniform(2.5, 5, 1), *rng.uniform(1.4, 2.2, 1), rng.uniform(1.2, 2.0), rng.uniform(-math.pi, math.pi))
            b = box(*rng.uniform(-1.5, 1.5, 2), rng.normal(0, 0.1), *rng.uniform(2.5, 5, 1), *rng.uniform(1.4, 2.2, 1), rng.uniform(1.2, 2.0), rng.uniform(-math.pi, math.pi))
            assert abs(iou_3d(a, b) - oracles.voxel_iou_3d(a, b, 200)) < 2e-3


class TestIouMatrix:
    def test_matches_pairwise_calls(self):
        rng = np.random.default_rng(31)
        boxes_a = [box(*rng.uniform(-2, 2, 2), rng.normal(0, 0.2), *rng.uniform(1, 4, 2), rng.uniform(1, 2), rng.uniform(-4, 4)) for _ in range(4)]
        boxes_b = [box(*rng.uniform(-2, 2, 2), rng.normal(0, 0.2), *rng.uniform(1, 4, 2), rng.uniform(1, 2), rng.uniform(-4, 4)) for _ in range(3)]
        m3 = iou_matrix(boxes_a, boxes_b, mode="3d")
        mb = iou_matrix(boxes_a, boxes_b, mode="bev")
        assert m3.shape == (4, 3)
        for i, a in enumerate(boxes_a):
            for j, b in enumerate(boxes_b):
                assert m3[i, j] == pytest.approx(iou_3d(a, b), abs=1e-12)
                assert mb[i, j] == pytest.approx(bev_iou(a, b), abs=1e-12)

    def test_empty_inputs(self):
        assert iou_matrix([], [box()]).shape == (0, 1)
        assert iou_matrix([box()], []).shape == (1, 0)

    def test_rejects_unknown_mode(self):
        with pytest.raises(ValidationError):
            iou_matrix([box()], [box()], mode="volumetric")
