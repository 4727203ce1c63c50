"""Blob extraction, contour tracing, shape routing and fitting tests.

Oracles: synthetic rasters with known geometry; flood-fill blob counting via
an independent BFS; analytic isoperimetric values for ideal contours.
"""

from __future__ import annotations

from collections import deque

import numpy as np
import pytest

from lampdet.errors import DegenerateBlob, EllipseFitFailure, TooFewVertices
from lampdet.raster import ellipse_mask, polygon_mask
from lampdet.shapes import (
    Blob,
    Contour,
    GrayImage,
    ShapeKind,
    classify_shape,
    extract_blobs,
    extract_shapes,
    fit_ellipse,
    isoperimetric_ratio,
    shoelace_area,
    simplify_polygon,
    trace_contour,
)


def image_from_mask(mask, on=255, off=0):
    img = np.full(mask.shape, off, dtype=np.uint8)
    img[mask] = on
    return GrayImage.from_array(img)


def bfs_component_count(mask):
    """Independent 8-connected component counter (flood fill oracle)."""
    seen = np.zeros_like(mask, dtype=bool)
    count = 0
    h, w = mask.shape
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or seen[sy, sx]:
                continue
            count += 1
            q = deque([(sx, sy)])
            seen[sy, sx] = True
            while q:
                x, y = q.popleft()
                for dx in (-1, 0, 1):
                    for dy in (-1, 0, 1):
                        nx, ny = x + dx, y + dy
                        if 0 <= nx < w and 0 <= ny < h and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            q.append((nx, ny))
    return count


def square_blob(size=10, x0=5, y0=5, canvas=40):
    mask = np.zeros((canvas, canvas), dtype=bool)
    mask[y0:y0 + size, x0:x0 + size] = True
    img = image_from_mask(mask)
    blobs = extract_blobs(img, 200, 4)
    assert len(blobs) == 1
    return blobs[0]


def disk_blob(radius=20, cx=40, cy=40, canvas=90):
    mask = ellipse_mask((cx, cy), (radius, radius), 0.0, canvas, canvas)
    img = image_from_mask(mask)
    blobs = extract_blobs(img, 200, 4)
    assert len(blobs) == 1
    return blobs[0]


class TestExtractBlobs:
    def test_black_image_empty(self):
        img = GrayImage.from_array(np.zeros((20, 20), dtype=np.uint8))
        assert extract_blobs(img, 200, 50) == []

    def test_single_white_square(self):
        mask = np.zeros((64, 64), dtype=bool)
        mask[10:30, 10:30] = True
        blobs = extract_blobs(image_from_mask(mask), 200, 50)
        assert len(blobs) == 1
        assert blobs[0].area == 400
        assert blobs[0].bbox == (10, 10, 29, 29)

    def test_two_squares_sorted_by_area(self):
        mask = np.zeros((64, 64), dtype=bool)
        mask[5:15, 5:15] = True      # 100 px
        mask[30:50, 30:50] = True    # 400 px
        blobs = extract_blobs(image_from_mask(mask), 200, 50)
        assert [b.area for b in blobs] == [400, 100]
        assert bfs_component_count(mask) == 2

    def test_min_area_filters(self):
        mask = np.zeros((32, 32), dtype=bool)
        mask[2:5, 2:5] = True  # 9 px
        assert extract_blobs(image_from_mask(mask), 200, 10) == []

    def test_threshold_respected(self):
        img = GrayImage.from_array(np.full((16, 16), 150, dtype=np.uint8))
        assert extract_blobs(img, 200, 1) == []
        assert len(extract_blobs(img, 100, 1)) == 1

    def test_translation_equivariance(self):
        base = np.zeros((60, 60), dtype=bool)
        base[8:20, 10:26] = True
        moved = np.roll(np.roll(base, 7, axis=0), 11, axis=1)
        b0 = extract_blobs(image_from_mask(base), 200, 10)[0]
        b1 = extract_blobs(image_from_mask(moved), 200, 10)[0]
        shifted = b0.pixels + np.array([11, 7])
        assert np.array_equal(
            shifted[np.lexsort(shifted.T)], b1.pixels[np.lexsort(b1.pixels.T)])


class TestTraceContour:
    def test_square_perimeter_and_area(self):
        c = trace_contour(square_blob(10))
        assert c.perimeter == pytest.approx(36.0)
        assert c.area == pytest.approx(100.0)

    def test_square_area_matches_pixel_count_within_15pct(self):
        for size in (5, 8, 13, 21):
            blob = square_blob(size, canvas=size + 12)
            c = trace_contour(blob)
            assert abs(c.area - blob.area) / blob.area < 0.15

    def test_disk_isoperimetric_band(self):
        c = trace_contour(disk_blob(20))
        ratio = c.perimeter ** 2 / c.area
        assert 12.0 <= ratio <= 14.0

    def test_single_pixel_raises(self):
        blob = Blob(pixels=np.array([[3, 3]]), bbox=(3, 3, 3, 3), mean_intensity=255.0)
        with pytest.raises(DegenerateBlob):
            trace_contour(blob)

    def test_contour_closed_chain(self):
        c = trace_contour(square_blob(6))
        # consecutive points (including the wrap) are 8-neighbors
        closed = np.vstack([c.points, c.points[:1]])
        steps = np.abs(np.diff(closed, axis=0)).max(axis=1)
        assert steps.max() <= 1.0


class TestClassifyShape:
    def test_analytic_circle_is_circular(self):
        t = np.linspace(0, 2 * np.pi, 720, endpoint=False)
        pts = np.column_stack([100 + 30 * np.cos(t), 100 + 30 * np.sin(t)])
        contour = Contour(points=pts, perimeter=2 * np.pi * 30, area=np.pi * 900)
        # raw analytic ratio is 4*pi
        assert contour.perimeter ** 2 / contour.area == pytest.approx(4 * np.pi)
        assert classify_shape(contour) is ShapeKind.CIRCULAR

    def test_analytic_square_is_polygonal(self):
        side = np.linspace(0.0, 10.0, 50, endpoint=False)
        pts = np.vstack([
            np.column_stack([side, np.zeros_like(side)]),
            np.column_stack([np.full_like(side, 10.0), side]),
            np.column_stack([10.0 - side, np.full_like(side, 10.0)]),
            np.column_stack([np.zeros_like(side), 10.0 - side]),
        ])
        contour = Contour(points=pts, perimeter=40.0, area=100.0)
        assert contour.perimeter ** 2 / contour.area == pytest.approx(16.0)
        assert classify_shape(contour) is ShapeKind.POLYGONAL

    def test_rasterized_shapes_route_correctly(self):
        assert classify_shape(trace_contour(disk_blob(15))) is ShapeKind.CIRCULAR
        assert classify_shape(trace_contour(disk_blob(25, canvas=100))) is ShapeKind.CIRCULAR
        assert classify_shape(trace_contour(square_blob(20, canvas=44))) is ShapeKind.POLYGONAL
        assert classify_shape(trace_contour(square_blob(40, canvas=60))) is ShapeKind.POLYGONAL

    def test_scale_invariance_on_rasters(self):
        small = trace_contour(disk_blob(16, canvas=70))
        large = trace_contour(disk_blob(32, canvas=120))
        r_small = small.perimeter ** 2 / small.area
        r_large = large.perimeter ** 2 / large.area
        assert abs(r_small - r_large) <= 0.5
        sq_small = trace_contour(square_blob(40, canvas=60))
        sq_large = trace_contour(square_blob(80, canvas=100))
        assert abs(sq_small.perimeter ** 2 / sq_small.area
                   - sq_large.perimeter ** 2 / sq_large.area) <= 0.5


class TestSimplifyPolygon:
    def test_rectangle_four_corners(self):
        mask = np.zeros((60, 80), dtype=bool)
        mask[20:41, 15:56] = True  # 41 x 21 rectangle
        c = trace_contour(extract_blobs(image_from_mask(mask), 200, 10)[0])
        poly = simplify_polygon(c, eps=2.0)
        assert len(poly) == 4
        expected = {(15, 20), (55, 20), (55, 40), (15, 40)}
        for v in poly:
            assert min(np.hypot(v[0] - ex, v[1] - ey) for ex, ey in expected) <= 2.0

    def test_starts_near_top_left_and_positive_orientation(self):
        mask = np.zeros((60, 60), dtype=bool)
        mask[10:31, 10:31] = True
        poly = simplify_polygon(trace_contour(extract_blobs(image_from_mask(mask), 200, 10)[0]))
        norms = (poly ** 2).sum(axis=1)
        assert np.argmin(norms) == 0
        x, y = poly[:, 0], poly[:, 1]
        assert 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) > 0

    def test_eps_too_large_raises(self):
        c = trace_contour(square_blob(8))
        with pytest.raises(TooFewVertices):
            simplify_polygon(c, eps=50.0)

    def test_jittered_rectangle_still_four_corners(self):
        rng = np.random.default_rng(8)
        corners = np.array([[12.0, 10.0], [52.0, 10.0], [52.0, 34.0], [12.0, 34.0]])
        n_hits = 0
        for _ in range(20):
            jittered = corners + rng.uniform(-1, 1, size=corners.shape)
            mask = polygon_mask(jittered, 70, 50)
            c = trace_contour(extract_blobs(image_from_mask(mask), 200, 10)[0])
            poly = simplify_polygon(c, eps=2.0)
            if len(poly) == 4:
                n_hits += 1
        assert n_hits == 20


class TestFitEllipse:
    def test_rasterized_circle(self):
        mask = ellipse_mask((100, 80), (30, 30), 0.0, 200, 160)
        c = trace_contour(extract_blobs(image_from_mask(mask), 200, 10)[0])
        e = fit_ellipse(c.points)
        assert np.abs(e.center - [100, 80]).max() < 0.5
        assert abs(e.a - 30) < 0.5 and abs(e.b - 30) < 0.5

    def test_rotated_ellipse_angle(self):
        angle = np.deg2rad(30)
        mask = ellipse_mask((90, 70), (40, 20), angle, 200, 160)
        c = trace_contour(extract_blobs(image_from_mask(mask), 200, 10)[0])
        e = fit_ellipse(c.points)
        assert abs(e.a - 40) < 1.0 and abs(e.b - 20) < 1.0
        assert abs(np.rad2deg(e.angle) - 30) < 2.0

    def test_collinear_points_fail(self):
        pts = np.column_stack([np.arange(10.0), 2.0 * np.arange(10.0)])
        with pytest.raises(EllipseFitFailure):
            fit_ellipse(pts)

    def test_too_few_points(self):
        with pytest.raises(EllipseFitFailure):
            fit_ellipse(np.zeros((4, 2)))

    def test_exact_analytic_ellipse(self):
        t = np.linspace(0, 2 * np.pi, 100, endpoint=False)
        a, b, th = 35.0, 18.0, 1.1
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        pts = (np.column_stack([a * np.cos(t), b * np.sin(t)]) @ R.T) + [120, 90]
        e = fit_ellipse(pts)
        assert np.abs(e.center - [120, 90]).max() < 1e-8
        assert abs(e.a - a) < 1e-8 and abs(e.b - b) < 1e-8
        assert abs(e.angle - th) < 1e-8


class TestExtractShapes:
    def test_mixed_scene(self):
        canvas = np.zeros((120, 160), dtype=bool)
        canvas |= polygon_mask([[10, 10], [50, 10], [50, 40], [10, 40]], 160, 120)
        canvas |= ellipse_mask((110, 70), (25, 25), 0.0, 160, 120)
        shapes = extract_shapes(image_from_mask(canvas), 200, 100)
        kinds = sorted(s.kind.value for s in shapes)
        assert kinds == ["circular", "polygonal"]
        for s in shapes:
            if s.kind is ShapeKind.POLYGONAL:
                assert s.area == pytest.approx(shoelace_area(s.polygon))
                assert len(s.polygon) >= 4
            else:
                assert s.area == pytest.approx(np.pi * s.ellipse.a * s.ellipse.b)

    def test_area_downstream_consistency(self):
        mask = ellipse_mask((60, 60), (20, 20), 0.0, 120, 120)
        (obs,) = extract_shapes(image_from_mask(mask), 200, 100)
        assert obs.area == pytest.approx(np.pi * 20 * 20, rel=0.05)
