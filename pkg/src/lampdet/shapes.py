"""Bright-blob extraction and simplification to polygonal or elliptical shapes.

The stages mirror the candidate-extraction front end of the pipeline:
threshold -> connected components -> boundary tracing -> routing by the
isoperimetric ratio -> polygon simplification or ellipse fitting.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import DegenerateBlob, EllipseFitFailure, TooFewVertices

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)

# isoperimetric ratio P^2/A separating circles (4*pi ~ 12.57) from squares (16)
SHAPE_THRESHOLD = 14.0


@dataclass(frozen=True)
class GrayImage:
    width: int
    height: int
    data: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.uint8)
        if d.shape != (self.height, self.width):
            raise ValueError("data shape does not match width/height")
        object.__setattr__(self, "data", d)

    @staticmethod
    def from_array(arr: np.ndarray) -> "GrayImage":
        arr = np.asarray(arr, dtype=np.uint8)
        return GrayImage(width=arr.shape[1], height=arr.shape[0], data=arr)


@dataclass(frozen=True)
class Blob:
    pixels: np.ndarray  # (N, 2) integer (x, y) pixel coordinates
    bbox: tuple         # (x0, y0, x1, y1) inclusive
    mean_intensity: float

    @property
    def area(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True)
class Contour:
    """Ordered closed pixel boundary (x, y); perimeter in px, area in px^2."""

    points: np.ndarray
    perimeter: float
    area: float


class ShapeKind(Enum):
    POLYGONAL = "polygonal"
    CIRCULAR = "circular"


@dataclass(frozen=True)
class EllipseParams:
    center: np.ndarray  # (2,) pixels
    a: float            # major semi-axis, px
    b: float            # minor semi-axis, px
    angle: float        # major-axis direction, radians in [0, pi)

    @property
    def area(self) -> float:
        return float(np.pi * self.a * self.b)


@dataclass(frozen=True)
class ShapeObservation:
    kind: ShapeKind
    area: float
    contour: Contour
    polygon: Optional[np.ndarray] = None     # (N, 2) for polygonal shapes
    ellipse: Optional[EllipseParams] = None  # for circular shapes


def extract_blobs(img: GrayImage, intensity_threshold: float = 220,
                  min_area: int = 100) -> list[Blob]:
    """8-connected components of pixels >= threshold, area filtered, largest first."""
    mask = img.data >= intensity_threshold
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n == 0:
        return []
    counts = np.bincount(labels.ravel())
    blobs = []
    for lab in range(1, n + 1):
        if counts[lab] < min_area:
            continue
        ys, xs = np.nonzero(labels == lab)
        blobs.append(Blob(
            pixels=np.column_stack([xs, ys]),
            bbox=(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())),
            mean_intensity=float(img.data[ys, xs].mean()),
        ))
    # stable sort keeps label order for equal areas
    blobs.sort(key=lambda b: -b.area)
    return blobs


# Moore neighborhood in clockwise order (image coordinates, y down)
_NEIGHBORS = np.array([
    (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)
])


def trace_contour(blob: Blob) -> Contour:
    """Moore boundary tracing with Jacob's stopping criterion.

    The enclosed area uses the shoelace term plus the lattice-boundary
    correction (A + B/2 + 1), which equals the pixel count for clean convex
    blobs.
    """
    if blob.area < 2:
        raise DegenerateBlob("cannot trace a boundary of a single pixel")
    x0, y0, x1, y1 = blob.bbox
    w = x1 - x0 + 3
    h = y1 - y0 + 3
    mask = np.zeros((h, w), dtype=bool)
    mask[blob.pixels[:, 1] - y0 + 1, blob.pixels[:, 0] - x0 + 1] = True

    # start at the topmost, then leftmost pixel; its west neighbor is outside
    ys, xs = np.nonzero(mask)
    order = np.lexsort((xs, ys))
    sx, sy = int(xs[order[0]]), int(ys[order[0]])

    chain = [(sx, sy)]
    cur = (sx, sy)
    entry_dir = 0  # pretend we arrived moving east, so the backtrack is west
    start_state = None
    max_steps = 8 * blob.area + 16
    for _ in range(max_steps):
        found = False
        # scan clockwise starting just after the backtrack direction
        back = (entry_dir + 4) % 8
        for k in range(1, 9):
            d = (back + k) % 8
            nx = cur[0] + int(_NEIGHBORS[d][0])
            ny = cur[1] + int(_NEIGHBORS[d][1])
            if mask[ny, nx]:
                state = (cur, d)
                if start_state is None:
                    start_state = state
                elif state == start_state:
                    pts = np.array(chain, dtype=float)
                    pts[:, 0] += x0 - 1
                    pts[:, 1] += y0 - 1
                    return _finish_contour(pts)
                cur = (nx, ny)
                entry_dir = d
                chain.append(cur)
                found = True
                break
        if not found:  # isolated pixel inside its own mask
            raise DegenerateBlob("blob has no traceable neighbors")
    pts = np.array(chain, dtype=float)
    pts[:, 0] += x0 - 1
    pts[:, 1] += y0 - 1
    return _finish_contour(pts)


def _finish_contour(pts: np.ndarray) -> Contour:
    # drop the duplicated return to the start, keep the chain implicitly closed
    if len(pts) > 1 and np.all(pts[0] == pts[-1]):
        pts = pts[:-1]
    diffs = np.diff(np.vstack([pts, pts[:1]]), axis=0)
    perimeter = float(np.sqrt((diffs ** 2).sum(axis=1)).sum())
    area = abs(_shoelace(pts)) + 0.5 * len(pts) + 1.0
    return Contour(points=pts, perimeter=perimeter, area=float(area))


def _shoelace(pts: np.ndarray) -> float:
    x = pts[:, 0]
    y = pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def smooth_contour(contour: Contour, window: int) -> Contour:
    """Circular moving average of the boundary chain.

    Suppresses extraction jitter before classification and fitting; the
    returned perimeter and area are those of the smoothed polyline (the
    lattice correction no longer applies to fractional points).
    """
    if window <= 1 or len(contour.points) <= window:
        return contour
    kernel = np.ones(window) / window
    pts = contour.points
    pad = window // 2
    ext = np.vstack([pts[-pad:], pts, pts[:pad]])
    sm = np.column_stack([
        np.convolve(ext[:, 0], kernel, mode="valid"),
        np.convolve(ext[:, 1], kernel, mode="valid")])[:len(pts)]
    closed = np.vstack([sm, sm[:1]])
    perimeter = float(np.sqrt((np.diff(closed, axis=0) ** 2).sum(axis=1)).sum())
    return Contour(points=sm, perimeter=perimeter,
                   area=max(abs(_shoelace(sm)), 1.0))


def shoelace_area(pts) -> float:
    return abs(_shoelace(np.asarray(pts, dtype=float)))


def _dp_segment(pts: np.ndarray, eps: float) -> list[int]:
    """Indices kept by Douglas-Peucker on an open polyline (endpoints always kept)."""
    keep = [0, len(pts) - 1]
    stack = [(0, len(pts) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        seg = pts[j] - pts[i]
        seg_len = np.linalg.norm(seg)
        rel = pts[i + 1:j] - pts[i]
        if seg_len < 1e-12:
            dist = np.linalg.norm(rel, axis=1)
        else:
            dist = np.abs(rel[:, 0] * seg[1] - rel[:, 1] * seg[0]) / seg_len
        k = int(np.argmax(dist))
        if dist[k] > eps:
            k += i + 1
            keep.append(k)
            stack.append((i, k))
            stack.append((k, j))
    return sorted(set(keep))


def _dp_closed(pts: np.ndarray, eps: float) -> np.ndarray:
    """Douglas-Peucker on a closed chain, anchored at its diameter.

    Diameter endpoints of a convex chain are true corners, unlike e.g. the
    topmost pixel, which can sit mid-run and leave a split corner behind.
    """
    if len(pts) < 3:
        return pts.copy()
    a = int(np.argmax(((pts - pts.mean(axis=0)) ** 2).sum(axis=1)))
    b = int(np.argmax(((pts - pts[a]) ** 2).sum(axis=1)))
    if a == b:
        return pts[:1].copy()
    if a > b:
        a, b = b, a
    rolled = np.roll(pts, -a, axis=0)
    split = b - a
    arc1 = rolled[:split + 1]
    arc2 = np.vstack([rolled[split:], rolled[:1]])
    k1 = _dp_segment(arc1, eps)
    k2 = _dp_segment(arc2, eps)
    idx = [i for i in k1] + [split + i for i in k2[1:-1]]
    return rolled[np.array(idx, dtype=int)]


def isoperimetric_ratio(contour: Contour, eps: float = 2.0) -> float:
    """P^2/A measured on a lightly simplified version of the contour.

    Simplifying first removes the pixel staircase, whose extra length would
    bias rasterized circles toward the polygonal side of the threshold.
    """
    poly = _dp_closed(contour.points, eps)
    if len(poly) < 3:
        return np.inf
    area = shoelace_area(poly)
    if area <= 0.0:
        return np.inf
    closed = np.vstack([poly, poly[:1]])
    perimeter = float(np.sqrt((np.diff(closed, axis=0) ** 2).sum(axis=1)).sum())
    return perimeter * perimeter / area


def classify_shape(contour: Contour, threshold: float = SHAPE_THRESHOLD,
                   eps: float = 2.0) -> ShapeKind:
    """Route a contour to the circular or polygonal estimator."""
    if isoperimetric_ratio(contour, eps) < threshold:
        return ShapeKind.CIRCULAR
    return ShapeKind.POLYGONAL


def _point_segment_distance(p, a, b) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-12:
        return float(np.linalg.norm(p - a))
    t = np.clip(float((p - a) @ ab) / denom, 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def _prune_collinear(poly: np.ndarray, eps: float) -> np.ndarray:
    """Drop vertices that sit within eps of their neighbors' chord.

    Douglas-Peucker keeps its two split anchors unconditionally; on jittered
    edges those can be spurious mid-edge vertices.
    """
    pts = [p for p in poly]
    while len(pts) > 3:
        n = len(pts)
        devs = [_point_segment_distance(pts[i], pts[i - 1], pts[(i + 1) % n])
                for i in range(n)]
        k = int(np.argmin(devs))
        if devs[k] > eps:
            break
        pts.pop(k)
    return np.array(pts)


def simplify_polygon(contour: Contour, eps: float = 2.0) -> np.ndarray:
    """Dominant vertices of a polygonal contour.

    Vertices are ordered with positive shoelace orientation and start at the
    vertex nearest the top-left image corner, so downstream correspondence
    search sees a deterministic ordering.
    """
    poly = _prune_collinear(_dp_closed(contour.points, eps), eps)
    if len(poly) < 4:
        raise TooFewVertices(f"only {len(poly)} vertices survive eps={eps}")
    if _shoelace(poly) < 0.0:
        poly = poly[::-1]
    start = int(np.argmin((poly ** 2).sum(axis=1)))
    return np.roll(poly, -start, axis=0)


def fit_ellipse(points) -> EllipseParams:
    """Direct least-squares conic fit constrained to an ellipse.

    Uses the numerically stable split of the scatter matrix into quadratic
    and linear blocks; raises ``EllipseFitFailure`` when the points do not
    determine a real ellipse (e.g. collinear input).
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) < 6:
        raise EllipseFitFailure("need at least 6 points")
    x = pts[:, 0]
    y = pts[:, 1]
    # center the data for conditioning
    mx, my = x.mean(), y.mean()
    xc = x - mx
    yc = y - my
    D1 = np.column_stack([xc * xc, xc * yc, yc * yc])
    D2 = np.column_stack([xc, yc, np.ones_like(xc)])
    S1 = D1.T @ D1
    S2 = D1.T @ D2
    S3 = D2.T @ D2
    try:
        T = -np.linalg.solve(S3, S2.T)
    except np.linalg.LinAlgError as exc:
        raise EllipseFitFailure("degenerate point configuration") from exc
    M = S1 + S2 @ T
    M = np.array([M[2] / 2.0, -M[1], M[0] / 2.0])
    try:
        evals, evecs = np.linalg.eig(M)
    except np.linalg.LinAlgError as exc:
        raise EllipseFitFailure("eigen decomposition failed") from exc
    cond = 4.0 * evecs[0] * evecs[2] - evecs[1] ** 2
    good = np.where(np.isreal(evals) & (cond > 0))[0]
    if good.size == 0:
        raise EllipseFitFailure("no ellipse solution")
    a1 = np.real(evecs[:, good[0]])
    coeffs = np.concatenate([a1, T @ a1])
    return _conic_to_ellipse(coeffs, mx, my)


def _conic_to_ellipse(c, mx: float, my: float) -> EllipseParams:
    A, B, C, D, E, F = c
    disc = 4.0 * A * C - B * B
    if disc <= 0:
        raise EllipseFitFailure("conic is not an ellipse")
    cx = (B * E - 2.0 * C * D) / disc
    cy = (B * D - 2.0 * A * E) / disc
    F0 = A * cx * cx + B * cx * cy + C * cy * cy + D * cx + E * cy + F
    Q = np.array([[A, B / 2.0], [B / 2.0, C]])
    evals, evecs = np.linalg.eigh(Q)
    with np.errstate(invalid="ignore", divide="ignore"):
        axes = np.sqrt(-F0 / evals)
    if not np.all(np.isfinite(axes)) or np.any(axes <= 0):
        raise EllipseFitFailure("non-positive ellipse axes")
    # order as (major, minor); eigh sorts eigenvalues ascending
    order = np.argsort(-axes)
    a, b = float(axes[order[0]]), float(axes[order[1]])
    major_vec = evecs[:, order[0]]
    angle = float(np.arctan2(major_vec[1], major_vec[0])) % np.pi
    return EllipseParams(center=np.array([cx + mx, cy + my]), a=a, b=b, angle=angle)


def extract_shapes(img: GrayImage, intensity_threshold: float = 220,
                   min_area: int = 100, simplify_eps: float = 2.0,
                   shape_threshold: float = SHAPE_THRESHOLD,
                   smooth_window: int = 0,
                   classify_eps: float = None) -> list[ShapeObservation]:
    """Full front end: blobs -> contours -> classified shape observations.

    Blobs whose contour is degenerate, whose polygon has too few vertices or
    whose ellipse fit fails are silently skipped.  ``smooth_window`` > 1
    low-passes each boundary before classification (useful on noisy imagery).
    ``classify_eps`` lets the routing measurement use a finer simplification
    than the polygon extraction; jitter pushes the two in opposite directions.
    """
    if classify_eps is None:
        classify_eps = simplify_eps
    out = []
    for blob in extract_blobs(img, intensity_threshold, min_area):
        try:
            contour = trace_contour(blob)
        except DegenerateBlob:
            continue
        if smooth_window > 1:
            contour = smooth_contour(contour, smooth_window)
        kind = classify_shape(contour, shape_threshold, classify_eps)
        if kind is ShapeKind.POLYGONAL:
            try:
                poly = simplify_polygon(contour, simplify_eps)
            except TooFewVertices:
                continue
            out.append(ShapeObservation(
                kind=kind, area=shoelace_area(poly), contour=contour, polygon=poly))
        else:
            try:
                ell = fit_ellipse(contour.points)
            except EllipseFitFailure:
                continue
            out.append(ShapeObservation(
                kind=kind, area=ell.area, contour=contour, ellipse=ell))
    return out
