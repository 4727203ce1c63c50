"""Scanline rasterization of polygons and ellipses onto boolean masks.

Pixel (x, y) refers to the sample at integer center coordinates; masks are
indexed [y, x] like image arrays.
"""

from __future__ import annotations

import numpy as np


def polygon_mask(vertices, width: int, height: int) -> np.ndarray:
    """Even-odd scanline fill of a closed polygon given as (N, 2) (x, y) points."""
    verts = np.asarray(vertices, dtype=float)
    mask = np.zeros((height, width), dtype=bool)
    if len(verts) < 3:
        return mask
    y_min = max(int(np.ceil(verts[:, 1].min())), 0)
    y_max = min(int(np.floor(verts[:, 1].max())), height - 1)
    xs = verts[:, 0]
    ys = verts[:, 1]
    xs_next = np.roll(xs, -1)
    ys_next = np.roll(ys, -1)
    for y in range(y_min, y_max + 1):
        # edges crossing the scanline at pixel-center height y
        cross = (ys <= y) != (ys_next <= y)
        if not np.any(cross):
            continue
        t = (y - ys[cross]) / (ys_next[cross] - ys[cross])
        x_hits = np.sort(xs[cross] + t * (xs_next[cross] - xs[cross]))
        for x0, x1 in zip(x_hits[0::2], x_hits[1::2]):
            a = max(int(np.ceil(x0)), 0)
            b = min(int(np.floor(x1)), width - 1)
            if b >= a:
                mask[y, a:b + 1] = True
    return mask


def ellipse_mask(center, semi_axes, angle: float, width: int, height: int) -> np.ndarray:
    """Filled rotated ellipse; ``angle`` is the major-axis direction in radians."""
    cx, cy = float(center[0]), float(center[1])
    a, b = float(semi_axes[0]), float(semi_axes[1])
    mask = np.zeros((height, width), dtype=bool)
    if a <= 0 or b <= 0:
        return mask
    r = max(a, b)
    x0 = max(int(np.floor(cx - r)), 0)
    x1 = min(int(np.ceil(cx + r)), width - 1)
    y0 = max(int(np.floor(cy - r)), 0)
    y1 = min(int(np.ceil(cy + r)), height - 1)
    if x1 < x0 or y1 < y0:
        return mask
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    dx = xs - cx
    dy = ys - cy
    ca, sa = np.cos(angle), np.sin(angle)
    u = dx * ca + dy * sa
    v = -dx * sa + dy * ca
    mask[y0:y1 + 1, x0:x1 + 1] = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    return mask


def mean_under_mask(image: np.ndarray, mask: np.ndarray) -> float:
    sel = image[mask]
    if sel.size == 0:
        raise ValueError("mask selects no pixels")
    return float(sel.mean())
