"""Simplified building geometry: ceiling surfaces and the reference plane query.

The building file is a small JSON document (see ``load_building``), not a full
BIM exchange format.  Its only job here is to answer: which plane constrains a
detection's orientation at a given world position?
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MissingFile, NoCeilingAvailable, NonCoplanarSurface, SchemaError
from .geom import Plane

COPLANARITY_TOL = 1e-6  # meters


@dataclass(frozen=True)
class CeilingSurface:
    """Planar ceiling polygon with a downward (into the room) unit normal."""

    polygon: np.ndarray  # (N, 3) world-space vertices, meters
    normal: np.ndarray   # unit, normal[2] < 0

    def plane(self) -> Plane:
        return Plane(point=self.polygon[0], normal=self.normal)

    def distance_to(self, p: np.ndarray) -> float:
        """Euclidean distance from a point to this polygon (not just its plane)."""
        return _point_to_polygon_distance(np.asarray(p, dtype=float), self.polygon, self.normal)


@dataclass(frozen=True)
class BuildingModel:
    id: str
    ceilings: tuple[CeilingSurface, ...]


class MountingKind:
    """Mounting of a lamp model: flush with the ceiling or hanging below it."""

    EMBEDDED = "embedded"
    HANGING = "hanging"

    def __init__(self, kind: str, offset: float = 0.0):
        if kind not in (self.EMBEDDED, self.HANGING):
            raise ValueError(f"unknown mounting kind {kind!r}")
        if offset < 0:
            raise ValueError("hanging offset must be >= 0")
        self.kind = kind
        self.offset = float(offset) if kind == self.HANGING else 0.0

    @classmethod
    def embedded(cls) -> "MountingKind":
        return cls(cls.EMBEDDED)

    @classmethod
    def hanging(cls, offset: float) -> "MountingKind":
        return cls(cls.HANGING, offset)

    @classmethod
    def from_json(cls, obj) -> "MountingKind":
        if isinstance(obj, str):
            if obj == cls.EMBEDDED:
                return cls.embedded()
            raise SchemaError(f"mounting {obj!r} needs an offset")
        return cls(obj["kind"], obj.get("offset", 0.0))

    def to_json(self):
        if self.kind == self.EMBEDDED:
            return self.EMBEDDED
        return {"kind": self.HANGING, "offset": self.offset}

    def __eq__(self, other):
        return (isinstance(other, MountingKind)
                and self.kind == other.kind and self.offset == other.offset)

    def __repr__(self):
        if self.kind == self.EMBEDDED:
            return "MountingKind.embedded()"
        return f"MountingKind.hanging({self.offset})"


def _point_to_polygon_distance(p: np.ndarray, polygon: np.ndarray, normal: np.ndarray) -> float:
    # project onto the polygon plane; inside -> plane distance, else edge distance
    d_plane = float(normal @ (p - polygon[0]))
    foot = p - d_plane * normal
    # build in-plane 2D coordinates
    e0 = polygon[1] - polygon[0]
    e0 = e0 / np.linalg.norm(e0)
    e1 = np.cross(normal, e0)
    to2d = lambda q: np.array([(q - polygon[0]) @ e0, (q - polygon[0]) @ e1])
    poly2d = np.array([to2d(v) for v in polygon])
    f2d = to2d(foot)
    if _inside_polygon(f2d, poly2d):
        return abs(d_plane)
    best = np.inf
    for i in range(len(polygon)):
        a = polygon[i]
        b = polygon[(i + 1) % len(polygon)]
        ab = b - a
        t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(p - (a + t * ab))))
    return best


def _inside_polygon(q: np.ndarray, poly: np.ndarray) -> bool:
    inside = False
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        if (a[1] > q[1]) != (b[1] > q[1]):
            x = a[0] + (q[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if q[0] < x:
                inside = not inside
    return inside


def _make_surface(vertices, normal, index: int) -> CeilingSurface:
    verts = np.asarray(vertices, dtype=float)
    if verts.ndim != 2 or verts.shape[0] < 3 or verts.shape[1] != 3:
        raise SchemaError(f"ceiling {index}: need >= 3 vertices of 3 coordinates")
    n = np.asarray(normal, dtype=float).reshape(3)
    norm = np.linalg.norm(n)
    if abs(norm - 1.0) > 1e-6:
        raise SchemaError(f"ceiling {index}: normal must be unit length")
    n = n / norm
    if n[2] >= 0:
        raise SchemaError(f"ceiling {index}: normal must point downward into the room")
    dev = np.abs((verts - verts[0]) @ n)
    if dev.max() > COPLANARITY_TOL:
        raise NonCoplanarSurface(
            f"ceiling {index}: vertex deviates {dev.max():.2e} m from its plane")
    return CeilingSurface(polygon=verts, normal=n)


def load_building(path) -> BuildingModel:
    """Load a building from JSON.

    Schema::

        { "id": "...",
          "ceilings": [ { "vertices": [[x,y,z], ...], "normal": [x,y,z] }, ... ] }

    Lengths in meters; normals unit length and oriented downward.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"building file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"building file is not valid JSON: {exc}") from exc
    return building_from_json(doc)


def building_from_json(doc: dict) -> BuildingModel:
    if not isinstance(doc, dict) or "ceilings" not in doc:
        raise SchemaError("building document must have a 'ceilings' list")
    surfaces = []
    for i, entry in enumerate(doc["ceilings"]):
        try:
            surfaces.append(_make_surface(entry["vertices"], entry["normal"], i))
        except KeyError as exc:
            raise SchemaError(f"ceiling {i}: missing field {exc}") from exc
    return BuildingModel(id=str(doc.get("id", "")), ceilings=tuple(surfaces))


def building_to_json(building: BuildingModel) -> dict:
    return {
        "id": building.id,
        "ceilings": [
            {"vertices": s.polygon.tolist(), "normal": s.normal.tolist()}
            for s in building.ceilings
        ],
    }


def nearest_ceiling(building: BuildingModel, world_pos) -> int:
    """Index of the ceiling polygon nearest to a world point (ties -> lowest index)."""
    if not building.ceilings:
        raise NoCeilingAvailable("building has no ceiling surfaces")
    p = np.asarray(world_pos, dtype=float)
    dists = [s.distance_to(p) for s in building.ceilings]
    return int(np.argmin(dists))


def reference_plane(building: BuildingModel, world_pos, mounting: MountingKind) -> Plane:
    """Plane that constrains detection orientation at ``world_pos``.

    Embedded lamps use the nearest ceiling surface.  Hanging lamps use a
    horizontal plane, normal (0,0,1), at the nearest ceiling's height above
    the query position minus the hang offset (the z=0 plane for an empty
    building).
    """
    p = np.asarray(world_pos, dtype=float)
    if mounting.kind == MountingKind.EMBEDDED:
        idx = nearest_ceiling(building, p)
        return building.ceilings[idx].plane()
    if building.ceilings:
        idx = nearest_ceiling(building, p)
        s = building.ceilings[idx]
        # ceiling height at the query (x, y); horizontal ceilings give their z
        n, v0 = s.normal, s.polygon[0]
        if abs(n[2]) > 1e-9:
            z_ceiling = v0[2] - (n[0] * (p[0] - v0[0]) + n[1] * (p[1] - v0[1])) / n[2]
        else:
            z_ceiling = float(v0[2])
        height = z_ceiling - mounting.offset
    else:
        height = 0.0
    return Plane(point=np.array([p[0], p[1], height]), normal=np.array([0.0, 0.0, 1.0]))
