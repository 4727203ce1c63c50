from __future__ import annotations

import json

import numpy as np
import pytest

from lampdet.bim import (
    BuildingModel,
    CeilingSurface,
    MountingKind,
    building_from_json,
    load_building,
    nearest_ceiling,
    reference_plane,
)
from lampdet.errors import MissingFile, NoCeilingAvailable, NonCoplanarSurface, SchemaError


def ceiling_doc(z=3.0, x0=0.0, y0=0.0, size=4.0):
    return {
        "vertices": [
            [x0, y0, z], [x0 + size, y0, z],
            [x0 + size, y0 + size, z], [x0, y0 + size, z],
        ],
        "normal": [0, 0, -1],
    }


def write_building(tmp_path, ceilings, bid="b1"):
    path = tmp_path / "building.json"
    path.write_text(json.dumps({"id": bid, "ceilings": ceilings}))
    return path


class TestLoadBuilding:
    def test_single_horizontal_ceiling(self, tmp_path):
        b = load_building(write_building(tmp_path, [ceiling_doc(z=3.0)]))
        assert len(b.ceilings) == 1
        assert np.allclose(b.ceilings[0].normal, [0, 0, -1])
        assert np.allclose(b.ceilings[0].polygon[:, 2], 3.0)

    def test_empty_ceilings_loads(self, tmp_path):
        b = load_building(write_building(tmp_path, []))
        assert b.ceilings == ()

    def test_non_coplanar_rejected(self, tmp_path):
        doc = ceiling_doc(z=3.0)
        doc["vertices"][2][2] = 3.01  # 1 cm off the plane
        with pytest.raises(NonCoplanarSurface):
            load_building(write_building(tmp_path, [doc]))

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFile):
            load_building(tmp_path / "nope.json")

    def test_bad_json(self, tmp_path):
        path = tmp_path / "building.json"
        path.write_text("not json {")
        with pytest.raises(SchemaError):
            load_building(path)

    def test_upward_normal_rejected(self, tmp_path):
        doc = ceiling_doc()
        doc["normal"] = [0, 0, 1]
        with pytest.raises(SchemaError):
            load_building(write_building(tmp_path, [doc]))

    def test_non_unit_normal_rejected(self):
        doc = ceiling_doc()
        doc["normal"] = [0, 0, -2]
        with pytest.raises(SchemaError):
            building_from_json({"id": "x", "ceilings": [doc]})

    def test_too_few_vertices(self):
        doc = {"vertices": [[0, 0, 3], [1, 0, 3]], "normal": [0, 0, -1]}
        with pytest.raises(SchemaError):
            building_from_json({"id": "x", "ceilings": [doc]})


class TestReferencePlane:
    def two_ceiling_building(self):
        return building_from_json({
            "id": "b",
            "ceilings": [ceiling_doc(z=3.0, x0=0.0), ceiling_doc(z=4.0, x0=10.0)],
        })

    def test_embedded_picks_nearest(self):
        b = self.two_ceiling_building()
        pl = reference_plane(b, [2.0, 2.0, 1.5], MountingKind.embedded())
        assert pl.point[2] == pytest.approx(3.0)
        assert np.allclose(pl.normal, [0, 0, -1])
        pl2 = reference_plane(b, [12.0, 2.0, 1.5], MountingKind.embedded())
        assert pl2.point[2] == pytest.approx(4.0)

    def test_embedded_empty_building_errors(self):
        b = BuildingModel(id="e", ceilings=())
        with pytest.raises(NoCeilingAvailable):
            reference_plane(b, [0, 0, 0], MountingKind.embedded())

    def test_hanging_offset_from_ceiling(self):
        b = building_from_json({"id": "b", "ceilings": [ceiling_doc(z=3.0)]})
        pl = reference_plane(b, [2.0, 2.0, 1.5], MountingKind.hanging(0.5))
        assert pl.point[2] == pytest.approx(2.5)
        assert np.allclose(pl.normal, [0, 0, 1])

    def test_hanging_empty_building_is_z0(self):
        b = BuildingModel(id="e", ceilings=())
        pl = reference_plane(b, [5.0, 5.0, 1.0], MountingKind.hanging(0.4))
        assert pl.point[2] == pytest.approx(0.0)
        assert np.allclose(pl.normal, [0, 0, 1])

    def test_normals_always_unit(self):
        b = self.two_ceiling_building()
        rng = np.random.default_rng(0)
        for _ in range(50):
            pos = rng.uniform(-5, 15, size=3)
            for m in (MountingKind.embedded(), MountingKind.hanging(0.3)):
                pl = reference_plane(b, pos, m)
                assert abs(np.linalg.norm(pl.normal) - 1.0) < 1e-12

    def test_translation_invariance_of_selection(self):
        b = self.two_ceiling_building()
        rng = np.random.default_rng(1)
        for _ in range(30):
            pos = rng.uniform(0, 12, size=3)
            shift = rng.normal(size=3) * 10
            doc = {
                "id": "b",
                "ceilings": [
                    {"vertices": (s.polygon + shift).tolist(), "normal": s.normal.tolist()}
                    for s in b.ceilings
                ],
            }
            b2 = building_from_json(doc)
            assert nearest_ceiling(b, pos) == nearest_ceiling(b2, pos + shift)

    def test_tie_breaks_by_lowest_index(self):
        # two identical ceilings equidistant from the query
        doc = ceiling_doc(z=3.0)
        b = building_from_json({"id": "b", "ceilings": [doc, doc]})
        assert nearest_ceiling(b, [2.0, 2.0, 1.0]) == 0


class TestMountingKind:
    def test_json_round_trip(self):
        for m in (MountingKind.embedded(), MountingKind.hanging(0.45)):
            assert MountingKind.from_json(m.to_json()) == m

    def test_negative_offset_rejected(self):
        with pytest.raises(ValueError):
            MountingKind.hanging(-0.1)

    def test_point_to_polygon_distance_outside(self):
        s = CeilingSurface(
            polygon=np.array([[0, 0, 3], [4, 0, 3], [4, 4, 3], [0, 4, 3]], dtype=float),
            normal=np.array([0.0, 0.0, -1.0]))
        # directly below the polygon interior: plane distance
        assert s.distance_to([2, 2, 1]) == pytest.approx(2.0)
        # outside the footprint: distance to the nearest edge point
        assert s.distance_to([6, 2, 3]) == pytest.approx(2.0)
        assert s.distance_to([5, 5, 3]) == pytest.approx(np.sqrt(2))
