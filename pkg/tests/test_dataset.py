import json
import math
import os

import pytest

from panosim.dataset import (
    DatasetError,
    DatasetManifest,
    GridIndex,
    PanoRecord,
    angular_resolution,
    decimate,
    load_manifest,
    load_panorama,
    save_manifest,
    synth_pano,
    validate,
    write_synthetic_dataset,
)
from panosim.geometry import CameraIntrinsics

from conftest import brute_force_nearest, make_manifest


def write_json_manifest(tmp_path, doc):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return str(path)


def manifest_doc(records, cell=0.2, w=512, h=256):
    return {
        "version": 1,
        "cell_size_m": cell,
        "pano_width": w,
        "pano_height": h,
        "records": records,
    }


def record_doc(rid, x, y, **kw):
    doc = {"id": rid, "file": f"imgs/{rid}.png", "x_m": x, "y_m": y}
    doc.update(kw)
    return doc


class TestLoadManifest:
    def test_404_record_grid_loads_with_full_occupancy(self, tmp_path):
        """404 records in 0.2 m intervals load into 404 occupied cells."""
        records = []
        k = 0
        for i in range(21):
            for j in range(21):
                if k >= 404:
                    break
                records.append(record_doc(f"r{k:03d}", i * 0.2, j * 0.2))
                k += 1
        path = write_json_manifest(tmp_path, manifest_doc(records))
        manifest = load_manifest(path, check_files=False)
        assert len(manifest.records) == 404
        assert len(GridIndex(manifest)) == 404

    def test_empty_dataset_rejected(self, tmp_path):
        path = write_json_manifest(tmp_path, manifest_doc([]))
        with pytest.raises(DatasetError, match="empty dataset"):
            load_manifest(path)

    def test_two_records_same_cell_names_both(self, tmp_path):
        path = write_json_manifest(
            tmp_path,
            manifest_doc([record_doc("aaa", 0.0, 0.0), record_doc("bbb", 0.004, 0.0)]),
        )
        with pytest.raises(DatasetError) as exc:
            load_manifest(path, check_files=False)
        assert "aaa" in str(exc.value) and "bbb" in str(exc.value)

    def test_bad_json_is_parse_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        with pytest.raises(DatasetError, match="cannot parse"):
            load_manifest(str(path))

    def test_non_2to1_rejected(self, tmp_path):
        path = write_json_manifest(tmp_path, manifest_doc([record_doc("a", 0, 0)], w=1000, h=600))
        with pytest.raises(DatasetError, match="not 2:1"):
            load_manifest(path, check_files=False)

    def test_lattice_tolerance_one_cm(self, tmp_path):
        ok = write_json_manifest(
            tmp_path, manifest_doc([record_doc("a", 0.006, 0.006)])
        )
        manifest = load_manifest(ok, check_files=False)
        assert manifest.records[0].cell(0.2) == (0, 0)

        bad = write_json_manifest(
            tmp_path, manifest_doc([record_doc("a", 0.02, 0.0), record_doc("b", 0.2, 0.0)])
        )
        with pytest.raises(DatasetError, match="off lattice"):
            load_manifest(bad, check_files=False)

    def test_missing_files_reported_when_checked(self, tmp_path):
        path = write_json_manifest(tmp_path, manifest_doc([record_doc("a", 0, 0)]))
        with pytest.raises(DatasetError, match="missing image files"):
            load_manifest(path, check_files=True)

    def test_duplicate_ids_rejected(self, tmp_path):
        path = write_json_manifest(
            tmp_path, manifest_doc([record_doc("a", 0.0, 0.0), record_doc("a", 0.2, 0.0)])
        )
        with pytest.raises(DatasetError, match="duplicate record ids"):
            load_manifest(path, check_files=False)


class TestValidate:
    def test_theta_v_configuration_passes(self):
        """5376x2688 panoramas at a 10 px/deg requirement: 14.93 measured."""
        manifest = make_manifest(pano_w=5376)
        report = validate(manifest, required_px_per_deg=10.0)
        assert report.pano_px_per_deg == pytest.approx(14.933, abs=0.001)
        assert report.resolution_ok
        assert not report.aspect_violations and not report.duplicate_cells

    def test_aspect_violation_reported(self):
        manifest = make_manifest()
        manifest.pano_width, manifest.pano_height = 1000, 600
        report = validate(manifest)
        assert report.aspect_violations
        assert not report.passed

    def test_boundary_resolution_passes(self):
        manifest = make_manifest(pano_w=3600)
        report = validate(manifest, required_px_per_deg=10.0)
        assert report.pano_px_per_deg == 10.0
        assert report.resolution_ok

    def test_missing_files_listed(self, tmp_path):
        manifest = make_manifest(nx=2, ny=1, root=str(tmp_path))
        report = validate(manifest)
        assert sorted(report.missing_files) == [r.id for r in manifest.records]


class TestAngularResolution:
    def test_theta_v_panorama_width(self):
        assert angular_resolution(5376) == pytest.approx(14.9333, abs=1e-3)

    def test_one_px_per_degree(self):
        assert angular_resolution(360) == 1.0

    def test_virtual_camera_side(self):
        """640 px across 60 deg: 10.67 px/deg, the robot-camera companion check."""
        intr = CameraIntrinsics(640, 480, math.radians(60))
        assert intr.px_per_deg == pytest.approx(640 / 60, abs=1e-9)

    def test_zero_width_rejected(self):
        with pytest.raises(ValueError):
            angular_resolution(0)


class TestDecimate:
    def test_identity_factor(self):
        manifest = make_manifest(nx=4, ny=4)
        out = decimate(manifest, 1)
        assert out.cell_size_m == manifest.cell_size_m
        assert [r.id for r in out.records] == [r.id for r in manifest.records]

    def test_decimation_to_one_and_two_meter_grids(self):
        """0.2 m pitch decimated by 5 and 10 gives the 1 m and 2 m grids."""
        manifest = make_manifest(nx=11, ny=11, cell=0.2)
        assert decimate(manifest, 5).cell_size_m == pytest.approx(1.0)
        assert decimate(manifest, 10).cell_size_m == pytest.approx(2.0)
        assert len(decimate(manifest, 5).records) == 9  # i,j in {0,5,10}
        assert len(decimate(manifest, 10).records) == 4  # i,j in {0,10}

    def test_3x3_by_2_keeps_even_cells(self):
        manifest = make_manifest(nx=3, ny=3)
        out = decimate(manifest, 2)
        cells = sorted(r.cell(manifest.cell_size_m) for r in out.records)
        assert cells == [(0, 0), (0, 2), (2, 0), (2, 2)]

    def test_emptying_factor_rejected(self):
        manifest = make_manifest(nx=3, ny=3)
        manifest.records = [r for r in manifest.records if r.cell(0.2) != (0, 0)]
        with pytest.raises(DatasetError, match="empties dataset"):
            decimate(manifest, 5)

    def test_composition_on_occupancy(self):
        manifest = make_manifest(nx=13, ny=13)
        ab = decimate(manifest, 6)
        a_then_b = decimate(decimate(manifest, 2), 3)
        cells = lambda m: sorted(r.cell(0.2) for r in m.records)  # noqa: E731
        assert cells(ab) == cells(a_then_b)

    def test_decimated_lattice_still_valid(self):
        manifest = make_manifest(nx=11, ny=11)
        out = decimate(manifest, 5)
        GridIndex(out)  # no duplicate cells, positions land on the coarser lattice
        for r in out.records:
            i, j = r.cell(out.cell_size_m)
            assert math.hypot(r.x_m - i * out.cell_size_m, r.y_m - j * out.cell_size_m) <= 0.01


class TestGridIndex:
    def test_nearest_matches_brute_force(self, rng):
        manifest = make_manifest(nx=6, ny=4)
        grid = GridIndex(manifest)
        for _ in range(500):
            x = float(rng.uniform(-0.3, 1.3))
            y = float(rng.uniform(-0.3, 0.9))
            assert grid.nearest(x, y) == brute_force_nearest(manifest, x, y)

    def test_tie_breaks_to_lowest_cell(self):
        manifest = make_manifest(nx=2, ny=2, cell=0.25)
        grid = GridIndex(manifest)
        # exactly between (0,0) and (1,0); 0.125 is float-exact
        assert grid.nearest(0.125, 0.0) == "c00_00"
        # exactly between all four cells
        assert grid.nearest(0.125, 0.125) == "c00_00"

    def test_contains_and_record_id(self):
        grid = GridIndex(make_manifest(nx=2, ny=1))
        assert (0, 0) in grid and (1, 0) in grid
        assert (5, 5) not in grid
        assert grid.record_id((1, 0)) == "c01_00"

    def test_bounds(self):
        grid = GridIndex(make_manifest(nx=3, ny=2, cell=0.5))
        assert grid.bounds() == (0.0, 0.0, 1.0, 0.5)


class TestSynthPano:
    def test_4x2_corners(self):
        p = synth_pano(4, 2)
        assert tuple(p.pixels[0, 0]) == (0, 0, 128)
        assert tuple(p.pixels[1, 3]) == (255, 255, 128)

    def test_midline_column_formula(self):
        for w in (8, 64, 2048):
            p = synth_pano(w, w // 2)
            expected = math.floor(255.0 * (w // 2) / (w - 1) + 0.5)
            assert int(p.pixels[0, w // 2, 0]) == expected

    def test_rejects_non_2to1(self):
        with pytest.raises(ValueError):
            synth_pano(100, 60)


class TestRoundTrips:
    def test_save_load_save(self, tmp_path, disk_dataset):
        p1 = tmp_path / "m1.json"
        p2 = tmp_path / "m2.json"
        save_manifest(disk_dataset, str(p1))
        again = load_manifest(str(p1), check_files=False)
        save_manifest(again, str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_load_panorama_from_disk(self, disk_dataset):
        rec = disk_dataset.records[0]
        pano = load_panorama(disk_dataset, rec)
        assert pano.width == disk_dataset.pano_width
        assert pano.height == disk_dataset.pano_height
        assert pano.record.id == rec.id
        i, j = rec.cell(disk_dataset.cell_size_m)
        assert tuple(pano.pixels[0, 0]) == (min(255, 20 * i), min(255, 20 * j), 128)

    def test_written_synthetic_dataset_validates(self, tmp_path):
        path = write_synthetic_dataset(str(tmp_path), nx=3, ny=3, pano_width=64)
        manifest = load_manifest(path)  # includes file existence check
        report = validate(manifest, required_px_per_deg=64 / 360)
        assert report.passed
