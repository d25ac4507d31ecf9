import math

import numpy as np
import pytest

from panosim.dataset import (
    DatasetManifest,
    GridIndex,
    PanoRecord,
    load_manifest,
    synth_pano,
    write_synthetic_dataset,
)


@pytest.fixture(scope="session")
def synth_2048():
    """Direction-encoding panorama used by the projection oracles."""
    return synth_pano(2048, 1024)


def make_manifest(nx=5, ny=5, cell=0.2, pano_w=256, root="", exact=True):
    """In-memory manifest of an nx x ny lattice (no image files)."""
    records = []
    for i in range(nx):
        for j in range(ny):
            records.append(
                PanoRecord(
                    id=f"c{i:02d}_{j:02d}",
                    file=f"imgs/c{i:02d}_{j:02d}.png",
                    x_m=i * cell if exact else i * cell + 0.004,
                    y_m=j * cell,
                    z_m=1.1,
                )
            )
    return DatasetManifest(
        version=1,
        cell_size_m=cell,
        pano_width=pano_w,
        pano_height=pano_w // 2,
        records=records,
        root=root,
    )


@pytest.fixture(scope="session")
def disk_dataset(tmp_path_factory):
    """5x5 dataset on disk, flat color per cell, 128px panos."""
    root = tmp_path_factory.mktemp("dataset5")
    path = write_synthetic_dataset(str(root), nx=5, ny=5, cell_size_m=0.2, pano_width=128)
    return load_manifest(path)


@pytest.fixture(scope="session")
def study_dataset(tmp_path_factory):
    """11x11 dataset for the decimation study (factors 1/5/10 stay occupied)."""
    root = tmp_path_factory.mktemp("dataset11")
    path = write_synthetic_dataset(str(root), nx=11, ny=11, cell_size_m=0.2, pano_width=128)
    return path


@pytest.fixture()
def rng():
    return np.random.default_rng(20210404)


def random_unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def grid_of(manifest) -> GridIndex:
    return GridIndex(manifest)


def brute_force_nearest(manifest, x, y):
    """Independent nearest-record search: lexicographic (d2, i, j) minimum."""
    d = manifest.cell_size_m
    best = None
    for rec in manifest.records:
        i, j = rec.cell(d)
        d2 = (i * d - x) ** 2 + (j * d - y) ** 2
        key = (d2, i, j)
        if best is None or key < best[0]:
            best = (key, rec.id)
    return best[1]


def assert_angle(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def dot(u, v):
    return u.x * v.x + u.y * v.y + u.z * v.z


def angle_between(u, v):
    return math.acos(max(-1.0, min(1.0, dot(u, v))))
