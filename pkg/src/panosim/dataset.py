"""Panorama dataset: manifest format, grid lattice, validation, decimation.

A dataset is a JSON manifest plus one 2:1 equirectangular image per grid
cell. Capture positions sit on a square lattice with pitch
``cell_size_m``; cell (i, j) is the region of the floor closest to the
lattice point (i*d, j*d).

Manifest schema (version 1)::

    {"version": 1, "cell_size_m": 0.2,
     "pano_width": 5376, "pano_height": 2688,
     "records": [{"id": "r001", "file": "imgs/r001.jpg",
                  "x_m": 0.0, "y_m": 0.0, "z_m": 1.1,
                  "yaw_offset": 0.0, "captured_at": "..."}]}
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

LATTICE_TOL_M = 0.01  # manual rail placement; positions may be off by up to 1 cm


class DatasetError(Exception):
    """Manifest is malformed or violates a dataset invariant."""


@dataclass(frozen=True)
class PanoRecord:
    id: str
    file: str
    x_m: float
    y_m: float
    z_m: float = 0.0
    yaw_offset: float = 0.0
    captured_at: str = ""

    def cell(self, cell_size_m: float) -> tuple[int, int]:
        return (round(self.x_m / cell_size_m), round(self.y_m / cell_size_m))


@dataclass
class DatasetManifest:
    version: int
    cell_size_m: float
    pano_width: int
    pano_height: int
    records: list[PanoRecord]
    root: str = ""  # directory the record files are relative to

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "cell_size_m": self.cell_size_m,
            "pano_width": self.pano_width,
            "pano_height": self.pano_height,
            "records": [
                {
                    "id": r.id,
                    "file": r.file,
                    "x_m": r.x_m,
                    "y_m": r.y_m,
                    "z_m": r.z_m,
                    "yaw_offset": r.yaw_offset,
                    "captured_at": r.captured_at,
                }
                for r in self.records
            ],
        }


@dataclass(frozen=True)
class EquirectPanorama:
    """Decoded 2:1 panorama: (H, W, 3) uint8 pixels plus its capture record."""

    width: int
    height: int
    pixels: np.ndarray
    record: PanoRecord

    def __post_init__(self) -> None:
        if self.width != 2 * self.height:
            raise DatasetError(
                f"panorama {self.record.id!r} is {self.width}x{self.height}, not 2:1"
            )
        if self.pixels.shape != (self.height, self.width, 3):
            raise DatasetError(
                f"panorama {self.record.id!r} buffer shape {self.pixels.shape} "
                f"does not match {self.height}x{self.width}x3"
            )


class GridIndex:
    """Occupied lattice cells with deterministic nearest lookup.

    Nearest is planar distance to the lattice point of each occupied
    cell; exact ties go to the lowest (i, then j) coordinate.
    """

    def __init__(self, manifest: DatasetManifest):
        cells: dict[tuple[int, int], str] = {}
        for rec in manifest.records:
            c = rec.cell(manifest.cell_size_m)
            if c in cells:
                raise DatasetError(
                    f"records {cells[c]!r} and {rec.id!r} both round to cell {c}"
                )
            cells[c] = rec.id
        if not cells:
            raise DatasetError("empty dataset")
        self.cell_size_m = manifest.cell_size_m
        self._cells = cells
        # sorted so that np.argmin's first-match rule implements the tie-break
        self._order = sorted(cells)
        self._coords = np.array(self._order, dtype=np.float64) * manifest.cell_size_m

    def __len__(self) -> int:
        return len(self._cells)

    def __contains__(self, cell: tuple[int, int]) -> bool:
        return cell in self._cells

    @property
    def cells(self) -> list[tuple[int, int]]:
        return list(self._order)

    def record_id(self, cell: tuple[int, int]) -> str:
        return self._cells[cell]

    def nearest_cell(self, x_m: float, y_m: float) -> tuple[int, int]:
        d2 = (self._coords[:, 0] - x_m) ** 2 + (self._coords[:, 1] - y_m) ** 2
        return self._order[int(np.argmin(d2))]

    def nearest(self, x_m: float, y_m: float) -> str:
        return self._cells[self.nearest_cell(x_m, y_m)]

    def distance_to_nearest(self, x_m: float, y_m: float) -> float:
        d2 = (self._coords[:, 0] - x_m) ** 2 + (self._coords[:, 1] - y_m) ** 2
        return math.sqrt(float(np.min(d2)))

    def bounds(self) -> tuple[float, float, float, float]:
        """(min_x, min_y, max_x, max_y) of occupied lattice points, meters."""
        return (
            float(self._coords[:, 0].min()),
            float(self._coords[:, 1].min()),
            float(self._coords[:, 0].max()),
            float(self._coords[:, 1].max()),
        )


@dataclass
class ValidationReport:
    aspect_violations: list[str] = field(default_factory=list)
    duplicate_cells: list[str] = field(default_factory=list)
    missing_files: list[str] = field(default_factory=list)
    off_lattice: list[str] = field(default_factory=list)
    pano_px_per_deg: float = 0.0
    required_px_per_deg: float = 0.0

    @property
    def resolution_ok(self) -> bool:
        return self.pano_px_per_deg >= self.required_px_per_deg

    @property
    def passed(self) -> bool:
        return (
            self.resolution_ok
            and not self.aspect_violations
            and not self.duplicate_cells
            and not self.missing_files
            and not self.off_lattice
        )

    def summary_lines(self) -> list[str]:
        lines = [
            f"angular resolution: {self.pano_px_per_deg:.2f} px/deg "
            f"(required {self.required_px_per_deg:.2f}) -> "
            + ("ok" if self.resolution_ok else "FAIL")
        ]
        for name, items in [
            ("aspect violations", self.aspect_violations),
            ("duplicate cells", self.duplicate_cells),
            ("missing files", self.missing_files),
            ("off-lattice records", self.off_lattice),
        ]:
            lines.append(f"{name}: {len(items)}" + (f" ({'; '.join(items[:5])})" if items else ""))
        return lines


def angular_resolution(pano_width: int) -> float:
    """Pixels per degree of azimuth for an equirectangular panorama."""
    if pano_width <= 0:
        raise ValueError("panorama width must be positive")
    return pano_width / 360.0


def _check_lattice(manifest: DatasetManifest) -> list[str]:
    bad = []
    d = manifest.cell_size_m
    for rec in manifest.records:
        i, j = rec.cell(d)
        off = math.hypot(rec.x_m - i * d, rec.y_m - j * d)
        if off > LATTICE_TOL_M + 1e-12:
            bad.append(f"{rec.id}: {off * 100:.2f} cm from lattice point ({i},{j})")
    return bad


def load_manifest(path: str, check_files: bool = True) -> DatasetManifest:
    """Load and validate a dataset manifest.

    Structural problems (bad JSON, empty record list, duplicate cells,
    off-lattice positions, missing image files) raise DatasetError with
    per-record diagnostics.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"cannot parse manifest {path}: {e}") from e

    try:
        records = [
            PanoRecord(
                id=r["id"],
                file=r["file"],
                x_m=float(r["x_m"]),
                y_m=float(r["y_m"]),
                z_m=float(r.get("z_m", 0.0)),
                yaw_offset=float(r.get("yaw_offset", 0.0)),
                captured_at=r.get("captured_at", ""),
            )
            for r in doc["records"]
        ]
        manifest = DatasetManifest(
            version=int(doc["version"]),
            cell_size_m=float(doc["cell_size_m"]),
            pano_width=int(doc["pano_width"]),
            pano_height=int(doc["pano_height"]),
            records=records,
            root=os.path.dirname(os.path.abspath(path)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"manifest {path} is malformed: {e!r}") from e

    if manifest.cell_size_m <= 0:
        raise DatasetError("cell_size_m must be positive")
    if not manifest.records:
        raise DatasetError("empty dataset")
    if manifest.pano_width != 2 * manifest.pano_height:
        raise DatasetError(
            f"panorama size {manifest.pano_width}x{manifest.pano_height} is not 2:1"
        )

    ids = [r.id for r in manifest.records]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DatasetError(f"duplicate record ids: {dupes}")

    GridIndex(manifest)  # raises on duplicate cells

    off = _check_lattice(manifest)
    if off:
        raise DatasetError("records off lattice: " + "; ".join(off))

    if check_files:
        missing = [
            r.id for r in manifest.records
            if not os.path.isfile(os.path.join(manifest.root, r.file))
        ]
        if missing:
            raise DatasetError(f"missing image files for records: {missing}")
    return manifest


def save_manifest(manifest: DatasetManifest, path: str) -> None:
    """Write the manifest atomically (temp file + rename)."""
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp, path)


def validate(manifest: DatasetManifest, required_px_per_deg: float = 10.0) -> ValidationReport:
    """Audit a loaded manifest; findings go in the report, nothing raises."""
    report = ValidationReport(
        pano_px_per_deg=angular_resolution(manifest.pano_width),
        required_px_per_deg=required_px_per_deg,
    )
    if manifest.pano_width != 2 * manifest.pano_height:
        report.aspect_violations.append(
            f"manifest: {manifest.pano_width}x{manifest.pano_height} is not 2:1"
        )
    seen: dict[tuple[int, int], str] = {}
    for rec in manifest.records:
        c = rec.cell(manifest.cell_size_m)
        if c in seen:
            report.duplicate_cells.append(f"cell {c}: {seen[c]} and {rec.id}")
        else:
            seen[c] = rec.id
        if not os.path.isfile(os.path.join(manifest.root, rec.file)):
            report.missing_files.append(rec.id)
    report.off_lattice = _check_lattice(manifest)
    return report


def decimate(manifest: DatasetManifest, k: int) -> DatasetManifest:
    """Keep every k-th lattice row and column, multiplying the grid pitch by k."""
    if k < 1:
        raise ValueError("decimation factor must be >= 1")
    if k == 1:
        return DatasetManifest(
            version=manifest.version,
            cell_size_m=manifest.cell_size_m,
            pano_width=manifest.pano_width,
            pano_height=manifest.pano_height,
            records=list(manifest.records),
            root=manifest.root,
        )
    kept = [
        r
        for r in manifest.records
        if r.cell(manifest.cell_size_m)[0] % k == 0 and r.cell(manifest.cell_size_m)[1] % k == 0
    ]
    if not kept:
        raise DatasetError(f"decimation by {k} empties dataset")
    return DatasetManifest(
        version=manifest.version,
        cell_size_m=manifest.cell_size_m * k,
        pano_width=manifest.pano_width,
        pano_height=manifest.pano_height,
        records=kept,
        root=manifest.root,
    )


def load_panorama(manifest: DatasetManifest, record: PanoRecord) -> EquirectPanorama:
    """Decode a record's image file into an EquirectPanorama."""
    path = os.path.join(manifest.root, record.file)
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            pixels = np.asarray(rgb, dtype=np.uint8)
    except OSError as e:
        raise DatasetError(f"cannot decode panorama {record.id!r} ({path}): {e}") from e
    h, w = pixels.shape[:2]
    return EquirectPanorama(width=w, height=h, pixels=pixels, record=record)


def synth_pano(width: int, height: int, record: PanoRecord | None = None) -> EquirectPanorama:
    """Direction-encoding test panorama with a closed-form color law.

    Pixel (u, v) is (round(255*u/(W-1)), round(255*v/(H-1)), 128), so a
    sampled color can be predicted analytically from the sample point
    alone. Rounds half up.
    """
    if width != 2 * height:
        raise ValueError(f"synthetic panorama must be 2:1, got {width}x{height}")
    u = np.floor(255.0 * np.arange(width) / (width - 1) + 0.5).astype(np.uint8)
    v = np.floor(255.0 * np.arange(height) / (height - 1) + 0.5).astype(np.uint8)
    pixels = np.empty((height, width, 3), dtype=np.uint8)
    pixels[:, :, 0] = u[None, :]
    pixels[:, :, 1] = v[:, None]
    pixels[:, :, 2] = 128
    if record is None:
        record = PanoRecord(id="synthetic", file="<synthetic>", x_m=0.0, y_m=0.0)
    return EquirectPanorama(width=width, height=height, pixels=pixels, record=record)


def write_synthetic_dataset(
    root: str,
    nx: int = 11,
    ny: int = 11,
    cell_size_m: float = 0.2,
    pano_width: int = 256,
    color_per_cell: bool = True,
    z_m: float = 1.1,
) -> str:
    """Write an nx x ny synthetic dataset under `root`; returns the manifest path.

    With color_per_cell, each panorama is a flat color encoding its own
    lattice coordinates, so frames rendered from different source cells
    differ by an amount proportional to the cell distance. Otherwise
    every cell gets the direction-encoding panorama.
    """
    pano_height = pano_width // 2
    if pano_width != 2 * pano_height:
        raise ValueError("pano_width must be even")
    img_dir = os.path.join(root, "imgs")
    os.makedirs(img_dir, exist_ok=True)
    records = []
    for i in range(nx):
        for j in range(ny):
            rid = f"c{i:02d}_{j:02d}"
            fname = os.path.join("imgs", rid + ".png")
            if color_per_cell:
                color = (min(255, 20 * i), min(255, 20 * j), 128)
                pixels = np.full((pano_height, pano_width, 3), color, dtype=np.uint8)
            else:
                pixels = synth_pano(pano_width, pano_height).pixels
            Image.fromarray(pixels).save(os.path.join(root, fname))
            records.append(
                PanoRecord(
                    id=rid,
                    file=fname,
                    x_m=i * cell_size_m,
                    y_m=j * cell_size_m,
                    z_m=z_m,
                    captured_at="2021-01-01T00:00:00Z",
                )
            )
    manifest = DatasetManifest(
        version=1,
        cell_size_m=cell_size_m,
        pano_width=pano_width,
        pano_height=pano_height,
        records=records,
        root=root,
    )
    path = os.path.join(root, "manifest.json")
    save_manifest(manifest, path)
    return path
