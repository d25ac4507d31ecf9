"""Panorama residency: LRU cache, decode workers, predictive prefetch.

Decode latency is the simulator's real bottleneck (a full-resolution
panorama takes on the order of 200 ms to load and decode, versus well
under real-time budgets for rendering), so the cache keeps recently used
panoramas resident and decodes upcoming ones ahead of the robot.

Scheduling model:
  * prefetch() enqueues decodes on a pool of `workers` threads, FIFO,
    bounded so in-flight work always fits in the cache alongside the
    current panorama;
  * get() on a miss decodes inline on the (already blocked) calling
    thread unless the cell is in flight, in which case it waits for
    that decode;
  * insertion evicts least-recently-used entries, never the current
    cell's panorama.

The sustainable robot speed is cell_size * workers / t_load. Note that
diagonal motion crosses cell borders every cell_size/sqrt(2) meters, so
the effective diagonal limit is lower by that factor.
"""

from __future__ import annotations

import logging
import math
import threading
import time
from collections import OrderedDict
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .dataset import EquirectPanorama, GridIndex
from .renderer import CameraPose

logger = logging.getLogger(__name__)

Cell = tuple[int, int]


class PanoDecodeError(Exception):
    """A panorama failed to decode; carries the offending record id."""

    def __init__(self, cell: Cell, pano_id: str, cause: Exception):
        super().__init__(f"decode of panorama {pano_id!r} (cell {cell}) failed: {cause}")
        self.cell = cell
        self.pano_id = pano_id
        self.cause = cause


@dataclass(frozen=True)
class CacheConfig:
    capacity: int = 16
    workers: int = 1
    prefetch_depth: int = 2
    neighbor_k: int = 4

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.prefetch_depth < 0 or self.neighbor_k < 0:
            raise ValueError("prefetch_depth and neighbor_k must be >= 0")
        if self.capacity < self.neighbor_k + self.prefetch_depth:
            raise ValueError(
                f"capacity {self.capacity} < neighbor_k + prefetch_depth "
                f"({self.neighbor_k} + {self.prefetch_depth})"
            )


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    stalls: int = 0
    mean_decode_ms: float = 0.0
    last_decode_ms: float = 0.0
    resident: int = 0
    decodes: int = 0
    prefetch_scheduled: int = 0
    decode_errors: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class PrefetchPlan:
    """Cells to warm, best first; never contains the current cell."""

    cells: tuple[Cell, ...]
    distances: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.cells) != len(set(self.cells)):
            raise ValueError("prefetch plan contains duplicate cells")
        if len(self.distances) != len(self.cells):
            raise ValueError("one distance per planned cell required")

    def __len__(self) -> int:
        return len(self.cells)


def max_speed(cell_size: float, t_load: float, workers: int = 1) -> float:
    """Aggregate speed limit (m/s) sustainable without decode stalls."""
    if cell_size <= 0 or t_load <= 0 or workers <= 0:
        raise ValueError("cell_size, t_load and workers must all be positive")
    return cell_size * workers / t_load


def predict_cells(
    pose: CameraPose,
    grid: GridIndex,
    depth: int = 2,
    neighbor_k: int = 4,
) -> PrefetchPlan:
    """Cells the robot will need next, from its velocity vector.

    With velocity, the motion ray is marched across the lattice
    (Amanatides-Woo stepping; exact corner hits step diagonally) and the
    first `depth` occupied cells entered after leaving the current cell
    are returned in crossing order. A stationary robot falls back to the
    neighbor_k nearest occupied cells.
    """
    d = grid.cell_size_m
    current = grid.nearest_cell(pose.x_m, pose.y_m)

    if pose.vx == 0.0 and pose.vy == 0.0:
        scored = sorted(
            (math.hypot(i * d - pose.x_m, j * d - pose.y_m), i, j)
            for (i, j) in grid.cells
            if (i, j) != current
        )[:neighbor_k]
        return PrefetchPlan(
            cells=tuple((i, j) for _, i, j in scored),
            distances=tuple(dist for dist, _, _ in scored),
        )

    speed = math.hypot(pose.vx, pose.vy)
    vx, vy = pose.vx / speed, pose.vy / speed
    # normalized coordinates: boundaries at integers, cell index = floor
    px, py = pose.x_m / d + 0.5, pose.y_m / d + 0.5
    i, j = math.floor(px), math.floor(py)
    start_cell = (i, j)

    step_x = 1 if vx > 0 else (-1 if vx < 0 else 0)
    step_y = 1 if vy > 0 else (-1 if vy < 0 else 0)
    tmax_x = ((i + 1 - px) / vx if vx > 0 else (i - px) / vx) if vx else math.inf
    tmax_y = ((j + 1 - py) / vy if vy > 0 else (j - py) / vy) if vy else math.inf
    tdelta_x = abs(1.0 / vx) if vx else math.inf
    tdelta_y = abs(1.0 / vy) if vy else math.inf

    min_x, min_y, max_x, max_y = grid.bounds()
    lo_i, lo_j = round(min_x / d) - 1, round(min_y / d) - 1
    hi_i, hi_j = round(max_x / d) + 1, round(max_y / d) + 1

    cells: list[Cell] = []
    dists: list[float] = []
    while len(cells) < depth:
        if tmax_x < tmax_y:
            t = tmax_x
            i += step_x
            tmax_x += tdelta_x
        elif tmax_y < tmax_x:
            t = tmax_y
            j += step_y
            tmax_y += tdelta_y
        else:  # exact corner crossing: step into the diagonal neighbor
            t = tmax_x
            i += step_x
            j += step_y
            tmax_x += tdelta_x
            tmax_y += tdelta_y
        if i < lo_i or i > hi_i or j < lo_j or j > hi_j:
            break
        if (i, j) != start_cell and (i, j) != current and (i, j) in grid:
            cells.append((i, j))
            dists.append(t * d)
    return PrefetchPlan(cells=tuple(cells), distances=tuple(dists))


class PanoCache:
    """Thread-safe panorama store shared by the renderer and decode workers."""

    def __init__(
        self,
        grid: GridIndex,
        loader: Callable[[Cell], EquirectPanorama],
        config: CacheConfig | None = None,
    ):
        self._grid = grid
        self._loader = loader
        self.config = config or CacheConfig()
        self._lock = threading.Lock()
        self._store: "OrderedDict[Cell, EquirectPanorama]" = OrderedDict()
        self._inflight: dict[Cell, Future] = {}
        self._executor = ThreadPoolExecutor(
            max_workers=self.config.workers, thread_name_prefix="pano-decode"
        )
        self._current: Cell | None = None
        self._stats = CacheStats()
        self._decode_ms_total = 0.0

    def close(self) -> None:
        self._executor.shutdown(wait=True)

    def __enter__(self) -> "PanoCache":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def get(self, cell: Cell, for_render: bool = True) -> EquirectPanorama:
        """Return the cell's panorama, decoding (and blocking) on a miss.

        A miss by a frame render is a stall; lookups for warming or
        inspection pass for_render=False.
        """
        return self.fetch(cell, for_render)[0]

    def fetch(self, cell: Cell, for_render: bool = True) -> tuple[EquirectPanorama, bool]:
        """Like get(), also reporting whether this lookup blocked (stalled)."""
        if cell not in self._grid:
            raise KeyError(f"cell {cell} is not occupied in the dataset grid")
        inline = False
        with self._lock:
            self._current = cell
            pano = self._store.get(cell)
            if pano is not None:
                self._store.move_to_end(cell)
                self._stats.hits += 1
                return pano, False
            self._stats.misses += 1
            if for_render:
                self._stats.stalls += 1
            fut = self._inflight.get(cell)
            if fut is None:
                fut = Future()
                self._inflight[cell] = fut
                inline = True
        if inline:
            self._decode(cell, fut)
        return fut.result(), True

    def prefetch(self, plan: PrefetchPlan) -> int:
        """Queue decodes for the plan's cells; returns how many were scheduled.

        Never blocks. Scheduling is capped so everything in flight fits
        in the cache alongside the current cell's panorama.
        """
        scheduled = 0
        with self._lock:
            budget = self.config.capacity - len(self._inflight) - 1
            for cell in plan.cells:
                if scheduled >= budget:
                    break
                if (
                    cell == self._current
                    or cell in self._store
                    or cell in self._inflight
                    or cell not in self._grid
                ):
                    continue
                fut: Future = Future()
                self._inflight[cell] = fut
                self._executor.submit(self._decode, cell, fut, True)
                self._stats.prefetch_scheduled += 1
                scheduled += 1
        return scheduled

    def stats(self) -> CacheStats:
        with self._lock:
            snap = CacheStats(**self._stats.__dict__)
            snap.resident = len(self._store)
            return snap

    def resident_cells(self) -> list[Cell]:
        with self._lock:
            return list(self._store)

    # internal ------------------------------------------------------------

    def _decode(self, cell: Cell, fut: Future, prefetched: bool = False) -> None:
        t0 = time.monotonic()
        try:
            pano = self._loader(cell)
            expected = self._grid.record_id(cell)
            if pano.record.id != expected:
                raise ValueError(
                    f"loader returned panorama {pano.record.id!r}, expected {expected!r}"
                )
        except Exception as e:  # propagated to waiters via the future
            with self._lock:
                self._inflight.pop(cell, None)
                self._stats.decode_errors += 1
            err = e if isinstance(e, PanoDecodeError) else PanoDecodeError(
                cell, self._grid.record_id(cell), e
            )
            if prefetched:
                logger.warning("prefetch decode failed: %s", err)
            fut.set_exception(err)
            return
        elapsed_ms = (time.monotonic() - t0) * 1000.0
        with self._lock:
            self._inflight.pop(cell, None)
            self._store[cell] = pano
            self._stats.decodes += 1
            self._decode_ms_total += elapsed_ms
            self._stats.last_decode_ms = elapsed_ms
            self._stats.mean_decode_ms = self._decode_ms_total / self._stats.decodes
            self._evict_locked()
        fut.set_result(pano)

    def _evict_locked(self) -> None:
        while len(self._store) > self.config.capacity:
            victim = next((c for c in self._store if c != self._current), None)
            if victim is None:
                break
            del self._store[victim]


def make_file_loader(manifest, grid: GridIndex) -> Callable[[Cell], EquirectPanorama]:
    """Loader that decodes the manifest's image file for a cell."""
    from .dataset import load_panorama

    by_id = {r.id: r for r in manifest.records}

    def load(cell: Cell) -> EquirectPanorama:
        return load_panorama(manifest, by_id[grid.record_id(cell)])

    return load


# ---------------------------------------------------------------------------
# Virtual-clock trajectory replay
# ---------------------------------------------------------------------------


@dataclass
class FrameTrace:
    t: float  # trajectory time of the pose
    wall_t: float  # t plus accumulated stall delay, when the frame was served
    cell: Cell
    stalled: bool
    wait_s: float
    resident_before: int


@dataclass
class TrajectoryReport:
    frames: list[FrameTrace] = field(default_factory=list)
    stalls: int = 0
    total_wait_s: float = 0.0

    @property
    def stalls_after_first_cell(self) -> int:
        """Stalls once the robot has left the cell it started in."""
        if not self.frames:
            return 0
        first = self.frames[0].cell
        started_moving = False
        n = 0
        for fr in self.frames:
            if fr.cell != first:
                started_moving = True
            if started_moving and fr.stalled:
                n += 1
        return n


def simulate_trajectory(
    poses: Sequence[tuple[float, CameraPose]],
    grid: GridIndex,
    config: CacheConfig | None = None,
    decode_latency: float | Callable[[Cell], float] = 0.2,
) -> TrajectoryReport:
    """Replay a timed pose sequence against a virtual clock.

    Models the cache's scheduling exactly (FIFO worker pool for
    prefetch, inline demand decode, LRU eviction) with synthetic decode
    latency and no real sleeping. A stall pauses the clock: the world
    halts while a frame render blocks, so later poses are served at
    their trajectory time plus the accumulated delay. Deterministic for
    a fixed latency model.
    """
    config = config or CacheConfig()
    latency = decode_latency if callable(decode_latency) else (lambda _cell: decode_latency)

    worker_free = [0.0] * config.workers  # wall time each decode worker frees up
    finish_at: dict[Cell, float] = {}  # scheduled completion of in-flight decodes
    pending: list[tuple[float, Cell]] = []  # completions not yet applied, sorted
    store: "OrderedDict[Cell, None]" = OrderedDict()
    current: Cell | None = None
    delay = 0.0
    report = TrajectoryReport()

    def insert(cell: Cell) -> None:
        store[cell] = None
        while len(store) > config.capacity:
            victim = next((c for c in store if c != current), None)
            if victim is None:
                break
            del store[victim]

    def advance(now: float) -> None:
        while pending and pending[0][0] <= now:
            _, cell = pending.pop(0)
            finish_at.pop(cell, None)
            insert(cell)

    def enqueue(cell: Cell, now: float) -> float:
        w = min(range(config.workers), key=lambda k: worker_free[k])
        start = max(worker_free[w], now)
        finish = start + latency(cell)
        worker_free[w] = finish
        finish_at[cell] = finish
        pending.append((finish, cell))
        pending.sort()
        return finish

    last_t = -math.inf
    for t, pose in poses:
        if t <= last_t:
            raise ValueError("poses must be strictly time-ordered")
        last_t = t
        wall = t + delay
        advance(wall)
        cell = grid.nearest_cell(pose.x_m, pose.y_m)
        current = cell

        plan = predict_cells(
            pose, grid, depth=config.prefetch_depth, neighbor_k=config.neighbor_k
        )
        budget = config.capacity - len(finish_at) - 1
        scheduled = 0
        for c in plan.cells:
            if scheduled >= budget:
                break
            if c == cell or c in store or c in finish_at:
                continue
            enqueue(c, wall)
            scheduled += 1

        resident_before = len(store)
        if cell in store:
            store.move_to_end(cell)
            report.frames.append(FrameTrace(t, wall, cell, False, 0.0, resident_before))
            continue

        if cell in finish_at:
            ready = finish_at[cell]
            advance(ready)
        else:
            ready = wall + latency(cell)  # inline demand decode
            advance(ready)
            insert(cell)
        wait = ready - wall
        delay += wait
        report.stalls += 1
        report.total_wait_s += wait
        report.frames.append(FrameTrace(t, ready, cell, True, wait, resident_before))

    return report
