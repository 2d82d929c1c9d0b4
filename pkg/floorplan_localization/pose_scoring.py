"""
pose_scoring.py - pose grid, DAFPM and top-X candidates
=======================================================
Every free grid pose is scored by how well its ground-truth ray fan agrees
with the predicted fan:

    score(S) = exp(-mean_j |pred_j - gt_j(S)| / sigma)

normalized over the free poses. The ground-truth fans of all grid poses are
cast once per (map, grid, fan) into a GtRayTable and reused across queries.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from config import FanConfig, GridConfig
from file_formats import read_dpmf, write_dpmf, write_graymap
from floc_errors import EmptyDomainError, ValidationError
from floorplan_core import (TWO_PI, FanSpec, FloorPlan, Pose, RayFan,
                            bearing_directions, canonical_angle, traverse_grid)

logger = logging.getLogger("FLOC.scoring")


# ─────────────────────────────────────────────
# Grid
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class PoseGridSpec:
    cell_stride: float
    n_orientations: int = GridConfig.N_ORIENTATIONS

    def __post_init__(self):
        if not self.cell_stride > 0:
            raise ValidationError(f"cell_stride must be > 0, got {self.cell_stride}")
        if int(self.n_orientations) != self.n_orientations or self.n_orientations < 1:
            raise ValidationError(f"n_orientations must be a positive integer, got {self.n_orientations}")

    @classmethod
    def default_for(cls, fp: FloorPlan, n_orientations: int = GridConfig.N_ORIENTATIONS) -> "PoseGridSpec":
        stride = fp.resolution if fp.resolution >= GridConfig.MIN_STRIDE_M else GridConfig.MIN_STRIDE_M
        return cls(cell_stride=stride, n_orientations=n_orientations)

    def orientation_of_bin(self, b: int) -> float:
        return canonical_angle(TWO_PI * b / self.n_orientations)


class PoseGrid:
    """Materialized grid over one floorplan"""

    def __init__(self, fp: FloorPlan, spec: PoseGridSpec):
        self.floorplan = fp
        self.spec = spec
        self.ratio = spec.cell_stride / fp.resolution
        self.n_cols = int(math.floor(fp.width_cells / self.ratio + 1e-9))
        self.n_rows = int(math.floor(fp.height_cells / self.ratio + 1e-9))
        if self.n_cols * self.n_rows * spec.n_orientations == 0:
            raise ValidationError(
                f"stride {spec.cell_stride} m leaves no grid cells on a "
                f"{fp.width_cells}x{fp.height_cells} map")
        self.gx = np.array([round((j + 0.5) * self.ratio, FanConfig.SNAP_DIGITS)
                            for j in range(self.n_cols)])
        self.gy = np.array([round((i + 0.5) * self.ratio, FanConfig.SNAP_DIGITS)
                            for i in range(self.n_rows)])
        rows = np.floor(self.gy).astype(np.int64)
        cols = np.floor(self.gx).astype(np.int64)
        self.mask = ~fp.occupancy[np.ix_(rows, cols)]
        self.mask.flags.writeable = False
        self.thetas = np.array([spec.orientation_of_bin(b) for b in range(spec.n_orientations)])

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.n_rows, self.n_cols, self.spec.n_orientations)

    def free_positions(self) -> np.ndarray:
        """(K, 2) free (row, col) grid cells, row-major"""
        return np.argwhere(self.mask)

    def position_of(self, row: int, col: int) -> Tuple[float, float]:
        fp = self.floorplan
        return (fp.origin[0] + self.gx[col] * fp.resolution,
                fp.origin[1] + self.gy[row] * fp.resolution)

    def pose_at(self, row: int, col: int, o: int) -> Pose:
        x, y = self.position_of(row, col)
        return Pose(x, y, self.thetas[o])

    def pose_of_flat(self, flat: int) -> Pose:
        row, col, o = np.unravel_index(int(flat), self.shape)
        return self.pose_at(int(row), int(col), int(o))

    def index_of(self, pose: Pose) -> Tuple[int, int, int]:
        """Nearest grid cell and orientation bin of a continuous pose"""
        fp = self.floorplan
        gx, gy = fp.world_to_grid(pose.x, pose.y)
        col = min(max(int(math.floor(gx / self.ratio)), 0), self.n_cols - 1)
        row = min(max(int(math.floor(gy / self.ratio)), 0), self.n_rows - 1)
        o = int(round(pose.theta / (TWO_PI / self.spec.n_orientations))) % self.spec.n_orientations
        return row, col, o


# ─────────────────────────────────────────────
# Ground-truth ray table
# ─────────────────────────────────────────────
def _run_chunks(fn, n_items: int, chunk: int, threads: int) -> List:
    bounds = [(s, min(s + chunk, n_items)) for s in range(0, n_items, chunk)]
    if threads <= 1 or len(bounds) <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))


class GtRayTable:
    """GT fans of every free grid pose: depths[k, o, i] for free position k"""

    def __init__(self, grid: PoseGrid, fan: FanSpec, depths: np.ndarray):
        self.grid = grid
        self.fan = fan
        self.depths = depths
        self.positions = grid.free_positions()

    @classmethod
    def build(cls, grid: PoseGrid, fan: FanSpec = None, threads: int = 1,
              chunk: int = GridConfig.CHUNK_POSITIONS) -> "GtRayTable":
        fan = fan or FanSpec()
        start = time.time()
        fp = grid.floorplan
        positions = grid.free_positions()
        offsets = fan.offsets()
        bearings = grid.thetas[:, None] + offsets[None, :]
        cos_b, sin_b = bearing_directions(bearings)
        n_o, n_r = bearings.shape
        max_t = fan.max_range / fp.resolution
        gx_all = grid.gx[positions[:, 1]]
        gy_all = grid.gy[positions[:, 0]]

        def cast_chunk(lo: int, hi: int) -> np.ndarray:
            p = hi - lo
            gx = np.repeat(gx_all[lo:hi], n_o * n_r)
            gy = np.repeat(gy_all[lo:hi], n_o * n_r)
            cx = np.tile(cos_b.ravel(), p)
            cy = np.tile(sin_b.ravel(), p)
            t, hit = traverse_grid(fp.occupancy, gx, gy, cx, cy, max_t)
            d = np.where(hit, np.minimum(t * fp.resolution, fan.max_range), fan.max_range)
            return d.reshape(p, n_o, n_r)

        parts = _run_chunks(cast_chunk, positions.shape[0], chunk, threads)
        depths = np.concatenate(parts, axis=0) if parts else np.zeros((0, n_o, n_r))
        logger.info(f"GT ray table: {positions.shape[0]} positions x {n_o} bins x {n_r} rays "
                    f"in {time.time() - start:.2f}s")
        return cls(grid, fan, depths)

    def fan_at(self, row: int, col: int, o: int) -> np.ndarray:
        hit = np.flatnonzero((self.positions[:, 0] == row) & (self.positions[:, 1] == col))
        if hit.size == 0:
            raise ValidationError(f"grid cell ({row}, {col}) is not free")
        return self.depths[int(hit[0]), o]


# ─────────────────────────────────────────────
# ProbMap / candidates
# ─────────────────────────────────────────────
@dataclass(eq=False)
class ProbMap:
    values: np.ndarray      # (H, W, O)
    grid: PoseGrid

    @property
    def spec(self) -> PoseGridSpec:
        return self.grid.spec

    @property
    def mask(self) -> np.ndarray:
        return self.grid.mask

    def free_flat_indices(self) -> np.ndarray:
        o = self.values.shape[2]
        cells = np.flatnonzero(self.grid.mask.ravel())
        return (cells[:, None] * o + np.arange(o)[None, :]).ravel()


@dataclass(frozen=True)
class Candidate:
    pose: Pose
    score: float
    index: Tuple[int, int, int]


@dataclass
class CandidateSet:
    candidates: List[Candidate] = field(default_factory=list)

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __getitem__(self, i):
        return self.candidates[i]

    def scores(self) -> np.ndarray:
        return np.array([c.score for c in self.candidates], dtype=np.float64)

    def poses(self) -> List[Pose]:
        return [c.pose for c in self.candidates]


# ─────────────────────────────────────────────
# Scoring
# ─────────────────────────────────────────────
def _pred_depths(pred: Union[RayFan, np.ndarray]) -> np.ndarray:
    if isinstance(pred, RayFan):
        return np.asarray(pred.depths, dtype=np.float64)
    return np.asarray(pred, dtype=np.float64).ravel()


def build_dafpm(fp: FloorPlan, pred: Union[RayFan, np.ndarray], grid: PoseGridSpec = None,
                sigma: float = GridConfig.SIGMA_M, table: Optional[GtRayTable] = None,
                fan: Optional[FanSpec] = None, threads: int = 1) -> ProbMap:
    if not sigma > 0:
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    depths = _pred_depths(pred)
    if table is None:
        spec = grid or PoseGridSpec.default_for(fp)
        if fan is None:
            fan = (FanSpec(n_rays=depths.size, fov=pred.fov, max_range=pred.max_range)
                   if isinstance(pred, RayFan) else FanSpec(n_rays=depths.size))
        table = GtRayTable.build(PoseGrid(fp, spec), fan, threads=threads)
    elif grid is not None and grid != table.grid.spec:
        raise ValidationError("grid spec differs from the one the GT ray table was built for")
    if depths.size != table.fan.n_rays:
        raise ValidationError(
            f"prediction has {depths.size} rays, the GT fans have {table.fan.n_rays}")

    pose_grid = table.grid
    n_free = table.depths.shape[0]
    if n_free == 0:
        raise EmptyDomainError("the map has no free grid poses")

    def error_chunk(lo: int, hi: int) -> np.ndarray:
        return np.abs(table.depths[lo:hi] - depths[None, None, :]).mean(axis=2)

    errors = np.concatenate(_run_chunks(error_chunk, n_free, GridConfig.CHUNK_POSITIONS, threads))
    log_scores = -errors / sigma
    probs = np.exp(log_scores - logsumexp(log_scores))

    values = np.zeros(pose_grid.shape, dtype=np.float64)
    values[table.positions[:, 0], table.positions[:, 1], :] = probs
    return ProbMap(values=values, grid=pose_grid)


def argmax_pose(pmap: ProbMap) -> Pose:
    flat = pmap.values.ravel()
    if flat.size == 0 or not np.any(flat > 0):
        raise EmptyDomainError("probability map has no positive entry")
    return pmap.grid.pose_of_flat(int(np.argmax(flat)))


def top_x(pmap: ProbMap, x: int = 100) -> CandidateSet:
    if x < 1:
        raise ValidationError(f"x must be >= 1, got {x}")
    free = pmap.free_flat_indices()
    if free.size == 0:
        raise EmptyDomainError("probability map has no free poses")
    flat = pmap.values.ravel()
    order = np.argsort(-flat[free], kind="stable")[:x]
    if x > free.size:
        logger.warning(f"top-{x} saturated: only {free.size} free poses")
    shape = pmap.values.shape
    out = []
    for k in order:
        idx = int(free[k])
        row, col, o = (int(v) for v in np.unravel_index(idx, shape))
        out.append(Candidate(pose=pmap.grid.pose_at(row, col, o),
                             score=float(flat[idx]), index=(row, col, o)))
    return CandidateSet(out)


# ─────────────────────────────────────────────
# Export
# ─────────────────────────────────────────────
def export_probmap(pmap: ProbMap, path: str):
    write_dpmf(path, pmap.values)


def load_probmap(path: str, grid: PoseGrid) -> ProbMap:
    values = read_dpmf(path)
    if values.shape != grid.shape:
        raise ValidationError(f"{path}: shape {values.shape} does not match grid {grid.shape}")
    return ProbMap(values=values, grid=grid)


def export_probmap_graymap(pmap: ProbMap, path: str):
    """Max over orientations, scaled so the peak is 255"""
    peak = pmap.values.max(axis=2)
    top = float(peak.max())
    scaled = np.zeros_like(peak) if top <= 0 else np.rint(peak / top * 255.0)
    write_graymap(path, scaled.astype(np.uint8))
