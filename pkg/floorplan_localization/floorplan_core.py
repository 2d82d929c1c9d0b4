"""
floorplan_core.py - floorplan, poses and exact 2D ray casting
=============================================================
Grid convention:
  - occupancy[row, col], True = wall
  - world x grows with col, world y grows with row, origin = corner of cell (0, 0)
  - cell centers sit at origin + (index + 0.5) * resolution
  - bearings are measured from +x toward +y

Ray casting is an Amanatides-Woo traversal in grid units: every crossed
cell is visited once, no marching step. The depth of a hit is the distance
to the near boundary of the first wall cell.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from config import FanConfig, OracleConfig
from file_formats import read_graymap, read_json, write_graymap, write_json
from floc_errors import (FloorplanFormatError, MissingInputError, OccupiedOriginError,
                         OutOfBoundsError, ValidationError)

logger = logging.getLogger("FLOC.raycast")

TWO_PI = 2.0 * math.pi
WALL_THRESHOLD = 128


def canonical_angle(theta: float) -> float:
    """Maps any angle to [0, 2pi); rounding to 1e-12 makes theta and theta + 2pi*k agree bitwise"""
    t = round(math.fmod(float(theta), TWO_PI), 12)
    if t < 0.0:
        t = round(t + TWO_PI, 12)
    if t >= TWO_PI:
        t = 0.0
    return t + 0.0


def angle_difference(a: float, b: float) -> float:
    """Unsigned wrapped difference in [0, pi]"""
    d = abs(canonical_angle(a) - canonical_angle(b))
    # same rounding as canonical_angle, so pi/6 either side of 0 compares equal to pi/6
    return round(min(d, TWO_PI - d), 12)


# ─────────────────────────────────────────────
# Pose
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", canonical_angle(self.theta))

    @property
    def position(self) -> Tuple[float, float]:
        return (self.x, self.y)

    def rotated(self, delta: float) -> "Pose":
        return Pose(self.x, self.y, self.theta + delta)

    def translated(self, dx: float, dy: float) -> "Pose":
        return Pose(self.x + dx, self.y + dy, self.theta)

    def distance_to(self, other: "Pose") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "theta": self.theta}


# ─────────────────────────────────────────────
# FloorPlan
# ─────────────────────────────────────────────
@dataclass(frozen=True, eq=False)
class FloorPlan:
    occupancy: np.ndarray
    resolution: float
    origin: Tuple[float, float] = (0.0, 0.0)
    texture: Optional[np.ndarray] = None

    def __post_init__(self):
        occ = np.array(self.occupancy, dtype=bool)
        if occ.ndim != 2 or occ.size == 0:
            raise ValidationError(f"occupancy must be a non-empty 2D grid, got shape {occ.shape}")
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise ValidationError(f"resolution must be > 0, got {self.resolution}")
        occ.flags.writeable = False
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        if self.texture is not None:
            tex = np.array(self.texture, dtype=np.uint8)
            if tex.shape != occ.shape:
                raise ValidationError(
                    f"texture grid {tex.shape} does not match occupancy {occ.shape}")
            tex.flags.writeable = False
            object.__setattr__(self, "texture", tex)

    @property
    def height_cells(self) -> int:
        return self.occupancy.shape[0]

    @property
    def width_cells(self) -> int:
        return self.occupancy.shape[1]

    @property
    def extent_m(self) -> Tuple[float, float]:
        return (self.width_cells * self.resolution, self.height_cells * self.resolution)

    # ── world <-> grid ─────────────────────────
    def world_to_grid(self, x: float, y: float) -> Tuple[float, float]:
        """Continuous grid coordinates (col, row) in cell units"""
        gx = round((x - self.origin[0]) / self.resolution, FanConfig.SNAP_DIGITS)
        gy = round((y - self.origin[1]) / self.resolution, FanConfig.SNAP_DIGITS)
        return gx, gy

    def world_to_cell(self, x: float, y: float) -> Tuple[int, int]:
        gx, gy = self.world_to_grid(x, y)
        return int(math.floor(gy)), int(math.floor(gx))

    def cell_to_world(self, row: int, col: int) -> Tuple[float, float]:
        return (self.origin[0] + (col + 0.5) * self.resolution,
                self.origin[1] + (row + 0.5) * self.resolution)

    def in_bounds(self, x: float, y: float) -> bool:
        gx, gy = self.world_to_grid(x, y)
        return 0.0 <= gx < self.width_cells and 0.0 <= gy < self.height_cells

    def is_free(self, x: float, y: float) -> bool:
        if not self.in_bounds(x, y):
            return False
        row, col = self.world_to_cell(x, y)
        return not self.occupancy[row, col]

    def free_cells(self) -> np.ndarray:
        """(K, 2) array of free (row, col) in row-major order"""
        return np.argwhere(~self.occupancy)

    def texture_at_cells(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        if self.texture is None:
            return np.zeros(np.shape(rows), dtype=np.uint8)
        return self.texture[rows, cols]


# ─────────────────────────────────────────────
# Ray fans
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class FanSpec:
    n_rays: int = FanConfig.N_RAYS
    fov: float = FanConfig.FOV
    max_range: float = FanConfig.MAX_RANGE_M
    spacing: str = FanConfig.SPACING

    def __post_init__(self):
        if self.n_rays < 2:
            raise ValidationError(f"a ray fan needs n_rays >= 2, got {self.n_rays}")
        if not (0.0 < self.fov < TWO_PI):
            raise ValidationError(f"fov must lie in (0, 2pi), got {self.fov}")
        if not self.max_range > 0:
            raise ValidationError(f"max_range must be > 0, got {self.max_range}")
        if self.spacing not in ("equiangular", "image-column"):
            raise ValidationError(f"unknown ray spacing '{self.spacing}'")

    def offsets(self) -> np.ndarray:
        """Bearing offsets relative to the heading, ray 0 first"""
        n = self.n_rays
        # integer numerators keep ray i and ray n-1-i exact mirrors
        nums = np.array([2 * i - (n - 1) for i in range(n)], dtype=np.float64)
        if self.spacing == "equiangular":
            return np.array([self.fov * k / (2 * (n - 1)) for k in nums])
        half = math.tan(self.fov / 2.0)
        return np.array([math.atan(k / (n - 1) * half) for k in nums])


@dataclass(frozen=True, eq=False)
class RayFan:
    depths: np.ndarray
    hits: np.ndarray
    offsets: np.ndarray
    fov: float
    max_range: float

    @property
    def n_rays(self) -> int:
        return int(self.depths.shape[0])

    def __eq__(self, other):
        if not isinstance(other, RayFan):
            return NotImplemented
        return (np.array_equal(self.depths, other.depths)
                and np.array_equal(self.hits, other.hits)
                and np.array_equal(self.offsets, other.offsets)
                and self.fov == other.fov and self.max_range == other.max_range)


def bearing_directions(bearings: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """cos / sin through math so a bearing yields the same bits whatever the batch size"""
    flat = np.asarray(bearings, dtype=np.float64).ravel()
    cos_b = np.array([math.cos(b) for b in flat], dtype=np.float64)
    sin_b = np.array([math.sin(b) for b in flat], dtype=np.float64)
    shape = np.shape(bearings)
    return cos_b.reshape(shape), sin_b.reshape(shape)


# ─────────────────────────────────────────────
# Grid traversal
# ─────────────────────────────────────────────
def traverse_grid(occupancy: np.ndarray, gx: np.ndarray, gy: np.ndarray,
                  dir_x: np.ndarray, dir_y: np.ndarray,
                  max_t: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lock-step Amanatides-Woo traversal of many rays in grid units.
    Returns (t, hit): t is the distance in cells to the first wall boundary,
    max_t with hit=False when the ray leaves the grid or runs out of range.
    A ray starting inside a wall returns t=0, hit=True.
    """
    occ = np.asarray(occupancy, dtype=bool)
    h, w = occ.shape
    gx = np.asarray(gx, dtype=np.float64).ravel()
    gy = np.asarray(gy, dtype=np.float64).ravel()
    dx = np.asarray(dir_x, dtype=np.float64).ravel()
    dy = np.asarray(dir_y, dtype=np.float64).ravel()
    m = gx.shape[0]

    t_out = np.full(m, float(max_t))
    hit_out = np.zeros(m, dtype=bool)

    cx = np.floor(gx).astype(np.int64)
    cy = np.floor(gy).astype(np.int64)

    inside = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
    start_wall = np.zeros(m, dtype=bool)
    start_wall[inside] = occ[cy[inside], cx[inside]]
    t_out[start_wall] = 0.0
    hit_out[start_wall] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        step_x = np.sign(dx).astype(np.int64)
        step_y = np.sign(dy).astype(np.int64)
        td_x = np.where(dx != 0, 1.0 / np.abs(dx), np.inf)
        td_y = np.where(dy != 0, 1.0 / np.abs(dy), np.inf)
        tm_x = np.where(dx > 0, (cx + 1 - gx) / dx, np.where(dx < 0, (gx - cx) / -dx, np.inf))
        tm_y = np.where(dy > 0, (cy + 1 - gy) / dy, np.where(dy < 0, (gy - cy) / -dy, np.inf))

    idx = np.flatnonzero(inside & ~start_wall)
    cx, cy = cx[idx], cy[idx]
    step_x, step_y = step_x[idx], step_y[idx]
    td_x, td_y = td_x[idx], td_y[idx]
    tm_x, tm_y = tm_x[idx], tm_y[idx]

    while idx.size:
        take_x = tm_x <= tm_y
        t = np.where(take_x, tm_x, tm_y)
        cx = cx + np.where(take_x, step_x, 0)
        cy = cy + np.where(take_x, 0, step_y)
        tm_x = np.where(take_x, tm_x + td_x, tm_x)
        tm_y = np.where(take_x, tm_y, tm_y + td_y)

        exceeded = t > max_t
        outside = (cx < 0) | (cx >= w) | (cy < 0) | (cy >= h)
        done = exceeded | outside
        wall = np.zeros(idx.size, dtype=bool)
        live = ~done
        wall[live] = occ[cy[live], cx[live]]

        t_out[idx[wall]] = t[wall]
        hit_out[idx[wall]] = True

        keep = ~(done | wall)
        idx = idx[keep]
        cx, cy = cx[keep], cy[keep]
        step_x, step_y = step_x[keep], step_y[keep]
        td_x, td_y = td_x[keep], td_y[keep]
        tm_x, tm_y = tm_x[keep], tm_y[keep]

    return t_out, hit_out


# ─────────────────────────────────────────────
# Public casting API
# ─────────────────────────────────────────────
def _check_origins(fp: FloorPlan, gx: np.ndarray, gy: np.ndarray):
    out = (gx < 0) | (gx >= fp.width_cells) | (gy < 0) | (gy >= fp.height_cells)
    if np.any(out):
        k = int(np.flatnonzero(out)[0])
        raise OutOfBoundsError(f"ray origin #{k} at grid ({gx[k]:.3f}, {gy[k]:.3f}) is outside the map")
    rows = np.floor(gy).astype(np.int64)
    cols = np.floor(gx).astype(np.int64)
    occupied = fp.occupancy[rows, cols]
    if np.any(occupied):
        k = int(np.flatnonzero(occupied)[0])
        raise OccupiedOriginError(f"ray origin #{k} lies in wall cell ({rows[k]}, {cols[k]})")


def cast_rays(fp: FloorPlan, origins: np.ndarray, bearings: np.ndarray,
              max_range: float = FanConfig.MAX_RANGE_M) -> Tuple[np.ndarray, np.ndarray]:
    """Batched cast_ray: origins (M, 2) in meters, bearings (M,) radians"""
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    bearings = np.asarray(bearings, dtype=np.float64).ravel()
    if origins.shape[0] != bearings.shape[0]:
        raise ValidationError(f"{origins.shape[0]} origins but {bearings.shape[0]} bearings")
    if not max_range > 0:
        raise ValidationError(f"max_range must be > 0, got {max_range}")
    grid = [fp.world_to_grid(x, y) for x, y in origins]
    gx = np.array([g[0] for g in grid], dtype=np.float64)
    gy = np.array([g[1] for g in grid], dtype=np.float64)
    _check_origins(fp, gx, gy)

    cos_b, sin_b = bearing_directions(bearings)
    max_t = max_range / fp.resolution
    t, hit = traverse_grid(fp.occupancy, gx, gy, cos_b, sin_b, max_t)
    depths = np.where(hit, np.minimum(t * fp.resolution, max_range), max_range)
    return depths, hit


def cast_ray(fp: FloorPlan, origin: Sequence[float], bearing: float,
             max_range: float = FanConfig.MAX_RANGE_M) -> Tuple[float, bool]:
    depths, hits = cast_rays(fp, np.array([origin], dtype=np.float64),
                             np.array([bearing], dtype=np.float64), max_range)
    return float(depths[0]), bool(hits[0])


def render_gt_rays(fp: FloorPlan, pose: Pose, n_rays: int = FanConfig.N_RAYS,
                   fov: float = FanConfig.FOV, max_range: float = FanConfig.MAX_RANGE_M,
                   spacing: str = FanConfig.SPACING) -> RayFan:
    fan = FanSpec(n_rays=n_rays, fov=fov, max_range=max_range, spacing=spacing)
    return render_fan(fp, pose, fan)


def render_fan(fp: FloorPlan, pose: Pose, fan: FanSpec) -> RayFan:
    offsets = fan.offsets()
    bearings = pose.theta + offsets
    origins = np.repeat(np.array([[pose.x, pose.y]]), fan.n_rays, axis=0)
    depths, hits = cast_rays(fp, origins, bearings, fan.max_range)
    return RayFan(depths=depths, hits=hits, offsets=offsets, fov=fan.fov, max_range=fan.max_range)


def texture_histogram(fp: FloorPlan, x: float, y: float, bearings: np.ndarray,
                      lengths: np.ndarray, samples_per_ray: int = OracleConfig.SAMPLES_PER_RAY,
                      n_ids: int = OracleConfig.TEXTURE_IDS) -> np.ndarray:
    """Texture ids sampled at (k + 0.5) / S of every ray's visible length"""
    cos_b, sin_b = bearing_directions(np.asarray(bearings, dtype=np.float64))
    frac = (np.arange(samples_per_ray) + 0.5) / samples_per_ray
    reach = np.asarray(lengths, dtype=np.float64)[:, None] * frac[None, :]
    gx = np.round((x + reach * cos_b[:, None] - fp.origin[0]) / fp.resolution, FanConfig.SNAP_DIGITS)
    gy = np.round((y + reach * sin_b[:, None] - fp.origin[1]) / fp.resolution, FanConfig.SNAP_DIGITS)
    cols = np.floor(gx).astype(np.int64).ravel()
    rows = np.floor(gy).astype(np.int64).ravel()
    ids = np.zeros(rows.shape, dtype=np.int64)
    inside = (cols >= 0) & (cols < fp.width_cells) & (rows >= 0) & (rows < fp.height_cells)
    if fp.texture is not None:
        ids[inside] = np.minimum(fp.texture[rows[inside], cols[inside]], n_ids - 1)
    return np.bincount(ids, minlength=n_ids)


# ─────────────────────────────────────────────
# Persistence
# ─────────────────────────────────────────────
def metadata_path_for(path: str) -> str:
    return os.path.splitext(path)[0] + ".json"


def load_floorplan(path: str) -> FloorPlan:
    """Graymap + sibling <stem>.json with resolution_m, origin_m, optional texture_path"""
    meta_path = metadata_path_for(path)
    if not os.path.isfile(meta_path):
        raise MissingInputError(f"metadata document not found: {meta_path}")
    try:
        meta = read_json(meta_path)
    except ValueError as e:
        raise FloorplanFormatError(f"{meta_path}: invalid JSON ({e})") from e
    if not isinstance(meta, dict) or "resolution_m" not in meta:
        raise FloorplanFormatError(f"{meta_path}: missing 'resolution_m'")

    resolution = meta["resolution_m"]
    if not isinstance(resolution, (int, float)) or isinstance(resolution, bool):
        raise FloorplanFormatError(f"{meta_path}: resolution_m must be a number")
    if resolution <= 0:
        raise ValidationError(f"{meta_path}: resolution_m must be > 0, got {resolution}")
    origin = meta.get("origin_m", [0.0, 0.0])
    if not (isinstance(origin, (list, tuple)) and len(origin) == 2):
        raise FloorplanFormatError(f"{meta_path}: origin_m must be [x, y]")

    pixels = read_graymap(path)
    occupancy = pixels < WALL_THRESHOLD

    texture = None
    if meta.get("texture_path"):
        tex_path = os.path.join(os.path.dirname(os.path.abspath(meta_path)), meta["texture_path"])
        texture = read_graymap(tex_path)
        if texture.shape != occupancy.shape:
            raise ValidationError(
                f"texture layer {texture.shape} does not match map {occupancy.shape}")

    fp = FloorPlan(occupancy=occupancy, resolution=float(resolution),
                   origin=(float(origin[0]), float(origin[1])), texture=texture)
    logger.info(f"loaded {path}: {fp.width_cells}x{fp.height_cells} cells @ {fp.resolution} m")
    return fp


def save_floorplan(fp: FloorPlan, path: str):
    """Writes <stem>.pgm (wall=0, free=255), <stem>_texture.pgm and <stem>.json"""
    write_graymap(path, np.where(fp.occupancy, 0, 255).astype(np.uint8))
    meta = {"resolution_m": fp.resolution, "origin_m": [fp.origin[0], fp.origin[1]]}
    if fp.texture is not None:
        stem = os.path.splitext(os.path.basename(path))[0]
        tex_name = f"{stem}_texture.pgm"
        write_graymap(os.path.join(os.path.dirname(os.path.abspath(path)), tex_name), fp.texture)
        meta["texture_path"] = tex_name
    write_json(metadata_path_for(path), meta)
