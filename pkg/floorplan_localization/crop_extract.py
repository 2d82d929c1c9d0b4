"""
crop_extract.py - pose-centered local floorplan crops
=====================================================
Output pixel (u, v) of an n x n crop samples the map at

    center + a * forward + b * right,   a = (m - u) * mpp,  b = (v - m) * mpp

with m = (n - 1) / 2, forward = (cos t, sin t), right = (-sin t, cos t).
Row 0 is the camera's forward edge. Lookups are nearest-neighbor.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import CropConfig, FanConfig
from file_formats import write_graymap, write_json
from floc_errors import OccupiedOriginError, OutOfBoundsError, ValidationError
from floorplan_core import FanSpec, FloorPlan, Pose, render_fan, texture_histogram

logger = logging.getLogger("FLOC.crop")

CHANNEL_POLICIES = ("occupancy-only", "occupancy+texture")


@dataclass(frozen=True)
class CropSpec:
    side_m: float = CropConfig.SIDE_M
    out_px: Optional[int] = None          # None -> side_m / map resolution
    channels: str = CropConfig.CHANNELS
    occupancy_pad: int = CropConfig.OCCUPANCY_PAD
    texture_pad: int = CropConfig.TEXTURE_PAD

    def __post_init__(self):
        if not self.side_m > 0:
            raise ValidationError(f"crop side must be > 0, got {self.side_m}")
        if self.out_px is not None and self.out_px < 2:
            raise ValidationError(f"out_px must be >= 2, got {self.out_px}")
        if self.channels not in CHANNEL_POLICIES:
            raise ValidationError(f"unknown crop channels '{self.channels}'")

    def pixels_for(self, fp: FloorPlan) -> int:
        if self.out_px is not None:
            return int(self.out_px)
        return max(2, int(round(self.side_m / fp.resolution)))

    @property
    def n_channels(self) -> int:
        return 1 if self.channels == "occupancy-only" else 2


@dataclass(frozen=True, eq=False)
class Crop:
    pixels: np.ndarray        # (n, n, C) uint8: channel 0 = wall flag, channel 1 = texture id
    meters_per_px: float
    source_pose: Pose

    @property
    def out_px(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def occupancy(self) -> np.ndarray:
        return self.pixels[:, :, 0].astype(bool)

    @property
    def texture(self) -> Optional[np.ndarray]:
        return self.pixels[:, :, 1] if self.pixels.shape[2] > 1 else None

    def __eq__(self, other):
        if not isinstance(other, Crop):
            return NotImplemented
        return (np.array_equal(self.pixels, other.pixels)
                and self.meters_per_px == other.meters_per_px)


# ─────────────────────────────────────────────
# Sampling
# ─────────────────────────────────────────────
def _sample_cells(fp: FloorPlan, pose: Pose, n: int, mpp: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cell indices (rows, cols) of every crop pixel plus an in-map mask"""
    cx, cy = fp.world_to_grid(pose.x, pose.y)
    m = (n - 1) / 2.0
    scale = mpp / fp.resolution
    idx = np.arange(n, dtype=np.float64)
    a = ((m - idx) * scale)[:, None]     # forward, per row
    b = ((idx - m) * scale)[None, :]     # right, per column
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    gx = np.round(cx + a * c - b * s, FanConfig.SNAP_DIGITS)
    gy = np.round(cy + a * s + b * c, FanConfig.SNAP_DIGITS)
    cols = np.floor(gx).astype(np.int64)
    rows = np.floor(gy).astype(np.int64)
    inside = (cols >= 0) & (cols < fp.width_cells) & (rows >= 0) & (rows < fp.height_cells)
    return rows, cols, inside


def extract_crop(fp: FloorPlan, pose: Pose, spec: CropSpec = None) -> Crop:
    spec = spec or CropSpec()
    if not fp.in_bounds(pose.x, pose.y):
        raise OutOfBoundsError(f"crop center ({pose.x:.3f}, {pose.y:.3f}) is outside the map")
    n = spec.pixels_for(fp)
    mpp = spec.side_m / n
    rows, cols, inside = _sample_cells(fp, pose, n, mpp)
    r_in, c_in = rows[inside], cols[inside]

    pixels = np.empty((n, n, spec.n_channels), dtype=np.uint8)
    occ = np.full((n, n), spec.occupancy_pad, dtype=np.uint8)
    occ[inside] = fp.occupancy[r_in, c_in]
    pixels[:, :, 0] = occ
    if spec.n_channels > 1:
        tex = np.full((n, n), spec.texture_pad, dtype=np.uint8)
        tex[inside] = fp.texture_at_cells(r_in, c_in)
        pixels[:, :, 1] = tex
    return Crop(pixels=pixels, meters_per_px=mpp, source_pose=pose)


def extract_crops(fp: FloorPlan, poses: Sequence[Pose], spec: CropSpec = None,
                  threads: int = 1) -> List[Crop]:
    """Order-preserving batch extraction"""
    spec = spec or CropSpec()
    if threads <= 1 or len(poses) <= 1:
        return [extract_crop(fp, p, spec) for p in poses]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda p: extract_crop(fp, p, spec), poses))


def crop_as_floorplan(crop: Crop) -> FloorPlan:
    """The crop raster as a map of its own: camera at its center, facing -y"""
    return FloorPlan(occupancy=crop.occupancy, resolution=crop.meters_per_px,
                     texture=crop.texture)


def camera_pixel(crop: Crop, search_px: float = CropConfig.CAMERA_SEARCH_PX) -> Tuple[int, int]:
    """
    (row, col) of the free pixel nearest the crop center. With an even side
    the camera sits on the corner shared by the four central pixels, and the
    wall-side ones of those are walls whenever the camera hugs a wall.
    Ties resolve row-major.
    """
    n = crop.out_px
    m = (n - 1) / 2.0
    idx = np.arange(n, dtype=np.float64)
    dist2 = (idx[:, None] - m) ** 2 + (idx[None, :] - m) ** 2
    dist2[crop.occupancy] = np.inf
    flat = int(np.argmin(dist2))
    r, c = divmod(flat, n)
    if not dist2[r, c] <= search_px ** 2:
        raise OccupiedOriginError(f"no free pixel within {search_px} px of the crop center")
    return r, c


def crop_fan(crop: Crop, fan: FanSpec, reach: float,
             n_ids: int, samples_per_ray: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Re-casts `fan` inside the crop raster from the center of the camera pixel,
    heading crop-up, clipped at `reach`. Returns (depths, texture histogram).
    """
    local = crop_as_floorplan(crop)
    r, c = camera_pixel(crop)
    x = (c + 0.5) * crop.meters_per_px
    y = (r + 0.5) * crop.meters_per_px
    origin = Pose(x, y, 1.5 * math.pi)    # crop-up is -y
    clipped = FanSpec(n_rays=fan.n_rays, fov=fan.fov, max_range=reach, spacing=fan.spacing)
    rays = render_fan(local, origin, clipped)
    hist = texture_histogram(local, x, y, origin.theta + rays.offsets, rays.depths,
                             samples_per_ray, n_ids)
    return rays.depths, hist


# ─────────────────────────────────────────────
# Export
# ─────────────────────────────────────────────
def export_crops(crops: Sequence[Crop], out_dir: str, stem: str = "crop") -> str:
    """Per-channel graymaps plus <stem>_index.json; returns the index path"""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, crop in enumerate(crops):
        occ_name = f"{stem}_{i:04d}_occupancy.pgm"
        write_graymap(os.path.join(out_dir, occ_name),
                      np.where(crop.occupancy, 0, 255).astype(np.uint8))
        files = {"occupancy": occ_name}
        if crop.texture is not None:
            tex_name = f"{stem}_{i:04d}_texture.pgm"
            write_graymap(os.path.join(out_dir, tex_name), crop.texture)
            files["texture"] = tex_name
        entries.append({"index": i, "pose": crop.source_pose.to_dict(),
                        "meters_per_px": crop.meters_per_px, "files": files})
    index_path = os.path.join(out_dir, f"{stem}_index.json")
    write_json(index_path, {"crops": entries})
    logger.info(f"exported {len(entries)} crops to {out_dir}")
    return index_path
