"""
ray_model.py - depth bins, expected depths and the ray loss
===========================================================
A ray predictor outputs, per ray, a probability row over D power-law bins.
The metric depth is the probability-weighted sum of bin centers.
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from config import BinConfig, LossConfig
from floc_errors import ValidationError


@dataclass(frozen=True)
class BinSpec:
    d_min: float = BinConfig.D_MIN_M
    d_max: float = BinConfig.D_MAX_M
    n_bins: int = BinConfig.N_BINS
    gamma: float = BinConfig.GAMMA

    def __post_init__(self):
        if not (self.d_min > 0 and self.d_max > self.d_min):
            raise ValidationError(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")
        if int(self.n_bins) != self.n_bins or self.n_bins < 1:
            raise ValidationError(f"n_bins must be a positive integer, got {self.n_bins}")
        if not self.gamma > 0:
            raise ValidationError(f"gamma must be > 0, got {self.gamma}")

    def to_dict(self) -> dict:
        return {"d_min_m": self.d_min, "d_max_m": self.d_max,
                "n_bins": self.n_bins, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, payload: dict) -> "BinSpec":
        return cls(d_min=float(payload.get("d_min_m", BinConfig.D_MIN_M)),
                   d_max=float(payload.get("d_max_m", BinConfig.D_MAX_M)),
                   n_bins=int(payload.get("n_bins", BinConfig.N_BINS)),
                   gamma=float(payload.get("gamma", BinConfig.GAMMA)))


@dataclass(frozen=True, eq=False)
class RayProbDist:
    probs: np.ndarray   # (N, D)

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValidationError("bin probabilities must be finite and non-negative")
        object.__setattr__(self, "probs", p)


# ─────────────────────────────────────────────
# Bins
# ─────────────────────────────────────────────
def bin_centers(spec: BinSpec) -> np.ndarray:
    """d_k = (d_min^g + k/D (d_max^g - d_min^g))^(1/g), k = 1..D"""
    lo = spec.d_min ** spec.gamma
    hi = spec.d_max ** spec.gamma
    d = spec.n_bins
    centers = np.array([(lo + (k / d) * (hi - lo)) ** (1.0 / spec.gamma) for k in range(1, d + 1)])
    centers[-1] = spec.d_max
    return centers


def expected_depths(dist: RayProbDist, spec: BinSpec) -> np.ndarray:
    probs = dist.probs
    if probs.shape[1] != spec.n_bins:
        raise ValidationError(f"{probs.shape[1]} probability columns for {spec.n_bins} bins")
    sums = probs.sum(axis=1)
    bad = np.abs(sums - 1.0) > BinConfig.ROW_SUM_TOLERANCE
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise ValidationError(f"ray {k} probabilities sum to {sums[k]:.6f}, expected 1")
    return probs @ bin_centers(spec)


def encode_depth(depth: float, spec: BinSpec) -> np.ndarray:
    """Two-bin linear interpolation; out-of-range depths clamp to the end bins"""
    centers = bin_centers(spec)
    row = np.zeros(spec.n_bins)
    if depth <= centers[0]:
        row[0] = 1.0
        return row
    if depth >= centers[-1]:
        row[-1] = 1.0
        return row
    k = int(np.searchsorted(centers, depth, side="right")) - 1
    if depth == centers[k]:
        row[k] = 1.0
        return row
    frac = (depth - centers[k]) / (centers[k + 1] - centers[k])
    row[k] = 1.0 - frac
    row[k + 1] = frac
    return row


def encode_depths(depths: Sequence[float], spec: BinSpec) -> RayProbDist:
    return RayProbDist(np.stack([encode_depth(float(d), spec) for d in depths]))


# ─────────────────────────────────────────────
# Ray loss
# ─────────────────────────────────────────────
def cosine(a: np.ndarray, b: np.ndarray, epsilon: float = LossConfig.EPSILON) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    value = float(a @ b / max(np.linalg.norm(a) * np.linalg.norm(b), epsilon))
    return min(1.0, max(-1.0, value))


def floc_loss(pred: Sequence[float], gt: Sequence[float], mode: str = LossConfig.MODE,
              epsilon: float = LossConfig.EPSILON) -> float:
    """
    as-printed:     |d - d*|_1 + cos(d, d*)
    shape-penalty:  |d - d*|_1 + (1 - cos(d, d*))
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValidationError(f"prediction has {pred.size} rays, ground truth {gt.size}")
    if not epsilon > 0:
        raise ValidationError(f"epsilon must be > 0, got {epsilon}")
    l1 = float(np.abs(pred - gt).sum())
    cos = cosine(pred, gt, epsilon)
    if mode == "as-printed":
        return l1 + cos
    if mode == "shape-penalty":
        return l1 + (1.0 - cos)
    raise ValidationError(f"unknown loss mode '{mode}'")
