"""
disambiguator.py - DPM, fusion and the end-to-end localizer
===========================================================
Pipeline per query:
  DAFPM -> top-X candidates -> X crops (parallel) -> crop embeddings
        -> DPM (softmax of cosine similarities) -> fusion -> final pose

Fusion over the candidates only:
    fused_i = (1 - w) * dafpm_i / sum(dafpm) + w * dpm_i
"""

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax

from config import ContrastConfig
from config import DisambigConfig as DisambigDefaults
from config import GridConfig
from contrastive_kit import Embedder
from crop_extract import CropSpec, extract_crops
from file_formats import write_csv, write_json
from floc_errors import EmptyDomainError, ValidationError
from floorplan_core import FanSpec, FloorPlan, Pose, RayFan
from pose_scoring import (CandidateSet, GtRayTable, PoseGrid, PoseGridSpec, ProbMap,
                          build_dafpm, export_probmap, export_probmap_graymap, top_x)

logger = logging.getLogger("FLOC.disambig")


@dataclass(frozen=True)
class DisambigConfig:
    w: float = DisambigDefaults.W
    softmax_temperature: float = DisambigDefaults.TEMPERATURE
    x: int = DisambigDefaults.X

    def __post_init__(self):
        if not 0.0 <= self.w <= 1.0:
            raise ValidationError(f"fusion weight w must lie in [0, 1], got {self.w}")
        if not self.softmax_temperature > 0:
            raise ValidationError(f"softmax temperature must be > 0, got {self.softmax_temperature}")
        if self.x < 1:
            raise ValidationError(f"candidate count x must be >= 1, got {self.x}")


# ─────────────────────────────────────────────
# DPM / fusion
# ─────────────────────────────────────────────
def build_dpm(query_embedding: np.ndarray, crop_embeddings: np.ndarray,
              temperature: float = DisambigDefaults.TEMPERATURE) -> np.ndarray:
    q = np.asarray(query_embedding, dtype=np.float64).ravel()
    crops = np.atleast_2d(np.asarray(crop_embeddings, dtype=np.float64))
    if crops.shape[0] == 0 or crops.size == 0:
        raise EmptyDomainError("no crop embeddings to compare against")
    if crops.shape[1] != q.shape[0]:
        raise ValidationError(f"query has dimension {q.shape[0]}, crops {crops.shape[1]}")
    if not temperature > 0:
        raise ValidationError(f"temperature must be > 0, got {temperature}")
    norms = np.concatenate([[np.linalg.norm(q)], np.linalg.norm(crops, axis=1)])
    if np.any(np.abs(norms - 1.0) > ContrastConfig.NORM_TOLERANCE):
        raise ValidationError("DPM inputs must be unit-norm embeddings")
    return softmax((crops @ q) / temperature)


def _select(scores: np.ndarray, candidates: CandidateSet) -> int:
    """Position of the maximum; ties go to the lowest grid linear index"""
    best = np.flatnonzero(scores == scores.max())
    return int(min(best, key=lambda k: candidates[int(k)].index))


def fuse_and_select(candidates: CandidateSet, dpm: Sequence[float],
                    config: DisambigConfig = None) -> Tuple[Pose, np.ndarray, int]:
    config = config or DisambigConfig()
    dpm = np.asarray(dpm, dtype=np.float64).ravel()
    if len(candidates) == 0:
        raise EmptyDomainError("no candidates to fuse")
    if dpm.shape[0] != len(candidates):
        raise ValidationError(f"{dpm.shape[0]} DPM entries for {len(candidates)} candidates")
    dafpm = candidates.scores()
    total = float(dafpm.sum())
    dafpm = dafpm / total if total > 0 else np.full(dafpm.shape, 1.0 / dafpm.shape[0])
    fused = (1.0 - config.w) * dafpm + config.w * dpm
    k = _select(fused, candidates)
    return candidates[k].pose, fused, k


# ─────────────────────────────────────────────
# Localizer
# ─────────────────────────────────────────────
@dataclass
class LocalizationResult:
    pose: Pose
    dafpm: ProbMap
    candidates: CandidateSet
    dpm: np.ndarray
    fused: np.ndarray
    selected: int
    query_embedding: Optional[np.ndarray]
    timings: Dict[str, float] = field(default_factory=dict)
    processing_time: float = 0.0


class Localizer:
    """Holds the per-map state (GT ray table, embedders) shared by all queries"""

    def __init__(self, floorplan: FloorPlan, query_embedder: Optional[Embedder],
                 crop_embedder: Optional[Embedder], config: DisambigConfig = None,
                 grid: PoseGridSpec = None, fan: FanSpec = None, crop: CropSpec = None,
                 sigma: float = GridConfig.SIGMA_M, threads: int = 1,
                 table: Optional[GtRayTable] = None):
        self.floorplan = floorplan
        self.query_embedder = query_embedder
        self.crop_embedder = crop_embedder
        self.config = config or DisambigConfig()
        self.crop = crop or CropSpec()
        self.sigma = sigma
        self.threads = threads
        if table is None:
            spec = grid or PoseGridSpec.default_for(floorplan)
            table = GtRayTable.build(PoseGrid(floorplan, spec), fan or FanSpec(), threads=threads)
        self.table = table
        logger.info(f"localizer ready: grid {table.grid.shape}, {table.depths.shape[0]} free cells, "
                    f"w={self.config.w}, x={self.config.x}")

    # ── embeddings ─────────────────────────────
    def _query_embedding(self, query) -> Optional[np.ndarray]:
        if query is None:
            return None
        if isinstance(query, np.ndarray):
            return query
        if self.query_embedder is None:
            raise ValidationError("a query embedder is needed to embed the observation")
        return self.query_embedder.embed(query)

    def _crop_embeddings(self, candidates: CandidateSet) -> np.ndarray:
        crops = extract_crops(self.floorplan, candidates.poses(), self.crop, threads=self.threads)
        return self.crop_embedder.embed_many(crops, threads=self.threads)

    # ── main pipeline ──────────────────────────
    def localize(self, pred_rays: Union[RayFan, np.ndarray], query=None,
                 config: DisambigConfig = None) -> LocalizationResult:
        """
        query: an observation the query embedder understands, or a
        precomputed unit-norm embedding. Without one, only w = 0 is allowed.
        """
        config = config or self.config
        start = time.time()
        timings = {}

        # 1. DAFPM
        t = time.time()
        dafpm = build_dafpm(self.floorplan, pred_rays, sigma=self.sigma,
                            table=self.table, threads=self.threads)
        timings["dafpm"] = time.time() - t

        # 2. top-X
        candidates = top_x(dafpm, config.x)

        # 3-5. crops, embeddings, DPM
        t = time.time()
        q = self._query_embedding(query)
        if q is None or self.crop_embedder is None:
            if config.w > 0:
                raise ValidationError("w > 0 needs a query and a crop embedder")
            dpm = np.full(len(candidates), 1.0 / len(candidates))
        else:
            dpm = build_dpm(q, self._crop_embeddings(candidates), config.softmax_temperature)
        timings["dpm"] = time.time() - t

        # 6. fusion
        pose, fused, k = fuse_and_select(candidates, dpm, config)
        elapsed = time.time() - start
        logger.debug(f"localized to ({pose.x:.2f}, {pose.y:.2f}, {pose.theta:.3f}) "
                     f"in {elapsed:.3f}s")
        return LocalizationResult(pose=pose, dafpm=dafpm, candidates=candidates, dpm=dpm,
                                  fused=fused, selected=k, query_embedding=q,
                                  timings=timings, processing_time=elapsed)


def localize(floorplan: FloorPlan, pred_rays, grid: PoseGridSpec = None,
             query_embedder: Embedder = None, crop_embedder: Embedder = None,
             config: DisambigConfig = None, query=None, **kwargs) -> LocalizationResult:
    """One-shot form of Localizer(...).localize(...)"""
    localizer = Localizer(floorplan, query_embedder, crop_embedder, config=config, grid=grid, **kwargs)
    return localizer.localize(pred_rays, query)


# ─────────────────────────────────────────────
# Export
# ─────────────────────────────────────────────
def write_candidates_csv(result: LocalizationResult, path: str):
    rows = [(c.pose.x, c.pose.y, c.pose.theta, float(s), float(d), float(f))
            for c, s, d, f in zip(result.candidates, result.candidates.scores(), result.dpm, result.fused)]
    write_csv(path, ["x", "y", "theta", "dafpm", "dpm", "fused"], rows)


def export_result(result: LocalizationResult, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    write_json(os.path.join(out_dir, "pose.json"),
               {"pose": result.pose.to_dict(), "selected_candidate": result.selected,
                "n_candidates": len(result.candidates)})
    export_probmap(result.dafpm, os.path.join(out_dir, "dafpm.dpmf"))
    export_probmap_graymap(result.dafpm, os.path.join(out_dir, "dafpm.pgm"))
    write_candidates_csv(result, os.path.join(out_dir, "candidates.csv"))
