"""
contrastive_kit.py - dual-level sample mining and the PointInfoNCE objective
============================================================================
Mining (per anchor = one floorplan + GT pose):
  - positive:        GT pose moved by u ~ U(0, B) in a random direction / with a random sign
  - inner negatives: free poses of the same floorplan 1.5 - 3.0 m from GT
  - cross negatives: free poses of other floorplans
  - ori negatives:   GT position, heading rotated (180 degrees by default)

Loss, for every pair (j, l) in M, with s = f . g / tau:

    -log( exp(s+) / (Z1_j + Z2_j) )          as-printed
    -log( exp(s+) / (Z1_j + Z2_j + exp(s+)) ) with-positive

Z1_j / Z2_j sum exp(s) over anchor j's position / orientation negatives.
Gradients are analytic; the geometry-side linear embedder is trained with
torch's Adam fed from them.
"""

import logging
import math
import os
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from scipy.special import logsumexp

from config import (ContrastConfig, CropConfig, MiningConfig, OracleConfig,
                    PerturbConfig, TrainConfig)
from crop_extract import Crop, CropSpec, crop_fan, export_crops, extract_crop
from file_formats import read_emb1, read_json, write_emb1, write_json, write_jsonl
from floc_errors import (ConfigurationError, DegenerateEmbeddingError,
                         MiningExhaustedError, TrainingFailureError,
                         ValidationError)
from floorplan_core import TWO_PI, FanSpec, FloorPlan, Pose

logger = logging.getLogger("FLOC.contrastive")

DENOMINATORS = ("as-printed", "with-positive")


# ─────────────────────────────────────────────
# Specs
# ─────────────────────────────────────────────
@dataclass(frozen=True)
class PerturbSpec:
    pos_b: float = PerturbConfig.POS_B_M
    ang_b: float = PerturbConfig.ANG_B_RAD

    def __post_init__(self):
        if self.pos_b < 0 or self.ang_b < 0:
            raise ValidationError(f"perturbation bounds must be >= 0, got {self.pos_b}, {self.ang_b}")


@dataclass(frozen=True)
class MiningSpec:
    inner_neg_dist: Tuple[float, float] = MiningConfig.INNER_NEG_DIST_M
    ori_neg_rotation: float = MiningConfig.ORI_NEG_ROTATION
    n_inner: int = MiningConfig.N_INNER
    n_cross: int = MiningConfig.N_CROSS
    n_ori: int = MiningConfig.N_ORI
    seed: int = MiningConfig.SEED
    max_retries: int = MiningConfig.MAX_RETRIES

    def __post_init__(self):
        lo, hi = self.inner_neg_dist
        if not 0 <= lo < hi:
            raise ValidationError(f"inner negative interval must satisfy 0 <= lo < hi, got {self.inner_neg_dist}")
        if min(self.n_inner, self.n_cross, self.n_ori) < 0:
            raise ValidationError("negative counts must be >= 0")
        if self.n_inner + self.n_cross + self.n_ori == 0:
            raise ConfigurationError("mining needs at least one negative per anchor")
        if self.max_retries < 1:
            raise ValidationError(f"max_retries must be >= 1, got {self.max_retries}")


# ─────────────────────────────────────────────
# Embeddings
# ─────────────────────────────────────────────
def unit_normalize(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    norms = np.linalg.norm(raw, axis=-1, keepdims=True)
    if np.any(norms < 1e-12):
        raise DegenerateEmbeddingError(
            "embedding projected to the zero vector; choose another projection seed")
    return raw / norms


def normalize_backward(raw: np.ndarray, grad_unit: np.ndarray) -> np.ndarray:
    """Pulls a gradient w.r.t. raw / |raw| back to raw: (I - u u^T) g / |raw|"""
    raw = np.asarray(raw, dtype=np.float64)
    grad_unit = np.asarray(grad_unit, dtype=np.float64)
    norms = np.linalg.norm(raw, axis=-1, keepdims=True)
    u = raw / norms
    return (grad_unit - u * np.sum(u * grad_unit, axis=-1, keepdims=True)) / norms


class Embedder(ABC):
    """Maps a crop or an observation signature to a unit-norm vector of size dim"""

    dim: int

    @abstractmethod
    def embed(self, item) -> np.ndarray:
        ...

    def embed_many(self, items: Sequence, threads: int = 1) -> np.ndarray:
        if len(items) == 0:
            return np.zeros((0, self.dim))
        if threads <= 1:
            return np.stack([self.embed(it) for it in items])
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return np.stack(list(pool.map(self.embed, items)))


def save_embeddings(path: str, embeddings: np.ndarray):
    write_emb1(path, embeddings)


def load_embeddings(path: str) -> np.ndarray:
    return read_emb1(path)


# ─────────────────────────────────────────────
# Batch / loss / gradient
# ─────────────────────────────────────────────
@dataclass
class ContrastiveBatch:
    anchors: np.ndarray                     # (J, E)  f_j
    positives: np.ndarray                   # (L, E)  g+_l
    pos_negatives: np.ndarray               # (P, E)  g^{p-}
    ori_negatives: np.ndarray               # (Q, E)  g^{a-}
    pairs: List[Tuple[int, int]]            # M
    pos_neg_owner: Optional[np.ndarray] = None   # anchor of each position negative, None = shared
    ori_neg_owner: Optional[np.ndarray] = None
    temperature: float = ContrastConfig.TEMPERATURE

    def validate(self, check_norm: bool = True):
        if not self.temperature > 0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")
        groups = {"anchors": self.anchors, "positives": self.positives,
                  "pos_negatives": self.pos_negatives, "ori_negatives": self.ori_negatives}
        dim = self.anchors.shape[1]
        for name, arr in groups.items():
            if arr.ndim != 2 or (arr.shape[0] and arr.shape[1] != dim):
                raise ValidationError(f"{name} has shape {arr.shape}, expected (*, {dim})")
            if check_norm and arr.shape[0]:
                dev = np.abs(np.linalg.norm(arr, axis=1) - 1.0)
                if np.any(dev > ContrastConfig.NORM_TOLERANCE):
                    raise ValidationError(f"{name} are not unit-norm (max deviation {dev.max():.2e})")
        for j, l in self.pairs:
            if not (0 <= j < self.anchors.shape[0] and 0 <= l < self.positives.shape[0]):
                raise ValidationError(f"pair ({j}, {l}) out of range")
        for name, owner, arr in (("pos_neg_owner", self.pos_neg_owner, self.pos_negatives),
                                 ("ori_neg_owner", self.ori_neg_owner, self.ori_negatives)):
            if owner is not None and len(owner) != arr.shape[0]:
                raise ValidationError(f"{name} has {len(owner)} entries for {arr.shape[0]} negatives")

    def negatives_of(self, j: int) -> Tuple[np.ndarray, np.ndarray]:
        pos = (np.arange(self.pos_negatives.shape[0]) if self.pos_neg_owner is None
               else np.flatnonzero(np.asarray(self.pos_neg_owner) == j))
        ori = (np.arange(self.ori_negatives.shape[0]) if self.ori_neg_owner is None
               else np.flatnonzero(np.asarray(self.ori_neg_owner) == j))
        return pos, ori


@dataclass
class BatchGradients:
    anchors: np.ndarray
    positives: np.ndarray
    pos_negatives: np.ndarray
    ori_negatives: np.ndarray


def _check_mode(denominator: str):
    if denominator not in DENOMINATORS:
        raise ValidationError(f"unknown denominator mode '{denominator}'")


def _pair_terms(batch: ContrastiveBatch, j: int, l: int, with_positive: bool):
    """logits and the log-denominator of one (j, l) pair"""
    tau = batch.temperature
    f = batch.anchors[j]
    pos_idx, ori_idx = batch.negatives_of(j)
    s_pos = float(f @ batch.positives[l]) / tau
    s_pn = batch.pos_negatives[pos_idx] @ f / tau
    s_an = batch.ori_negatives[ori_idx] @ f / tau
    terms = np.concatenate([s_pn, s_an, [s_pos]] if with_positive else [s_pn, s_an])
    if terms.size == 0:
        raise ValidationError(f"anchor {j} has no negatives and the denominator is empty")
    return s_pos, s_pn, s_an, pos_idx, ori_idx, float(logsumexp(terms))


def point_info_nce(batch: ContrastiveBatch, denominator: str = ContrastConfig.DENOMINATOR,
                   validate: bool = True) -> float:
    _check_mode(denominator)
    batch.validate(check_norm=validate)
    with_positive = denominator == "with-positive"
    loss = 0.0
    for j, l in batch.pairs:
        s_pos, _, _, _, _, log_den = _pair_terms(batch, j, l, with_positive)
        loss -= s_pos - log_den
    return loss


def point_info_nce_grad(batch: ContrastiveBatch, denominator: str = ContrastConfig.DENOMINATOR,
                        validate: bool = True) -> BatchGradients:
    """Exact gradient of point_info_nce w.r.t. every embedding in the batch"""
    _check_mode(denominator)
    batch.validate(check_norm=validate)
    with_positive = denominator == "with-positive"
    tau = batch.temperature
    grads = BatchGradients(anchors=np.zeros_like(batch.anchors, dtype=np.float64),
                           positives=np.zeros_like(batch.positives, dtype=np.float64),
                           pos_negatives=np.zeros_like(batch.pos_negatives, dtype=np.float64),
                           ori_negatives=np.zeros_like(batch.ori_negatives, dtype=np.float64))
    for j, l in batch.pairs:
        s_pos, s_pn, s_an, pos_idx, ori_idx, log_den = _pair_terms(batch, j, l, with_positive)
        f = batch.anchors[j]
        # d loss / d s for every logit of the pair
        c_pos = -1.0 + (math.exp(s_pos - log_den) if with_positive else 0.0)
        c_pn = np.exp(s_pn - log_den)
        c_an = np.exp(s_an - log_den)

        grads.anchors[j] += (c_pos * batch.positives[l]
                             + c_pn @ batch.pos_negatives[pos_idx]
                             + c_an @ batch.ori_negatives[ori_idx]) / tau
        grads.positives[l] += c_pos * f / tau
        np.add.at(grads.pos_negatives, pos_idx, c_pn[:, None] * f[None, :] / tau)
        np.add.at(grads.ori_negatives, ori_idx, c_an[:, None] * f[None, :] / tau)
    return grads


# ─────────────────────────────────────────────
# Mining
# ─────────────────────────────────────────────
@dataclass
class MinedSample:
    anchor_index: int
    floorplan_index: int
    gt_pose: Pose
    positive_pose: Pose
    positive: Crop
    inner_negatives: List[Crop] = field(default_factory=list)
    cross_negatives: List[Crop] = field(default_factory=list)
    orientation_negatives: List[Crop] = field(default_factory=list)

    @property
    def position_negatives(self) -> List[Crop]:
        return self.inner_negatives + self.cross_negatives

    def as_tuple(self) -> Tuple[Crop, List[Crop], List[Crop]]:
        return self.positive, self.position_negatives, self.orientation_negatives

    def roles(self) -> List[Tuple[str, Crop]]:
        out = [("positive", self.positive)]
        out += [("inner-neg", c) for c in self.inner_negatives]
        out += [("cross-neg", c) for c in self.cross_negatives]
        out += [("ori-neg", c) for c in self.orientation_negatives]
        return out


def anchor_rng(seed: int, anchor_index: int) -> np.random.Generator:
    """Counter-based stream per anchor: mining order never changes the draws"""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(anchor_index),))
    return np.random.Generator(np.random.Philox(seq))


def _floorplan_ids(dataset: Sequence[Tuple[FloorPlan, Pose]]) -> List[int]:
    ids, seen = [], {}
    for fp, _ in dataset:
        ids.append(seen.setdefault(id(fp), len(seen)))
    return ids


def _retry(draw, accept, retries: int, what: str):
    for _ in range(retries):
        pose = draw()
        if accept(pose):
            return pose
    raise MiningExhaustedError(f"no free {what} pose after {retries} draws")


def mine_samples(dataset: Sequence[Tuple[FloorPlan, Pose]], anchor_index: int,
                 perturb: PerturbSpec = None, mining: MiningSpec = None,
                 crop: CropSpec = None) -> MinedSample:
    perturb = perturb or PerturbSpec()
    mining = mining or MiningSpec()
    crop = crop or CropSpec()
    if len(dataset) == 0:
        raise ValidationError("mining needs a nonempty dataset")
    if not 0 <= anchor_index < len(dataset):
        raise ValidationError(f"anchor index {anchor_index} out of range")
    fp_ids = _floorplan_ids(dataset)
    n_plans = max(fp_ids) + 1
    if mining.n_cross > 0 and n_plans < 2:
        raise ConfigurationError("cross-floorplan negatives need at least two floorplans")

    fp, gt = dataset[anchor_index]
    own_id = fp_ids[anchor_index]
    rng = anchor_rng(mining.seed, anchor_index)

    # 1. positive
    def draw_positive():
        phi = rng.uniform(0.0, TWO_PI)
        r = rng.uniform(0.0, perturb.pos_b) if perturb.pos_b > 0 else 0.0
        sign = 1.0 if rng.random() < 0.5 else -1.0
        dt = rng.uniform(0.0, perturb.ang_b) if perturb.ang_b > 0 else 0.0
        return Pose(gt.x + r * math.cos(phi), gt.y + r * math.sin(phi), gt.theta + sign * dt)

    positive_pose = _retry(draw_positive, lambda p: fp.is_free(p.x, p.y), mining.max_retries, "positive")

    # 2. inner position negatives
    lo, hi = mining.inner_neg_dist

    def draw_inner():
        phi = rng.uniform(0.0, TWO_PI)
        r = math.sqrt(rng.uniform(lo * lo, hi * hi))
        return Pose(gt.x + r * math.cos(phi), gt.y + r * math.sin(phi), rng.uniform(0.0, TWO_PI))

    def inner_ok(p: Pose) -> bool:
        d = p.distance_to(gt)
        return fp.is_free(p.x, p.y) and lo - 1e-9 <= d <= hi + 1e-9

    inner_poses = [_retry(draw_inner, inner_ok, mining.max_retries, "inner-negative")
                   for _ in range(mining.n_inner)]

    # 3. cross-floorplan position negatives
    others = sorted({k for k in fp_ids if k != own_id})
    plan_of = {}
    for (plan, _), k in zip(dataset, fp_ids):
        plan_of.setdefault(k, plan)
    cross = []
    for _ in range(mining.n_cross):
        other = plan_of[others[int(rng.integers(len(others)))]]
        free = other.free_cells()
        if free.shape[0] == 0:
            raise MiningExhaustedError("cross-negative floorplan has no free cells")
        row, col = free[int(rng.integers(free.shape[0]))]
        x, y = other.cell_to_world(int(row), int(col))
        cross.append((other, Pose(x, y, rng.uniform(0.0, TWO_PI))))

    # 4. orientation negatives
    ori_poses = [gt.rotated(mining.ori_neg_rotation * (k + 1) / mining.n_ori)
                 for k in range(mining.n_ori)]

    return MinedSample(
        anchor_index=anchor_index,
        floorplan_index=own_id,
        gt_pose=gt,
        positive_pose=positive_pose,
        positive=extract_crop(fp, positive_pose, crop),
        inner_negatives=[extract_crop(fp, p, crop) for p in inner_poses],
        cross_negatives=[extract_crop(plan, p, crop) for plan, p in cross],
        orientation_negatives=[extract_crop(fp, p, crop) for p in ori_poses],
    )


def mine_dataset(dataset: Sequence[Tuple[FloorPlan, Pose]], perturb: PerturbSpec = None,
                 mining: MiningSpec = None, crop: CropSpec = None,
                 threads: int = 1) -> List[MinedSample]:
    start = time.time()
    run = lambda j: mine_samples(dataset, j, perturb, mining, crop)
    if threads <= 1:
        samples = [run(j) for j in range(len(dataset))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(run, range(len(dataset))))
    logger.info(f"mined {len(samples)} anchors in {time.time() - start:.2f}s")
    return samples


def write_sample_manifest(samples: Sequence[MinedSample], out_dir: str,
                          manifest_name: str = "samples.jsonl") -> str:
    """Exports every mined crop and a JSON-lines manifest, one record per anchor"""
    records = []
    for s in samples:
        roles = s.roles()
        stem = f"anchor{s.anchor_index:05d}"
        export_crops([c for _, c in roles], out_dir, stem=stem)
        crops = [{"role": role, "pose": c.source_pose.to_dict(),
                  "path": f"{stem}_{i:04d}_occupancy.pgm"} for i, (role, c) in enumerate(roles)]
        records.append({"anchor": s.anchor_index, "floorplan": s.floorplan_index,
                        "gt_pose": s.gt_pose.to_dict(), "crops": crops})
    path = os.path.join(out_dir, manifest_name)
    write_jsonl(path, records)
    return path


def build_training_batch(anchor_embeddings: np.ndarray, positive_embeddings: np.ndarray,
                         pos_negative_embeddings: Sequence[np.ndarray],
                         ori_negative_embeddings: Sequence[np.ndarray],
                         temperature: float = ContrastConfig.TEMPERATURE) -> ContrastiveBatch:
    """One pair (j, j) per anchor; negatives are owned by their anchor"""
    dim = anchor_embeddings.shape[1]
    pos_owner = np.concatenate([np.full(len(n), j) for j, n in enumerate(pos_negative_embeddings)]
                               or [np.zeros(0)]).astype(np.int64)
    ori_owner = np.concatenate([np.full(len(n), j) for j, n in enumerate(ori_negative_embeddings)]
                               or [np.zeros(0)]).astype(np.int64)
    stack = lambda parts: (np.concatenate([np.reshape(p, (-1, dim)) for p in parts])
                           if len(parts) else np.zeros((0, dim)))
    return ContrastiveBatch(
        anchors=np.asarray(anchor_embeddings, dtype=np.float64),
        positives=np.asarray(positive_embeddings, dtype=np.float64),
        pos_negatives=stack(pos_negative_embeddings),
        ori_negatives=stack(ori_negative_embeddings),
        pairs=[(j, j) for j in range(anchor_embeddings.shape[0])],
        pos_neg_owner=pos_owner, ori_neg_owner=ori_owner,
        temperature=temperature,
    )


# ─────────────────────────────────────────────
# Trainable geometry-side embedder
# ─────────────────────────────────────────────
FRONT_ENDS = ("rays", "pooled")
WARM_STARTS = ("ridge", "random")


def fan_feature_vector(depths: np.ndarray, hist: np.ndarray, reach: float,
                       texture_weight: float = OracleConfig.TEXTURE_WEIGHT,
                       depth_center: float = OracleConfig.DEPTH_CENTER) -> np.ndarray:
    """[min(d, reach) / reach - center] * N  ++  weight * histogram[1:] / sum"""
    geo = np.minimum(np.asarray(depths, dtype=np.float64), reach) / reach - depth_center
    counts = np.asarray(hist[1:], dtype=np.float64)
    total = counts.sum()
    tex = counts / total if total > 0 else counts
    return np.concatenate([geo, texture_weight * tex])


def pooled_crop_features(crop: Crop, pool_factor: int = TrainConfig.POOL_FACTOR,
                         n_texture_ids: int = OracleConfig.TEXTURE_IDS) -> np.ndarray:
    """Block means of the wall flag and of every texture id, plus a constant"""
    n = crop.out_px
    p = max(1, min(pool_factor, n))
    k = n // p
    occ = crop.occupancy[:k * p, :k * p].astype(np.float64)
    blocks = [occ.reshape(k, p, k, p).mean(axis=(1, 3)).ravel()]
    if crop.texture is not None:
        tex = crop.texture[:k * p, :k * p]
        for tid in range(1, n_texture_ids):
            blocks.append((tex == tid).astype(np.float64).reshape(k, p, k, p).mean(axis=(1, 3)).ravel())
    blocks.append(np.ones(1))
    return np.concatenate(blocks)


@dataclass(frozen=True)
class CropFrontEnd:
    """
    Fixed crop featurization in front of the trainable linear map.
      rays    the query fan re-cast inside the crop, laid out like the
              signature side of the oracle, plus a constant
      pooled  block-pooled wall and texture rasters, plus a constant
    """
    kind: str = TrainConfig.FEATURES
    fan: FanSpec = field(default_factory=FanSpec)
    reach: float = CropConfig.SIDE_M / 2.0
    texture_weight: float = OracleConfig.TEXTURE_WEIGHT
    n_texture_ids: int = OracleConfig.TEXTURE_IDS
    samples_per_ray: int = OracleConfig.SAMPLES_PER_RAY
    pool_factor: int = TrainConfig.POOL_FACTOR

    def __post_init__(self):
        if self.kind not in FRONT_ENDS:
            raise ConfigurationError(f"unknown crop features '{self.kind}', expected one of {', '.join(FRONT_ENDS)}")
        if not self.reach > 0:
            raise ValidationError(f"reach must be > 0, got {self.reach}")

    def features(self, crop: Crop) -> np.ndarray:
        if self.kind == "pooled":
            return pooled_crop_features(crop, self.pool_factor, self.n_texture_ids)
        depths, hist = crop_fan(crop, self.fan, self.reach, self.n_texture_ids, self.samples_per_ray)
        return np.concatenate([fan_feature_vector(depths, hist, self.reach, self.texture_weight),
                               np.ones(1)])

    def to_dict(self) -> dict:
        return {"kind": self.kind,
                "fan": {"n_rays": self.fan.n_rays, "fov": self.fan.fov,
                        "max_range": self.fan.max_range, "spacing": self.fan.spacing},
                "reach": self.reach, "texture_weight": self.texture_weight,
                "n_texture_ids": self.n_texture_ids, "samples_per_ray": self.samples_per_ray,
                "pool_factor": self.pool_factor}

    @classmethod
    def from_dict(cls, d: dict) -> "CropFrontEnd":
        return cls(kind=d["kind"], fan=FanSpec(**d["fan"]), reach=float(d["reach"]),
                   texture_weight=float(d["texture_weight"]),
                   n_texture_ids=int(d["n_texture_ids"]),
                   samples_per_ray=int(d["samples_per_ray"]),
                   pool_factor=int(d["pool_factor"]))


class LinearCropEmbedder(Embedder):
    """
    unit(W @ front_end(crop)). `anchor_oracle` records the dim and seed of
    the signature embedder whose anchors W was trained against.
    """

    def __init__(self, weights: np.ndarray, front_end: CropFrontEnd = None,
                 anchor_oracle: Optional[dict] = None):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.dim = self.weights.shape[0]
        self.front_end = front_end or CropFrontEnd()
        self.anchor_oracle = anchor_oracle

    @classmethod
    def initialize(cls, n_features: int, dim: int, seed: int = TrainConfig.SEED, **kwargs):
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0.0, 1.0 / math.sqrt(n_features), size=(dim, n_features)), **kwargs)

    def features(self, crop: Crop) -> np.ndarray:
        return self.front_end.features(crop)

    def embed(self, item) -> np.ndarray:
        if not isinstance(item, Crop):
            raise ValidationError(f"LinearCropEmbedder embeds crops, got {type(item).__name__}")
        return unit_normalize(self.weights @ self.features(item))

    def save(self, prefix: str):
        write_emb1(prefix + ".emb", self.weights)
        write_json(prefix + ".json", {"dim": self.dim, "n_features": int(self.weights.shape[1]),
                                      "front_end": self.front_end.to_dict(),
                                      "anchor_oracle": self.anchor_oracle})

    @classmethod
    def load(cls, prefix: str) -> "LinearCropEmbedder":
        meta = read_json(prefix + ".json")
        if "front_end" not in meta:
            raise ConfigurationError(f"{prefix}.json does not describe a crop front end")
        return cls(read_emb1(prefix + ".emb"), front_end=CropFrontEnd.from_dict(meta["front_end"]),
                   anchor_oracle=meta.get("anchor_oracle"))


def ridge_warm_start(features: np.ndarray, anchors: np.ndarray,
                     ridge: float = TrainConfig.RIDGE) -> np.ndarray:
    """W minimizing sum_j |W x_j - a_j|^2 + lam |W|^2, lam = ridge * mean diag(X^T X)"""
    x = np.asarray(features, dtype=np.float64)
    a = np.asarray(anchors, dtype=np.float64)
    gram = x.T @ x
    lam = ridge * max(float(np.trace(gram)) / gram.shape[0], 1e-12)
    return np.linalg.solve(gram + lam * np.eye(gram.shape[0]), x.T @ a).T


@dataclass
class TrainingResult:
    embedder: LinearCropEmbedder
    loss_trace: List[float]
    val_trace: List[float]
    best_epoch: int
    initial_loss: float
    final_loss: float
    retrieval: Optional[float]
    training_time: float


class _FeatureSet:
    """Feature matrices of mined crops, grouped per role and owner"""

    def __init__(self, samples: Sequence[MinedSample], featurize):
        self.positive = np.stack([featurize(s.positive) for s in samples])
        pos_neg, ori_neg, pos_owner, ori_owner = [], [], [], []
        for j, s in enumerate(samples):
            for c in s.position_negatives:
                pos_neg.append(featurize(c))
                pos_owner.append(j)
            for c in s.orientation_negatives:
                ori_neg.append(featurize(c))
                ori_owner.append(j)
        width = self.positive.shape[1]
        self.pos_neg = np.stack(pos_neg) if pos_neg else np.zeros((0, width))
        self.ori_neg = np.stack(ori_neg) if ori_neg else np.zeros((0, width))
        self.pos_owner = np.array(pos_owner, dtype=np.int64)
        self.ori_owner = np.array(ori_owner, dtype=np.int64)


def _loss_and_grad(weights: np.ndarray, anchors: np.ndarray, feats: _FeatureSet,
                   temperature: float, denominator: str, need_grad: bool = True):
    raws = [feats.positive @ weights.T, feats.pos_neg @ weights.T, feats.ori_neg @ weights.T]
    units = [unit_normalize(r) if r.shape[0] else r for r in raws]
    batch = ContrastiveBatch(anchors=anchors, positives=units[0], pos_negatives=units[1],
                             ori_negatives=units[2],
                             pairs=[(j, j) for j in range(anchors.shape[0])],
                             pos_neg_owner=feats.pos_owner, ori_neg_owner=feats.ori_owner,
                             temperature=temperature)
    scale = 1.0 / anchors.shape[0]
    loss = point_info_nce(batch, denominator) * scale
    if not need_grad:
        return loss, None
    g = point_info_nce_grad(batch, denominator)
    grad_w = np.zeros_like(weights)
    for raw, grad_unit, x in zip(raws, (g.positives, g.pos_negatives, g.ori_negatives),
                                 (feats.positive, feats.pos_neg, feats.ori_neg)):
        if raw.shape[0]:
            grad_w += normalize_backward(raw, grad_unit).T @ x
    return loss, grad_w * scale


def retrieval_accuracy(anchors: np.ndarray, positives: np.ndarray,
                       n_candidates: int = 32, seed: int = TrainConfig.SEED) -> float:
    """Top-1 retrieval of each anchor's own positive among n_candidates positives"""
    n = anchors.shape[0]
    if n < 2:
        raise ValidationError("retrieval needs at least two anchors")
    rng = np.random.default_rng(seed)
    k = min(n_candidates, n) - 1
    hits = 0
    for j in range(n):
        others = np.delete(np.arange(n), j)
        pool = np.concatenate([[j], rng.choice(others, size=k, replace=False)])
        sims = positives[pool] @ anchors[j]
        hits += int(sims[0] > sims[1:].max())
    return hits / n


def train_linear_embedder(samples: Sequence[MinedSample], anchor_embeddings: np.ndarray,
                          dim: int = OracleConfig.DIM, epochs: int = TrainConfig.EPOCHS,
                          learning_rate: float = TrainConfig.LEARNING_RATE,
                          seed: int = TrainConfig.SEED,
                          temperature: float = ContrastConfig.TEMPERATURE,
                          denominator: str = ContrastConfig.DENOMINATOR,
                          validation_fraction: float = TrainConfig.VALIDATION_FRACTION,
                          patience: int = TrainConfig.PATIENCE,
                          front_end: CropFrontEnd = None,
                          warm_start: str = TrainConfig.WARM_START,
                          ridge: float = TrainConfig.RIDGE,
                          anchor_oracle: Optional[dict] = None,
                          n_candidates: int = 32) -> TrainingResult:
    """
    Trains unit(W @ front_end(crop)) against frozen anchor embeddings.
    W starts from the ridge fit of positives onto their anchors, or from a
    seeded Gaussian draw.
    The parameters with the lowest validation loss are returned; training
    stops once the validation loss has not improved for `patience` epochs.
    """
    start = time.time()
    if len(samples) == 0:
        raise ValidationError("training needs at least one mined sample")
    if dim < 2:
        raise ValidationError(f"embedding dimension must be >= 2, got {dim}")
    anchors = np.asarray(anchor_embeddings, dtype=np.float64)
    if anchors.shape != (len(samples), dim):
        raise ValidationError(f"anchor embeddings have shape {anchors.shape}, expected ({len(samples)}, {dim})")
    if all(len(s.position_negatives) + len(s.orientation_negatives) == 0 for s in samples):
        raise ConfigurationError("no usable negatives in the sample set")
    if warm_start not in WARM_STARTS:
        raise ConfigurationError(f"unknown warm start '{warm_start}', expected one of {', '.join(WARM_STARTS)}")
    front_end = front_end or CropFrontEnd()

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    n_val = int(len(samples) * validation_fraction)
    val_idx = np.sort(order[:n_val])
    train_idx = np.sort(order[n_val:])

    train_feats = _FeatureSet([samples[i] for i in train_idx], front_end.features)
    val_feats = _FeatureSet([samples[i] for i in val_idx], front_end.features) if n_val else None
    n_features = train_feats.positive.shape[1]

    torch.manual_seed(seed)
    if warm_start == "ridge":
        init_w = ridge_warm_start(train_feats.positive, anchors[train_idx], ridge)
    else:
        init_w = LinearCropEmbedder.initialize(n_features, dim, seed=seed).weights
    weights = torch.nn.Parameter(torch.from_numpy(init_w.copy()))
    optimizer = torch.optim.Adam([weights], lr=learning_rate)

    def score(w: np.ndarray) -> float:
        if val_feats is None:
            return _loss_and_grad(w, anchors[train_idx], train_feats, temperature, denominator, False)[0]
        return _loss_and_grad(w, anchors[val_idx], val_feats, temperature, denominator, False)[0]

    best_w = init_w.copy()
    best_val = score(best_w)
    best_epoch, stale = 0, 0
    loss_trace, val_trace = [], []
    logger.info(f"training linear embedder: {len(train_idx)} train / {n_val} val anchors, "
                f"{n_features} {front_end.kind} features -> {dim}, {warm_start} start")

    for epoch in range(epochs):
        w_now = weights.detach().numpy().copy()
        loss, grad = _loss_and_grad(w_now, anchors[train_idx], train_feats, temperature, denominator)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingFailureError(f"loss diverged at epoch {epoch}", epoch)
        loss_trace.append(loss)

        optimizer.zero_grad()
        weights.grad = torch.from_numpy(grad)
        optimizer.step()

        val = score(weights.detach().numpy())
        if not math.isfinite(val):
            raise TrainingFailureError(f"validation loss diverged at epoch {epoch}", epoch)
        val_trace.append(val)
        if val < best_val:
            best_val, best_w, best_epoch, stale = val, weights.detach().numpy().copy(), epoch + 1, 0
        else:
            stale += 1
            if stale >= patience:
                logger.info(f"early stop at epoch {epoch} (best {best_epoch})")
                break

    embedder = LinearCropEmbedder(best_w, front_end=front_end, anchor_oracle=anchor_oracle)
    final_loss = _loss_and_grad(best_w, anchors[train_idx], train_feats, temperature, denominator, False)[0]

    retrieval = None
    if n_val >= 2:
        held = [samples[i] for i in val_idx]
        retrieval = retrieval_accuracy(anchors[val_idx], embedder.embed_many([s.positive for s in held]),
                                       n_candidates=n_candidates, seed=seed)
    elapsed = time.time() - start
    logger.info(f"training done in {elapsed:.1f}s: loss {loss_trace[0] if loss_trace else final_loss:.4f}"
                f" -> {final_loss:.4f}, retrieval {retrieval}")
    return TrainingResult(embedder=embedder, loss_trace=loss_trace, val_trace=val_trace,
                          best_epoch=best_epoch,
                          initial_loss=loss_trace[0] if loss_trace else final_loss,
                          final_loss=final_loss, retrieval=retrieval, training_time=elapsed)
