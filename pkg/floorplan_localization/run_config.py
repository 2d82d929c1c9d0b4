"""
run_config.py - JSON run configuration
======================================
Every section is optional; omitted keys take the defaults from config.py.
Unknown keys are rejected. The resolved document is echoed into the run's
output directory as resolved_config.json.
"""

import copy
import math
import os
from typing import Any, Dict, Optional

from config import (BenchmarkConfig, BinConfig, ContrastConfig, CropConfig,
                    DatasetProfiles, FanConfig, GridConfig, LossConfig,
                    MiningConfig, NoiseConfig, OracleConfig, PerturbConfig,
                    TrainConfig, WorldConfig)
from config import DisambigConfig as DisambigDefaults
from contrastive_kit import FRONT_ENDS, WARM_STARTS, CropFrontEnd, MiningSpec, PerturbSpec
from crop_extract import CropSpec
from disambiguator import DisambigConfig
from file_formats import read_json, write_json
from floc_errors import ConfigurationError, MissingInputError, ValidationError
from floorplan_core import FanSpec
from pose_scoring import PoseGridSpec
from ray_model import BinSpec
from synth_bench import NoiseSpec, OracleSignatureEmbedder, WorldSpec

RESOLVED_NAME = "resolved_config.json"
SEEDED_SECTIONS = ("mining", "train", "world", "noise")


def default_document() -> Dict[str, Any]:
    return {
        "profile": DatasetProfiles.DEFAULT,
        "threads": 1,
        "fan": {"n_rays": FanConfig.N_RAYS, "fov_deg": None,
                "max_range_m": FanConfig.MAX_RANGE_M, "spacing": FanConfig.SPACING},
        "bins": {"d_min_m": BinConfig.D_MIN_M, "d_max_m": BinConfig.D_MAX_M,
                 "n_bins": BinConfig.N_BINS, "gamma": BinConfig.GAMMA},
        "loss": {"mode": LossConfig.MODE, "epsilon": LossConfig.EPSILON},
        "grid": {"cell_stride_m": None, "n_orientations": GridConfig.N_ORIENTATIONS,
                 "sigma_m": GridConfig.SIGMA_M},
        "crop": {"side_m": CropConfig.SIDE_M, "out_px": None, "channels": CropConfig.CHANNELS},
        "perturb": {"pos_b_m": PerturbConfig.POS_B_M, "ang_b_rad": PerturbConfig.ANG_B_RAD},
        "mining": {"inner_neg_dist_m": list(MiningConfig.INNER_NEG_DIST_M),
                   "ori_neg_rotation_rad": MiningConfig.ORI_NEG_ROTATION,
                   "n_inner": MiningConfig.N_INNER, "n_cross": MiningConfig.N_CROSS,
                   "n_ori": MiningConfig.N_ORI, "max_retries": MiningConfig.MAX_RETRIES,
                   "seed": MiningConfig.SEED},
        "contrast": {"temperature": ContrastConfig.TEMPERATURE,
                     "denominator": ContrastConfig.DENOMINATOR},
        "train": {"features": TrainConfig.FEATURES, "warm_start": TrainConfig.WARM_START,
                  "ridge": TrainConfig.RIDGE, "epochs": TrainConfig.EPOCHS,
                  "learning_rate": TrainConfig.LEARNING_RATE,
                  "validation_fraction": TrainConfig.VALIDATION_FRACTION,
                  "patience": TrainConfig.PATIENCE, "pool_factor": TrainConfig.POOL_FACTOR,
                  "n_worlds": 6, "anchors_per_world": 100, "seed": TrainConfig.SEED},
        "disambig": {"w": DisambigDefaults.W, "softmax_temperature": DisambigDefaults.TEMPERATURE,
                     "x": DisambigDefaults.X},
        "world": {"layout": WorldConfig.LAYOUT, "extent_m": list(WorldConfig.EXTENT_M),
                  "resolution_m": WorldConfig.RESOLUTION_M, "n_rooms": WorldConfig.N_ROOMS,
                  "room_size_m": WorldConfig.ROOM_SIZE_M, "corridor_m": WorldConfig.CORRIDOR_M,
                  "door_m": WorldConfig.DOOR_M, "closet_m": list(WorldConfig.CLOSET_M),
                  "min_room_m": WorldConfig.MIN_ROOM_M, "texture_base": 1,
                  "n_gt_poses": WorldConfig.N_GT_POSES, "seed": WorldConfig.SEED},
        "noise": {"sigma_d_m": NoiseConfig.SIGMA_D_M, "dropout": NoiseConfig.DROPOUT,
                  "seed": NoiseConfig.SEED},
        "oracle": {"dim": OracleConfig.DIM, "seed": OracleConfig.SEED,
                   "texture_weight": OracleConfig.TEXTURE_WEIGHT},
        "benchmark": {"n_queries": BenchmarkConfig.N_QUERIES,
                      "query_seed": BenchmarkConfig.QUERY_SEED,
                      "duplicate_margin_m": BenchmarkConfig.DUPLICATE_MARGIN_M},
        "paths": {"map": None, "rays": None, "signature": None, "predictions": None,
                  "embedder": None, "samples": None},
    }


# ─────────────────────────────────────────────
# Merge / validation
# ─────────────────────────────────────────────
def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_type(key: str, default, value):
    if value is None:
        return
    if default is None:
        if key.startswith("paths."):
            if not isinstance(value, str):
                raise ValidationError(f"'{key}' must be a path string, got {value!r}")
        elif not _is_number(value):
            raise ValidationError(f"'{key}' must be a number or null, got {value!r}")
        return
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"'{key}' must be true or false, got {value!r}")
    elif _is_number(default):
        if not _is_number(value):
            raise ValidationError(f"'{key}' must be a number, got {value!r}")
        if isinstance(default, int) and isinstance(value, float) and not value.is_integer():
            raise ValidationError(f"'{key}' must be an integer, got {value!r}")
        if not math.isfinite(value):
            raise ValidationError(f"'{key}' must be finite")
    elif isinstance(default, str) and not isinstance(value, str):
        raise ValidationError(f"'{key}' must be a string, got {value!r}")
    elif isinstance(default, list) and not (
            isinstance(value, list) and len(value) == len(default) and all(_is_number(v) for v in value)):
        raise ValidationError(f"'{key}' must be a list of {len(default)} numbers")


def _merge(base: Dict[str, Any], update: Dict[str, Any], prefix: str = ""):
    for key, value in update.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigurationError(f"unknown config key '{dotted}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(f"'{dotted}' must be an object")
            _merge(base[key], value, dotted + ".")
        else:
            _check_type(dotted, base[key], value)
            if isinstance(base[key], int) and not isinstance(base[key], bool) and isinstance(value, float):
                value = int(value)
            base[key] = value


class RunConfig:
    """Resolved run configuration plus typed accessors for every spec"""

    def __init__(self, document: Optional[Dict[str, Any]] = None):
        self.doc = default_document()
        if document:
            if not isinstance(document, dict):
                raise ValidationError("the run config must be a JSON object")
            _merge(self.doc, document)
        if self.doc["profile"] not in ("gibson", "structured3d"):
            raise ValidationError(f"unknown profile '{self.doc['profile']}'")
        if int(self.doc["threads"]) < 1:
            raise ValidationError("threads must be >= 1")

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        if path is None:
            return cls()
        if not os.path.isfile(path):
            raise MissingInputError(f"config file not found: {path}")
        try:
            doc = read_json(path)
        except ValueError as e:
            raise ConfigurationError(f"{path}: invalid JSON ({e})") from e
        return cls(doc)

    def override(self, dotted: str, value):
        """CLI overrides, applied after the file"""
        if value is None:
            return
        parts = dotted.split(".")
        update = value
        for part in reversed(parts):
            update = {part: update}
        _merge(self.doc, update)

    def apply_seed(self, seed: Optional[int]):
        if seed is None:
            return
        if seed < 0 or seed >= 2 ** 64:
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed}")
        for section in SEEDED_SECTIONS:
            self.doc[section]["seed"] = int(seed)

    def section(self, name: str) -> Dict[str, Any]:
        return self.doc[name]

    @property
    def threads(self) -> int:
        return int(self.doc["threads"])

    def write_resolved(self, out_dir: str) -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, RESOLVED_NAME)
        write_json(path, self.doc)
        return path

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.doc)

    # ── typed specs ────────────────────────────
    def fan_spec(self) -> FanSpec:
        f = self.doc["fan"]
        fov_deg = f["fov_deg"] if f["fov_deg"] is not None else DatasetProfiles.get(self.doc["profile"])["fov_deg"]
        return FanSpec(n_rays=int(f["n_rays"]), fov=math.radians(float(fov_deg)),
                       max_range=float(f["max_range_m"]), spacing=f["spacing"])

    def bin_spec(self) -> BinSpec:
        return BinSpec.from_dict(self.doc["bins"])

    def grid_spec(self, fp) -> PoseGridSpec:
        g = self.doc["grid"]
        if g["cell_stride_m"] is None:
            return PoseGridSpec.default_for(fp, int(g["n_orientations"]))
        return PoseGridSpec(cell_stride=float(g["cell_stride_m"]), n_orientations=int(g["n_orientations"]))

    @property
    def sigma(self) -> float:
        return float(self.doc["grid"]["sigma_m"])

    def crop_spec(self) -> CropSpec:
        c = self.doc["crop"]
        return CropSpec(side_m=float(c["side_m"]),
                        out_px=None if c["out_px"] is None else int(c["out_px"]),
                        channels=c["channels"])

    def perturb_spec(self) -> PerturbSpec:
        p = self.doc["perturb"]
        return PerturbSpec(pos_b=float(p["pos_b_m"]), ang_b=float(p["ang_b_rad"]))

    def mining_spec(self) -> MiningSpec:
        m = self.doc["mining"]
        return MiningSpec(inner_neg_dist=(float(m["inner_neg_dist_m"][0]), float(m["inner_neg_dist_m"][1])),
                          ori_neg_rotation=float(m["ori_neg_rotation_rad"]),
                          n_inner=int(m["n_inner"]), n_cross=int(m["n_cross"]), n_ori=int(m["n_ori"]),
                          seed=int(m["seed"]), max_retries=int(m["max_retries"]))

    def disambig_config(self) -> DisambigConfig:
        d = self.doc["disambig"]
        return DisambigConfig(w=float(d["w"]), softmax_temperature=float(d["softmax_temperature"]), x=int(d["x"]))

    def world_spec(self) -> WorldSpec:
        w = self.doc["world"]
        return WorldSpec(layout=w["layout"], extent_m=(float(w["extent_m"][0]), float(w["extent_m"][1])),
                         resolution_m=float(w["resolution_m"]), n_rooms=int(w["n_rooms"]),
                         room_size_m=float(w["room_size_m"]), corridor_m=float(w["corridor_m"]),
                         door_m=float(w["door_m"]),
                         closet_m=(float(w["closet_m"][0]), float(w["closet_m"][1])),
                         min_room_m=float(w["min_room_m"]), texture_base=int(w["texture_base"]),
                         n_gt_poses=int(w["n_gt_poses"]), seed=int(w["seed"]))

    def noise_spec(self) -> NoiseSpec:
        n = self.doc["noise"]
        return NoiseSpec(sigma_d=float(n["sigma_d_m"]), dropout=float(n["dropout"]), seed=int(n["seed"]))

    def oracle_embedder(self) -> OracleSignatureEmbedder:
        """The one signature embedder of a run: simulate, training anchors and localize share it"""
        o = self.doc["oracle"]
        return OracleSignatureEmbedder(dim=int(o["dim"]), seed=int(o["seed"]),
                                       fan=self.fan_spec(), reach=self.crop_spec().side_m / 2.0,
                                       texture_weight=float(o["texture_weight"]))

    def oracle_identity(self) -> Dict[str, int]:
        o = self.doc["oracle"]
        return {"dim": int(o["dim"]), "seed": int(o["seed"])}

    def crop_front_end(self) -> CropFrontEnd:
        t = self.doc["train"]
        return CropFrontEnd(kind=t["features"], fan=self.fan_spec(),
                            reach=self.crop_spec().side_m / 2.0,
                            texture_weight=float(self.doc["oracle"]["texture_weight"]),
                            pool_factor=int(t["pool_factor"]))

    def validate(self):
        """Builds every map-independent spec once so range errors surface before any work"""
        self.fan_spec()
        self.bin_spec()
        self.crop_spec()
        self.perturb_spec()
        self.mining_spec()
        self.disambig_config()
        self.world_spec()
        self.noise_spec()
        g = self.doc["grid"]
        if g["cell_stride_m"] is not None:
            PoseGridSpec(cell_stride=float(g["cell_stride_m"]), n_orientations=int(g["n_orientations"]))
        if not self.sigma > 0:
            raise ValidationError(f"grid.sigma_m must be > 0, got {self.sigma}")
        if self.doc["loss"]["mode"] not in ("as-printed", "shape-penalty"):
            raise ValidationError(f"unknown loss.mode '{self.doc['loss']['mode']}'")
        c = self.doc["contrast"]
        if c["denominator"] not in ("as-printed", "with-positive"):
            raise ValidationError(f"unknown contrast.denominator '{c['denominator']}'")
        if not c["temperature"] > 0:
            raise ValidationError("contrast.temperature must be > 0")
        t = self.doc["train"]
        if (t["epochs"] < 0 or t["learning_rate"] < 0 or not 0 <= t["validation_fraction"] < 1
                or t["ridge"] < 0 or t["pool_factor"] < 1):
            raise ValidationError("train section out of range")
        if t["features"] not in FRONT_ENDS:
            raise ValidationError(f"unknown train.features '{t['features']}'")
        if t["warm_start"] not in WARM_STARTS:
            raise ValidationError(f"unknown train.warm_start '{t['warm_start']}'")
        if self.doc["oracle"]["dim"] < 2:
            raise ValidationError("oracle.dim must be >= 2")
