"""
benchmark_sweep.py - twin-rooms benchmark and parameter sweeps
==============================================================
Runs the full localizer over sampled benchmark queries and compares
settings side by side:
  - w, x, crop_m, sigma_d   localization recall per value
  - ablation                trainable-embedder runs with one mining ingredient removed
"""

import logging
import time
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np

from contrastive_kit import (TrainingResult, mine_dataset, train_linear_embedder)
from crop_extract import CropSpec
from disambiguator import DisambigConfig, Localizer
from eval_metrics import EvalRecord, evaluate, make_record
from file_formats import write_csv
from floc_errors import ConfigurationError
from floorplan_core import FloorPlan, Pose
from pose_scoring import GtRayTable, PoseGrid
from run_config import RunConfig
from synth_bench import (NoiseSpec, OracleSignatureEmbedder, World, generate_world,
                         room_of, sample_queries, simulate_observation, training_worlds)

logger = logging.getLogger("FLOC.bench")

LOCALIZATION_PARAMS = ("w", "x", "crop_m", "sigma_d")
ABLATIONS = ("none", "no_inner", "no_ori", "no_pos_pert", "no_ang_pert")
SWEEP_HEADER = ["param", "value", "n", "recall_0.1m", "recall_0.5m", "recall_1m",
                "recall_0.5m_30deg", "recall_1m_30deg", "room_accuracy"]
ABLATION_HEADER = ["param", "value", "n_anchors", "initial_loss", "final_loss",
                   "best_epoch", "retrieval"]


@dataclass
class Benchmark:
    world: World
    table: GtRayTable
    queries: List[Pose]


@dataclass
class BenchmarkRun:
    records: List[EvalRecord]
    room_hits: List[bool]
    dafpm_only: List[Pose]


# ─────────────────────────────────────────────
# Setup
# ─────────────────────────────────────────────
def prepare_benchmark(cfg: RunConfig, threads: int = 1) -> Benchmark:
    start = time.time()
    fan = cfg.fan_spec()
    world = generate_world(cfg.world_spec(), fan)
    fp = world.floorplan
    table = GtRayTable.build(PoseGrid(fp, cfg.grid_spec(fp)), fan, threads=threads)
    b = cfg.section("benchmark")
    queries = sample_queries(world, table, n=int(b["n_queries"]), seed=int(b["query_seed"]),
                             margin=float(b["duplicate_margin_m"]))
    logger.info(f"benchmark ready: {len(queries)} queries in {time.time() - start:.1f}s")
    return Benchmark(world=world, table=table, queries=queries)


def run_benchmark(bench: Benchmark, cfg: RunConfig, disambig: DisambigConfig = None,
                  crop: CropSpec = None, noise: NoiseSpec = None, threads: int = 1) -> BenchmarkRun:
    """Localizes every query; the oracle embedder serves both sides"""
    disambig = disambig or cfg.disambig_config()
    crop = crop or cfg.crop_spec()
    noise = noise or cfg.noise_spec()
    fan = cfg.fan_spec()
    o = cfg.section("oracle")
    oracle = OracleSignatureEmbedder(dim=int(o["dim"]), seed=int(o["seed"]), fan=fan,
                                     reach=crop.side_m / 2.0, texture_weight=float(o["texture_weight"]))
    localizer = Localizer(bench.world.floorplan, oracle, oracle, config=disambig, crop=crop,
                          sigma=cfg.sigma, threads=threads, table=bench.table)
    run = BenchmarkRun(records=[], room_hits=[], dafpm_only=[])
    for i, gt in enumerate(bench.queries):
        per_query = replace(noise, seed=noise.seed + i)
        pred, signature = simulate_observation(bench.world.floorplan, gt, per_query, fan,
                                               reach=crop.side_m / 2.0)
        result = localizer.localize(pred, signature)
        run.records.append(make_record(result.pose, gt))
        run.room_hits.append(room_of(bench.world, result.pose.x, result.pose.y)
                             == room_of(bench.world, gt.x, gt.y))
        run.dafpm_only.append(result.candidates[0].pose)
    return run


def summarize(param: str, value, run: BenchmarkRun) -> list:
    report = evaluate(run.records)
    return [param, value, report.n, report.recall_01, report.recall_05, report.recall_1,
            report.joint_recall[0.5], report.recall_1_30,
            float(np.mean(run.room_hits)) if run.room_hits else 0.0]


# ─────────────────────────────────────────────
# Trainable embedder
# ─────────────────────────────────────────────
def training_dataset(cfg: RunConfig) -> List[Tuple[FloorPlan, Pose]]:
    """(floorplan, GT pose) anchors over the configured training worlds"""
    t = cfg.section("train")
    base = replace(cfg.world_spec(), n_gt_poses=int(t["anchors_per_world"]))
    worlds = training_worlds(int(t["n_worlds"]), base, seed=base.seed)
    return [(w.floorplan, p) for w in worlds for p in w.gt_poses]


def train_on_twin_worlds(cfg: RunConfig, threads: int = 1) -> TrainingResult:
    """Trains against anchors from the run's own oracle, so the result localizes with it"""
    t = cfg.section("train")
    fan = cfg.fan_spec()
    crop = cfg.crop_spec()
    dataset = training_dataset(cfg)
    oracle = cfg.oracle_embedder()
    anchors = np.stack([oracle.embed(simulate_observation(fp, p, NoiseSpec(), fan,
                                                          reach=crop.side_m / 2.0)[1])
                        for fp, p in dataset])
    samples = mine_dataset(dataset, cfg.perturb_spec(), cfg.mining_spec(), crop, threads=threads)
    c = cfg.section("contrast")
    return train_linear_embedder(samples, anchors, dim=oracle.dim, epochs=int(t["epochs"]),
                                 learning_rate=float(t["learning_rate"]), seed=int(t["seed"]),
                                 temperature=float(c["temperature"]), denominator=c["denominator"],
                                 validation_fraction=float(t["validation_fraction"]),
                                 patience=int(t["patience"]), front_end=cfg.crop_front_end(),
                                 warm_start=t["warm_start"], ridge=float(t["ridge"]),
                                 anchor_oracle=cfg.oracle_identity())


def _ablated(cfg: RunConfig, ablation: str) -> RunConfig:
    out = RunConfig(cfg.to_dict())
    if ablation == "no_inner":
        out.override("mining.n_inner", 0)
    elif ablation == "no_ori":
        out.override("mining.n_ori", 0)
    elif ablation == "no_pos_pert":
        out.override("perturb.pos_b_m", 0.0)
    elif ablation == "no_ang_pert":
        out.override("perturb.ang_b_rad", 0.0)
    elif ablation != "none":
        raise ConfigurationError(f"unknown ablation '{ablation}', expected one of {', '.join(ABLATIONS)}")
    out.validate()
    return out


# ─────────────────────────────────────────────
# Sweep
# ─────────────────────────────────────────────
def parse_values(param: str, raw: str) -> list:
    items = [v.strip() for v in raw.split(",") if v.strip()]
    if not items:
        raise ConfigurationError("sweep needs at least one value")
    if param == "ablation":
        return items
    try:
        return [int(v) if param == "x" else float(v) for v in items]
    except ValueError as e:
        raise ConfigurationError(f"bad value for {param}: {e}") from e


def sweep(cfg: RunConfig, param: str, values: Sequence, threads: int = 1):
    """Returns (header, rows); one row per value"""
    if param == "ablation":
        t = cfg.section("train")
        n_anchors = int(t["n_worlds"]) * int(t["anchors_per_world"])
        rows = []
        for value in values:
            result = train_on_twin_worlds(_ablated(cfg, value), threads)
            rows.append([param, value, n_anchors,
                         result.initial_loss, result.final_loss, result.best_epoch,
                         result.retrieval if result.retrieval is not None else float("nan")])
        return ABLATION_HEADER, rows
    if param not in LOCALIZATION_PARAMS:
        raise ConfigurationError(f"unknown sweep param '{param}'")

    bench = prepare_benchmark(cfg, threads)
    base_disambig = cfg.disambig_config()
    base_crop = cfg.crop_spec()
    base_noise = cfg.noise_spec()
    rows = []
    for value in values:
        disambig, crop, noise = base_disambig, base_crop, base_noise
        if param == "w":
            disambig = replace(base_disambig, w=float(value))
        elif param == "x":
            disambig = replace(base_disambig, x=int(value))
        elif param == "crop_m":
            crop = replace(base_crop, side_m=float(value))
        elif param == "sigma_d":
            noise = replace(base_noise, sigma_d=float(value))
        start = time.time()
        run = run_benchmark(bench, cfg, disambig, crop, noise, threads)
        rows.append(summarize(param, value, run))
        logger.info(f"{param}={value}: {rows[-1][3:]} ({time.time() - start:.1f}s)")
    return SWEEP_HEADER, rows


def write_sweep_csv(path: str, header: List[str], rows: List[list]):
    write_csv(path, header, rows)


def print_comparison(header: List[str], rows: List[list]):
    print("\n" + "=" * 60)
    print(f"Sweep over {rows[0][0] if rows else '-'}")
    print("=" * 60)
    for row in rows:
        cells = [f"{h}={v:.3f}" if isinstance(v, float) else f"{h}={v}" for h, v in zip(header[1:], row[1:])]
        print("   " + "  ".join(cells))
