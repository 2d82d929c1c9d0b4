"""
floc_cli.py - command-line entry point
======================================
    python floc_cli.py <command> [--config run.json] [--out DIR] [--seed N] [--threads N] ...

Commands:
    gen-world       synthetic world: map graymap + metadata + GT-pose manifest
    cast            GT ray fan at one pose
    simulate        noisy predicted fan, bin probabilities and signature embedding
    localize        DAFPM -> top-X -> DPM fusion -> final pose
    mine            contrastive samples over the training worlds
    train-embedder  trainable linear crop embedder
    eval            recall report from a predictions CSV
    sweep           twin-rooms benchmark over one parameter

Exit codes: 0 ok, 1 runtime failure, 2 invalid config, 3 missing input.
"""

import argparse
import json
import logging
import os
import sys
import time
from typing import List, Optional

import numpy as np

from benchmark_sweep import (parse_values, print_comparison, sweep, train_on_twin_worlds,
                             training_dataset, write_sweep_csv)
from config import LogConfig
from contrastive_kit import (LinearCropEmbedder, mine_dataset, save_embeddings, unit_normalize,
                             write_sample_manifest)
from disambiguator import Localizer, export_result
from eval_metrics import evaluate, read_predictions_csv, write_report_csv, write_report_json
from file_formats import read_csv, read_emb1, write_csv, write_json
from floc_errors import ConfigurationError, FLocError, MissingInputError, ValidationError
from floorplan_core import Pose, load_floorplan, render_fan, save_floorplan
from pose_scoring import GtRayTable, PoseGrid
from ray_model import RayProbDist, encode_depths, expected_depths, floc_loss
from run_config import RunConfig
from synth_bench import generate_world, room_of, simulate_observation

logger = logging.getLogger("FLOC.cli")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3


# ─────────────────────────────────────────────
# Setup helpers
# ─────────────────────────────────────────────
def setup_logging(out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, LogConfig.LEVEL),
        format=LogConfig.FORMAT,
        handlers=[
            logging.FileHandler(os.path.join(out_dir, LogConfig.FILE_NAME), encoding='utf-8'),
            logging.StreamHandler()
        ],
        force=True
    )


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    cfg.apply_seed(args.seed)
    if args.threads is not None:
        cfg.override("threads", args.threads)
    cfg.override("disambig.w", getattr(args, "w", None))
    cfg.override("disambig.x", getattr(args, "x", None))
    cfg.override("crop.side_m", getattr(args, "crop_m", None))
    for key in ("map", "rays", "signature", "predictions", "embedder", "samples"):
        cfg.override(f"paths.{key}", getattr(args, key, None))
    cfg = RunConfig(cfg.to_dict())
    cfg.validate()
    return cfg


def require_path(cfg: RunConfig, key: str) -> str:
    path = cfg.section("paths")[key]
    if not path:
        raise MissingInputError(f"no {key} given (--{key} or paths.{key})")
    if not os.path.isfile(path):
        raise MissingInputError(f"{key} not found: {path}")
    return path


def parse_pose(raw: str) -> Pose:
    try:
        x, y, theta = (float(v) for v in raw.split(","))
    except ValueError as e:
        raise ValidationError(f"pose must be 'x,y,theta', got '{raw}'") from e
    return Pose(x, y, theta)


def check_anchor_oracle(embedder: LinearCropEmbedder, cfg: RunConfig):
    """A trained embedder only matches signatures of the oracle it was trained against"""
    trained = embedder.anchor_oracle
    if trained is None:
        return
    current = cfg.oracle_identity()
    if {k: int(v) for k, v in trained.items()} != current:
        raise ConfigurationError(f"embedder was trained against oracle {trained}, "
                                 f"the run config has {current}")


def load_pred_rays(path: str, cfg: RunConfig) -> np.ndarray:
    """Predicted depths from a rays CSV (pred_depth or depth column) or .npy bin probabilities"""
    if path.endswith(".npy"):
        return expected_depths(RayProbDist(np.load(path)), cfg.bin_spec())
    rows = read_csv(path)
    if not rows:
        raise ValidationError(f"{path}: no rays")
    column = "pred_depth" if "pred_depth" in rows[0] else "depth"
    if column not in rows[0]:
        raise ValidationError(f"{path}: needs a pred_depth or depth column")
    return np.array([float(r[column]) for r in rows])


# ─────────────────────────────────────────────
# Commands
# ─────────────────────────────────────────────
def cmd_gen_world(cfg: RunConfig, args) -> dict:
    world = generate_world(cfg.world_spec(), cfg.fan_spec())
    map_path = os.path.join(args.out, "world.pgm")
    save_floorplan(world.floorplan, map_path)
    write_json(os.path.join(args.out, "gt_poses.json"), {
        "spec": world.spec.to_dict(),
        "rooms": [{"index": r.index, "rows": list(r.rows), "cols": list(r.cols),
                   "texture_id": r.texture_id, "offset_m": list(r.offset_m)} for r in world.rooms],
        "poses": [dict(p.to_dict(), room=room_of(world, p.x, p.y)) for p in world.gt_poses],
    })
    return {"map": map_path, "n_gt_poses": len(world.gt_poses)}


def cmd_cast(cfg: RunConfig, args) -> dict:
    fp = load_floorplan(require_path(cfg, "map"))
    fan = render_fan(fp, parse_pose(args.pose), cfg.fan_spec())
    rows = [(i, float(o), float(d), int(h)) for i, (o, d, h) in
            enumerate(zip(fan.offsets, fan.depths, fan.hits))]
    write_csv(os.path.join(args.out, "rays.csv"), ["ray", "offset", "depth", "hit"], rows)
    return {"n_rays": fan.n_rays}


def cmd_simulate(cfg: RunConfig, args) -> dict:
    fp = load_floorplan(require_path(cfg, "map"))
    pose = parse_pose(args.pose)
    fan = cfg.fan_spec()
    reach = cfg.crop_spec().side_m / 2.0
    pred, signature = simulate_observation(fp, pose, cfg.noise_spec(), fan, reach=reach)
    rows = [(i, float(o), float(g), float(p)) for i, (o, g, p) in
            enumerate(zip(signature.offsets, signature.depths, pred))]
    write_csv(os.path.join(args.out, "rays.csv"), ["ray", "offset", "gt_depth", "pred_depth"], rows)
    np.save(os.path.join(args.out, "bins.npy"), encode_depths(pred, cfg.bin_spec()).probs)
    embedding = cfg.oracle_embedder().embed(signature)
    save_embeddings(os.path.join(args.out, "signature.emb"), embedding[None, :])
    loss = cfg.section("loss")
    depth_loss = floc_loss(pred, signature.depths, mode=loss["mode"], epsilon=float(loss["epsilon"]))
    write_json(os.path.join(args.out, "signature.json"),
               {"pose": pose.to_dict(), "noise": signature.noise,
                "texture_histogram": [int(v) for v in signature.texture_histogram],
                "oracle": cfg.oracle_identity(), "floc_loss": depth_loss, "loss_mode": loss["mode"]})
    return {"n_rays": int(pred.shape[0]), "floc_loss": depth_loss}


def cmd_localize(cfg: RunConfig, args) -> dict:
    fp = load_floorplan(require_path(cfg, "map"))
    pred = load_pred_rays(require_path(cfg, "rays"), cfg)
    query = None
    if cfg.section("paths")["signature"]:
        query = unit_normalize(read_emb1(require_path(cfg, "signature"))[0])
    if cfg.section("paths")["embedder"]:
        crop_embedder = LinearCropEmbedder.load(os.path.splitext(cfg.section("paths")["embedder"])[0])
        check_anchor_oracle(crop_embedder, cfg)
    else:
        crop_embedder = cfg.oracle_embedder()
    if query is not None and query.shape[0] != crop_embedder.dim:
        raise ConfigurationError(f"signature has dimension {query.shape[0]}, "
                                 f"the crop embedder {crop_embedder.dim}")
    fan = cfg.fan_spec()
    if fan.n_rays != pred.shape[0]:
        raise ValidationError(f"rays file has {pred.shape[0]} rays, the fan has {fan.n_rays}")
    table = GtRayTable.build(PoseGrid(fp, cfg.grid_spec(fp)), fan, threads=cfg.threads)
    localizer = Localizer(fp, None, crop_embedder, config=cfg.disambig_config(),
                          crop=cfg.crop_spec(), sigma=cfg.sigma, threads=cfg.threads, table=table)
    result = localizer.localize(pred, query)
    export_result(result, args.out)
    return {"pose": result.pose.to_dict(), "processing_time": round(result.processing_time, 3)}


def cmd_mine(cfg: RunConfig, args) -> dict:
    dataset = training_dataset(cfg)
    samples = mine_dataset(dataset, cfg.perturb_spec(), cfg.mining_spec(), cfg.crop_spec(),
                           threads=cfg.threads)
    path = write_sample_manifest(samples, cfg.section("paths")["samples"] or os.path.join(args.out, "samples"))
    return {"manifest": path, "n_anchors": len(samples)}


def cmd_train_embedder(cfg: RunConfig, args) -> dict:
    result = train_on_twin_worlds(cfg, threads=cfg.threads)
    result.embedder.save(os.path.join(args.out, "embedder"))
    rows = [(e, loss, val) for e, (loss, val) in enumerate(zip(result.loss_trace, result.val_trace))]
    write_csv(os.path.join(args.out, "loss_trace.csv"), ["epoch", "train_loss", "val_loss"], rows)
    summary = {"initial_loss": result.initial_loss, "final_loss": result.final_loss,
               "best_epoch": result.best_epoch, "retrieval": result.retrieval,
               "epochs_run": len(result.loss_trace)}
    write_json(os.path.join(args.out, "training.json"), summary)
    return summary


def cmd_eval(cfg: RunConfig, args) -> dict:
    report = evaluate(read_predictions_csv(require_path(cfg, "predictions")))
    write_report_csv(report, os.path.join(args.out, "report.csv"))
    write_report_json(report, os.path.join(args.out, "report.json"))
    return report.to_dict()


def cmd_sweep(cfg: RunConfig, args) -> dict:
    values = parse_values(args.param, args.values)
    header, rows = sweep(cfg, args.param, values, threads=cfg.threads)
    write_sweep_csv(os.path.join(args.out, "sweep.csv"), header, rows)
    print_comparison(header, rows)
    return {"param": args.param, "n_rows": len(rows)}


COMMANDS = {
    "gen-world": cmd_gen_world,
    "cast": cmd_cast,
    "simulate": cmd_simulate,
    "localize": cmd_localize,
    "mine": cmd_mine,
    "train-embedder": cmd_train_embedder,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


# ─────────────────────────────────────────────
# Parser
# ─────────────────────────────────────────────
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON")
    common.add_argument("--out", default="floc_out", help="output directory")
    common.add_argument("--seed", type=int, help="seed for mining, training, worlds and noise")
    common.add_argument("--threads", type=int, help="worker threads")

    parser = argparse.ArgumentParser(prog="floc_cli.py", description="Floorplan localization")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-world", parents=[common], help="generate a synthetic world")
    for name in ("cast", "simulate"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--map", help="floorplan graymap")
        p.add_argument("--pose", required=True, help="x,y,theta")

    p = sub.add_parser("localize", parents=[common])
    p.add_argument("--map")
    p.add_argument("--rays", help="rays CSV or .npy bin probabilities")
    p.add_argument("--signature", help="EMB1 query embedding")
    p.add_argument("--embedder", help="trained crop embedder prefix")
    p.add_argument("--w", type=float)
    p.add_argument("--x", type=int)
    p.add_argument("--crop-m", dest="crop_m", type=float)

    p = sub.add_parser("mine", parents=[common])
    p.add_argument("--samples", help="sample output directory")
    sub.add_parser("train-embedder", parents=[common])

    p = sub.add_parser("eval", parents=[common])
    p.add_argument("--predictions", help="CSV with pred_x,pred_y,pred_theta,gt_x,gt_y,gt_theta")

    p = sub.add_parser("sweep", parents=[common])
    p.add_argument("--param", required=True,
                   choices=["w", "x", "crop_m", "sigma_d", "ablation"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--w", type=float)
    p.add_argument("--x", type=int)
    p.add_argument("--crop-m", dest="crop_m", type=float)
    return parser


def report_error(err: Exception, command: str, out_dir: Optional[str]):
    kind = err.kind if isinstance(err, FLocError) else "runtime-error"
    payload = {"error": kind, "message": str(err), "command": command}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    if out_dir:
        try:
            os.makedirs(out_dir, exist_ok=True)
            write_json(os.path.join(out_dir, "error.json"), payload)
        except OSError:
            pass


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    # 1. config
    try:
        cfg = resolve_config(args)
    except MissingInputError as e:
        report_error(e, args.command, args.out)
        return EXIT_MISSING
    except (ConfigurationError, ValidationError) as e:
        report_error(e, args.command, args.out)
        return EXIT_CONFIG

    # 2. run
    setup_logging(args.out)
    cfg.write_resolved(args.out)
    start = time.time()
    try:
        summary = COMMANDS[args.command](cfg, args)
    except MissingInputError as e:
        logger.error(str(e))
        report_error(e, args.command, args.out)
        return EXIT_MISSING
    except ConfigurationError as e:
        logger.error(str(e))
        report_error(e, args.command, args.out)
        return EXIT_CONFIG
    except Exception as e:
        logger.exception(f"{args.command} failed")
        report_error(e, args.command, args.out)
        return EXIT_RUNTIME
    logger.info(f"{args.command} done in {time.time() - start:.2f}s: {summary}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
