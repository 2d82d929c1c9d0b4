"""
eval_metrics.py - recall at position / orientation thresholds
=============================================================
A prediction counts at threshold r when its position error is strictly
below r; the joint metric also needs the wrapped heading error strictly
below 30 degrees.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from config import EvalConfig
from file_formats import read_csv, write_csv, write_json
from floc_errors import EmptyDomainError, ValidationError
from floorplan_core import Pose, angle_difference, canonical_angle

logger = logging.getLogger("FLOC.eval")

PREDICTION_COLUMNS = ("pred_x", "pred_y", "pred_theta", "gt_x", "gt_y", "gt_theta")


@dataclass(frozen=True)
class EvalRecord:
    predicted: Pose
    ground_truth: Pose
    position_error: float
    angular_error: float


def make_record(predicted: Pose, ground_truth: Pose) -> EvalRecord:
    return EvalRecord(predicted=predicted, ground_truth=ground_truth,
                      position_error=predicted.distance_to(ground_truth),
                      angular_error=angle_difference(predicted.theta, ground_truth.theta))


@dataclass
class EvalReport:
    n: int
    position_recall: Dict[float, float] = field(default_factory=dict)
    joint_recall: Dict[float, float] = field(default_factory=dict)   # position AND heading
    joint_angle: float = EvalConfig.JOINT_THRESHOLD_RAD

    @property
    def recall_01(self) -> float:
        return self.position_recall[0.1]

    @property
    def recall_05(self) -> float:
        return self.position_recall[0.5]

    @property
    def recall_1(self) -> float:
        return self.position_recall[1.0]

    @property
    def recall_1_30(self) -> float:
        return self.joint_recall[EvalConfig.JOINT_THRESHOLD_M]

    def rows(self) -> List[tuple]:
        deg = round(float(np.degrees(self.joint_angle)))
        out = [(f"{r:g}m", v, self.n) for r, v in self.position_recall.items()]
        out += [(f"{r:g}m+{deg}deg", v, self.n) for r, v in self.joint_recall.items()]
        return out

    def to_dict(self) -> dict:
        return {"n": self.n, "recall": {label: value for label, value, _ in self.rows()}}


def evaluate(records: Sequence[EvalRecord],
             thresholds: Sequence[float] = EvalConfig.POSITION_THRESHOLDS_M,
             joint_angle: float = EvalConfig.JOINT_THRESHOLD_RAD) -> EvalReport:
    if len(records) == 0:
        raise EmptyDomainError("evaluation needs at least one record")
    pos = np.array([r.position_error for r in records])
    ang = np.array([r.angular_error for r in records])
    n = len(records)
    report = EvalReport(n=n, joint_angle=joint_angle)
    # headings are stored rounded, so the limit is compared in the same rounding
    limit = canonical_angle(joint_angle)
    for r in sorted(thresholds):
        within = pos < r
        report.position_recall[r] = int(within.sum()) / n
        report.joint_recall[r] = int((within & (ang < limit)).sum()) / n
    return report


# ─────────────────────────────────────────────
# I/O
# ─────────────────────────────────────────────
def write_report_csv(report: EvalReport, path: str):
    write_csv(path, ["threshold", "recall", "n"], report.rows())


def write_report_json(report: EvalReport, path: str):
    write_json(path, report.to_dict())


def read_predictions_csv(path: str) -> List[EvalRecord]:
    rows = read_csv(path)
    if rows:
        missing = [c for c in PREDICTION_COLUMNS if c not in rows[0]]
        if missing:
            raise ValidationError(f"{path}: missing columns {', '.join(missing)}")
    records = []
    for i, row in enumerate(rows):
        try:
            vals = [float(row[c]) for c in PREDICTION_COLUMNS]
        except ValueError as e:
            raise ValidationError(f"{path}: row {i + 1} is not numeric ({e})") from e
        records.append(make_record(Pose(*vals[:3]), Pose(*vals[3:])))
    logger.info(f"read {len(records)} predictions from {path}")
    return records
