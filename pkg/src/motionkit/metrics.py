"""Pose and trajectory error metrics between predicted and reference motions.

Local metrics (MPJPE, PA-MPJPE, PVE, PCK0.3) factor out global placement:
MPJPE/PVE/PCK subtract each skeleton's root position per frame, PA-MPJPE
applies a per-frame least-squares similarity alignment. Global metrics
(GMPJPE, T-Error) compare raw world coordinates. All distances are reported
in millimeters; ACCEL in mm/s^2. PCK0.3 counts root-aligned joint errors of
at most 300 mm, boundary included.

PA-MPJPE is at most MPJPE for diffuse error patterns (root translation is one
feasible similarity), but the alignment minimizes summed squares, not the
mean of norms, so a single-joint outlier can push PA-MPJPE above MPJPE.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .body import MotionSequence, SkinnedBody, fk_batch, skin_batch
from .errors import ValidationError
from .geometry import procrustes_align

PCK_THRESHOLD_MM = 300.0

_CSV_FIELDS = ("mpjpe", "pa_mpjpe", "pve", "pck03", "accel", "gmpjpe", "t_error", "frame_count")


@dataclass(frozen=True)
class EvalReport:
    """Aggregate metric values; distances in mm, accel in mm/s^2, pck03 in [0, 1]."""

    mpjpe: float
    pa_mpjpe: float
    pve: float
    pck03: float
    accel: float
    gmpjpe: float
    t_error: float
    frame_count: int

    def __post_init__(self):
        for name in _CSV_FIELDS[:-1]:
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and non-negative, got {v}")
        if not (0.0 <= self.pck03 <= 1.0):
            raise ValidationError("pck03 must lie in [0, 1]")

    def to_text(self) -> str:
        return "\n".join(
            [
                f"frames    : {self.frame_count}",
                f"MPJPE     : {self.mpjpe:.3f} mm",
                f"PA-MPJPE  : {self.pa_mpjpe:.3f} mm",
                f"PVE       : {self.pve:.3f} mm",
                f"PCK0.3    : {self.pck03:.4f}",
                f"ACCEL     : {self.accel:.3f} mm/s^2",
                f"GMPJPE    : {self.gmpjpe:.3f} mm",
                f"T-Error   : {self.t_error:.3f} mm",
            ]
        )

    @staticmethod
    def csv_header() -> str:
        return ",".join(_CSV_FIELDS)

    def to_csv_row(self) -> str:
        return ",".join(repr(getattr(self, f)) for f in _CSV_FIELDS)

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in _CSV_FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def accel_error(pred_joints: np.ndarray, gt_joints: np.ndarray, frame_rate: float) -> float:
    """Mean acceleration-difference magnitude in mm/s^2.

    Accelerations come from second finite differences of per-frame joint
    positions scaled by frame_rate^2; the mean runs over interior frames and
    joints.
    """
    p = np.asarray(pred_joints, dtype=np.float64)
    g = np.asarray(gt_joints, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 3:
        raise ValidationError("joint arrays must both be (N, K, 3)")
    if p.shape[0] < 3:
        raise ValidationError("need at least 3 frames for accelerations")
    rate2 = float(frame_rate) ** 2
    ap = (p[2:] - 2.0 * p[1:-1] + p[:-2]) * rate2
    ag = (g[2:] - 2.0 * g[1:-1] + g[:-2]) * rate2
    return float(np.mean(np.linalg.norm(ap - ag, axis=-1))) * 1000.0


def evaluate(pred: MotionSequence, gt: MotionSequence, body: SkinnedBody) -> EvalReport:
    """Full metric suite for a predicted motion against ground truth."""
    if len(pred) != len(gt):
        raise ValidationError(f"frame counts differ: {len(pred)} vs {len(gt)}")
    if abs(pred.frame_rate - gt.frame_rate) > 1e-12:
        raise ValidationError("frame rates differ")
    n = len(pred)

    jp, rp, _ = fk_batch(body, pred.translations(), pred.poses(), pred.shape)
    jg, rg, _ = fk_batch(body, gt.translations(), gt.poses(), gt.shape)
    vp = skin_batch(body, jp, rp)
    vg = skin_batch(body, jg, rg)

    root_p = jp[:, :1]
    root_g = jg[:, :1]
    local_err = np.linalg.norm((jp - root_p) - (jg - root_g), axis=-1)  # (N, 24)

    mpjpe = float(np.mean(local_err)) * 1000.0
    pve = float(np.mean(np.linalg.norm((vp - root_p) - (vg - root_g), axis=-1))) * 1000.0
    pck03 = float(np.mean(local_err * 1000.0 <= PCK_THRESHOLD_MM))
    gmpjpe = float(np.mean(np.linalg.norm(jp - jg, axis=-1))) * 1000.0
    t_error = float(np.mean(np.linalg.norm(jp[:, 0] - jg[:, 0], axis=-1))) * 1000.0

    pa_err = np.empty(n)
    for i in range(n):
        tf = procrustes_align(jp[i], jg[i])
        pa_err[i] = np.mean(np.linalg.norm(tf.apply(jp[i]) - jg[i], axis=-1))
    pa_mpjpe = float(np.mean(pa_err)) * 1000.0

    acc = accel_error(jp, jg, pred.frame_rate) if n >= 3 else 0.0

    return EvalReport(
        mpjpe=mpjpe,
        pa_mpjpe=pa_mpjpe,
        pve=pve,
        pck03=pck03,
        accel=acc,
        gmpjpe=gmpjpe,
        t_error=t_error,
        frame_count=n,
    )
