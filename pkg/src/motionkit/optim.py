"""Joint refinement of global poses and trajectories.

The objective combines three per-frame-averaged terms:

* contact: squared scene penetration depths of the skinned vertices plus
  squared overlaps of non-adjacent body capsules,
* smoothness: squared second differences of the root trajectory and of all
  joint positions, plus squared frame-to-frame geodesic angles of every
  non-root joint rotation,
* geometry: symmetric Chamfer distance between each LiDAR cloud and the
  vertices visible from the sensor origin (hidden-point-removal subset).

``optimize`` runs deterministic first-order descent over every frame's
translation and axis-angle parameters. Gradients come from central finite
differences evaluated frame-locally (a frame's parameters only touch its own
contact/geometry terms and the smoothness stencils overlapping it), with the
per-frame visibility sets frozen during a single gradient evaluation; each
candidate step is accepted against the exact loss, so the recorded history is
monotone by construction.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .body import (
    NUM_JOINTS,
    BodyShape,
    MotionSequence,
    SkinnedBody,
    fk_batch,
    skin_batch,
)
from .errors import NonFiniteLossError, ValidationError
from .geometry import (
    TriangleMesh,
    as_cloud,
    hidden_point_removal,
    penetration_depths,
    segment_segment_distance,
    signed_depths,
)
from .parallel import parallel_map
from .rotations import axis_angle_to_matrix, geodesic_angle, matrix_to_axis_angle

# Capsule pairs closer than this beyond touching at rest are treated as
# anatomically adjacent and never penalized.
_REST_CLEARANCE_MARGIN = 0.02

_PARAMS_PER_FRAME = 3 + NUM_JOINTS * 3


@dataclass(frozen=True)
class CalibrationMatrix:
    """Rotation taking IMU-frame orientations into the world frame."""

    rotation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        if R.shape != (3, 3):
            raise ValidationError("calibration rotation must be 3x3")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or np.linalg.det(R) < 0:
            raise ValidationError("calibration rotation must be orthonormal with det +1")
        R.flags.writeable = False
        object.__setattr__(self, "rotation", R)

    @classmethod
    def identity(cls) -> "CalibrationMatrix":
        return cls(np.eye(3))


@dataclass(frozen=True)
class OptimConfig:
    """Loss coefficients and optimizer settings.

    The outer ``lambda_*`` coefficients weight the three loss groups; the
    ``w_*`` weights scale terms inside a group. Finite-difference steps are in
    meters / radians; ``step_size`` is the initial line-search step.
    """

    lambda_contact: float = 1.0
    lambda_smooth: float = 1.0
    lambda_geo: float = 1.0
    w_scene: float = 1.0
    w_self: float = 1.0
    w_trans: float = 1.0
    w_poses: float = 1.0
    w_joints: float = 1.0
    max_iters: int = 20
    fd_step_trans: float = 1e-3
    fd_step_rot: float = 1e-3
    step_size: float = 1.0
    hpr_gamma: float = 2.0
    seed: int = 0

    def __post_init__(self):
        for name in (
            "lambda_contact", "lambda_smooth", "lambda_geo",
            "w_scene", "w_self", "w_trans", "w_poses", "w_joints",
        ):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and >= 0")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        for name in ("fd_step_trans", "fd_step_rot", "step_size"):
            if not (getattr(self, name) > 0):
                raise ValidationError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "OptimConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown optimizer config fields: {sorted(unknown)}")
        return cls(**data)


def load_optim_config(path: str | Path) -> OptimConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"optimizer config is not valid JSON: {exc}") from exc
    return OptimConfig.from_dict(data)


@dataclass(frozen=True)
class LossBreakdown:
    """Loss components before outer weighting plus the weighted total."""

    contact: float
    smooth: float
    geo: float
    total: float
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    contact: float
    smooth: float
    geo: float
    total: float
    step: float


@dataclass(frozen=True)
class OptimResult:
    motion: MotionSequence
    history: tuple[IterationRecord, ...]
    stalled: bool

    @property
    def initial(self) -> IterationRecord:
        return self.history[0]

    @property
    def final(self) -> IterationRecord:
        return self.history[-1]


def write_history_csv(history: Sequence[IterationRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "contact", "smooth", "geo", "total", "step"])
        for rec in history:
            writer.writerow(
                [rec.iteration] + [repr(v) for v in (rec.contact, rec.smooth, rec.geo, rec.total, rec.step)]
            )


# ---------------------------------------------------------------------------
# Sensor-based initialization
# ---------------------------------------------------------------------------


def initialize_from_sensors(
    imu_poses: np.ndarray,
    r_wi: CalibrationMatrix,
    hip_centers: np.ndarray,
    shape: BodyShape,
    frame_rate: float,
) -> MotionSequence:
    """Initial motion from calibrated IMU orientations and LiDAR hip centers.

    Each frame's root orientation is the IMU root orientation pre-rotated into
    the world frame; non-root joint rotations are parent-relative and copy
    over unchanged. Translations come from the per-frame hip centers.
    """
    imu = np.asarray(imu_poses, dtype=np.float64)
    hips = np.asarray(hip_centers, dtype=np.float64)
    if imu.ndim != 3 or imu.shape[1:] != (NUM_JOINTS, 3):
        raise ValidationError("imu_poses must be (N, 24, 3)")
    if hips.shape != (imu.shape[0], 3):
        raise ValidationError(
            f"frame counts differ: {imu.shape[0]} IMU poses vs {hips.shape[0]} hip centers"
        )
    root_world = r_wi.rotation[None] @ axis_angle_to_matrix(imu[:, 0])
    poses = imu.copy()
    poses[:, 0] = matrix_to_axis_angle(root_world)
    return MotionSequence.from_arrays(hips, poses, shape, frame_rate)


# ---------------------------------------------------------------------------
# Capsule pair bookkeeping
# ---------------------------------------------------------------------------


def active_capsule_pairs(body: SkinnedBody) -> np.ndarray:
    """Child-joint index pairs checked for self-penetration, shape (P, 2).

    Excludes pairs of bones sharing a joint and pairs whose rest-pose
    clearance is below a small margin (anatomically adjacent regions that
    legitimately touch).
    """
    bones = list(range(1, NUM_JOINTS))
    parent = body.parent
    rest = body.rest_joints
    radii = body.capsule_radii
    pairs = []
    for ai in range(len(bones)):
        for bi in range(ai + 1, len(bones)):
            a, b = bones[ai], bones[bi]
            if {int(parent[a]), a} & {int(parent[b]), b}:
                continue
            d = float(
                segment_segment_distance(rest[parent[a]], rest[a], rest[parent[b]], rest[b])
            )
            if d < radii[a] + radii[b] + _REST_CLEARANCE_MARGIN:
                continue
            pairs.append((a, b))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def _self_overlap_sq(
    joints: np.ndarray, body: SkinnedBody, pairs: np.ndarray
) -> np.ndarray:
    """Sum of squared capsule overlaps per batch row; joints is (B, 24, 3)."""
    if pairs.shape[0] == 0:
        return np.zeros(joints.shape[0])
    a = pairs[:, 0]
    b = pairs[:, 1]
    d = segment_segment_distance(
        joints[:, body.parent[a]], joints[:, a], joints[:, body.parent[b]], joints[:, b]
    )  # (B, P)
    overlap = np.maximum(0.0, (body.capsule_radii[a] + body.capsule_radii[b]) - d)
    return np.sum(overlap**2, axis=-1)


def _scene_pen_sq(verts: np.ndarray, scene: TriangleMesh) -> np.ndarray:
    """Sum of squared penetration depths per batch row; verts is (B, V, 3)."""
    B, V, _ = verts.shape
    depths = penetration_depths(verts.reshape(B * V, 3), scene).reshape(B, V)
    return np.sum(depths**2, axis=-1)


def _chamfer_sq(cloud: np.ndarray, cloud_tree: cKDTree, pts: np.ndarray) -> float:
    """Same arithmetic as geometry.chamfer_distance, with a prebuilt cloud tree."""
    _, idx_pc = cloud_tree.query(pts, k=1)
    _, idx_cp = cKDTree(pts).query(cloud, k=1)
    d_pc = np.sum((pts - cloud[idx_pc]) ** 2, axis=1)
    d_cp = np.sum((cloud - pts[idx_cp]) ** 2, axis=1)
    return float(np.mean(d_pc) + np.mean(d_cp))


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------


def loss_contact(
    motion: MotionSequence,
    body: SkinnedBody,
    scene: TriangleMesh,
    config: OptimConfig,
    threads: int = 1,
) -> float:
    """Scene-penetration plus self-penetration energy, averaged over frames."""
    joints, glob, _ = fk_batch(body, motion.translations(), motion.poses(), motion.shape)
    scene_term = 0.0
    if config.w_scene > 0:
        verts = skin_batch(body, joints, glob)
        scene_term = float(np.mean(_scene_pen_sq(verts, scene)))
    self_term = 0.0
    if config.w_self > 0:
        pairs = active_capsule_pairs(body)
        self_term = float(np.mean(_self_overlap_sq(joints, body, pairs)))
    return config.w_scene * scene_term + config.w_self * self_term


def _smooth_components(
    translations: np.ndarray, joints: np.ndarray, local_rot: np.ndarray
) -> tuple[float, float, float, tuple[str, ...]]:
    """(trans, poses, joints) smoothness means and any N<3 restriction notes."""
    n = translations.shape[0]
    notes: tuple[str, ...] = ()
    trans_mean = 0.0
    joints_mean = 0.0
    poses_mean = 0.0
    if n >= 3:
        sd = translations[2:] - 2.0 * translations[1:-1] + translations[:-2]
        trans_mean = float(np.mean(np.sum(sd**2, axis=-1)))
        jd = joints[2:] - 2.0 * joints[1:-1] + joints[:-2]
        joints_mean = float(np.mean(np.sum(jd**2, axis=(-1, -2))))
    else:
        notes = ("smoothness restricted: second differences need N >= 3",)
    if n >= 2:
        ang = geodesic_angle(local_rot[:-1, 1:], local_rot[1:, 1:])  # (N-1, 23)
        poses_mean = float(np.mean(np.sum(ang**2, axis=-1)))
    elif not notes:
        notes = ("smoothness restricted: angular velocity needs N >= 2",)
    return trans_mean, poses_mean, joints_mean, notes


def loss_smooth(motion: MotionSequence, body: SkinnedBody, config: OptimConfig) -> float:
    """Trajectory, joint-rotation, and joint-position smoothness energy."""
    joints, _, local = fk_batch(body, motion.translations(), motion.poses(), motion.shape)
    trans_m, poses_m, joints_m, _ = _smooth_components(motion.translations(), joints, local)
    return config.w_trans * trans_m + config.w_poses * poses_m + config.w_joints * joints_m


def _frame_visible(verts: np.ndarray, origin: np.ndarray, gamma: float) -> np.ndarray | None:
    try:
        vis = hidden_point_removal(verts, origin, gamma)
    except ValidationError:
        return None
    if vis.size == 0:
        return None
    return vis


def loss_geo(
    motion: MotionSequence,
    body: SkinnedBody,
    clouds: Sequence[np.ndarray],
    lidar_origin: np.ndarray,
    gamma: float = 2.0,
    threads: int = 1,
) -> float:
    """Mean Chamfer distance between clouds and sensor-visible body vertices.

    Frames with an empty cloud or a degenerate visibility query are skipped
    (with a warning); the mean runs over the remaining frames.
    """
    if len(clouds) != len(motion):
        raise ValidationError(f"{len(clouds)} clouds for {len(motion)} frames")
    origin = np.asarray(lidar_origin, dtype=np.float64)
    joints, glob, _ = fk_batch(body, motion.translations(), motion.poses(), motion.shape)
    verts = skin_batch(body, joints, glob)

    def per_frame(i: int) -> float | None:
        cloud = np.asarray(clouds[i], dtype=np.float64)
        if cloud.size == 0:
            return None
        cloud = as_cloud(cloud)
        vis = _frame_visible(verts[i], origin, gamma)
        if vis is None:
            return None
        return _chamfer_sq(cloud, cKDTree(cloud), verts[i][vis])

    values = parallel_map(per_frame, list(range(len(motion))), threads)
    kept = [v for v in values if v is not None]
    skipped = len(values) - len(kept)
    if skipped:
        warnings.warn(f"geometry loss skipped {skipped} degenerate frame(s)", RuntimeWarning)
    if not kept:
        return 0.0
    return float(np.mean(kept))


def total_loss(
    motion: MotionSequence,
    body: SkinnedBody,
    scene: TriangleMesh,
    clouds: Sequence[np.ndarray],
    lidar_origin: np.ndarray,
    config: OptimConfig,
    threads: int = 1,
) -> LossBreakdown:
    """All loss groups plus the coefficient-weighted total."""
    contact = loss_contact(motion, body, scene, config, threads)
    joints, _, local = fk_batch(body, motion.translations(), motion.poses(), motion.shape)
    trans_m, poses_m, joints_m, notes = _smooth_components(motion.translations(), joints, local)
    smooth = config.w_trans * trans_m + config.w_poses * poses_m + config.w_joints * joints_m
    geo = loss_geo(motion, body, clouds, lidar_origin, config.hpr_gamma, threads)
    total = (
        config.lambda_contact * contact
        + config.lambda_smooth * smooth
        + config.lambda_geo * geo
    )
    return LossBreakdown(contact, smooth, geo, total, notes)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class _Caches:
    """Per-frame values at the current iterate, reused by the gradient."""

    __slots__ = (
        "joints", "glob", "local", "verts", "scene_sq", "self_sq",
        "visible", "chamfer", "n_valid", "near_scene",
    )

    def __init__(self):
        self.visible = None
        self.chamfer = None
        self.n_valid = 0
        self.near_scene = None


class _Objective:
    """Loss evaluation machinery shared by the exact and FD paths."""

    def __init__(self, body, scene, clouds, lidar_origin, config, shape, threads):
        self.body = body
        self.scene = scene
        self.config = config
        self.shape = shape
        self.threads = threads
        self.origin = np.asarray(lidar_origin, dtype=np.float64)
        self.pairs = active_capsule_pairs(body)
        self.need_geo = config.lambda_geo > 0
        self.need_scene = config.lambda_contact > 0 and config.w_scene > 0
        self.need_self = config.lambda_contact > 0 and config.w_self > 0
        if self.need_geo:
            self.clouds = [as_cloud(c) for c in clouds]
            self.trees = [cKDTree(c) for c in self.clouds]
        else:
            self.clouds = [np.asarray(c, dtype=np.float64) for c in clouds]
            self.trees = []
        # Upper bound on how far any vertex can move when a single parameter is
        # perturbed by one FD step: a translation moves everything by the step,
        # a joint rotation sweeps vertices along a lever arm bounded by the
        # body's reach from any joint. Used to prefilter scene-contact
        # candidates exactly (vertices clear of the scene by more than this
        # cannot start penetrating inside the FD stencil).
        reach = float(
            np.max(
                np.linalg.norm(
                    body.template_vertices[:, None, :] - body.rest_joints[None, :, :], axis=-1
                )
            )
        )
        reach *= max(1.0, float(np.max(body.bone_scales(shape))))
        self.fd_margin = 2.0 * (config.fd_step_trans + config.fd_step_rot * reach)

    def evaluate(self, trans: np.ndarray, poses: np.ndarray) -> tuple[LossBreakdown, _Caches]:
        """Exact loss (fresh visibility) plus caches for the gradient."""
        cfg = self.config
        n = trans.shape[0]
        caches = _Caches()
        joints, glob, local = fk_batch(self.body, trans, poses, self.shape)
        caches.joints, caches.glob, caches.local = joints, glob, local
        caches.verts = (
            skin_batch(self.body, joints, glob) if (self.need_scene or self.need_geo) else None
        )

        contact = 0.0
        caches.scene_sq = np.zeros(n)
        caches.self_sq = np.zeros(n)
        if self.need_scene:
            nv = self.body.vertex_count
            signed = signed_depths(caches.verts.reshape(n * nv, 3), self.scene).reshape(n, nv)
            caches.scene_sq = np.sum(np.maximum(signed, 0.0) ** 2, axis=1)
            caches.near_scene = [np.nonzero(signed[i] > -self.fd_margin)[0] for i in range(n)]
        if self.need_self:
            caches.self_sq = _self_overlap_sq(joints, self.body, self.pairs)
        if cfg.lambda_contact > 0:
            contact = cfg.w_scene * float(np.mean(caches.scene_sq)) + cfg.w_self * float(
                np.mean(caches.self_sq)
            )

        smooth = 0.0
        notes: tuple[str, ...] = ()
        if cfg.lambda_smooth > 0:
            trans_m, poses_m, joints_m, notes = _smooth_components(trans, joints, local)
            smooth = cfg.w_trans * trans_m + cfg.w_poses * poses_m + cfg.w_joints * joints_m

        geo = 0.0
        if self.need_geo:
            def per_frame(i: int):
                vis = _frame_visible(caches.verts[i], self.origin, cfg.hpr_gamma)
                if vis is None or self.clouds[i].size == 0:
                    return None, 0.0
                return vis, _chamfer_sq(self.clouds[i], self.trees[i], caches.verts[i][vis])

            results = parallel_map(per_frame, list(range(n)), self.threads)
            caches.visible = [r[0] for r in results]
            caches.chamfer = np.asarray([r[1] for r in results])
            valid = [i for i, r in enumerate(results) if r[0] is not None]
            caches.n_valid = len(valid)
            if caches.n_valid:
                geo = float(np.mean(caches.chamfer[valid]))

        total = cfg.lambda_contact * contact + cfg.lambda_smooth * smooth + cfg.lambda_geo * geo
        return LossBreakdown(contact, smooth, geo, total, notes), caches

    # -- gradient ----------------------------------------------------------

    def gradient(self, trans: np.ndarray, poses: np.ndarray, caches: _Caches) -> np.ndarray:
        """Central-difference gradient, (N, 75), frame-batched.

        Geometry terms reuse the visibility sets cached at the iterate; the
        FD steps are far too small to change which vertices a sensor sees, so
        this matches the exact finite difference almost everywhere while
        keeping the hull computation out of the inner loop.
        """
        cfg = self.config
        n = trans.shape[0]
        steps = np.concatenate([np.full(3, cfg.fd_step_trans), np.full(72, cfg.fd_step_rot)])
        grad = np.zeros((n, _PARAMS_PER_FRAME))

        for f in range(n):
            base = np.concatenate([trans[f], poses[f].reshape(-1)])
            batch = np.repeat(base[None, :], 2 * _PARAMS_PER_FRAME, axis=0)
            rows = np.arange(_PARAMS_PER_FRAME)
            batch[2 * rows, rows] += steps
            batch[2 * rows + 1, rows] -= steps

            tb = batch[:, :3]
            pb = batch[:, 3:].reshape(-1, NUM_JOINTS, 3)
            joints_b, glob_b, local_b = fk_batch(self.body, tb, pb, self.shape)
            delta = np.zeros(batch.shape[0])

            frame_has_geo = (
                self.need_geo and caches.n_valid > 0 and caches.visible[f] is not None
            )
            # Skin only the vertices the loss terms can see: the frame's
            # visible subset plus scene-contact candidates.
            vis = caches.visible[f] if frame_has_geo else np.empty(0, dtype=np.int64)
            near = caches.near_scene[f] if self.need_scene else np.empty(0, dtype=np.int64)
            subset = np.union1d(vis, near)
            verts_b = (
                skin_batch(self.body, joints_b, glob_b, subset) if subset.size else None
            )
            lookup = np.full(self.body.vertex_count, -1, dtype=np.int64)
            lookup[subset] = np.arange(subset.size)

            if cfg.lambda_contact > 0:
                dcontact = np.zeros(batch.shape[0])
                if self.need_scene and near.size:
                    near_b = verts_b[:, lookup[near]]
                    dcontact += cfg.w_scene * (
                        _scene_pen_sq(near_b, self.scene) - caches.scene_sq[f]
                    )
                if self.need_self:
                    dcontact += cfg.w_self * (
                        _self_overlap_sq(joints_b, self.body, self.pairs) - caches.self_sq[f]
                    )
                delta += cfg.lambda_contact * dcontact / n

            if frame_has_geo:
                cloud = self.clouds[f]
                vis_b = verts_b[:, lookup[vis]]
                cham = np.empty(batch.shape[0])
                for r in range(batch.shape[0]):
                    d2 = cdist(cloud, vis_b[r], "sqeuclidean")
                    cham[r] = np.mean(d2.min(axis=0)) + np.mean(d2.min(axis=1))
                delta += cfg.lambda_geo * (cham - caches.chamfer[f]) / caches.n_valid

            if cfg.lambda_smooth > 0:
                delta += cfg.lambda_smooth * self._smooth_delta(
                    f, trans, caches, tb, joints_b, local_b
                )

            diffs = (delta[0::2] - delta[1::2]) / (2.0 * steps)
            grad[f] = diffs
        return grad

    def _smooth_delta(self, f, trans, caches, tb, joints_b, local_b) -> np.ndarray:
        """Change in the smoothness term when frame f takes the batch values."""
        cfg = self.config
        n = trans.shape[0]
        B = tb.shape[0]
        delta = np.zeros(B)
        joints = caches.joints
        local = caches.local

        if n >= 3:
            centers = [c for c in (f - 1, f, f + 1) if 1 <= c <= n - 2]
            for c in centers:
                prev_t = tb if c - 1 == f else trans[c - 1]
                mid_t = tb if c == f else trans[c]
                next_t = tb if c + 1 == f else trans[c + 1]
                new = np.sum((next_t - 2.0 * mid_t + prev_t) ** 2, axis=-1)
                old = np.sum((trans[c + 1] - 2.0 * trans[c] + trans[c - 1]) ** 2)
                delta += cfg.w_trans * (new - old) / (n - 2)

                prev_j = joints_b if c - 1 == f else joints[c - 1]
                mid_j = joints_b if c == f else joints[c]
                next_j = joints_b if c + 1 == f else joints[c + 1]
                new_j = np.sum((next_j - 2.0 * mid_j + prev_j) ** 2, axis=(-1, -2))
                old_j = np.sum((joints[c + 1] - 2.0 * joints[c] + joints[c - 1]) ** 2)
                delta += cfg.w_joints * (new_j - old_j) / (n - 2)

        if n >= 2 and cfg.w_poses > 0:
            for p in (f - 1, f):
                if not (0 <= p <= n - 2):
                    continue
                ra = local_b[:, 1:] if p == f else np.broadcast_to(
                    local[p, 1:], (B,) + local[p, 1:].shape
                )
                rb = local_b[:, 1:] if p + 1 == f else np.broadcast_to(
                    local[p + 1, 1:], (B,) + local[p + 1, 1:].shape
                )
                new = np.sum(geodesic_angle(ra, rb) ** 2, axis=-1)
                old = np.sum(geodesic_angle(local[p, 1:], local[p + 1, 1:]) ** 2)
                delta += cfg.w_poses * (new - old) / (n - 1)
        return delta


def optimize(
    initial: MotionSequence,
    body: SkinnedBody,
    scene: TriangleMesh,
    clouds: Sequence[np.ndarray],
    lidar_origin: np.ndarray,
    config: OptimConfig,
    threads: int = 1,
) -> OptimResult:
    """Refine translations and poses by descent with backtracking line search.

    Shape coefficients stay fixed. Each iteration computes the FD gradient,
    then tries steps ``step_size * 2**-h`` for h = 0..8 until the exact total
    loss strictly decreases; if no step helps, the run stops with the stall
    flag set. Fully deterministic for a given configuration.
    """
    if config.lambda_geo > 0 and len(clouds) != len(initial):
        raise ValidationError(f"{len(clouds)} clouds for {len(initial)} frames")
    objective = _Objective(
        body, scene, clouds, lidar_origin, config, initial.shape, threads
    )
    trans = initial.translations().copy()
    poses = initial.poses().copy()

    breakdown, caches = objective.evaluate(trans, poses)
    if not np.isfinite(breakdown.total):
        raise NonFiniteLossError("objective is non-finite at the initial motion")
    history = [IterationRecord(0, breakdown.contact, breakdown.smooth, breakdown.geo, breakdown.total, 0.0)]

    stalled = False
    for it in range(1, config.max_iters + 1):
        grad = objective.gradient(trans, poses, caches)
        if not np.any(grad):
            stalled = True
            break
        accepted = False
        for halving in range(9):
            alpha = config.step_size * 0.5**halving
            cand_t = trans - alpha * grad[:, :3]
            cand_p = poses - alpha * grad[:, 3:].reshape(-1, NUM_JOINTS, 3)
            cand_bd, cand_caches = objective.evaluate(cand_t, cand_p)
            if np.isfinite(cand_bd.total) and cand_bd.total < breakdown.total:
                trans, poses = cand_t, cand_p
                breakdown, caches = cand_bd, cand_caches
                history.append(
                    IterationRecord(
                        it, breakdown.contact, breakdown.smooth, breakdown.geo,
                        breakdown.total, alpha,
                    )
                )
                accepted = True
                break
        if not accepted:
            stalled = True
            break

    motion = MotionSequence.from_arrays(trans, poses, initial.shape, initial.frame_rate)
    return OptimResult(motion, tuple(history), stalled)
