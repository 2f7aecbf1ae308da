"""Ground-truth-known synthetic multi-sensor capture generator.

Builds a scripted motion (with a ballistic in-place jump marker for clock
alignment), then derives every sensor stream from it:

* LiDAR: per-frame clouds of the sensor-visible skinned vertices plus
  isotropic Gaussian noise, and a body-height series on the LiDAR clock,
* IMU: orientation streams at their own rate, optionally corrupted by a slow
  yaw drift and a constant clock offset,
* event camera: per-pixel occupancy changes of the projected body silhouette
  sampled at a fixed internal rate, polarity = sign of the change.

Everything is deterministic per seed (per-frame noise uses derived
sub-seeds). Generated motions are contact-free by construction and validated
against the contact loss before a bundle is returned.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .body import (
    BodyShape,
    MotionSequence,
    SkinnedBody,
    fk_batch,
    load_body,
    load_motion,
    save_body,
    save_motion,
    skin_batch,
)
from .errors import GenerationError, ValidationError
from .geometry import (
    TriangleMesh,
    ground_plane,
    hidden_point_removal,
    read_ply_cloud,
    read_ply_mesh,
    write_ply_cloud,
    write_ply_mesh,
)
from .optim import CalibrationMatrix, OptimConfig, loss_contact
from .rotations import axis_angle_to_matrix, matrix_to_axis_angle
from .sync import Event, SampledSeries, read_events_csv, read_series_csv, write_events_csv, write_series_csv

GRAVITY = 9.81
EVENT_INTERNAL_RATE = 200.0
STANDING_CLEARANCE = 0.015

MOTION_PROFILES = ("static", "walk-cycle", "arm-swing", "composite")

BUNDLE_FORMAT = "synth-bundle"
BUNDLE_VERSION = 1

# Joint indices used by the scripted profiles.
_L_HIP, _R_HIP = 1, 2
_L_KNEE, _R_KNEE = 4, 5
_L_SHOULDER, _R_SHOULDER = 16, 17
_L_ELBOW, _R_ELBOW = 18, 19


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic capture."""

    duration: float = 10.0
    frame_rate: float = 20.0
    jump_time: float = 2.0
    jump_height: float = 0.4
    motion_profile: str = "composite"
    lidar_origin: tuple[float, float, float] = (3.5, -3.0, 1.8)
    lidar_noise_sigma: float = 0.005
    imu_rate: float = 60.0
    imu_yaw_drift: float = 0.0
    imu_time_offset: float = 0.0
    event_focal: float = 220.0
    event_center: tuple[float, float] = (120.0, 90.0)
    event_width: int = 240
    event_height: int = 180
    event_contrast_step: float = 0.5
    walk_speed: float = 0.3
    scene_half_extent: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if not (self.duration > 0 and self.frame_rate > 0 and self.imu_rate > 0):
            raise ValidationError("duration and rates must be positive")
        if not (0.0 <= self.jump_time <= self.duration):
            raise ValidationError("jump_time must fall within the capture duration")
        if self.jump_height < 0 or self.lidar_noise_sigma < 0:
            raise ValidationError("jump_height and noise sigma must be non-negative")
        if self.motion_profile not in MOTION_PROFILES:
            raise ValidationError(
                f"motion_profile must be one of {MOTION_PROFILES}, got {self.motion_profile!r}"
            )
        if self.event_width < 1 or self.event_height < 1 or self.event_focal <= 0:
            raise ValidationError("event camera intrinsics are invalid")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lidar_origin"] = list(self.lidar_origin)
        d["event_center"] = list(self.event_center)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown synth spec fields: {sorted(unknown)}")
        data = dict(data)
        for key in ("lidar_origin", "event_center"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass(frozen=True)
class SynthBundle:
    """All sensor streams derived from one ground-truth motion."""

    spec: SynthSpec
    gt_motion: MotionSequence | None
    lidar_clouds: tuple[np.ndarray, ...]
    imu_timestamps: np.ndarray
    imu_poses: np.ndarray
    imu_height_series: SampledSeries
    lidar_height_series: SampledSeries
    events: tuple[Event, ...]
    scene: TriangleMesh
    r_wi: CalibrationMatrix


def make_benchmark_spec(seed: int = 0) -> SynthSpec:
    """The standard benchmark capture: 10 s at 20 Hz, composite motion."""
    return SynthSpec(seed=seed)


def make_benchmark_config(max_iters: int = 25) -> OptimConfig:
    """Optimizer configuration paired with the standard benchmark scene.

    Library defaults keep all weights at 1; this config rebalances the inner
    smoothness weights and the line-search scale so the descent is well
    conditioned on 200-frame captures.
    """
    return OptimConfig(max_iters=max_iters, step_size=24.0, w_joints=0.05, w_poses=0.2)


# ---------------------------------------------------------------------------
# Scripted motion profiles
# ---------------------------------------------------------------------------


def standing_height(body: SkinnedBody) -> float:
    """Pelvis height that leaves the template's lowest point just off z=0."""
    return -float(body.template_vertices[:, 2].min()) + STANDING_CLEARANCE


def _jump_offset(spec: SynthSpec, t: np.ndarray) -> np.ndarray:
    """Ballistic pelvis-height offset; apex = jump_height at jump_time."""
    if spec.motion_profile == "static" or spec.jump_height == 0:
        return np.zeros_like(t)
    half_air = np.sqrt(2.0 * spec.jump_height / GRAVITY)
    dt = t - spec.jump_time
    in_air = np.abs(dt) < half_air
    z = spec.jump_height - 0.5 * GRAVITY * dt**2
    return np.where(in_air, np.maximum(z, 0.0), 0.0)


def sample_profile(spec: SynthSpec, body: SkinnedBody, t: np.ndarray):
    """Ground-truth state at arbitrary times: (translations, poses)."""
    t = np.asarray(t, dtype=np.float64)
    m = t.size
    trans = np.zeros((m, 3))
    poses = np.zeros((m, 24, 3))
    trans[:, 2] = standing_height(body) + _jump_offset(spec, t)

    profile = spec.motion_profile
    if profile == "static":
        return trans, poses

    if profile in ("walk-cycle", "composite"):
        phase = 2.0 * np.pi * 1.0 * t
        swing = 0.25 * np.sin(phase)
        poses[:, _L_HIP, 0] = swing
        poses[:, _R_HIP, 0] = -swing
        # Knees flex on the back-swing only.
        poses[:, _L_KNEE, 0] = 0.25 * np.clip(-np.sin(phase), 0.0, None)
        poses[:, _R_KNEE, 0] = 0.25 * np.clip(np.sin(phase), 0.0, None)
        # Opposite arm swing, about the vertical axis (arms lie along x).
        poses[:, _L_SHOULDER, 2] = -0.18 * np.sin(phase)
        poses[:, _R_SHOULDER, 2] = -0.18 * np.sin(phase)

    if profile in ("arm-swing", "composite"):
        arm_phase = 2.0 * np.pi * 0.5 * t
        lift = 0.35 * np.sin(arm_phase)
        poses[:, _L_SHOULDER, 1] = lift
        poses[:, _R_SHOULDER, 1] = -lift
        poses[:, _L_ELBOW, 1] = 0.5 * lift
        poses[:, _R_ELBOW, 1] = -0.5 * lift

    if profile == "composite":
        trans[:, 1] = spec.walk_speed * (t - spec.duration / 2.0)

    return trans, poses


def _frame_times(spec: SynthSpec) -> np.ndarray:
    n = int(round(spec.duration * spec.frame_rate))
    return np.arange(n) / spec.frame_rate


def _calibration_from_seed(seed: int) -> CalibrationMatrix:
    rng = np.random.default_rng([seed, 0xCA11])
    yaw = rng.uniform(-np.pi, np.pi)
    pitch = rng.uniform(-0.05, 0.05)
    cz, sz = np.cos(yaw), np.sin(yaw)
    cy, sy = np.cos(pitch), np.sin(pitch)
    Rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    return CalibrationMatrix(Rz @ Ry)


def _yaw_matrices(angles: np.ndarray) -> np.ndarray:
    c = np.cos(angles)
    s = np.sin(angles)
    out = np.zeros(angles.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 2, 2] = 1.0
    return out


# ---------------------------------------------------------------------------
# Event camera simulation
# ---------------------------------------------------------------------------


def _camera_axes(eye: np.ndarray, target: np.ndarray) -> np.ndarray:
    forward = target - eye
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:  # looking straight up/down
        right = np.array([1.0, 0.0, 0.0])
        rn = 1.0
    right = right / rn
    down = np.cross(forward, right)
    # Rows: camera x (image right), y (image down), z (view direction).
    return np.stack([right, down, forward])


def _occupancy(spec: SynthSpec, verts: np.ndarray, cam: np.ndarray, eye: np.ndarray) -> np.ndarray:
    """Sorted linear pixel ids covered by projected vertices for one instant."""
    rel = (verts - eye) @ cam.T
    z = rel[:, 2]
    ok = z > 1e-6
    if not np.any(ok):
        return np.empty(0, dtype=np.int64)
    u = np.floor(spec.event_focal * rel[ok, 0] / z[ok] + spec.event_center[0]).astype(np.int64)
    v = np.floor(spec.event_focal * rel[ok, 1] / z[ok] + spec.event_center[1]).astype(np.int64)
    inside = (u >= 0) & (u < spec.event_width) & (v >= 0) & (v < spec.event_height)
    return np.unique(v[inside] * spec.event_width + u[inside])


def _generate_events(
    spec: SynthSpec, body: SkinnedBody, shape: BodyShape
) -> tuple[Event, ...]:
    n_steps = int(round(spec.duration * EVENT_INTERNAL_RATE))
    times = np.arange(n_steps + 1) / EVENT_INTERNAL_RATE
    trans, poses = sample_profile(spec, body, times)
    joints, glob, _ = fk_batch(body, trans, poses, shape)
    verts = skin_batch(body, joints, glob)

    eye = np.asarray(spec.lidar_origin, dtype=np.float64)
    target = np.array([0.0, 0.0, standing_height(body)])
    cam = _camera_axes(eye, target)

    events: list[Event] = []
    prev = _occupancy(spec, verts[0], cam, eye)
    # Binary occupancy changes have magnitude 1; the contrast step gates them.
    if spec.event_contrast_step > 1.0:
        return ()
    for k in range(1, n_steps + 1):
        cur = _occupancy(spec, verts[k], cam, eye)
        turned_on = np.setdiff1d(cur, prev, assume_unique=True)
        turned_off = np.setdiff1d(prev, cur, assume_unique=True)
        t = float(times[k])
        changes = np.concatenate(
            [np.stack([turned_on, np.ones_like(turned_on)], axis=1),
             np.stack([turned_off, -np.ones_like(turned_off)], axis=1)]
        )
        changes = changes[np.lexsort((changes[:, 1], changes[:, 0]))]
        for pid, pol in changes:
            events.append(
                Event(t, int(pid % spec.event_width), int(pid // spec.event_width), int(pol))
            )
        prev = cur
    return tuple(events)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def generate(
    spec: SynthSpec,
    body: SkinnedBody,
    with_clouds: bool = True,
    with_events: bool = True,
) -> SynthBundle:
    """Generate a full sensor bundle from a spec.

    ``with_clouds`` / ``with_events`` switch off the expensive streams when
    only the motion and height series are needed (e.g. clock-sync studies).
    """
    shape = BodyShape.zeros()
    frame_t = _frame_times(spec)
    if frame_t.size < 1:
        raise ValidationError("duration and frame_rate give an empty capture")
    trans, poses = sample_profile(spec, body, frame_t)
    gt = MotionSequence.from_arrays(trans, poses, shape, spec.frame_rate)
    scene = ground_plane(spec.scene_half_extent)

    contact = loss_contact(gt, body, scene, OptimConfig())
    if contact > 0:
        raise GenerationError(
            f"scripted motion interpenetrates the scene or itself (contact={contact:.3g})"
        )

    origin = np.asarray(spec.lidar_origin, dtype=np.float64)
    clouds: list[np.ndarray] = []
    if with_clouds:
        joints, glob, _ = fk_batch(body, trans, poses, shape)
        verts = skin_batch(body, joints, glob)
        for i in range(frame_t.size):
            vis = hidden_point_removal(verts[i], origin, 2.0)
            cloud = verts[i][vis]
            if spec.lidar_noise_sigma > 0:
                rng = np.random.default_rng([spec.seed, 1, i])
                cloud = cloud + rng.normal(0.0, spec.lidar_noise_sigma, cloud.shape)
            clouds.append(cloud)

    # Height series live on each sensor's own clock.
    lidar_height = SampledSeries(frame_t, trans[:, 2])

    n_imu = int(round(spec.duration * spec.imu_rate))
    imu_phys_t = np.arange(n_imu) / spec.imu_rate
    imu_trans, imu_poses_gt = sample_profile(spec, body, imu_phys_t)
    r_wi = _calibration_from_seed(spec.seed)
    drift = _yaw_matrices(spec.imu_yaw_drift * imu_phys_t)
    root_world = axis_angle_to_matrix(imu_poses_gt[:, 0])
    root_imu = np.swapaxes(r_wi.rotation, 0, 1)[None] @ drift @ root_world
    imu_poses = imu_poses_gt.copy()
    imu_poses[:, 0] = matrix_to_axis_angle(root_imu)
    imu_stamps = imu_phys_t + spec.imu_time_offset
    imu_height = SampledSeries(imu_stamps, imu_trans[:, 2])

    events: tuple[Event, ...] = ()
    if with_events:
        events = _generate_events(spec, body, shape)

    return SynthBundle(
        spec=spec,
        gt_motion=gt,
        lidar_clouds=tuple(clouds),
        imu_timestamps=imu_stamps,
        imu_poses=imu_poses,
        imu_height_series=imu_height,
        lidar_height_series=lidar_height,
        events=events,
        scene=scene,
        r_wi=r_wi,
    )


def perturb_motion(
    motion: MotionSequence, trans_sigma: float, pose_sigma: float, seed: int
) -> MotionSequence:
    """Add i.i.d. Gaussian noise to translations and axis-angle coordinates."""
    if trans_sigma < 0 or pose_sigma < 0:
        raise ValidationError("noise sigmas must be non-negative")
    rng = np.random.default_rng(seed)
    trans = motion.translations() + rng.normal(0.0, 1.0, (len(motion), 3)) * trans_sigma
    poses = motion.poses() + rng.normal(0.0, 1.0, (len(motion), 24, 3)) * pose_sigma
    return MotionSequence.from_arrays(trans, poses, motion.shape, motion.frame_rate)


# ---------------------------------------------------------------------------
# Bundle directory I/O
# ---------------------------------------------------------------------------


def write_bundle(bundle: SynthBundle, body: SkinnedBody, out_dir: str | Path) -> None:
    """Write a bundle as a directory of per-stream files plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "clouds").mkdir(exist_ok=True)

    save_body(body, out / "body.json")
    if bundle.gt_motion is not None:
        save_motion(bundle.gt_motion, out / "motion_gt.json")
    write_ply_mesh(bundle.scene, out / "scene.ply")
    for i, cloud in enumerate(bundle.lidar_clouds):
        write_ply_cloud(cloud, out / "clouds" / f"frame_{i:06d}.ply")
    write_events_csv(bundle.events, out / "events.csv")
    write_series_csv(bundle.imu_height_series, out / "imu_height.csv")
    write_series_csv(bundle.lidar_height_series, out / "lidar_height.csv")

    with open(out / "imu_poses.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t"] + [f"j{j}{ax}" for j in range(24) for ax in "xyz"]
        writer.writerow(header)
        for t, pose in zip(bundle.imu_timestamps, bundle.imu_poses):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in pose.reshape(-1)])

    manifest = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "spec": bundle.spec.to_dict(),
        "r_wi": bundle.r_wi.rotation.tolist(),
        "frame_count": len(bundle.lidar_clouds),
        "event_count": len(bundle.events),
        "has_ground_truth": bundle.gt_motion is not None,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def read_bundle(bundle_dir: str | Path) -> tuple[SynthBundle, SkinnedBody]:
    """Load a bundle directory; ground truth is optional."""
    root = Path(bundle_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError(f"{root}: no manifest.json; not a bundle directory")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"bundle manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != BUNDLE_FORMAT:
        raise ValidationError("manifest format marker mismatch")
    if manifest.get("version") != BUNDLE_VERSION:
        raise ValidationError(f"unsupported bundle version {manifest.get('version')}")

    spec = SynthSpec.from_dict(manifest["spec"])
    body = load_body(root / "body.json")
    gt = load_motion(root / "motion_gt.json") if (root / "motion_gt.json").exists() else None
    scene = read_ply_mesh(root / "scene.ply")
    clouds = []
    for i in range(int(manifest["frame_count"])):
        clouds.append(read_ply_cloud(root / "clouds" / f"frame_{i:06d}.ply"))
    events = tuple(read_events_csv(root / "events.csv"))
    imu_height = read_series_csv(root / "imu_height.csv")
    lidar_height = read_series_csv(root / "lidar_height.csv")

    with open(root / "imu_poses.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0] != "t" or len(header) != 73:
            raise ValidationError("imu_poses.csv must have a t column plus 72 pose columns")
        stamps, rows = [], []
        for r in reader:
            if not r:
                continue
            stamps.append(float(r[0]))
            rows.append([float(v) for v in r[1:]])
    imu_stamps = np.asarray(stamps)
    imu_poses = np.asarray(rows).reshape(-1, 24, 3)

    bundle = SynthBundle(
        spec=spec,
        gt_motion=gt,
        lidar_clouds=tuple(clouds),
        imu_timestamps=imu_stamps,
        imu_poses=imu_poses,
        imu_height_series=imu_height,
        lidar_height_series=lidar_height,
        events=events,
        scene=scene,
        r_wi=CalibrationMatrix(np.asarray(manifest["r_wi"])),
    )
    return bundle, body
