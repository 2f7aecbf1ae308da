"""Parametric 24-joint skinned body model.

The skeleton follows the widely used 24-joint humanoid ordering (pelvis root):

    0 pelvis      6 spine2       12 neck          18 left_elbow
    1 left_hip    7 left_ankle   13 left_collar   19 right_elbow
    2 right_hip   8 right_ankle  14 right_collar  20 left_wrist
    3 spine1      9 spine3       15 head          21 right_wrist
    4 left_knee  10 left_foot    16 left_shoulder 22 left_hand
    5 right_knee 11 right_foot   17 right_shoulder 23 right_hand

Poses are per-joint axis-angle rotations (radians); joint 0 is the global
root orientation and ``PoseFrame.translation`` is the world root position in
meters. The 10-coefficient shape vector scales rest bone lengths linearly via
``SkinnedBody.shape_dirs``. Coordinates are z-up.

The template mesh is generated procedurally (rings of vertices around each
bone, nearest-bone blended skin weights); it deliberately does not reuse any
licensed body-model assets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import StructuralError, ValidationError
from .geometry import Capsule
from .rotations import axis_angle_to_matrix

NUM_JOINTS = 24
NUM_SHAPE = 10

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
)

# Parent of each joint; -1 marks the root.
PARENTS = np.array(
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21],
    dtype=np.int64,
)

BODY_FILE_VERSION = 1
MOTION_FILE_VERSION = 1


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


def _require_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class BodyShape:
    """10 dimensionless shape coefficients; all zeros selects the template body."""

    beta: np.ndarray

    def __post_init__(self):
        beta = _freeze(self.beta)
        if beta.shape != (NUM_SHAPE,):
            raise ValidationError(f"shape vector must have {NUM_SHAPE} entries, got {beta.shape}")
        _require_finite(beta, "shape vector")
        object.__setattr__(self, "beta", beta)

    @classmethod
    def zeros(cls) -> "BodyShape":
        return cls(np.zeros(NUM_SHAPE))


@dataclass(frozen=True)
class PoseFrame:
    """One motion frame: world root translation (m) and 24 axis-angle rotations (rad)."""

    translation: np.ndarray
    pose: np.ndarray

    def __post_init__(self):
        t = _freeze(self.translation)
        p = _freeze(self.pose)
        if t.shape != (3,):
            raise ValidationError(f"translation must be a 3-vector, got {t.shape}")
        if p.shape != (NUM_JOINTS, 3):
            raise ValidationError(f"pose must be ({NUM_JOINTS}, 3), got {p.shape}")
        _require_finite(t, "translation")
        _require_finite(p, "pose")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "pose", p)

    @classmethod
    def rest(cls, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "PoseFrame":
        return cls(np.asarray(translation, dtype=np.float64), np.zeros((NUM_JOINTS, 3)))


@dataclass(frozen=True)
class MotionSequence:
    """Ordered pose frames sharing one shape, sampled at ``frame_rate`` Hz."""

    frames: tuple[PoseFrame, ...]
    shape: BodyShape
    frame_rate: float

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 1:
            raise ValidationError("a motion needs at least one frame")
        if not (self.frame_rate > 0):
            raise ValidationError("frame_rate must be positive")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def translations(self) -> np.ndarray:
        """Stacked root translations, (N, 3)."""
        return np.stack([f.translation for f in self.frames])

    def poses(self) -> np.ndarray:
        """Stacked axis-angle poses, (N, 24, 3)."""
        return np.stack([f.pose for f in self.frames])

    def timestamps(self) -> np.ndarray:
        return np.arange(len(self.frames)) / self.frame_rate

    @classmethod
    def from_arrays(
        cls, translations: np.ndarray, poses: np.ndarray, shape: BodyShape, frame_rate: float
    ) -> "MotionSequence":
        translations = np.asarray(translations, dtype=np.float64)
        poses = np.asarray(poses, dtype=np.float64)
        if translations.ndim != 2 or translations.shape[1] != 3:
            raise ValidationError("translations must be (N, 3)")
        if poses.shape != (translations.shape[0], NUM_JOINTS, 3):
            raise ValidationError("poses must be (N, 24, 3) matching translations")
        frames = tuple(PoseFrame(t, p) for t, p in zip(translations, poses))
        return cls(frames, shape, frame_rate)


@dataclass(frozen=True)
class SkinnedBody:
    """Kinematic tree with a skinned template mesh and per-bone capsule proxies.

    Bone arrays (``shape_dirs``, ``capsule_radii``) are indexed by the bone's
    child joint; index 0 is unused. ``shape_dirs[j]`` gives the 10 linear
    coefficients mapping a shape vector to the length scale of the bone ending
    at joint j (scale = 1 + shape_dirs[j] . beta).
    """

    parent: np.ndarray
    rest_joints: np.ndarray
    template_vertices: np.ndarray
    skin_weights: np.ndarray
    shape_dirs: np.ndarray
    capsule_radii: np.ndarray
    # Derived, filled in __post_init__.
    _rest_offsets: np.ndarray = field(init=False, repr=False, compare=False)
    # Per-joint skinning groups (vertex rows, weights, rest-centered vertices);
    # rows with zero weight on a joint are skipped entirely.
    _skin_groups: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        parent = np.array(self.parent, dtype=np.int64, copy=True)
        parent.flags.writeable = False
        rest = _freeze(self.rest_joints)
        verts = _freeze(self.template_vertices)
        weights = _freeze(self.skin_weights)
        sdirs = _freeze(self.shape_dirs)
        radii = _freeze(self.capsule_radii)

        if parent.shape != (NUM_JOINTS,):
            raise StructuralError(f"parent must have {NUM_JOINTS} entries")
        if parent[0] != -1:
            raise StructuralError("joint 0 must be the root (parent -1)")
        for j in range(1, NUM_JOINTS):
            if not (0 <= parent[j] < NUM_JOINTS) or parent[j] == j:
                raise StructuralError(f"joint {j} has invalid parent {parent[j]}")
        for j in range(1, NUM_JOINTS):
            seen = set()
            k = j
            while k != 0:
                if k in seen:
                    raise StructuralError(f"cycle in kinematic tree at joint {j}")
                seen.add(k)
                k = int(parent[k])

        if rest.shape != (NUM_JOINTS, 3):
            raise ValidationError("rest_joints must be (24, 3)")
        _require_finite(rest, "rest_joints")
        offsets = np.zeros((NUM_JOINTS, 3))
        offsets[1:] = rest[1:] - rest[parent[1:]]
        lengths = np.linalg.norm(offsets[1:], axis=1)
        if np.any(lengths <= 0):
            raise ValidationError("all rest bone lengths must be positive")

        if verts.ndim != 2 or verts.shape[1] != 3 or verts.shape[0] < 1:
            raise ValidationError("template_vertices must be (V, 3) with V >= 1")
        _require_finite(verts, "template_vertices")

        if weights.shape != (verts.shape[0], NUM_JOINTS):
            raise ValidationError("skin_weights must be (V, 24)")
        if np.any(weights < 0):
            raise ValidationError("skin_weights must be non-negative")
        if np.any(np.abs(weights.sum(axis=1) - 1.0) > 1e-9):
            raise ValidationError("each skin_weights row must sum to 1 within 1e-9")

        if sdirs.shape != (NUM_JOINTS, NUM_SHAPE):
            raise ValidationError("shape_dirs must be (24, 10)")
        _require_finite(sdirs, "shape_dirs")
        if radii.shape != (NUM_JOINTS,):
            raise ValidationError("capsule_radii must have 24 entries")
        if np.any(radii[1:] <= 0):
            raise ValidationError("capsule radii must be positive for all bones")

        offsets.flags.writeable = False
        groups = []
        for j in range(NUM_JOINTS):
            rows = np.nonzero(weights[:, j])[0]
            groups.append((rows, weights[rows, j].copy(), verts[rows] - rest[j]))
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "rest_joints", rest)
        object.__setattr__(self, "template_vertices", verts)
        object.__setattr__(self, "skin_weights", weights)
        object.__setattr__(self, "shape_dirs", sdirs)
        object.__setattr__(self, "capsule_radii", radii)
        object.__setattr__(self, "_rest_offsets", offsets)
        object.__setattr__(self, "_skin_groups", tuple(groups))

    @property
    def vertex_count(self) -> int:
        return self.template_vertices.shape[0]

    def bone_scales(self, shape: BodyShape) -> np.ndarray:
        """Per-bone length scales for a shape vector, child-joint indexed (24,).

        Entry 0 is fixed at 1 (the root has no bone).
        """
        scales = 1.0 + self.shape_dirs @ shape.beta
        scales[0] = 1.0
        if np.any(scales <= 0):
            raise ValidationError("shape vector drives a bone length non-positive")
        return scales


# ---------------------------------------------------------------------------
# Kinematics
# ---------------------------------------------------------------------------


def fk_batch(
    body: SkinnedBody, translations: np.ndarray, poses: np.ndarray, shape: BodyShape
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward kinematics over a batch of frames.

    Args:
        translations: (B, 3) root positions.
        poses: (B, 24, 3) axis-angle rotations.

    Returns:
        (joints (B, 24, 3), global_rotations (B, 24, 3, 3),
         local_rotations (B, 24, 3, 3)).
    """
    translations = np.asarray(translations, dtype=np.float64)
    poses = np.asarray(poses, dtype=np.float64)
    B = translations.shape[0]
    scales = body.bone_scales(shape)
    local = axis_angle_to_matrix(poses)  # (B, 24, 3, 3)

    glob = np.empty((B, NUM_JOINTS, 3, 3))
    pos = np.empty((B, NUM_JOINTS, 3))
    glob[:, 0] = local[:, 0]
    pos[:, 0] = translations
    for j in range(1, NUM_JOINTS):
        p = body.parent[j]
        off = scales[j] * body._rest_offsets[j]
        glob[:, j] = glob[:, p] @ local[:, j]
        pos[:, j] = pos[:, p] + glob[:, p] @ off
    return pos, glob, local


def skin_batch(
    body: SkinnedBody,
    joints: np.ndarray,
    glob_rot: np.ndarray,
    vertex_indices: np.ndarray | None = None,
) -> np.ndarray:
    """Linear blend skinning for batched FK output; returns (B, V, 3).

    Each joint's rigid transform maps rest space to world:
    x -> G_j (x - rest_j) + p_j; vertices blend these with skin_weights rows.
    ``vertex_indices`` restricts the output to a subset of template vertices
    (returned in the given order).
    """
    B = joints.shape[0]
    if vertex_indices is None:
        out = np.zeros((B, body.vertex_count, 3))
        for j, (rows, w, centered) in enumerate(body._skin_groups):
            if rows.size == 0:
                continue
            moved = centered @ np.swapaxes(glob_rot[:, j], -1, -2)  # (B, nv, 3)
            out[:, rows] += w[None, :, None] * (moved + joints[:, None, j])
        return out

    sel = np.asarray(vertex_indices, dtype=np.int64)
    positions = np.full(body.vertex_count, -1, dtype=np.int64)
    positions[sel] = np.arange(sel.size)
    out = np.zeros((B, sel.size, 3))
    for j, (rows, w, centered) in enumerate(body._skin_groups):
        if rows.size == 0:
            continue
        pos = positions[rows]
        keep = pos >= 0
        if not np.any(keep):
            continue
        moved = centered[keep] @ np.swapaxes(glob_rot[:, j], -1, -2)
        out[:, pos[keep]] += w[keep][None, :, None] * (moved + joints[:, None, j])
    return out


def forward_kinematics(body: SkinnedBody, frame: PoseFrame, shape: BodyShape) -> np.ndarray:
    """World positions of the 24 joints for one frame, (24, 3) meters.

    Joint 0 equals ``frame.translation``; every child sits at its parent plus
    the composed chain rotation applied to the shape-scaled rest offset.
    """
    joints, _, _ = fk_batch(body, frame.translation[None], frame.pose[None], shape)
    return joints[0]


def skin_vertices(body: SkinnedBody, frame: PoseFrame, shape: BodyShape) -> np.ndarray:
    """Posed template vertices for one frame, (V, 3) meters."""
    joints, glob, _ = fk_batch(body, frame.translation[None], frame.pose[None], shape)
    return skin_batch(body, joints, glob)[0]


def capsule_proxies(body: SkinnedBody, frame: PoseFrame, shape: BodyShape) -> list[Capsule]:
    """One capsule per bone (23 total): posed parent/child joints as the axis."""
    joints = forward_kinematics(body, frame, shape)
    return [
        Capsule(joints[body.parent[j]], joints[j], float(body.capsule_radii[j]))
        for j in range(1, NUM_JOINTS)
    ]


# ---------------------------------------------------------------------------
# Procedural default body
# ---------------------------------------------------------------------------

_REST_JOINTS = np.array(
    [
        [0.00, 0.00, 0.00],    # pelvis
        [0.09, 0.00, -0.06],   # left_hip
        [-0.09, 0.00, -0.06],  # right_hip
        [0.00, -0.01, 0.11],   # spine1
        [0.10, 0.00, -0.50],   # left_knee
        [-0.10, 0.00, -0.50],  # right_knee
        [0.00, 0.00, 0.23],    # spine2
        [0.10, -0.02, -0.92],  # left_ankle
        [-0.10, -0.02, -0.92], # right_ankle
        [0.00, 0.01, 0.33],    # spine3
        [0.10, 0.12, -0.97],   # left_foot
        [-0.10, 0.12, -0.97],  # right_foot
        [0.00, 0.00, 0.51],    # neck
        [0.06, 0.00, 0.45],    # left_collar
        [-0.06, 0.00, 0.45],   # right_collar
        [0.00, 0.01, 0.63],    # head
        [0.18, 0.00, 0.47],    # left_shoulder
        [-0.18, 0.00, 0.47],   # right_shoulder
        [0.44, 0.00, 0.47],    # left_elbow
        [-0.44, 0.00, 0.47],   # right_elbow
        [0.68, 0.00, 0.47],    # left_wrist
        [-0.68, 0.00, 0.47],   # right_wrist
        [0.76, 0.00, 0.47],    # left_hand
        [-0.76, 0.00, 0.47],   # right_hand
    ]
)

_CAPSULE_RADII = np.array(
    [
        0.0,
        0.07, 0.07,       # hip bones
        0.10,             # spine1
        0.07, 0.07,       # thighs
        0.11,             # spine2
        0.05, 0.05,       # shins
        0.10,             # spine3
        0.04, 0.04,       # feet
        0.05,             # neck
        0.05, 0.05,       # collars
        0.09,             # head
        0.045, 0.045,     # shoulder links
        0.042, 0.042,     # upper arms
        0.035, 0.035,     # forearms
        0.03, 0.03,       # hands
    ]
)

_LEG_BONES = (1, 2, 4, 5, 7, 8, 10, 11)
_ARM_BONES = (13, 14, 16, 17, 18, 19, 20, 21, 22, 23)
_TORSO_BONES = (3, 6, 9, 12, 15)


def _default_shape_dirs() -> np.ndarray:
    """Non-negative coefficients so every beta component only lengthens bones."""
    dirs = np.zeros((NUM_JOINTS, NUM_SHAPE))
    dirs[1:, 0] = 0.05  # overall stature
    for b in _LEG_BONES:
        dirs[b, 1] = 0.08
    for b in _ARM_BONES:
        dirs[b, 2] = 0.08
    for b in _TORSO_BONES:
        dirs[b, 3] = 0.06
    dirs[12, 4] = 0.05
    dirs[15, 4] = 0.05
    for b in (22, 23):
        dirs[b, 5] = 0.10
    for b in (10, 11):
        dirs[b, 6] = 0.10
    for b in (16, 17):
        dirs[b, 7] = 0.08
    for b in (4, 5):
        dirs[b, 8] = 0.06
    for b in (7, 8):
        dirs[b, 9] = 0.06
    return dirs


def _segment_point_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point (V, 3) to segment a-b."""
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(points - closest, axis=1)


def build_default_body(vertex_budget: int = 600) -> SkinnedBody:
    """Procedural capsule-tessellated template body.

    Rings of vertices are placed around every bone at its capsule radius; ring
    counts are distributed by bone length to land near ``vertex_budget``
    vertices. Skin weights blend the three nearest bones (attached at each
    bone's proximal joint) with an inverse-distance falloff.
    """
    if vertex_budget < 200:
        raise ValidationError("vertex_budget must be at least 200")
    rest = _REST_JOINTS
    n_seg = 6
    bone_lengths = np.linalg.norm(rest[1:] - rest[PARENTS[1:]], axis=1)
    total_rings = max(NUM_JOINTS - 1, vertex_budget // n_seg)
    rings_per_bone = np.maximum(
        2, np.round(total_rings * bone_lengths / bone_lengths.sum()).astype(int)
    )

    verts = []
    for bone, j in enumerate(range(1, NUM_JOINTS)):
        a, b = rest[PARENTS[j]], rest[j]
        axis = b - a
        length = np.linalg.norm(axis)
        axis = axis / length
        # Any stable frame orthogonal to the bone axis.
        ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u = np.cross(axis, ref)
        u /= np.linalg.norm(u)
        v = np.cross(axis, u)
        r = _CAPSULE_RADII[j]
        n_rings = rings_per_bone[bone]
        for ri in range(n_rings):
            t = (ri + 0.5) / n_rings
            center = a + t * (b - a)
            for si in range(n_seg):
                ang = 2.0 * np.pi * (si + 0.5 * (ri % 2)) / n_seg
                verts.append(center + r * (np.cos(ang) * u + np.sin(ang) * v))
        # Cap vertex past leaf ends to round off extremities.
        if j in (10, 11, 15, 22, 23):
            verts.append(b + 0.8 * r * axis)
    template = np.asarray(verts)

    # Nearest-bone blended weights, attached to each bone's proximal joint.
    dists = np.stack(
        [
            _segment_point_distance(template, rest[PARENTS[j]], rest[j])
            for j in range(1, NUM_JOINTS)
        ],
        axis=1,
    )  # (V, 23)
    weights = np.zeros((template.shape[0], NUM_JOINTS))
    nearest = np.argsort(dists, axis=1)[:, :3]
    for col in range(3):
        bone = nearest[:, col]
        d = dists[np.arange(template.shape[0]), bone]
        w = 1.0 / (d + 1e-3) ** 4
        np.add.at(weights, (np.arange(template.shape[0]), PARENTS[bone + 1]), w)
    weights /= weights.sum(axis=1, keepdims=True)

    return SkinnedBody(
        parent=PARENTS,
        rest_joints=rest,
        template_vertices=template,
        skin_weights=weights,
        shape_dirs=_default_shape_dirs(),
        capsule_radii=_CAPSULE_RADII,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_body(body: SkinnedBody, path: str | Path) -> None:
    """Write a body definition as versioned JSON (schema in the README)."""
    doc = {
        "format": "skinned-body",
        "version": BODY_FILE_VERSION,
        "joint_names": list(JOINT_NAMES),
        "parent": body.parent.tolist(),
        "rest_joints": body.rest_joints.tolist(),
        "template_vertices": body.template_vertices.tolist(),
        "skin_weights": body.skin_weights.tolist(),
        "shape_dirs": body.shape_dirs.tolist(),
        "capsule_radii": body.capsule_radii.tolist(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_body(path: str | Path) -> SkinnedBody:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"body file is not valid JSON: {exc}") from exc
    if doc.get("format") != "skinned-body":
        raise ValidationError("not a body definition file")
    if doc.get("version") != BODY_FILE_VERSION:
        raise ValidationError(f"unsupported body file version {doc.get('version')}")
    return SkinnedBody(
        parent=np.asarray(doc["parent"], dtype=np.int64),
        rest_joints=np.asarray(doc["rest_joints"]),
        template_vertices=np.asarray(doc["template_vertices"]),
        skin_weights=np.asarray(doc["skin_weights"]),
        shape_dirs=np.asarray(doc["shape_dirs"]),
        capsule_radii=np.asarray(doc["capsule_radii"]),
    )


def save_motion(motion: MotionSequence, path: str | Path) -> None:
    """Write a motion as versioned JSON with explicit units (m, rad)."""
    doc = {
        "format": "motion",
        "version": MOTION_FILE_VERSION,
        "units": {"translation": "m", "rotation": "rad"},
        "frame_rate": motion.frame_rate,
        "shape": motion.shape.beta.tolist(),
        "frames": [
            {"translation": f.translation.tolist(), "pose": f.pose.tolist()}
            for f in motion.frames
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_motion(path: str | Path) -> MotionSequence:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"motion file is not valid JSON: {exc}") from exc
    if doc.get("format") != "motion":
        raise ValidationError("not a motion file")
    if doc.get("version") != MOTION_FILE_VERSION:
        raise ValidationError(f"unsupported motion file version {doc.get('version')}")
    shape = BodyShape(np.asarray(doc["shape"]))
    frames = tuple(
        PoseFrame(np.asarray(f["translation"]), np.asarray(f["pose"])) for f in doc["frames"]
    )
    return MotionSequence(frames, shape, float(doc["frame_rate"]))
