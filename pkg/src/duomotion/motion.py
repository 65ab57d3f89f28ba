"""Two-person motion representation.

World frame is y-up, meters; a person's feature block is
``[positions 3J | velocities 3J | 6D rotations 6J | contacts F]`` of width
``D_p = 12J + F``, and a frame of the pair is the two blocks concatenated
(person A then person B), so each frame is a single token of width 2*D_p.

Velocities are meters/frame with ``v[0] = v[1]`` replicated; 6D rotations
are the first two columns of each joint's rotation matrix; contacts are
binary heel-strike labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# heel-strike heuristics (meters/frame, meters)
CONTACT_SPEED_THRESHOLD = 0.01
CONTACT_HEIGHT_THRESHOLD = 0.05
UP_AXIS = 1  # y


class MotionError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonSpec:
    """Joint tree with rest-pose offsets (meters, local frame, facing +z)."""

    name: str
    parents: tuple            # parent index per joint; root = -1
    rest_offsets: np.ndarray  # (J, 3) offset from parent (root row = rest root position)
    foot_joints: tuple

    def __post_init__(self):
        parents = np.asarray(self.parents)
        j = len(parents)
        if parents[0] != -1:
            raise MotionError("joint 0 must be the root (parent -1)")
        for i in range(1, j):
            if not (0 <= parents[i] < i):
                raise MotionError(f"parents must form a tree in topological order (joint {i})")
        if any(not (0 <= f < j) for f in self.foot_joints):
            raise MotionError("foot joints out of range")
        lengths = np.linalg.norm(np.asarray(self.rest_offsets)[1:], axis=1)
        if (lengths <= 0).any():
            raise MotionError("bone lengths must be > 0")

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @property
    def foot_count(self) -> int:
        return len(self.foot_joints)

    @property
    def rest_lengths(self) -> np.ndarray:
        """Rest bone length per non-root joint, in joint order 1..J-1."""
        return np.linalg.norm(np.asarray(self.rest_offsets)[1:], axis=1)

    @property
    def person_width(self) -> int:
        return 12 * self.joint_count + self.foot_count

    @property
    def pair_width(self) -> int:
        return 2 * self.person_width

    @property
    def mean_bone_length(self) -> float:
        """One "bone unit", used to report skeleton-relative position errors."""
        return float(self.rest_lengths.mean())


def _toy_skeleton() -> SkeletonSpec:
    # root, spine, head, hipL, footL, hipR, footR
    offsets = np.array([
        [0.0, 0.90, 0.0],     # root rest position
        [0.0, 0.25, 0.0],     # spine
        [0.0, 0.25, 0.0],     # head
        [0.10, -0.05, 0.0],   # hipL
        [0.0, -0.83, 0.0],    # footL
        [-0.10, -0.05, 0.0],  # hipR
        [0.0, -0.83, 0.0],    # footR
    ])
    return SkeletonSpec("toy7", (-1, 0, 1, 0, 3, 0, 5), offsets, (4, 6))


def _full_skeleton() -> SkeletonSpec:
    names_parents_offsets = [
        (-1, (0.0, 0.95, 0.0)),    # 0 root
        (0, (0.10, -0.06, 0.0)),   # 1 hipL
        (0, (-0.10, -0.06, 0.0)),  # 2 hipR
        (0, (0.0, 0.12, 0.0)),     # 3 spine1
        (1, (0.0, -0.42, 0.0)),    # 4 kneeL
        (2, (0.0, -0.42, 0.0)),    # 5 kneeR
        (3, (0.0, 0.12, 0.0)),     # 6 spine2
        (4, (0.0, -0.42, 0.0)),    # 7 ankleL
        (5, (0.0, -0.42, 0.0)),    # 8 ankleR
        (6, (0.0, 0.12, 0.0)),     # 9 spine3
        (7, (0.0, -0.03, 0.12)),   # 10 footL
        (8, (0.0, -0.03, 0.12)),   # 11 footR
        (9, (0.0, 0.10, 0.0)),     # 12 neck
        (9, (0.08, 0.06, 0.0)),    # 13 collarL
        (9, (-0.08, 0.06, 0.0)),   # 14 collarR
        (12, (0.0, 0.12, 0.0)),    # 15 head
        (13, (0.10, 0.0, 0.0)),    # 16 shoulderL
        (14, (-0.10, 0.0, 0.0)),   # 17 shoulderR
        (16, (0.0, -0.26, 0.0)),   # 18 elbowL
        (17, (0.0, -0.26, 0.0)),   # 19 elbowR
        (18, (0.0, -0.25, 0.0)),   # 20 wristL
        (19, (0.0, -0.25, 0.0)),   # 21 wristR
    ]
    parents = tuple(p for p, _ in names_parents_offsets)
    offsets = np.array([o for _, o in names_parents_offsets])
    return SkeletonSpec("full22", parents, offsets, (7, 8, 10, 11))


_SKELETONS = {"toy7": _toy_skeleton(), "full22": _full_skeleton()}


def get_skeleton(name: str) -> SkeletonSpec:
    try:
        return _SKELETONS[name]
    except KeyError:
        raise MotionError(f"unknown skeleton '{name}' (have {sorted(_SKELETONS)})") from None


def skeleton_for_dims(joint_count: int, foot_count: int) -> SkeletonSpec:
    for sk in _SKELETONS.values():
        if sk.joint_count == joint_count and sk.foot_count == foot_count:
            return sk
    raise MotionError(f"no registered skeleton with J={joint_count}, F={foot_count}")


@dataclass
class FeatureLayout:
    """Channel slices of one person's feature block."""

    joint_count: int
    foot_count: int

    @property
    def width(self) -> int:
        return 12 * self.joint_count + self.foot_count

    @property
    def positions(self) -> slice:
        return slice(0, 3 * self.joint_count)

    @property
    def velocities(self) -> slice:
        return slice(3 * self.joint_count, 6 * self.joint_count)

    @property
    def rotations(self) -> slice:
        return slice(6 * self.joint_count, 12 * self.joint_count)

    @property
    def contacts(self) -> slice:
        return slice(12 * self.joint_count, 12 * self.joint_count + self.foot_count)


@dataclass
class InteractionSequence:
    """L frames of paired motion; one row per frame, both persons concatenated."""

    skeleton: SkeletonSpec
    features: np.ndarray  # (L, 2 * D_p) float32
    fps: float = 20.0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise MotionError(f"features must be 2-D, got {self.features.shape}")
        if self.features.shape[0] < 2:
            raise MotionError(f"sequence too short: L={self.features.shape[0]} < 2")
        if self.features.shape[1] != self.skeleton.pair_width:
            raise MotionError(
                f"feature width {self.features.shape[1]} != 2*D_p={self.skeleton.pair_width}")
        if not np.isfinite(self.features).all():
            raise MotionError("non-finite values in sequence")

    @property
    def length(self) -> int:
        return self.features.shape[0]

    @property
    def layout(self) -> FeatureLayout:
        return FeatureLayout(self.skeleton.joint_count, self.skeleton.foot_count)

    def person_block(self, person: int) -> np.ndarray:
        w = self.skeleton.person_width
        return self.features[:, person * w:(person + 1) * w]

    def positions(self, person: int) -> np.ndarray:
        """(L, J, 3) world-frame joint positions for one person."""
        block = self.person_block(person)
        return block[:, self.layout.positions].reshape(self.length, -1, 3)

    def contacts(self, person: int) -> np.ndarray:
        return self.person_block(person)[:, self.layout.contacts]


@dataclass
class CaptionedSample:
    sequence: InteractionSequence
    captions: list
    behavior_tag: str

    def __post_init__(self):
        if not self.captions or any(not c.strip() for c in self.captions):
            raise MotionError("at least one non-empty caption required")


# -- geometric feature operations --------------------------------------------


def compute_velocities(positions: np.ndarray) -> np.ndarray:
    """Per-frame deltas: v[t] = p[t] - p[t-1] (meters/frame), v[0] = v[1]."""
    positions = np.asarray(positions)
    if positions.shape[0] < 2:
        raise MotionError(f"need at least 2 frames, got {positions.shape[0]}")
    vel = np.empty_like(positions)
    vel[1:] = positions[1:] - positions[:-1]
    vel[0] = vel[1]
    return vel


def compute_bone_lengths(positions: np.ndarray, skeleton: SkeletonSpec) -> np.ndarray:
    """(L, J, 3) positions -> (L, J-1) lengths, one column per non-root joint."""
    positions = np.asarray(positions)
    if positions.shape[1] != skeleton.joint_count:
        raise MotionError(f"positions have {positions.shape[1]} joints, skeleton {skeleton.joint_count}")
    parents = np.asarray(skeleton.parents[1:])
    diff = positions[:, 1:, :] - positions[:, parents, :]
    return np.linalg.norm(diff, axis=2)


def detect_foot_contact(foot_positions: np.ndarray, foot_velocities: np.ndarray,
                        speed_threshold: float = CONTACT_SPEED_THRESHOLD,
                        height_threshold: float = CONTACT_HEIGHT_THRESHOLD) -> np.ndarray:
    """Label (L, F) contacts: 1 where the foot is slow AND near the ground."""
    if speed_threshold <= 0 or height_threshold <= 0:
        raise MotionError("contact thresholds must be > 0")
    speed = np.linalg.norm(foot_velocities, axis=-1)
    height = foot_positions[..., UP_AXIS]
    return ((speed < speed_threshold) & (height < height_threshold)).astype(np.float32)


def pack_person_features(positions: np.ndarray, rotations: np.ndarray,
                         skeleton: SkeletonSpec) -> np.ndarray:
    """Assemble one person's (L, D_p) float32 block from f64 kinematics.

    Positions are rounded to f32 first so the velocity channel is exactly
    the finite difference of the stored position channel.
    """
    length = positions.shape[0]
    pos32 = positions.astype(np.float32)
    vel32 = compute_velocities(pos32)
    rot6d = rotations[:, :, :, :2].transpose(0, 1, 3, 2).reshape(length, -1).astype(np.float32)
    feet = list(skeleton.foot_joints)
    contacts = detect_foot_contact(pos32[:, feet, :], vel32[:, feet, :])
    return np.concatenate([pos32.reshape(length, -1), vel32.reshape(length, -1),
                           rot6d, contacts], axis=1)


# -- normalization -------------------------------------------------------------


@dataclass
class NormalizationStats:
    """Per-channel z-score statistics over a training corpus."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise MotionError("stats must be matching 1-D arrays")
        if (self.std <= 0).any():
            raise MotionError("std must be > 0 (constant channels are stored as 1)")

    @classmethod
    def from_sequences(cls, sequences: list) -> "NormalizationStats":
        frames = np.concatenate([s.features.astype(np.float64) for s in sequences], axis=0)
        mean = frames.mean(axis=0)
        std = frames.std(axis=0)
        std[std < 1e-12] = 1.0
        return cls(mean, std)

    def normalize(self, features: np.ndarray) -> np.ndarray:
        if features.shape[-1] != self.mean.shape[0]:
            raise MotionError(f"width {features.shape[-1]} != stats width {self.mean.shape[0]}")
        return ((features - self.mean) / self.std).astype(features.dtype, copy=False)

    def denormalize(self, features: np.ndarray) -> np.ndarray:
        if features.shape[-1] != self.mean.shape[0]:
            raise MotionError(f"width {features.shape[-1]} != stats width {self.mean.shape[0]}")
        return (features * self.std + self.mean).astype(features.dtype, copy=False)
