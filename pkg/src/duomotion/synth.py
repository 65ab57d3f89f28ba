"""Procedural two-person interaction corpus.

Each sample is built from a behavior template with role asymmetry (person
A acts, person B stands, mirrors or leads) and continuous parameters drawn
on a 0.001 grid. Captions come in two flavors per sample: a clean role
template ("one person bows to the other, who stands still.") and a
parameterized variant that states the grid values, which the procedural
evaluation extractor parses back out.

Kinematics are exact rigid forward kinematics: every joint sits at
parent + R * rest_offset, so bone lengths match the skeleton's rest
lengths to float precision. Planted feet are genuinely fixed in world
space (bows crouch by pivoting the legs about the feet, with the knees
bending via two-bone IK on the full skeleton).
"""

from __future__ import annotations

import re

import numpy as np

from .motion import (CaptionedSample, InteractionSequence, MotionError,
                     SkeletonSpec, pack_person_features)

BEHAVIORS = ("approach", "retreat", "circle-around", "mirror", "bow-and-accept", "follow")

_FLOAT_RE = re.compile(r"-?\d+\.\d\d\d")


class CaptionParseError(ValueError):
    pass


def _grid(rng: np.random.Generator, lo: float, hi: float) -> float:
    """Uniform draw snapped to the 0.001 caption grid."""
    return float(np.round(rng.uniform(lo, hi), 3))


def _rot_y(yaw: np.ndarray) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    zero, one = np.zeros_like(c), np.ones_like(c)
    return np.stack([np.stack([c, zero, s], -1),
                     np.stack([zero, one, zero], -1),
                     np.stack([-s, zero, c], -1)], -2)


def _rot_x(pitch: np.ndarray) -> np.ndarray:
    c, s = np.cos(pitch), np.sin(pitch)
    zero, one = np.zeros_like(c), np.ones_like(c)
    return np.stack([np.stack([one, zero, zero], -1),
                     np.stack([zero, c, -s], -1),
                     np.stack([zero, s, c], -1)], -2)


def _apply(rot: np.ndarray, vec) -> np.ndarray:
    """(L,3,3) @ (3,) -> (L,3)."""
    return rot @ np.asarray(vec, dtype=np.float64)


def _pose_toy(anchors: np.ndarray, yaws: np.ndarray, crouch: np.ndarray,
              pitch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Toy 7-joint rig. Feet stay at the anchor track; crouching pivots the
    legs about the planted feet so the root dips by exactly `crouch`."""
    length = anchors.shape[0]
    leg, hip_dy, hip_dx, foot_h = 0.83, -0.05, 0.10, 0.02
    ry = _rot_y(yaws)
    ryx = ry @ _rot_x(pitch)
    cos_t = np.clip(1.0 - crouch / leg, -1.0, 1.0)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    leg_up = np.stack([np.zeros(length), leg * cos_t, -leg * sin_t], -1)

    ground = np.stack([anchors[:, 0], np.full(length, foot_h), anchors[:, 1]], -1)
    foot_l = ground + _apply(ry, (hip_dx, 0.0, 0.0))
    foot_r = ground + _apply(ry, (-hip_dx, 0.0, 0.0))
    hip_l = foot_l + np.einsum("lij,lj->li", ry, leg_up)
    hip_r = foot_r + np.einsum("lij,lj->li", ry, leg_up)
    root = hip_l - _apply(ry, (hip_dx, hip_dy, 0.0))
    spine = root + _apply(ryx, (0.0, 0.25, 0.0))
    head = spine + _apply(ryx, (0.0, 0.25, 0.0))

    positions = np.stack([root, spine, head, hip_l, foot_l, hip_r, foot_r], axis=1)
    leg_rot = ry @ _rot_x(-np.arcsin(sin_t))
    rotations = np.stack([ry, ryx, ryx, leg_rot, leg_rot, leg_rot, leg_rot], axis=1)
    return positions, rotations


def _pose_full(anchors: np.ndarray, yaws: np.ndarray, crouch: np.ndarray,
               pitch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """22-joint rig: crouching keeps the ankles planted and bends the knees
    (two-bone IK in the sagittal plane); the upper body pitches about the root."""
    length = anchors.shape[0]
    hip_dx, hip_dy, thigh, shin = 0.10, -0.06, 0.42, 0.42
    ankle_h = 0.05
    ry = _rot_y(yaws)
    ryx = ry @ _rot_x(pitch)
    fwd = _apply(ry, (0.0, 0.0, 1.0))

    ground = np.stack([anchors[:, 0], np.zeros(length), anchors[:, 1]], -1)
    root = ground + np.array([0.0, 0.95, 0.0]) - np.stack(
        [np.zeros(length), crouch, np.zeros(length)], -1)
    hip_l = root + _apply(ry, (hip_dx, hip_dy, 0.0))
    hip_r = root + _apply(ry, (-hip_dx, hip_dy, 0.0))
    ankle_l = hip_l.copy()
    ankle_r = hip_r.copy()
    ankle_l[:, 1] = ankle_h
    ankle_r[:, 1] = ankle_h
    span = hip_l[:, 1] - ankle_h  # hip-to-ankle vertical distance
    bend = np.sqrt(np.maximum(0.0, thigh * thigh - (span / 2.0) ** 2))
    knee_l = (hip_l + ankle_l) / 2.0 + fwd * bend[:, None]
    knee_r = (hip_r + ankle_r) / 2.0 + fwd * bend[:, None]
    foot_l = ankle_l + _apply(ry, (0.0, -0.03, 0.12))
    foot_r = ankle_r + _apply(ry, (0.0, -0.03, 0.12))

    spine1 = root + _apply(ryx, (0.0, 0.12, 0.0))
    spine2 = spine1 + _apply(ryx, (0.0, 0.12, 0.0))
    spine3 = spine2 + _apply(ryx, (0.0, 0.12, 0.0))
    neck = spine3 + _apply(ryx, (0.0, 0.10, 0.0))
    head = neck + _apply(ryx, (0.0, 0.12, 0.0))
    collar_l = spine3 + _apply(ryx, (0.08, 0.06, 0.0))
    collar_r = spine3 + _apply(ryx, (-0.08, 0.06, 0.0))
    shoulder_l = collar_l + _apply(ryx, (0.10, 0.0, 0.0))
    shoulder_r = collar_r + _apply(ryx, (-0.10, 0.0, 0.0))
    elbow_l = shoulder_l + _apply(ryx, (0.0, -0.26, 0.0))
    elbow_r = shoulder_r + _apply(ryx, (0.0, -0.26, 0.0))
    wrist_l = elbow_l + _apply(ryx, (0.0, -0.25, 0.0))
    wrist_r = elbow_r + _apply(ryx, (0.0, -0.25, 0.0))

    positions = np.stack([root, hip_l, hip_r, spine1, knee_l, knee_r, spine2,
                          ankle_l, ankle_r, spine3, foot_l, foot_r, neck,
                          collar_l, collar_r, head, shoulder_l, shoulder_r,
                          elbow_l, elbow_r, wrist_l, wrist_r], axis=1)
    thigh_pitch = np.arctan2(bend, span / 2.0)
    thigh_rot = ry @ _rot_x(thigh_pitch)
    shin_rot = ry @ _rot_x(-thigh_pitch)
    rotations = np.stack([ry, ry, ry, ryx, thigh_rot, thigh_rot, ryx,
                          shin_rot, shin_rot, ryx, ry, ry, ryx,
                          ryx, ryx, ryx, ryx, ryx, ryx, ryx, ryx, ryx], axis=1)
    return positions, rotations


_RIGS = {"toy7": _pose_toy, "full22": _pose_full}


class _Track:
    """Per-person control curves driving the rig."""

    def __init__(self, length: int):
        self.anchors = np.zeros((length, 2))
        self.yaws = np.zeros(length)
        self.crouch = np.zeros(length)
        self.pitch = np.zeros(length)


def _bow_profile(length: int, depth: float) -> np.ndarray:
    """Dip curve hitting exactly `depth` at an integer apex frame."""
    t0, t1 = length // 8, length - length // 8
    apex = t0 + (t1 - t0) // 2
    out = np.zeros(length)
    t = np.arange(length)
    down = (t >= t0) & (t <= apex)
    up = (t > apex) & (t <= t1)
    out[down] = np.sin(0.5 * np.pi * (t[down] - t0) / (apex - t0)) ** 2
    out[up] = np.sin(0.5 * np.pi * (t1 - t[up]) / (t1 - apex)) ** 2
    return depth * out


def _mirror_period(length: int) -> int:
    for period in (32, 16, 8):
        if length % period == 0:
            return period
    return 8


def _build_tracks(tag: str, rng: np.random.Generator, length: int, fps: float):
    """Control curves, grid parameters and captions for one sample."""
    track_a, track_b = _Track(length), _Track(length)
    heading = rng.uniform(0.0, 2.0 * np.pi)
    center = rng.uniform(-0.5, 0.5, size=2)
    fwd = np.array([np.sin(heading), np.cos(heading)])  # ground-plane (x, z)
    lateral = np.array([np.cos(heading), -np.sin(heading)])
    t = np.arange(length)

    if tag == "approach":
        d0 = _grid(rng, 2.0, 3.5)
        # cap the speed so A never reaches B (distance stays strictly decreasing)
        max_speed = min(0.55, (d0 - 0.7) * fps / (length - 1) - 0.001)
        speed = _grid(rng, min(0.25, 0.5 * max_speed), max(0.05, max_speed))
        track_a.anchors = center - fwd * d0 / 2.0 + np.outer(t, fwd) * (speed / fps)
        track_b.anchors = center + fwd * d0 / 2.0 + np.zeros((length, 2))
        track_a.yaws[:] = heading
        track_b.yaws[:] = heading + np.pi
        captions = [
            "one person walks toward the other, who stands still.",
            f"one person approaches the other from {d0:.3f} meters away at "
            f"{speed:.3f} meters per second, who stands still.",
            "a person walks up to another person who does not move.",
        ]
    elif tag == "retreat":
        d0 = _grid(rng, 0.8, 1.8)
        speed = _grid(rng, 0.25, 0.55)
        track_a.anchors = center - fwd * d0 / 2.0 - np.outer(t, fwd) * (speed / fps)
        track_b.anchors = center + fwd * d0 / 2.0 + np.zeros((length, 2))
        track_a.yaws[:] = heading
        track_b.yaws[:] = heading + np.pi
        captions = [
            "one person backs away from the other, who stands still.",
            f"one person retreats from the other, starting {d0:.3f} meters away, "
            f"moving at {speed:.3f} meters per second.",
        ]
    elif tag == "circle-around":
        d0 = _grid(rng, 1.2, 2.2)
        omega = _grid(rng, 0.25, 0.6)
        hub = center + fwd * d0 / 2.0
        angle = heading + np.pi + omega * t / fps  # A starts on the far side of B
        radial = np.stack([np.sin(angle), np.cos(angle)], -1)
        track_a.anchors = hub + d0 * radial
        track_b.anchors = hub + np.zeros((length, 2))
        track_a.yaws = angle + np.pi  # face the hub
        track_b.yaws = angle          # track the orbiter
        captions = [
            "one person walks in a circle around the other, who stands still.",
            f"one person circles the other at a radius of {d0:.3f} meters, "
            f"sweeping {omega:.3f} radians per second.",
        ]
    elif tag == "mirror":
        d0 = _grid(rng, 1.5, 2.5)
        amp = _grid(rng, 0.12, 0.3)
        sway = amp * np.sin(2.0 * np.pi * t / _mirror_period(length))
        offset = np.outer(sway, lateral)
        track_a.anchors = center - fwd * d0 / 2.0 + offset
        track_b.anchors = center + fwd * d0 / 2.0 + offset  # same world direction = mirrored
        track_a.yaws[:] = heading
        track_b.yaws[:] = heading + np.pi
        captions = [
            "the two people sway side to side in mirror, facing each other.",
            f"facing each other {d0:.3f} meters apart, the two people sway "
            f"{amp:.3f} meters side to side in mirror.",
        ]
    elif tag == "bow-and-accept":
        d0 = _grid(rng, 1.2, 2.0)
        dip = _grid(rng, 0.2, 0.3)
        track_a.anchors = center - fwd * d0 / 2.0 + np.zeros((length, 2))
        track_b.anchors = center + fwd * d0 / 2.0 + np.zeros((length, 2))
        track_a.yaws[:] = heading
        track_b.yaws[:] = heading + np.pi
        track_a.crouch = _bow_profile(length, dip)
        track_a.pitch = 0.7 * track_a.crouch / dip
        captions = [
            "one person bows to the other, who stands still.",
            f"one person bows to the other, dipping {dip:.3f} meters, from "
            f"{d0:.3f} meters away, while the other stands still.",
        ]
    elif tag == "follow":
        d0 = _grid(rng, 0.9, 1.6)
        speed = _grid(rng, 0.3, 0.6)
        step = np.outer(t, fwd) * (speed / fps)
        track_a.anchors = center - fwd * d0 / 2.0 + step  # A walks behind B
        track_b.anchors = center + fwd * d0 / 2.0 + step
        track_a.yaws[:] = heading
        track_b.yaws[:] = heading
        captions = [
            "one person follows the other, walking behind them.",
            f"one person follows {d0:.3f} meters behind the other, both walking "
            f"at {speed:.3f} meters per second.",
        ]
    else:
        raise MotionError(f"unknown behavior tag '{tag}' (have {BEHAVIORS})")
    return track_a, track_b, captions


def synth_sample(tag: str, rng: np.random.Generator, skeleton: SkeletonSpec,
                 length: int, fps: float = 20.0) -> CaptionedSample:
    if length < 16:
        raise MotionError(f"synthetic samples need L >= 16, got {length}")
    pose = _RIGS.get(skeleton.name)
    if pose is None:
        raise MotionError(f"no procedural rig for skeleton '{skeleton.name}'")
    track_a, track_b, captions = _build_tracks(tag, rng, length, fps)
    blocks = []
    for track in (track_a, track_b):
        positions, rotations = pose(track.anchors, track.yaws, track.crouch, track.pitch)
        blocks.append(pack_person_features(positions, rotations, skeleton))
    seq = InteractionSequence(skeleton, np.concatenate(blocks, axis=1), fps=fps)
    return CaptionedSample(seq, captions, tag)


def synth_generate(seed: int, count: int, length: int, skeleton: SkeletonSpec,
                   fps: float = 20.0) -> list[CaptionedSample]:
    """Deterministic corpus: same seed -> bit-identical samples."""
    if count < 1:
        raise MotionError("count must be >= 1")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(count):
        tag = BEHAVIORS[int(rng.integers(len(BEHAVIORS)))]
        samples.append(synth_sample(tag, rng, skeleton, length, fps))
    return samples


def parse_caption(text: str) -> tuple[str, float, float]:
    """Recover (behavior_tag, start_distance, behavior_param) from a
    parameterized synthetic caption. Raises CaptionParseError for anything
    else (clean captions, free-form prompts)."""
    low = text.lower()
    nums = [float(x) for x in _FLOAT_RE.findall(low)]
    if "approaches" in low:
        tag = "approach"
    elif "retreats" in low:
        tag = "retreat"
    elif "circles" in low:
        tag = "circle-around"
    elif "sway" in low:
        tag = "mirror"
    elif "dipping" in low:
        tag = "bow-and-accept"
        nums = nums[::-1]  # caption states (dip, d0)
    elif "follows" in low:
        tag = "follow"
    else:
        raise CaptionParseError(f"caption matches no synthetic template: {text!r}")
    if len(nums) != 2:
        raise CaptionParseError(f"caption lacks the two template parameters: {text!r}")
    return tag, nums[0], nums[1]
