"""Motion file I/O.

IMOT container: 8-byte magic ``IMOT0001``, unsigned 64-bit little-endian
header length, UTF-8 JSON header ``{J, F, L, fps, width, captions,
behavior_tag, skeleton}``, then the float32 little-endian payload of
L*width feature values. Round trips are byte-exact.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .motion import CaptionedSample, InteractionSequence, SkeletonSpec, skeleton_for_dims

IMOT_MAGIC = b"IMOT0001"


class MotionFormatError(ValueError):
    pass


def write_motion(path: str, sample: CaptionedSample):
    seq = sample.sequence
    header = json.dumps({
        "J": seq.skeleton.joint_count,
        "F": seq.skeleton.foot_count,
        "L": seq.length,
        "fps": seq.fps,
        "width": seq.features.shape[1],
        "captions": list(sample.captions),
        "behavior_tag": sample.behavior_tag,
        "skeleton": seq.skeleton.name,
    }).encode("utf-8")
    payload = np.ascontiguousarray(seq.features, dtype="<f4").tobytes()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(IMOT_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(payload)
    os.replace(tmp, path)


def read_motion(path: str, skeleton: SkeletonSpec | None = None) -> CaptionedSample:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != IMOT_MAGIC:
        raise MotionFormatError(f"{path}: bad magic at byte 0 (expected {IMOT_MAGIC!r})")
    if len(raw) < 16:
        raise MotionFormatError(f"{path}: truncated at byte {len(raw)} (header length missing)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + hlen:
        raise MotionFormatError(f"{path}: truncated header at byte {len(raw)} (need {16 + hlen})")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MotionFormatError(f"{path}: corrupt JSON header: {e}") from e
    want = 16 + hlen + header["L"] * header["width"] * 4
    if len(raw) < want:
        raise MotionFormatError(f"{path}: truncated payload at byte {len(raw)} (need {want})")
    features = np.frombuffer(raw[16 + hlen:want], dtype="<f4").reshape(header["L"], header["width"])
    if skeleton is None:
        skeleton = skeleton_for_dims(header["J"], header["F"])
    seq = InteractionSequence(skeleton, features.astype(np.float32), fps=header["fps"])
    return CaptionedSample(seq, list(header["captions"]), header.get("behavior_tag", ""))


def export_animation(seq: InteractionSequence) -> dict:
    """Viewer-friendly JSON document: per-person, per-frame joint positions."""
    return {
        "fps": seq.fps,
        "frames": seq.length,
        "skeleton": seq.skeleton.name,
        "joint_parents": [int(p) for p in seq.skeleton.parents],
        "persons": [
            {"joints": np.round(seq.positions(person), 6).tolist()}
            for person in (0, 1)
        ],
    }


# -- dataset manifests (JSON lines, one record per sample) ---------------------


def write_manifest(path: str, records: list[dict]):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
    os.replace(tmp, path)


def read_manifest(path: str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def load_split(manifest_path: str, split: str,
               skeleton: SkeletonSpec | None = None) -> list[CaptionedSample]:
    """Read every IMOT file of one split; paths are manifest-relative."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    for rec in read_manifest(manifest_path):
        if rec["split"] != split:
            continue
        out.append(read_motion(os.path.join(base, rec["path"]), skeleton=skeleton))
    return out
