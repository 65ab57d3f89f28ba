"""Motion representation, synthetic corpus, and file round trips."""

import json
import os

import numpy as np
import pytest

from duomotion.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from duomotion.motion import (CaptionedSample, InteractionSequence, MotionError,
                              NormalizationStats, compute_bone_lengths,
                              compute_velocities, detect_foot_contact,
                              get_skeleton, skeleton_for_dims)
from duomotion.motion_io import (MotionFormatError, export_animation,
                                 read_manifest, read_motion, write_manifest,
                                 write_motion)
from duomotion.synth import (BEHAVIORS, CaptionParseError, parse_caption,
                             synth_generate, synth_sample)

TOY = get_skeleton("toy7")
FULL = get_skeleton("full22")


@pytest.fixture(scope="module")
def corpus():
    return synth_generate(seed=11, count=48, length=64, skeleton=TOY)


class TestVelocities:
    def test_constant_positions_give_zero(self):
        pos = np.ones((5, 3, 3))
        assert np.allclose(compute_velocities(pos), 0.0)

    def test_linear_motion_gives_constant_velocity(self):
        t = np.arange(6.0)
        pos = np.stack([np.stack([t, 0 * t, 0 * t], -1)], 1)
        vel = compute_velocities(pos)
        assert np.allclose(vel, [[[1.0, 0.0, 0.0]]] * 6)

    def test_random_walk_reconstructs_from_cumsum(self):
        rng = np.random.default_rng(0)
        steps = rng.standard_normal((20, 4, 3))
        pos = np.cumsum(steps, axis=0)
        vel = compute_velocities(pos)
        assert np.array_equal(vel[1:], pos[1:] - pos[:-1])
        assert np.array_equal(vel[0], vel[1])

    def test_too_short_rejected(self):
        with pytest.raises(MotionError, match="2 frames"):
            compute_velocities(np.zeros((1, 2, 3)))


class TestBoneLengths:
    def test_two_joints_one_meter(self):
        sk = get_skeleton("toy7")
        pos = np.zeros((3, sk.joint_count, 3))
        pos[:, 1, 1] = 1.0  # spine 1m above root
        lengths = compute_bone_lengths(pos, sk)
        assert np.allclose(lengths[:, 0], 1.0)

    def test_rigid_rotation_keeps_lengths(self):
        rng = np.random.default_rng(1)
        base = rng.standard_normal((TOY.joint_count, 3))
        frames = []
        for theta in np.linspace(0, 2 * np.pi, 10):
            c, s = np.cos(theta), np.sin(theta)
            rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
            frames.append(base @ rot.T)
        lengths = compute_bone_lengths(np.stack(frames), TOY)
        assert np.abs(lengths - lengths[0]).max() < 1e-6

    @pytest.mark.parametrize("skeleton", [TOY, FULL])
    def test_synthetic_samples_match_rest_lengths(self, skeleton):
        samples = synth_generate(seed=5, count=12, length=64, skeleton=skeleton)
        for sample in samples:
            for person in (0, 1):
                pos = sample.sequence.positions(person).astype(np.float64)
                lengths = compute_bone_lengths(pos, skeleton)
                assert np.abs(lengths - skeleton.rest_lengths).max() < 1e-6


class TestFootContact:
    def test_stationary_grounded_foot(self):
        pos = np.zeros((4, 1, 3))
        vel = np.zeros((4, 1, 3))
        assert (detect_foot_contact(pos, vel) == 1.0).all()

    def test_fast_foot_not_in_contact(self):
        pos = np.zeros((4, 1, 3))
        vel = np.zeros((4, 1, 3))
        vel[:, :, 0] = 1.0
        assert (detect_foot_contact(pos, vel) == 0.0).all()

    def test_bow_support_feet_mostly_planted(self):
        sample = synth_sample("bow-and-accept", np.random.default_rng(3), TOY, 64)
        for person in (0, 1):
            contacts = sample.sequence.contacts(person)
            assert contacts.mean() >= 0.9

    def test_bad_thresholds_rejected(self):
        with pytest.raises(MotionError):
            detect_foot_contact(np.zeros((2, 1, 3)), np.zeros((2, 1, 3)), speed_threshold=0.0)


class TestNormalization:
    def test_mean_input_maps_to_zero(self, corpus):
        stats = NormalizationStats.from_sequences([c.sequence for c in corpus])
        out = stats.normalize(np.tile(stats.mean, (4, 1)).astype(np.float64))
        assert np.abs(out).max() < 1e-9

    def test_round_trip_identity(self, corpus):
        stats = NormalizationStats.from_sequences([c.sequence for c in corpus])
        x = corpus[0].sequence.features
        back = stats.denormalize(stats.normalize(x))
        assert np.abs(back - x).max() < 1e-6

    def test_normalized_corpus_has_unit_moments(self, corpus):
        stats = NormalizationStats.from_sequences([c.sequence for c in corpus])
        frames = np.concatenate(
            [stats.normalize(c.sequence.features.astype(np.float64)) for c in corpus])
        raw = np.concatenate([c.sequence.features for c in corpus]).astype(np.float64)
        live = raw.std(axis=0) > 1e-12
        assert np.abs(frames.mean(axis=0)).max() < 1e-6
        assert np.abs(frames.std(axis=0)[live] - 1.0).max() < 1e-6
        assert np.abs(frames[:, ~live]).max() < 1e-9  # constant channels pin to 0

    def test_width_mismatch_rejected(self, corpus):
        stats = NormalizationStats.from_sequences([c.sequence for c in corpus])
        with pytest.raises(MotionError, match="width"):
            stats.normalize(np.zeros((3, 7)))


class TestSynthCorpus:
    def test_same_seed_bit_identical(self):
        a = synth_generate(seed=9, count=10, length=64, skeleton=TOY)
        b = synth_generate(seed=9, count=10, length=64, skeleton=TOY)
        for sa, sb in zip(a, b):
            assert (sa.sequence.features == sb.sequence.features).all()
            assert sa.captions == sb.captions and sa.behavior_tag == sb.behavior_tag

    def test_bow_dip_asymmetry(self):
        sample = synth_sample("bow-and-accept", np.random.default_rng(21), TOY, 64)
        root_a = sample.sequence.positions(0)[:, 0, 1]
        root_b = sample.sequence.positions(1)[:, 0, 1]
        assert (root_a[0] - root_a.min()) / root_a[0] >= 0.20
        assert (root_b.max() - root_b.min()) / root_b[0] < 0.02

    def test_approach_distance_strictly_decreases(self):
        sample = synth_sample("approach", np.random.default_rng(22), TOY, 64)
        d = np.linalg.norm(
            sample.sequence.positions(0)[:, 0] - sample.sequence.positions(1)[:, 0], axis=1)
        assert (np.diff(d) < 0).all()

    def test_velocity_channel_is_exact_position_difference(self, corpus):
        for sample in corpus[:8]:
            seq = sample.sequence
            for person in (0, 1):
                block = seq.person_block(person)
                vel = block[:, seq.layout.velocities].reshape(seq.length, -1, 3)
                assert np.array_equal(vel, compute_velocities(seq.positions(person)))

    def test_unknown_tag_rejected(self):
        with pytest.raises(MotionError, match="unknown behavior"):
            synth_sample("moonwalk", np.random.default_rng(0), TOY, 64)

    def test_all_behaviors_reachable(self, corpus):
        assert {c.behavior_tag for c in corpus} == set(BEHAVIORS)

    def test_parameterized_caption_matches_measurement(self, corpus):
        for sample in corpus:
            tag, d0, _ = parse_caption(sample.captions[1])
            assert tag == sample.behavior_tag
            roots = [sample.sequence.positions(p)[:, 0].astype(np.float64) for p in (0, 1)]
            measured = np.linalg.norm(roots[0][0] - roots[1][0])
            assert abs(measured - d0) < 1e-5

    def test_clean_caption_is_not_parseable(self, corpus):
        for sample in corpus:
            with pytest.raises(CaptionParseError):
                parse_caption(sample.captions[0])


class TestMotionIO:
    def test_round_trip_bit_identical(self, corpus, tmp_path):
        sample = corpus[0]
        path = str(tmp_path / "clip.imot")
        write_motion(path, sample)
        back = read_motion(path)
        assert (back.sequence.features == sample.sequence.features).all()
        assert back.captions == sample.captions
        assert back.behavior_tag == sample.behavior_tag
        assert back.sequence.fps == sample.sequence.fps

    def test_payload_size_full_scale_header(self, tmp_path):
        sample = synth_generate(seed=2, count=1, length=64, skeleton=FULL)[0]
        path = str(tmp_path / "full.imot")
        write_motion(path, sample)
        with open(path, "rb") as f:
            raw = f.read()
        hlen = int.from_bytes(raw[8:16], "little")
        header = json.loads(raw[16:16 + hlen])
        assert (header["J"], header["F"], header["width"]) == (22, 4, 536)
        assert len(raw) - 16 - hlen == 64 * 536 * 4

    def test_truncated_file_reports_offset(self, corpus, tmp_path):
        path = str(tmp_path / "trunc.imot")
        write_motion(path, corpus[0])
        with open(path, "rb") as f:
            raw = f.read()
        with open(path, "wb") as f:
            f.write(raw[:-1])
        with pytest.raises(MotionFormatError, match="byte"):
            read_motion(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = str(tmp_path / "bad.imot")
        with open(path, "wb") as f:
            f.write(b"NOTMAGIC" + b"\0" * 32)
        with pytest.raises(MotionFormatError, match="magic"):
            read_motion(path)

    def test_animation_export_lists_positions(self, corpus):
        doc = export_animation(corpus[0].sequence)
        assert doc["frames"] == 64
        assert len(doc["persons"]) == 2
        arr = np.asarray(doc["persons"][0]["joints"])
        assert arr.shape == (64, TOY.joint_count, 3)
        json.dumps(doc)  # must be serializable

    def test_manifest_round_trip(self, tmp_path):
        path = str(tmp_path / "manifest.jsonl")
        records = [{"path": f"m{i}.imot", "captions": ["x"], "behavior_tag": "mirror",
                    "split": "train" if i % 2 else "test"} for i in range(5)]
        write_manifest(path, records)
        assert read_manifest(path) == records


class TestCheckpointContainer:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {"a.w": rng.standard_normal((3, 4)).astype(np.float32),
                   "b": rng.standard_normal(7)}
        config = {"kind": "test", "nested": {"x": 1}}
        path = str(tmp_path / "ck.bin")
        save_checkpoint(path, config, tensors)
        config2, tensors2 = load_checkpoint(path)
        assert config2 == config
        assert (tensors2["a.w"] == tensors["a.w"]).all()
        assert tensors2["a.w"].dtype == np.float32
        assert (tensors2["b"] == tensors["b"]).all()
        assert tensors2["b"].dtype == np.float64

    def test_magic_and_truncation_errors(self, tmp_path):
        path = str(tmp_path / "ck.bin")
        save_checkpoint(path, {}, {"x": np.ones(4)})
        with open(path, "rb") as f:
            raw = f.read()
        with open(path, "wb") as f:
            f.write(raw[:-3])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)
        with open(path, "wb") as f:
            f.write(b"WRONGMAG" + raw[8:])
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)


class TestSkeletonSpecs:
    def test_dims(self):
        assert TOY.person_width == 12 * 7 + 2
        assert TOY.pair_width == 172
        assert FULL.pair_width == 536
        assert skeleton_for_dims(7, 2).name == "toy7"
        assert skeleton_for_dims(22, 4).name == "full22"

    def test_sequence_invariants_enforced(self):
        with pytest.raises(MotionError, match="too short"):
            InteractionSequence(TOY, np.zeros((1, TOY.pair_width)))
        with pytest.raises(MotionError, match="width"):
            InteractionSequence(TOY, np.zeros((4, 10)))
        bad = np.zeros((4, TOY.pair_width))
        bad[0, 0] = np.inf
        with pytest.raises(MotionError, match="finite"):
            InteractionSequence(TOY, bad)

    def test_captioned_sample_needs_captions(self, corpus):
        with pytest.raises(MotionError, match="caption"):
            CaptionedSample(corpus[0].sequence, [], "mirror")
