import numpy as np
import pytest

from rstv.core import SequenceManifest, crop_patch
from rstv.motioncomp import gradient_centroid
from rstv.synthdata import JitterConfig, SynthConfig, gen_sequence, jitter_boxes, write_sequence


def test_deterministic():
    a = gen_sequence(SynthConfig(frames=48, seed=4))
    b = gen_sequence(SynthConfig(frames=48, seed=4))
    assert a.frame_stack().tobytes() == b.frame_stack().tobytes()
    assert a.pose_array().tobytes() == b.pose_array().tobytes()


def test_seed_changes_frames():
    a = gen_sequence(SynthConfig(frames=48, seed=4))
    b = gen_sequence(SynthConfig(frames=48, seed=5))
    assert not np.array_equal(a.frame_stack(), b.frame_stack())


def test_static_skeleton():
    m = gen_sequence(SynthConfig(frames=48, amplitude=0.0, drift=(0.0, 0.0)))
    P = m.pose_array()
    assert np.all(P == P[0])


def test_drift_advances_boxes():
    m = gen_sequence(SynthConfig(frames=60, drift=(2.0, 0.0)))
    steps = np.diff(m.box_centers(), axis=0)
    np.testing.assert_array_equal(steps, np.tile([2.0, 0.0], (59, 1)))


def test_poses_root_relative_and_frames_in_range(small_seq):
    P = small_seq.pose_array()
    assert not P[:, 0].any()
    F = small_seq.frame_stack()
    assert F.min() >= 0.0 and F.max() <= 1.0
    assert F.shape == (60, 112, 160)


def test_centroid_near_box_center_drift_only():
    m = gen_sequence(SynthConfig(frames=60, drift=(2.0, 0.0), amplitude=0.0, seed=3))
    F = m.frame_stack()
    c = [gradient_centroid(crop_patch(F[i], m.boxes[i], 64, 64)) for i in range(len(m))]
    assert np.linalg.norm(c, axis=1).max() <= 3.0


def test_config_invariants():
    with pytest.raises(ValueError):
        SynthConfig(frames=40)
    with pytest.raises(ValueError):
        SynthConfig(period=0)
    with pytest.raises(ValueError):
        SynthConfig(noise_sigma=-1)
    with pytest.raises(ValueError):
        JitterConfig(-1, 0)


def test_zero_jitter(small_seq):
    jm, off = jitter_boxes(small_seq, JitterConfig(0, 0, seed=1))
    assert jm.boxes == small_seq.boxes and not off.any()


def test_jitter_reproducible_and_bounded(small_seq):
    a, oa = jitter_boxes(small_seq, JitterConfig(10, 10, seed=2))
    b, ob = jitter_boxes(small_seq, JitterConfig(10, 10, seed=2))
    np.testing.assert_array_equal(oa, ob)
    assert np.abs(oa).max() <= 10
    np.testing.assert_allclose(a.box_centers() - small_seq.box_centers(), oa)


def test_jitter_requires_boxes(small_seq):
    with pytest.raises(ValueError):
        jitter_boxes(SequenceManifest(small_seq.frames), JitterConfig())


def test_jitter_mean_monte_carlo():
    m = gen_sequence(SynthConfig(frames=50, seed=0))
    offs = np.concatenate([jitter_boxes(m, JitterConfig(10, 10, seed=s))[1] for s in range(200)])
    assert len(offs) == 10_000
    assert np.all(np.abs(offs.mean(axis=0)) <= 0.5)


def test_write_sequence(tmp_path, small_seq):
    path = write_sequence(small_seq, tmp_path)
    assert path.name == "manifest.json"
    assert len(list(tmp_path.glob("*.pgm"))) == 60
