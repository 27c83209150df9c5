import numpy as np
import pytest

from motionkit import geom, synthetic
from motionkit import representation as rep
from motionkit.representation import MotionSequence


def static_motion(skeleton, frames=5, rng=None):
    n = skeleton.num_joints
    L = np.tile(np.eye(3), (frames, n, 1, 1))
    if rng is not None:
        L[:] = geom.random_rotations(n, rng)
    t = np.tile([0.3, 0.9, -1.2], (frames, 1))
    R = np.tile(geom.rot_y(0.7), (frames, 1, 1))
    return MotionSequence(30.0, t, R, L)


def test_feature_width(skeleton, small_skeleton):
    for sk in (skeleton, small_skeleton):
        m = static_motion(sk)
        assert rep.encode_features(m, sk).shape == (5, 2 + 6 + 12 * sk.num_joints)
        assert rep.feature_width(sk.num_joints) == 2 + 6 + 12 * sk.num_joints


def test_static_pose_has_no_motion(small_skeleton, rng):
    f = rep.encode_features(static_motion(small_skeleton, rng=rng), small_skeleton)
    sl = rep.feature_slices(small_skeleton.num_joints)
    np.testing.assert_allclose(f[:, sl["root_vel"]], 0, atol=1e-15)
    np.testing.assert_allclose(f[:, sl["root_ang"]], np.tile([1, 0, 0, 0, 1, 0], (5, 1)), atol=1e-15)
    np.testing.assert_allclose(f[:, sl["vel"]], 0, atol=1e-15)


def test_constant_x_velocity(small_skeleton):
    F, n = 6, small_skeleton.num_joints
    t = np.zeros((F, 3))
    t[:, 0] = np.arange(F)
    m = MotionSequence(30.0, t, np.tile(np.eye(3), (F, 1, 1)), np.tile(np.eye(3), (F, n, 1, 1)))
    f = rep.encode_features(m, small_skeleton)
    np.testing.assert_allclose(f[:, 0], 1.0, atol=1e-15)
    np.testing.assert_allclose(f[:, 1], 0.0, atol=1e-15)


def test_yaw_spin(small_skeleton):
    F, n, w = 8, small_skeleton.num_joints, 0.05
    R = geom.rot_y(w * np.arange(F))
    m = MotionSequence(30.0, np.zeros((F, 3)), R, np.tile(np.eye(3), (F, n, 1, 1)))
    f = rep.encode_features(m, small_skeleton)
    sl = rep.feature_slices(n)
    dH = geom.rot6d_decode(f[:, sl["root_ang"]])
    np.testing.assert_allclose(dH, np.broadcast_to(geom.rot_y(w), dH.shape), atol=1e-12)
    np.testing.assert_allclose(f[:, sl["pos"]], np.broadcast_to(f[0, sl["pos"]], (F, 3 * n)), atol=1e-12)


def test_roundtrip_random_clips(skeleton, rng):
    for _ in range(20):
        m = synthetic.random_motion(rng, int(rng.integers(2, 90)), skeleton)
        f = rep.encode_features(m, skeleton)
        back = rep.decode_features(f, skeleton, m.translation[0], m.root_orientation[0], m.fps)
        err = np.abs(back.joint_positions(skeleton) - m.joint_positions(skeleton)).max()
        assert err < 1e-9
        np.testing.assert_allclose(back.translation, m.translation, atol=1e-9)
        np.testing.assert_allclose(back.root_orientation @ back.local_rotations[:, 0],
                                   m.root_orientation @ m.local_rotations[:, 0], atol=1e-9)
        np.testing.assert_allclose(back.local_rotations[:, 1:], m.local_rotations[:, 1:], atol=1e-9)


def test_heading_invariance(skeleton, rng):
    m = synthetic.random_motion(rng, 60, skeleton)
    G = geom.rot_y(1.234)
    turned = MotionSequence(m.fps, m.translation @ G.T, G @ m.root_orientation, m.local_rotations)
    np.testing.assert_allclose(rep.encode_features(turned, skeleton), rep.encode_features(m, skeleton), atol=1e-9)


def test_decode_zero_features_is_static(small_skeleton):
    n = small_skeleton.num_joints
    f = np.zeros((4, rep.feature_width(n)))
    sl = rep.feature_slices(n)
    f[:, sl["root_ang"]] = [1, 0, 0, 0, 1, 0]
    f[:, sl["rot"]] = np.tile([1, 0, 0, 0, 1, 0], n)
    m = rep.decode_features(f, small_skeleton, (2.0, 0.0, 3.0))
    np.testing.assert_allclose(m.translation, np.tile([2.0, 0.0, 3.0], (4, 1)))
    np.testing.assert_allclose(m.local_rotations, np.tile(np.eye(3), (4, n, 1, 1)))
    np.testing.assert_allclose(m.root_orientation, np.tile(np.eye(3), (4, 1, 1)))


def test_decode_three_frame_walk_matches_cumsum(small_skeleton):
    n = small_skeleton.num_joints
    f = np.zeros((3, rep.feature_width(n)))
    sl = rep.feature_slices(n)
    f[:, sl["root_ang"]] = [1, 0, 0, 0, 1, 0]
    f[:, sl["rot"]] = np.tile([1, 0, 0, 0, 1, 0], n)
    f[:, 0:2] = [[9.9, 9.9], [0.5, 0.25], [0.25, -1.0]]  # row 0 is ignored by integration
    f[:, 8 + 1] = 0.9  # root height
    m = rep.decode_features(f, small_skeleton, (1.0, 0.0, 1.0))
    x = 1.0 + np.array([0.0, 0.5, 0.75])
    z = 1.0 + np.array([0.0, 0.25, -0.75])
    np.testing.assert_allclose(m.translation, np.stack([x, np.full(3, 0.9), z], axis=1), atol=1e-15)


def test_decode_reports_degenerate_block(small_skeleton):
    n = small_skeleton.num_joints
    f = np.zeros((3, rep.feature_width(n)))
    sl = rep.feature_slices(n)
    f[:, sl["root_ang"]] = [1, 0, 0, 0, 1, 0]
    f[:, sl["rot"]] = np.tile([1, 0, 0, 0, 1, 0], n)
    f[2, sl["rot"].start + 6 * 3: sl["rot"].start + 6 * 4] = 0.0
    with pytest.raises(geom.Degenerate6DError, match="frame 2, joint 3"):
        rep.decode_features(f, small_skeleton)


def test_too_short(small_skeleton):
    n = small_skeleton.num_joints
    with pytest.raises(rep.TooShortError):
        MotionSequence(30.0, np.zeros((1, 3)), np.eye(3)[None], np.tile(np.eye(3), (1, n, 1, 1)))


def test_resample_2_to_1(skeleton, rng):
    m = synthetic.random_motion(rng, 60, skeleton, fps=60.0)
    r = rep.resample_fps(m, 30.0)
    assert r.num_frames == 30 and r.fps == 30.0
    np.testing.assert_allclose(r.translation, m.translation[::2], atol=1e-12)
    np.testing.assert_allclose(r.local_rotations, m.local_rotations[::2], atol=1e-9)


def test_resample_same_rate_is_identity(skeleton, rng):
    m = synthetic.random_motion(rng, 20, skeleton)
    r = rep.resample_fps(m, 30.0)
    np.testing.assert_array_equal(r.translation, m.translation)
    np.testing.assert_array_equal(r.local_rotations, m.local_rotations)


def test_resample_keeps_linear_translation_linear(small_skeleton):
    F, n = 49, small_skeleton.num_joints
    t = np.outer(np.arange(F) / 24.0, [1.0, 0.1, -2.0])
    m = MotionSequence(24.0, t, np.tile(np.eye(3), (F, 1, 1)), np.tile(np.eye(3), (F, n, 1, 1)))
    r = rep.resample_fps(m, 30.0)
    times = np.arange(r.num_frames) / 30.0
    np.testing.assert_allclose(r.translation, np.outer(times, [1.0, 0.1, -2.0]), atol=1e-9)
    assert abs((r.num_frames - 1) / 30.0 - (F - 1) / 24.0) <= 1 / 30.0


def test_resample_slerps_shortest_arc(small_skeleton):
    n = small_skeleton.num_joints
    R = np.stack([geom.rot_y(0.0), geom.rot_y(0.6), geom.rot_y(1.2)])
    m = MotionSequence(10.0, np.zeros((3, 3)), R, np.tile(np.eye(3), (3, n, 1, 1)))
    r = rep.resample_fps(m, 20.0)
    np.testing.assert_allclose(geom.heading_angle(r.root_orientation), 0.3 * np.arange(5), atol=1e-12)


def test_resample_too_short(small_skeleton):
    n = small_skeleton.num_joints
    m = MotionSequence(30.0, np.zeros((2, 3)), np.tile(np.eye(3), (2, 1, 1)), np.tile(np.eye(3), (2, n, 1, 1)))
    with pytest.raises(rep.TooShortError):
        rep.resample_fps(m, 10.0)


def test_norm_stats_cases(rng):
    s = rep.fit_norm_stats(np.tile([1.0, 2.0], (5, 1)))
    np.testing.assert_array_equal(s.std, [rep.STD_FLOOR, rep.STD_FLOOR])
    np.testing.assert_array_equal(s.normalize(np.array([1.0, 2.0])), [0.0, 0.0])
    s = rep.fit_norm_stats(np.array([[-1.0, -1.0], [1.0, 1.0]]))
    np.testing.assert_array_equal(s.mean, [0, 0])
    np.testing.assert_array_equal(s.std, [1, 1])


def test_norm_stats_two_pass_oracle(rng):
    clips = [rng.normal(2.0, 3.0, size=(int(rng.integers(1, 40)), 7)) for _ in range(6)]
    rows = [r for c in clips for r in c]
    n = len(rows)
    mean = [sum(r[d] for r in rows) / n for d in range(7)]
    var = [sum((r[d] - mean[d]) ** 2 for r in rows) / n for d in range(7)]
    s = rep.fit_norm_stats(clips)
    np.testing.assert_allclose(s.mean, mean, atol=1e-9)
    np.testing.assert_allclose(s.std, np.sqrt(var), atol=1e-9)
    x = rng.normal(size=(10, 7))
    np.testing.assert_allclose(s.denormalize(s.normalize(x)), x, atol=1e-9)


def test_norm_stats_errors():
    with pytest.raises(rep.EmptyInputError):
        rep.fit_norm_stats([])
    s = rep.fit_norm_stats(np.ones((3, 4)))
    with pytest.raises(geom.ShapeError):
        s.normalize(np.ones(5))
