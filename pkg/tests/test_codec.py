"""Pose codec: target encoding, keypoint NMS, peak decoding, text format."""

import numpy as np
import pytest

from ivt.codec import (Pose3D, center_mask, decode_poses, encode_targets,
                       keypoint_nms, poses_from_lines, poses_to_lines)
from ivt.tensor import ConfigError, ContractError

RNG = np.random.default_rng


def random_scene(rng, persons, joints=4, h=16, w=16):
    """Pixel-centered, non-colliding random poses."""
    cells = rng.choice(h * w, size=persons, replace=False)
    poses = []
    for c in cells:
        cy, cx = divmod(int(c), w)
        j = np.empty((joints, 3))
        j[:, 0] = cx + rng.integers(-2, 3, size=joints)
        j[:, 1] = cy + rng.integers(-2, 3, size=joints)
        j[:, 2] = rng.uniform(1, 5, size=joints)
        j[0] = (cx, cy, rng.uniform(1, 5))  # root defines the center pixel
        poses.append(Pose3D(j))
    return poses


# -- encoding -----------------------------------------------------------------------


def test_centered_person_has_unit_peak():
    pose = Pose3D(np.array([[5.0, 6.0, 2.0], [6.0, 7.0, 2.5]]))
    hm, _, _ = encode_targets([pose], 12, 12)
    assert hm[6, 5] == 1.0
    assert hm.max() == 1.0


def test_zero_persons_give_zero_targets():
    hm, off3d, off2d = encode_targets([], 8, 8)
    assert hm.shape == (8, 8) and not hm.any()
    assert off3d.shape == (0, 8, 8) and off2d.shape == (0, 8, 8)


def test_two_person_heatmap_is_max_of_gaussians():
    sigma = 2.0
    p1 = Pose3D(np.array([[3.0, 3.0, 1.0]]))
    p2 = Pose3D(np.array([[9.0, 5.0, 1.0]]))
    hm, _, _ = encode_targets([p1, p2], 12, 12, sigma)
    want = np.zeros((12, 12))
    for y in range(12):
        for x in range(12):
            for cx, cy in ((3.0, 3.0), (9.0, 5.0)):
                g = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sigma * sigma))
                want[y, x] = max(want[y, x], g)
    np.testing.assert_allclose(hm, want, atol=1e-15)


def test_offsets_written_only_at_center_pixels():
    rng = RNG(0)
    poses = random_scene(rng, 3)
    _, off3d, off2d = encode_targets(poses, 16, 16)
    mask = center_mask(poses, 16, 16)
    assert not off3d[:, ~mask].any()
    assert not off2d[:, ~mask].any()
    for pose in poses:
        px, py = int(round(pose.root[0])), int(round(pose.root[1]))
        for j in range(pose.joints.shape[0]):
            assert off3d[3 * j, py, px] == pose.joints[j, 0] - px
            assert off3d[3 * j + 1, py, px] == pose.joints[j, 1] - py
            assert off3d[3 * j + 2, py, px] == pose.joints[j, 2]


def test_center_outside_map_rejected():
    pose = Pose3D(np.array([[20.0, 2.0, 1.0]]))
    with pytest.raises(ContractError):
        encode_targets([pose], 8, 8)


def test_nonpositive_sigma_rejected():
    with pytest.raises(ConfigError):
        encode_targets([], 8, 8, sigma=0.0)


# -- NMS -----------------------------------------------------------------------------


def test_nms_strictly_monotone_map_keeps_only_global_max():
    hm = np.arange(36, dtype=float).reshape(6, 6) + 1.0
    out = keypoint_nms(hm)
    keep = np.flatnonzero(out.reshape(-1))
    np.testing.assert_array_equal(keep, [35])


def test_nms_constant_map_keeps_everything():
    hm = np.full((5, 5), 0.7)
    np.testing.assert_array_equal(keypoint_nms(hm), hm)


def test_nms_matches_brute_force_scan():
    rng = RNG(1)
    hm = rng.uniform(0, 1, size=(8, 8))
    got = keypoint_nms(hm)
    want = np.zeros((8, 8))
    for y in range(8):
        for x in range(8):
            best = max(hm[yy, xx]
                       for yy in range(max(0, y - 1), min(8, y + 2))
                       for xx in range(max(0, x - 1), min(8, x + 2)))
            want[y, x] = hm[y, x] if hm[y, x] >= best else 0.0
    np.testing.assert_array_equal(got, want)


def test_nms_idempotent_bitwise():
    rng = RNG(2)
    hm = rng.uniform(0, 1, size=(10, 10))
    once = keypoint_nms(hm)
    np.testing.assert_array_equal(keypoint_nms(once), once)


def test_nms_rejects_even_window():
    with pytest.raises(ConfigError):
        keypoint_nms(np.zeros((4, 4)), window=2)


# -- decoding ------------------------------------------------------------------------


def test_round_trip_recovers_exact_joints():
    rng = RNG(3)
    poses = random_scene(rng, 2)
    hm, off3d, _ = encode_targets(poses, 16, 16)
    decoded = decode_poses(hm, off3d, threshold=0.9, max_people=5)
    assert len(decoded) == 2
    got = sorted(decoded, key=lambda p: tuple(p.root[:2]))
    want = sorted(poses, key=lambda p: tuple(p.root[:2]))
    for g, w in zip(got, want):
        np.testing.assert_allclose(g.joints, w.joints, atol=1e-9)


def test_threshold_above_all_peaks_gives_empty_list():
    rng = RNG(4)
    poses = random_scene(rng, 2)
    hm, off3d, _ = encode_targets(poses, 16, 16)
    assert decode_poses(hm, off3d, threshold=1.0 + 1e-9) == []


def test_threshold_monotonicity():
    rng = RNG(5)
    poses = random_scene(rng, 4)
    hm, off3d, _ = encode_targets(poses, 16, 16)
    counts = [len(decode_poses(hm, off3d, threshold=t))
              for t in (0.05, 0.3, 0.6, 0.9, 1.01)]
    assert counts == sorted(counts, reverse=True)


def test_decoded_count_respects_max_people():
    rng = RNG(6)
    poses = random_scene(rng, 5)
    hm, off3d, _ = encode_targets(poses, 16, 16)
    assert len(decode_poses(hm, off3d, threshold=0.5, max_people=3)) == 3


def test_decode_orders_by_confidence():
    hm = np.zeros((9, 9))
    hm[2, 2], hm[6, 6] = 0.7, 0.9
    off3d = np.zeros((3, 9, 9))
    decoded = decode_poses(hm, off3d, threshold=0.5)
    assert decoded[0].score == 0.9 and decoded[1].score == 0.7


def test_decode_round_trip_many_scenes():
    for seed in range(20):
        rng = RNG(100 + seed)
        persons = int(rng.integers(1, 5))
        poses = random_scene(rng, persons)
        hm, off3d, _ = encode_targets(poses, 16, 16)
        decoded = decode_poses(hm, off3d, threshold=0.9, max_people=8)
        assert len(decoded) == persons
        got = sorted(decoded, key=lambda p: tuple(p.root[:2]))
        want = sorted(poses, key=lambda p: tuple(p.root[:2]))
        err = np.mean([np.linalg.norm(g.joints - w.joints, axis=1).mean()
                       for g, w in zip(got, want)])
        assert err <= 1e-9


def test_decode_rejects_bad_arguments():
    hm = np.zeros((4, 4))
    off = np.zeros((3, 4, 4))
    with pytest.raises(ContractError):
        decode_poses(hm, off, threshold=0.0)
    with pytest.raises(ContractError):
        decode_poses(hm, off, max_people=0)


# -- text format ---------------------------------------------------------------------


def test_pose_lines_round_trip_exact():
    rng = RNG(7)
    poses = [Pose3D(rng.uniform(-10, 10, size=(4, 3)), score=0.625),
             Pose3D(rng.uniform(-10, 10, size=(4, 3)), score=1.0 / 3.0)]
    lines = poses_to_lines(2, poses)
    back = poses_from_lines(lines)
    assert list(back) == [2]
    for orig, rec in zip(poses, back[2]):
        np.testing.assert_array_equal(rec.joints, orig.joints)
        assert rec.score == orig.score


def test_malformed_pose_line_rejected():
    with pytest.raises(ContractError):
        poses_from_lines(["0 0 1.0 1.0 2.0"])  # coordinate count not multiple of 3
