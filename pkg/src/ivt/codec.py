"""Heatmap + offset encoding and decoding of multi-person 3D poses.

Targets follow the center-offset convention: the root joint's (x, y)
pixel carries a Gaussian peak in the center heatmap and the exact
per-joint offsets in the offset maps; all other pixels hold zeros.
Decoding reads offsets at surviving heatmap peaks after keypoint NMS.
x, y are in feature-cell units; z is absolute depth against a zero-depth
datum, stored directly in the offset channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ConfigError, ContractError

ROOT_JOINT = 0


@dataclass
class Pose3D:
    """One person: (J, 3) joint coordinates plus a detection score."""
    joints: np.ndarray
    score: float = 1.0

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.ndim != 2 or self.joints.shape[1] != 3:
            raise ContractError(f"Pose3D: joints must be (J, 3), got {self.joints.shape}")

    @property
    def root(self) -> np.ndarray:
        return self.joints[ROOT_JOINT]


def encode_targets(poses: list[Pose3D], h: int, w: int, sigma: float = 2.0
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ground-truth (heatmap, 3D offsets, 2D offsets) for one frame.

    Heatmap is the pixel-wise max of per-person Gaussians centered on the
    root joint. Offsets are written only at each person's center pixel
    (the pixel nearest the root); collisions go to the nearest center.
    """
    if sigma <= 0:
        raise ConfigError(f"encode_targets: sigma must be positive, got {sigma}")
    if not poses:
        joints = 0
    else:
        joints = poses[0].joints.shape[0]
    hm = np.zeros((h, w))
    off3d = np.zeros((3 * joints, h, w))
    off2d = np.zeros((2 * joints, h, w))
    ys, xs = np.mgrid[0:h, 0:w]
    owner_dist = np.full((h, w), np.inf)
    for idx, pose in enumerate(poses):
        cx, cy = pose.root[0], pose.root[1]
        if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
            raise ContractError(f"encode_targets: pose {idx} center ({cx}, {cy}) outside map")
        g = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma * sigma))
        np.maximum(hm, g, out=hm)
        px, py = int(round(cx)), int(round(cy))
        d = (cx - px) ** 2 + (cy - py) ** 2
        if d < owner_dist[py, px]:
            owner_dist[py, px] = d
            for j in range(joints):
                off3d[3 * j + 0, py, px] = pose.joints[j, 0] - px
                off3d[3 * j + 1, py, px] = pose.joints[j, 1] - py
                off3d[3 * j + 2, py, px] = pose.joints[j, 2]
                off2d[2 * j + 0, py, px] = pose.joints[j, 0] - px
                off2d[2 * j + 1, py, px] = pose.joints[j, 1] - py
    return hm, off3d, off2d


def center_mask(poses: list[Pose3D], h: int, w: int) -> np.ndarray:
    """Boolean mask of ground-truth center pixels."""
    mask = np.zeros((h, w), dtype=bool)
    for pose in poses:
        mask[int(round(pose.root[1])), int(round(pose.root[0]))] = True
    return mask


def keypoint_nms(hm: np.ndarray, window: int = 3) -> np.ndarray:
    """Keep pixels equal to their window x window neighborhood max; ties kept."""
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"keypoint_nms: window must be odd and >= 1, got {window}")
    r = window // 2
    padded = np.pad(hm, r, constant_values=-np.inf)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (window, window))
    local_max = windows.max(axis=(2, 3))
    return np.where(hm >= local_max, hm, 0.0)


def decode_poses(hm: np.ndarray, off3d: np.ndarray, threshold: float = 0.5,
                 max_people: int = 10) -> list[Pose3D]:
    """Poses at surviving peaks: joint j = (px, py, 0) + its offset triple."""
    if threshold <= 0:
        raise ContractError(f"decode_poses: threshold must be positive, got {threshold}")
    if max_people < 1:
        raise ContractError(f"decode_poses: max_people must be >= 1, got {max_people}")
    joints = off3d.shape[0] // 3
    peaks = keypoint_nms(hm, 3)
    h, w = hm.shape
    flat = peaks.reshape(-1)
    keep = np.flatnonzero(flat >= threshold)
    # Descending confidence; ties broken by row-major pixel index.
    order = keep[np.lexsort((keep, -flat[keep]))][:max_people]
    poses = []
    for p in order:
        py, px = divmod(int(p), w)
        pj = np.empty((joints, 3))
        for j in range(joints):
            pj[j, 0] = px + off3d[3 * j + 0, py, px]
            pj[j, 1] = py + off3d[3 * j + 1, py, px]
            pj[j, 2] = off3d[3 * j + 2, py, px]
        poses.append(Pose3D(pj, score=float(flat[p])))
    return poses


def poses_to_lines(frame: int, poses: list[Pose3D]) -> list[str]:
    """Line-oriented text form: 'frame person score j0x j0y j0z ...'."""
    lines = []
    for i, pose in enumerate(poses):
        coords = " ".join(format(v, ".17g") for v in pose.joints.reshape(-1))
        lines.append(f"{frame} {i} {format(pose.score, '.17g')} {coords}")
    return lines


def poses_from_lines(lines: list[str]) -> dict[int, list[Pose3D]]:
    """Inverse of poses_to_lines, grouped by frame index."""
    frames: dict[int, list[Pose3D]] = {}
    for line in lines:
        parts = line.split()
        if len(parts) < 3 or (len(parts) - 3) % 3 != 0:
            raise ContractError(f"poses_from_lines: malformed line {line!r}")
        frame = int(parts[0])
        score = float(parts[2])
        joints = np.array([float(v) for v in parts[3:]]).reshape(-1, 3)
        frames.setdefault(frame, []).append(Pose3D(joints, score=score))
    return frames
