"""Deterministic synthetic multi-person video scenes with exact ground truth.

Stick-figure skeletons move on seeded sinusoidal trajectories quantized to
integer cells per frame, so the ground-truth flow field is exact and
warping checks hold bitwise-tight. Joints are rendered as Gaussian
feature blobs with per-joint channel signatures; the rendered maps stand
in for a learned backbone, and the exact flow stands in for a learned
motion network.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import Pose3D, encode_targets
from .tensor import ContractError, Tensor


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    persons: int = 1
    joints: int = 15
    frames: int = 5
    height: int = 64
    width: int = 64
    channels: int = 16
    amplitude: float = 0.0      # root motion amplitude, cells
    depth_min: float = 0.0
    depth_max: float = 4.0
    blob_sigma: float = 1.5
    target_sigma: float = 2.0
    body_radius: float = 5.0    # max joint offset from the root, cells

    def __post_init__(self):
        if self.persons < 0 or self.joints < 1 or self.frames < 1:
            raise ContractError(f"invalid scene spec: {self}")


@dataclass
class SceneTruth:
    poses: list[list[Pose3D]]          # per frame
    offsets2d: list[np.ndarray]        # per frame, (2J, H, W)
    flows: list[np.ndarray]            # per adjacent pair, (2, H, W)
    heatmaps: list[np.ndarray]         # per frame, (H, W)
    offsets3d: list[np.ndarray]        # per frame, (3J, H, W)


def _blob_radius(spec: SceneSpec) -> int:
    return int(np.ceil(3.0 * spec.blob_sigma))


def _trajectories(spec: SceneSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Integer root positions (P, T, 2) and static joint offsets (P, J, 3)."""
    r = _blob_radius(spec)
    margin = r + spec.body_radius + 1
    lo_x, hi_x = margin + spec.amplitude, spec.width - 1 - margin - spec.amplitude
    lo_y, hi_y = margin + spec.amplitude, spec.height - 1 - margin - spec.amplitude
    if spec.persons and (lo_x > hi_x or lo_y > hi_y):
        raise ContractError(
            f"scene spec: trajectory would exit the {spec.height}x{spec.width} grid")
    roots = np.zeros((spec.persons, spec.frames, 2), dtype=np.int64)
    offs = np.zeros((spec.persons, spec.joints, 3))
    for p in range(spec.persons):
        base = np.array([rng.integers(int(lo_x), int(hi_x) + 1),
                         rng.integers(int(lo_y), int(hi_y) + 1)], dtype=np.int64)
        phase = rng.uniform(0, 2 * np.pi, size=2)
        freq = rng.uniform(0.5, 1.5, size=2)
        t = np.arange(spec.frames)
        dx = np.rint(spec.amplitude * np.sin(2 * np.pi * freq[0] * t / max(spec.frames, 2) + phase[0]))
        dy = np.rint(spec.amplitude * np.sin(2 * np.pi * freq[1] * t / max(spec.frames, 2) + phase[1]))
        roots[p, :, 0] = base[0] + dx.astype(np.int64)
        roots[p, :, 1] = base[1] + dy.astype(np.int64)
        # Root keeps offset (0, 0); other joints spread inside the body radius.
        ang = rng.uniform(0, 2 * np.pi, size=spec.joints - 1)
        rad = rng.uniform(1.0, spec.body_radius, size=spec.joints - 1)
        offs[p, 1:, 0] = rad * np.cos(ang)
        offs[p, 1:, 1] = rad * np.sin(ang)
        offs[p, :, 2] = rng.uniform(spec.depth_min, spec.depth_max, size=spec.joints)
    return roots, offs


def _render_frame(spec: SceneSpec, poses: list[Pose3D], signatures: np.ndarray) -> np.ndarray:
    feat = np.zeros((spec.channels, spec.height, spec.width))
    r = _blob_radius(spec)
    win = np.arange(-r, r + 1)
    wy, wx = np.meshgrid(win, win, indexing="ij")
    for pose in poses:
        for j, (jx, jy, _z) in enumerate(pose.joints):
            cy, cx = int(np.rint(jy)), int(np.rint(jx))
            g = np.exp(-(((wx + cx) - jx) ** 2 + ((wy + cy) - jy) ** 2)
                       / (2.0 * spec.blob_sigma ** 2))
            ys, xs = slice(cy - r, cy + r + 1), slice(cx - r, cx + r + 1)
            feat[:, ys, xs] += signatures[j][:, None, None] * g
    return feat


def generate(spec: SceneSpec) -> tuple[list[np.ndarray], SceneTruth]:
    """Rendered feature maps plus exact ground truth, deterministic in seed."""
    rng = np.random.default_rng(spec.seed)
    roots, offs = _trajectories(spec, rng)
    signatures = rng.uniform(0.5, 1.5, size=(spec.joints, spec.channels))
    poses_per_frame: list[list[Pose3D]] = []
    for t in range(spec.frames):
        frame_poses = []
        for p in range(spec.persons):
            joints = offs[p].copy()
            joints[:, 0] += roots[p, t, 0]
            joints[:, 1] += roots[p, t, 1]
            frame_poses.append(Pose3D(joints))
        poses_per_frame.append(frame_poses)

    features = [_render_frame(spec, poses_per_frame[t], signatures)
                for t in range(spec.frames)]

    r = _blob_radius(spec)
    flows = []
    for t in range(spec.frames - 1):
        flow = np.zeros((2, spec.height, spec.width))
        owner = np.full((spec.height, spec.width), -1, dtype=np.int64)
        dist = np.full((spec.height, spec.width), np.inf)
        ys, xs = np.mgrid[0:spec.height, 0:spec.width]
        for p in range(spec.persons):
            support = np.zeros((spec.height, spec.width), dtype=bool)
            for jx, jy, _z in poses_per_frame[t][p].joints:
                cy, cx = int(np.rint(jy)), int(np.rint(jx))
                support[cy - r:cy + r + 1, cx - r:cx + r + 1] = True
            d = (xs - roots[p, t, 0]) ** 2 + (ys - roots[p, t, 1]) ** 2
            closer = support & (d < dist)
            owner[closer] = p
            dist[closer] = d[closer]
        for p in range(spec.persons):
            step = roots[p, t + 1] - roots[p, t]
            flow[0][owner == p] = step[0]
            flow[1][owner == p] = step[1]
        flows.append(flow)

    offsets2d, heatmaps, offsets3d = [], [], []
    for t in range(spec.frames):
        hm, o3, o2 = encode_targets(poses_per_frame[t], spec.height, spec.width,
                                    spec.target_sigma)
        heatmaps.append(hm)
        offsets3d.append(o3)
        offsets2d.append(o2)

    truth = SceneTruth(poses_per_frame, offsets2d, flows, heatmaps, offsets3d)
    return features, truth


def gt_feature_provider(features: list[np.ndarray]) -> list[Tensor]:
    """Expose rendered maps through the pluggable feature-provider contract."""
    return [Tensor(f) for f in features]


# -- replayable scene manifests -----------------------------------------------


def export_manifest(path, spec: SceneSpec, truth: SceneTruth) -> None:
    """Structured text manifest: spec fields plus per-frame pose lines."""
    lines = ["[scene]"]
    for key in ("seed", "persons", "joints", "frames", "height", "width", "channels",
                "amplitude", "depth_min", "depth_max", "blob_sigma", "target_sigma",
                "body_radius"):
        lines.append(f"{key} = {getattr(spec, key)!r}")
    lines.append("")
    lines.append("[poses]")
    for t, frame_poses in enumerate(truth.poses):
        for p, pose in enumerate(frame_poses):
            coords = " ".join(format(v, ".17g") for v in pose.joints.reshape(-1))
            lines.append(f"{t} {p} {coords}")
    Path(path).write_text("\n".join(lines) + "\n")


def import_manifest(path) -> tuple[SceneSpec, list[list[Pose3D]]]:
    fields: dict[str, str] = {}
    poses: dict[int, list[Pose3D]] = {}
    section = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("["):
            section = line.strip("[]")
            continue
        if section == "scene":
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
        elif section == "poses":
            parts = line.split()
            t = int(parts[0])
            joints = np.array([float(v) for v in parts[2:]]).reshape(-1, 3)
            poses.setdefault(t, []).append(Pose3D(joints))
    ints = {"seed", "persons", "joints", "frames", "height", "width", "channels"}
    kwargs = {k: (int(v) if k in ints else float(v)) for k, v in fields.items()}
    spec = SceneSpec(**kwargs)
    return spec, [poses.get(t, []) for t in range(spec.frames)]
