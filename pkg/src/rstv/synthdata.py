"""Synthetic articulated sequences with exact 3D labels and detector-noise boxes."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rstv.core import (
    BoundingBox,
    SequenceManifest,
    SkeletonSpec,
    default_skeleton,
    root_relativize,
)
from rstv.fileio import write_pgm

# Bone offsets from the parent joint in the rest pose (mm). x right, y down, z toward camera.
REST_OFFSETS = np.array([
    [0, 0, 0],
    [-100, 0, 0], [0, 420, 0], [0, 420, 0],
    [100, 0, 0], [0, 420, 0], [0, 420, 0],
    [0, -230, 0], [0, -230, 0], [0, -110, 0], [0, -120, 0],
    [160, 20, 0], [0, 270, 0], [0, 250, 0],
    [-160, 20, 0], [0, 270, 0], [0, 250, 0],
], dtype=np.float64)


@dataclass(frozen=True)
class SynthConfig:
    height: int = 112
    width: int = 160
    frames: int = 200
    fps: float = 50.0
    skeleton: SkeletonSpec = field(default_factory=default_skeleton)
    amplitude: float = 0.5
    period: float = 40.0
    drift: tuple = (0.2, 0.0)
    limb_width: float = 3.0
    noise_sigma: float = 0.02
    seed: int = 0
    yaw: float = 0.9
    px_per_mm: float = 0.034
    box_size: int = 64

    def __post_init__(self):
        if self.frames < 48:
            raise ValueError("synthetic sequences need at least 48 frames")
        if self.period <= 0:
            raise ValueError("gait period must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.skeleton.joint_count != len(REST_OFFSETS):
            raise ValueError("the gait model drives the 17-joint default skeleton only")


@dataclass(frozen=True)
class JitterConfig:
    max_shift_u: float = 12.0
    max_shift_v: float = 12.0
    seed: int = 0

    def __post_init__(self):
        if self.max_shift_u < 0 or self.max_shift_v < 0:
            raise ValueError("max shifts must be non-negative")


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def joint_angles(phase: float, amplitude: float) -> dict:
    """Sagittal rotations (radians) per joint for one gait phase."""
    a = amplitude
    return {
        1: a * np.sin(phase),
        4: a * np.sin(phase + np.pi),
        2: -0.7 * a * (1 - np.cos(phase + 0.6)),
        5: -0.7 * a * (1 - np.cos(phase + np.pi + 0.6)),
        14: -0.8 * a * np.sin(phase),
        11: -0.8 * a * np.sin(phase + np.pi),
        15: 0.5 * a * (1 - np.cos(phase - 0.4)),
        12: 0.5 * a * (1 - np.cos(phase + np.pi - 0.4)),
        7: 0.1 * a * np.sin(2 * phase),
    }


def forward_kinematics(parents, angles: dict, yaw: float) -> np.ndarray:
    d = len(parents)
    pos = np.zeros((d, 3))
    rot = [None] * d
    rot[0] = _rot_y(yaw) @ _rot_x(angles.get(0, 0.0))
    for j in range(1, d):
        p = parents[j]
        pos[j] = pos[p] + rot[p] @ REST_OFFSETS[j]
        rot[j] = rot[p] @ _rot_x(angles.get(j, 0.0))
    return pos


def _render(points2d, depth, cfg: SynthConfig, limbs, rng) -> np.ndarray:
    h, w = cfg.height, cfg.width
    ys = np.arange(h)[:, None] + 0.5
    xs = np.arange(w)[None, :] + 0.5
    img = np.zeros((h, w))
    half = cfg.limb_width / 2.0
    span = max(np.ptp(depth), 1e-9)
    zmid = 0.5 * (depth.max() + depth.min())
    for a, b in limbs:
        p, q = points2d[a], points2d[b]
        d = q - p
        L2 = float(d @ d)
        if L2 > 0:
            t = np.clip(((xs - p[0]) * d[0] + (ys - p[1]) * d[1]) / L2, 0.0, 1.0)
        else:
            t = np.zeros((h, w))
        dist = np.hypot(xs - (p[0] + t * d[0]), ys - (p[1] + t * d[1]))
        z = 0.5 * (depth[a] + depth[b])
        bright = 0.7 + 0.25 * (z - zmid) / span * (span > 1e-6)
        img = np.maximum(img, np.clip(half + 0.5 - dist, 0.0, 1.0) * bright)
    head = points2d[10]
    dist = np.hypot(xs - head[0], ys - head[1])
    img = np.maximum(img, np.clip(2.5 * half + 0.5 - dist, 0.0, 1.0) * 0.8)
    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, cfg.noise_sigma, img.shape)
    return np.clip(img, 0.0, 1.0)


def gen_sequence(cfg: SynthConfig = SynthConfig()) -> SequenceManifest:
    """Render a walking stick figure. Frames are kept in memory on the manifest."""
    rng = np.random.default_rng(cfg.seed)
    phase0 = rng.uniform(0.0, 2 * np.pi)
    noise_rng = np.random.default_rng([cfg.seed, 1])
    n = cfg.frames
    drift = np.asarray(cfg.drift, dtype=np.float64)
    start = np.array([cfg.width / 2.0, cfg.height / 2.0]) - drift * (n - 1) / 2.0
    parents = cfg.skeleton.parent
    limbs = cfg.skeleton.limbs
    images, poses, boxes = [], [], []
    for t in range(n):
        phase = phase0 + 2 * np.pi * t / cfg.period
        joints = forward_kinematics(parents, joint_angles(phase, cfg.amplitude), cfg.yaw)
        root_uv = start + drift * t
        pts = root_uv + joints[:, :2] * cfg.px_per_mm
        images.append(_render(pts, joints[:, 2], cfg, limbs, noise_rng))
        poses.append(root_relativize(joints, 0))
        boxes.append(BoundingBox(float(root_uv[0]), float(root_uv[1]), cfg.box_size, cfg.box_size))
    return SequenceManifest(
        frames=[f"frame_{t:05d}.pgm" for t in range(n)],
        fps=cfg.fps,
        poses=poses,
        boxes=boxes,
        images=np.stack(images),
    )


def jitter_boxes(manifest: SequenceManifest, cfg: JitterConfig):
    """Shift every box center by an independent uniform offset.

    Returns the perturbed manifest and the ``N x 2`` offsets that were added.
    """
    if manifest.boxes is None:
        raise ValueError("manifest has no boxes to jitter")
    rng = np.random.default_rng(cfg.seed)
    n = len(manifest.boxes)
    offsets = np.column_stack([
        rng.uniform(-cfg.max_shift_u, cfg.max_shift_u, n),
        rng.uniform(-cfg.max_shift_v, cfg.max_shift_v, n),
    ])
    boxes = [b.shifted(du, dv) for b, (du, dv) in zip(manifest.boxes, offsets)]
    return manifest.with_boxes(boxes), offsets


def write_sequence(manifest: SequenceManifest, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, img in zip(manifest.frames, manifest.frame_stack()):
        write_pgm(out / name, img)
    path = out / "manifest.json"
    manifest.save(path)
    return path
