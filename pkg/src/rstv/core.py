"""Shared domain types, block bookkeeping and patch cropping.

Image coordinates are continuous: pixel ``k`` spans ``[k, k + 1)`` and its
center sits at ``k + 0.5``. A box covering a whole ``W x H`` image therefore
has center ``(W / 2, H / 2)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class InvalidWindowError(ValueError):
    """Temporal window is odd or longer than the sequence."""


@dataclass(frozen=True)
class SkeletonSpec:
    joint_names: tuple
    parent: tuple
    limbs: tuple

    def __post_init__(self):
        d = len(self.joint_names)
        if d < 2:
            raise ValueError("skeleton needs at least 2 joints")
        if len(self.parent) != d:
            raise ValueError("parent list length must equal joint count")
        roots = [j for j, p in enumerate(self.parent) if p == j]
        if len(roots) != 1:
            raise ValueError(f"expected exactly one root, found {len(roots)}")
        for j in range(d):
            seen = set()
            k = j
            while self.parent[k] != k:
                if k in seen:
                    raise ValueError("parent array contains a cycle")
                seen.add(k)
                k = self.parent[k]
                if not 0 <= k < d:
                    raise ValueError("parent index out of range")
        for a, b in self.limbs:
            if not (0 <= a < d and 0 <= b < d):
                raise ValueError(f"limb ({a}, {b}) references an unknown joint")

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    @property
    def root(self) -> int:
        return next(j for j, p in enumerate(self.parent) if p == j)


H36M_JOINTS = (
    "pelvis", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee", "l_ankle",
    "spine", "thorax", "neck", "head",
    "l_shoulder", "l_elbow", "l_wrist", "r_shoulder", "r_elbow", "r_wrist",
)
H36M_PARENTS = (0, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)


def default_skeleton() -> SkeletonSpec:
    """17-joint tree (torso, head, two arms, two legs) rooted at the pelvis."""
    limbs = tuple((p, j) for j, p in enumerate(H36M_PARENTS) if p != j)
    return SkeletonSpec(H36M_JOINTS, H36M_PARENTS, limbs)


@dataclass(frozen=True)
class Pose3D:
    """Root-relative joint coordinates in millimeters, shape ``(D, 3)``."""

    coords: np.ndarray
    root_index: int = 0

    def __post_init__(self):
        c = np.array(self.coords, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 3:
            raise ValueError(f"pose must be D x 3, got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("pose contains non-finite values")
        if np.any(c[self.root_index] != 0.0):
            raise ValueError("root joint must sit at the origin")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def joint_count(self) -> int:
        return self.coords.shape[0]

    def flat(self) -> np.ndarray:
        return self.coords.reshape(-1)


def root_relativize(absolute_coords, root_index: int = 0) -> Pose3D:
    c = np.asarray(absolute_coords, dtype=np.float64)
    if c.ndim == 1:
        c = c.reshape(-1, 3)
    if not 0 <= root_index < c.shape[0]:
        raise IndexError(f"root index {root_index} out of range for {c.shape[0]} joints")
    rel = c - c[root_index]
    rel[root_index] = 0.0
    return Pose3D(rel, root_index)


@dataclass(frozen=True)
class BoundingBox:
    center_u: float
    center_v: float
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("box width and height must be positive")

    def shifted(self, du: float, dv: float) -> "BoundingBox":
        return replace(self, center_u=self.center_u + du, center_v=self.center_v + dv)

    def moved_to(self, u: float, v: float) -> "BoundingBox":
        return replace(self, center_u=float(u), center_v=float(v))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.center_u, self.center_v])

    def to_list(self) -> list:
        return [float(self.center_u), float(self.center_v), int(self.width), int(self.height)]

    @classmethod
    def from_list(cls, values) -> "BoundingBox":
        cu, cv, w, h = values
        return cls(float(cu), float(cv), int(w), int(h))


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray
    index: int = 0

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 2 or min(p.shape) == 0:
            raise ValueError("frame must be a non-empty H x W array")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("frame values must lie in [0, 1]")
        object.__setattr__(self, "pixels", p)


@dataclass
class SequenceManifest:
    """Ordered frames plus optional per-frame labels.

    ``images`` holds decoded frames when the sequence lives in memory (for
    example straight out of the synthetic generator); otherwise frames are
    read lazily from ``frames``, resolved against ``root``.
    """

    frames: list
    fps: float = 50.0
    poses: Optional[list] = None
    boxes: Optional[list] = None
    root: Optional[Path] = None
    images: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.frames)
        for name in ("poses", "boxes"):
            items = getattr(self, name)
            if items is not None and len(items) != n:
                raise ValueError(f"{name} has {len(items)} entries for {n} frames")
        if self.images is not None and len(self.images) != n:
            raise ValueError("decoded image stack does not match the frame list")

    def __len__(self) -> int:
        return len(self.frames)

    def frame_stack(self) -> np.ndarray:
        """All frames as an ``N x H x W`` float array in [0, 1]."""
        if self.images is None:
            from rstv.fileio import read_image

            base = Path(self.root) if self.root is not None else Path(".")
            self.images = np.stack([read_image(base / f) for f in self.frames])
        return self.images

    def pose_array(self) -> np.ndarray:
        if self.poses is None:
            raise ValueError("manifest has no poses")
        return np.stack([p.coords for p in self.poses])

    def box_centers(self) -> np.ndarray:
        if self.boxes is None:
            raise ValueError("manifest has no boxes")
        return np.array([[b.center_u, b.center_v] for b in self.boxes])

    def with_boxes(self, boxes: Sequence[BoundingBox]) -> "SequenceManifest":
        return replace(self, boxes=list(boxes))

    def to_json(self) -> dict:
        doc = {"fps": self.fps, "frames": [str(f) for f in self.frames]}
        if self.poses is not None:
            doc["poses"] = [p.coords.tolist() for p in self.poses]
        if self.boxes is not None:
            doc["boxes"] = [b.to_list() for b in self.boxes]
        return doc

    @classmethod
    def from_json(cls, doc: dict, root=None) -> "SequenceManifest":
        poses = doc.get("poses")
        boxes = doc.get("boxes")
        return cls(
            frames=list(doc["frames"]),
            fps=float(doc.get("fps", 50.0)),
            poses=[Pose3D(np.asarray(p)) for p in poses] if poses is not None else None,
            boxes=[BoundingBox.from_list(b) for b in boxes] if boxes is not None else None,
            root=Path(root) if root is not None else None,
        )

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "SequenceManifest":
        path = Path(path)
        return cls.from_json(json.loads(path.read_text()), root=path.parent)


@dataclass(frozen=True)
class VolumeIndex:
    center: int
    window: int

    @property
    def first(self) -> int:
        return self.center - self.window // 2 + 1

    @property
    def last(self) -> int:
        return self.center + self.window // 2

    @property
    def members(self) -> list:
        return list(range(self.first, self.last + 1))


def extract_blocks(manifest_or_length, T: int) -> list:
    """Every window of ``T`` consecutive frames, one per valid center."""
    n = manifest_or_length if isinstance(manifest_or_length, int) else len(manifest_or_length)
    if T <= 0 or T % 2:
        raise InvalidWindowError(f"temporal window must be even and positive, got {T}")
    if T > n:
        raise InvalidWindowError(f"window {T} exceeds sequence length {n}")
    return [VolumeIndex(c, T) for c in range(T // 2 - 1, n - T // 2)]


def _resample_matrix(center: float, extent: float, n_out: int, n_in: int) -> np.ndarray:
    # Row r holds the bilinear weights of output sample r over input pixels.
    pos = center - extent / 2.0 + (np.arange(n_out) + 0.5) * (extent / n_out) - 0.5
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for idx, w in ((lo, 1.0 - frac), (lo + 1, frac)):
        ok = (idx >= 0) & (idx < n_in)
        np.add.at(m, (rows[ok], idx[ok]), w[ok])
    return m


def crop_patch(frame, box: BoundingBox, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resample of ``box`` to ``out_h x out_w``; outside pixels read as 0."""
    if out_w <= 0 or out_h <= 0:
        raise ValueError("output size must be positive")
    img = frame.pixels if isinstance(frame, Frame) else np.asarray(frame, dtype=np.float64)
    h, w = img.shape
    ry = _resample_matrix(box.center_v, box.height, out_h, h)
    rx = _resample_matrix(box.center_u, box.width, out_w, w)
    return ry @ img @ rx.T


def to_gray(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114
