"""Object-centric motion compensation.

Shift regressors look at a patch and predict where the subject sits relative
to the patch center. Iterating crop-predict-move over each frame keeps the
subject centered, and stacking the aligned crops gives a rectified
spatiotemporal volume (RSTV).

Sign convention: a label ``(du, dv)`` is the subject's offset from the patch
center, so adding it to the box center moves the box onto the subject.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rstv import nnet
from rstv.core import BoundingBox, VolumeIndex, crop_patch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Shift:
    du: float
    dv: float

    def __post_init__(self):
        if not (np.isfinite(self.du) and np.isfinite(self.dv)):
            raise ValueError("shift must be finite")


@dataclass(frozen=True)
class CompensationConfig:
    max_iter: int = 4
    coarse_iters: int = 2
    coarse_range: float = 16.0
    fine_range: float = 4.0
    patch: int = 64

    def __post_init__(self):
        if not 0 <= self.coarse_iters <= self.max_iter:
            raise ValueError("coarse_iters must lie in [0, max_iter]")


@dataclass
class RSTV:
    patches: np.ndarray
    boxes: list
    index: VolumeIndex


def gradient_centroid(patch) -> np.ndarray:
    """Gradient-magnitude centroid of a patch relative to its center, in patch pixels."""
    p = np.asarray(patch, dtype=np.float64)
    gy, gx = np.gradient(p)
    mag = np.hypot(gx, gy)
    total = mag.sum()
    h, w = p.shape
    if total <= 0:
        return np.zeros(2)
    cu = (mag.sum(axis=0) @ (np.arange(w) + 0.5)) / total
    cv = (mag.sum(axis=1) @ (np.arange(h) + 0.5)) / total
    return np.array([cu - w / 2.0, cv - h / 2.0])


def centroid_dispersion(volume) -> float:
    """Total variance of per-slice gradient centroids across a volume."""
    c = np.array([gradient_centroid(s) for s in volume])
    return float(c.var(axis=0).sum())


class ShiftRegressor:
    """Maps patches to the subject's ``(du, dv)`` offset from the patch center (frame pixels)."""

    patch_size = 64

    def predict(self, patches, frame_index=None, center=None) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, patch, frame_index=None, center=None) -> Shift:
        du, dv = self.predict(np.asarray(patch)[None], frame_index, center)[0]
        return Shift(float(du), float(dv))


class ZeroShiftRegressor(ShiftRegressor):
    def predict(self, patches, frame_index=None, center=None):
        return np.zeros((len(patches), 2))


class OracleShiftRegressor(ShiftRegressor):
    """Test fixture: knows every frame's true center and returns the exact residual."""

    def __init__(self, true_centers):
        self.true_centers = np.asarray(true_centers, dtype=np.float64)

    def predict(self, patches, frame_index=None, center=None):
        if frame_index is None or center is None:
            raise ValueError("the oracle needs the frame index and current center")
        return np.tile(self.true_centers[frame_index] - np.asarray(center), (len(patches), 1))


class CentroidShiftRegressor(ShiftRegressor):
    """Cheap baseline: gradient centroid offset, optionally corrected by a fixed bias."""

    def __init__(self, box_size=64, patch_size=64, bias=(0.0, 0.0)):
        self.scale = box_size / patch_size
        self.patch_size = patch_size
        self.bias = np.asarray(bias, dtype=np.float64)

    def predict(self, patches, frame_index=None, center=None):
        return np.array([gradient_centroid(p) * self.scale - self.bias for p in patches])


def shift_cnn_architecture(patch=64):
    # No pooling after the first convolution; localization needs full resolution there.
    s1 = patch - 4
    s2 = (s1 - 4) // 2
    s3 = (s2 - 2) // 2
    return [
        nnet.conv2d(1, 8, 5), nnet.relu(),
        nnet.conv2d(8, 16, 5), nnet.relu(), nnet.maxpool2d(2),
        nnet.conv2d(16, 32, 3), nnet.relu(), nnet.maxpool2d(2),
        nnet.dense(32 * s3 * s3, 256), nnet.relu(),
        nnet.dense(256, 2), nnet.linear(),
    ]


class CNNShiftRegressor(ShiftRegressor):
    def __init__(self, net: nnet.Network, kind: str, shift_range: float, box_size=64, loss_trace=None):
        self.net = net
        self.kind = kind
        self.shift_range = float(shift_range)
        self.patch_size = net.input_shape[-1]
        self.box_size = box_size
        self.loss_trace = loss_trace or []

    def predict(self, patches, frame_index=None, center=None, batch=64):
        x = np.asarray(patches, dtype=np.float32)[:, None]
        out = [self.net.forward(x[i:i + batch]) for i in range(0, len(x), batch)]
        return np.concatenate(out).astype(np.float64) * self.shift_range

    def save(self, path) -> None:
        path = Path(path)
        self.net.save(path)
        sidecar = {"kind": self.kind, "range": self.shift_range, "patch": self.patch_size,
                   "box": self.box_size}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, sort_keys=True))

    @classmethod
    def load(cls, path) -> "CNNShiftRegressor":
        path = Path(path)
        net = nnet.Network.load(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        return cls(net, meta["kind"], meta["range"], meta.get("box", 64))


@dataclass
class ShiftTrainingSet:
    patches: np.ndarray  # K x h x w
    labels: np.ndarray  # K x 2, frame pixels

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        for p, (du, dv) in zip(self.patches, self.labels):
            yield p, Shift(float(du), float(dv))

    def __add__(self, other):
        return ShiftTrainingSet(np.concatenate([self.patches, other.patches]),
                                np.concatenate([self.labels, other.labels]))


def make_shift_training_set(manifest, shift_range: float, n_per_frame: int, seed=0,
                            patch=64, frame_indices=None) -> ShiftTrainingSet:
    """Crops at ground-truth boxes displaced by ``-label``, label uniform in ``+-shift_range``."""
    if manifest.boxes is None:
        raise ValueError("manifest has no ground-truth boxes")
    frames = manifest.frame_stack()
    idx = range(len(frames)) if frame_indices is None else frame_indices
    rng = np.random.default_rng(seed)
    patches, labels = [], []
    for i in idx:
        box = manifest.boxes[i]
        for du, dv in rng.uniform(-shift_range, shift_range, (n_per_frame, 2)):
            patches.append(crop_patch(frames[i], box.shifted(-du, -dv), patch, patch))
            labels.append((du, dv))
    return ShiftTrainingSet(np.asarray(patches, dtype=np.float32), np.asarray(labels, dtype=np.float64))


def train_shift_regressor(training_set: ShiftTrainingSet, kind: str = "coarse", seed=0,
                          epochs=8, batch=32, lr=0.001, shift_range=None, box_size=64) -> CNNShiftRegressor:
    if len(training_set) == 0:
        raise ValueError("empty training set")
    if kind not in ("coarse", "fine"):
        raise ValueError("kind must be 'coarse' or 'fine'")
    if shift_range is None:
        shift_range = float(np.max(np.abs(training_set.labels))) or 1.0
    patch = training_set.patches.shape[-1]
    net = nnet.Network(shift_cnn_architecture(patch), (1, patch, patch), seed=seed)
    x = training_set.patches[:, None].astype(np.float32)
    y = (training_set.labels / shift_range).astype(np.float32)
    _, trace = nnet.train(net, x, y, epochs, batch, nnet.AdamState(lr=lr))
    log.info("%s shift regressor trained: final loss %.4g", kind, trace[-1] if trace else float("nan"))
    return CNNShiftRegressor(net, kind, shift_range, box_size, trace)


def refine_center(frame, box: BoundingBox, cfg: CompensationConfig, coarse, fine, frame_index=None):
    """One frame of iterative refinement; returns the list of visited centers."""
    h, w = frame.shape
    center = box.center.astype(np.float64)
    visited = [center.copy()]
    for it in range(cfg.max_iter):
        psi = coarse if it < cfg.coarse_iters else fine
        patch = crop_patch(frame, box.moved_to(*center), cfg.patch, cfg.patch)
        s = psi(patch, frame_index=frame_index, center=center)
        center = center + (s.du, s.dv)
        center = np.clip(center, (0.0, 0.0), (float(w), float(h)))
        visited.append(center.copy())
    return visited


def compensate(frames, init_box: BoundingBox, cfg: CompensationConfig, coarse, fine) -> list:
    """Refined box for every frame, each frame starting from the previous refined center."""
    frames = frames.frame_stack() if hasattr(frames, "frame_stack") else np.asarray(frames)
    boxes = []
    box = init_box
    for i, frame in enumerate(frames):
        center = refine_center(frame, box, cfg, coarse, fine, frame_index=i)[-1]
        box = box.moved_to(*center)
        boxes.append(box)
    return boxes


def build_rstv(frames, boxes, vindex: VolumeIndex, patch=64) -> RSTV:
    frames = frames.frame_stack() if hasattr(frames, "frame_stack") else frames
    if boxes is None or len(boxes) <= vindex.last or vindex.first < 0:
        raise ValueError("boxes do not cover the volume")
    members = vindex.members
    stack = np.stack([crop_patch(frames[i], boxes[i], patch, patch) for i in members])
    return RSTV(stack, [boxes[i] for i in members], vindex)
