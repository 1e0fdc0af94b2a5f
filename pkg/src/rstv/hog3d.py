"""Dense multi-scale histograms of oriented spatio-temporal gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from rstv.core import VolumeIndex

GOLDEN = (1 + 5 ** 0.5) / 2


@dataclass(frozen=True)
class Hog3DConfig:
    spatial_levels: tuple = (2, 4, 8)
    temporal_cell: int = 4
    orientation_bins: int = 10
    eps: float = 1e-6

    def __post_init__(self):
        if self.orientation_bins not in (6, 10):
            raise ValueError("orientation_bins must be 6 or 10")
        if self.temporal_cell <= 0 or any(s <= 0 for s in self.spatial_levels):
            raise ValueError("cell sizes must be positive")

    def length(self, T: int) -> int:
        return sum(s * s for s in self.spatial_levels) * (T // self.temporal_cell) * self.orientation_bins

    def check(self, T: int, h: int, w: int) -> None:
        if T % self.temporal_cell:
            raise ValueError(f"temporal cell {self.temporal_cell} does not divide T={T}")
        for s in self.spatial_levels:
            if h % s or w % s:
                raise ValueError(f"grid {s} does not divide patch {h}x{w}")


@dataclass(frozen=True)
class Descriptor:
    values: np.ndarray
    source: Optional[VolumeIndex] = None


def _rotation_onto_x(a: np.ndarray) -> np.ndarray:
    # Rodrigues rotation taking unit vector a onto (1, 0, 0).
    x = np.array([1.0, 0.0, 0.0])
    v = np.cross(a, x)
    s, c = np.linalg.norm(v), float(a @ x)
    if s < 1e-12:
        return np.eye(3)
    k = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]]) / s
    return np.eye(3) + s * k + (1 - c) * (k @ k)


def orientation_axes(bins: int = 10) -> np.ndarray:
    """Sign-folded polyhedron normals, rotated so the first axis is +x.

    10 bins: the 20 icosahedron face normals (dodecahedron vertices).
    6 bins: the 12 dodecahedron face normals (icosahedron vertices).
    """
    p, q = GOLDEN, 1 / GOLDEN
    if bins == 10:
        axes = [(1, 1, 1), (1, 1, -1), (1, -1, 1), (1, -1, -1),
                (0, q, p), (0, q, -p), (q, p, 0), (q, -p, 0), (p, 0, q), (-p, 0, q)]
    elif bins == 6:
        axes = [(0, 1, p), (0, 1, -p), (1, p, 0), (1, -p, 0), (p, 0, 1), (-p, 0, 1)]
    else:
        raise ValueError("bins must be 6 or 10")
    a = np.array(axes, dtype=np.float64)
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    a = a @ _rotation_onto_x(a[0]).T
    a[0] = (1.0, 0.0, 0.0)
    return a


def gradients3d(volume: np.ndarray):
    """Central differences inside, one-sided at the borders. Returns (g_x, g_y, g_t)."""
    v = np.asarray(volume, dtype=np.float64)
    if v.ndim != 3 or min(v.shape) < 3:
        raise ValueError(f"volume must be T x h x w with every side >= 3, got {v.shape}")
    g_t, g_y, g_x = np.gradient(v)
    return g_x, g_y, g_t


def quantize_orientation(g, bins: int = 10):
    """Bin index and magnitude for one gradient vector (or a stack of them, last axis 3)."""
    g = np.asarray(g, dtype=np.float64)
    axes = orientation_axes(bins)
    mag = np.linalg.norm(g, axis=-1)
    # argmax of |g . d| equals argmax of |unit(g) . d|; zero vectors fall to bin 0.
    idx = np.argmax(np.abs(g @ axes.T), axis=-1)
    if g.ndim == 1:
        return int(idx), float(mag)
    return idx, mag


def _votes(grads, bins: int):
    g = np.stack(grads, axis=-1)
    return quantize_orientation(g, bins)


def cell_histogram(grads, bounds, bins: int = 10) -> np.ndarray:
    """Magnitude-weighted hard votes over one cell.

    ``bounds`` is ``((t0, t1), (y0, y1), (x0, x1))``, half-open.
    """
    (t0, t1), (y0, y1), (x0, x1) = bounds
    if t1 <= t0 or y1 <= y0 or x1 <= x0:
        raise ValueError("empty cell")
    shape = grads[0].shape
    if t0 < 0 or y0 < 0 or x0 < 0 or t1 > shape[0] or y1 > shape[1] or x1 > shape[2]:
        raise ValueError("cell lies outside the volume")
    sub = [g[t0:t1, y0:y1, x0:x1] for g in grads]
    idx, mag = _votes(sub, bins)
    return np.bincount(idx.ravel(), weights=mag.ravel(), minlength=bins)


def raw_cell_histograms(grads, level: int, temporal_cell: int, bins: int) -> np.ndarray:
    """Unnormalized histograms for one spatial level, shape ``(T/tau, s, s, B)``."""
    T, h, w = grads[0].shape
    idx, mag = _votes(grads, bins)
    nt, ch, cw = T // temporal_cell, h // level, w // level
    cell_t = np.arange(T) // temporal_cell
    cell_y = np.arange(h) // ch
    cell_x = np.arange(w) // cw
    cell = (cell_t[:, None, None] * level + cell_y[None, :, None]) * level + cell_x[None, None, :]
    key = cell * bins + idx
    hist = np.bincount(key.ravel(), weights=mag.ravel(), minlength=nt * level * level * bins)
    return hist.reshape(nt, level, level, bins)


def descriptor(volume: np.ndarray, cfg: Hog3DConfig = Hog3DConfig(), source=None) -> Descriptor:
    v = np.asarray(volume, dtype=np.float64)
    T, h, w = v.shape
    cfg.check(T, h, w)
    grads = gradients3d(v)
    parts = []
    for s in cfg.spatial_levels:
        hist = raw_cell_histograms(grads, s, cfg.temporal_cell, cfg.orientation_bins)
        norm = np.sqrt((hist ** 2).sum(axis=-1, keepdims=True))
        parts.append((hist / (norm + cfg.eps)).ravel())
    return Descriptor(np.concatenate(parts), source)


def replicate_frame(frame: np.ndarray, T: int = 4) -> np.ndarray:
    """Single-frame baseline volume: one patch repeated ``T`` times."""
    return np.repeat(np.asarray(frame, dtype=np.float64)[None], T, axis=0)
