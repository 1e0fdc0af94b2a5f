"""Monocular 3D pose regression from motion-compensated spatiotemporal volumes."""

from rstv.core import BoundingBox, Pose3D, SequenceManifest, SkeletonSpec, default_skeleton
from rstv.pipeline import PipelineConfig, PoseRegressor

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "PipelineConfig", "Pose3D", "PoseRegressor", "SequenceManifest",
    "SkeletonSpec", "default_skeleton",
]
