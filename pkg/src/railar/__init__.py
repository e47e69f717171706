"""railar: offline augmented-reality augmentation for multi-modal rail sequences.

Takes recorded sequences (front camera images, LiDAR clouds, INS/GNSS poses),
reconstructs a minimal virtual scene, renders geometrically consistent
virtual obstacles into both images and point clouds, and scores the result
with reprojection-error and jitter metrics.
"""

__version__ = "0.1.0"

from .core import (
    CameraModel,
    ImageBuffer,
    LabeledPointCloud,
    Pose,
    RigidTransform,
    SemanticClassMap,
    TrackCenterline,
    compose,
    project,
    transform_cloud,
)

__all__ = [
    "CameraModel",
    "ImageBuffer",
    "LabeledPointCloud",
    "Pose",
    "RigidTransform",
    "SemanticClassMap",
    "TrackCenterline",
    "compose",
    "project",
    "transform_cloud",
    "__version__",
]
