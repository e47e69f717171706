"""Core geometric and image types shared by every pipeline stage.

Conventions used throughout the package:
  - World frame: right-handed, z up, meters.
  - Body frame: x forward, y left, z up (vehicle convention).
  - Camera frame: x right, y down, z forward (optical axis).
  - Image frame: u right, v down, pixels; pixel (i, j) is sampled at the
    continuous coordinate (u=i, v=j).

All types are immutable after construction (arrays are flagged read-only)
and safe to share across parallel workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArclengthOutOfRange, PointBehindCamera, ValidationError

ORTHONORMAL_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class RigidTransform:
    """SE(3) transform: p' = R @ p + t, rotation orthonormal with det +1."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation, check: bool = True):
        R = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(translation, dtype=np.float64).reshape(3)
        if check:
            if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
                raise ValidationError("rigid transform contains non-finite values")
            err = np.abs(R @ R.T - np.eye(3)).max()
            if err > ORTHONORMAL_TOL:
                raise ValidationError(
                    f"rotation is not orthonormal (max |R R^T - I| = {err:.3e})"
                )
            if np.linalg.det(R) < 0.0:
                raise ValidationError("rotation has negative determinant")
        self.rotation = _readonly(R)
        self.translation = _readonly(t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), check=False)

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> "RigidTransform":
        return cls(np.eye(3), np.array([x, y, z], dtype=np.float64), check=False)

    @classmethod
    def from_euler_zyx(cls, yaw: float, pitch: float, roll: float,
                       translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Build from yaw (about z), pitch (about y), roll (about x), radians."""
        cy, sy = math.cos(yaw), math.sin(yaw)
        cp, sp = math.cos(pitch), math.sin(pitch)
        cr, sr = math.cos(roll), math.sin(roll)
        R = np.array([
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ])
        return cls(R, translation, check=False)

    @classmethod
    def orthonormalized(cls, rotation, translation) -> "RigidTransform":
        """Project a near-rotation matrix onto SO(3) (nearest in Frobenius norm).

        Used at ingest so serialized matrices that drifted slightly from
        orthonormality re-enter the strict representation.
        """
        R = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(R)):
            raise ValidationError("rotation contains non-finite values")
        u, _, vt = np.linalg.svd(R)
        d = np.sign(np.linalg.det(u @ vt))
        if d == 0:
            raise ValidationError("rotation matrix is singular")
        R_fixed = u @ np.diag([1.0, 1.0, d]) @ vt
        if np.abs(R_fixed - R).max() > 1e-6:
            raise ValidationError(
                "matrix is too far from a rotation to re-orthonormalize safely"
            )
        return cls(R_fixed, translation, check=False)

    def euler_zyx(self) -> tuple[float, float, float]:
        """Return (yaw, pitch, roll) in radians, ZYX convention."""
        R = self.rotation
        sp = max(-1.0, min(1.0, -float(R[2, 0])))
        pitch = math.asin(sp)
        if abs(sp) > 1.0 - 1e-12:  # gimbal lock: fold roll into yaw
            yaw = math.atan2(-float(R[0, 1]), float(R[1, 1]))
            roll = 0.0
        else:
            yaw = math.atan2(float(R[1, 0]), float(R[0, 0]))
            roll = math.atan2(float(R[2, 1]), float(R[2, 2]))
        return yaw, pitch, roll

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one 3-vector or an (N, 3) array of points."""
        p = np.asarray(points, dtype=np.float64)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        """Rotate direction vectors (no translation)."""
        v = np.asarray(vectors, dtype=np.float64)
        if v.ndim == 1:
            return self.rotation @ v
        return v @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: apply `other` first, then `self`."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            check=False,
        )

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def invert(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -(Rt @ self.translation), check=False)

    def almost_equal(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        return (np.abs(self.rotation - other.rotation).max() <= tol
                and np.abs(self.translation - other.translation).max() <= tol)

    def __repr__(self) -> str:
        t = self.translation
        return f"RigidTransform(t=[{t[0]:.4g}, {t[1]:.4g}, {t[2]:.4g}])"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Compose two rigid transforms: compose(a, b).apply(p) == a.apply(b.apply(p))."""
    return a.compose(b)


@dataclass(frozen=True)
class Pose:
    """A timestamped world-from-body transform."""

    timestamp: float
    transform: RigidTransform

    def __post_init__(self):
        if not math.isfinite(self.timestamp):
            raise ValidationError("pose timestamp must be finite")

    @property
    def position(self) -> np.ndarray:
        return self.transform.translation


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus the body-to-camera mounting transform.

    Distortion is not modeled: images are expected to be rectified upstream.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    body_from_camera: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("image dimensions must be positive")

    def project(self, p_cam) -> tuple[float, float, float]:
        """Project a camera-frame point to (u, v, depth). No bounds clipping.

        Raises:
            PointBehindCamera: if the point has non-positive z.
        """
        x, y, z = (float(v) for v in np.asarray(p_cam, dtype=np.float64))
        if z <= 0.0:
            raise PointBehindCamera(f"point has z = {z:.6g} <= 0")
        return self.fx * x / z + self.cx, self.fy * y / z + self.cy, z

    def project_points(self, p_cam: np.ndarray):
        """Vectorized projection of (N, 3) camera-frame points.

        Returns:
            uv: (N, 2) pixel coordinates (garbage where invalid)
            depth: (N,) camera-frame z
            valid: (N,) bool, True where z > 0
        """
        p = np.asarray(p_cam, dtype=np.float64).reshape(-1, 3)
        z = p[:, 2]
        valid = z > 0.0
        zsafe = np.where(valid, z, 1.0)
        uv = np.empty((p.shape[0], 2))
        uv[:, 0] = self.fx * p[:, 0] / zsafe + self.cx
        uv[:, 1] = self.fy * p[:, 1] / zsafe + self.cy
        return uv, z, valid

    def back_project(self, u: float, v: float, depth: float) -> np.ndarray:
        """Invert project(): pixel + depth back to a camera-frame point."""
        if depth <= 0:
            raise PointBehindCamera("depth must be positive")
        return np.array([
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        ])

    def contains(self, u, v) -> bool | np.ndarray:
        """True where (u, v) lies inside the image bounds."""
        return (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)


# Image formats: name -> (numpy dtype, channel count)
IMAGE_FORMATS = {
    "RGB8": (np.uint8, 3),
    "GRAY8": (np.uint8, 1),
    "LABEL16": (np.uint16, 1),
    "DEPTH32": (np.float32, 1),
}


class ImageBuffer:
    """A typed raster: RGB8, GRAY8, LABEL16 (semantic ids) or DEPTH32."""

    __slots__ = ("width", "height", "format", "data")

    def __init__(self, data: np.ndarray, format: str):
        if format not in IMAGE_FORMATS:
            raise ValidationError(f"unknown image format {format!r}")
        dtype, channels = IMAGE_FORMATS[format]
        a = np.asarray(data)
        if a.dtype != dtype:
            raise ValidationError(
                f"{format} expects dtype {np.dtype(dtype).name}, got {a.dtype.name}"
            )
        expected_ndim = 3 if channels == 3 else 2
        if a.ndim != expected_ndim or (channels == 3 and a.shape[2] != 3):
            raise ValidationError(f"{format} expects shape (h, w"
                                  + (", 3)" if channels == 3 else ")")
                                  + f", got {a.shape}")
        self.data = _readonly(a)
        self.height, self.width = a.shape[0], a.shape[1]
        self.format = format

    @classmethod
    def zeros(cls, width: int, height: int, format: str) -> "ImageBuffer":
        dtype, channels = IMAGE_FORMATS[format]
        shape = (height, width, 3) if channels == 3 else (height, width)
        return cls(np.zeros(shape, dtype=dtype), format)

    def same_size(self, other: "ImageBuffer") -> bool:
        return self.width == other.width and self.height == other.height

    def __repr__(self) -> str:
        return f"ImageBuffer({self.width}x{self.height}, {self.format})"


class LabeledPointCloud:
    """N points with semantic labels (0 = unlabeled) and optional intensity."""

    __slots__ = ("points", "labels", "intensity", "frame")

    def __init__(self, points, labels=None, intensity=None, frame: str = "unknown"):
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValidationError("point cloud contains non-finite coordinates")
        n = p.shape[0]
        if labels is None:
            lab = np.zeros(n, dtype=np.uint16)
        else:
            lab = np.asarray(labels)
            if lab.shape != (n,):
                raise ValidationError(f"labels shape {lab.shape} != ({n},)")
            if lab.dtype != np.uint16:
                if np.any(lab < 0) or np.any(lab > np.iinfo(np.uint16).max):
                    raise ValidationError("labels out of uint16 range")
                lab = lab.astype(np.uint16)
        inten = None
        if intensity is not None:
            inten = np.asarray(intensity, dtype=np.float32)
            if inten.shape != (n,):
                raise ValidationError(f"intensity shape {inten.shape} != ({n},)")
        self.points = _readonly(p)
        self.labels = _readonly(lab)
        self.intensity = _readonly(inten) if inten is not None else None
        self.frame = frame

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_labels(self, labels: np.ndarray) -> "LabeledPointCloud":
        return LabeledPointCloud(self.points, labels, self.intensity, self.frame)

    def select(self, mask_or_indices) -> "LabeledPointCloud":
        inten = self.intensity[mask_or_indices] if self.intensity is not None else None
        return LabeledPointCloud(self.points[mask_or_indices],
                                 self.labels[mask_or_indices], inten, self.frame)

    def transformed(self, T: RigidTransform, frame: str | None = None) -> "LabeledPointCloud":
        return LabeledPointCloud(T.apply(self.points), self.labels, self.intensity,
                                 frame if frame is not None else self.frame)

    def __repr__(self) -> str:
        return f"LabeledPointCloud(n={len(self)}, frame={self.frame!r})"


def transform_cloud(T: RigidTransform, cloud: LabeledPointCloud) -> LabeledPointCloud:
    """Map every point by T; labels and intensity are preserved."""
    return cloud.transformed(T)


class TrackCenterline:
    """Arc-length-parameterized polyline of the ego track (world frame)."""

    __slots__ = ("vertices", "arclengths")

    def __init__(self, vertices, arclengths=None):
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        if v.shape[0] < 2:
            raise ValidationError("centerline needs at least 2 vertices")
        if not np.all(np.isfinite(v)):
            raise ValidationError("centerline contains non-finite vertices")
        seg = np.linalg.norm(np.diff(v, axis=0), axis=1)
        if np.any(seg <= 0.0):
            raise ValidationError("centerline has zero-length segments")
        expected = np.concatenate([[0.0], np.cumsum(seg)])
        if arclengths is None:
            s = expected
        else:
            s = np.asarray(arclengths, dtype=np.float64).reshape(-1)
            if s.shape[0] != v.shape[0]:
                raise ValidationError("arclengths length != vertex count")
            if abs(s[0]) > 1e-9 or np.abs(s - expected).max() > 1e-9:
                raise ValidationError("arclengths inconsistent with vertex spacing")
        self.vertices = _readonly(v)
        self.arclengths = _readonly(s)

    @classmethod
    def from_vertices(cls, vertices) -> "TrackCenterline":
        return cls(vertices)

    @property
    def length(self) -> float:
        return float(self.arclengths[-1])

    def point_at(self, s: float) -> np.ndarray:
        """Interpolate the 3D point at arc length s (must lie in [0, length])."""
        if s < 0.0 or s > self.length:
            raise ArclengthOutOfRange(
                f"arc length {s:.6g} outside [0, {self.length:.6g}]"
            )
        i = int(np.searchsorted(self.arclengths, s, side="right")) - 1
        i = min(max(i, 0), len(self.arclengths) - 2)
        s0, s1 = self.arclengths[i], self.arclengths[i + 1]
        t = (s - s0) / (s1 - s0)
        return (1.0 - t) * self.vertices[i] + t * self.vertices[i + 1]

    def segment_tangents(self) -> np.ndarray:
        d = np.diff(self.vertices, axis=0)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def vertex_tangents(self, smooth: int = 1) -> np.ndarray:
        """Unit tangent per vertex, moving-averaged over `smooth` vertices."""
        seg = self.segment_tangents()
        t = np.empty_like(self.vertices)
        t[0] = seg[0]
        t[-1] = seg[-1]
        if len(seg) > 1:
            mid = seg[:-1] + seg[1:]
            t[1:-1] = mid / np.linalg.norm(mid, axis=1, keepdims=True)
        if smooth > 1:
            t = _moving_average(t, smooth)
            t = t / np.linalg.norm(t, axis=1, keepdims=True)
        return t

    def tangent_at(self, s: float, smooth: int = 1) -> np.ndarray:
        """Unit tangent at arc length s, interpolated between vertex tangents."""
        if s < 0.0 or s > self.length:
            raise ArclengthOutOfRange(
                f"arc length {s:.6g} outside [0, {self.length:.6g}]"
            )
        tangents = self.vertex_tangents(smooth)
        i = int(np.searchsorted(self.arclengths, s, side="right")) - 1
        i = min(max(i, 0), len(self.arclengths) - 2)
        s0, s1 = self.arclengths[i], self.arclengths[i + 1]
        t = (s - s0) / (s1 - s0)
        v = (1.0 - t) * tangents[i] + t * tangents[i + 1]
        return v / np.linalg.norm(v)

    def project_xy(self, point) -> tuple[float, np.ndarray]:
        """Exact horizontal-plane projection of a point onto the polyline.

        Searches every segment; z is ignored when measuring distance (rail
        geometry is matched laterally). Ties go to the earlier segment.

        Returns:
            (arclength of the foot point, 3D foot point on the polyline)
        """
        p = np.asarray(point, dtype=np.float64)[:2]
        a = self.vertices[:-1, :2]
        b = self.vertices[1:, :2]
        ab = b - a
        denom = np.einsum("ij,ij->i", ab, ab)
        t = np.clip(np.einsum("ij,ij->i", p - a, ab) / denom, 0.0, 1.0)
        foot = a + t[:, None] * ab
        d2 = np.einsum("ij,ij->i", foot - p, foot - p)
        i = int(np.argmin(d2))  # argmin returns the first minimum
        s0, s1 = self.arclengths[i], self.arclengths[i + 1]
        s = s0 + t[i] * (s1 - s0)
        foot3d = (1.0 - t[i]) * self.vertices[i] + t[i] * self.vertices[i + 1]
        return float(s), foot3d

    def distance_xy(self, points: np.ndarray) -> np.ndarray:
        """Horizontal distance from each of (N, 2|3) points to the polyline."""
        p = np.asarray(points, dtype=np.float64)[:, :2]
        a = self.vertices[:-1, :2]
        b = self.vertices[1:, :2]
        ab = b - a
        denom = np.einsum("ij,ij->i", ab, ab)
        # (N, S) parameter of each point against each segment
        t = np.clip(
            ((p[:, None, :] - a[None, :, :]) * ab[None, :, :]).sum(-1) / denom,
            0.0, 1.0,
        )
        foot = a[None, :, :] + t[..., None] * ab[None, :, :]
        d2 = ((foot - p[:, None, :]) ** 2).sum(-1)
        return np.sqrt(d2.min(axis=1))

    def __len__(self) -> int:
        return self.vertices.shape[0]


def _moving_average(a: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average along axis 0, window clamped at the ends."""
    if window <= 1:
        return a.copy()
    half = window // 2
    n = a.shape[0]
    out = np.empty_like(a, dtype=np.float64)
    csum = np.cumsum(np.concatenate([np.zeros((1,) + a.shape[1:]), a], axis=0),
                     axis=0)
    for i in range(n):
        lo = max(0, i - half)
        hi = min(n, i + half + 1)
        out[i] = (csum[hi] - csum[lo]) / (hi - lo)
    return out


class SemanticClassMap:
    """Name <-> id registry for semantic classes.

    Ids at or above `obstacle_base` are reserved for placed virtual objects
    and resolve to synthetic names ("obstacle_<k>").
    """

    REQUIRED = ("unlabeled", "track", "platform", "near_track_ground", "pole")

    def __init__(self, names: dict[str, int]):
        names = dict(names)
        if "obstacle_base" not in names:
            raise ValidationError("class map must declare obstacle_base")
        for req in self.REQUIRED:
            if req not in names:
                raise ValidationError(f"class map missing required class {req!r}")
        if names["unlabeled"] != 0:
            raise ValidationError("class 'unlabeled' must have id 0")
        ids = list(names.values())
        if len(set(ids)) != len(ids):
            raise ValidationError("class map ids must be unique")
        if any(i < 0 for i in ids):
            raise ValidationError("class map ids must be non-negative")
        self.obstacle_base = int(names["obstacle_base"])
        fixed = {k: v for k, v in names.items() if k != "obstacle_base"}
        if any(v >= self.obstacle_base for v in fixed.values()):
            raise ValidationError("fixed class ids must be below obstacle_base")
        self._name_to_id = names
        self._id_to_name = {v: k for k, v in fixed.items()}

    @classmethod
    def default(cls) -> "SemanticClassMap":
        return cls({
            "unlabeled": 0,
            "track": 1,
            "platform": 2,
            "near_track_ground": 3,
            "pole": 4,
            "obstacle_base": 10,
        })

    def id_of(self, name: str) -> int:
        try:
            return self._name_to_id[name]
        except KeyError:
            raise ValidationError(f"unknown semantic class {name!r}") from None

    def name_of(self, class_id: int) -> str:
        class_id = int(class_id)
        if class_id in self._id_to_name:
            return self._id_to_name[class_id]
        if class_id >= self.obstacle_base:
            return f"obstacle_{class_id - self.obstacle_base}"
        raise ValidationError(f"id {class_id} not registered in class map")

    def contains_id(self, class_id: int) -> bool:
        return int(class_id) in self._id_to_name or int(class_id) >= self.obstacle_base

    def to_dict(self) -> dict[str, int]:
        return dict(self._name_to_id)

    def validate_labels(self, labels: np.ndarray) -> None:
        """Check every label id resolves through this map."""
        ids = np.unique(np.asarray(labels))
        for i in ids:
            if not self.contains_id(int(i)):
                raise ValidationError(f"label id {int(i)} not in class map")


def project(cam: CameraModel, p_cam) -> tuple[float, float, float]:
    """Pinhole projection of a camera-frame point; see CameraModel.project."""
    return cam.project(p_cam)
