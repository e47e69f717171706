"""Reprojection-error metrics for augmented sequences.

A single hand-annotated image feature is tied to a 3D calibration point
picked from the registered cloud. Projecting that point through each
localization variant and comparing against the annotations gives the
per-frame reprojection pixel error (RPE) and its frame-to-frame jitter,
aggregated per camera and per pose source.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import CameraModel, LabeledPointCloud, Pose
from .errors import (
    CalibrationPointNotVisible,
    EmptyInput,
    NoAnnotationAtFrame,
    NoVisiblePoints,
    SchemaViolation,
    TooFewAnnotations,
    TooShort,
    ValidationError,
)
from .ingest import CalibrationAnnotation, SequenceBundle
from .localization import PoseSequence


@dataclass(frozen=True)
class CalibrationPoint:
    """World-frame 3D point whose projection tracks the annotated feature."""

    position: np.ndarray
    source_index: int
    ref_frame: int

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(p)):
            raise ValidationError("calibration point must be finite")
        object.__setattr__(self, "position", p)


def _camera_from_world(pose: Pose, cam: CameraModel):
    return pose.transform.compose(cam.body_from_camera).invert()


def select_calibration_point(cloud: LabeledPointCloud,
                             ann: CalibrationAnnotation,
                             cam: CameraModel,
                             poses: PoseSequence,
                             ref_frame: int = 0,
                             extra_frames: list[int] | None = None) -> CalibrationPoint:
    """Pick the cloud point whose projection lands closest to the annotation.

    Candidates must project in front of the camera and inside the image at
    the reference frame. With `extra_frames` the summed pixel distance over
    all those frames is minimized instead (the point must be annotated and
    projectable in each). Ties go to the smallest point index.
    """
    if len(cloud) == 0:
        raise NoVisiblePoints("empty cloud")
    frames = [ref_frame] + list(extra_frames or [])
    total = np.zeros(len(cloud))
    usable = np.ones(len(cloud), dtype=bool)
    for frame in frames:
        gt = ann.at(frame)
        if gt is None:
            raise NoAnnotationAtFrame(f"no annotation at frame {frame}")
        if not 0 <= frame < len(poses):
            raise SchemaViolation(f"frame {frame} outside the pose sequence")
        cam_from_world = _camera_from_world(poses[frame], cam)
        uv, _, valid = cam.project_points(cam_from_world.apply(cloud.points))
        inside = valid & cam.contains(uv[:, 0], uv[:, 1])
        usable &= inside
        d = np.hypot(uv[:, 0] - gt[0], uv[:, 1] - gt[1])
        total += np.where(inside, d, np.inf)
    if not usable.any():
        raise NoVisiblePoints(
            f"no cloud point projects into the image at frame(s) {frames}")
    best = int(np.argmin(total))  # first minimum wins ties
    return CalibrationPoint(cloud.points[best], best, ref_frame)


def compute_rpe(gt, p) -> float:
    """Euclidean pixel distance between annotated and projected positions."""
    gu, gv = (float(x) for x in gt)
    pu, pv = (float(x) for x in p)
    if not all(map(math.isfinite, (gu, gv, pu, pv))):
        raise ValidationError("pixel coordinates must be finite")
    return math.hypot(gu - pu, gv - pv)


def compute_jitter(rpe) -> np.ndarray:
    """Absolute forward differences of the per-frame error series."""
    r = np.asarray(rpe, dtype=np.float64).reshape(-1)
    if r.shape[0] < 2:
        raise TooShort(f"jitter needs >= 2 errors, got {r.shape[0]}")
    return np.abs(np.diff(r))


@dataclass(frozen=True)
class MetricsReport:
    """Per-(camera, source) reprojection statistics with per-frame detail."""

    sequence: str
    camera_id: str
    source: str
    frames: tuple[int, ...]
    gt: np.ndarray           # (n, 2) annotated pixels
    projected: np.ndarray    # (n, 2) analytic projections
    rpe: np.ndarray = field(default=None)
    jitter: np.ndarray = field(default=None)

    def __post_init__(self):
        gt = np.asarray(self.gt, dtype=np.float64).reshape(-1, 2)
        pr = np.asarray(self.projected, dtype=np.float64).reshape(-1, 2)
        if gt.shape != pr.shape or gt.shape[0] != len(self.frames):
            raise ValidationError("gt/projected/frames lengths disagree")
        rpe = (np.asarray(self.rpe, dtype=np.float64).reshape(-1)
               if self.rpe is not None
               else np.linalg.norm(gt - pr, axis=1))
        jitter = (np.asarray(self.jitter, dtype=np.float64).reshape(-1)
                  if self.jitter is not None else np.abs(np.diff(rpe)))
        if rpe.shape[0] != gt.shape[0] or jitter.shape[0] != rpe.shape[0] - 1:
            raise ValidationError("rpe/jitter lengths inconsistent")
        if rpe.size and rpe.min() < 0:
            raise ValidationError("rpe must be nonnegative")
        object.__setattr__(self, "gt", gt)
        object.__setattr__(self, "projected", pr)
        object.__setattr__(self, "rpe", rpe)
        object.__setattr__(self, "jitter", jitter)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def mean_rpe(self) -> float:
        return float(self.rpe.mean())

    @property
    def std_rpe(self) -> float:
        return float(self.rpe.std())  # population

    @property
    def mean_jitter(self) -> float:
        return float(self.jitter.mean())

    @property
    def std_jitter(self) -> float:
        return float(self.jitter.std())

    def to_dict(self) -> dict:
        return {
            "sequence": self.sequence,
            "camera": self.camera_id,
            "source": self.source,
            "frames": list(self.frames),
            "gt": self.gt.tolist(),
            "projected": self.projected.tolist(),
            "rpe": self.rpe.tolist(),
            "jitter": self.jitter.tolist(),
            "mean_rpe": self.mean_rpe,
            "std_rpe": self.std_rpe,
            "mean_jitter": self.mean_jitter,
            "std_jitter": self.std_jitter,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricsReport":
        return cls(sequence=doc["sequence"], camera_id=doc["camera"],
                   source=doc["source"], frames=tuple(doc["frames"]),
                   gt=np.asarray(doc["gt"]),
                   projected=np.asarray(doc["projected"]),
                   rpe=np.asarray(doc["rpe"]),
                   jitter=np.asarray(doc["jitter"]))


def project_calibration_point(calib: CalibrationPoint, cam: CameraModel,
                              pose: Pose, frame: int | None = None):
    """Analytic pixel position of the calibration point in one frame."""
    p_cam = _camera_from_world(pose, cam).apply(calib.position)
    if p_cam[2] <= 0.0:
        where = f" at frame {frame}" if frame is not None else ""
        raise CalibrationPointNotVisible(
            f"calibration point behind the camera{where} (z={p_cam[2]:.3g})")
    u, v, _ = cam.project(p_cam)
    return u, v


def rendered_point_estimate(calib: CalibrationPoint, cam: CameraModel,
                            pose: Pose, radius: float = 0.15):
    """Cross-check: render a small sphere at the calibration point and take
    the centroid of its stencil pixels. Agrees with the analytic projection
    up to pixel discretization."""
    from .render import build_sphere_mesh, render_frame
    sphere = build_sphere_mesh(calib.position, radius)
    fr = render_frame([sphere], cam, pose)
    ys, xs = np.nonzero(fr.mask.data == sphere.stencil_id)
    if xs.size == 0:
        raise CalibrationPointNotVisible("rendered sphere not visible")
    return float(xs.mean()), float(ys.mean())


def evaluate_sequence(bundle: SequenceBundle, poses: PoseSequence,
                      camera_id: str, calib: CalibrationPoint,
                      ann: CalibrationAnnotation) -> MetricsReport:
    """Project the calibration point through every annotated frame's pose
    and score it against the hand annotations."""
    if camera_id not in bundle.cameras:
        raise SchemaViolation(f"unknown camera {camera_id!r}")
    cam = bundle.cameras[camera_id]
    frames = ann.frame_indices()
    if len(frames) < 2:
        raise TooFewAnnotations(
            f"need >= 2 annotated frames, got {len(frames)}")
    if len(poses) != bundle.n_frames:
        raise ValidationError("pose sequence length != bundle frames")
    gt = []
    projected = []
    for frame in frames:
        if not 0 <= frame < len(poses):
            raise SchemaViolation(f"annotated frame {frame} outside sequence")
        gt.append(ann.at(frame))
        projected.append(
            project_calibration_point(calib, cam, poses[frame], frame))
    return MetricsReport(
        sequence=bundle.root.name, camera_id=camera_id, source=poses.source,
        frames=tuple(frames), gt=np.asarray(gt), projected=np.asarray(projected))


def frame_offsets(report: MetricsReport) -> dict[int, tuple[float, float]]:
    """Per-frame (du, dv) = annotation - projection, the compensation shift
    that moves the rendered layer onto the annotated position."""
    delta = report.gt - report.projected
    return {frame: (float(du), float(dv))
            for frame, (du, dv) in zip(report.frames, delta)}


def write_report(reports: list[MetricsReport], path) -> Path:
    """CSV table plus a companion .txt with the mean-plus-minus-std layout."""
    if not reports:
        raise EmptyInput("no metric reports to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ("sequence,camera,source,mean_rpe,std_rpe,"
              "mean_jitter,std_jitter,n_frames")
    rows = [header]
    for r in reports:
        rows.append(f"{r.sequence},{r.camera_id},{r.source},"
                    f"{r.mean_rpe:.2f},{r.std_rpe:.2f},"
                    f"{r.mean_jitter:.2f},{r.std_jitter:.2f},{r.n_frames}")
    path.write_text("\n".join(rows) + "\n")
    lines = []
    for r in reports:
        lines.append(f"{r.sequence} {r.camera_id} {r.source}: "
                     f"RPE {r.mean_rpe:.1f} ± {r.std_rpe:.1f} px, "
                     f"J {r.mean_jitter:.1f} ± {r.std_jitter:.1f} px "
                     f"(n={r.n_frames})")
    path.with_suffix(".txt").write_text("\n".join(lines) + "\n")
    return path


def save_metrics_json(reports: list[MetricsReport], path) -> Path:
    if not reports:
        raise EmptyInput("no metric reports to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"reports": [r.to_dict() for r in reports]}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_metrics_json(path) -> list[MetricsReport]:
    doc = json.loads(Path(path).read_text())
    return [MetricsReport.from_dict(r) for r in doc["reports"]]
