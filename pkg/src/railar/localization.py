"""Candidate pose sequences: raw GNSS passthrough, lidar odometry, and
centerline-projected refinement.

The odometry is a deliberately small point-to-point ICP: voxel downsample,
nearest-neighbor correspondences with a distance gate, closed-form rigid
alignment, constant-velocity initialization. Pose 0 is anchored to the raw
pose of frame 0 so all sources share a world frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .core import Pose, RigidTransform, TrackCenterline
from .errors import (
    EmptyCenterline,
    EmptyInput,
    IcpDiverged,
    SchemaViolation,
    TooFewPoints,
    ValidationError,
)
from .ingest import SequenceBundle, transform_from_json, transform_to_json

SOURCES = ("raw_gnss", "icp_odometry", "segmentation_refined")


class PoseSequence:
    """An ordered, stamped pose list tagged with its provenance."""

    __slots__ = ("poses", "source")

    def __init__(self, poses, source: str):
        if source not in SOURCES:
            raise ValidationError(f"unknown pose source {source!r}")
        poses = tuple(poses)
        ts = [p.timestamp for p in poses]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError("pose timestamps must be strictly increasing")
        self.poses = poses
        self.source = source

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i: int) -> Pose:
        return self.poses[i]

    def __iter__(self):
        return iter(self.poses)

    def positions(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3))
        return np.stack([p.position for p in self.poses])

    def timestamps(self) -> np.ndarray:
        return np.asarray([p.timestamp for p in self.poses])

    def with_source(self, source: str) -> "PoseSequence":
        return PoseSequence(self.poses, source)


def save_pose_sequence(seq: PoseSequence, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"source": seq.source,
           "poses": [{"timestamp": p.timestamp, **transform_to_json(p.transform)}
                     for p in seq.poses]}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_pose_sequence(path) -> PoseSequence:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON ({exc})") from exc
    source = doc.get("source")
    poses = []
    for k, pdoc in enumerate(doc.get("poses", [])):
        t = transform_from_json(pdoc, f"{path}.poses[{k}]")
        if "timestamp" not in pdoc:
            raise SchemaViolation(f"{path}.poses[{k}]: missing timestamp")
        poses.append(Pose(float(pdoc["timestamp"]), t))
    try:
        return PoseSequence(poses, source)
    except ValidationError as exc:
        raise SchemaViolation(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Raw GNSS

def raw_gnss(bundle: SequenceBundle) -> PoseSequence:
    """Pass through the per-frame poses recorded in the bundle."""
    return PoseSequence([rec.pose for rec in bundle.frames], "raw_gnss")


# ---------------------------------------------------------------------------
# ICP odometry

@dataclass(frozen=True)
class IcpParams:
    voxel: float = 0.5
    max_corr_dist: float = 1.0
    max_iters: int = 30
    trans_tol: float = 1e-4
    rot_tol: float = 1e-5

    def __post_init__(self):
        for name in ("voxel", "max_corr_dist", "max_iters", "trans_tol", "rot_tol"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"IcpParams.{name} must be positive")


def voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """Keep the first point (in index order) of every occupied voxel cell."""
    if voxel <= 0 or points.shape[0] == 0:
        return points
    cells = np.floor(points / voxel).astype(np.int64)
    _, first = np.unique(cells, axis=0, return_index=True)
    return points[np.sort(first)]


def _rotation_angle(rotation: np.ndarray) -> float:
    c = (np.trace(rotation) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def _best_rigid(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Closed-form least-squares rigid transform mapping source onto target."""
    cs = source.mean(axis=0)
    ct = target.mean(axis=0)
    h = (source - cs).T @ (target - ct)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform.orthonormalized(r, ct - r @ cs)


def icp_align(source: np.ndarray, target: np.ndarray, params: IcpParams,
              init: RigidTransform | None = None) -> RigidTransform:
    """Estimate T with T(source) ~ target by iterated point-to-point alignment.

    Both clouds should already be voxel-downsampled. Raises IcpDiverged when
    no correspondences fall within the distance gate.
    """
    t_est = init if init is not None else RigidTransform.identity()
    tree = cKDTree(target)
    for _ in range(params.max_iters):
        moved = t_est.apply(source)
        dist, idx = tree.query(moved, distance_upper_bound=params.max_corr_dist)
        valid = np.isfinite(dist)
        if valid.sum() < 3:
            raise IcpDiverged(
                f"{int(valid.sum())} correspondences within {params.max_corr_dist} m")
        delta = _best_rigid(moved[valid], target[idx[valid]])
        t_est = delta.compose(t_est)
        if (np.linalg.norm(delta.translation) < params.trans_tol
                and _rotation_angle(delta.rotation) < params.rot_tol):
            break
    return t_est


def icp_odometry(bundle: SequenceBundle, params: IcpParams = IcpParams(),
                 init_from_poses: bool = False,
                 exclude_ground: bool = False) -> PoseSequence:
    """Frame-to-frame ICP chained into world poses, anchored at raw pose 0.

    By default each pair starts from a constant-velocity guess (the previous
    relative transform, identity for the first pair) and matches the plain
    voxel-downsampled clouds.

    Two opt-in variants help on scenes that are mostly flat ground, where
    the ring sampling pattern travels with the sensor and point-to-point
    matching prefers zero motion: init_from_poses seeds each pair from the
    recorded per-frame poses instead, and exclude_ground drops ground-class
    points before matching (then only 30 points per frame are required).
    """
    n = bundle.n_frames
    if n == 0:
        return PoseSequence([], "icp_odometry")
    x = bundle.body_from_lidar
    x_inv = x.invert()
    ground_id = bundle.class_map.id_of("near_track_ground")
    min_pts = 30 if exclude_ground else 100

    downsampled = []
    for i in range(n):
        cloud = bundle.cloud(i)
        pts = cloud.points
        if exclude_ground:
            kept = pts[cloud.labels != ground_id]
            if kept.shape[0] >= 30:  # unlabeled clouds keep everything
                pts = kept
        pts = voxel_downsample(pts, params.voxel)
        if pts.shape[0] < min_pts:
            raise TooFewPoints(
                f"frame {i}: {pts.shape[0]} points after voxel downsampling, "
                f"need >= {min_pts}")
        downsampled.append(pts)

    world = [bundle.frames[0].pose.transform]
    prev_rel = RigidTransform.identity()
    for k in range(1, n):
        if init_from_poses:
            body_rel = bundle.frames[k - 1].pose.transform.invert().compose(
                bundle.frames[k].pose.transform)
            init = x_inv.compose(body_rel).compose(x)
        else:
            init = prev_rel
        # rel maps lidar_k coordinates into lidar_{k-1} coordinates
        rel = icp_align(downsampled[k], downsampled[k - 1], params, init=init)
        world.append(world[-1].compose(x).compose(rel).compose(x_inv))
        prev_rel = rel

    poses = [Pose(bundle.frames[i].pose.timestamp, world[i]) for i in range(n)]
    return PoseSequence(poses, "icp_odometry")


# ---------------------------------------------------------------------------
# Centerline refinement

def refine_with_centerline(raw: PoseSequence, centerline: TrackCenterline,
                           z_mode: str = "keep", z_offset: float = 0.0,
                           yaw_mode: str = "tangent",
                           tangent_smooth: int = 5) -> PoseSequence:
    """Snap each pose onto the track centerline.

    Position x,y are replaced by the exact closest point on the polyline.
    z is kept (z_mode="keep") or set to the centerline height plus z_offset
    (z_mode="centerline_offset"). Yaw is re-derived from the smoothed tangent
    at the projected arc length (yaw_mode="tangent", the default) or kept;
    pitch and roll always come from the raw pose.
    """
    if centerline is None or len(centerline) < 2:
        raise EmptyCenterline("refinement requires a centerline with >= 2 vertices")
    if len(raw) == 0:
        raise EmptyInput("cannot refine an empty pose sequence")
    if z_mode not in ("keep", "centerline_offset"):
        raise ValidationError(f"unknown z_mode {z_mode!r}")
    if yaw_mode not in ("keep", "tangent"):
        raise ValidationError(f"unknown yaw_mode {yaw_mode!r}")

    refined = []
    for pose in raw:
        s, foot = centerline.project_xy(pose.position)
        z = pose.position[2] if z_mode == "keep" else foot[2] + z_offset
        position = np.array([foot[0], foot[1], z])
        if yaw_mode == "tangent":
            tangent = centerline.tangent_at(s, smooth=tangent_smooth)
            yaw = math.atan2(tangent[1], tangent[0])
            _, pitch, roll = pose.transform.euler_zyx()
            rotation = RigidTransform.from_euler_zyx(yaw, pitch, roll, position)
        else:
            rotation = RigidTransform(pose.transform.rotation, position, check=False)
        refined.append(Pose(pose.timestamp, rotation))
    return PoseSequence(refined, "segmentation_refined")
