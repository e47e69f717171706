"""World-frame scene geometry from per-frame clouds and label masks.

The chain here goes: register clouds into one world cloud, paint semantic
labels onto points by projecting them into the label masks, then distill
geometry from the labeled cloud (ego-track centerline, planes, pole
clusters).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .core import (
    CameraModel,
    ImageBuffer,
    LabeledPointCloud,
    Pose,
    RigidTransform,
    TrackCenterline,
    _moving_average,
)
from .errors import (
    DegenerateInput,
    InsufficientTrackPoints,
    LengthMismatch,
    SchemaViolation,
    SizeMismatch,
    ValidationError,
)
from .ingest import SequenceBundle
from .localization import PoseSequence


# ---------------------------------------------------------------------------
# Cloud registration

def register_clouds(bundle: SequenceBundle, poses: PoseSequence,
                    voxel: float = 0.0) -> LabeledPointCloud:
    """Transform every frame cloud into the world and concatenate.

    With voxel > 0, duplicate points are removed by keeping the first point
    per voxel cell in frame-then-index order.
    """
    if len(poses) != bundle.n_frames:
        raise LengthMismatch(
            f"{len(poses)} poses for {bundle.n_frames} frames")
    pts_parts, label_parts, inten_parts = [], [], []
    have_intensity = True
    for i in range(bundle.n_frames):
        cloud = bundle.cloud(i)
        world_from_lidar = poses[i].transform.compose(bundle.body_from_lidar)
        pts_parts.append(world_from_lidar.apply(cloud.points))
        label_parts.append(cloud.labels)
        if cloud.intensity is None:
            have_intensity = False
        else:
            inten_parts.append(cloud.intensity)
    if not pts_parts:
        return LabeledPointCloud(np.zeros((0, 3)), frame="world")
    points = np.vstack(pts_parts)
    labels = np.concatenate(label_parts)
    intensity = np.concatenate(inten_parts) if have_intensity else None
    if voxel > 0 and points.shape[0]:
        cells = np.floor(points / voxel).astype(np.int64)
        _, first = np.unique(cells, axis=0, return_index=True)
        keep = np.sort(first)
        points = points[keep]
        labels = labels[keep]
        intensity = intensity[keep] if intensity is not None else None
    return LabeledPointCloud(points, labels, intensity, frame="world")


# ---------------------------------------------------------------------------
# Label projection

def label_points(cloud: LabeledPointCloud, mask: ImageBuffer, cam: CameraModel,
                 pose: Pose, depth_aware: bool = False,
                 delta: float = 1.0) -> LabeledPointCloud:
    """Paint mask labels onto world points visible from this frame's camera.

    Unlabeled points (label 0) projecting inside the mask take the mask
    value at the rounded pixel; already-labeled points keep their label
    (first label wins across repeated calls). In depth-aware mode a point is
    only labeled when its depth is within `delta` of the nearest projected
    point on its pixel, so far points behind structure stay unlabeled.
    """
    if mask.format != "LABEL16":
        raise ValidationError(f"label mask must be LABEL16, got {mask.format}")
    if (mask.width, mask.height) != (cam.width, cam.height):
        raise SizeMismatch(
            f"mask {mask.width}x{mask.height} vs camera {cam.width}x{cam.height}")
    camera_from_world = pose.transform.compose(cam.body_from_camera).invert()
    p_cam = camera_from_world.apply(cloud.points)
    z = p_cam[:, 2]
    front = z > 0
    u = np.zeros(len(cloud))
    v = np.zeros(len(cloud))
    u[front] = cam.fx * p_cam[front, 0] / z[front] + cam.cx
    v[front] = cam.fy * p_cam[front, 1] / z[front] + cam.cy
    ui = np.rint(u).astype(np.int64)
    vi = np.rint(v).astype(np.int64)
    visible = front & (ui >= 0) & (ui < cam.width) & (vi >= 0) & (vi < cam.height)

    eligible = visible & (cloud.labels == 0)
    if depth_aware:
        nearest = np.full(cam.height * cam.width, np.inf)
        lin = vi[visible] * cam.width + ui[visible]
        np.minimum.at(nearest, lin, z[visible])
        close = np.zeros(len(cloud), dtype=bool)
        close[visible] = z[visible] <= nearest[lin] + delta
        eligible &= close
    labels = cloud.labels.copy()
    labels[eligible] = mask.data[vi[eligible], ui[eligible]]
    return cloud.with_labels(labels)


# ---------------------------------------------------------------------------
# Centerline extraction

def _project_polyline_xy(points: np.ndarray, vertices: np.ndarray,
                         chunk: int = 20000):
    """Vectorized closest-point projection in the xy plane.

    Returns (s, dist): arc-length coordinate of the projection along the
    polyline (xy metric) and the horizontal distance, for each point. Ties
    go to the earliest segment, matching the scalar core routine.
    """
    a = vertices[:-1, :2]
    d = vertices[1:, :2] - a
    seg_len = np.linalg.norm(d, axis=1)
    keep = seg_len > 0
    a, d, seg_len = a[keep], d[keep], seg_len[keep]
    if a.shape[0] == 0:
        raise DegenerateInput("trajectory polyline has no horizontal extent")
    s0 = np.concatenate([[0.0], np.cumsum(seg_len)])[:-1]
    l2 = seg_len ** 2

    n = points.shape[0]
    s_out = np.empty(n)
    dist_out = np.empty(n)
    for lo in range(0, n, chunk):
        p = points[lo:lo + chunk, :2]
        rel = p[:, None, :] - a[None, :, :]
        tpar = np.clip((rel * d).sum(axis=2) / l2, 0.0, 1.0)
        foot = a + tpar[:, :, None] * d
        d2 = ((p[:, None, :] - foot) ** 2).sum(axis=2)
        k = np.argmin(d2, axis=1)  # first minimum
        rows = np.arange(p.shape[0])
        s_out[lo:lo + chunk] = s0[k] + tpar[rows, k] * seg_len[k]
        dist_out[lo:lo + chunk] = np.sqrt(d2[rows, k])
    return s_out, dist_out


def extend_gating_trajectory(traj: PoseSequence, distance_m: float,
                             spacing_m: float = 1.0) -> PoseSequence:
    """Dead-reckon the gating corridor past the last pose.

    The lidar observes rails well beyond the traveled section, but gating
    against the recorded trajectory clamps to its end and drops them.
    Appending phantom poses along the final pose's horizontal heading lets
    those returns contribute arc-length bins, so the smoothing window stays
    fully populated where the real poses sit. Only useful as the raw_traj
    argument of extract_centerline; the phantom poses carry no measurement.
    """
    if distance_m <= 0.0:
        return traj
    if len(traj) < 2:
        raise ValidationError("trajectory extension needs >= 2 poses")
    if spacing_m <= 0.0:
        raise ValidationError("spacing_m must be positive")
    last = traj.poses[-1]
    fwd = last.transform.rotation[:, 0].copy()
    fwd[2] = 0.0
    norm = np.linalg.norm(fwd)
    if norm < 1e-9:
        raise ValidationError("final pose heading is vertical; cannot extend")
    fwd /= norm
    dt = last.timestamp - traj.poses[-2].timestamp
    poses = list(traj.poses)
    for k in range(1, int(round(distance_m / spacing_m)) + 1):
        t = RigidTransform(last.transform.rotation,
                           last.transform.translation + k * spacing_m * fwd,
                           check=False)
        poses.append(Pose(last.timestamp + k * dt, t))
    return PoseSequence(poses, traj.source)


def extract_centerline(cloud: LabeledPointCloud, raw_traj: PoseSequence,
                       gate_m: float = 2.5, bin_m: float = 1.0,
                       min_pts: int = 5, smooth_bins: int = 5,
                       track_id: int = 1) -> TrackCenterline:
    """Distill the ego-track centerline from `track`-labeled points.

    Points farther than gate_m (horizontally) from the raw trajectory are
    dropped, which separates the ego track from parallel tracks. The rest
    are binned by trajectory arc length; each bin with at least min_pts
    points contributes its 3D centroid, and the centroid sequence is
    smoothed with a centered moving average before becoming the polyline.
    """
    if len(raw_traj) < 2:
        raise InsufficientTrackPoints("trajectory must contain >= 2 poses")
    track_pts = cloud.points[cloud.labels == track_id]
    if track_pts.shape[0] < min_pts:
        raise InsufficientTrackPoints(
            f"{track_pts.shape[0]} track points, need >= {min_pts}")

    traj = raw_traj.positions()
    s, dist = _project_polyline_xy(track_pts, traj)
    gated = dist <= gate_m
    kept = track_pts[gated]
    if kept.shape[0] < min_pts:
        raise InsufficientTrackPoints(
            f"{kept.shape[0]} track points within {gate_m} m of the trajectory")
    s = s[gated]

    bins = np.floor(s / bin_m).astype(np.int64)
    bins -= bins.min()
    counts = np.bincount(bins)
    sums = np.zeros((counts.shape[0], 3))
    for c in range(3):
        sums[:, c] = np.bincount(bins, weights=kept[:, c])
    ok = counts >= min_pts
    if ok.sum() < 2:
        raise InsufficientTrackPoints(
            f"only {int(ok.sum())} bins with >= {min_pts} points")
    centroids = sums[ok] / counts[ok, None]

    # a window rivaling the bin count averages every vertex toward the
    # global centroid and collapses the polyline; cap at half the bins
    half = centroids.shape[0] // 2
    window = min(smooth_bins, max(1, half if half % 2 else half - 1))
    smoothed = np.column_stack([
        _moving_average(centroids[:, c], window) for c in range(3)])
    # collapse consecutive duplicates so chord lengths stay positive
    step = np.linalg.norm(np.diff(smoothed, axis=0), axis=1)
    keep = np.concatenate([[True], step > 1e-9])
    vertices = smoothed[keep]
    if vertices.shape[0] < 2:
        raise InsufficientTrackPoints("centerline collapsed to a single vertex")
    return TrackCenterline(vertices)


# ---------------------------------------------------------------------------
# Plane fitting

@dataclass(frozen=True, eq=False)
class Plane:
    """n . p + d = 0 with unit normal oriented toward +z."""

    normal: np.ndarray
    d: float
    inlier_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    centroid: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def distance(self, points: np.ndarray) -> np.ndarray:
        return np.abs(points @ self.normal + self.d)


def fit_plane_ransac(points: np.ndarray, iters: int = 500,
                     threshold: float = 0.05, seed: int = 0) -> Plane:
    """Seeded RANSAC plane fit with an orthogonal least-squares refit.

    Every iteration draws 3 distinct indices from a fixed-seed generator;
    the highest inlier count wins, earlier iterations win ties. The final
    plane is re-fit on the winning inliers (centroid plus smallest principal
    direction) and its inlier set recomputed.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    m = pts.shape[0]
    if m < 3:
        raise DegenerateInput(f"{m} points, need >= 3")
    rng = np.random.default_rng(seed)
    best_count = -1
    best_normal = None
    best_d = 0.0
    for _ in range(iters):
        i, j, k = rng.choice(m, size=3, replace=False)
        n = np.cross(pts[j] - pts[i], pts[k] - pts[i])
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            continue  # collinear sample; the draw still advances the rng
        n = n / norm
        d = -float(n @ pts[i])
        count = int((np.abs(pts @ n + d) <= threshold).sum())
        if count > best_count:
            best_count, best_normal, best_d = count, n, d
    if best_normal is None:
        raise DegenerateInput("all RANSAC samples were collinear")

    inliers = np.flatnonzero(np.abs(pts @ best_normal + best_d) <= threshold)
    centroid = pts[inliers].mean(axis=0)
    # full_matrices would materialize an (n, n) U for the (n, 3) input
    _, _, vt = np.linalg.svd(pts[inliers] - centroid, full_matrices=False)
    normal = vt[2]
    normal = normal / np.linalg.norm(normal)
    if normal[2] < 0:
        normal = -normal
    d = -float(normal @ centroid)
    inliers = np.flatnonzero(np.abs(pts @ normal + d) <= threshold)
    return Plane(normal, d, inliers, centroid)


# ---------------------------------------------------------------------------
# Pole clustering

@dataclass(frozen=True, eq=False)
class PoleCluster:
    member_indices: np.ndarray
    centroid: np.ndarray
    z_extent: tuple[float, float]


def cluster_poles(points: np.ndarray, eps: float, min_pts: int) -> list[PoleCluster]:
    """Density clustering (DBSCAN semantics) with index-ordered expansion.

    A point is core when it has >= min_pts neighbors within eps (itself
    included). Clusters are grown breadth-first from the lowest-index
    unvisited core point, so numbering and border assignment are
    deterministic. Noise points are excluded from the result.
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    if min_pts < 1:
        raise ValidationError("min_pts must be >= 1")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    m = pts.shape[0]
    if m == 0:
        return []
    tree = cKDTree(pts)
    neighbors = [sorted(nb) for nb in tree.query_ball_point(pts, eps)]
    is_core = np.array([len(nb) >= min_pts for nb in neighbors])

    UNSEEN, NOISE = -2, -1
    assignment = np.full(m, UNSEEN, dtype=np.int64)
    clusters: list[list[int]] = []
    for i in range(m):
        if assignment[i] != UNSEEN:
            continue
        if not is_core[i]:
            assignment[i] = NOISE  # may still join a later cluster as border
            continue
        cid = len(clusters)
        members = [i]
        assignment[i] = cid
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for k in neighbors[j]:
                if assignment[k] in (UNSEEN, NOISE):
                    assignment[k] = cid
                    members.append(k)
                    if is_core[k]:
                        queue.append(k)
        clusters.append(members)

    out = []
    for members in clusters:
        idx = np.array(sorted(members), dtype=np.int64)
        sub = pts[idx]
        out.append(PoleCluster(idx, sub.mean(axis=0),
                               (float(sub[:, 2].min()), float(sub[:, 2].max()))))
    return out


# ---------------------------------------------------------------------------
# Persistence of extraction results

def save_centerline(cl: TrackCenterline, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"vertices": [[float(c) for c in v] for v in cl.vertices],
           "arclengths": [float(s) for s in cl.arclengths]}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_centerline(path) -> TrackCenterline:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON ({exc})") from exc
    if "vertices" not in doc:
        raise SchemaViolation(f"{path}: missing field 'vertices'")
    try:
        return TrackCenterline(np.asarray(doc["vertices"], dtype=np.float64),
                               np.asarray(doc["arclengths"], dtype=np.float64)
                               if "arclengths" in doc else None)
    except (ValidationError, ValueError) as exc:
        raise SchemaViolation(f"{path}: {exc}") from exc


def save_geometry_summary(planes: list[Plane], clusters: list[PoleCluster],
                          path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "planes": [{"normal": [float(c) for c in p.normal], "d": float(p.d),
                    "centroid": [float(c) for c in p.centroid],
                    "n_inliers": int(p.inlier_indices.shape[0])}
                   for p in planes],
        "pole_clusters": [{"centroid": [float(c) for c in c_.centroid],
                           "z_extent": [c_.z_extent[0], c_.z_extent[1]],
                           "n_members": int(c_.member_indices.shape[0])}
                          for c_ in clusters],
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_geometry_summary(path) -> tuple[list[Plane], list[dict]]:
    """Planes come back without inlier indices; clusters as plain summaries."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON ({exc})") from exc
    planes = [Plane(np.asarray(p["normal"], dtype=np.float64), float(p["d"]),
                    centroid=np.asarray(p["centroid"], dtype=np.float64))
              for p in doc.get("planes", [])]
    return planes, doc.get("pole_clusters", [])
