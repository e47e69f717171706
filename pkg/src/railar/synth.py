"""Synthetic rail scenes with exact ground truth.

A procedural world (ground plane, two rail ribbons, a platform slab, poles)
is sampled by a simulated lidar and two pinhole cameras that ride a train
along the track at constant speed. The emitted bundle looks exactly like a
recorded sequence, but the generator also writes the true poses, the true
centerline, and a calibration feature with its exact pixel projections so
every downstream stage can be scored quantitatively.

GNSS corruption is a smooth lateral sinusoid plus per-frame white noise,
seeded and split by frame index so regeneration order never matters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import (
    LabeledPointCloud,
    Pose,
    RigidTransform,
    SemanticClassMap,
    TrackCenterline,
)
from .errors import ValidationError
from .ingest import (
    CalibrationAnnotation,
    LightModel,
    ObjectPlacement,
    SceneConfig,
    SequenceBundle,
    load_sequence,
    save_annotations,
    save_image,
    save_pointcloud,
    save_scene_config,
    transform_to_json,
    transform_from_json,
)
from .localization import PoseSequence
from .render import (
    TriangleMesh,
    build_pole_mesh,
    build_scene,
    build_track_mesh,
    render_frame,
)
from .scene_extract import PoleCluster

RAIL_WIDTH = 0.10
RAIL_HEIGHT = 0.05
POLE_FOOTPRINT = 0.3

# forward-looking camera: x-right -> -y_body, y-down -> -z_body, z-fwd -> +x_body
_R_BODY_FROM_CAMERA = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])


@dataclass(frozen=True)
class TrackSpec:
    kind: str = "straight"          # straight | arc
    length: float = 200.0
    radius: float = 150.0           # arc only

    def __post_init__(self):
        if self.kind not in ("straight", "arc"):
            raise ValidationError(f"unknown track kind {self.kind!r}")
        if self.length <= 0:
            raise ValidationError("track length must be positive")
        if self.kind == "arc" and self.radius <= 0:
            raise ValidationError("arc radius must be positive")


@dataclass(frozen=True)
class GnssNoiseSpec:
    lateral_drift_amp: float = 0.5   # m
    drift_period: float = 50.0       # m of arc length
    white_sigma: float = 0.05        # m, applied to x and y
    seed: int = 42

    def __post_init__(self):
        if self.lateral_drift_amp < 0 or self.white_sigma < 0:
            raise ValidationError("noise magnitudes must be >= 0")
        if self.drift_period <= 0:
            raise ValidationError("drift period must be positive")


@dataclass(frozen=True)
class LidarSpec:
    # 1 degree azimuth / ~0.6 degree elevation: fine enough that the 10 cm
    # rail heads collect returns at every usable depression angle
    n_rays_h: int = 360
    n_rays_v: int = 48
    v_fov_deg: tuple[float, float] = (-20.0, 8.0)
    max_range: float = 120.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.n_rays_h < 1 or self.n_rays_v < 1:
            raise ValidationError("ray counts must be positive")
        if self.max_range <= 0 or self.noise_sigma < 0:
            raise ValidationError("bad lidar range/noise")


@dataclass(frozen=True)
class CameraSpec:
    camera_id: str
    fx: float
    fy: float
    width: int = 640
    height: int = 480
    mount_t: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def model(self):
        from .core import CameraModel
        return CameraModel(self.fx, self.fy,
                           (self.width - 1) / 2.0, (self.height - 1) / 2.0,
                           self.width, self.height,
                           RigidTransform(_R_BODY_FROM_CAMERA, self.mount_t))


@dataclass(frozen=True)
class PoleSpec:
    s: float
    lateral: float
    height: float


def _default_poles() -> tuple[PoleSpec, ...]:
    # the first pole carries the calibration feature
    poles = [PoleSpec(150.0, -3.0, 6.0)]
    side = 1.0
    s = 20.0
    while s < 200.0:
        poles.append(PoleSpec(s, 4.0 * side, 6.0))
        side = -side
        s += 22.0
    return tuple(poles)


@dataclass(frozen=True)
class SynthScenario:
    track: TrackSpec = field(default_factory=TrackSpec)
    half_gauge: float = 0.7175
    speed: float = 10.0              # m/s
    dt: float = 0.1                  # s between frames
    n_frames: int = 100
    body_height: float = 2.0         # sensor platform above the ground
    gnss: GnssNoiseSpec = field(default_factory=GnssNoiseSpec)
    lidar: LidarSpec = field(default_factory=LidarSpec)
    cameras: tuple[CameraSpec, ...] = (
        CameraSpec("cam_wide", 500.0, 500.0),
        CameraSpec("cam_tele", 900.0, 900.0, mount_t=(0.0, -0.4, 0.3)),
    )
    poles: tuple[PoleSpec, ...] = field(default_factory=_default_poles)
    platform: tuple[float, float, float, float, float] | None = \
        (60.0, 140.0, 2.5, 5.5, 0.76)   # (s0, s1, lat0, lat1, top z)

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValidationError("need at least 2 frames")
        if min(self.half_gauge, self.speed, self.dt, self.body_height) <= 0:
            raise ValidationError("physical parameters must be positive")
        if not self.cameras:
            raise ValidationError("at least one camera required")
        if self.frame_arclengths()[-1] > self.track.length:
            raise ValidationError("frames run past the end of the track")

    def frame_spacing(self) -> float:
        return self.speed * self.dt

    def frame_arclengths(self) -> np.ndarray:
        return np.arange(self.n_frames) * self.frame_spacing()

    @classmethod
    def standard(cls, **overrides) -> "SynthScenario":
        return replace(cls(), **overrides) if overrides else cls()


# ---------------------------------------------------------------------------
# Analytic track frame

def track_frame(track: TrackSpec, s) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(position, tangent, left normal) on the ground plane at arc length s.

    Arrays broadcast: scalar s gives (3,), vector s gives (n, 3).
    """
    s = np.asarray(s, dtype=np.float64)
    zeros = np.zeros_like(s)
    if track.kind == "straight":
        pos = np.stack([s, zeros, zeros], axis=-1)
        tan = np.stack([np.ones_like(s), zeros, zeros], axis=-1)
        left = np.stack([zeros, np.ones_like(s), zeros], axis=-1)
    else:
        theta = s / track.radius
        pos = np.stack([track.radius * np.sin(theta),
                        track.radius * (1.0 - np.cos(theta)), zeros], axis=-1)
        tan = np.stack([np.cos(theta), np.sin(theta), zeros], axis=-1)
        left = np.stack([-np.sin(theta), np.cos(theta), zeros], axis=-1)
    return pos, tan, left


def _heading(track: TrackSpec, s: float) -> float:
    return 0.0 if track.kind == "straight" else s / track.radius


def true_centerline(scn: SynthScenario, step: float = 1.0) -> TrackCenterline:
    """Track centerline at rail-top height, sampled every `step` meters."""
    n = max(2, int(math.floor(scn.track.length / step)) + 1)
    s = np.linspace(0.0, (n - 1) * step, n)
    pos, _, _ = track_frame(scn.track, s)
    pos = pos.copy()
    pos[:, 2] = RAIL_HEIGHT
    return TrackCenterline(pos)


def true_poses(scn: SynthScenario) -> list[Pose]:
    poses = []
    for i, s in enumerate(scn.frame_arclengths()):
        pos, _, _ = track_frame(scn.track, float(s))
        t = RigidTransform.from_euler_zyx(
            _heading(scn.track, float(s)), 0.0, 0.0,
            translation=(pos[0], pos[1], scn.body_height))
        poses.append(Pose(i * scn.dt, t))
    return poses


def gnss_poses(scn: SynthScenario) -> list[Pose]:
    """True poses corrupted laterally by a drift sinusoid plus white noise.

    The random stream is split per frame from (seed, frame index), so the
    result does not depend on generation order.
    """
    out = []
    for i, s in enumerate(scn.frame_arclengths()):
        pos, _, left = track_frame(scn.track, float(s))
        drift = scn.gnss.lateral_drift_amp * math.sin(
            2.0 * math.pi * float(s) / scn.gnss.drift_period)
        rng = np.random.default_rng(np.random.SeedSequence([scn.gnss.seed, i]))
        white = rng.normal(0.0, scn.gnss.white_sigma, 2) \
            if scn.gnss.white_sigma > 0 else np.zeros(2)
        x = pos[0] + drift * left[0] + white[0]
        y = pos[1] + drift * left[1] + white[1]
        t = RigidTransform.from_euler_zyx(
            _heading(scn.track, float(s)), 0.0, 0.0,
            translation=(x, y, scn.body_height))
        out.append(Pose(i * scn.dt, t))
    return out


# ---------------------------------------------------------------------------
# World geometry

def _rail_polyline(scn: SynthScenario, side: float, step: float = 2.0):
    n = max(2, int(math.floor(scn.track.length / step)) + 1)
    s = np.linspace(0.0, (n - 1) * step, n)
    pos, _, left = track_frame(scn.track, s)
    return pos + scn.half_gauge * side * left


def build_scene_meshes(scn: SynthScenario,
                       class_map: SemanticClassMap | None = None) -> list[TriangleMesh]:
    """World meshes with semantic stencils: rails (track), platform, ground,
    poles. The same soup drives lidar simulation and mask rendering."""
    cm = class_map if class_map is not None else SemanticClassMap.default()
    meshes = []
    for side in (1.0, -1.0):
        rail = TrackCenterline(_rail_polyline(scn, side))
        meshes.append(build_track_mesh(rail, RAIL_WIDTH, RAIL_HEIGHT,
                                       stencil_id=cm.id_of("track"),
                                       base_color=(90.0, 90.0, 95.0)))
    margin = 20.0
    x0, x1 = -margin, scn.track.length + 3 * margin
    y0, y1 = -margin, margin
    if scn.track.kind == "arc":
        # generous box around the curve footprint
        y1 = scn.track.length + margin
    ground = TriangleMesh(
        np.array([[x0, y0, 0.0], [x1, y0, 0.0], [x1, y1, 0.0], [x0, y1, 0.0]]),
        np.array([[0, 1, 2], [0, 2, 3]]),
        base_color=(110.0, 105.0, 95.0),
        stencil_id=cm.id_of("near_track_ground"))
    meshes.append(ground)
    if scn.platform is not None:
        s0, s1, lat0, lat1, top = scn.platform
        p00, _, l00 = track_frame(scn.track, s0)
        p10, _, l10 = track_frame(scn.track, s1)
        corners = np.array([
            p00 + lat0 * l00, p10 + lat0 * l10,
            p10 + lat1 * l10, p00 + lat1 * l00,
        ])
        bottom = corners.copy()
        bottom[:, 2] = 0.0
        verts = np.vstack([bottom, bottom + [0.0, 0.0, top]])
        tris = np.array([
            [0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7],
            [0, 1, 5], [0, 5, 4], [1, 2, 6], [1, 6, 5],
            [2, 3, 7], [2, 7, 6], [3, 0, 4], [3, 4, 7],
        ])
        meshes.append(TriangleMesh(verts, tris, (160.0, 160.0, 150.0),
                                   cm.id_of("platform")))
    for pole in scn.poles:
        pos, _, left = track_frame(scn.track, pole.s)
        center = pos + pole.lateral * left
        cluster = PoleCluster(member_indices=np.zeros(0, dtype=np.int64),
                              centroid=center,
                              z_extent=(0.0, pole.height))
        meshes.append(build_pole_mesh(cluster, POLE_FOOTPRINT,
                                      stencil_id=cm.id_of("pole"),
                                      base_color=(130.0, 130.0, 135.0)))
    return meshes


BODY_FROM_LIDAR = RigidTransform.from_translation(0.0, 0.0, 0.5)


def _lidar_directions(spec: LidarSpec) -> np.ndarray:
    az = 2.0 * math.pi * np.arange(spec.n_rays_h) / spec.n_rays_h
    el = np.radians(np.linspace(spec.v_fov_deg[0], spec.v_fov_deg[1],
                                spec.n_rays_v))
    azg, elg = np.meshgrid(az, el)
    return np.column_stack([
        (np.cos(elg) * np.cos(azg)).ravel(),
        (np.cos(elg) * np.sin(azg)).ravel(),
        np.sin(elg).ravel(),
    ])


def calibration_feature(scn: SynthScenario, scene=None) -> np.ndarray:
    """World point on the first pole's surface at 90% height, found by
    casting a ray from the frame-0 sensor toward the pole axis. Exact by
    construction: the targeted lidar rays hit this same point."""
    if not scn.poles:
        raise ValidationError("scenario has no poles to calibrate against")
    if scene is None:
        scene = build_scene(build_scene_meshes(scn))
    pole = scn.poles[0]
    pos, _, left = track_frame(scn.track, pole.s)
    target = pos + pole.lateral * left + [0.0, 0.0, 0.9 * pole.height]
    origin = _lidar_origin(scn, true_poses(scn)[0]).translation
    d = target - origin
    t, idx = scene.cast(origin[None, :], d[None, :])
    if idx[0] < 0:
        raise ValidationError("calibration pole not visible from frame 0")
    return origin + t[0] * d


def _lidar_origin(scn: SynthScenario, pose: Pose) -> RigidTransform:
    return pose.transform.compose(BODY_FROM_LIDAR)


def simulate_lidar_frame(scn: SynthScenario, scene, pose: Pose,
                         frame_index: int,
                         feature: np.ndarray | None = None) -> LabeledPointCloud:
    """One scan: the regular ray grid plus (when a feature is given) a small
    fan of noise-free rays aimed at the calibration feature."""
    world_from_lidar = _lidar_origin(scn, pose)
    r = world_from_lidar.rotation
    origin = world_from_lidar.translation

    dirs_l = _lidar_directions(scn.lidar)
    dirs_w = dirs_l @ r.T
    origins = np.broadcast_to(origin, dirs_w.shape)
    t, idx = scene.cast(origins, dirs_w)
    hit = (idx >= 0) & (t <= scn.lidar.max_range)
    t = t[hit]
    if scn.lidar.noise_sigma > 0:
        rng = np.random.default_rng(
            np.random.SeedSequence([scn.gnss.seed, 7919, frame_index]))
        t = t + rng.normal(0.0, scn.lidar.noise_sigma, t.shape)
    points = dirs_l[hit] * t[:, None]
    labels = scene.tri_stencil[idx[hit]].astype(np.uint16)

    if feature is not None:
        # Targeted rays at the calibration feature, exempt from range limit
        # and noise: the feature must be measured in every frame. The fan is
        # half a milliradian wide so it stays on the pole face.
        d_w = feature - origin
        extra_w = [d_w]
        for da in (-5e-4, 0.0, 5e-4):
            for db in (-5e-4, 0.0, 5e-4):
                if da == 0.0 and db == 0.0:
                    continue
                extra_w.append(d_w + np.array([0.0, da, db]) * np.linalg.norm(d_w))
        extra_w = np.asarray(extra_w)
        te, ie = scene.cast(np.broadcast_to(origin, extra_w.shape), extra_w)
        keep = ie >= 0
        if keep.any():
            extra_l = extra_w[keep] @ r  # world -> lidar rotation
            points = np.vstack([points, extra_l * te[keep, None]])
            labels = np.concatenate(
                [labels, scene.tri_stencil[ie[keep]].astype(np.uint16)])
    return LabeledPointCloud(points, labels, frame="lidar")


# ---------------------------------------------------------------------------
# Ground truth container

@dataclass(frozen=True)
class GroundTruth:
    scenario: SynthScenario
    poses: tuple[Pose, ...]
    centerline: TrackCenterline
    feature: np.ndarray
    feature_pixels: dict           # camera_id -> {frame: (u, v)}

    def pose_sequence(self) -> PoseSequence:
        return PoseSequence(list(self.poses), "raw_gnss")


def _scenario_to_dict(scn: SynthScenario) -> dict:
    return {
        "track": {"kind": scn.track.kind, "length": scn.track.length,
                  "radius": scn.track.radius},
        "half_gauge": scn.half_gauge,
        "speed": scn.speed,
        "dt": scn.dt,
        "n_frames": scn.n_frames,
        "body_height": scn.body_height,
        "gnss": {"lateral_drift_amp": scn.gnss.lateral_drift_amp,
                 "drift_period": scn.gnss.drift_period,
                 "white_sigma": scn.gnss.white_sigma,
                 "seed": scn.gnss.seed},
        "lidar": {"n_rays_h": scn.lidar.n_rays_h,
                  "n_rays_v": scn.lidar.n_rays_v,
                  "v_fov_deg": list(scn.lidar.v_fov_deg),
                  "max_range": scn.lidar.max_range,
                  "noise_sigma": scn.lidar.noise_sigma},
        "cameras": [{"camera_id": c.camera_id, "fx": c.fx, "fy": c.fy,
                     "width": c.width, "height": c.height,
                     "mount_t": list(c.mount_t)} for c in scn.cameras],
        "poles": [{"s": p.s, "lateral": p.lateral, "height": p.height}
                  for p in scn.poles],
        "platform": list(scn.platform) if scn.platform is not None else None,
    }


def _scenario_from_dict(doc: dict) -> SynthScenario:
    return SynthScenario(
        track=TrackSpec(**doc["track"]),
        half_gauge=doc["half_gauge"],
        speed=doc["speed"],
        dt=doc["dt"],
        n_frames=doc["n_frames"],
        body_height=doc["body_height"],
        gnss=GnssNoiseSpec(**doc["gnss"]),
        lidar=LidarSpec(n_rays_h=doc["lidar"]["n_rays_h"],
                        n_rays_v=doc["lidar"]["n_rays_v"],
                        v_fov_deg=tuple(doc["lidar"]["v_fov_deg"]),
                        max_range=doc["lidar"]["max_range"],
                        noise_sigma=doc["lidar"]["noise_sigma"]),
        cameras=tuple(CameraSpec(camera_id=c["camera_id"], fx=c["fx"],
                                 fy=c["fy"], width=c["width"],
                                 height=c["height"],
                                 mount_t=tuple(c["mount_t"]))
                      for c in doc["cameras"]),
        poles=tuple(PoleSpec(**p) for p in doc["poles"]),
        platform=tuple(doc["platform"]) if doc["platform"] is not None else None,
    )


def save_scenario(scn: SynthScenario, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_scenario_to_dict(scn), indent=2,
                               sort_keys=True) + "\n")
    return path


def load_scenario(path) -> SynthScenario:
    return _scenario_from_dict(json.loads(Path(path).read_text()))


def save_truth(truth: GroundTruth, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "scenario": _scenario_to_dict(truth.scenario),
        "poses": [{"timestamp": p.timestamp,
                   **transform_to_json(p.transform)} for p in truth.poses],
        "centerline": {"vertices": truth.centerline.vertices.tolist()},
        "feature": truth.feature.tolist(),
        "feature_pixels": {cam: {str(f): [u, v] for f, (u, v) in sorted(px.items())}
                           for cam, px in truth.feature_pixels.items()},
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_truth(path) -> GroundTruth:
    doc = json.loads(Path(path).read_text())
    poses = tuple(Pose(p["timestamp"],
                       transform_from_json(p, f"{path}.poses"))
                  for p in doc["poses"])
    pixels = {cam: {int(f): tuple(uv) for f, uv in px.items()}
              for cam, px in doc["feature_pixels"].items()}
    return GroundTruth(
        scenario=_scenario_from_dict(doc["scenario"]),
        poses=poses,
        centerline=TrackCenterline(np.asarray(doc["centerline"]["vertices"])),
        feature=np.asarray(doc["feature"], dtype=np.float64),
        feature_pixels=pixels,
    )


# ---------------------------------------------------------------------------
# Bundle generation

_BOX_OBJ = """\
v -0.5 -0.5 -0.5
v 0.5 -0.5 -0.5
v 0.5 0.5 -0.5
v -0.5 0.5 -0.5
v -0.5 -0.5 0.5
v 0.5 -0.5 0.5
v 0.5 0.5 0.5
v -0.5 0.5 0.5
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 2 3 7 6
f 3 4 8 7
f 4 1 5 8
"""


def default_scene_config(scn: SynthScenario, feature: np.ndarray,
                         root: Path) -> SceneConfig:
    """Obstacles for the augmentation pipeline: one box on the track, one on
    the platform, and the calibration sphere at the feature point."""
    # keep the on-track box reachable: the extracted centerline only spans
    # the traversed corridor, and its smoothed ends pull inward
    s_box = min(120.0, round(0.6 * float(scn.frame_arclengths()[-1]), 1))
    objects = [ObjectPlacement(mesh="assets/box.obj", stencil_id=10,
                               scale=1.5, color=(190.0, 70.0, 50.0),
                               on_track=(s_box, 0.0, 15.0))]
    if scn.platform is not None:
        s0, s1, lat0, lat1, top = scn.platform
        pos, _, left = track_frame(scn.track, (s0 + s1) / 2.0)
        center = pos + 0.5 * (lat0 + lat1) * left
        objects.append(ObjectPlacement(
            mesh="assets/box.obj", stencil_id=11, scale=1.2,
            color=(60.0, 120.0, 190.0),
            absolute=RigidTransform.from_translation(
                center[0], center[1], top + 0.6)))
    return SceneConfig(tuple(objects), track_width=RAIL_WIDTH,
                       track_height=RAIL_HEIGHT,
                       calibration_sphere=(feature.copy(), 0.15),
                       light=LightModel(), root=root)


def generate(scn: SynthScenario, out_dir) -> tuple[SequenceBundle, GroundTruth]:
    """Write a complete synthetic bundle plus its ground truth.

    The bundle's manifest poses are the corrupted GNSS stream; the true
    poses live only in truth.json. Images and label masks are rendered from
    the true poses (the virtual train really was there), as are the lidar
    scans and the per-frame calibration-feature annotations.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    class_map = SemanticClassMap.default()
    meshes = build_scene_meshes(scn, class_map)
    scene = build_scene(meshes)
    truth_poses = true_poses(scn)
    noisy_poses = gnss_poses(scn)
    feature = calibration_feature(scn, scene)
    cams = {c.camera_id: c.model() for c in scn.cameras}

    (out / "clouds").mkdir(exist_ok=True)
    frames = []
    feature_pixels: dict[str, dict[int, tuple[float, float]]] = \
        {cid: {} for cid in cams}
    for i in range(scn.n_frames):
        cloud = simulate_lidar_frame(scn, scene, truth_poses[i], i, feature)
        save_pointcloud(cloud, out / "clouds" / f"{i:06d}.ply")
        rec = {
            "index": i,
            "timestamp": noisy_poses[i].timestamp,
            "pose": transform_to_json(noisy_poses[i].transform),
            "cloud": f"clouds/{i:06d}.ply",
            "images": {},
            "labels": {},
        }
        for cid, cam in sorted(cams.items()):
            fr = render_frame(scene, cam, truth_poses[i])
            img_rel = f"images/{cid}/{i:06d}.png"
            lab_rel = f"labels/{cid}/{i:06d}.png"
            save_image(fr.color, out / img_rel)
            save_image(fr.mask, out / lab_rel)
            rec["images"][cid] = img_rel
            rec["labels"][cid] = lab_rel
            cam_from_world = truth_poses[i].transform.compose(
                cam.body_from_camera).invert()
            p_cam = cam_from_world.apply(feature)
            if p_cam[2] > 0.0:
                u, v, _ = cam.project(p_cam)
                if bool(cam.contains(u, v)):
                    feature_pixels[cid][i] = (u, v)
        frames.append(rec)

    manifest = {
        "cameras": {cid: {
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height,
            "body_from_camera": transform_to_json(cam.body_from_camera),
        } for cid, cam in sorted(cams.items())},
        "lidar": {"body_from_lidar": transform_to_json(BODY_FROM_LIDAR)},
        "class_map": class_map.to_dict(),
        "frames": frames,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    (out / "annotations").mkdir(exist_ok=True)
    for cid, px in feature_pixels.items():
        ann = CalibrationAnnotation(cid, dict(sorted(px.items())))
        save_annotations(ann, out / "annotations" / f"{cid}.json")

    (out / "assets").mkdir(exist_ok=True)
    (out / "assets" / "box.obj").write_text(_BOX_OBJ)
    save_scene_config(default_scene_config(scn, feature, out),
                      out / "scene_config.json")

    truth = GroundTruth(scn, tuple(truth_poses), true_centerline(scn),
                        feature, feature_pixels)
    save_truth(truth, out / "truth.json")
    save_scenario(scn, out / "scenario.json")
    return load_sequence(out), truth


# ---------------------------------------------------------------------------
# Scoring against truth

def verify_against_truth(subject, truth: GroundTruth) -> dict:
    """Error summary for an extracted centerline or a pose sequence.

    Centerlines report lateral (xy) distance of each vertex to the true
    centerline. Pose sequences additionally report 3D distance to the true
    pose of the same frame.
    """
    if isinstance(subject, TrackCenterline):
        lateral = truth.centerline.distance_xy(subject.vertices)
        return {"kind": "centerline",
                "n": int(lateral.shape[0]),
                "mean_lateral": float(lateral.mean()),
                "max_lateral": float(lateral.max())}
    if isinstance(subject, PoseSequence):
        positions = subject.positions()
        lateral = truth.centerline.distance_xy(positions)
        n = min(len(subject), len(truth.poses))
        pos_err = [float(np.linalg.norm(
            positions[i] - truth.poses[i].transform.translation))
            for i in range(n)]
        return {"kind": "poses",
                "source": subject.source,
                "n": len(subject),
                "mean_lateral": float(lateral.mean()),
                "max_lateral": float(lateral.max()),
                "per_frame_lateral": [float(x) for x in lateral],
                "mean_position_error": float(np.mean(pos_err)),
                "max_position_error": float(np.max(pos_err))}
    raise ValidationError(f"cannot verify a {type(subject).__name__}")
