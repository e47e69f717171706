"""Batch command-line interface.

Stages mirror the processing chain: `extract` turns a recorded bundle into
world-frame geometry, `localize` emits the candidate pose sequences,
`render` draws the virtual scene per frame and occludes the lidar clouds,
`composite` blends the rendered layers into the real images, and
`evaluate` scores every pose source against the calibration annotations.
`pipeline` chains extract, localize, render, composite, evaluate in that
order; `synth` generates a ground-truthed test sequence and `report`
re-emits metric tables from a previous evaluation.

Every stage prints one machine-readable JSON summary line on success.
Exit codes: 0 success, 2 invalid input or configuration, 3 processing
failure on valid inputs. Log verbosity comes from RAILAR_LOG
(error | info | debug), logs go to stderr.

All stages are deterministic: re-running with unchanged inputs rewrites
byte-identical artifacts, and results do not depend on --workers.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import synth as synth_mod
from .composite import (
    BlurParams,
    compose_augmented_frame,
    save_composite_report,
    sequence_lightness_stats,
)
from .core import ImageBuffer, LabeledPointCloud, SemanticClassMap
from .errors import (
    DegenerateInput,
    MissingFile,
    ProcessingError,
    RailarError,
    SchemaViolation,
    ValidationError,
)
from .evaluation import (
    evaluate_sequence,
    frame_offsets,
    load_metrics_json,
    save_metrics_json,
    select_calibration_point,
    write_report,
)
from .ingest import (
    load_annotations,
    load_image,
    load_pointcloud,
    load_scene_config,
    load_sequence,
    save_image,
    save_pointcloud,
)
from .localization import (
    IcpParams,
    icp_odometry,
    load_pose_sequence,
    raw_gnss,
    refine_with_centerline,
    save_pose_sequence,
)
from .render import (
    FrameRender,
    TriangleMesh,
    build_plane_mesh,
    build_pole_mesh,
    build_scene,
    build_sphere_mesh,
    build_track_mesh,
    load_depth,
    occlude_pointcloud,
    place_objects,
    render_frame,
    save_frame_render,
)
from .scene_extract import (
    PoleCluster,
    cluster_poles,
    extend_gating_trajectory,
    extract_centerline,
    fit_plane_ransac,
    label_points,
    load_centerline,
    load_geometry_summary,
    register_clouds,
    save_centerline,
    save_geometry_summary,
)

log = logging.getLogger("railar")

# flag spelling -> pose sequence source tag
SOURCE_NAMES = {
    "raw_gnss": "raw_gnss",
    "icp": "icp_odometry",
    "refined": "segmentation_refined",
}
ALL_SOURCES = ("raw_gnss", "icp_odometry", "segmentation_refined")

_PLANE_MIN_POINTS = 50
_PLANE_SUBSAMPLE_CAP = 50_000
_PLANE_ITERS = 500
_PLANE_THRESHOLD = 0.05
_POLE_EPS = 0.75
_POLE_MIN_PTS = 5


@dataclass
class PipelineConfig:
    """Resolved settings for one stage invocation.

    Values come from flags first, then the --config JSON, then defaults.
    The refinement defaults (gate extension, wide smoothing window, raw
    orientation kept) target slowly drifting GNSS; tightly curved tracks
    want a smaller smooth window, see --smooth-bins.
    """

    bundle: Path | None = None
    out: Path | None = None
    cameras: list[str] | None = None          # None = every bundle camera
    sources: tuple[str, ...] = ALL_SOURCES    # canonical tags
    render_source: str = "segmentation_refined"
    scene_config: Path | None = None          # None = bundle/scene_config.json
    annotations: Path | None = None           # None = bundle/annotations
    scenario: Path | None = None              # synth only
    seed: int | None = None
    workers: int = 4
    occlusion_mode: str = "replace"
    offset_compensation: bool = True
    voxel: float = 0.0
    gate_m: float = 2.5
    gate_extension: float = 30.0
    smooth_bins: int = 51
    yaw_mode: str = "keep"
    tangent_smooth: int = 5
    blur_strength: float = 2.0
    blur_sigma_max: float = 4.0
    lightness: str = "sequence"

    def require_bundle(self) -> Path:
        if self.bundle is None:
            raise ValidationError("bundle: required (flag --bundle or config key)")
        if not (self.bundle / "manifest.json").is_file():
            raise MissingFile(f"bundle: no manifest.json under {self.bundle}")
        return self.bundle

    def require_out(self) -> Path:
        if self.out is None:
            raise ValidationError("out: required (flag --out or config key)")
        return self.out


# ---------------------------------------------------------------------------
# Config and flag plumbing

def _config_doc(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"config: {path} not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"config: {path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise SchemaViolation(f"config: {path}: expected a JSON object")
    return doc


def _canonical_source(value: str) -> str:
    if value in SOURCE_NAMES:
        return SOURCE_NAMES[value]
    if value in ALL_SOURCES:
        return value
    raise ValidationError(
        f"source: unknown value {value!r} (raw_gnss | icp | refined)")


def _canonical_sources(value) -> tuple[str, ...]:
    if value is None or value == "all":
        return ALL_SOURCES
    if isinstance(value, str):
        value = [value]
    out = []
    for v in value:
        if v == "all":
            return ALL_SOURCES
        out.append(_canonical_source(v))
    return tuple(dict.fromkeys(out))


def build_config(args: argparse.Namespace) -> PipelineConfig:
    doc = _config_doc(args.config) if getattr(args, "config", None) else {}

    def pick(flag: str, key: str, default):
        v = getattr(args, flag, None)
        if v is not None:
            return v
        return doc.get(key, default)

    cfg = PipelineConfig()
    path_of = lambda v: Path(v) if v is not None else None
    cfg.bundle = path_of(pick("bundle", "bundle", None))
    cfg.out = path_of(pick("out", "out", None))
    cameras = pick("camera", "cameras", None)
    cfg.cameras = list(cameras) if cameras else None
    cfg.sources = _canonical_sources(pick("source", "sources", "all"))
    cfg.render_source = _canonical_source(
        pick("render_source", "render_source", "refined"))
    if args.cmd in ("render", "composite") and getattr(args, "source", None):
        if args.source == "all":
            raise ValidationError(
                f"source: {args.cmd} renders exactly one source, not 'all'")
        cfg.render_source = _canonical_source(args.source)
    cfg.scene_config = path_of(pick("scene_config", "scene_config", None))
    cfg.annotations = path_of(pick("annotations", "annotations", None))
    cfg.scenario = path_of(pick("scenario", "scenario", None))
    seed = pick("seed", "seed", None)
    cfg.seed = int(seed) if seed is not None else None
    cfg.workers = max(1, int(pick("workers", "workers", 4)))
    cfg.occlusion_mode = pick("occlusion_mode", "occlusion_mode", "replace")
    if cfg.occlusion_mode not in ("remove", "replace"):
        raise ValidationError(
            f"occlusion_mode: expected remove|replace, got {cfg.occlusion_mode!r}")
    oc = pick("offset_compensation", "offset_compensation", "on")
    if isinstance(oc, str):
        if oc not in ("on", "off"):
            raise ValidationError(
                f"offset_compensation: expected on|off, got {oc!r}")
        oc = oc == "on"
    cfg.offset_compensation = bool(oc)
    cfg.voxel = float(pick("voxel", "voxel", 0.0))
    cfg.gate_m = float(pick("gate", "gate_m", 2.5))
    cfg.gate_extension = float(pick("gate_extension", "gate_extension", 30.0))
    cfg.smooth_bins = int(pick("smooth_bins", "smooth_bins", 51))
    cfg.yaw_mode = pick("yaw_mode", "yaw_mode", "keep")
    if cfg.yaw_mode not in ("keep", "tangent"):
        raise ValidationError(
            f"yaw_mode: expected keep|tangent, got {cfg.yaw_mode!r}")
    cfg.tangent_smooth = int(pick("tangent_smooth", "tangent_smooth", 5))
    cfg.blur_strength = float(pick("blur_strength", "blur_strength", 2.0))
    cfg.blur_sigma_max = float(pick("blur_sigma_max", "blur_sigma_max", 4.0))
    cfg.lightness = pick("lightness", "lightness", "sequence")
    if cfg.lightness not in ("sequence", "frame"):
        raise ValidationError(
            f"lightness: expected sequence|frame, got {cfg.lightness!r}")
    return cfg


# ---------------------------------------------------------------------------
# Shared stage helpers

def _parallel(tasks, workers: int):
    """Run thunks, returning results in submission order."""
    if workers <= 1 or len(tasks) <= 1:
        return [t() for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return [f.result() for f in [pool.submit(t) for t in tasks]]


def _frame_task(stage: str, i: int, fn):
    def run():
        try:
            return fn()
        except RailarError as exc:
            raise type(exc)(f"{stage}: frame {i}: {exc}") from exc
    return run


def _bundle_cameras(cfg: PipelineConfig, bundle) -> list[str]:
    if cfg.cameras is None:
        return sorted(bundle.cameras)
    for cid in cfg.cameras:
        if cid not in bundle.cameras:
            raise ValidationError(f"camera: {cid!r} not in bundle "
                                  f"(has {sorted(bundle.cameras)})")
    return list(cfg.cameras)


def _pose_path(cfg: PipelineConfig, source: str) -> Path:
    return cfg.require_out() / "poses" / f"{source}.json"


def _load_poses(cfg: PipelineConfig, source: str):
    path = _pose_path(cfg, source)
    if not path.is_file():
        raise MissingFile(
            f"poses: {path} not found; run `railar localize` first")
    return load_pose_sequence(path)


def _annotation_path(cfg: PipelineConfig, camera_id: str) -> Path:
    root = cfg.annotations if cfg.annotations is not None \
        else cfg.require_bundle() / "annotations"
    return root / f"{camera_id}.json"


def _registered_cloud(cfg: PipelineConfig) -> LabeledPointCloud:
    path = cfg.require_out() / "extracted" / "registered.ply"
    if not path.is_file():
        raise MissingFile(
            f"extracted: {path} not found; run `railar extract` first")
    return load_pointcloud(path)


def _extracted_centerline(cfg: PipelineConfig):
    path = cfg.require_out() / "extracted" / "centerline.json"
    if not path.is_file():
        raise MissingFile(
            f"extracted: {path} not found; run `railar extract` first")
    return load_centerline(path)


def _calibration_point(bundle, registered, camera_id, ann):
    """One fixed world point per camera, shared by every pose source.

    Selection projects through the raw poses because the world cloud was
    registered with them; spreading the pixel objective over the first,
    middle, and last annotated frames keeps a single noisy frame from
    picking a badly placed point.
    """
    frames = ann.frame_indices()
    ref = frames[0]
    extra = sorted({frames[len(frames) // 2], frames[-1]} - {ref})
    return select_calibration_point(
        registered, ann, bundle.cameras[camera_id], raw_gnss(bundle),
        ref_frame=ref, extra_frames=extra or None)


# ---------------------------------------------------------------------------
# synth

def stage_synth(cfg: PipelineConfig) -> dict:
    out = cfg.require_out()
    scn = synth_mod.load_scenario(cfg.scenario) if cfg.scenario \
        else synth_mod.SynthScenario.standard()
    if cfg.seed is not None:
        scn = dataclasses.replace(
            scn, gnss=dataclasses.replace(scn.gnss, seed=cfg.seed))
    bundle, truth = synth_mod.generate(scn, out)
    return {"stage": "synth", "out": str(out), "frames": bundle.n_frames,
            "cameras": sorted(bundle.cameras), "track": scn.track.kind,
            "seed": scn.gnss.seed}


# ---------------------------------------------------------------------------
# extract

def _transfer_labels(merged, bundle):
    """Project label masks onto the registered cloud, first label wins."""
    painted = merged
    for i, rec in enumerate(bundle.frames):
        for cid in sorted(rec.label_mask_paths):
            mask = bundle.label_mask(i, cid)
            painted = label_points(painted, mask, bundle.cameras[cid], rec.pose)
    return painted


def _fit_geometry(cloud, class_map: SemanticClassMap):
    """Ground and platform planes plus pole clusters from the labeled cloud.

    Plane fits subsample by stride so RANSAC stays fast on dense clouds;
    a fixed seed per surface keeps the result reproducible.
    """
    planes = []
    for name, seed in (("near_track_ground", 0), ("platform", 1)):
        pts = cloud.points[cloud.labels == class_map.id_of(name)]
        if pts.shape[0] < _PLANE_MIN_POINTS:
            log.info("extract: %d %s points, skipping plane fit",
                     pts.shape[0], name)
            continue
        stride = max(1, math.ceil(pts.shape[0] / _PLANE_SUBSAMPLE_CAP))
        try:
            planes.append(fit_plane_ransac(
                pts[::stride], iters=_PLANE_ITERS,
                threshold=_PLANE_THRESHOLD, seed=seed))
        except DegenerateInput as exc:
            log.warning("extract: %s plane fit failed: %s", name, exc)
    pole_pts = cloud.points[cloud.labels == class_map.id_of("pole")]
    clusters = cluster_poles(pole_pts, eps=_POLE_EPS, min_pts=_POLE_MIN_PTS) \
        if pole_pts.shape[0] else []
    return planes, clusters


def stage_extract(cfg: PipelineConfig) -> dict:
    bundle = load_sequence(cfg.require_bundle())
    raw = raw_gnss(bundle)
    log.info("extract: registering %d clouds", bundle.n_frames)
    merged = register_clouds(bundle, raw, voxel=cfg.voxel)
    if not merged.labels.any():
        log.info("extract: clouds unlabeled, projecting label masks")
        merged = _transfer_labels(merged, bundle)
    gate_traj = extend_gating_trajectory(raw, cfg.gate_extension) \
        if cfg.gate_extension > 0 else raw
    centerline = extract_centerline(merged, gate_traj, gate_m=cfg.gate_m,
                                    smooth_bins=cfg.smooth_bins)
    planes, clusters = _fit_geometry(merged, bundle.class_map)
    ex = cfg.require_out() / "extracted"
    save_pointcloud(merged, ex / "registered.ply")
    save_centerline(centerline, ex / "centerline.json")
    save_geometry_summary(planes, clusters, ex / "geometry.json")
    return {"stage": "extract", "points": len(merged),
            "centerline_vertices": len(centerline),
            "centerline_length_m": round(centerline.length, 2),
            "planes": len(planes), "pole_clusters": len(clusters),
            "out": str(ex)}


# ---------------------------------------------------------------------------
# localize

def stage_localize(cfg: PipelineConfig) -> dict:
    bundle = load_sequence(cfg.require_bundle())
    raw = raw_gnss(bundle)
    files = {}
    for source in cfg.sources:
        if source == "raw_gnss":
            seq = raw
        elif source == "icp_odometry":
            log.info("localize: running icp odometry over %d frames",
                     bundle.n_frames)
            seq = icp_odometry(bundle, IcpParams(voxel=0.5))
        else:
            centerline = _extracted_centerline(cfg)
            seq = refine_with_centerline(raw, centerline,
                                         yaw_mode=cfg.yaw_mode,
                                         tangent_smooth=cfg.tangent_smooth)
        files[source] = str(save_pose_sequence(seq, _pose_path(cfg, source)))
        log.info("localize: wrote %s", files[source])
    return {"stage": "localize", "sources": list(cfg.sources), "files": files}


# ---------------------------------------------------------------------------
# render

def _scene_config(cfg: PipelineConfig, bundle):
    path = cfg.scene_config if cfg.scene_config is not None \
        else bundle.root / "scene_config.json"
    if not path.is_file():
        raise MissingFile(f"scene_config: {path} not found")
    return load_scene_config(path, obstacle_base=bundle.class_map.obstacle_base)


def _classify_plane(plane, cloud, class_map: SemanticClassMap):
    """Stencil id and inliers for a fitted plane, by majority point label."""
    dist = plane.distance(cloud.points)
    sel = dist <= _PLANE_THRESHOLD
    labels = cloud.labels[sel]
    labels = labels[labels != 0]
    if labels.size == 0:
        return 0, cloud.points[sel]
    counts = np.bincount(labels)
    return int(np.argmax(counts)), cloud.points[sel]


def _reconstruction_meshes(centerline, registered, planes, cluster_docs,
                           scene_cfg, class_map: SemanticClassMap):
    """Track, plane, and pole meshes rebuilt from the extraction artifacts.

    They carry their semantic class stencil ids (all below obstacle_base)
    so they occlude virtual objects in the render without ever reaching
    the composited layer.
    """
    meshes = [build_track_mesh(centerline, scene_cfg.track_width,
                               scene_cfg.track_height,
                               stencil_id=class_map.id_of("track"))]
    for plane in planes:
        stencil, inliers = _classify_plane(plane, registered, class_map)
        if stencil == 0 or inliers.shape[0] < 3:
            continue
        try:
            meshes.append(build_plane_mesh(plane, inliers, stencil_id=stencil))
        except DegenerateInput as exc:
            log.warning("render: plane mesh skipped: %s", exc)
    pole_id = class_map.id_of("pole")
    for doc in cluster_docs:
        cluster = PoleCluster(np.zeros(0, dtype=np.int64),
                              np.asarray(doc["centroid"], dtype=np.float64),
                              (float(doc["z_extent"][0]),
                               float(doc["z_extent"][1])))
        meshes.append(build_pole_mesh(cluster, stencil_id=pole_id))
    return meshes


def _virtual_meshes(scene_cfg, centerline, planes):
    """Obstacles plus the calibration sphere, the composited layers."""
    meshes = place_objects(scene_cfg, centerline, planes)
    if scene_cfg.calibration_sphere is not None:
        center, radius = scene_cfg.calibration_sphere
        meshes.append(build_sphere_mesh(center, radius))
    return meshes


def stage_render(cfg: PipelineConfig) -> dict:
    bundle = load_sequence(cfg.require_bundle())
    poses = _load_poses(cfg, cfg.render_source)
    scene_cfg = _scene_config(cfg, bundle)
    centerline = _extracted_centerline(cfg)
    registered = _registered_cloud(cfg)
    geometry = cfg.require_out() / "extracted" / "geometry.json"
    planes, cluster_docs = load_geometry_summary(geometry) \
        if geometry.is_file() else ([], [])

    recon = _reconstruction_meshes(centerline, registered, planes,
                                   cluster_docs, scene_cfg, bundle.class_map)
    virtual = _virtual_meshes(scene_cfg, centerline, planes)
    scene = build_scene(recon + virtual)
    virtual_scene = build_scene(virtual)
    cameras = _bundle_cameras(cfg, bundle)
    out = cfg.require_out()
    log.info("render: %d triangles, %d frames, cameras %s, poses %s",
             scene.n_triangles, bundle.n_frames, cameras, cfg.render_source)

    def render_task(i, cid):
        fr = render_frame(scene, bundle.cameras[cid], poses[i],
                          light=scene_cfg.light)
        save_frame_render(fr, out / "render" / cid, i)

    def occlude_task(i):
        cloud = bundle.cloud(i)
        lidar_from_world = poses[i].transform.compose(
            bundle.body_from_lidar).invert()
        in_lidar = [TriangleMesh(lidar_from_world.apply(m.vertices),
                                 m.triangles, m.base_color, m.stencil_id)
                    for m in virtual]
        occluded = occlude_pointcloud(cloud, in_lidar,
                                      mode=cfg.occlusion_mode)
        save_pointcloud(occluded, out / "clouds_aug" / f"{i:06d}.ply")

    tasks = [_frame_task("render", i, lambda i=i, cid=cid: render_task(i, cid))
             for i in range(bundle.n_frames) for cid in cameras]
    tasks += [_frame_task("render", i, lambda i=i: occlude_task(i))
              for i in range(bundle.n_frames)]
    _parallel(tasks, cfg.workers)
    return {"stage": "render", "frames": bundle.n_frames, "cameras": cameras,
            "triangles": int(scene.n_triangles),
            "virtual_triangles": int(virtual_scene.n_triangles),
            "source": cfg.render_source, "occlusion_mode": cfg.occlusion_mode,
            "out": str(out)}


# ---------------------------------------------------------------------------
# composite

def _load_frame_render(render_dir: Path, i: int) -> FrameRender:
    stem = render_dir / f"{i:06d}"
    for suffix in ("_color.png", "_mask.png", "_depth.bin"):
        if not Path(f"{stem}{suffix}").is_file():
            raise MissingFile(f"render: {stem}{suffix} not found; "
                              "run `railar render` first")
    return FrameRender(load_image(f"{stem}_color.png"),
                       load_image(f"{stem}_mask.png"),
                       load_depth(f"{stem}_depth.bin"))


def _virtual_layers(fr: FrameRender, obstacle_base: int) -> FrameRender:
    """Keep only obstacle and calibration stencils for blending."""
    keep = fr.mask.data >= obstacle_base
    mask = np.where(keep, fr.mask.data, np.uint16(0))
    depth = np.where(keep, fr.depth.data, np.float32(np.inf))
    color = np.where(keep[..., None], fr.color.data, np.uint8(0))
    return FrameRender(ImageBuffer(color, "RGB8"),
                       ImageBuffer(mask, "LABEL16"),
                       ImageBuffer(depth, "DEPTH32"))


def stage_composite(cfg: PipelineConfig) -> dict:
    bundle = load_sequence(cfg.require_bundle())
    poses = _load_poses(cfg, cfg.render_source)
    blur = BlurParams(strength=cfg.blur_strength, sigma_max=cfg.blur_sigma_max)
    obstacle_base = bundle.class_map.obstacle_base
    cameras = _bundle_cameras(cfg, bundle)
    out = cfg.require_out()
    registered = None
    report = {"source": cfg.render_source,
              "offset_compensation": cfg.offset_compensation,
              "lightness": cfg.lightness, "cameras": {}}

    for cid in cameras:
        reals = [bundle.image(i, cid) for i in range(bundle.n_frames)]
        target = sequence_lightness_stats(reals) \
            if cfg.lightness == "sequence" else None
        offsets = {}
        ann_path = _annotation_path(cfg, cid)
        if cfg.offset_compensation and ann_path.is_file():
            ann = load_annotations(ann_path)
            if registered is None:
                registered = _registered_cloud(cfg)
            calib = _calibration_point(bundle, registered, cid, ann)
            offsets = frame_offsets(
                evaluate_sequence(bundle, poses, cid, calib, ann))
            log.info("composite: %s compensating %d frames", cid, len(offsets))
        elif cfg.offset_compensation:
            log.info("composite: %s has no annotations, offsets stay zero", cid)

        def compose_task(i, cid=cid, reals=reals, target=target,
                         offsets=offsets):
            fr = _virtual_layers(_load_frame_render(out / "render" / cid, i),
                                 obstacle_base)
            stats = target if cfg.lightness == "sequence" \
                else sequence_lightness_stats([reals[i]])
            img, rep = compose_augmented_frame(
                reals[i], fr, target=stats, blur=blur,
                offset=offsets.get(i, (0.0, 0.0)))
            save_image(img, out / "augmented" / cid / f"{i:06d}.png")
            return i, rep

        results = _parallel(
            [_frame_task("composite", i, lambda i=i: compose_task(i))
             for i in range(bundle.n_frames)],
            cfg.workers)
        cam_doc = {"frames": {str(i): rep for i, rep in results}}
        if target is not None:
            cam_doc["lightness_target"] = {"mean_L": target.mean_L,
                                           "std_L": target.std_L}
        report["cameras"][cid] = cam_doc

    save_composite_report(report, out / "composite_report.json")
    return {"stage": "composite", "frames": bundle.n_frames,
            "cameras": cameras, "source": cfg.render_source,
            "offset_compensation": cfg.offset_compensation, "out": str(out)}


# ---------------------------------------------------------------------------
# evaluate / report

def stage_evaluate(cfg: PipelineConfig) -> dict:
    bundle = load_sequence(cfg.require_bundle())
    registered = _registered_cloud(cfg)
    cameras = _bundle_cameras(cfg, bundle)
    out = cfg.require_out()
    reports = []
    for cid in cameras:
        ann_path = _annotation_path(cfg, cid)
        if not ann_path.is_file():
            raise MissingFile(f"annotations: {ann_path} not found for "
                              f"camera {cid!r}")
        ann = load_annotations(ann_path)
        calib = _calibration_point(bundle, registered, cid, ann)
        for source in cfg.sources:
            poses = _load_poses(cfg, source)
            reports.append(evaluate_sequence(bundle, poses, cid, calib, ann))
    write_report(reports, out / "metrics.csv")
    save_metrics_json(reports, out / "metrics.json")
    means = {f"{r.camera_id}/{r.source}": round(r.mean_rpe, 3)
             for r in reports}
    return {"stage": "evaluate", "rows": len(reports), "mean_rpe": means,
            "csv": str(out / "metrics.csv"), "json": str(out / "metrics.json")}


def stage_report(cfg: PipelineConfig) -> dict:
    out = cfg.require_out()
    path = out / "metrics.json"
    if not path.is_file():
        raise MissingFile(f"metrics: {path} not found; "
                          "run `railar evaluate` first")
    reports = load_metrics_json(path)
    write_report(reports, out / "metrics.csv")
    for line in (out / "metrics.txt").read_text().splitlines():
        print(line)
    return {"stage": "report", "rows": len(reports),
            "csv": str(out / "metrics.csv"), "txt": str(out / "metrics.txt")}


# ---------------------------------------------------------------------------
# pipeline

_PIPELINE_ORDER = (
    ("extract", stage_extract),
    ("localize", stage_localize),
    ("render", stage_render),
    ("composite", stage_composite),
    ("evaluate", stage_evaluate),
)


def stage_pipeline(cfg: PipelineConfig) -> dict:
    stages = []
    for name, fn in _PIPELINE_ORDER:
        t0 = time.perf_counter()
        summary = fn(cfg)
        summary["status"] = "ok"
        summary["seconds"] = round(time.perf_counter() - t0, 2)
        print(json.dumps(summary, sort_keys=True))
        stages.append(name)
    return {"stage": "pipeline", "stages": stages,
            "out": str(cfg.require_out())}


STAGES = {
    "synth": stage_synth,
    "extract": stage_extract,
    "localize": stage_localize,
    "render": stage_render,
    "composite": stage_composite,
    "evaluate": stage_evaluate,
    "pipeline": stage_pipeline,
    "report": stage_report,
}


# ---------------------------------------------------------------------------
# Parser

def _add_io(sp, bundle=True):
    sp.add_argument("--config", help="JSON file with defaults for any flag")
    if bundle:
        sp.add_argument("--bundle", help="recorded sequence bundle directory")
    sp.add_argument("--out", help="output workspace directory")


def _add_extract_flags(sp):
    sp.add_argument("--voxel", type=float,
                    help="registration dedup voxel, meters (0 = keep all)")
    sp.add_argument("--gate", type=float,
                    help="ego-track lateral gate, meters (default 2.5)")
    sp.add_argument("--gate-extension", dest="gate_extension", type=float,
                    help="extend the gating corridor past the last pose, "
                         "meters (default 30, 0 disables)")
    sp.add_argument("--smooth-bins", dest="smooth_bins", type=int,
                    help="centerline moving-average window in 1 m bins "
                         "(default 51, sized for slow GNSS drift; use a "
                         "small odd value on tightly curved tracks)")


def _add_localize_flags(sp):
    sp.add_argument("--yaw-mode", dest="yaw_mode", choices=("keep", "tangent"),
                    help="refined orientation: keep the recorded heading "
                         "(default) or re-derive it from the centerline "
                         "tangent")
    sp.add_argument("--tangent-smooth", dest="tangent_smooth", type=int,
                    help="tangent smoothing window, vertices (default 5)")


def _add_workers(sp):
    sp.add_argument("--workers", type=int,
                    help="parallel frame workers (default 4); results do "
                         "not depend on this")


def _add_cameras(sp):
    sp.add_argument("--camera", action="append",
                    help="camera id to process (repeatable; default all)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="railar",
        description="Augment rail sensor sequences with virtual obstacles: "
                    "scene extraction, localization refinement, raycast "
                    "rendering, compositing, and reprojection metrics.")
    sub = p.add_subparsers(dest="cmd")

    sp = sub.add_parser("synth", help="generate a synthetic ground-truthed "
                                      "sequence bundle")
    sp.add_argument("--scenario", help="scenario JSON (default: standard "
                                       "200 m straight drift scenario)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, help="override the GNSS noise seed")
    sp.add_argument("--config", help=argparse.SUPPRESS)

    sp = sub.add_parser("extract", help="register clouds and distill world "
                                        "geometry")
    _add_io(sp)
    _add_extract_flags(sp)

    sp = sub.add_parser("localize", help="emit candidate pose sequences")
    _add_io(sp)
    sp.add_argument("--source", choices=("raw_gnss", "icp", "refined", "all"),
                    help="which sequences to emit (default all)")
    _add_localize_flags(sp)

    sp = sub.add_parser("render", help="render the virtual scene and occlude "
                                       "the lidar clouds")
    _add_io(sp)
    sp.add_argument("--source", choices=("raw_gnss", "icp", "refined"),
                    help="pose source to render with (default refined)")
    sp.add_argument("--scene-config", dest="scene_config",
                    help="virtual object placement JSON (default "
                         "<bundle>/scene_config.json)")
    sp.add_argument("--occlusion-mode", dest="occlusion_mode",
                    choices=("remove", "replace"),
                    help="occluded lidar points are dropped or replaced by "
                         "the virtual surface hit (default replace)")
    _add_cameras(sp)
    _add_workers(sp)

    sp = sub.add_parser("composite", help="blend rendered layers into the "
                                          "real images")
    _add_io(sp)
    sp.add_argument("--source", choices=("raw_gnss", "icp", "refined"),
                    help="pose source the renders used (default refined)")
    sp.add_argument("--offset-compensation", dest="offset_compensation",
                    choices=("on", "off"),
                    help="shift layers by the annotated-vs-projected pixel "
                         "offset (default on)")
    sp.add_argument("--annotations", help="annotation directory (default "
                                          "<bundle>/annotations)")
    sp.add_argument("--blur-strength", dest="blur_strength", type=float,
                    help="distance blur: sigma = strength / distance "
                         "(default 2.0)")
    sp.add_argument("--blur-sigma-max", dest="blur_sigma_max", type=float,
                    help="blur sigma ceiling, px (default 4.0)")
    sp.add_argument("--lightness", choices=("sequence", "frame"),
                    help="match lightness to sequence-level statistics "
                         "(default) or per frame")
    _add_cameras(sp)
    _add_workers(sp)

    sp = sub.add_parser("evaluate", help="score pose sources against "
                                         "calibration annotations")
    _add_io(sp)
    sp.add_argument("--source", choices=("raw_gnss", "icp", "refined", "all"),
                    help="sources to score (default all)")
    sp.add_argument("--annotations")
    _add_cameras(sp)

    sp = sub.add_parser("pipeline", help="extract, localize, render, "
                                         "composite, evaluate")
    _add_io(sp)
    sp.add_argument("--source", choices=("raw_gnss", "icp", "refined", "all"),
                    help="sources to localize and evaluate (default all)")
    sp.add_argument("--render-source", dest="render_source",
                    choices=("raw_gnss", "icp", "refined"),
                    help="pose source for rendering and compositing "
                         "(default refined)")
    sp.add_argument("--scene-config", dest="scene_config")
    sp.add_argument("--occlusion-mode", dest="occlusion_mode",
                    choices=("remove", "replace"))
    sp.add_argument("--offset-compensation", dest="offset_compensation",
                    choices=("on", "off"))
    sp.add_argument("--annotations")
    _add_extract_flags(sp)
    _add_localize_flags(sp)
    sp.add_argument("--blur-strength", dest="blur_strength", type=float)
    sp.add_argument("--blur-sigma-max", dest="blur_sigma_max", type=float)
    sp.add_argument("--lightness", choices=("sequence", "frame"))
    _add_cameras(sp)
    _add_workers(sp)

    sp = sub.add_parser("report", help="re-emit metric tables from a "
                                       "previous evaluation")
    _add_io(sp, bundle=False)

    return p


def _setup_logging():
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    name = os.environ.get("RAILAR_LOG", "info").lower()
    logging.basicConfig(stream=sys.stderr,
                        level=levels.get(name, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.cmd is None:
        parser.print_help(sys.stderr)
        return 2
    t0 = time.perf_counter()
    try:
        cfg = build_config(args)
        summary = STAGES[args.cmd](cfg)
    except ValidationError as exc:
        log.error("%s: %s", args.cmd, exc)
        return 2
    except (RailarError, OSError) as exc:
        log.error("%s: %s", args.cmd, exc)
        return 3
    summary["status"] = "ok"
    summary["seconds"] = round(time.perf_counter() - t0, 2)
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
