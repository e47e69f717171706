"""Sequence bundle IO.

A bundle directory holds a `manifest.json` plus the payload files it
references: one PLY cloud per frame, PNG images per camera, and optional
16-bit PNG label masks. Everything is validated eagerly at load time; there
are no partial bundles.

Manifest layout:
    {
      "cameras": {id: {fx, fy, cx, cy, width, height,
                       "body_from_camera": {"R": [9 floats row-major],
                                            "t": [3 floats]}}},
      "lidar": {"body_from_lidar": {"R": ..., "t": ...}},
      "frames": [{"index", "timestamp", "pose": {"R", "t"}, "cloud",
                  "images": {id: path}, "labels": {id: path}}],
      "class_map": {name: id}
    }

All paths inside the manifest are relative to the bundle root.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (
    CameraModel,
    ImageBuffer,
    LabeledPointCloud,
    Pose,
    RigidTransform,
    SemanticClassMap,
)
from .errors import (
    MalformedPly,
    MissingFile,
    NonMonotoneTimestamps,
    OutOfBoundsAnnotation,
    SchemaViolation,
    UnsupportedProperty,
    ValidationError,
)

MANIFEST_NAME = "manifest.json"


# ---------------------------------------------------------------------------
# JSON helpers

def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaViolation(f"{where}: missing field {key!r}")
    return obj[key]


def _number(obj: dict, key: str, where: str) -> float:
    v = _require(obj, key, where)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaViolation(f"{where}.{key}: expected a number, got {type(v).__name__}")
    return float(v)


def transform_to_json(t: RigidTransform) -> dict:
    return {"R": [float(x) for x in t.rotation.ravel()],
            "t": [float(x) for x in t.translation]}


def transform_from_json(obj, where: str) -> RigidTransform:
    r = _require(obj, "R", where)
    t = _require(obj, "t", where)
    if not isinstance(r, list) or len(r) != 9:
        raise SchemaViolation(f"{where}.R: expected 9 numbers")
    if not isinstance(t, list) or len(t) != 3:
        raise SchemaViolation(f"{where}.t: expected 3 numbers")
    try:
        return RigidTransform(np.asarray(r, dtype=np.float64).reshape(3, 3), t)
    except (ValidationError, ValueError, TypeError) as exc:
        raise SchemaViolation(f"{where}: {exc}") from exc


_CAMERA_KEYS = {"fx", "fy", "cx", "cy", "width", "height", "body_from_camera"}


def _camera_from_json(obj, where: str) -> CameraModel:
    if not isinstance(obj, dict):
        raise SchemaViolation(f"{where}: expected an object")
    extra = set(obj) - _CAMERA_KEYS
    if extra:
        # distortion models in particular are rejected, not silently ignored
        raise SchemaViolation(f"{where}: unsupported field(s) {sorted(extra)}")
    fx = _number(obj, "fx", where)
    fy = _number(obj, "fy", where)
    cx = _number(obj, "cx", where)
    cy = _number(obj, "cy", where)
    width = _number(obj, "width", where)
    height = _number(obj, "height", where)
    if width != int(width) or height != int(height):
        raise SchemaViolation(f"{where}: width/height must be integers")
    width, height = int(width), int(height)
    t = transform_from_json(_require(obj, "body_from_camera", where),
                            f"{where}.body_from_camera")
    try:
        return CameraModel(fx, fy, cx, cy, width, height, t)
    except ValidationError as exc:
        raise SchemaViolation(f"{where}: {exc}") from exc


def _camera_to_json(cam: CameraModel) -> dict:
    return {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height,
            "body_from_camera": transform_to_json(cam.body_from_camera)}


# ---------------------------------------------------------------------------
# Bundle

@dataclass(frozen=True)
class FrameRecord:
    index: int
    pose: Pose                      # world_from_body, stamped
    cloud_path: str                 # relative to the bundle root
    image_paths: dict[str, str]
    label_mask_paths: dict[str, str] = field(default_factory=dict)

    @property
    def timestamp(self) -> float:
        return self.pose.timestamp


@dataclass(frozen=True)
class SequenceBundle:
    root: Path
    frames: tuple[FrameRecord, ...]
    cameras: dict[str, CameraModel]
    body_from_lidar: RigidTransform
    class_map: SemanticClassMap

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def cloud(self, index: int) -> LabeledPointCloud:
        rec = self.frames[index]
        return load_pointcloud(self.root / rec.cloud_path)

    def image(self, index: int, camera_id: str) -> ImageBuffer:
        rec = self.frames[index]
        if camera_id not in rec.image_paths:
            raise MissingFile(f"frame {index} has no image for camera {camera_id!r}")
        return load_image(self.root / rec.image_paths[camera_id])

    def label_mask(self, index: int, camera_id: str) -> ImageBuffer | None:
        rec = self.frames[index]
        path = rec.label_mask_paths.get(camera_id)
        return load_image(self.root / path) if path is not None else None


def load_sequence(root) -> SequenceBundle:
    """Load and fully validate a bundle directory."""
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingFile(str(manifest_path))
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{manifest_path}: invalid JSON ({exc})") from exc

    cameras_doc = _require(doc, "cameras", "manifest")
    if not isinstance(cameras_doc, dict) or not cameras_doc:
        raise SchemaViolation("manifest.cameras: expected a non-empty object")
    cameras = {str(cid): _camera_from_json(c, f"manifest.cameras[{cid}]")
               for cid, c in cameras_doc.items()}

    lidar_doc = _require(doc, "lidar", "manifest")
    body_from_lidar = transform_from_json(
        _require(lidar_doc, "body_from_lidar", "manifest.lidar"),
        "manifest.lidar.body_from_lidar")

    try:
        class_map = SemanticClassMap(_require(doc, "class_map", "manifest"))
    except ValidationError as exc:
        raise SchemaViolation(f"manifest.class_map: {exc}") from exc

    frames_doc = _require(doc, "frames", "manifest")
    if not isinstance(frames_doc, list) or not frames_doc:
        raise SchemaViolation("manifest.frames: expected a non-empty list")

    frames = []
    prev_ts = None
    for pos, fdoc in enumerate(frames_doc):
        where = f"manifest.frames[{pos}]"
        index = int(_number(fdoc, "index", where))
        if index != pos:
            raise SchemaViolation(f"{where}.index: {index} != list position {pos}")
        ts = _number(fdoc, "timestamp", where)
        if prev_ts is not None and ts <= prev_ts:
            raise NonMonotoneTimestamps(
                f"{where}.timestamp: {ts} does not increase over {prev_ts}")
        prev_ts = ts
        pose = Pose(ts, transform_from_json(_require(fdoc, "pose", where),
                                            f"{where}.pose"))
        cloud_rel = _require(fdoc, "cloud", where)
        if not isinstance(cloud_rel, str):
            raise SchemaViolation(f"{where}.cloud: expected a path string")
        if not (root / cloud_rel).is_file():
            raise MissingFile(str(root / cloud_rel))

        images_doc = _require(fdoc, "images", where)
        if not isinstance(images_doc, dict):
            raise SchemaViolation(f"{where}.images: expected an object")
        image_paths = {}
        for cid, rel in images_doc.items():
            if cid not in cameras:
                raise SchemaViolation(f"{where}.images: unknown camera {cid!r}")
            if not isinstance(rel, str):
                raise SchemaViolation(f"{where}.images[{cid}]: expected a path string")
            if not (root / rel).is_file():
                raise MissingFile(str(root / rel))
            image_paths[cid] = rel

        label_paths = {}
        for cid, rel in (fdoc.get("labels") or {}).items():
            if cid not in cameras:
                raise SchemaViolation(f"{where}.labels: unknown camera {cid!r}")
            if not isinstance(rel, str):
                raise SchemaViolation(f"{where}.labels[{cid}]: expected a path string")
            if not (root / rel).is_file():
                raise MissingFile(str(root / rel))
            label_paths[cid] = rel

        frames.append(FrameRecord(index, pose, cloud_rel, image_paths, label_paths))

    return SequenceBundle(root, tuple(frames), cameras, body_from_lidar, class_map)


def save_sequence(bundle: SequenceBundle, dest) -> Path:
    """Write a bundle to a new root; payload files are copied byte-for-byte."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    doc = {
        "cameras": {cid: _camera_to_json(cam) for cid, cam in bundle.cameras.items()},
        "lidar": {"body_from_lidar": transform_to_json(bundle.body_from_lidar)},
        "class_map": bundle.class_map.to_dict(),
        "frames": [],
    }
    for rec in bundle.frames:
        doc["frames"].append({
            "index": rec.index,
            "timestamp": rec.pose.timestamp,
            "pose": transform_to_json(rec.pose.transform),
            "cloud": rec.cloud_path,
            "images": dict(rec.image_paths),
            "labels": dict(rec.label_mask_paths),
        })
        rels = [rec.cloud_path, *rec.image_paths.values(), *rec.label_mask_paths.values()]
        for rel in rels:
            target = dest / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            if target != bundle.root / rel:
                shutil.copyfile(bundle.root / rel, target)
    (dest / MANIFEST_NAME).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return dest


# ---------------------------------------------------------------------------
# PLY point clouds

_PLY_PROPS = {  # name -> (ply type, numpy dtype)
    "x": ("float", "<f4"), "y": ("float", "<f4"), "z": ("float", "<f4"),
    "intensity": ("float", "<f4"), "label": ("ushort", "<u2"),
}
_PLY_TYPE_ALIASES = {"float": "float", "float32": "float",
                     "ushort": "ushort", "uint16": "ushort"}


def load_pointcloud(path) -> LabeledPointCloud:
    """Read a PLY cloud (ascii or binary little-endian).

    Supported vertex properties: x, y, z (float32, required), intensity
    (float32), label (uint16). Anything else raises UnsupportedProperty
    rather than being cast or skipped.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    raw = path.read_bytes()
    header_end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or header_end < 0:
        raise MalformedPly(f"{path}: not a PLY file")
    header_end = raw.index(b"\n", header_end) + 1
    header_lines = raw[:header_end].decode("ascii", "replace").splitlines()

    fmt = None
    count = None
    props: list[str] = []
    element = None
    for line in header_lines[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1] not in ("ascii", "binary_little_endian"):
                raise UnsupportedProperty(f"{path}: format {parts[1]!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            element = parts[1]
            if element == "vertex":
                count = int(parts[2])
            elif int(parts[2]) != 0:
                raise UnsupportedProperty(f"{path}: element {element!r}")
        elif parts[0] == "property" and element == "vertex":
            if len(parts) != 3:
                raise UnsupportedProperty(f"{path}: property {line.strip()!r}")
            ptype, name = parts[1], parts[2]
            if name not in _PLY_PROPS:
                raise UnsupportedProperty(f"{path}: property {name!r}")
            expected = _PLY_PROPS[name][0]
            if _PLY_TYPE_ALIASES.get(ptype) != expected:
                raise UnsupportedProperty(
                    f"{path}: property {name!r} has type {ptype!r}, expected {expected}")
            props.append(name)
        elif parts[0] == "end_header":
            break
    if fmt is None or count is None:
        raise MalformedPly(f"{path}: missing format or vertex element")
    for req in ("x", "y", "z"):
        if req not in props:
            raise MalformedPly(f"{path}: missing property {req!r}")

    dtype = np.dtype([(n, _PLY_PROPS[n][1]) for n in props])
    if fmt == "binary_little_endian":
        body = raw[header_end:]
        need = count * dtype.itemsize
        if len(body) < need:
            raise MalformedPly(f"{path}: truncated payload "
                               f"({len(body)} bytes, need {need})")
        table = np.frombuffer(body[:need], dtype=dtype)
    else:
        text = raw[header_end:].decode("ascii", "replace").split()
        if len(text) < count * len(props):
            raise MalformedPly(f"{path}: truncated ascii payload")
        table = np.zeros(count, dtype=dtype)
        try:
            grid = np.asarray(text[:count * len(props)], dtype=np.float64)
        except ValueError as exc:
            raise MalformedPly(f"{path}: non-numeric ascii payload") from exc
        grid = grid.reshape(count, len(props))
        for k, name in enumerate(props):
            table[name] = grid[:, k].astype(dtype[name])

    points = np.column_stack([table["x"], table["y"], table["z"]]).astype(np.float64)
    labels = table["label"] if "label" in props else None
    intensity = table["intensity"] if "intensity" in props else None
    return LabeledPointCloud(points, labels, intensity, frame="unknown")


def save_pointcloud(cloud: LabeledPointCloud, path) -> Path:
    """Write a binary little-endian PLY. Coordinates are stored as float32."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    props = ["x", "y", "z"]
    if cloud.intensity is not None:
        props.append("intensity")
    has_labels = cloud.labels is not None and np.any(cloud.labels != 0)
    if has_labels:
        props.append("label")
    dtype = np.dtype([(n, _PLY_PROPS[n][1]) for n in props])
    table = np.zeros(len(cloud), dtype=dtype)
    table["x"] = cloud.points[:, 0].astype("<f4")
    table["y"] = cloud.points[:, 1].astype("<f4")
    table["z"] = cloud.points[:, 2].astype("<f4")
    if "intensity" in props:
        table["intensity"] = cloud.intensity
    if "label" in props:
        table["label"] = cloud.labels
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(cloud)}"]
    header += [f"property {_PLY_PROPS[n][0]} {n}" for n in props]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(table.tobytes())
    return path


# ---------------------------------------------------------------------------
# PNG images

_MODE_TO_FORMAT = {"RGB": "RGB8", "L": "GRAY8", "I;16": "LABEL16", "I": "LABEL16"}
_FORMAT_TO_MODE = {"RGB8": "RGB", "GRAY8": "L", "LABEL16": "I;16"}


def load_image(path) -> ImageBuffer:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    with Image.open(path) as im:
        fmt = _MODE_TO_FORMAT.get(im.mode)
        if fmt is None:
            raise SchemaViolation(f"{path}: unsupported image mode {im.mode!r}")
        data = np.asarray(im)
    if fmt == "LABEL16":
        if data.max(initial=0) > np.iinfo(np.uint16).max or data.min(initial=0) < 0:
            raise SchemaViolation(f"{path}: label values exceed uint16")
        data = data.astype(np.uint16)
    return ImageBuffer(data, fmt)


def save_image(image: ImageBuffer, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if image.format not in _FORMAT_TO_MODE:
        raise SchemaViolation(f"cannot save image format {image.format!r} as PNG")
    im = Image.fromarray(image.data)  # uint8 2D -> L, uint8 3D -> RGB, uint16 -> I;16
    im.save(path, format="PNG")
    return path


# ---------------------------------------------------------------------------
# Calibration annotations

@dataclass(frozen=True)
class CalibrationAnnotation:
    """Hand-marked pixel positions of the calibration feature, per frame."""

    camera_id: str
    frames: dict[int, tuple[float, float]]

    def at(self, frame_index: int) -> tuple[float, float] | None:
        return self.frames.get(frame_index)

    def frame_indices(self) -> list[int]:
        return sorted(self.frames)

    def bind(self, cam: CameraModel) -> "CalibrationAnnotation":
        """Validate every coordinate against the camera bounds."""
        for idx in sorted(self.frames):
            u, v = self.frames[idx]
            if not bool(cam.contains(u, v)):
                raise OutOfBoundsAnnotation(
                    f"frame {idx}: ({u}, {v}) outside {cam.width}x{cam.height}")
        return self


def load_annotations(path) -> CalibrationAnnotation:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON ({exc})") from exc
    camera_id = _require(doc, "camera_id", str(path))
    if not isinstance(camera_id, str):
        raise SchemaViolation(f"{path}.camera_id: expected a string")
    frames_doc = _require(doc, "frames", str(path))
    if not isinstance(frames_doc, dict):
        raise SchemaViolation(f"{path}.frames: expected an object")
    frames = {}
    for key, uv in frames_doc.items():
        try:
            idx = int(key)
        except ValueError as exc:
            raise SchemaViolation(f"{path}.frames: non-integer key {key!r}") from exc
        if (not isinstance(uv, list) or len(uv) != 2
                or any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in uv)):
            raise SchemaViolation(f"{path}.frames[{key}]: expected [u, v]")
        frames[idx] = (float(uv[0]), float(uv[1]))
    return CalibrationAnnotation(camera_id, frames)


def save_annotations(ann: CalibrationAnnotation, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"camera_id": ann.camera_id,
           "frames": {str(k): [ann.frames[k][0], ann.frames[k][1]]
                      for k in sorted(ann.frames)}}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Scene configuration

CALIBRATION_STENCIL = 65535  # stencil id reserved for the calibration sphere


@dataclass(frozen=True, eq=False)
class ObjectPlacement:
    """One virtual object: where it goes, how it looks, which stencil id."""

    mesh: str
    stencil_id: int
    scale: float = 1.0
    color: tuple[float, float, float] = (200.0, 200.0, 200.0)
    absolute: RigidTransform | None = None
    on_track: tuple[float, float, float] | None = None   # (s, lateral, yaw_deg)
    on_plane: tuple[int, float, float, float] | None = None  # (plane, du, dv, yaw_deg)

    def __post_init__(self):
        modes = [m for m in (self.absolute, self.on_track, self.on_plane)
                 if m is not None]
        if len(modes) != 1:
            raise SchemaViolation(
                f"object {self.mesh!r}: exactly one placement mode required")
        if self.scale <= 0:
            raise SchemaViolation(f"object {self.mesh!r}: scale must be > 0")


@dataclass(frozen=True)
class LightModel:
    direction: tuple[float, float, float] = (-0.3, 0.2, -1.0)
    intensity: float = 0.7
    ambient: float = 0.3


@dataclass(frozen=True, eq=False)
class SceneConfig:
    objects: tuple[ObjectPlacement, ...]
    track_width: float = 0.10      # rail cross-section, meters
    track_height: float = 0.05
    calibration_sphere: tuple[np.ndarray, float] | None = None  # (center, radius)
    light: LightModel = field(default_factory=LightModel)
    root: Path | None = None       # directory mesh paths are relative to

    def resolve(self, rel: str) -> Path:
        return (self.root / rel) if self.root is not None else Path(rel)


def _placement_from_json(obj, where: str) -> ObjectPlacement:
    mesh = _require(obj, "mesh", where)
    stencil = int(_number(obj, "stencil_id", where))
    scale = float(obj.get("scale", 1.0))
    color = obj.get("color", [200.0, 200.0, 200.0])
    if not isinstance(color, list) or len(color) != 3:
        raise SchemaViolation(f"{where}.color: expected [r, g, b]")
    placement = _require(obj, "placement", where)
    kwargs = {}
    if "absolute" in placement:
        kwargs["absolute"] = transform_from_json(placement["absolute"],
                                                 f"{where}.placement.absolute")
    elif "on_track" in placement:
        p = placement["on_track"]
        kwargs["on_track"] = (_number(p, "s", f"{where}.placement.on_track"),
                              _number(p, "lateral", f"{where}.placement.on_track"),
                              float(p.get("yaw_deg", 0.0)))
    elif "on_plane" in placement:
        p = placement["on_plane"]
        kwargs["on_plane"] = (int(_number(p, "plane", f"{where}.placement.on_plane")),
                              _number(p, "du", f"{where}.placement.on_plane"),
                              _number(p, "dv", f"{where}.placement.on_plane"),
                              float(p.get("yaw_deg", 0.0)))
    else:
        raise SchemaViolation(f"{where}.placement: need absolute | on_track | on_plane")
    return ObjectPlacement(str(mesh), stencil, scale,
                           tuple(float(c) for c in color), **kwargs)


def load_scene_config(path, obstacle_base: int = 10) -> SceneConfig:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid JSON ({exc})") from exc
    objects = []
    for k, odoc in enumerate(doc.get("objects", [])):
        objects.append(_placement_from_json(odoc, f"{path}.objects[{k}]"))
    ids = [o.stencil_id for o in objects]
    if len(set(ids)) != len(ids):
        raise SchemaViolation(f"{path}: duplicate stencil ids {sorted(ids)}")
    for o in objects:
        if o.stencil_id < obstacle_base:
            raise SchemaViolation(
                f"{path}: stencil id {o.stencil_id} below obstacle base {obstacle_base}")
        if o.stencil_id == CALIBRATION_STENCIL:
            raise SchemaViolation(
                f"{path}: stencil id {CALIBRATION_STENCIL} is reserved")
    track = doc.get("track_mesh", {})
    sphere = None
    if doc.get("calibration_sphere") is not None:
        s = doc["calibration_sphere"]
        center = _require(s, "center", f"{path}.calibration_sphere")
        if not isinstance(center, list) or len(center) != 3:
            raise SchemaViolation(f"{path}.calibration_sphere.center: expected 3 numbers")
        radius = _number(s, "radius", f"{path}.calibration_sphere")
        if radius <= 0:
            raise SchemaViolation(f"{path}.calibration_sphere.radius: must be > 0")
        sphere = (np.asarray(center, dtype=np.float64), radius)
    light_doc = doc.get("light", {})
    direction = light_doc.get("direction", [-0.3, 0.2, -1.0])
    if not isinstance(direction, list) or len(direction) != 3:
        raise SchemaViolation(f"{path}.light.direction: expected 3 numbers")
    light = LightModel(tuple(float(c) for c in direction),
                       float(light_doc.get("intensity", 0.7)),
                       float(light_doc.get("ambient", 0.3)))
    return SceneConfig(tuple(objects),
                       float(track.get("width", 0.10)),
                       float(track.get("height", 0.05)),
                       sphere, light, root=path.parent)


def save_scene_config(config: SceneConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    objects = []
    for o in config.objects:
        if o.absolute is not None:
            placement = {"absolute": transform_to_json(o.absolute)}
        elif o.on_track is not None:
            placement = {"on_track": {"s": o.on_track[0], "lateral": o.on_track[1],
                                      "yaw_deg": o.on_track[2]}}
        else:
            placement = {"on_plane": {"plane": o.on_plane[0], "du": o.on_plane[1],
                                      "dv": o.on_plane[2], "yaw_deg": o.on_plane[3]}}
        objects.append({"mesh": o.mesh, "stencil_id": o.stencil_id,
                        "scale": o.scale, "color": list(o.color),
                        "placement": placement})
    doc = {"objects": objects,
           "track_mesh": {"width": config.track_width, "height": config.track_height},
           "light": {"direction": list(config.light.direction),
                     "intensity": config.light.intensity,
                     "ambient": config.light.ambient}}
    if config.calibration_sphere is not None:
        center, radius = config.calibration_sphere
        doc["calibration_sphere"] = {"center": [float(c) for c in center],
                                     "radius": radius}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
