"""Minimal virtual scene construction and deterministic raycast rendering.

Procedural meshes (track boxes, pole boxes, plane rectangles) plus loaded
obstacle meshes are merged into one triangle soup and rendered per frame
into three aligned buffers: stencil mask, camera-frame depth, and flat
Lambertian color. The same ray engine removes or replaces real lidar points
hidden behind virtual objects.

Every triangle carries a nonzero stencil id, which is what makes the
mask/depth invariant (mask nonzero exactly where depth is finite) hold by
construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .core import (
    CameraModel,
    ImageBuffer,
    LabeledPointCloud,
    Pose,
    TrackCenterline,
)
from .errors import (
    DegenerateInput,
    MeshLoadError,
    MissingFile,
    ValidationError,
)
from .ingest import CALIBRATION_STENCIL, LightModel, SceneConfig
from .raycast import RaycastScene
from .scene_extract import Plane, PoleCluster

_BOX_TRIANGLES = np.array([
    [0, 2, 1], [0, 3, 2],   # bottom
    [4, 5, 6], [4, 6, 7],   # top
    [0, 1, 5], [0, 5, 4],
    [1, 2, 6], [1, 6, 5],
    [2, 3, 7], [2, 7, 6],
    [3, 0, 4], [3, 4, 7],
], dtype=np.int64)


def _triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """World-space triangle mesh with a flat color and a stencil id."""

    vertices: np.ndarray
    triangles: np.ndarray
    base_color: tuple[float, float, float] = (200.0, 200.0, 200.0)
    stencil_id: int = 1

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if t.shape[0] == 0:
            raise ValidationError("mesh has no triangles")
        if t.min() < 0 or t.max() >= v.shape[0]:
            raise ValidationError("triangle index out of range")
        areas = _triangle_areas(v, t)
        if np.any(areas <= 1e-12):
            raise ValidationError(
                f"{int((areas <= 1e-12).sum())} degenerate triangle(s)")
        if self.stencil_id < 1:
            raise ValidationError("stencil_id must be >= 1 (0 means background)")

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def transformed(self, transform) -> "TriangleMesh":
        return TriangleMesh(transform.apply(self.vertices), self.triangles,
                            self.base_color, self.stencil_id)


# ---------------------------------------------------------------------------
# Procedural meshes

def _box_vertices(corners_bottom: np.ndarray, height_vec: np.ndarray) -> np.ndarray:
    return np.vstack([corners_bottom, corners_bottom + height_vec])


def build_track_mesh(centerline: TrackCenterline, width: float, height: float,
                     stencil_id: int = 1,
                     base_color: tuple = (70.0, 70.0, 75.0)) -> TriangleMesh:
    """One box per centerline edge: long axis along the edge, `width` across
    it horizontally, rising `height` above the centerline."""
    verts = []
    tris = []
    up = np.array([0.0, 0.0, height])
    base = 0
    for k in range(len(centerline) - 1):
        a = centerline.vertices[k]
        b = centerline.vertices[k + 1]
        t = b - a
        horiz = math.hypot(t[0], t[1])
        if horiz < 1e-12:
            # vertical edges cannot happen for a valid track; skip defensively
            continue
        left = np.array([-t[1] / horiz, t[0] / horiz, 0.0]) * (width / 2.0)
        bottom = np.array([a - left, b - left, b + left, a + left])
        verts.append(_box_vertices(bottom, up))
        tris.append(_BOX_TRIANGLES + base)
        base += 8
    if not verts:
        raise DegenerateInput("centerline produced no track segments")
    return TriangleMesh(np.vstack(verts), np.vstack(tris), base_color, stencil_id)


def build_pole_mesh(cluster: PoleCluster, footprint: float = 0.3,
                    stencil_id: int = 4,
                    base_color: tuple = (120.0, 120.0, 125.0)) -> TriangleMesh:
    """Axis-aligned box over the cluster footprint, spanning its z extent
    (clamped to at least 0.1 m tall)."""
    cx, cy = float(cluster.centroid[0]), float(cluster.centroid[1])
    z0, z1 = cluster.z_extent
    if z1 - z0 < 0.1:
        z1 = z0 + 0.1
    h = footprint / 2.0
    bottom = np.array([
        [cx - h, cy - h, z0], [cx + h, cy - h, z0],
        [cx + h, cy + h, z0], [cx - h, cy + h, z0],
    ])
    verts = _box_vertices(bottom, np.array([0.0, 0.0, z1 - z0]))
    return TriangleMesh(verts, _BOX_TRIANGLES, base_color, stencil_id)


def _plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic in-plane orthonormal basis (e1, e2)."""
    ref = np.array([0.0, 0.0, 1.0]) if abs(normal[2]) < 0.9 \
        else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(ref, normal)
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    return e1, e2


def build_plane_mesh(plane: Plane, inlier_points: np.ndarray,
                     stencil_id: int = 3,
                     base_color: tuple = (150.0, 150.0, 145.0)) -> TriangleMesh:
    """Rectangle covering the inliers' minimum-area oriented bounding
    rectangle within the fitted plane (two triangles)."""
    pts = np.asarray(inlier_points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] < 3:
        raise DegenerateInput(f"{pts.shape[0]} inliers, need >= 3")
    e1, e2 = _plane_basis(plane.normal)
    rel = pts - plane.centroid
    q = np.column_stack([rel @ e1, rel @ e2])
    try:
        hull = ConvexHull(q)
    except QhullError as exc:
        raise DegenerateInput(f"inliers are collinear in the plane: {exc}") from exc
    hv = q[hull.vertices]
    edges = np.roll(hv, -1, axis=0) - hv
    best = None
    for k in range(hv.shape[0]):
        ex, ey = edges[k]
        norm = math.hypot(ex, ey)
        if norm < 1e-12:
            continue
        c, s = ex / norm, ey / norm
        rot = np.array([[c, s], [-s, c]])  # rotate edge onto +x
        r = q @ rot.T
        lo = r.min(axis=0)
        hi = r.max(axis=0)
        area = (hi[0] - lo[0]) * (hi[1] - lo[1])
        if best is None or area < best[0] - 1e-15:
            best = (area, rot, lo, hi)
    if best is None:
        raise DegenerateInput("bounding rectangle is degenerate")
    _, rot, lo, hi = best
    corners2 = np.array([[lo[0], lo[1]], [hi[0], lo[1]],
                         [hi[0], hi[1]], [lo[0], hi[1]]]) @ rot
    corners3 = plane.centroid + corners2[:, :1] * e1 + corners2[:, 1:] * e2
    return TriangleMesh(corners3, np.array([[0, 1, 2], [0, 2, 3]]),
                        base_color, stencil_id)


def build_sphere_mesh(center, radius: float, subdivisions: int = 2,
                      stencil_id: int = CALIBRATION_STENCIL,
                      base_color: tuple = (255.0, 40.0, 40.0)) -> TriangleMesh:
    """Icosphere by repeated edge-midpoint subdivision (deterministic)."""
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    tris = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}
        new_tris = []

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in tris:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_tris += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        tris = new_tris
    v = np.asarray(verts) * radius + np.asarray(center, dtype=np.float64)
    return TriangleMesh(v, np.asarray(tris, dtype=np.int64), base_color, stencil_id)


# ---------------------------------------------------------------------------
# Mesh loading and placement

def _load_obj(path: Path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise MeshLoadError(f"{path}:{ln}: malformed vertex")
            verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                head = tok.split("/")[0]
                k = int(head)
                idx.append(k - 1 if k > 0 else len(verts) + k)
            if len(idx) < 3:
                raise MeshLoadError(f"{path}:{ln}: face with < 3 vertices")
            for i in range(1, len(idx) - 1):  # fan triangulation
                faces.append([idx[0], idx[i], idx[i + 1]])
    if not verts or not faces:
        raise MeshLoadError(f"{path}: no vertices or faces")
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def _load_mesh_ply(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = path.read_bytes()
    if not raw.startswith(b"ply"):
        raise MeshLoadError(f"{path}: not a PLY file")
    header_end = raw.find(b"end_header")
    if header_end < 0:
        raise MeshLoadError(f"{path}: missing end_header")
    header_end = raw.index(b"\n", header_end) + 1
    lines = raw[:header_end].decode("ascii", "replace").splitlines()
    fmt = None
    n_verts = n_faces = 0
    element = None
    vert_props: list[tuple[str, str]] = []
    for line in lines[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            element = parts[1]
            if element == "vertex":
                n_verts = int(parts[2])
            elif element == "face":
                n_faces = int(parts[2])
        elif parts[0] == "property" and element == "vertex":
            if parts[1] == "list":
                raise MeshLoadError(f"{path}: list property on vertices")
            vert_props.append((parts[2], parts[1]))
    names = [n for n, _ in vert_props]
    if names[:3] != ["x", "y", "z"] or len(names) != 3:
        raise MeshLoadError(f"{path}: mesh vertices must have exactly x, y, z")
    types = {t for _, t in vert_props}
    if not types <= {"float", "float32", "double", "float64"}:
        raise MeshLoadError(f"{path}: unsupported vertex type {sorted(types)}")

    if fmt == "ascii":
        tokens = raw[header_end:].decode("ascii", "replace").split()
        pos = 0
        verts = np.array(tokens[:3 * n_verts], dtype=np.float64).reshape(-1, 3)
        pos = 3 * n_verts
        faces = []
        for _ in range(n_faces):
            cnt = int(tokens[pos])
            idx = [int(t) for t in tokens[pos + 1:pos + 1 + cnt]]
            pos += 1 + cnt
            for i in range(1, cnt - 1):
                faces.append([idx[0], idx[i], idx[i + 1]])
    elif fmt == "binary_little_endian":
        itemsize = 8 if "double" in types or "float64" in types else 4
        vdtype = "<f8" if itemsize == 8 else "<f4"
        body = raw[header_end:]
        need = n_verts * 3 * itemsize
        if len(body) < need:
            raise MeshLoadError(f"{path}: truncated vertex block")
        verts = np.frombuffer(body[:need], dtype=vdtype).astype(np.float64)
        verts = verts.reshape(-1, 3)
        faces = []
        off = need
        for _ in range(n_faces):
            cnt = body[off]
            off += 1
            idx = np.frombuffer(body[off:off + 4 * cnt], dtype="<i4")
            off += 4 * cnt
            for i in range(1, cnt - 1):
                faces.append([int(idx[0]), int(idx[i]), int(idx[i + 1])])
    else:
        raise MeshLoadError(f"{path}: unsupported format {fmt!r}")
    if not faces:
        raise MeshLoadError(f"{path}: no faces")
    return verts, np.asarray(faces, dtype=np.int64)


def load_mesh(path) -> tuple[np.ndarray, np.ndarray]:
    """Read an OBJ or PLY triangle mesh; degenerate triangles are dropped.

    Returns (vertices, triangles). Raises MeshLoadError when the file cannot
    be parsed or contains no usable triangles.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    try:
        if path.suffix.lower() == ".obj":
            verts, faces = _load_obj(path)
        elif path.suffix.lower() == ".ply":
            verts, faces = _load_mesh_ply(path)
        else:
            raise MeshLoadError(f"{path}: unsupported mesh format {path.suffix!r}")
    except (ValueError, IndexError) as exc:
        raise MeshLoadError(f"{path}: {exc}") from exc
    if faces.min(initial=0) < 0 or faces.max(initial=-1) >= verts.shape[0]:
        raise MeshLoadError(f"{path}: face index out of range")
    areas = _triangle_areas(verts, faces)
    faces = faces[areas > 1e-12]
    if faces.shape[0] == 0:
        raise MeshLoadError(f"{path}: all triangles degenerate")
    return verts, faces


def _rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def place_objects(config: SceneConfig, centerline: TrackCenterline | None,
                  planes: list[Plane] | None = None) -> list[TriangleMesh]:
    """Instantiate every configured object as a world-space mesh.

    on_track places the object at the centerline arc length, shifted along
    the left-pointing horizontal normal, yawed relative to the tangent, and
    rested with its bounding-box bottom on the centerline height. on_plane
    works the same way in the fitted plane's frame. absolute applies the
    given pose directly (no resting).
    """
    placed = []
    for obj in config.objects:
        verts, tris = load_mesh(config.resolve(obj.mesh))
        verts = verts * obj.scale
        if obj.absolute is not None:
            world = obj.absolute.apply(verts)
        elif obj.on_track is not None:
            if centerline is None:
                raise ValidationError(
                    f"object {obj.mesh!r}: on_track placement needs a centerline")
            s, lateral, yaw_deg = obj.on_track
            anchor = centerline.point_at(s)  # raises ArclengthOutOfRange
            tangent = centerline.tangent_at(s)
            heading = math.atan2(tangent[1], tangent[0])
            left = np.array([-math.sin(heading), math.cos(heading), 0.0])
            rot = _rot_z(heading + math.radians(yaw_deg))
            world = verts @ rot.T
            target = anchor + lateral * left
            world[:, 0] += target[0]
            world[:, 1] += target[1]
            # rest the bounding-box bottom on the centerline height
            world[:, 2] += anchor[2] - world[:, 2].min()
        elif obj.on_plane is not None:
            if not planes:
                raise ValidationError(
                    f"object {obj.mesh!r}: on_plane placement needs fitted planes")
            plane_idx, du, dv, yaw_deg = obj.on_plane
            if not 0 <= plane_idx < len(planes):
                raise ValidationError(
                    f"object {obj.mesh!r}: plane index {plane_idx} out of range")
            plane = planes[plane_idx]
            e1, e2 = _plane_basis(plane.normal)
            anchor = plane.centroid + du * e1 + dv * e2
            rot = _rot_z(math.radians(yaw_deg))
            world = verts @ rot.T + anchor
            if abs(plane.normal[2]) > 1e-6:
                z_surf = -(plane.d + plane.normal[0] * anchor[0]
                           + plane.normal[1] * anchor[1]) / plane.normal[2]
                world[:, 2] += z_surf - world[:, 2].min()
        placed.append(TriangleMesh(world, tris, obj.color, obj.stencil_id))
    return placed


# ---------------------------------------------------------------------------
# Scene assembly and rendering

def build_scene(meshes: list[TriangleMesh]) -> RaycastScene:
    """Merge meshes into one raycastable triangle soup."""
    if not meshes:
        return RaycastScene(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    verts, tris, stencils, colors = [], [], [], []
    offset = 0
    for mesh in meshes:
        verts.append(mesh.vertices)
        tris.append(mesh.triangles + offset)
        offset += mesh.vertices.shape[0]
        f = mesh.n_triangles
        stencils.append(np.full(f, mesh.stencil_id, dtype=np.uint16))
        colors.append(np.tile(np.asarray(mesh.base_color, dtype=np.float64), (f, 1)))
    return RaycastScene(np.vstack(verts), np.vstack(tris),
                        np.concatenate(stencils), np.vstack(colors))


@dataclass(frozen=True, eq=False)
class FrameRender:
    color: ImageBuffer
    mask: ImageBuffer
    depth: ImageBuffer

    def __post_init__(self):
        if not (self.color.same_size(self.mask) and self.color.same_size(self.depth)):
            raise ValidationError("render buffers must share dimensions")
        hit = self.mask.data != 0
        finite = np.isfinite(self.depth.data)
        if not np.array_equal(hit, finite):
            raise ValidationError("mask nonzero and depth finite must coincide")


def render_frame(scene, cam: CameraModel, pose: Pose,
                 light: LightModel | None = None,
                 use_bvh: bool = True) -> FrameRender:
    """Raycast one camera view of the scene.

    `scene` is a RaycastScene or a list of TriangleMesh. Per pixel: nearest
    triangle (ties to the lower index) gives stencil and camera-frame depth;
    color is base_color * (ambient + intensity * max(0, n . l)) with the
    triangle normal flipped toward the viewer, rounded half-up.
    """
    if not isinstance(scene, RaycastScene):
        scene = build_scene(scene)
    if light is None:
        light = LightModel()
    w, h = cam.width, cam.height
    world_from_cam = pose.transform.compose(cam.body_from_camera)
    r_wc = world_from_cam.rotation
    origin = world_from_cam.translation

    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    d_cam = np.column_stack([
        ((uu - cam.cx) / cam.fx).ravel(),
        ((vv - cam.cy) / cam.fy).ravel(),
        np.ones(w * h),
    ])
    dirs = d_cam @ r_wc.T  # camera z component is 1, so t equals depth
    origins = np.broadcast_to(origin, dirs.shape)
    t, idx = scene.cast(origins, dirs, use_bvh=use_bvh)

    depth = t.astype(np.float32).reshape(h, w)
    mask = np.zeros(w * h, dtype=np.uint16)
    color = np.zeros((w * h, 3), dtype=np.uint8)
    hit = idx >= 0
    if hit.any():
        tri = idx[hit]
        mask[hit] = scene.tri_stencil[tri]
        n = scene.normals[tri].copy()
        facing_away = (n * dirs[hit]).sum(axis=1) > 0
        n[facing_away] = -n[facing_away]
        lvec = -np.asarray(light.direction, dtype=np.float64)
        lvec = lvec / np.linalg.norm(lvec)
        lam = np.maximum(0.0, n @ lvec)
        shade = light.ambient + light.intensity * lam
        rgb = np.floor(scene.tri_color[tri] * shade[:, None] + 0.5)
        color[hit] = np.clip(rgb, 0, 255).astype(np.uint8)
    return FrameRender(
        ImageBuffer(color.reshape(h, w, 3), "RGB8"),
        ImageBuffer(mask.reshape(h, w), "LABEL16"),
        ImageBuffer(depth, "DEPTH32"),
    )


# ---------------------------------------------------------------------------
# Point-cloud occlusion

def occlude_pointcloud(cloud: LabeledPointCloud, scene,
                       mode: str = "replace",
                       epsilon: float = 1e-3) -> LabeledPointCloud:
    """Hide real lidar returns behind virtual geometry.

    A point is occluded when the ray from the lidar origin toward it hits a
    mesh at parameter t < 1 - epsilon (i.e. measurably in front of the
    point). remove drops such points; replace moves them onto the mesh
    surface and relabels them with the mesh stencil id.
    """
    if mode not in ("remove", "replace"):
        raise ValidationError(f"unknown occlusion mode {mode!r}")
    if not isinstance(scene, RaycastScene):
        scene = build_scene(scene)
    if len(cloud) == 0 or scene.n_triangles == 0:
        return cloud
    dirs = np.asarray(cloud.points, dtype=np.float64)
    origins = np.zeros_like(dirs)
    t, idx = scene.cast(origins, dirs)
    occluded = np.isfinite(t) & (t < 1.0 - epsilon)
    if mode == "remove":
        return cloud.select(~occluded)
    points = cloud.points.copy()
    points[occluded] *= t[occluded, None]
    labels = cloud.labels.copy()
    labels[occluded] = scene.tri_stencil[idx[occluded]]
    return LabeledPointCloud(points, labels, cloud.intensity, cloud.frame)


# ---------------------------------------------------------------------------
# Depth and render persistence

def save_depth(depth: ImageBuffer, path) -> Path:
    """Raw depth dump: uint32 width, uint32 height, then row-major float32,
    all little-endian."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(np.array([depth.width, depth.height], dtype="<u4").tobytes())
        fh.write(depth.data.astype("<f4").tobytes())
    return path


def load_depth(path) -> ImageBuffer:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    raw = path.read_bytes()
    w, h = np.frombuffer(raw[:8], dtype="<u4")
    data = np.frombuffer(raw[8:8 + 4 * w * h], dtype="<f4").reshape(h, w)
    return ImageBuffer(data.copy(), "DEPTH32")


def save_frame_render(render: FrameRender, out_dir, frame_index: int) -> dict:
    """Write {frame:06}_color.png, _mask.png, _depth.bin; returns the paths."""
    from .ingest import save_image
    out_dir = Path(out_dir)
    stem = f"{frame_index:06d}"
    paths = {
        "color": save_image(render.color, out_dir / f"{stem}_color.png"),
        "mask": save_image(render.mask, out_dir / f"{stem}_mask.png"),
        "depth": save_depth(render.depth, out_dir / f"{stem}_depth.bin"),
    }
    return paths
