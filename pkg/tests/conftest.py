"""Shared fixture helpers: tiny on-disk bundles for IO and pipeline tests."""

import json
from pathlib import Path

import numpy as np

from railar.core import (
    CameraModel,
    ImageBuffer,
    LabeledPointCloud,
    RigidTransform,
    SemanticClassMap,
)
from railar.ingest import save_image, save_pointcloud

# camera axes in body coordinates: x-right -> -y, y-down -> -z, z-forward -> +x
R_BODY_FROM_CAMERA = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])


def forward_camera(fx=50.0, fy=50.0, cx=31.5, cy=23.5, width=64, height=48,
                   t=(0.0, 0.0, 0.0)) -> CameraModel:
    return CameraModel(fx, fy, cx, cy, width, height,
                       RigidTransform(R_BODY_FROM_CAMERA, t))


def camera_manifest_entry(cam: CameraModel) -> dict:
    return {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "body_from_camera": {
            "R": list(cam.body_from_camera.rotation.ravel()),
            "t": list(cam.body_from_camera.translation),
        },
    }


def write_bundle(root: Path, clouds, poses, timestamps=None, cameras=None,
                 images=None, label_masks=None,
                 body_from_lidar=RigidTransform.from_translation(0.0, 0.0, 0.5),
                 class_map=None) -> Path:
    """Write a bundle from in-memory parts.

    clouds: list of LabeledPointCloud (lidar frame, one per frame)
    poses: list of RigidTransform (world_from_body)
    cameras: map id -> CameraModel (a default forward camera if None)
    images: optional map id -> list of ImageBuffer
    label_masks: optional map id -> list of (ImageBuffer | None)
    """
    root = Path(root)
    n = len(clouds)
    if timestamps is None:
        timestamps = [0.1 * i for i in range(n)]
    if cameras is None:
        cameras = {"cam0": forward_camera()}
    if class_map is None:
        class_map = SemanticClassMap.default()
    (root / "clouds").mkdir(parents=True, exist_ok=True)

    frames = []
    for i in range(n):
        save_pointcloud(clouds[i], root / "clouds" / f"{i:06d}.ply")
        rec = {
            "index": i,
            "timestamp": timestamps[i],
            "pose": {"R": list(poses[i].rotation.ravel()),
                     "t": list(poses[i].translation)},
            "cloud": f"clouds/{i:06d}.ply",
            "images": {},
        }
        for cid, cam in cameras.items():
            if images is not None and cid in images:
                img = images[cid][i]
            else:
                data = np.zeros((cam.height, cam.width, 3), dtype=np.uint8)
                data[:, :, 0] = (np.arange(cam.width) * (i + 1)) % 256
                img = ImageBuffer(data, "RGB8")
            rel = f"images/{cid}/{i:06d}.png"
            save_image(img, root / rel)
            rec["images"][cid] = rel
        if label_masks is not None:
            rec["labels"] = {}
            for cid, masks in label_masks.items():
                if masks[i] is None:
                    continue
                rel = f"labels/{cid}/{i:06d}.png"
                save_image(masks[i], root / rel)
                rec["labels"][cid] = rel
        frames.append(rec)

    manifest = {
        "cameras": {cid: camera_manifest_entry(cam) for cid, cam in cameras.items()},
        "lidar": {"body_from_lidar": {"R": list(body_from_lidar.rotation.ravel()),
                                      "t": list(body_from_lidar.translation)}},
        "class_map": class_map.to_dict(),
        "frames": frames,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return root


def write_minimal_bundle(root: Path, n_frames: int = 2, with_labels: bool = True,
                         n_points: int = 5) -> Path:
    """Create a tiny but fully valid bundle directory with random payloads."""
    rng = np.random.default_rng(7)
    cam = forward_camera()
    clouds, poses = [], []
    masks = []
    for i in range(n_frames):
        pts = rng.uniform(-2, 2, size=(n_points, 3))
        labels = rng.integers(0, 5, size=n_points).astype(np.uint16)
        intensity = rng.random(n_points).astype(np.float32)
        clouds.append(LabeledPointCloud(pts, labels, intensity))
        poses.append(RigidTransform.from_translation(1.0 * i, 0.0, 0.0))
        mask = np.zeros((cam.height, cam.width), dtype=np.uint16)
        mask[20:30, 25:40] = 1  # a patch of `track`
        masks.append(ImageBuffer(mask, "LABEL16"))
    return write_bundle(root, clouds, poses,
                        cameras={"cam0": cam},
                        label_masks={"cam0": masks} if with_labels else None)


def structured_scene_points(rng, n_ground=1500, n_walls=800, n_poles=400):
    """World-frame points with enough 3D structure to lock down an ICP fit:
    a ground plane, two side walls, and a few vertical poles."""
    ground = np.column_stack([
        rng.uniform(-10, 30, n_ground),
        rng.uniform(-8, 8, n_ground),
        np.zeros(n_ground),
    ])
    side = rng.integers(0, 2, n_walls) * 2 - 1
    walls = np.column_stack([
        rng.uniform(-10, 30, n_walls),
        side * 8.0,
        rng.uniform(0, 4, n_walls),
    ])
    pole_x = rng.choice(np.arange(-8, 30, 6.0), n_poles)
    poles = np.column_stack([
        pole_x + rng.normal(scale=0.02, size=n_poles),
        rng.choice([-5.0, 5.0], n_poles) + rng.normal(scale=0.02, size=n_poles),
        rng.uniform(0, 5, n_poles),
    ])
    return np.vstack([ground, walls, poles])
