"""Blend rendered object layers into the real camera images.

The object layer is adapted before merging so it does not look pasted on:
its lightness distribution is matched to the real sequence in CIE L*a*b*,
it is blurred with a kernel that shrinks with object distance, and it can
be shifted by a whole-pixel offset to compensate residual localization
error. Compositing itself is plain alpha blending, arranged so that pixels
the objects do not touch stay bit-identical to the source image.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

from .core import ImageBuffer
from .errors import (
    EmptyInput,
    EmptyMask,
    NonPositiveDistance,
    SizeMismatch,
    ValidationError,
)
from .render import FrameRender

# sRGB primaries / D65, linear RGB -> XYZ
_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_XYZ_TO_SRGB = np.linalg.inv(_SRGB_TO_XYZ)
# white point taken from the matrix row sums so that pure white maps to
# exactly L=100 and every gray to zero chroma
_WHITE_D65 = _SRGB_TO_XYZ.sum(axis=1)
_DELTA = 6.0 / 29.0


def srgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """uint8 sRGB (..., 3) -> CIE L*a*b* float64, L in [0, 100]."""
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _SRGB_TO_XYZ.T / _WHITE_D65
    f = np.where(xyz > _DELTA ** 3, np.cbrt(xyz),
                 xyz / (3.0 * _DELTA ** 2) + 4.0 / 29.0)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def lab_to_srgb(lab: np.ndarray) -> np.ndarray:
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    f = np.stack([fy + lab[..., 1] / 500.0, fy, fy - lab[..., 2] / 200.0],
                 axis=-1)
    xyz = np.where(f > _DELTA, f ** 3, 3.0 * _DELTA ** 2 * (f - 4.0 / 29.0))
    lin = (xyz * _WHITE_D65) @ _XYZ_TO_SRGB.T
    lin = np.clip(lin, 0.0, 1.0)
    c = np.where(lin <= 0.0031308, 12.92 * lin,
                 1.055 * lin ** (1.0 / 2.4) - 0.055)
    return np.floor(np.clip(c, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


@dataclass(frozen=True)
class LightnessStats:
    mean_L: float
    std_L: float

    def __post_init__(self):
        if self.std_L < 0.0:
            raise ValidationError("std_L must be >= 0")


@dataclass(frozen=True)
class BlurParams:
    strength: float = 2.0        # sigma = strength / distance
    sigma_max: float = 4.0       # px
    sigma_min_active: float = 0.3  # below this the blur is skipped

    def __post_init__(self):
        if min(self.strength, self.sigma_max, self.sigma_min_active) < 0:
            raise ValidationError("blur parameters must be >= 0")


def _rgb8(image: ImageBuffer, name: str) -> None:
    if image.format != "RGB8":
        raise ValidationError(f"{name} must be RGB8, got {image.format}")


def _mask_array(mask) -> np.ndarray:
    data = mask.data if isinstance(mask, ImageBuffer) else np.asarray(mask)
    return data != 0


def sequence_lightness_stats(images: list[ImageBuffer]) -> LightnessStats:
    """Mean and population std of L* over every pixel of every frame."""
    if not images:
        raise EmptyInput("no images to collect lightness statistics from")
    total = 0.0
    total_sq = 0.0
    n = 0
    for image in images:
        _rgb8(image, "real image")
        lum = srgb_to_lab(image.data)[..., 0]
        total += lum.sum()
        total_sq += (lum * lum).sum()
        n += lum.size
    mean = total / n
    var = max(0.0, total_sq / n - mean * mean)
    return LightnessStats(mean, math.sqrt(var))


def match_lightness(synthetic: ImageBuffer, mask,
                    target: LightnessStats) -> ImageBuffer:
    """Affinely map the masked pixels' L* to the target mean/std.

    Degenerate masked regions (std below 1e-6) are shifted instead of
    scaled. Chroma is carried through the LAB round trip untouched and the
    unmasked pixels are copied verbatim.
    """
    _rgb8(synthetic, "synthetic image")
    m = _mask_array(mask)
    if m.shape != synthetic.data.shape[:2]:
        raise SizeMismatch(f"mask {m.shape} vs image {synthetic.data.shape[:2]}")
    if not m.any():
        raise EmptyMask("lightness matching needs at least one masked pixel")
    lab = srgb_to_lab(synthetic.data[m])
    lum = lab[:, 0]
    mu_s = lum.mean()
    sd_s = lum.std()
    if sd_s < 1e-6:
        lum = lum - mu_s + target.mean_L
    else:
        lum = (lum - mu_s) * (target.std_L / sd_s) + target.mean_L
    lab[:, 0] = np.clip(lum, 0.0, 100.0)
    out = synthetic.data.copy()
    out[m] = lab_to_srgb(lab)
    return ImageBuffer(out, "RGB8")


def blur_sigma(distance: float, params: BlurParams = BlurParams()) -> float:
    """Blur strength for an object at the given distance: strength/distance
    capped at sigma_max; tiny values are rounded down to no blur at all."""
    if distance <= 0.0:
        raise NonPositiveDistance(f"distance {distance} must be > 0")
    sigma = min(params.strength / distance, params.sigma_max)
    return 0.0 if sigma < params.sigma_min_active else sigma


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D kernel with radius ceil(3 sigma)."""
    if sigma <= 0.0:
        return np.array([1.0])
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def blur_object_layer(color: ImageBuffer, mask,
                      sigma: float) -> tuple[ImageBuffer, ImageBuffer]:
    """Gaussian-blur the object color layer and soften its mask into an
    alpha channel (clamp-to-edge borders). sigma 0 keeps the color
    untouched and yields a hard 0/255 alpha."""
    _rgb8(color, "object layer")
    m = _mask_array(mask)
    if sigma <= 0.0:
        alpha = (m.astype(np.uint8)) * np.uint8(255)
        return ImageBuffer(color.data.copy(), "RGB8"), ImageBuffer(alpha, "GRAY8")
    kernel = gaussian_kernel(sigma)
    blurred = color.data.astype(np.float64)
    alpha = m.astype(np.float64) * 255.0
    for axis in (0, 1):
        blurred = convolve1d(blurred, kernel, axis=axis, mode="nearest")
        alpha = convolve1d(alpha, kernel, axis=axis, mode="nearest")
    blurred = np.floor(np.clip(blurred, 0.0, 255.0) + 0.5).astype(np.uint8)
    alpha = np.floor(np.clip(alpha, 0.0, 255.0) + 0.5).astype(np.uint8)
    return ImageBuffer(blurred, "RGB8"), ImageBuffer(alpha, "GRAY8")


def compensate_offset(color: ImageBuffer, alpha: ImageBuffer,
                      offset: tuple[float, float]) -> tuple[ImageBuffer, ImageBuffer]:
    """Shift both layers by the offset rounded to whole pixels; vacated
    regions become fully transparent."""
    du, dv = offset
    if not (math.isfinite(du) and math.isfinite(dv)):
        raise ValidationError(f"offset {offset} must be finite")
    du = int(np.rint(du))
    dv = int(np.rint(dv))
    if du == 0 and dv == 0:
        return (ImageBuffer(color.data.copy(), color.format),
                ImageBuffer(alpha.data.copy(), alpha.format))
    h, w = alpha.data.shape
    out_c = np.zeros_like(color.data)
    out_a = np.zeros_like(alpha.data)
    src_x = slice(max(-du, 0), w - max(du, 0))
    dst_x = slice(max(du, 0), w - max(-du, 0))
    src_y = slice(max(-dv, 0), h - max(dv, 0))
    dst_y = slice(max(dv, 0), h - max(-dv, 0))
    if src_x.start < src_x.stop and src_y.start < src_y.stop:
        out_c[dst_y, dst_x] = color.data[src_y, src_x]
        out_a[dst_y, dst_x] = alpha.data[src_y, src_x]
    return ImageBuffer(out_c, color.format), ImageBuffer(out_a, alpha.format)


def composite_frame(real: ImageBuffer, object_color: ImageBuffer,
                    alpha: ImageBuffer) -> ImageBuffer:
    """out = (alpha/255) * object + (1 - alpha/255) * real, rounded half-up.

    Alpha-zero pixels reproduce the real image exactly because the blend of
    an integer with weight one survives the rounding unchanged.
    """
    _rgb8(real, "real image")
    _rgb8(object_color, "object layer")
    if not (real.same_size(object_color) and real.same_size(alpha)):
        raise SizeMismatch("composite layers must share dimensions")
    a = alpha.data.astype(np.float64)[..., None] / 255.0
    out = a * object_color.data + (1.0 - a) * real.data
    return ImageBuffer(np.floor(out + 0.5).astype(np.uint8), "RGB8")


def compose_augmented_frame(real: ImageBuffer, render: FrameRender,
                            target: LightnessStats | None = None,
                            blur: BlurParams | None = None,
                            offset: tuple[float, float] = (0.0, 0.0)):
    """Full per-frame pipeline: lightness match, per-object blur by mean
    depth, offset compensation, far-to-near alpha blending.

    Returns (augmented image, report dict). The report lists each stencil
    layer with its mean distance and the blur sigma applied.
    """
    _rgb8(real, "real image")
    if not real.same_size(render.mask):
        raise SizeMismatch("render does not match the real image size")
    mask = render.mask.data
    du = int(np.rint(offset[0]))
    dv = int(np.rint(offset[1]))
    report = {"offset": [du, dv], "objects": []}
    out = ImageBuffer(real.data.copy(), "RGB8")
    if not mask.any():
        return out, report

    color = render.color
    if target is not None:
        color = match_lightness(color, render.mask, target)

    stencils = np.unique(mask)
    stencils = stencils[stencils != 0]
    layers = []
    for sid in stencils:
        sel = mask == sid
        distance = float(render.depth.data[sel].mean())
        layers.append((int(sid), distance))
    layers.sort(key=lambda item: (-item[1], item[0]))  # far to near

    for sid, distance in layers:
        sel = mask == sid
        sigma = blur_sigma(distance, blur) if blur is not None else 0.0
        layer_color = np.where(sel[..., None], color.data, np.uint8(0))
        lc, la = blur_object_layer(ImageBuffer(layer_color, "RGB8"), sel, sigma)
        lc, la = compensate_offset(lc, la, offset)
        out = composite_frame(out, lc, la)
        report["objects"].append(
            {"stencil": sid, "distance": distance, "sigma": sigma})
    return out, report


def save_composite_report(report: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path


def load_composite_report(path) -> dict:
    return json.loads(Path(path).read_text())
