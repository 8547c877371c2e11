"""Hand-crafted quarter-resolution matching features and plane-induced warping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraView, Intrinsics, RigidTransform

SCALE = 4
DEFAULT_CHANNELS = 14  # 3 mean RGB + 2 gradients + 9 patch
LUMA = np.array([0.299, 0.587, 0.114])
_PATCH_EPS = 1e-8
_EDGE_TOL = 1e-9  # absorbs round-off for samples landing on knots or the border


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray  # (C, h, w)
    scale: int = SCALE

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


def luma(image: np.ndarray) -> np.ndarray:
    # elementwise rather than a matmul: BLAS may round identical pixels differently
    image = np.asarray(image, dtype=np.float64)
    return LUMA[0] * image[..., 0] + LUMA[1] * image[..., 1] + LUMA[2] * image[..., 2]


def cell_mean(a: np.ndarray, factor: int = SCALE) -> np.ndarray:
    """Average-pool the two leading axes by ``factor``.

    Summed tap by tap so that equal cells give bit-identical means.
    """
    h, w = a.shape[0] // factor, a.shape[1] // factor
    a = np.asarray(a, dtype=np.float64)[: h * factor, : w * factor]
    total = np.zeros((h, w) + a.shape[2:])
    for dy in range(factor):
        for dx in range(factor):
            total += a[dy::factor, dx::factor]
    return total / (factor * factor)


def quarter_luma(image: np.ndarray) -> np.ndarray:
    return cell_mean(luma(image))


def sobel(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical Sobel derivatives (normalized by 8), edge-replicated."""
    p = np.pad(gray, 1, mode="edge")
    h, w = gray.shape

    def at(dy, dx):
        return p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]

    # each side is summed separately so that flat regions cancel exactly
    gx = ((at(-1, 1) + 2 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2 * at(0, -1) + at(1, -1))) / 8.0
    gy = ((at(1, -1) + 2 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2 * at(-1, 0) + at(-1, 1))) / 8.0
    return gx, gy


def normalized_patches(gray: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-norm 3x3 neighbourhoods, shape (9, h, w); flat patches map to 0."""
    p = np.pad(gray, 1, mode="edge")
    h, w = gray.shape
    patches = np.stack(
        [p[dy : dy + h, dx : dx + w] for dy in range(3) for dx in range(3)], axis=0
    )
    patches = patches - patches.mean(axis=0, keepdims=True)
    norm = np.sqrt((patches**2).sum(axis=0, keepdims=True))
    flat = norm < _PATCH_EPS
    return np.where(flat, 0.0, patches / np.where(flat, 1.0, norm))


def compute_matching_features(view: CameraView, channels: int = DEFAULT_CHANNELS) -> FeatureMap:
    image = np.asarray(view.image, dtype=np.float64)
    H, W = image.shape[:2]
    if H % SCALE or W % SCALE:
        raise ValueError(f"image size {W}x{H} is not divisible by {SCALE}")
    if channels < 5:
        raise ValueError(f"need at least 5 feature channels, got {channels}")
    rgb = cell_mean(image).transpose(2, 0, 1)
    gray = cell_mean(luma(image))
    gx, gy = sobel(gray)
    patches = normalized_patches(gray)
    stacked = np.concatenate([rgb, gx[None], gy[None], patches], axis=0)
    out = np.zeros((channels,) + gray.shape)
    n = min(channels, stacked.shape[0])
    out[:n] = stacked[:n]
    return FeatureMap(out)


def _snap(a: np.ndarray) -> np.ndarray:
    r = np.round(a)
    return np.where(np.abs(a - r) < _EDGE_TOL, r, a)


def bilinear_sample(data: np.ndarray, x: np.ndarray, y: np.ndarray):
    """Sample a (C, h, w) grid at continuous pixel coordinates.

    Returns ``(values (C, ...), inside)``. Out-of-bounds samples are zero and
    flagged outside; coordinates are valid on the closed box [0, w-1] x [0, h-1].
    """
    c, h, w = data.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inside = (
        np.isfinite(x) & np.isfinite(y)
        & (x >= -_EDGE_TOL) & (x <= w - 1 + _EDGE_TOL)
        & (y >= -_EDGE_TOL) & (y <= h - 1 + _EDGE_TOL)
    )
    xs = _snap(np.clip(np.where(inside, x, 0.0), 0, w - 1))
    ys = _snap(np.clip(np.where(inside, y, 0.0), 0, h - 1))
    x0 = np.minimum(np.floor(xs).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = xs - x0
    ay = ys - y0
    v00 = data[:, y0, x0]
    v01 = data[:, y0, x1]
    v10 = data[:, y1, x0]
    v11 = data[:, y1, x1]
    top = v00 * (1 - ax) + v01 * ax
    bottom = v10 * (1 - ax) + v11 * ax
    vals = top * (1 - ay) + bottom * ay
    return np.where(inside, vals, 0.0), inside


def warp_coordinates(
    rel: RigidTransform,
    src_intr: Intrinsics,
    dst_intr: Intrinsics,
    plane_depths,
    shape: tuple[int, int],
):
    """Source quarter-res sample positions for every destination pixel and plane.

    ``rel`` maps source-camera points into the destination camera. Returns
    ``(x, y, z_src)`` each of shape (K, h, w).
    """
    depths = np.atleast_1d(np.asarray(plane_depths, dtype=np.float64))
    if np.any(~(depths > 0)):
        raise ValueError("plane depth must be positive")
    h, w = shape
    sq, dq = src_intr.quarter(), dst_intr.quarter()
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    rays = np.stack([(u - dq.cx) / dq.fx, (v - dq.cy) / dq.fy, np.ones_like(u)], axis=-1)
    inv = rel.inverse()
    # points at depth d: d * ray, mapped into the source frame
    rot_rays = rays @ inv.rotation.T  # (h, w, 3)
    pts = depths[:, None, None, None] * rot_rays[None] + inv.translation
    z = pts[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = sq.fx * pts[..., 0] / z + sq.cx
        y = sq.fy * pts[..., 1] / z + sq.cy
    return x, y, z


def warp_features(
    src: FeatureMap,
    rel: RigidTransform,
    src_intr: Intrinsics,
    dst_intr: Intrinsics,
    plane_depth,
    out_shape: tuple[int, int] | None = None,
):
    """Warp source features onto fronto-parallel plane(s) of the destination view.

    ``plane_depth`` may be a scalar (returns a FeatureMap and an (h, w) mask)
    or a sequence of K depths (returns a (K, C, h, w) array and a (K, h, w)
    mask).
    """
    scalar = np.ndim(plane_depth) == 0
    shape = out_shape or src.shape
    x, y, z = warp_coordinates(rel, src_intr, dst_intr, plane_depth, shape)
    vals, inside = bilinear_sample(src.data, x, y)
    valid = inside & (z > 0)
    vals = np.where(valid[None], vals, 0.0)
    vals = np.moveaxis(vals, 0, 1)  # (K, C, h, w)
    if scalar:
        return FeatureMap(vals[0], src.scale), valid[0]
    return vals, valid
