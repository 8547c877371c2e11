"""Forward tile-based Gaussian splatting on the CPU.

Gaussians are projected with the local affine (EWA) approximation, binned
into square tiles by their 3-sigma extent, depth-sorted per tile and
composited front to back.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics, Pose
from .decode import SH_C0, GaussianPrimitiveSet, covariance_from_scale_rotation

SH_C1 = 0.4886025119029199
NEAR_CULL = 0.01
LOWPASS = 0.3
ALPHA_CAP = 0.99
MIN_CONTRIB = 1.0 / 255.0
T_EXIT = 1e-4
TILE = 16
SIGMA_EXTENT = 3.0
_CHUNK = 4096


@dataclass(frozen=True)
class Splat2D:
    mean: np.ndarray  # (2,)
    cov2d: np.ndarray  # (2, 2)
    depth: float
    color: np.ndarray  # (3,)
    opacity: float


@dataclass(frozen=True)
class SplatBatch:
    """Projected splats of a primitive set; ``index`` refers back to the input order."""

    index: np.ndarray
    means: np.ndarray
    cov2d: np.ndarray
    conics: np.ndarray  # inverse 2D covariances
    depths: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray
    radii: np.ndarray


@dataclass
class RenderedFrame:
    color: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    alpha: np.ndarray  # (H, W)


def evaluate_sh(coeffs, direction) -> np.ndarray:
    """RGB from degree-0/1 SH coefficients (K, 3) seen along a unit direction."""
    d = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("view direction must be unit length")
    return eval_sh_batch(np.asarray(coeffs, dtype=np.float64)[None], d[None])[0]


def sh_band1(coeffs: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Unclamped first-band contribution for (M, 4, 3) coefficients."""
    x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
    return SH_C1 * (-y * coeffs[:, 1] + z * coeffs[:, 2] - x * coeffs[:, 3])


def eval_sh_batch(sh: np.ndarray, dirs: np.ndarray, clamp: bool = True) -> np.ndarray:
    c = 0.5 + SH_C0 * sh[:, 0]
    if sh.shape[1] >= 4:
        c = c + sh_band1(sh, dirs)
    return np.clip(c, 0.0, 1.0) if clamp else c


def projection_jacobian(cam: np.ndarray, intr: Intrinsics) -> np.ndarray:
    """d(u, v)/d(x, y, z) at camera-space points, shape (M, 2, 3)."""
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    j = np.zeros((len(cam), 2, 3))
    j[:, 0, 0] = intr.fx / z
    j[:, 0, 2] = -intr.fx * x / (z * z)
    j[:, 1, 1] = intr.fy / z
    j[:, 1, 2] = -intr.fy * y / (z * z)
    return j


def project_gaussians(
    prims: GaussianPrimitiveSet,
    pose: Pose,
    intr: Intrinsics,
    near: float = NEAR_CULL,
    lowpass: float = LOWPASS,
    extent: float = SIGMA_EXTENT,
) -> SplatBatch:
    w2c = pose.world_to_cam()
    cam = w2c.apply(prims.centers)
    keep = np.flatnonzero(cam[:, 2] > near)
    cam = cam[keep]
    z = cam[:, 2]
    means = np.stack([intr.fx * cam[:, 0] / z + intr.cx, intr.fy * cam[:, 1] / z + intr.cy], axis=1)
    cov3 = covariance_from_scale_rotation(prims.scales[keep], prims.rotations[keep])
    jw = projection_jacobian(cam, intr) @ w2c.rotation
    cov2 = jw @ cov3 @ np.swapaxes(jw, 1, 2)
    cov2[:, 0, 0] += lowpass
    cov2[:, 1, 1] += lowpass
    a, b, c = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    det = a * c - b * b
    conics = np.stack([np.stack([c, -b], -1), np.stack([-b, a], -1)], axis=1) / det[:, None, None]
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radii = extent * np.sqrt(lam_max)
    dirs = prims.centers[keep] - pose.center
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    colors = eval_sh_batch(prims.sh[keep], dirs)
    return SplatBatch(keep, means, cov2, conics, z, colors, prims.opacities[keep], radii)


def project_gaussian(prims: GaussianPrimitiveSet, i: int, pose: Pose, intr: Intrinsics) -> Splat2D | None:
    """Project primitive ``i``; None when it is culled by the near plane."""
    batch = project_gaussians(prims.subset(slice(i, i + 1)), pose, intr)
    if len(batch.index) == 0:
        return None
    return Splat2D(batch.means[0], batch.cov2d[0], float(batch.depths[0]), batch.colors[0], float(batch.opacities[0]))


def bin_splats(batch: SplatBatch, width: int, height: int, tile: int = TILE) -> dict[int, np.ndarray]:
    """Map tile id (row-major) -> positions into ``batch`` overlapping that tile."""
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    u, v, r = batch.means[:, 0], batch.means[:, 1], batch.radii
    x0 = np.ceil(u - r)
    x1 = np.floor(u + r)
    y0 = np.ceil(v - r)
    y1 = np.floor(v + r)
    ok = (x1 >= 0) & (x0 <= width - 1) & (y1 >= 0) & (y0 <= height - 1) & np.isfinite(r)
    idx = np.flatnonzero(ok)
    tx0 = (np.clip(x0[idx], 0, width - 1) // tile).astype(np.int64)
    tx1 = (np.clip(x1[idx], 0, width - 1) // tile).astype(np.int64)
    ty0 = (np.clip(y0[idx], 0, height - 1) // tile).astype(np.int64)
    ty1 = (np.clip(y1[idx], 0, height - 1) // tile).astype(np.int64)
    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    counts = nx * ny
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(idx)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    tx = tx0[owner] + local % nx[owner]
    ty = ty0[owner] + local // nx[owner]
    tile_id = ty * tiles_x + tx
    order = np.argsort(tile_id, kind="stable")
    tile_id = tile_id[order]
    members = idx[owner[order]]
    bins = {}
    if total:
        bounds = np.flatnonzero(np.diff(tile_id)) + 1
        for grp in np.split(np.arange(total), bounds):
            bins[int(tile_id[grp[0]])] = members[grp]
    return bins


def _composite_tile(batch: SplatBatch, members: np.ndarray, px: np.ndarray, py: np.ndarray, t_exit):
    order = np.lexsort((batch.index[members], batch.depths[members]))
    members = members[order]
    n_pix = len(px)
    T = np.ones(n_pix)
    color = np.zeros((n_pix, 3))
    depth = np.zeros(n_pix)
    for start in range(0, len(members), _CHUNK):
        m = members[start : start + _CHUNK]
        dx = px[None, :] - batch.means[m, 0][:, None]
        dy = py[None, :] - batch.means[m, 1][:, None]
        con = batch.conics[m]
        power = -0.5 * (con[:, 0, 0, None] * dx * dx + 2 * con[:, 0, 1, None] * dx * dy + con[:, 1, 1, None] * dy * dy)
        a = np.minimum(ALPHA_CAP, batch.opacities[m][:, None] * np.exp(power))
        a = np.where(a < MIN_CONTRIB, 0.0, a)
        trans = np.cumprod(np.vstack([T[None], 1.0 - a]), axis=0)
        before = trans[:-1]
        if t_exit is not None:
            live = before >= t_exit
            a = np.where(live, a, 0.0)
            # once exhausted, transmittance freezes
            trans = np.cumprod(np.vstack([T[None], 1.0 - a]), axis=0)
            before = trans[:-1]
        wgt = a * before
        color += wgt.T @ batch.colors[m]
        depth += wgt.T @ batch.depths[m]
        T = trans[-1]
        if t_exit is not None and np.all(T < t_exit):
            break
    return color, depth, T


def render(
    prims: GaussianPrimitiveSet,
    pose: Pose,
    intr: Intrinsics,
    background=(0.0, 0.0, 0.0),
    tile: int = TILE,
    t_exit: float | None = T_EXIT,
    threads: int = 1,
) -> RenderedFrame:
    """Alpha-composite the primitives into an image from ``pose``.

    ``t_exit=None`` disables the transmittance early exit.
    """
    H, W = intr.height, intr.width
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    color = np.zeros((H, W, 3))
    depth = np.zeros((H, W))
    alpha = np.zeros((H, W))
    batch = project_gaussians(prims, pose, intr)
    bins = bin_splats(batch, W, H, tile)
    tiles_x = (W + tile - 1) // tile

    def run(tid):
        ty, tx = divmod(tid, tiles_x)
        ys = np.arange(ty * tile, min((ty + 1) * tile, H))
        xs = np.arange(tx * tile, min((tx + 1) * tile, W))
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        c, d, T = _composite_tile(batch, bins[tid], gx.ravel().astype(np.float64), gy.ravel().astype(np.float64), t_exit)
        return ys, xs, c, d, T

    tids = sorted(bins)
    if threads > 1 and len(tids) > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, tids))
    else:
        results = [run(t) for t in tids]
    for ys, xs, c, d, T in results:
        shape = (len(ys), len(xs))
        sl = (slice(ys[0], ys[-1] + 1), slice(xs[0], xs[-1] + 1))
        a = 1.0 - T
        color[sl] = c.reshape(shape + (3,))
        alpha[sl] = a.reshape(shape)
        dep = np.where(a > 1e-6, d / np.where(a > 1e-6, a, 1.0), 0.0)
        depth[sl] = dep.reshape(shape)
    color += (1.0 - alpha)[..., None] * bg
    np.clip(color, 0.0, 1.0, out=color)
    return RenderedFrame(color, depth, alpha)
