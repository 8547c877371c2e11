"""Plane-sweep cost volume, guided refinement, upsampling and soft-argmax depth."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .camera import CameraView
from .features import SCALE, FeatureMap, quarter_luma

DEFAULT_K = 128
DEFAULT_NEAR = 0.5
DEFAULT_FAR = 15.0
DEFAULT_REFINE_ITERS = 2
DEFAULT_GUIDE_SIGMA = 0.05
REFINE_RADIUS = 2  # 5x5 window
_NORM_EPS = 1e-12


@dataclass(frozen=True)
class DepthPlaneSet:
    depths: np.ndarray
    d_near: float
    d_far: float

    @property
    def k(self) -> int:
        return len(self.depths)


@dataclass(frozen=True)
class CostVolume:
    data: np.ndarray  # (K, h, w)
    planes: DepthPlaneSet
    validity: np.ndarray  # (K, h, w) count of contributing nearby views


@dataclass(frozen=True)
class DepthCandidates:
    logits: np.ndarray  # (K, H, W)


def build_depth_planes(d_near: float, d_far: float, k: int, spacing: str = "uniform") -> DepthPlaneSet:
    """K depths covering [d_near, d_far] inclusive.

    ``spacing="inverse"`` spaces planes uniformly in inverse depth instead.
    """
    if k < 2:
        raise ValueError(f"need at least 2 planes, got {k}")
    if not (0 < d_near < d_far):
        raise ValueError(f"invalid depth range [{d_near}, {d_far}]")
    if spacing == "uniform":
        depths = np.linspace(d_near, d_far, k)
    elif spacing == "inverse":
        depths = 1.0 / np.linspace(1.0 / d_near, 1.0 / d_far, k)
        depths[0], depths[-1] = d_near, d_far
    else:
        raise ValueError(f"unknown plane spacing {spacing!r}")
    return DepthPlaneSet(depths, float(d_near), float(d_far))


def cosine_similarity(a: np.ndarray, b: np.ndarray, axis: int = 0) -> np.ndarray:
    """Cosine along ``axis``; zero whenever either vector is zero."""
    dot = (a * b).sum(axis=axis)
    # one sqrt of the product keeps cos(x, x) exactly 1
    denom = np.sqrt((a * a).sum(axis=axis) * (b * b).sum(axis=axis))
    ok = denom > _NORM_EPS
    return np.where(ok, dot / np.where(ok, denom, 1.0), 0.0)


def build_cost_volume(
    target: FeatureMap,
    warped: Sequence[tuple[np.ndarray, np.ndarray]],
    planes: DepthPlaneSet,
    linear: tuple[np.ndarray, float] | None = None,
) -> CostVolume:
    """Mean cosine similarity between target and warped nearby features per plane.

    ``warped`` holds one ``(features (K, C, h, w), valid (K, h, w))`` pair per
    nearby view. Invalid samples are left out of the mean; planes without any
    valid sample cost 0.

    ``linear=(weights, bias)`` replaces the plain mean cosine by an affine map
    over [mean cosine, mean warped feature] (weights of length 1 + C).
    """
    if not warped:
        raise ValueError("cost volume needs at least one nearby view")
    c, h, w = target.data.shape
    k = planes.k
    cos_sum = np.zeros((k, h, w))
    feat_sum = np.zeros((k, c, h, w)) if linear is not None else None
    count = np.zeros((k, h, w), dtype=np.int64)
    for feats, valid in warped:
        feats = np.asarray(feats)
        if feats.shape != (k, c, h, w) or valid.shape != (k, h, w):
            raise ValueError(
                f"warped features {feats.shape} / mask {valid.shape} do not match "
                f"target ({c}, {h}, {w}) with {k} planes"
            )
        cos = cosine_similarity(target.data[None], feats, axis=1)
        cos_sum += np.where(valid, cos, 0.0)
        if feat_sum is not None:
            feat_sum += np.where(valid[:, None], feats, 0.0)
        count += valid
    safe = np.maximum(count, 1)
    mean_cos = np.where(count > 0, cos_sum / safe, 0.0)
    if linear is None:
        data = mean_cos
    else:
        weights, bias = linear
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if weights.shape[0] != 1 + c:
            raise ValueError(f"linear cost map needs {1 + c} weights, got {weights.shape[0]}")
        mean_feat = feat_sum / safe[:, None]
        data = weights[0] * mean_cos + np.einsum("c,kchw->khw", weights[1:], mean_feat) + bias
        data = np.where(count > 0, data, 0.0)
    return CostVolume(data, planes, count)


def _guide_weights(guide_luma: np.ndarray, sigma: float) -> np.ndarray:
    """Normalized 5x5 range weights, shape (25, h, w); out-of-image taps get 0."""
    h, w = guide_luma.shape
    r = REFINE_RADIUS
    pad = np.pad(guide_luma, r, mode="edge")
    inb = np.pad(np.ones((h, w)), r)
    taps = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            q = pad[r + dy : r + dy + h, r + dx : r + dx + w]
            m = inb[r + dy : r + dy + h, r + dx : r + dx + w]
            taps.append(m * np.exp(-((guide_luma - q) ** 2) / (2 * sigma**2)))
    wts = np.stack(taps)
    return wts / wts.sum(axis=0, keepdims=True)


def _shifted(a: np.ndarray, dy: int, dx: int) -> np.ndarray:
    r = REFINE_RADIUS
    h, w = a.shape[-2:]
    pad = np.pad(a, ((0, 0), (r, r), (r, r)))
    return pad[:, r + dy : r + dy + h, r + dx : r + dx + w]


def _apply_filter(data: np.ndarray, valid: np.ndarray, wts: np.ndarray) -> np.ndarray:
    """One pass of the guided filter; only samples backed by a nearby view are averaged."""
    r = REFINE_RADIUS
    num = np.zeros_like(data)
    den = np.zeros_like(data)
    vf = valid.astype(np.float64)
    t = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            wv = wts[t] * _shifted(vf, dy, dx)
            num += wv * _shifted(data, dy, dx)
            den += wv
            t += 1
    ok = den > 0
    return np.where(ok, num / np.where(ok, den, 1.0), 0.0)


def refine_cost_volume(
    vol: CostVolume,
    guide: CameraView,
    iterations: int = DEFAULT_REFINE_ITERS,
    sigma: float = DEFAULT_GUIDE_SIGMA,
) -> CostVolume:
    """Edge-aware 5x5 smoothing of every cost slice, guided by quarter-res luma.

    Entries without any contributing nearby view are excluded from the
    weighted average; a window with no such entries yields 0.
    """
    k, h, w = vol.data.shape
    if guide.height != SCALE * h or guide.width != SCALE * w:
        raise ValueError(
            f"guide is {guide.width}x{guide.height}, expected {SCALE * w}x{SCALE * h}"
        )
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0:
        return vol
    wts = _guide_weights(quarter_luma(guide.image), sigma)
    valid = vol.validity > 0
    data = vol.data
    for _ in range(iterations):
        data = _apply_filter(data, valid, wts)
    return CostVolume(data, vol.planes, vol.validity)


def interp_matrix(coords: np.ndarray, n_in: int) -> np.ndarray:
    """Linear interpolation weights (len(coords), n_in), clamped at the ends."""
    coords = np.clip(np.asarray(coords, dtype=np.float64), 0, n_in - 1)
    i0 = np.minimum(np.floor(coords).astype(np.int64), max(n_in - 2, 0))
    i1 = np.minimum(i0 + 1, n_in - 1)
    a = coords - i0
    m = np.zeros((len(coords), n_in))
    rows = np.arange(len(coords))
    np.add.at(m, (rows, i0), 1 - a)
    np.add.at(m, (rows, i1), a)
    return m


def full_to_quarter(n_full: int) -> np.ndarray:
    """Quarter-res coordinate of each full-res pixel center."""
    return (np.arange(n_full) - (SCALE - 1) / 2.0) / SCALE


def upsample_candidates(vol: CostVolume, H: int, W: int) -> DepthCandidates:
    """Bilinear per-plane upsampling of the volume to full resolution."""
    k, h, w = vol.data.shape
    if H != SCALE * h or W != SCALE * w:
        raise ValueError(f"target {W}x{H} is not {SCALE}x the volume {w}x{h}")
    ay = interp_matrix(full_to_quarter(H), h)
    ax = interp_matrix(full_to_quarter(W), w)
    logits = np.einsum("Yy,kyx,Xx->kYX", ay, vol.data, ax, optimize=True)
    return DepthCandidates(logits)


def softmax_planes(logits: np.ndarray, temperature: float) -> np.ndarray:
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = logits / temperature
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def soft_argmax_depth(cand: DepthCandidates, planes: DepthPlaneSet, temperature: float) -> np.ndarray:
    """Expected plane depth under softmax(logits / temperature); bounded by the plane range."""
    prob = softmax_planes(np.asarray(cand.logits, dtype=np.float64), temperature)
    depth = np.tensordot(planes.depths, prob, axes=(0, 0))
    return np.clip(depth, planes.d_near, planes.d_far)
