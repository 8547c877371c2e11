"""Pixel-aligned Gaussian triplets {center, weight, latent feature}."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraView, unproject
from .cost_volume import DepthCandidates, full_to_quarter, interp_matrix, softmax_planes
from .features import FeatureMap

WEIGHT_CLAMP = 1e-4
MERGED_VIEW = -1

# default latent layout: rgb | confidence | source depth | matching feature
RGB = slice(0, 3)
CONF = 3
SRC_DEPTH = 4
MATCH_START = 5


@dataclass
class TripletSet:
    centers: np.ndarray  # (M, 3)
    weights: np.ndarray  # (M,)
    features: np.ndarray  # (M, F)
    source_view: np.ndarray  # (M,) int, MERGED_VIEW once fused
    source_pixel: np.ndarray  # (M,) int, row-major pixel index

    def __post_init__(self):
        m = len(self.weights)
        if self.centers.shape != (m, 3) or self.features.shape[0] != m:
            raise ValueError("triplet arrays disagree on count")
        if len(self.source_view) != m or len(self.source_pixel) != m:
            raise ValueError("source tags disagree on count")

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @classmethod
    def empty(cls, feature_dim: int) -> "TripletSet":
        return cls(
            np.zeros((0, 3)),
            np.zeros(0),
            np.zeros((0, feature_dim)),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
        )

    def copy(self) -> "TripletSet":
        return TripletSet(
            self.centers.copy(),
            self.weights.copy(),
            self.features.copy(),
            self.source_view.copy(),
            self.source_pixel.copy(),
        )

    def check(self) -> None:
        if np.any(~(self.weights > 0)):
            raise ValueError("triplet weights must be positive")
        if not (np.isfinite(self.centers).all() and np.isfinite(self.features).all()):
            raise ValueError("triplet set contains non-finite values")


def compute_confidence_weights(cand: DepthCandidates, temperature: float) -> np.ndarray:
    """Per-pixel peak softmax probability, clamped into (0, 1)."""
    prob = softmax_planes(np.asarray(cand.logits, dtype=np.float64), temperature)
    return np.clip(prob.max(axis=0), WEIGHT_CLAMP, 1.0 - WEIGHT_CLAMP)


def upsample_features(fmap: FeatureMap, H: int, W: int) -> np.ndarray:
    """Bilinearly sample a quarter-res feature map at every full-res pixel, (C, H, W)."""
    _, h, w = fmap.data.shape
    ay = interp_matrix(full_to_quarter(H), h)
    ax = interp_matrix(full_to_quarter(W), w)
    return np.einsum("Yy,cyx,Xx->cYX", ay, fmap.data, ax, optimize=True)


def default_latent(view: CameraView, depth: np.ndarray, weights: np.ndarray, fmap: FeatureMap | None) -> np.ndarray:
    """Default per-pixel latent map, (F, H, W) with F = 5 + matching channels."""
    img = np.asarray(view.image, dtype=np.float64).transpose(2, 0, 1)
    parts = [img, weights[None], depth[None]]
    if fmap is not None:
        parts.append(upsample_features(fmap, view.height, view.width))
    return np.concatenate(parts, axis=0)


def unproject_to_triplets(
    depth: np.ndarray, features: np.ndarray, weights: np.ndarray, view: CameraView
) -> TripletSet:
    """One triplet per pixel, centered at the pixel lifted to its depth.

    ``features`` is a (F, H, W) latent map.
    """
    H, W = view.height, view.width
    depth = np.asarray(depth, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if depth.shape != (H, W) or weights.shape != (H, W) or features.shape[1:] != (H, W):
        raise ValueError(
            f"maps must be {H}x{W}: depth {depth.shape}, weights {weights.shape}, "
            f"features {features.shape}"
        )
    if np.any(~(depth > 0)):
        raise ValueError("depth must be positive at every pixel")
    v, u = np.mgrid[0:H, 0:W]
    centers = unproject(u.ravel(), v.ravel(), depth.ravel(), view.pose, view.intrinsics)
    return TripletSet(
        centers,
        weights.ravel().copy(),
        features.reshape(features.shape[0], -1).T.copy(),
        np.full(H * W, view.index, dtype=np.int64),
        np.arange(H * W, dtype=np.int64),
    )
