"""End-to-end reconstruction: depth per view, triplets, sequential fusion, decoding."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .camera import CameraView, relative_transform, select_nearby_views
from .cost_volume import (
    CostVolume,
    DepthCandidates,
    build_cost_volume,
    build_depth_planes,
    refine_cost_volume,
    soft_argmax_depth,
    upsample_candidates,
)
from .decode import DecoderParams, GaussianPrimitiveSet, decode_triplets
from .features import FeatureMap, compute_matching_features, warp_features
from .fusion import FusionLog, GruParams, fuse_view
from .scene_io import EngineConfig, quantize_primitives
from .triplets import TripletSet, compute_confidence_weights, default_latent, unproject_to_triplets
from .weights import decoder_from_sections, gru_from_sections, load_weights


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage


@dataclass
class Timings:
    ms: dict[str, float] = field(default_factory=dict)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        finally:
            self.ms[name] = self.ms.get(name, 0.0) + 1000.0 * (time.perf_counter() - t0)


@dataclass
class DepthEstimate:
    depth: np.ndarray
    confidence: np.ndarray
    candidates: DepthCandidates
    volume: CostVolume
    nearby: list[int]


@dataclass
class Reconstruction:
    primitives: GaussianPrimitiveSet
    triplets: TripletSet
    log: FusionLog
    depths: dict[int, DepthEstimate]
    timings: Timings


@dataclass
class Models:
    gru: GruParams | None = None
    decoder: DecoderParams | None = None

    @classmethod
    def from_config(cls, cfg: EngineConfig) -> "Models":
        if not cfg.weights:
            return cls()
        _, sections = load_weights(cfg.weights)
        gru = gru_from_sections(sections) if cfg.fusion_mode == "gru" else None
        if cfg.fusion_mode == "gru" and gru is None:
            raise ValueError(f"{cfg.weights}: fusion_mode gru but no GRU sections")
        return cls(gru, decoder_from_sections(sections))


class FeatureCache:
    def __init__(self, views: Sequence[CameraView], channels: int):
        self.views = views
        self.channels = channels
        self._maps: dict[int, FeatureMap] = {}

    def __getitem__(self, i: int) -> FeatureMap:
        if i not in self._maps:
            self._maps[i] = compute_matching_features(self.views[i], self.channels)
        return self._maps[i]


def estimate_depth(
    views: Sequence[CameraView], target: int, cfg: EngineConfig, features: FeatureCache | None = None
) -> DepthEstimate:
    """Plane-sweep depth for ``views[target]`` against its nearest views by pose."""
    if len(views) < 2:
        raise ValueError("depth estimation needs at least two views in the scene")
    features = features or FeatureCache(views, cfg.matching_channels)
    n = min(cfg.nearby_views, len(views) - 1)
    nearby = select_nearby_views(target, [v.pose for v in views], n, cfg.proximity_lambda)
    planes = build_depth_planes(cfg.d_near, cfg.d_far, cfg.k, cfg.plane_spacing)
    tview = views[target]
    tfeat = features[target]
    warped = []
    for j in nearby:
        rel = relative_transform(views[j].pose, tview.pose)
        warped.append(
            warp_features(features[j], rel, views[j].intrinsics, tview.intrinsics, planes.depths, tfeat.shape)
        )
    vol = build_cost_volume(tfeat, warped, planes)
    vol = refine_cost_volume(vol, tview, cfg.refine_iters, cfg.guide_sigma)
    cand = upsample_candidates(vol, tview.height, tview.width)
    depth = soft_argmax_depth(cand, planes, cfg.temperature)
    conf = compute_confidence_weights(cand, cfg.temperature)
    return DepthEstimate(depth, conf, cand, vol, nearby)


def local_triplets(view: CameraView, est: DepthEstimate, fmap: FeatureMap) -> TripletSet:
    latent = default_latent(view, est.depth, est.confidence, fmap)
    return unproject_to_triplets(est.depth, latent, est.confidence, view)


def reconstruct(
    views: Sequence[CameraView],
    view_ids: Sequence[int],
    cfg: EngineConfig,
    models: Models | None = None,
    threads: int = 1,
    quantize: bool = True,
) -> Reconstruction:
    """Reconstruct from ``views[i] for i in view_ids``; all views may serve as matching partners.

    Fusion runs in the order of ``view_ids``. Repeated ids are fused again.
    With ``quantize`` the primitives are rounded to their PLY encoding so that
    in-memory and file-based renders agree exactly.
    """
    models = models or Models()
    timings = Timings()
    features = FeatureCache(views, cfg.matching_channels)
    unique = list(dict.fromkeys(view_ids))
    with timings.stage("features"):
        for i in sorted(set(unique)):
            features[i]
        # partners are computed lazily; prefetch them deterministically
        for i in unique:
            n = min(cfg.nearby_views, len(views) - 1)
            for j in select_nearby_views(i, [v.pose for v in views], n, cfg.proximity_lambda):
                features[j]
    with timings.stage("depth"):
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                ests = list(pool.map(lambda i: estimate_depth(views, i, cfg, features), unique))
        else:
            ests = [estimate_depth(views, i, cfg, features) for i in unique]
        depths = dict(zip(unique, ests))
    glob = None
    log = FusionLog()
    for i in view_ids:
        with timings.stage("triplets"):
            local = local_triplets(views[i], depths[i], features[i])
        with timings.stage("fusion"):
            if glob is None:
                glob = TripletSet.empty(local.feature_dim)
            glob, stats = fuse_view(glob, local, views[i], cfg.delta, models.gru)
            log.steps.append(stats)
    with timings.stage("decode"):
        prims = decode_triplets(glob, views[view_ids[0]].intrinsics, models.decoder, cfg.kappa)
        if quantize:
            prims = quantize_primitives(prims)
    return Reconstruction(prims, glob, log, depths, timings)
