"""Pixel-wise triplet fusion: align global triplets to a new view and merge.

Each fusion step projects the current global centers into the incoming view,
groups them by rounded pixel, pairs every local pixel with the nearest global
projection in that pixel when the depth gap is below ``delta * local_depth``,
merges the pairs and appends the unmatched locals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraView, project, round_half_up
from .triplets import MERGED_VIEW, TripletSet

DEFAULT_DELTA = 0.05


@dataclass(frozen=True)
class Projections:
    x: np.ndarray
    y: np.ndarray
    depth: np.ndarray
    px: np.ndarray  # rounded column, int
    py: np.ndarray  # rounded row, int
    valid: np.ndarray

    def __len__(self) -> int:
        return len(self.depth)


@dataclass(frozen=True)
class CorrespondenceSet:
    local_idx: np.ndarray
    global_idx: np.ndarray
    num_local: int

    @property
    def matched(self) -> int:
        return len(self.local_idx)

    @property
    def unmatched(self) -> int:
        return self.num_local - self.matched

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.local_idx.tolist(), self.global_idx.tolist()))


@dataclass(frozen=True)
class FusionStats:
    input_global: int
    input_local: int
    merged: int
    output: int

    @property
    def reduction_ratio(self) -> float:
        total = self.input_global + self.input_local
        return self.merged / total if total else 0.0


@dataclass
class GruParams:
    Wz: np.ndarray
    Uz: np.ndarray
    bz: np.ndarray
    Wr: np.ndarray
    Ur: np.ndarray
    br: np.ndarray
    Wh: np.ndarray
    Uh: np.ndarray
    bh: np.ndarray

    NAMES = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh")

    def __post_init__(self):
        d = np.asarray(self.bz).shape[0]
        for name in self.NAMES:
            a = np.asarray(getattr(self, name), dtype=np.float64)
            want = (d,) if name.startswith("b") else (d, d)
            if a.shape != want:
                raise ValueError(f"GRU {name} has shape {a.shape}, expected {want}")
            if not np.isfinite(a).all():
                raise ValueError(f"GRU {name} has non-finite entries")
            setattr(self, name, a)

    @property
    def dim(self) -> int:
        return self.bz.shape[0]

    @classmethod
    def zeros(cls, dim: int) -> "GruParams":
        return cls(**{n: np.zeros((dim,) if n.startswith("b") else (dim, dim)) for n in cls.NAMES})


def project_global(glob: TripletSet, view: CameraView) -> Projections:
    """Project global centers into ``view``; behind-camera or off-image entries are invalid."""
    intr = view.intrinsics
    if len(glob) == 0:
        e = np.zeros(0)
        ei = np.zeros(0, dtype=np.int64)
        return Projections(e, e, e, ei, ei, np.zeros(0, dtype=bool))
    x, y, d = project(glob.centers, view.pose, intr)
    with np.errstate(invalid="ignore"):
        rx = round_half_up(x)
        ry = round_half_up(y)
        valid = (
            np.isfinite(rx) & np.isfinite(ry) & (d > 0)
            & (rx >= 0) & (rx < intr.width) & (ry >= 0) & (ry < intr.height)
        )
    px = np.where(valid, rx, -1).astype(np.int64)
    py = np.where(valid, ry, -1).astype(np.int64)
    return Projections(x, y, d, px, py, valid)


def _check_delta(delta: float) -> None:
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")


def pixel_wise_alignment(local_depth: np.ndarray, proj: Projections, delta: float) -> CorrespondenceSet:
    """Pair each local pixel with the nearest global projection rounding into it.

    A pair is kept only when ``|d_local - d_global| < delta * d_local``.
    Equal global depths are resolved toward the lower global index.
    """
    _check_delta(delta)
    H, W = local_depth.shape
    flat_depth = local_depth.ravel()
    gidx = np.flatnonzero(proj.valid)
    if gidx.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return CorrespondenceSet(empty, empty, H * W)
    pix = proj.py[gidx] * W + proj.px[gidx]
    gd = proj.depth[gidx]
    order = np.lexsort((gidx, gd, pix))
    pix, gd, gidx = pix[order], gd[order], gidx[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    pix, gd, gidx = pix[first], gd[first], gidx[first]
    dl = flat_depth[pix]
    keep = np.abs(dl - gd) < delta * dl
    return CorrespondenceSet(pix[keep].astype(np.int64), gidx[keep].astype(np.int64), H * W)


def alignment_oracle(local_depth: np.ndarray, proj: Projections, delta: float) -> CorrespondenceSet:
    """Exhaustive pixel-by-global scan with the same contract as pixel_wise_alignment."""
    _check_delta(delta)
    H, W = local_depth.shape
    n = H * W
    if len(proj) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return CorrespondenceSet(empty, empty, n)
    rows, cols = np.divmod(np.arange(n), W)
    rx = np.floor(proj.x + 0.5)
    ry = np.floor(proj.y + 0.5)
    with np.errstate(invalid="ignore"):
        ok = (proj.depth > 0) & (rx >= 0) & (rx < W) & (ry >= 0) & (ry < H)
    hit = ok[None, :] & (rx[None, :] == cols[:, None]) & (ry[None, :] == rows[:, None])
    dmat = np.where(hit, proj.depth[None, :], np.inf)
    jstar = np.argmin(dmat, axis=1)  # first occurrence = lowest index on ties
    dmin = dmat[np.arange(n), jstar]
    dl = local_depth.ravel()
    with np.errstate(invalid="ignore"):
        keep = hit.any(axis=1) & (np.abs(dl - dmin) < delta * dl)
    li = np.flatnonzero(keep)
    return CorrespondenceSet(li.astype(np.int64), jstar[li].astype(np.int64), n)


def merge_pair(mu_l, w_l, mu_g, w_g):
    """Weighted center average and summed weight; works row-wise on arrays."""
    w_l = np.asarray(w_l, dtype=np.float64)
    w_g = np.asarray(w_g, dtype=np.float64)
    if np.any(~(w_l > 0)) or np.any(~(w_g > 0)):
        raise ValueError("merge weights must be positive")
    total = w_l + w_g
    # written as an offset from mu_g so equal centers come back unchanged
    mu_g = np.asarray(mu_g, dtype=np.float64)
    mu = mu_g + (w_l / total)[..., None] * (np.asarray(mu_l, dtype=np.float64) - mu_g)
    return mu, total


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_update(f_l, f_g, params: GruParams | None = None, w_l=1.0, w_g=1.0) -> np.ndarray:
    """Fuse local into global features (row-wise).

    With ``params`` this is a GRU cell taking the local feature as input and
    the global feature as hidden state. Without, it is the weight-proportional
    blend of the two.
    """
    f_l = np.asarray(f_l, dtype=np.float64)
    f_g = np.asarray(f_g, dtype=np.float64)
    if f_l.shape != f_g.shape:
        raise ValueError(f"feature shapes differ: {f_l.shape} vs {f_g.shape}")
    if params is None:
        w_l = np.asarray(w_l, dtype=np.float64)[..., None]
        w_g = np.asarray(w_g, dtype=np.float64)[..., None]
        return f_g + (w_l / (w_l + w_g)) * (f_l - f_g)
    if f_l.shape[-1] != params.dim:
        raise ValueError(f"feature dim {f_l.shape[-1]} does not match GRU dim {params.dim}")
    z = _sigmoid(f_l @ params.Wz.T + f_g @ params.Uz.T + params.bz)
    r = _sigmoid(f_l @ params.Wr.T + f_g @ params.Ur.T + params.br)
    h = np.tanh(f_l @ params.Wh.T + (r * f_g) @ params.Uh.T + params.bh)
    return (1.0 - z) * f_g + z * h


def fuse_view(
    glob: TripletSet,
    local: TripletSet,
    view: CameraView,
    delta: float = DEFAULT_DELTA,
    params: GruParams | None = None,
) -> tuple[TripletSet, FusionStats]:
    """Fuse one view's pixel-aligned local triplets into the global set.

    Matched global triplets keep their slot; unmatched locals are appended in
    pixel order. The inputs are not modified.
    """
    H, W = view.height, view.width
    if len(local) != H * W:
        raise ValueError(f"local set has {len(local)} triplets, expected {H * W} for this view")
    if len(glob) and glob.feature_dim != local.feature_dim:
        raise ValueError(
            f"feature dims differ: global {glob.feature_dim}, local {local.feature_dim}"
        )
    if len(glob) == 0:
        out = local.copy()
        return out, FusionStats(0, len(local), 0, len(out))

    # local depths in this view, taken from the pixel-ordered local centers
    _, _, dl = project(local.centers, view.pose, view.intrinsics)
    order = np.argsort(local.source_pixel, kind="stable")
    local_depth = np.empty(H * W)
    local_depth[local.source_pixel[order]] = dl[order]

    proj = project_global(glob, view)
    corr = pixel_wise_alignment(local_depth.reshape(H, W), proj, delta)
    # correspondences come back as pixel indices; map them to local rows
    pix_to_row = np.empty(H * W, dtype=np.int64)
    pix_to_row[local.source_pixel] = np.arange(len(local))
    li = pix_to_row[corr.local_idx]
    gi = corr.global_idx

    out = glob.copy()
    if len(li):
        wl, wg = local.weights[li], glob.weights[gi]
        mu, wsum = merge_pair(local.centers[li], wl, glob.centers[gi], wg)
        out.features[gi] = gru_update(local.features[li], glob.features[gi], params, wl, wg)
        out.centers[gi] = mu
        out.weights[gi] = wsum
        out.source_view[gi] = MERGED_VIEW
    keep = np.ones(len(local), dtype=bool)
    keep[li] = False
    out = TripletSet(
        np.concatenate([out.centers, local.centers[keep]]),
        np.concatenate([out.weights, local.weights[keep]]),
        np.concatenate([out.features, local.features[keep]]),
        np.concatenate([out.source_view, local.source_view[keep]]),
        np.concatenate([out.source_pixel, local.source_pixel[keep]]),
    )
    stats = FusionStats(len(glob), len(local), len(li), len(out))
    return out, stats


@dataclass
class FusionLog:
    """Per-view fusion statistics over a whole sequence."""

    steps: list[FusionStats] = field(default_factory=list)

    @property
    def total_local(self) -> int:
        return sum(s.input_local for s in self.steps)

    @property
    def total_merged(self) -> int:
        return sum(s.merged for s in self.steps)

    @property
    def final_count(self) -> int:
        return self.steps[-1].output if self.steps else 0

    @property
    def reduction_ratio(self) -> float:
        """Fraction of pixel-aligned triplets removed over the sequence."""
        n = self.total_local
        return self.total_merged / n if n else 0.0
