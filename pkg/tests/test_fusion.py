import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatfuse.camera import CameraView, Intrinsics, Pose, look_at
from splatfuse.fusion import (
    CorrespondenceSet,
    FusionLog,
    FusionStats,
    GruParams,
    Projections,
    alignment_oracle,
    fuse_view,
    gru_update,
    merge_pair,
    pixel_wise_alignment,
    project_global,
)
from splatfuse.triplets import MERGED_VIEW, TripletSet, unproject_to_triplets

from conftest import alignment_instance

K100 = Intrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)


def triplets_at(points, dim=2):
    m = len(points)
    return TripletSet(np.asarray(points, float), np.ones(m), np.zeros((m, dim)), np.zeros(m, int), np.arange(m))


def one_view(pose=None, k=K100):
    return CameraView(np.zeros((k.height, k.width, 3)), k, pose or Pose.identity())


def manual_proj(x, y, d, valid=None):
    x, y, d = (np.asarray(a, float) for a in (x, y, d))
    valid = np.ones(len(x), bool) if valid is None else np.asarray(valid)
    return Projections(x, y, d, np.floor(x + 0.5).astype(int), np.floor(y + 0.5).astype(int), valid)


def test_project_global_examples():
    p = project_global(TripletSet.empty(2), one_view())
    assert len(p) == 0
    p = project_global(triplets_at([[0, 0, 2], [0, 0, -2], [10, 0, 2]]), one_view())
    assert (p.x[0], p.y[0], p.depth[0]) == (50.0, 50.0, 2.0)
    assert list(p.valid) == [True, False, False]


def test_alignment_threshold_examples():
    local = np.full((20, 20), 5.0)
    local[10, 10] = 2.0
    for dg, matched in ((2.08, True), (2.25, False)):
        corr = pixel_wise_alignment(local, manual_proj([10.2], [9.7], [dg]), 0.05)
        assert (corr.pairs() == {(10 * 20 + 10, 0)}) is matched
        assert corr.unmatched == 400 - corr.matched


def test_alignment_empty_cell():
    corr = pixel_wise_alignment(np.ones((3, 3)), manual_proj([], [], []), 0.05)
    assert corr.matched == 0 and corr.num_local == 9
    assert alignment_oracle(np.ones((3, 3)), manual_proj([], [], []), 0.05).matched == 0


def test_alignment_picks_nearest_then_lowest_index():
    local = np.full((2, 2), 2.0)
    # three globals in pixel (1, 0): depths 2.5, 2.01, 2.01
    corr = pixel_wise_alignment(local, manual_proj([1, 1.2, 0.9], [0, 0.1, -0.2], [2.5, 2.01, 2.01]), 0.05)
    assert corr.pairs() == {(1, 1)}
    # the nearest global fails the threshold: no fallback to the next one
    corr = pixel_wise_alignment(local, manual_proj([1, 1], [0, 0], [1.5, 2.01]), 0.05)
    assert corr.matched == 0


def test_alignment_rejects_bad_delta():
    for f in (pixel_wise_alignment, alignment_oracle):
        with pytest.raises(ValueError):
            f(np.ones((2, 2)), manual_proj([0], [0], [1]), 0.0)


def test_alignment_matches_oracle_random(rng):
    for _ in range(300):
        local, proj, delta = alignment_instance(rng)
        fast = pixel_wise_alignment(local, proj, delta)
        slow = alignment_oracle(local, proj, delta)
        assert fast.pairs() == slow.pairs()
        assert len(set(fast.global_idx.tolist())) == fast.matched
        assert len(set(fast.local_idx.tolist())) == fast.matched


def test_merge_pair_examples():
    mu, w = merge_pair(np.array([1.0, 0, 0]), 0.5, np.array([0, 1.0, 0]), 0.5)
    assert np.allclose(mu, [0.5, 0.5, 0]) and w == 1.0
    mu, w = merge_pair(np.array([2.0, 0, 0]), 1.0, np.array([0.0, 0, 0]), 3.0)
    assert np.allclose(mu, [0.5, 0, 0]) and w == 4.0
    p = np.array([0.3, -1.2, 4.0])
    mu, _ = merge_pair(p, 0.7, p, 2.9)
    assert np.allclose(mu, p, rtol=0, atol=1e-15)
    for wl, wg in ((0.0, 1.0), (1.0, -1.0)):
        with pytest.raises(ValueError):
            merge_pair(p, wl, p, wg)


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.floats(-100, 100), min_size=6, max_size=6),
    st.floats(1e-4, 1e3),
    st.floats(1e-4, 1e3),
)
def test_merged_center_on_segment(coords, wl, wg):
    a, b = np.array(coords[:3]), np.array(coords[3:])
    mu, w = merge_pair(a, wl, b, wg)
    assert w == wl + wg
    d = b - a
    L2 = d @ d
    if L2 == 0:
        assert np.allclose(mu, a, atol=1e-9)
        return
    t = np.clip((mu - a) @ d / L2, 0, 1)
    assert np.linalg.norm(a + t * d - mu) <= 1e-9 * max(1.0, np.abs(coords).max())


def test_gru_zero_params_halves_global(rng):
    f_l, f_g = rng.normal(size=(5, 7)), rng.normal(size=(5, 7))
    out = gru_update(f_l, f_g, GruParams.zeros(7))
    assert np.array_equal(out, 0.5 * f_g)


def test_gru_cell_matches_hand_evaluation(rng):
    d = 3
    p = GruParams(*[rng.normal(size=(d,) if n.startswith("b") else (d, d)) for n in GruParams.NAMES])
    f_l, f_g = rng.normal(size=d), rng.normal(size=d)
    sig = lambda x: 1 / (1 + np.exp(-x))
    z = sig(p.Wz @ f_l + p.Uz @ f_g + p.bz)
    r = sig(p.Wr @ f_l + p.Ur @ f_g + p.br)
    h = np.tanh(p.Wh @ f_l + p.Uh @ (r * f_g) + p.bh)
    assert np.allclose(gru_update(f_l, f_g, p), (1 - z) * f_g + z * h, atol=1e-12)


def test_gru_param_validation():
    with pytest.raises(ValueError):
        GruParams(*[np.zeros((2, 2))] * 2, np.zeros(3), *[np.zeros((2, 2))] * 6)
    with pytest.raises(ValueError):
        gru_update(np.zeros(3), np.zeros(3), GruParams.zeros(4))
    with pytest.raises(ValueError):
        gru_update(np.zeros(3), np.zeros(4))


def test_blend_mode(rng):
    f_l, f_g = rng.normal(size=4), rng.normal(size=4)
    assert np.allclose(gru_update(f_l, f_g, None, 0.3, 0.3), (f_l + f_g) / 2)
    assert np.array_equal(gru_update(f_l, f_l, None, 0.2, 0.9), f_l)
    assert np.allclose(gru_update(f_l, f_g, None, 1.0, 3.0), (f_l + 3 * f_g) / 4)


def _view_triplets(rng, pose, k, index=0, depth=None):
    view = CameraView(rng.random((k.height, k.width, 3)), k, pose, index)
    depth = rng.uniform(1.0, 3.0, (k.height, k.width)) if depth is None else depth
    feats = rng.normal(size=(4, k.height, k.width))
    w = rng.uniform(0.05, 0.95, (k.height, k.width))
    return view, unproject_to_triplets(depth, feats, w, view)


K_SMALL = Intrinsics(20.0, 20.0, 7.5, 5.5, 16, 12)


def test_fuse_first_view_copies_local(rng):
    view, local = _view_triplets(rng, Pose.identity(), K_SMALL)
    out, stats = fuse_view(TripletSet.empty(4), local, view)
    assert stats == FusionStats(0, len(local), 0, len(local))
    assert np.array_equal(out.centers, local.centers) and out is not local


def test_fuse_duplicate_view(rng):
    view, local = _view_triplets(rng, look_at([0.1, 0.2, 0.0], [0.5, 0.0, 3.0]), K_SMALL)
    g, _ = fuse_view(TripletSet.empty(4), local, view)
    out, stats = fuse_view(g, local, view)
    m = len(local)
    assert stats.output == m and stats.merged == m
    assert stats.reduction_ratio == 0.5
    assert np.all(out.source_view == MERGED_VIEW)
    assert np.allclose(out.weights, 2 * local.weights)
    assert np.allclose(out.centers, local.centers, atol=1e-12)


def test_fuse_opposite_views_do_not_merge(rng):
    a, la = _view_triplets(rng, look_at([0, 0, 0], [0, 0, 1]), K_SMALL, 0)
    b, lb = _view_triplets(rng, look_at([0, 0, 0], [0, 0, -1]), K_SMALL, 1)
    g, _ = fuse_view(TripletSet.empty(4), la, a)
    out, stats = fuse_view(g, lb, b)
    assert stats.merged == 0 and stats.output == 2 * len(la)


def test_fuse_rejects_feature_mismatch(rng):
    view, local = _view_triplets(rng, Pose.identity(), K_SMALL)
    with pytest.raises(ValueError):
        fuse_view(TripletSet(np.zeros((1, 3)) + [0, 0, 1], np.ones(1), np.zeros((1, 2)), np.zeros(1, int), np.zeros(1, int)), local, view)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 0.3), st.booleans())
def test_fuse_invariants(seed, delta, use_gru):
    rng = np.random.default_rng(seed)
    pa = look_at([0, 0, 0], [0.0, 0.0, 2.0])
    pb = look_at(rng.uniform(-0.1, 0.1, 3), [rng.uniform(-0.3, 0.3), 0.0, 2.0])
    base = rng.uniform(1.5, 2.5)
    a, la = _view_triplets(rng, pa, K_SMALL, 0, np.full((12, 16), base) + rng.normal(0, 0.02, (12, 16)))
    b, lb = _view_triplets(rng, pb, K_SMALL, 1, np.full((12, 16), base) + rng.normal(0, 0.02, (12, 16)))
    params = None
    if use_gru:
        params = GruParams(*[0.3 * rng.normal(size=(4,) if n.startswith("b") else (4, 4)) for n in GruParams.NAMES])
    g, _ = fuse_view(TripletSet.empty(4), la, a, delta, params)
    out, stats = fuse_view(g, lb, b, delta, params)
    assert stats.output == stats.input_global + stats.input_local - stats.merged == len(out)
    assert abs(out.weights.sum() - (la.weights.sum() + lb.weights.sum())) < 1e-6
    merged = np.flatnonzero(out.source_view[: len(g)] == MERGED_VIEW)
    assert len(merged) == stats.merged
    # untouched globals keep their values
    same = np.setdiff1d(np.arange(len(g)), merged)
    assert np.array_equal(out.centers[same], g.centers[same])
    again, _ = fuse_view(g, lb, b, delta, params)
    assert np.array_equal(again.centers, out.centers) and np.array_equal(again.features, out.features)


def test_fusion_log_totals():
    log = FusionLog([FusionStats(0, 10, 0, 10), FusionStats(10, 10, 10, 10)])
    assert log.total_local == 20 and log.total_merged == 10 and log.final_count == 10
    assert log.reduction_ratio == 0.5
    assert FusionLog().reduction_ratio == 0.0


def test_correspondence_counts():
    c = CorrespondenceSet(np.array([1, 4]), np.array([0, 2]), 9)
    assert c.matched == 2 and c.unmatched == 7 and c.pairs() == {(1, 0), (4, 2)}
