import math

import numpy as np
import pytest

from splatfuse.camera import CameraView, Intrinsics, Pose, look_at, project
from splatfuse.cost_volume import DepthCandidates
from splatfuse.features import FeatureMap
from splatfuse.triplets import (
    CONF,
    MATCH_START,
    RGB,
    SRC_DEPTH,
    TripletSet,
    compute_confidence_weights,
    default_latent,
    unproject_to_triplets,
    upsample_features,
)


def test_confidence_examples():
    eq = DepthCandidates(np.zeros((4, 2, 2)))
    assert np.allclose(compute_confidence_weights(eq, 1.0), 0.25)
    hot = DepthCandidates(np.array([1e6, 0, 0, 0]).reshape(4, 1, 1))
    assert compute_confidence_weights(hot, 1.0)[0, 0] == 1 - 1e-4
    two = DepthCandidates(np.array([0.0, math.log(3)]).reshape(2, 1, 1))
    assert compute_confidence_weights(two, 1.0)[0, 0] == pytest.approx(0.75)
    with pytest.raises(ValueError):
        compute_confidence_weights(eq, 0.0)


def test_principal_point_pixel_triplet():
    # pixel centers sit at integer coordinates, so the principal-point pixel
    # of a 3x3 image with cx = cy = 1 is (1, 1)
    k = Intrinsics(10.0, 10.0, 1.0, 1.0, 3, 3)
    view = CameraView(np.zeros((3, 3, 3)), k, Pose.identity(), 7)
    t = unproject_to_triplets(np.full((3, 3), 2.0), np.zeros((3, 3, 3)), np.full((3, 3), 0.5), view)
    assert len(t) == 9
    assert np.allclose(t.centers[4], [0, 0, 2])
    assert t.source_view[4] == 7 and t.source_pixel[4] == 4


def test_two_by_two_cardinality_and_tags():
    k = Intrinsics(2.0, 2.0, 1.0, 1.0, 2, 2)
    view = CameraView(np.zeros((2, 2, 3)), k, Pose.identity(), 3)
    t = unproject_to_triplets(np.full((2, 2), 1.5), np.arange(8.0).reshape(2, 2, 2), np.full((2, 2), 0.3), view)
    assert len(t) == 4
    assert list(t.source_view) == [3] * 4
    assert list(t.source_pixel) == [0, 1, 2, 3]
    # features are copied per pixel in row-major order
    assert np.array_equal(t.features[:, 0], [0, 1, 2, 3])
    assert np.array_equal(t.features[:, 1], [4, 5, 6, 7])


def test_unproject_round_trip(rng):
    k = Intrinsics(40.0, 42.0, 15.5, 11.5, 32, 24)
    pose = look_at([0.3, 1.0, -0.5], [0.0, 1.2, 2.0])
    view = CameraView(rng.random((24, 32, 3)), k, pose, 0)
    depth = rng.uniform(0.5, 8.0, (24, 32))
    t = unproject_to_triplets(depth, np.zeros((1, 24, 32)), np.full((24, 32), 0.5), view)
    u, v, d = project(t.centers, pose, k)
    vv, uu = np.mgrid[0:24, 0:32]
    assert np.max(np.abs(u - uu.ravel())) < 1e-6
    assert np.max(np.abs(v - vv.ravel())) < 1e-6
    assert np.max(np.abs(d - depth.ravel()) / depth.ravel()) < 1e-6
    t.check()


def test_unproject_rejects_bad_inputs(rng):
    k = Intrinsics(2.0, 2.0, 1.0, 1.0, 2, 2)
    view = CameraView(np.zeros((2, 2, 3)), k, Pose.identity())
    with pytest.raises(ValueError):
        unproject_to_triplets(np.array([[1.0, 0.0], [1.0, 1.0]]), np.zeros((1, 2, 2)), np.ones((2, 2)) * 0.5, view)
    with pytest.raises(ValueError):
        unproject_to_triplets(np.ones((3, 2)), np.zeros((1, 2, 2)), np.ones((2, 2)) * 0.5, view)


def test_default_latent_layout(rng):
    k = Intrinsics(16.0, 16.0, 7.5, 7.5, 16, 16)
    img = rng.random((16, 16, 3))
    view = CameraView(img, k, Pose.identity())
    depth = rng.uniform(1, 2, (16, 16))
    w = rng.uniform(0.1, 0.9, (16, 16))
    fmap = FeatureMap(rng.random((14, 4, 4)))
    lat = default_latent(view, depth, w, fmap)
    assert lat.shape == (5 + 14, 16, 16)
    assert np.array_equal(lat[RGB], img.transpose(2, 0, 1))
    assert np.array_equal(lat[CONF], w)
    assert np.array_equal(lat[SRC_DEPTH], depth)
    assert np.allclose(lat[MATCH_START:], upsample_features(fmap, 16, 16))


def test_empty_set_and_copy_independence():
    e = TripletSet.empty(4)
    assert len(e) == 0 and e.feature_dim == 4
    t = TripletSet(np.zeros((1, 3)), np.ones(1), np.zeros((1, 4)), np.zeros(1, int), np.zeros(1, int))
    c = t.copy()
    c.weights[0] = 5
    assert t.weights[0] == 1
    with pytest.raises(ValueError):
        TripletSet(np.zeros((2, 3)), np.ones(1), np.zeros((1, 4)), np.zeros(1, int), np.zeros(1, int))
    bad = TripletSet(np.zeros((1, 3)), np.zeros(1), np.zeros((1, 4)), np.zeros(1, int), np.zeros(1, int))
    with pytest.raises(ValueError):
        bad.check()
