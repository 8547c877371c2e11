import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatfuse.camera import Intrinsics
from splatfuse.decode import (
    DecoderParams,
    GaussianPrimitiveSet,
    covariance_from_scale_rotation,
    decode_triplets,
    quaternion_to_matrix,
    rgb_to_dc,
)
from splatfuse.rasterizer import evaluate_sh
from splatfuse.triplets import TripletSet

K = Intrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)


def triplets(features):
    f = np.atleast_2d(np.asarray(features, float))
    m = len(f)
    return TripletSet(np.zeros((m, 3)) + [0, 0, 2], np.full(m, 0.5), f, np.zeros(m, int), np.arange(m))


def test_default_decoder_example():
    # layout: r, g, b, confidence, source depth
    p = decode_triplets(triplets([1.0, 0.0, 0.0, 0.9, 2.0]), K)
    assert len(p) == 1 and p.sh_degree == 0
    assert np.allclose(evaluate_sh(p.sh[0], [0, 0, 1]), [1, 0, 0])
    assert p.opacities[0] == pytest.approx(0.9)
    assert np.allclose(p.scales[0], 0.02)
    assert np.array_equal(p.rotations[0], [1, 0, 0, 0])
    p.check()


def test_default_decoder_opacity_clamp_and_kappa():
    p = decode_triplets(triplets([[0.2, 0.2, 0.2, 1 - 1e-4, 1.0], [0.2, 0.2, 0.2, 1e-4, 1.0]]), K, kappa=2.0)
    assert list(p.opacities) == [0.99, 0.01]
    assert np.allclose(p.scales, 0.02)


def test_decoder_cardinality_and_layout_errors(rng):
    f = np.column_stack([rng.random((50, 4)), rng.uniform(1, 5, 50), rng.random((50, 3))])
    assert len(decode_triplets(triplets(f), K)) == 50
    with pytest.raises(ValueError):
        decode_triplets(triplets(rng.random((3, 4))), K)
    bad = f.copy()
    bad[0, 4] = 0.0
    with pytest.raises(ValueError):
        decode_triplets(triplets(bad), K)


def test_loaded_decoder_activations(rng):
    W = np.zeros((11, 6))
    b = np.zeros(11)
    b[0:3] = [0.0, 1.0, -1.0]
    b[3:7] = [0.0, 0.0, 0.0, 2.0]
    b[7] = 0.0
    b[8:11] = [0.1, 0.2, 0.3]
    p = decode_triplets(triplets(rng.random((2, 6))), K, DecoderParams(W, b))
    assert np.allclose(p.scales[0], np.log1p(np.exp([0.0, 1.0, -1.0])))
    assert np.allclose(p.rotations[0], [0, 0, 0, 1])
    assert p.opacities[0] == 0.5
    assert np.allclose(p.sh[0, 0], [0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        decode_triplets(triplets(rng.random((2, 5))), K, DecoderParams(W, b))
    with pytest.raises(ValueError):
        DecoderParams(np.zeros((12, 6)), np.zeros(12))
    sh1 = decode_triplets(triplets(rng.random((2, 6))), K, DecoderParams(np.zeros((20, 6)), np.zeros(20)))
    assert sh1.sh.shape == (2, 4, 3) and sh1.sh_degree == 1


def test_rgb_to_dc_inverts_sh_offset():
    dc = rgb_to_dc([1.0, 0.5, 0.0])
    assert np.allclose(0.5 + 0.28209479177387814 * dc, [1.0, 0.5, 0.0])


def test_covariance_examples():
    assert np.allclose(covariance_from_scale_rotation([1, 2, 3], [1, 0, 0, 0]), np.diag([1, 4, 9]))
    q = [np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)]
    assert np.allclose(covariance_from_scale_rotation([1, 2, 1], q), np.diag([4, 1, 1]))
    with pytest.raises(ValueError):
        covariance_from_scale_rotation([1, 1, 1], [1, 0.1, 0, 0])
    with pytest.raises(ValueError):
        covariance_from_scale_rotation([1, 0, 1], [1, 0, 0, 0])


def test_quaternion_to_matrix_is_rotation(rng):
    q = rng.normal(size=(100, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    r = quaternion_to_matrix(q)
    assert np.allclose(r @ np.swapaxes(r, 1, 2), np.eye(3), atol=1e-12)
    assert np.allclose(np.linalg.det(r), 1)


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.floats(1e-3, 10), min_size=3, max_size=3),
    st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 0.1),
)
def test_covariance_spd(scale, q):
    q = np.array(q) / np.linalg.norm(q)
    cov = covariance_from_scale_rotation(scale, q)
    assert np.allclose(cov, cov.T, atol=1e-9 * max(scale) ** 2)
    np.linalg.cholesky(cov)
    ev = np.sort(np.linalg.eigvalsh(cov))
    assert np.allclose(ev, np.sort(np.square(scale)), rtol=1e-6, atol=1e-12)
    assert ev[0] > 0


def test_primitive_set_validation():
    with pytest.raises(ValueError):
        GaussianPrimitiveSet(np.zeros((2, 3)), np.ones((2, 3)), np.zeros((2, 4)), np.ones(2) * 0.5, np.zeros((2, 9, 3)))
    e = GaussianPrimitiveSet.empty()
    assert len(e) == 0
    bad = GaussianPrimitiveSet(np.zeros((1, 3)), np.ones((1, 3)), np.array([[1.0, 0, 0, 0]]), np.array([1.0]), np.zeros((1, 1, 3)))
    with pytest.raises(ValueError):
        bad.check()
