"""Decoding of fused triplets into renderable Gaussian primitives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics
from .triplets import CONF, RGB, SRC_DEPTH, TripletSet

SH_C0 = 0.28209479177387814
OPACITY_MIN = 0.01
OPACITY_MAX = 0.99
DEFAULT_KAPPA = 1.0
QUAT_TOL = 1e-6


@dataclass
class GaussianPrimitiveSet:
    centers: np.ndarray  # (M, 3)
    scales: np.ndarray  # (M, 3) meters
    rotations: np.ndarray  # (M, 4) unit quaternions, w x y z
    opacities: np.ndarray  # (M,)
    sh: np.ndarray  # (M, (L+1)^2, 3)

    def __post_init__(self):
        m = len(self.opacities)
        shapes = {
            "centers": (self.centers.shape, (m, 3)),
            "scales": (self.scales.shape, (m, 3)),
            "rotations": (self.rotations.shape, (m, 4)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise ValueError(f"{name} has shape {got}, expected {want}")
        if self.sh.ndim != 3 or self.sh.shape[0] != m or self.sh.shape[2] != 3:
            raise ValueError(f"sh has shape {self.sh.shape}, expected ({m}, K, 3)")
        if self.sh.shape[1] not in (1, 4):
            raise ValueError(f"only SH degree 0 or 1 is supported, got {self.sh.shape[1]} coefficients")

    def __len__(self) -> int:
        return len(self.opacities)

    @property
    def sh_degree(self) -> int:
        return 0 if self.sh.shape[1] == 1 else 1

    @classmethod
    def empty(cls, sh_coeffs: int = 1) -> "GaussianPrimitiveSet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, sh_coeffs, 3)))

    def subset(self, idx) -> "GaussianPrimitiveSet":
        return GaussianPrimitiveSet(
            self.centers[idx], self.scales[idx], self.rotations[idx], self.opacities[idx], self.sh[idx]
        )

    def check(self) -> None:
        if np.any(~(self.scales > 0)):
            raise ValueError("scales must be positive")
        if np.any(np.abs(np.linalg.norm(self.rotations, axis=1) - 1) > QUAT_TOL):
            raise ValueError("rotations must be unit quaternions")
        if np.any(~((self.opacities > 0) & (self.opacities < 1))):
            raise ValueError("opacities must lie in (0, 1)")


@dataclass(frozen=True)
class DecoderParams:
    """Single affine layer: out = W f + b.

    Output rows: 3 scale (softplus), 4 quaternion (normalized), 1 opacity
    (sigmoid), then 3 per SH coefficient, coefficient-major.
    """

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"decoder W {self.W.shape} and b {self.b.shape} are inconsistent")
        if self.W.shape[0] not in (11, 20):
            raise ValueError(f"decoder must output 11 (SH0) or 20 (SH1) rows, got {self.W.shape[0]}")

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]


def rgb_to_dc(rgb):
    return (np.asarray(rgb) - 0.5) / SH_C0


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decode_triplets(
    glob: TripletSet,
    intr: Intrinsics,
    params: DecoderParams | None = None,
    kappa: float = DEFAULT_KAPPA,
) -> GaussianPrimitiveSet:
    """Turn triplets into primitives.

    Without ``params``: DC color from the stored RGB, opacity from the stored
    confidence clamped to [0.01, 0.99], isotropic scale kappa * depth / fx
    (one pixel footprint at the source depth), identity rotation.
    """
    m = len(glob)
    f = glob.features
    if params is not None:
        if f.shape[1] != params.in_dim:
            raise ValueError(f"features have {f.shape[1]} channels, decoder expects {params.in_dim}")
        out = f @ params.W.T + params.b
        scales = _softplus(out[:, 0:3])
        q = out[:, 3:7]
        n = np.linalg.norm(q, axis=1, keepdims=True)
        q = np.where(n > 1e-12, q / np.where(n > 1e-12, n, 1.0), np.array([1.0, 0, 0, 0]))
        opac = _sigmoid(out[:, 7])
        sh = out[:, 8:].reshape(m, -1, 3)
        return GaussianPrimitiveSet(glob.centers.copy(), scales, q, opac, sh)

    if f.shape[1] <= SRC_DEPTH:
        raise ValueError(
            f"default decoder needs rgb, confidence and depth channels; got {f.shape[1]} features"
        )
    depth = f[:, SRC_DEPTH]
    if np.any(~(depth > 0)):
        raise ValueError("source-depth channel must be positive")
    s = kappa * depth / intr.fx
    scales = np.repeat(s[:, None], 3, axis=1)
    rot = np.zeros((m, 4))
    rot[:, 0] = 1.0
    opac = np.clip(f[:, CONF], OPACITY_MIN, OPACITY_MAX)
    sh = rgb_to_dc(f[:, RGB])[:, None, :]
    return GaussianPrimitiveSet(glob.centers.copy(), scales, rot, opac, sh)


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """(..., 4) w-x-y-z quaternions to (..., 3, 3) rotation matrices."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return r.reshape(q.shape[:-1] + (3, 3))


def covariance_from_scale_rotation(scale, q) -> np.ndarray:
    """Sigma = R S S^T R^T; accepts single or batched inputs."""
    scale = np.asarray(scale, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if np.any(~(scale > 0)):
        raise ValueError("scales must be positive")
    if np.any(np.abs(np.linalg.norm(q, axis=-1) - 1.0) > QUAT_TOL):
        raise ValueError("quaternion is not unit length")
    r = quaternion_to_matrix(q)
    m = r * scale[..., None, :]
    return m @ np.swapaxes(m, -1, -2)
