"""Pinhole camera math: projection, unprojection, rigid transforms and
nearby-view selection.

Camera frame follows the OpenCV convention (x right, y down, z forward).
Poses are stored camera-to-world; world-to-camera is derived on demand.
Pixel centers sit at integer coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ORTHO_TOL = 1e-6
DEFAULT_PROXIMITY_LAMBDA = 0.5  # meters per radian


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @classmethod
    def from_matrix(cls, k: np.ndarray, width: int, height: int) -> "Intrinsics":
        k = np.asarray(k, dtype=np.float64)
        return cls(float(k[0, 0]), float(k[1, 1]), float(k[0, 2]), float(k[1, 2]), int(width), int(height))

    def quarter(self) -> "Intrinsics":
        """Intrinsics of the 4x downsampled grid.

        Quarter-res pixel j covers full-res pixels 4j..4j+3, so its center is
        at full-res coordinate 4j + 1.5.
        """
        return _unchecked_intrinsics(
            self.fx / 4.0,
            self.fy / 4.0,
            (self.cx - 1.5) / 4.0,
            (self.cy - 1.5) / 4.0,
            self.width // 4,
            self.height // 4,
        )


def _unchecked_intrinsics(fx, fy, cx, cy, width, height) -> Intrinsics:
    # derived grids may put the principal point off-image on tiny inputs
    obj = object.__new__(Intrinsics)
    for name, val in zip(("fx", "fy", "cx", "cy", "width", "height"), (fx, fy, cx, cy, width, height)):
        object.__setattr__(obj, name, val)
    return obj


@dataclass(frozen=True)
class RigidTransform:
    """x' = rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def compose(self, first: "RigidTransform") -> "RigidTransform":
        """Return the transform applying ``first`` and then ``self``."""
        return RigidTransform(
            self.rotation @ first.rotation,
            self.rotation @ first.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid pose."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        check_rotation(r, ORTHO_TOL)
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray, tol: float = ORTHO_TOL) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"pose matrix must be 4x4, got {m.shape}")
        r = m[:3, :3]
        check_rotation(r, tol)
        if tol > ORTHO_TOL:
            r = orthonormalize(r)
        return cls(r, m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def cam_to_world(self) -> RigidTransform:
        return RigidTransform(self.rotation, self.translation)

    def world_to_cam(self) -> RigidTransform:
        return self.cam_to_world().inverse()


def check_rotation(r: np.ndarray, tol: float) -> None:
    err = np.abs(r.T @ r - np.eye(3)).max()
    if not np.isfinite(err) or err > tol:
        raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3g})")
    det = np.linalg.det(r)
    if abs(det - 1.0) > tol:
        raise ValueError(f"rotation determinant is {det:.6f}, expected +1")


def orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


@dataclass(frozen=True)
class CameraView:
    image: np.ndarray
    intrinsics: Intrinsics
    pose: Pose
    index: int = 0

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"image must be HxWx3, got {img.shape}")
        if img.shape[0] != self.intrinsics.height or img.shape[1] != self.intrinsics.width:
            raise ValueError(
                f"image is {img.shape[1]}x{img.shape[0]} but intrinsics say "
                f"{self.intrinsics.width}x{self.intrinsics.height}"
            )

    @property
    def height(self) -> int:
        return self.intrinsics.height

    @property
    def width(self) -> int:
        return self.intrinsics.width


def project(points, pose: Pose, intr: Intrinsics):
    """Project world points to pixel coordinates and camera depth.

    Accepts a single 3-vector or an (M, 3) array. Returns ``(u, v, d)``;
    ``d`` may be non-positive for points behind the camera.
    """
    cam = pose.world_to_cam().apply(points)
    z = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[..., 0] / z + intr.cx
        v = intr.fy * cam[..., 1] / z + intr.cy
    return u, v, z


def unproject(u, v, depth, pose: Pose, intr: Intrinsics) -> np.ndarray:
    """Lift pixel(s) at camera depth to world coordinates."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~(depth > 0)):
        raise ValueError("unproject requires depth > 0")
    x = (u - intr.cx) * depth / intr.fx
    y = (v - intr.cy) * depth / intr.fy
    cam = np.stack(np.broadcast_arrays(x, y, depth), axis=-1)
    return pose.cam_to_world().apply(cam)


def relative_transform(src: Pose, dst: Pose) -> RigidTransform:
    """Rigid transform taking src-camera coordinates to dst-camera coordinates."""
    return dst.world_to_cam().compose(src.cam_to_world())


def rotation_angle(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Geodesic angle in radians between two rotations."""
    c = (np.trace(r_a.T @ r_b) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def proximity_score(a: Pose, b: Pose, lam: float = DEFAULT_PROXIMITY_LAMBDA) -> float:
    return float(np.linalg.norm(a.translation - b.translation)) + lam * rotation_angle(
        a.rotation, b.rotation
    )


def select_nearby_views(
    target: int, poses: Sequence[Pose], n: int, lam: float = DEFAULT_PROXIMITY_LAMBDA
) -> list[int]:
    """Pick the ``n`` views closest to ``target`` by translation + lam * rotation angle.

    Ties are broken by the lower view index.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if n >= len(poses):
        raise ValueError(f"cannot select {n} nearby views out of {len(poses)}")
    candidates = [i for i in range(len(poses)) if i != target]
    scores = np.array([proximity_score(poses[target], poses[i], lam) for i in candidates])
    order = np.lexsort((np.array(candidates), scores))
    return [candidates[k] for k in order[:n]]


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> Pose:
    """Camera-to-world pose at ``eye`` looking toward ``target``.

    ``up`` is the world direction that should appear upward in the image;
    since image y points down, the camera y axis is aligned with -up.
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    down = -np.asarray(up, dtype=np.float64)
    x = np.cross(down, z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise ValueError("look_at: view direction parallel to up vector")
    x /= nx
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), eye)


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def round_half_up(x):
    """Pixel rounding used everywhere: floor(x + 0.5)."""
    return np.floor(np.asarray(x) + 0.5)
