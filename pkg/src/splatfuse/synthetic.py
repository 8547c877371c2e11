"""Procedural indoor scenes with exact ray-cast depth.

Scenes are made of textured rectangles (walls, floors, box faces). Every
pixel ray is intersected in closed form with every rectangle, so ground-truth
depth is exact. Shading is Lambertian with a fixed directional light.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import Intrinsics, Pose, look_at, project, unproject
from .scene_io import write_scene

PRESETS = ("box-room", "corridor", "plane-wall")
LIGHT_DIR = np.array([0.3, 0.8, -0.5]) / np.linalg.norm([0.3, 0.8, -0.5])
AMBIENT = 0.45
MIN_COVERAGE = 0.5
_HIT_EPS = 1e-9


@dataclass
class Texture:
    kind: str  # "checker" or "noise"
    cell: float  # checker cell size or finest noise lattice spacing, meters
    colors: np.ndarray  # (n, 3) palette
    seed: int

    def albedo(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        if self.kind == "checker":
            i = np.floor(s / self.cell).astype(np.int64)
            j = np.floor(t / self.cell).astype(np.int64)
            # alternating light/dark cells, each tinted by a hashed palette entry
            pick = _hash2(i, j, self.seed) % len(self.colors)
            base = self.colors[pick]
            dark = ((i + j) & 1) == 1
            return np.where(dark[..., None], base * 0.35, base)
        n = np.zeros_like(s)
        amp_total = 0.0
        for octave, (scale, amp) in enumerate(((4.0, 0.5), (2.0, 0.3), (1.0, 0.2))):
            n += amp * _value_noise(s / (self.cell * scale), t / (self.cell * scale), self.seed * 7 + octave)
            amp_total += amp
        n /= amp_total
        c0, c1 = self.colors[0], self.colors[1]
        return c0 + (c1 - c0) * n[..., None]


def _hash2(i, j, seed):
    h = (i.astype(np.uint64) * np.uint64(73856093)) ^ (j.astype(np.uint64) * np.uint64(19349663)) ^ np.uint64(seed * 83492791 + 1)
    h ^= h >> np.uint64(13)
    h *= np.uint64(0x5BD1E995)
    h ^= h >> np.uint64(15)
    return h


def _value_noise(x, y, seed):
    """Smooth lattice noise in [0, 1] from hashed corner values."""
    xi = np.floor(x).astype(np.int64)
    yi = np.floor(y).astype(np.int64)
    fx = x - xi
    fy = y - yi
    sx = fx * fx * (3 - 2 * fx)
    sy = fy * fy * (3 - 2 * fy)

    def corner(a, b):
        return (_hash2(a, b, seed) & np.uint64(0xFFFF)).astype(np.float64) / 65535.0

    top = corner(xi, yi) * (1 - sx) + corner(xi + 1, yi) * sx
    bot = corner(xi, yi + 1) * (1 - sx) + corner(xi + 1, yi + 1) * sx
    return top * (1 - sy) + bot * sy


@dataclass
class Quad:
    """Rectangle origin + s*edge_u + t*edge_v for s, t in [0, 1]."""

    origin: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    texture: Texture

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)


@dataclass
class SyntheticScene:
    quads: list[Quad]
    poses: list[Pose]
    intrinsics: Intrinsics
    seed: int
    preset: str = ""
    images: list[np.ndarray] = field(default_factory=list)
    depths: list[np.ndarray] = field(default_factory=list)
    depth_range: tuple[float, float] = (0.5, 15.0)

    def write(self, root) -> Path:
        meta = {
            "preset": self.preset,
            "seed": self.seed,
            "d_near": repr(self.depth_range[0]),
            "d_far": repr(self.depth_range[1]),
        }
        return write_scene(root, self.images, self.poses, self.intrinsics, self.depths, meta)


def ray_cast(quads: list[Quad], pose: Pose, intr: Intrinsics, offsets=None):
    """Render color and exact depth for every pixel.

    Depth comes from the pixel-center ray; when sub-pixel ``offsets`` are
    given, color is their average. Returns ``(image, depth, hit_mask)``;
    misses have depth 0 and black color.
    """
    v0, u0 = np.mgrid[0 : intr.height, 0 : intr.width].astype(np.float64)
    color, depth, hit = _cast(quads, pose, intr, u0, v0)
    if offsets:
        color = np.mean([_cast(quads, pose, intr, u0 + ox, v0 + oy)[0] for ox, oy in offsets], axis=0)
    return np.clip(color, 0.0, 1.0), depth, hit


def _cast(quads, pose, intr, u, v):
    rays_cam = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1)
    dirs = rays_cam @ pose.rotation.T  # z-component in camera = 1, so t is camera depth
    origin = pose.center
    best_t = np.full(u.shape, np.inf)
    color = np.zeros(u.shape + (3,))
    for q in quads:
        n = q.normal
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((q.origin - origin) @ n) / denom
        p = origin + t[..., None] * dirs
        rel = p - q.origin
        s = rel @ q.edge_u / (q.edge_u @ q.edge_u)
        w = rel @ q.edge_v / (q.edge_v @ q.edge_v)
        hit = (np.abs(denom) > _HIT_EPS) & (t > _HIT_EPS) & (s >= 0) & (s <= 1) & (w >= 0) & (w <= 1) & (t < best_t)
        if not hit.any():
            continue
        best_t = np.where(hit, t, best_t)
        alb = q.texture.albedo(s[hit] * np.linalg.norm(q.edge_u), w[hit] * np.linalg.norm(q.edge_v))
        shade = AMBIENT + (1 - AMBIENT) * abs(float(n @ LIGHT_DIR))
        color[hit] = alb * shade
    hit = np.isfinite(best_t)
    depth = np.where(hit, best_t, 0.0)
    return color, depth, hit


def _palette(rng, n=2, contrast=0.5):
    base = rng.uniform(0.25, 0.75, size=3)
    cols = [np.clip(base + rng.uniform(-contrast, contrast, size=3), 0.05, 0.95) for _ in range(n)]
    return np.array(cols)


def box_quads(lo, hi, texture_fn) -> list[Quad]:
    """Six faces of an axis-aligned box."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    dx, dy, dz = np.diag(hi - lo)
    faces = [
        (lo, dy, dz), (lo + dx, dy, dz),  # x = lo, x = hi
        (lo, dx, dz), (lo + dy, dx, dz),  # y = lo, y = hi
        (lo, dx, dy), (lo + dz, dx, dy),  # z = lo, z = hi
    ]
    return [Quad(o, a, b, texture_fn(i)) for i, (o, a, b) in enumerate(faces)]


def default_intrinsics(width: int, height: int, focal_scale: float = 0.8) -> Intrinsics:
    f = focal_scale * width
    return Intrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def _box_room(rng, seed, n_views, intr):
    def noise_tex(cell):
        def make(i):
            return Texture("noise", cell, _palette(rng, 2, 0.45), seed * 101 + int(rng.integers(1 << 20)))
        return make

    quads = box_quads((-3.0, 0.0, -3.0), (3.0, 2.8, 3.0), noise_tex(0.06))
    for _ in range(3):
        cx, cz = rng.uniform(-1.8, 1.8), rng.uniform(1.2, 2.2) * rng.choice([-1, 1])
        size = rng.uniform(0.4, 0.8, size=3)
        lo = np.array([cx - size[0] / 2, 0.0, cz - size[2] / 2])
        quads += box_quads(lo, lo + size * np.array([1, 1.4, 1]), noise_tex(0.04))
    yaw0 = rng.uniform(0, 2 * np.pi)
    poses = []
    for t in range(n_views):
        phase = 2 * np.pi * t / n_views
        eye = np.array([0.45 * np.cos(phase), 1.4 + 0.1 * np.sin(phase), 0.45 * np.sin(phase)])
        yaw = yaw0 + np.deg2rad(28.0) * np.sin(phase)
        pitch = np.deg2rad(-12.0 + 6.0 * np.cos(phase))
        fwd = np.array([np.cos(pitch) * np.sin(yaw), np.sin(pitch), np.cos(pitch) * np.cos(yaw)])
        poses.append(look_at(eye, eye + fwd))
    return quads, poses, (0.5, 10.0)


def _corridor(rng, seed, n_views, intr):
    def tex(i):
        return Texture("noise", 0.05, _palette(rng, 2, 0.45), seed * 131 + i + int(rng.integers(1 << 20)))

    quads = box_quads((-1.6, 0.0, -2.0), (1.6, 2.6, 22.0), tex)
    poses = []
    # walk down the corridor while facing the right-hand wall at an angle
    for t in range(n_views):
        eye = np.array([-0.6, 1.3, 0.3 * t])
        target = eye + np.array([1.0, -0.15, 0.8])
        poses.append(look_at(eye, target))
    return quads, poses, (0.3, 12.0)


def _plane_wall(rng, seed, n_views, intr, depth=2.0, baseline=0.1, cell_px=10.0):
    cell = cell_px * depth / intr.fx
    tex = Texture("checker", cell, _palette(rng, 6, 0.5), seed)
    half = 50.0 * depth
    wall = Quad(np.array([-half, -half, depth]), np.array([2 * half, 0.0, 0.0]), np.array([0.0, 2 * half, 0.0]), tex)
    poses = [Pose(np.eye(3), np.array([baseline * t, 0.0, 0.0])) for t in range(n_views)]
    return [wall], poses, (0.5, 15.0)


def generate_scene(
    preset: str,
    seed: int = 0,
    n_views: int = 2,
    resolution: tuple[int, int] = (192, 256),
    out=None,
    supersample: int = 2,
    **options,
) -> SyntheticScene:
    """Build a preset scene, ray-cast every view and optionally write it to ``out``.

    ``resolution`` is (height, width). Extra ``options`` go to the preset
    (plane-wall accepts ``depth``, ``baseline`` and ``cell_px``).
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {PRESETS}")
    if n_views < 2:
        raise ValueError("need at least 2 views")
    H, W = resolution
    if H % 4 or W % 4:
        raise ValueError(f"resolution {W}x{H} must be divisible by 4")
    rng = np.random.default_rng(seed)
    intr = default_intrinsics(W, H)
    builder = {"box-room": _box_room, "corridor": _corridor, "plane-wall": _plane_wall}[preset]
    quads, poses, drange = builder(rng, seed, n_views, intr, **options)
    scene = SyntheticScene(quads, poses, intr, seed, preset, depth_range=drange)
    offs = [((i + 0.5) / supersample - 0.5, (j + 0.5) / supersample - 0.5) for j in range(supersample) for i in range(supersample)]
    for i, pose in enumerate(poses):
        img, dep, hit = ray_cast(quads, pose, intr, offs if supersample > 1 else None)
        coverage = hit.mean()
        if coverage < MIN_COVERAGE:
            raise ValueError(f"view {i} sees only {coverage:.0%} of the scene (need {MIN_COVERAGE:.0%})")
        scene.images.append(img)
        scene.depths.append(dep)
    if out is not None:
        scene.write(out)
    return scene


def reprojection_overlap(
    depth_a: np.ndarray, pose_a: Pose, depth_b: np.ndarray, pose_b: Pose, intr: Intrinsics, rel_tol: float = 0.01
) -> float:
    """Fraction of view-a pixels visible in view b, judged by GT-depth reprojection."""
    H, W = depth_a.shape
    v, u = np.mgrid[0:H, 0:W]
    ok = depth_a > 0
    pts = unproject(u[ok], v[ok], depth_a[ok], pose_a, intr)
    x, y, d = project(pts, pose_b, intr)
    with np.errstate(invalid="ignore"):
        xi = np.floor(x + 0.5)
        yi = np.floor(y + 0.5)
        inb = (d > 0) & (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
    xi = np.where(inb, xi, 0).astype(np.int64)
    yi = np.where(inb, yi, 0).astype(np.int64)
    db = depth_b[yi, xi]
    vis = inb & (db > 0) & (np.abs(db - d) <= rel_tol * d)
    return float(vis.sum()) / (H * W)
