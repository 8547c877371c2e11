"""Dataset layout, engine configuration, PLY interchange and metric reports.

Dataset layout::

    images/000000.png      8-bit RGB
    poses/000000.txt       4x4 camera-to-world, row-major
    depths/000000.png      optional 16-bit depth in millimeters, 0 = invalid
    intrinsics.txt         3x3, row-major
    scene.txt              optional ``key = value`` metadata (d_near, d_far, ...)
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraView, Intrinsics, Pose
from .decode import GaussianPrimitiveSet

POSE_TOL = 1e-3
DEPTH_SCALE = 1000.0  # millimeters per meter
_FRAME_RE = re.compile(r"^(\d{6})\.(png|txt)$")


class SceneFormatError(ValueError):
    pass


class PlyFormatError(ValueError):
    pass


# --------------------------------------------------------------------------- config


@dataclass
class EngineConfig:
    k: int = 128
    d_near: float = 0.5
    d_far: float = 15.0
    plane_spacing: str = "uniform"
    delta: float = 0.05
    nearby_views: int = 4
    proximity_lambda: float = 0.5
    temperature: float = 0.005
    matching_channels: int = 14
    refine_iters: int = 2
    guide_sigma: float = 0.05
    kappa: float = 1.0
    fusion_mode: str = "blend"
    weights: str = ""
    tile_size: int = 16
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.k >= 2, "k must be >= 2"),
            (0 < self.d_near < self.d_far, "need 0 < d_near < d_far"),
            (self.plane_spacing in ("uniform", "inverse"), "plane_spacing must be uniform or inverse"),
            (self.delta > 0, "delta must be positive"),
            (self.nearby_views >= 1, "nearby_views must be >= 1"),
            (self.proximity_lambda >= 0, "proximity_lambda must be >= 0"),
            (self.temperature > 0, "temperature must be positive"),
            (self.matching_channels >= 5, "matching_channels must be >= 5"),
            (self.refine_iters >= 0, "refine_iters must be >= 0"),
            (self.guide_sigma > 0, "guide_sigma must be positive"),
            (self.kappa > 0, "kappa must be positive"),
            (self.fusion_mode in ("blend", "gru"), "fusion_mode must be blend or gru"),
            (self.fusion_mode != "gru" or bool(self.weights), "fusion_mode gru needs a weights file"),
            (self.tile_size >= 1, "tile_size must be >= 1"),
            (len(self.background) == 3 and all(0 <= c <= 1 for c in self.background), "background must be 3 values in [0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(f"invalid config: {msg}")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                val = ",".join(repr(float(c)) for c in val)
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{f.name} = {val}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "EngineConfig | None" = None) -> "EngineConfig":
        values = parse_key_values(text)
        return (base or cls()).updated(values)

    def updated(self, values: dict[str, str | object]) -> "EngineConfig":
        known = {f.name: f for f in fields(self)}
        kwargs = {f.name: getattr(self, f.name) for f in fields(self)}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(type(kwargs[key]), raw)
        return type(self)(**kwargs)

    @classmethod
    def load(cls, path) -> "EngineConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def _coerce(kind, raw):
    if not isinstance(raw, str):
        return tuple(float(c) for c in raw) if kind is tuple else kind(raw)
    raw = raw.strip()
    if kind is tuple:
        parts = [p for p in raw.split(",") if p.strip()]
        return tuple(float(p) for p in parts)
    if kind is bool:
        return raw.lower() in ("1", "true", "yes")
    return kind(raw)


def parse_key_values(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value', got {line!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


# --------------------------------------------------------------------------- images


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def read_depth(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise SceneFormatError(f"{path}: depth PNG must be single-channel, got shape {arr.shape}")
    return arr.astype(np.float64) / DEPTH_SCALE


def write_depth(path, depth: np.ndarray) -> None:
    mm = np.clip(np.round(np.asarray(depth) * DEPTH_SCALE), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path)


def read_matrix(path, shape: tuple[int, int]) -> np.ndarray:
    try:
        m = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise SceneFormatError(f"{path}: cannot parse matrix ({exc})") from exc
    if m.shape != shape:
        raise SceneFormatError(f"{path}: expected a {shape[0]}x{shape[1]} matrix, got {m.shape}")
    if not np.isfinite(m).all():
        raise SceneFormatError(f"{path}: matrix has non-finite entries")
    return m


def write_matrix(path, m: np.ndarray) -> None:
    np.savetxt(path, np.asarray(m, dtype=np.float64), fmt="%.17g")


# --------------------------------------------------------------------------- dataset


@dataclass
class SceneDataset:
    root: Path
    views: list[CameraView]
    depths: list[np.ndarray] | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.views)

    @property
    def intrinsics(self) -> Intrinsics:
        return self.views[0].intrinsics

    @property
    def poses(self) -> list[Pose]:
        return [v.pose for v in self.views]

    def depth_hint(self) -> tuple[float, float] | None:
        if "d_near" in self.metadata and "d_far" in self.metadata:
            return float(self.metadata["d_near"]), float(self.metadata["d_far"])
        return None


def _frames(folder: Path, ext: str) -> list[Path]:
    files = sorted(p for p in folder.iterdir() if p.suffix == f".{ext}" and _FRAME_RE.match(p.name))
    for i, p in enumerate(files):
        if int(p.stem) != i:
            raise SceneFormatError(f"{folder}: frame indices must be contiguous from 0; found {p.name} at position {i}")
    return files


def load_scene(root) -> SceneDataset:
    root = Path(root)
    if not root.is_dir():
        raise SceneFormatError(f"{root}: scene directory does not exist")
    for sub in ("images", "poses"):
        if not (root / sub).is_dir():
            raise SceneFormatError(f"{root / sub}: missing directory")
    intr_path = root / "intrinsics.txt"
    if not intr_path.is_file():
        raise SceneFormatError(f"{intr_path}: missing intrinsics file")
    k = read_matrix(intr_path, (3, 3))
    images = _frames(root / "images", "png")
    poses = _frames(root / "poses", "txt")
    if not images:
        raise SceneFormatError(f"{root / 'images'}: no frames")
    if len(images) != len(poses):
        raise SceneFormatError(f"{root}: {len(images)} images but {len(poses)} poses")

    views = []
    intr = None
    for i, (ip, pp) in enumerate(zip(images, poses)):
        img = read_image(ip)
        if intr is None:
            try:
                intr = Intrinsics.from_matrix(k, img.shape[1], img.shape[0])
            except ValueError as exc:
                raise SceneFormatError(f"{intr_path}: {exc}") from exc
        m = read_matrix(pp, (4, 4))
        if not np.allclose(m[3], [0, 0, 0, 1]):
            raise SceneFormatError(f"{pp}: last row must be 0 0 0 1")
        try:
            pose = Pose.from_matrix(m, tol=POSE_TOL)
        except ValueError as exc:
            raise SceneFormatError(f"{pp}: {exc}") from exc
        try:
            views.append(CameraView(img, intr, pose, i))
        except ValueError as exc:
            raise SceneFormatError(f"{ip}: {exc}") from exc

    depths = None
    if (root / "depths").is_dir():
        dfiles = _frames(root / "depths", "png")
        if len(dfiles) != len(views):
            raise SceneFormatError(f"{root / 'depths'}: {len(dfiles)} depth maps for {len(views)} views")
        depths = []
        for p in dfiles:
            d = read_depth(p)
            if d.shape != (intr.height, intr.width):
                raise SceneFormatError(f"{p}: depth is {d.shape}, expected {(intr.height, intr.width)}")
            depths.append(d)

    meta = {}
    if (root / "scene.txt").is_file():
        meta = parse_key_values((root / "scene.txt").read_text(encoding="utf-8"))
    return SceneDataset(root, views, depths, meta)


def write_scene(root, images, poses, intr: Intrinsics, depths=None, metadata=None) -> Path:
    root = Path(root)
    try:
        for sub in ("images", "poses") + (("depths",) if depths is not None else ()):
            (root / sub).mkdir(parents=True, exist_ok=True)
        write_matrix(root / "intrinsics.txt", intr.matrix)
        for i, (img, pose) in enumerate(zip(images, poses)):
            write_image(root / "images" / f"{i:06d}.png", img)
            write_matrix(root / "poses" / f"{i:06d}.txt", pose.matrix)
            if depths is not None:
                write_depth(root / "depths" / f"{i:06d}.png", depths[i])
        if metadata:
            text = "".join(f"{k} = {v}\n" for k, v in metadata.items())
            (root / "scene.txt").write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"writing scene to {root}: {exc}") from exc
    return root


def read_pose(path) -> Pose:
    m = read_matrix(path, (4, 4))
    try:
        return Pose.from_matrix(m, tol=POSE_TOL)
    except ValueError as exc:
        raise SceneFormatError(f"{path}: {exc}") from exc


def read_intrinsics(path, width: int, height: int) -> Intrinsics:
    try:
        return Intrinsics.from_matrix(read_matrix(path, (3, 3)), width, height)
    except ValueError as exc:
        raise SceneFormatError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------- PLY

_BASE_PROPS = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
_TAIL_PROPS = ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
_REST_PROPS = [f"f_rest_{i}" for i in range(9)]


def _ply_props(sh_coeffs: int) -> list[str]:
    rest = _REST_PROPS if sh_coeffs == 4 else []
    return _BASE_PROPS + rest + _TAIL_PROPS


def _logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def encode_ply_rows(prims: GaussianPrimitiveSet) -> np.ndarray:
    m = len(prims)
    k = prims.sh.shape[1]
    cols = [prims.centers, np.zeros((m, 3)), prims.sh[:, 0, :]]
    if k == 4:
        # channel-major layout of the higher bands
        cols.append(prims.sh[:, 1:, :].transpose(0, 2, 1).reshape(m, 9))
    cols += [_logit(prims.opacities)[:, None], np.log(prims.scales), prims.rotations]
    return np.concatenate(cols, axis=1).astype("<f4")


def decode_ply_rows(rows: np.ndarray, sh_coeffs: int) -> GaussianPrimitiveSet:
    rows = rows.astype(np.float64)
    m = rows.shape[0]
    centers = rows[:, 0:3]
    sh = np.zeros((m, sh_coeffs, 3))
    sh[:, 0, :] = rows[:, 6:9]
    c = 9
    if sh_coeffs == 4:
        sh[:, 1:, :] = rows[:, 9:18].reshape(m, 3, 3).transpose(0, 2, 1)
        c = 18
    opac = _sigmoid(rows[:, c])
    scales = np.exp(rows[:, c + 1 : c + 4])
    rots = rows[:, c + 4 : c + 8]
    return GaussianPrimitiveSet(centers, scales, rots, opac, sh)


def quantize_primitives(prims: GaussianPrimitiveSet) -> GaussianPrimitiveSet:
    """Primitives exactly as they come back from a PLY file."""
    return decode_ply_rows(encode_ply_rows(prims), prims.sh.shape[1])


def export_ply(prims: GaussianPrimitiveSet, path) -> None:
    props = _ply_props(prims.sh.shape[1])
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(prims)}"]
    header += [f"property float {p}" for p in props]
    header.append("end_header")
    rows = encode_ply_rows(prims)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rows.tobytes())


def import_ply(path) -> GaussianPrimitiveSet:
    blob = Path(path).read_bytes()
    offset = 0
    props: list[str] = []
    count = None
    fmt_seen = False

    def fail(msg):
        raise PlyFormatError(f"{path}: {msg} (byte offset {offset})")

    first = True
    while True:
        end = blob.find(b"\n", offset)
        if end < 0:
            fail("header not terminated by end_header")
        try:
            line = blob[offset:end].decode("ascii").strip()
        except UnicodeDecodeError:
            fail("non-ASCII header line")
        if first:
            if line != "ply":
                fail("missing 'ply' magic")
            first = False
        elif line == "end_header":
            offset = end + 1
            break
        elif line.startswith("format"):
            if line.split()[1:] != ["binary_little_endian", "1.0"]:
                fail(f"unsupported format {line!r}")
            fmt_seen = True
        elif line.startswith("comment") or line.startswith("obj_info"):
            pass
        elif line.startswith("element"):
            parts = line.split()
            if len(parts) != 3 or parts[1] != "vertex" or count is not None:
                fail(f"unsupported element declaration {line!r}")
            try:
                count = int(parts[2])
            except ValueError:
                fail(f"bad vertex count in {line!r}")
            if count < 0:
                fail("negative vertex count")
        elif line.startswith("property"):
            parts = line.split()
            if count is None:
                fail("property before element vertex")
            if len(parts) != 3 or parts[1] != "float":
                fail(f"unsupported property declaration {line!r}")
            props.append(parts[2])
        else:
            fail(f"unexpected header line {line!r}")
        offset = end + 1
    if not fmt_seen or count is None:
        fail("header lacks format or element vertex")
    for sh_coeffs in (1, 4):
        if props == _ply_props(sh_coeffs):
            break
    else:
        expected = set(_ply_props(4))
        unknown = [p for p in props if p not in expected]
        if unknown:
            fail(f"unknown properties {unknown}")
        fail(f"property list {props} does not match the expected layout")
    need = count * len(props) * 4
    if len(blob) - offset < need:
        fail(f"vertex data truncated: need {need} bytes, have {len(blob) - offset}")
    rows = np.frombuffer(blob, dtype="<f4", count=count * len(props), offset=offset).reshape(count, len(props))
    return decode_ply_rows(rows, sh_coeffs)


# --------------------------------------------------------------------------- reports

REPORT_KEYS = (
    "psnr",
    "ssim",
    "abs_diff",
    "abs_rel",
    "delta_1_25",
    "delta_1_10",
    "num_gaussians",
    "reduction_ratio",
    "timings_ms",
)


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    return v


def format_report(report: dict) -> str:
    missing = [k for k in REPORT_KEYS if k not in report]
    if missing:
        raise ValueError(f"metrics report lacks keys: {missing}")
    return json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"


def write_report(path, report: dict) -> None:
    Path(path).write_text(format_report(report), encoding="utf-8")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
