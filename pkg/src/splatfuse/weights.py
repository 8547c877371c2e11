"""Binary weights container for the fusion GRU and primitive decoder.

Layout (little-endian)::

    magic  b"SPLF"
    u32    version (1)
    u32    feature dim
    u32    section count
    per section: 32-byte NUL-padded ASCII name, u32 rows, u32 cols, u64 byte offset
    float32 row-major payloads

Vectors are stored as single-column matrices.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .fusion import GruParams

MAGIC = b"SPLF"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
_ENTRY = struct.Struct("<32sIIQ")

GRU_SECTIONS = {n: f"gru.{n}" for n in GruParams.NAMES}
DECODER_SECTIONS = ("dec.W", "dec.b")


class WeightsFormatError(ValueError):
    pass


def save_weights(path, sections: dict[str, np.ndarray], feature_dim: int) -> None:
    names = list(sections)
    arrays = []
    for name in names:
        a = np.asarray(sections[name], dtype="<f4")
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2:
            raise ValueError(f"section {name!r} must be 1-D or 2-D, got shape {a.shape}")
        if len(name.encode("ascii")) > 32:
            raise ValueError(f"section name {name!r} longer than 32 bytes")
        arrays.append(np.ascontiguousarray(a))
    offset = _HEADER.size + _ENTRY.size * len(names)
    table = []
    for name, a in zip(names, arrays):
        table.append(_ENTRY.pack(name.encode("ascii"), a.shape[0], a.shape[1], offset))
        offset += a.nbytes
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, int(feature_dim), len(names)))
        f.writelines(table)
        for a in arrays:
            f.write(a.tobytes())


def load_weights(path) -> tuple[int, dict[str, np.ndarray]]:
    """Return ``(feature_dim, sections)``; vectors come back 1-D."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise WeightsFormatError(f"{path}: truncated header")
    magic, version, dim, count = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise WeightsFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise WeightsFormatError(f"{path}: unsupported version {version}")
    sections = {}
    for i in range(count):
        pos = _HEADER.size + i * _ENTRY.size
        if pos + _ENTRY.size > len(blob):
            raise WeightsFormatError(f"{path}: section table truncated at byte {pos}")
        raw, rows, cols, off = _ENTRY.unpack_from(blob, pos)
        name = raw.rstrip(b"\0").decode("ascii")
        end = off + 4 * rows * cols
        if end > len(blob):
            raise WeightsFormatError(f"{path}: section {name!r} runs past end of file")
        a = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=off).reshape(rows, cols)
        a = a.astype(np.float64)
        sections[name] = a[:, 0] if cols == 1 else a
    return dim, sections


def gru_from_sections(sections: dict[str, np.ndarray]) -> GruParams | None:
    if not any(s in sections for s in GRU_SECTIONS.values()):
        return None
    missing = [s for s in GRU_SECTIONS.values() if s not in sections]
    if missing:
        raise WeightsFormatError(f"GRU sections missing: {', '.join(missing)}")
    return GruParams(**{n: sections[s] for n, s in GRU_SECTIONS.items()})


def gru_to_sections(params: GruParams) -> dict[str, np.ndarray]:
    return {s: getattr(params, n) for n, s in GRU_SECTIONS.items()}


def decoder_from_sections(sections: dict[str, np.ndarray]):
    from .decode import DecoderParams

    if "dec.W" not in sections and "dec.b" not in sections:
        return None
    if "dec.W" not in sections or "dec.b" not in sections:
        raise WeightsFormatError("decoder needs both dec.W and dec.b")
    return DecoderParams(np.atleast_2d(sections["dec.W"]), np.asarray(sections["dec.b"]).reshape(-1))
