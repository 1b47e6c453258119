"""Binary dumps of fields (TATF) and boundary data (TATB), plus spectrum sidecars."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .domain import DomainError, Grid2D, ScalarField2D, SquareBoundary
from .wave import BoundaryData

FIELD_MAGIC = b"TATF"
DATA_MAGIC = b"TATB"
VERSION = 1

_FIELD_HEADER = struct.Struct("<4sIIII4d")
_DATA_HEADER = struct.Struct("<4sIIIIddd")


class FormatError(DomainError):
    """Malformed or unsupported binary file."""


def write_field(path, field: ScalarField2D) -> Path:
    """Write ``field`` as TATF: header, then f64 values row-major (rows = y)."""
    path = Path(path)
    g = field.grid
    complex_ = field.kind == "complex"
    header = _FIELD_HEADER.pack(FIELD_MAGIC, VERSION, int(complex_), g.nx, g.ny, *g.extents)
    vals = np.asarray(field.values)
    if complex_:
        body = np.stack([vals.real, vals.imag], axis=-1).astype("<f8").tobytes()
    else:
        body = vals.astype("<f8").tobytes()
    path.write_bytes(header + body)
    return path


def read_field(path) -> ScalarField2D:
    raw = Path(path).read_bytes()
    if len(raw) < _FIELD_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, kind, nx, ny, x0, x1, y0, y1 = _FIELD_HEADER.unpack_from(raw)
    if magic != FIELD_MAGIC:
        raise FormatError(f"{path}: not a TATF file")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if kind not in (0, 1):
        raise FormatError(f"{path}: unknown value kind {kind}")
    count = nx * ny * (2 if kind else 1)
    body = np.frombuffer(raw, dtype="<f8", offset=_FIELD_HEADER.size)
    if body.size != count:
        raise FormatError(f"{path}: expected {count} values, found {body.size}")
    vals = body.reshape(ny, nx, 2) if kind else body.reshape(ny, nx)
    if kind:
        vals = vals[..., 0] + 1j * vals[..., 1]
    return ScalarField2D(Grid2D(nx, ny, x0, x1, y0, y1), np.array(vals))


def write_boundary_data(path, data: BoundaryData) -> Path:
    """Write TATB: header, then per-edge ``(n_t, n_e)`` f64 arrays, time-major."""
    if not data.is_uniform():
        raise FormatError("TATB needs the same number of points on every edge")
    path = Path(path)
    n = data.n_arc(0)
    header = _DATA_HEADER.pack(DATA_MAGIC, VERSION, 4, data.n_t, n, data.dt, data.h,
                               data.arc_spacing(0))
    body = b"".join(np.asarray(v, dtype="<f8").tobytes() for v in data.values)
    path.write_bytes(header + body)
    return path


def read_boundary_data(path, square: SquareBoundary | None = None,
                       center=(0.0, 0.0)) -> BoundaryData:
    """Read TATB. The square is rebuilt from the arc spacing around ``center``
    unless given explicitly."""
    raw = Path(path).read_bytes()
    if len(raw) < _DATA_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n_edges, n_t, n, dt, h, ds = _DATA_HEADER.unpack_from(raw)
    if magic != DATA_MAGIC:
        raise FormatError(f"{path}: not a TATB file")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if n_edges != 4:
        raise FormatError(f"{path}: expected 4 edges, found {n_edges}")
    body = np.frombuffer(raw, dtype="<f8", offset=_DATA_HEADER.size)
    if body.size != 4 * n_t * n:
        raise FormatError(f"{path}: expected {4 * n_t * n} values, found {body.size}")
    if square is None:
        half = n * ds / 2
        cx, cy = center
        square = SquareBoundary(cx - half, cx + half, cy - half, cy + half, n)
    elif square.points_per_edge % n:
        raise FormatError("square sampling is incompatible with the file")
    vals = [np.array(body[e * n_t * n:(e + 1) * n_t * n].reshape(n_t, n)) for e in range(4)]
    return BoundaryData(square, dt, vals, h)


def write_spectrum(path, spectrum) -> tuple[Path, Path]:
    """Spectrum magnitude as TATF (kind 0) with a JSON sidecar of the axes.

    The TATF extents span the frequency axes (x = second axis).
    """
    path = Path(path)
    a0, a1 = spectrum.axes
    grid = Grid2D(len(a1), len(a0), float(a1[0]), float(a1[-1]), float(a0[0]), float(a0[-1]))
    write_field(path, ScalarField2D(grid, spectrum.magnitude))
    side = path.with_suffix(path.suffix + ".json")
    meta = {
        "axis0": [float(v) for v in a0],
        "axis1": [float(v) for v in a1],
        "axis_names": list(spectrum.names),
        "h": spectrum.h,
    }
    side.write_text(json.dumps(meta, sort_keys=True, indent=1))
    return path, side
