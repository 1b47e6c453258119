"""Deterministic PNG rasterization of fields, boundary data and spectra."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib import colormaps
from PIL import Image, ImageDraw

from .domain import DomainError, Grid2D, ScalarField2D
from .sampling import Spectrum2D
from .wave import BoundaryData

FIELD_CMAP = "RdBu_r"
MAGNITUDE_CMAP = "magma"
PANEL_GAP = 4


def _value_range(values: np.ndarray, symmetric: bool) -> tuple[float, float]:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return 0.0, 0.0
    if symmetric:
        m = float(np.max(np.abs(finite)))
        return -m, m
    return float(finite.min()), float(finite.max())


def _colorize(values: np.ndarray, vmin: float, vmax: float, cmap: str) -> np.ndarray:
    """RGB uint8 array; row 0 of ``values`` ends up at the bottom of the image."""
    span = vmax - vmin
    z = np.full(values.shape, 0.5) if span <= 0 else np.clip((values - vmin) / span, 0, 1)
    rgba = colormaps[cmap](np.flipud(z))
    return np.round(rgba[..., :3] * 255).astype(np.uint8)


def _save(rgb: np.ndarray, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        # No text chunks: the file depends on the pixels only.
        Image.fromarray(rgb, "RGB").save(path, format="PNG", optimize=False)
    except OSError as exc:
        raise DomainError(f"cannot write {path}: {exc}") from exc
    return path


def render_field(field: ScalarField2D, path, cmap: str = FIELD_CMAP,
                 vrange: tuple[float, float] | None = None) -> dict:
    """Render a real field (complex fields are shown by magnitude)."""
    vals = np.asarray(field.values)
    symmetric = not np.iscomplexobj(vals)
    vals = np.abs(vals) if np.iscomplexobj(vals) else vals.astype(float)
    if not symmetric and cmap == FIELD_CMAP:
        cmap = MAGNITUDE_CMAP
    vmin, vmax = vrange if vrange is not None else _value_range(vals, symmetric)
    _save(_colorize(vals, vmin, vmax, cmap), path)
    return {"path": str(Path(path).name), "cmap": cmap, "vmin": vmin, "vmax": vmax}


def render_boundary_data(data: BoundaryData, path, cmap: str = FIELD_CMAP) -> dict:
    """Four edge panels side by side (time upward, arc length to the right)
    sharing one symmetric colour range."""
    vmin, vmax = _value_range(np.concatenate([v.ravel() for v in data.values]), True)
    panels = [_colorize(np.asarray(v), vmin, vmax, cmap) for v in data.values]
    height = max(p.shape[0] for p in panels)
    width = sum(p.shape[1] for p in panels) + PANEL_GAP * 3
    canvas = np.full((height, width, 3), 255, dtype=np.uint8)
    col = 0
    for p in panels:
        canvas[height - p.shape[0]:, col:col + p.shape[1]] = p
        col += p.shape[1] + PANEL_GAP
    _save(canvas, path)
    return {"path": str(Path(path).name), "cmap": cmap, "vmin": vmin, "vmax": vmax}


def render_spectrum(spectrum: Spectrum2D, path, cmap: str = MAGNITUDE_CMAP,
                    decades: float = 6.0) -> dict:
    """Log10 magnitude clipped to ``decades`` below the peak."""
    mag = spectrum.magnitude
    peak = float(mag.max())
    if peak > 0:
        logm = np.log10(np.maximum(mag, peak * 10.0 ** (-decades)))
        vmin, vmax = float(np.log10(peak) - decades), float(np.log10(peak))
    else:
        logm = np.zeros_like(mag)
        vmin = vmax = 0.0
    _save(_colorize(logm, vmin, vmax, cmap), path)
    return {"path": str(Path(path).name), "cmap": cmap, "vmin": vmin, "vmax": vmax,
            "scale": "log10"}


def render_png(obj, path, cmap: str | None = None) -> dict:
    """Dispatch on the object type; returns the recorded colour range."""
    if isinstance(obj, ScalarField2D):
        return render_field(obj, path, cmap or FIELD_CMAP)
    if isinstance(obj, BoundaryData):
        return render_boundary_data(obj, path, cmap or FIELD_CMAP)
    if isinstance(obj, Spectrum2D):
        return render_spectrum(obj, path, cmap or MAGNITUDE_CMAP)
    raise DomainError(f"cannot render {type(obj).__name__}")


def _pixel(grid: Grid2D, pts: np.ndarray) -> list[tuple[float, float]]:
    pts = np.atleast_2d(pts)
    i = (pts[:, 0] - grid.x_min) / grid.dx
    j = (grid.ny - 1) - (pts[:, 1] - grid.y_min) / grid.dy
    return list(zip(i.tolist(), j.tolist()))


def render_overlay(field: ScalarField2D, polylines, markers, path,
                   cmap: str = FIELD_CMAP) -> dict:
    """Field image with ray polylines (black) and point markers (green) drawn on top."""
    info = render_field(field, path, cmap)
    img = Image.open(path).convert("RGB")
    draw = ImageDraw.Draw(img)
    for line in polylines:
        if len(line) >= 2:
            draw.line(_pixel(field.grid, np.asarray(line)), fill=(0, 0, 0), width=1)
    for p in markers:
        (u, v), = _pixel(field.grid, np.asarray(p))
        draw.ellipse([u - 3, v - 3, u + 3, v + 3], outline=(0, 160, 0), width=2)
    img.save(path, format="PNG", optimize=False)
    return info
