"""Speed fields and initial-pressure phantoms."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .domain import DomainError, Grid2D, ScalarField2D, SpeedField, SquareBoundary

# Relative level below which phantoms are cut to exactly zero.
SUPPORT_LEVEL = 1e-8
# Bumps must be below this before the margin band.
BUMP_LEVEL = 1e-6


def _bump(grid: Grid2D, center, amplitude: float, width: float) -> np.ndarray:
    X, Y = grid.mesh()
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    return amplitude * np.exp(-(r2 ** 2) / width)


def make_speed(grid: Grid2D, bumps=(), margin: float = 0.1) -> SpeedField:
    """``c = 1 + sum_i a_i exp(-|x - x_i|^4 / w_i)`` for ``bumps = [(x_i, a_i, w_i), ...]``."""
    c = np.ones(grid.shape)
    for center, amplitude, width in bumps:
        if width <= 0:
            raise DomainError("bump width must be positive")
        c += _bump(grid, center, float(amplitude), float(width))
    if c.min() <= 0:
        raise DomainError(f"speed would be non-positive (min {c.min():.3g})")
    return SpeedField(ScalarField2D(grid, c), margin=margin)


def make_gaussian_bump_speed(center, amplitude: float, width: float, grid: Grid2D,
                             margin: float = 0.1) -> SpeedField:
    """Single quartic-exponential bump ``1 + a exp(-|x - x0|^4 / width)``.

    ``amplitude > 0`` gives a fast spot, ``amplitude < 0`` a slow spot.
    """
    if 1 + amplitude <= 0:
        raise DomainError("1 + amplitude must be positive")
    # The bump radius where it drops below BUMP_LEVEL must not reach the margin band.
    if amplitude != 0:
        r = (width * np.log(abs(amplitude) / BUMP_LEVEL)) ** 0.25 if abs(amplitude) > BUMP_LEVEL else 0.0
        mx = margin * (grid.x_max - grid.x_min)
        my = margin * (grid.y_max - grid.y_min)
        if (center[0] - r < grid.x_min + mx or center[0] + r > grid.x_max - mx
                or center[1] - r < grid.y_min + my or center[1] + r > grid.y_max - my):
            raise DomainError("speed bump does not decay before the grid margin band")
    return make_speed(grid, [(center, amplitude, width)], margin=margin)


def _cut(values: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(values))
    if peak == 0:
        return values
    out = values.copy()
    out[np.abs(values) < SUPPORT_LEVEL * peak] = 0
    return out


def coherent_state_radius(h: float) -> float:
    """Radius where the envelope ``exp(-r^2 / 2h)`` reaches the support level."""
    return float(np.sqrt(2 * h * np.log(1 / SUPPORT_LEVEL)))


def make_coherent_state(x0, xi0, h: float, grid: Grid2D,
                        square: SquareBoundary | None = None,
                        real: bool = False, centered: bool = False) -> ScalarField2D:
    """Wave packet ``exp(-|x - x0|^2 / 2h) exp(i x . xi0 / h)``.

    Its semiclassical wave front set is the single point ``(x0, xi0)``.
    With ``real=True`` the real part is returned, which is what the wave
    solver takes as initial pressure. ``centered=True`` measures the phase
    from ``x0`` instead of the origin (a constant phase factor), so the real
    part peaks at ``x0``.
    """
    if h <= 0:
        raise DomainError("h must be positive")
    x0 = np.asarray(x0, dtype=float)
    xi0 = np.asarray(xi0, dtype=float)
    r = coherent_state_radius(h)
    if square is not None and square.distance_inside(x0) <= r:
        raise DomainError(
            f"coherent state envelope (radius {r:.3g}) is truncated by the measurement square")
    X, Y = grid.mesh()
    dx, dy = X - x0[0], Y - x0[1]
    envelope = np.exp(-(dx ** 2 + dy ** 2) / (2 * h))
    envelope[envelope < SUPPORT_LEVEL] = 0
    px, py = (dx, dy) if centered else (X, Y)
    values = envelope * np.exp(1j * (px * xi0[0] + py * xi0[1]) / h)
    return ScalarField2D(grid, values.real if real else values)


def make_line_segment_phantom(p0, p1, thickness: float, grid: Grid2D,
                              square: SquareBoundary | None = None) -> ScalarField2D:
    """Smooth ridge ``exp(-d^2 / thickness^2)`` around the segment ``[p0, p1]``."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    if thickness <= 2 * max(grid.dx, grid.dy):
        raise DomainError("segment thickness must exceed two grid cells")
    reach = thickness * np.sqrt(np.log(1 / SUPPORT_LEVEL))
    if square is not None:
        for p in (p0, p1):
            if square.distance_inside(p) <= reach:
                raise DomainError("line segment (with its smooth profile) leaves the square")
    X, Y = grid.mesh()
    d = p1 - p0
    L2 = float(d @ d)
    if L2 == 0:
        t = np.zeros_like(X)
    else:
        t = np.clip(((X - p0[0]) * d[0] + (Y - p0[1]) * d[1]) / L2, 0, 1)
    qx, qy = p0[0] + t * d[0], p0[1] + t * d[1]
    dist2 = (X - qx) ** 2 + (Y - qy) ** 2
    return ScalarField2D(grid, _cut(np.exp(-dist2 / thickness ** 2)))


def read_grayscale(path) -> np.ndarray:
    """8-bit grayscale image (PGM P5 or PNG) as floats, first row = top."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(Path(path)) as im:
            return np.asarray(im.convert("L"), dtype=float)
    except (OSError, UnidentifiedImageError) as exc:
        raise DomainError(f"cannot read image {path}: {exc}") from exc


def image_to_phantom(img: np.ndarray, grid: Grid2D, square: SquareBoundary,
                     smoothing_width: float, margin: float | None = None) -> ScalarField2D:
    """Place an image (first row = top) inside the square and mollify it."""
    if smoothing_width < 0:
        raise DomainError("smoothing_width must be non-negative")
    img = np.asarray(img, dtype=float)
    lo, hi = img.min(), img.max()
    if hi == lo:
        raise DomainError("image is constant")
    img = (img - lo) / (hi - lo)
    if margin is None:
        margin = 0.1 * square.side
    # Keep the smoothed image clear of the cut at the margin.
    inset = margin + 3 * smoothing_width
    if 2 * inset >= square.side:
        raise DomainError("margin and smoothing leave no room for the image")
    x0, x1 = square.x_min + inset, square.x_max - inset
    y0, y1 = square.y_min + inset, square.y_max - inset
    X, Y = grid.mesh()
    inside = (X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)
    rows, cols = img.shape
    # Image row 0 is the top (y1); bilinear resampling onto grid nodes.
    u = (X - x0) / (x1 - x0) * (cols - 1)
    v = (y1 - Y) / (y1 - y0) * (rows - 1)
    sampled = ndimage.map_coordinates(img, [v[inside], u[inside]], order=1, mode="nearest")
    values = np.zeros(grid.shape)
    values[inside] = sampled
    if smoothing_width > 0:
        values = ndimage.gaussian_filter(
            values, sigma=(smoothing_width / grid.dy, smoothing_width / grid.dx), mode="constant")
    values[~square.inner_mask(grid, margin)] = 0
    if not np.any(values):
        raise DomainError("image phantom vanished")
    values = values / values.max()
    return ScalarField2D(grid, _cut(values))


def load_image_phantom(path, grid: Grid2D, smoothing_width: float,
                       square: SquareBoundary, margin: float | None = None) -> ScalarField2D:
    """Read a grayscale image and turn it into a smooth phantom in ``[0, 1]``."""
    return image_to_phantom(read_grayscale(path), grid, square, smoothing_width, margin)


def checkerboard_image(size: int, period_px: int) -> np.ndarray:
    """8-bit checkerboard with squares of ``period_px / 2`` pixels."""
    idx = np.arange(size) // (period_px // 2)
    return (((idx[:, None] + idx[None, :]) % 2) * 255).astype(np.uint8)


def stripes_image(size: int, period_px: float, angle: float = 0.0) -> np.ndarray:
    """Zebra-like sinusoidal stripes, smooth enough to be resampled."""
    yy, xx = np.mgrid[0:size, 0:size]
    phase = 2 * np.pi * (xx * np.cos(angle) + yy * np.sin(angle)) / period_px
    return np.round(127.5 * (1 + np.sin(phase))).astype(np.uint8)


def zero_phantom(grid: Grid2D) -> ScalarField2D:
    return ScalarField2D(grid, np.zeros(grid.shape))
