"""Time-reversal reconstruction, data averaging and the anti-aliasing pipeline."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.fft
from scipy import ndimage

from .domain import DomainError, Grid2D, ScalarField2D, SpeedField, SquareBoundary
from .rays import SpeedModel, canonical_map
from .sampling import (SamplingSpec, _workers, downsample, resample_boundary,
                       semiclassical_axis)
from .wave import (DIVERGENCE_CHECK, BoundaryData, LeapfrogSolver, SimulationWarning,
                   SolverConfig, cfl_timestep, check_finite, default_duration)

PROFILES = ("gaussian", "bump")


@dataclass(frozen=True)
class FilterSpec:
    """Multiplier ``psi(a tau^2 + b eta^2)`` on boundary data.

    ``gaussian``: ``psi(r) = exp(-r / scale^2)``. ``bump``: ``psi(r) =
    exp(-q / (1 - q))`` for ``q = r / scale^2 < 1`` and 0 beyond. An
    infinite scale gives the identity.
    """

    a: float = 0.0
    b: float = 1.0
    psi: str = "gaussian"
    scale: float = math.inf

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise DomainError("filter weights must be non-negative")
        if self.a + self.b <= 0:
            raise DomainError("need a + b > 0")
        if self.psi not in PROFILES:
            raise DomainError(f"unknown profile {self.psi!r}")
        if not self.scale > 0:
            raise DomainError("scale must be positive")

    def profile(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if math.isinf(self.scale):
            return np.ones_like(r)
        q = r / self.scale ** 2
        if self.psi == "gaussian":
            return np.exp(-q)
        out = np.zeros_like(q)
        inside = q < 1
        out[inside] = np.exp(-q[inside] / (1 - q[inside]))
        return out

    def symbol(self, tau, eta) -> np.ndarray:
        return self.profile(self.a * np.asarray(tau) ** 2 + self.b * np.asarray(eta) ** 2)

    @classmethod
    def half_at(cls, frequency: float, a: float = 0.0, b: float = 1.0,
                psi: str = "gaussian") -> "FilterSpec":
        """Filter with ``psi = 1/2`` where ``a tau^2 + b eta^2 = frequency^2``
        (pass the Nyquist band edge ``pi / s`` of the target rate)."""
        q = math.log(2) if psi == "gaussian" else math.log(2) / (1 + math.log(2))
        return cls(a, b, psi, frequency / math.sqrt(q))


def restrict(field: ScalarField2D, boundary: SquareBoundary) -> ScalarField2D:
    """Restriction of a field to the closed measurement square."""
    i0, i1, j0, j1 = boundary.node_block(field.grid)
    return ScalarField2D(boundary.subgrid(field.grid), field.values[j0:j1 + 1, i0:i1 + 1])


def _ring_writer(n: int):
    """Index arrays of the boundary ring of an ``(n+1, n+1)`` block, per edge,
    in arc order (matching :meth:`SquareBoundary.points`)."""
    k = np.arange(n)
    return [
        (np.zeros(n, int), k),          # bottom: left to right
        (k, np.full(n, n)),             # right: bottom to top
        (np.full(n, n), n - k),         # top: right to left
        (n - k, np.zeros(n, int)),      # left: top to bottom
    ]


def time_reverse(data: BoundaryData, speed: SpeedField, grid: Grid2D | None = None,
                 kernel: str = "sinc", safety: float = 1.0) -> ScalarField2D:
    """Back-propagate boundary data into the square.

    The wave equation runs backward from zero state at ``t = T`` on the
    grid nodes of the closed square, with the data imposed as Dirichlet
    values on its boundary ring. Data coarser than the grid (in time or arc
    length) are first sinc-interpolated to the grid rates; this is where
    undersampling turns into aliasing. Returns ``u(0)`` on the square.
    """
    grid = speed.grid if grid is None else grid
    if grid != speed.grid:
        raise DomainError("speed must live on the reconstruction grid")
    square = data.boundary
    i0, i1, j0, j1 = square.node_block(grid)
    n = i1 - i0
    sub = square.subgrid(grid)
    c_sub = SpeedField(ScalarField2D(sub, speed.values[j0:j1 + 1, i0:i1 + 1]), margin=0.0) \
        if not speed.is_constant() else SpeedField.constant(sub, speed.c_min)

    heuristic = default_duration(square, speed.c_min)
    if data.T < 0.5 * heuristic * (1 - 1e-9):
        warnings.warn(f"T={data.T:.4g} is short for time reversal (heuristic {heuristic:.4g}); "
                      "expect amplitude loss", SimulationWarning, stacklevel=2)

    limit = cfl_timestep(sub, c_sub.c_max, safety)
    m = max(1, int(math.ceil(data.dt / limit - 1e-9)))
    counts = [data.n_arc(e) for e in range(4)]
    if m > 1 or any(k != n for k in counts):
        data = resample_boundary(data, data.dt / m, n, kernel=kernel)
    dt = data.dt

    solver = LeapfrogSolver(c_sub, dt, SolverConfig(boundary="reflecting", sponge_cells=0))
    ring = _ring_writer(n)
    vals = data.values
    n_t = data.n_t

    def put(u, k):
        for e in range(4):
            u[ring[e]] = vals[e][k]

    u_next = np.zeros(sub.shape)
    u_curr = np.zeros(sub.shape)
    put(u_next, n_t - 1)
    put(u_curr, n_t - 1)
    scratch = np.zeros(sub.shape)
    for k in range(n_t - 1, 0, -1):
        scratch = solver.step(u_next, u_curr, out=scratch)
        put(scratch, k - 1)
        u_next, u_curr, scratch = u_curr, scratch, u_next
        if k % DIVERGENCE_CHECK == 0:
            check_finite(u_curr, k * dt)
    return ScalarField2D(sub, u_curr.copy())


def average_data(data: BoundaryData, filt: FilterSpec, h: float | None = None,
                 edges=None) -> BoundaryData:
    """Apply ``psi(a tau^2 + b eta^2)`` per edge as a 2D Fourier multiplier.

    ``b = 0`` averages in time only, ``a = 0`` along the boundary only.
    ``edges`` restricts the averaging to the listed edges (default: all).
    """
    h = data.h if h is None else h
    edges = range(4) if edges is None else set(edges)
    out = []
    for e, v in enumerate(data.values):
        if v.size == 0 or e not in edges:
            out.append(v)
            continue
        tau = semiclassical_axis(v.shape[0], data.dt, h)
        eta = semiclassical_axis(v.shape[1], data.arc_spacing(e), h)
        mult = scipy.fft.ifftshift(filt.symbol(tau[:, None], eta[None, :]))
        spec = scipy.fft.fft2(v, workers=_workers())
        out.append(scipy.fft.ifft2(spec * mult, workers=_workers()).real)
    meta = dict(data.meta)
    meta["filter"] = {"a": filt.a, "b": filt.b, "psi": filt.psi, "scale": filt.scale,
                      "edges": sorted(edges)}
    return data.replace(values=out, meta=meta)


def blur_symbol(x, filt: FilterSpec, speed: SpeedField | SpeedModel,
                square: SquareBoundary) -> float:
    """``p0 = (psi(a|xi|_g^2 + b eta_+^2) + psi(a|xi|_g^2 + b eta_-^2)) / 2``."""
    model = speed if isinstance(speed, SpeedModel) else SpeedModel(speed)
    total = 0.0
    for branch in ("+", "-"):
        bc = canonical_map(x, branch, model, square)
        total += float(filt.symbol(bc.tau, bc.eta))
    return 0.5 * total


@dataclass(frozen=True)
class AntialiasResult:
    reconstruction: ScalarField2D
    naive: ScalarField2D | None
    sampled: BoundaryData


def antialias_pipeline(data: BoundaryData, spec: SamplingSpec, filt: FilterSpec,
                       speed: SpeedField, grid: Grid2D | None = None,
                       with_naive: bool = False, kernel: str = "sinc") -> AntialiasResult:
    """Average along the boundary, sample at ``spec``, interpolate back, time-reverse.

    Only edges that ``spec`` undersamples in arc length are averaged.
    """
    if filt.a != 0:
        raise DomainError("the anti-aliasing scheme averages in space only (a = 0)")
    native = [data.n_arc(e) for e in range(4)]

    def chain(d: BoundaryData) -> tuple[ScalarField2D, BoundaryData]:
        low = downsample(d, spec)
        up = resample_boundary(low, data.dt, native, kernel=kernel)
        return time_reverse(up, speed, grid, kernel=kernel), low

    edges = [e for e, s_y in enumerate(spec.edge_rates()) if s_y is not None]
    recon, low = chain(average_data(data, filt, edges=edges))
    naive = chain(data)[0] if with_naive else None
    return AntialiasResult(recon, naive, low)


# -- image metrics ---------------------------------------------------------------

def disk_mask(grid: Grid2D, center, radius: float) -> np.ndarray:
    X, Y = grid.mesh()
    return (X - center[0]) ** 2 + (Y - center[1]) ** 2 <= radius ** 2


def energy_peaks(field: ScalarField2D, smooth_cells: float = 3.0, window_cells: int = 15,
                 threshold: float = 0.02) -> tuple[np.ndarray, np.ndarray]:
    """Local maxima of the smoothed energy density ``u^2``.

    The Gaussian smoothing (``smooth_cells`` standard deviation) removes the
    oscillation of the carrier. Returns ``(points, energies)`` with energies
    relative to the largest peak, strongest first; maxima below
    ``threshold`` are dropped.
    """
    env = ndimage.gaussian_filter(np.abs(np.asarray(field.values)) ** 2, smooth_cells)
    top = float(env.max())
    if top <= 0:
        return np.zeros((0, 2)), np.zeros(0)
    mask = (env == ndimage.maximum_filter(env, window_cells)) & (env > threshold * top)
    X, Y = field.grid.mesh()
    pts = np.c_[X[mask], Y[mask]]
    e = env[mask] / top
    order = np.argsort(-e, kind="stable")
    return pts[order], e[order]


def nearest_peak(field: ScalarField2D, point, **kwargs) -> tuple[np.ndarray | None, float]:
    """Energy peak closest to ``point`` and its distance in grid cells."""
    pts, _ = energy_peaks(field, **kwargs)
    if len(pts) == 0:
        return None, math.inf
    d = np.hypot(*(pts - np.asarray(point, dtype=float)).T)
    j = int(np.argmin(d))
    return pts[j], float(d[j] / field.grid.dx)


def local_frequency(field: ScalarField2D, point, h: float) -> float:
    """Semiclassical frequency magnitude at ``point``: peak of the spectrum of
    the field under a Gaussian window of width ``sqrt(h)``."""
    X, Y = field.grid.mesh()
    w = np.exp(-((X - point[0]) ** 2 + (Y - point[1]) ** 2) / (2 * h))
    spec = np.abs(scipy.fft.fft2(np.asarray(field.values) * w, workers=_workers()))
    j, i = np.unravel_index(np.argmax(spec), spec.shape)
    ky = 2 * math.pi * h * scipy.fft.fftfreq(spec.shape[0], field.grid.dy)[j]
    kx = 2 * math.pi * h * scipy.fft.fftfreq(spec.shape[1], field.grid.dx)[i]
    return float(math.hypot(kx, ky))
