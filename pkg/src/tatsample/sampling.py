"""Semiclassical spectra, band limits, sampling rates and sinc reconstruction.

Frequencies are semiclassical: a sample spacing ``d`` and FFT index ``m``
out of ``n`` correspond to ``xi = 2 pi h m / (n d)``. Relative sampling rates
are spacings divided by ``h``; the Nyquist band of rate ``s`` is
``[-pi/s, pi/s]``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import fft as sfft
from scipy.signal.windows import tukey

from .domain import DomainError, ScalarField2D
from .wave import BoundaryData

TUKEY_RATIO = 0.1


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("TAT_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SamplingSpec:
    """Relative sampling rates. ``s_y`` may be one value, one per edge, or
    ``None`` entries meaning "keep the native rate"."""

    h: float
    s_t: float | None = None
    s_y: float | Sequence[float | None] | None = None

    def __post_init__(self):
        if self.h <= 0:
            raise DomainError("h must be positive")
        if self.s_t is not None and self.s_t <= 0:
            raise DomainError("s_t must be positive")
        for s in self.edge_rates():
            if s is not None and s <= 0:
                raise DomainError("s_y must be positive")

    def edge_rates(self) -> list[float | None]:
        if self.s_y is None or isinstance(self.s_y, (int, float)):
            return [self.s_y] * 4
        rates = list(self.s_y)
        if len(rates) != 4:
            raise DomainError("per-edge s_y needs four entries")
        return rates


@dataclass(frozen=True)
class Spectrum2D:
    """Origin-centred semiclassical spectrum; ``axes[k]`` labels array axis ``k``."""

    axes: tuple[np.ndarray, np.ndarray]
    coeffs: np.ndarray
    spacings: tuple[float, float]
    h: float
    names: tuple[str, str] = ("axis0", "axis1")

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.coeffs)

    @property
    def energy(self) -> np.ndarray:
        return np.abs(self.coeffs) ** 2

    def peak(self) -> tuple[float, float]:
        """Frequencies ``(axis0, axis1)`` of the largest magnitude."""
        k = np.unravel_index(np.argmax(self.magnitude), self.coeffs.shape)
        return float(self.axes[0][k[0]]), float(self.axes[1][k[1]])

    def bin_widths(self) -> tuple[float, float]:
        return tuple(2 * math.pi * self.h / (n * d)
                     for n, d in zip(self.coeffs.shape, self.spacings))


def semiclassical_axis(n: int, spacing: float, h: float) -> np.ndarray:
    return 2 * math.pi * h * sfft.fftshift(sfft.fftfreq(n, d=spacing))


def semiclassical_fft(values: np.ndarray, spacings: tuple[float, float], h: float,
                      window: bool = False, names=("axis0", "axis1")) -> Spectrum2D:
    """Discrete approximation of ``int exp(-i x.xi/h) f(x) dx`` on a uniform grid.

    ``spacings`` follow the array axes. With ``window=True`` a Tukey window
    (ratio 0.1) is applied along both axes first.
    """
    if h <= 0:
        raise DomainError("h must be positive")
    v = np.asarray(values)
    if v.ndim != 2:
        raise DomainError("semiclassical_fft expects a 2D array")
    if window:
        v = v * np.outer(tukey(v.shape[0], TUKEY_RATIO), tukey(v.shape[1], TUKEY_RATIO))
    coeffs = sfft.fftshift(sfft.fft2(v, workers=_workers())) * (spacings[0] * spacings[1])
    axes = (semiclassical_axis(v.shape[0], spacings[0], h),
            semiclassical_axis(v.shape[1], spacings[1], h))
    return Spectrum2D(axes, coeffs, (float(spacings[0]), float(spacings[1])), h, tuple(names))


def field_spectrum(f: ScalarField2D, h: float, window: bool = False) -> Spectrum2D:
    """Spectrum of a field; ``axes = (xi_y, xi_x)`` following ``values[j, i]``."""
    return semiclassical_fft(f.values, (f.grid.dy, f.grid.dx), h, window, ("xi_y", "xi_x"))


def edge_spectrum(data: BoundaryData, edge: int, window: bool = True) -> Spectrum2D:
    """Spectrum of one edge; ``axes = (tau, eta)``."""
    return semiclassical_fft(data.values[edge], (data.dt, data.arc_spacing(edge)),
                             data.h, window, ("tau", "eta"))


def inverse_semiclassical_fft(spec: Spectrum2D) -> np.ndarray:
    v = sfft.ifft2(sfft.ifftshift(spec.coeffs), workers=_workers())
    return v / (spec.spacings[0] * spec.spacings[1])


def box_energy_fraction(spec: Spectrum2D, B: float) -> float:
    e = spec.energy
    a0 = np.abs(spec.axes[0])[:, None]
    a1 = np.abs(spec.axes[1])[None, :]
    return float(e[(a0 <= B) & (a1 <= B)].sum() / e.sum())


def estimate_bandlimit(f: ScalarField2D | np.ndarray, h: float, energy_fraction: float = 0.999,
                       spacings: tuple[float, float] | None = None) -> float:
    """Half side of the smallest centred box holding ``energy_fraction`` of the
    spectral energy."""
    if isinstance(f, ScalarField2D):
        spec = field_spectrum(f, h)
    else:
        if spacings is None:
            raise DomainError("spacings are required for raw arrays")
        spec = semiclassical_fft(f, spacings, h)
    if not 0 < energy_fraction <= 1:
        raise DomainError("energy_fraction must lie in (0, 1]")
    e = spec.energy.ravel()
    total = e.sum()
    if total == 0:
        raise DomainError("cannot estimate the band limit of a zero field")
    r = np.maximum(np.abs(spec.axes[0])[:, None], np.abs(spec.axes[1])[None, :]).ravel()
    order = np.argsort(r, kind="stable")
    cum = np.cumsum(e[order])
    k = int(np.searchsorted(cum, energy_fraction * total * (1 - 1e-12)))
    k = min(k, len(order) - 1)
    # Every bin at the same box radius belongs to the box.
    return float(r[order][k])


def nyquist_rates(B: float, c_max: float, N_prime: float = 1.0) -> tuple[float, float]:
    """Largest relative rates ``(s_t, s_y)`` that avoid aliasing for band limit ``B``."""
    if B <= 0 or c_max <= 0:
        raise DomainError("B and c_max must be positive")
    return math.pi / (B * c_max), math.pi * N_prime / (B * c_max)


def resolution_limit_t(c_at_x: float, s_t: float) -> float:
    """Highest frequency at a point with speed ``c`` that survives time rate ``s_t``."""
    if c_at_x <= 0 or s_t <= 0:
        raise DomainError("inputs must be positive")
    return math.pi / (c_at_x * s_t)


def resolution_limit_t_global(c_max: float, s_t: float) -> float:
    return resolution_limit_t(c_max, s_t)


def resolution_limit_y(c_at_x: float, theta: float, s_y: float) -> float:
    """Frequency limit for boundary rate ``s_y`` when the ray meets the boundary at
    angle ``theta`` to its tangent; ``inf`` for perpendicular hits."""
    if c_at_x <= 0 or s_y <= 0:
        raise DomainError("inputs must be positive")
    if not 0 < theta <= math.pi / 2 + 1e-15:
        raise DomainError("theta must lie in (0, pi/2]")
    cos = math.cos(theta)
    if theta >= math.pi / 2 or cos <= 1e-15:
        return math.inf
    return math.pi / (s_y * c_at_x * cos)


def fold_frequency(xi, s: float):
    """Alias of ``xi`` in the fundamental band ``[-pi/s, pi/s)`` of rate ``s``."""
    period = 2 * math.pi / s
    return np.mod(np.asarray(xi) + period / 2, period) - period / 2


# -- decimation --------------------------------------------------------------

def _nearest_divisor(n: int, m: int) -> int:
    divisors = [d for d in range(1, n + 1) if n % d == 0]
    return min(divisors, key=lambda d: (abs(d - m), d))


def decimation_factor(requested: float, native: float) -> int:
    if requested < native * (1 - 1e-9):
        raise DomainError(f"requested spacing {requested:.6g} is finer than native {native:.6g}")
    return max(1, int(round(requested / native)))


def downsample(data: BoundaryData, spec: SamplingSpec) -> BoundaryData:
    """Pointwise decimation with no pre-filter, as a naive undersampled measurement.

    Factors are the rounded ratios of requested to native spacings; arc
    factors are snapped to a divisor of the edge's point count so samples
    stay uniform along each edge.
    """
    ft = 1 if spec.s_t is None else decimation_factor(spec.s_t * spec.h, data.dt)
    values = []
    factors = []
    for e, s_y in enumerate(spec.edge_rates()):
        n = data.n_arc(e)
        fy = 1 if s_y is None else _nearest_divisor(n, decimation_factor(s_y * spec.h,
                                                                          data.arc_spacing(e)))
        factors.append(fy)
        values.append(data.values[e][::ft, ::fy])
    meta = dict(data.meta)
    meta.update({
        "decimation_t": ft,
        "decimation_y": factors,
        "s_t": data.dt * ft / data.h,
        "s_y": [data.arc_spacing(e) * factors[e] / data.h for e in range(4)],
    })
    return BoundaryData(data.boundary, data.dt * ft, values, data.h, data.t0, meta)


# -- sinc series -------------------------------------------------------------

KERNELS = ("sinc", "raised_cosine", "gaussian")


def interpolation_kernel(z: np.ndarray, kernel: str = "sinc", s: float = 1.0) -> np.ndarray:
    """Kernel ``chi(z)`` for the series ``sum_k f_k chi(pi (x - x_k) / d)``.

    ``s`` is the oversampling margin: the signal occupies ``s`` times the
    Nyquist band. ``raised_cosine`` rolls off over the free part of the band;
    ``gaussian`` multiplies sinc by a Gaussian whose width is set by the margin.
    Both reduce to plain sinc at ``s = 1``.
    """
    if kernel not in KERNELS:
        raise DomainError(f"unknown kernel {kernel!r}")
    if not 0 < s <= 1:
        raise DomainError("oversample margin must lie in (0, 1]")
    z = np.asarray(z, dtype=float)
    base = np.sinc(z / math.pi)
    if kernel == "sinc" or s == 1:
        return base
    beta = 1.0 - s
    if kernel == "raised_cosine":
        q = 2 * beta * z / math.pi
        den = 1 - q ** 2
        near = np.abs(den) < 1e-10
        safe = np.where(near, 1.0, den)
        out = base * np.cos(beta * z) / safe
        # Removable singularity at |z| = pi / (2 beta).
        return np.where(near, base * math.pi / 4, out)
    # Aliased copies sit beta away in z-frequency; exp(-(beta r)^2 / 2) ~ 1e-9.
    r = 6.5 / beta
    return base * np.exp(-0.5 * (z / r) ** 2)


def sinc_matrix(x_eval: np.ndarray, n: int, spacing: float, x0: float = 0.0,
                kernel: str = "sinc", s: float = 1.0) -> np.ndarray:
    """Matrix mapping ``n`` samples at ``x0 + k spacing`` to values at ``x_eval``."""
    xk = x0 + spacing * np.arange(n)
    z = math.pi * (np.asarray(x_eval, dtype=float)[:, None] - xk[None, :]) / spacing
    return interpolation_kernel(z, kernel, s)


def sinc_reconstruct(samples: np.ndarray, spacing, x_eval, x0=0.0, kernel: str = "sinc",
                     s: float = 1.0) -> np.ndarray:
    """Evaluate the interpolation series of uniformly spaced samples.

    1D: ``samples[k]`` at ``x0 + k spacing``, evaluated at ``x_eval``.
    2D: pass per-axis tuples for ``spacing``, ``x_eval`` and ``x0``; the
    kernel is the tensor product (identity lattice).
    """
    a = np.asarray(samples)
    if a.ndim == 1:
        return sinc_matrix(x_eval, a.shape[0], float(spacing), float(x0), kernel, s) @ a
    if a.ndim == 2:
        sp = tuple(spacing) if np.ndim(spacing) else (spacing, spacing)
        org = tuple(x0) if np.ndim(x0) else (x0, x0)
        m0 = sinc_matrix(x_eval[0], a.shape[0], sp[0], org[0], kernel, s)
        m1 = sinc_matrix(x_eval[1], a.shape[1], sp[1], org[1], kernel, s)
        return m0 @ a @ m1.T
    raise DomainError("sinc_reconstruct handles 1D and 2D samples")


def sampled_l2_norm_sq(samples: np.ndarray, spacing) -> float:
    """``(sh)^n sum |f(shk)|^2`` for a uniform lattice with ``det W = 1``."""
    a = np.asarray(samples)
    vol = float(np.prod(np.broadcast_to(np.asarray(spacing, dtype=float), (a.ndim,))))
    return vol * float(np.sum(np.abs(a) ** 2))


def resample_boundary(data: BoundaryData, dt: float, n_arc: int | Sequence[int],
                      kernel: str = "sinc", s: float = 1.0) -> BoundaryData:
    """Sinc-interpolate boundary data onto a finer time step and arc sampling.

    The output covers the same time span ``[t0, T]``.
    """
    counts = [n_arc] * 4 if isinstance(n_arc, (int, np.integer)) else list(n_arc)
    n_t = int(round((data.T - data.t0) / dt)) + 1
    t_new = dt * np.arange(n_t)
    if n_t == data.n_t and math.isclose(dt, data.dt):
        mt = None
    else:
        mt = sinc_matrix(t_new, data.n_t, data.dt, 0.0, kernel, s)
    out = []
    for e in range(4):
        v = data.values[e]
        if mt is not None:
            v = mt @ v
        if counts[e] != data.n_arc(e):
            arc_new = data.boundary.arc(counts[e])
            my = sinc_matrix(arc_new, data.n_arc(e), data.arc_spacing(e), 0.0, kernel, s)
            v = v @ my.T
        out.append(v)
    meta = dict(data.meta)
    meta["resampled_from"] = {"dt": data.dt, "n_arc": [data.n_arc(e) for e in range(4)]}
    return BoundaryData(data.boundary, dt, out, data.h, data.t0, meta)


# -- characteristic cone -------------------------------------------------------

def cone_fraction(values: np.ndarray, dt: float, arc_spacing: float, h: float,
                  delta: float = 0.1, floor: float = 0.0) -> float:
    """Fraction of the (Tukey-windowed) spectral energy of one edge inside
    ``|eta| <= (1 + delta) |tau|``.

    Edges whose total spectral energy does not exceed ``floor`` carry no
    measurable signal and count as vacuously inside the cone.
    """
    spec = semiclassical_fft(values, (dt, arc_spacing), h, window=True)
    e = spec.energy
    total = float(e.sum())
    if total <= floor or total == 0:
        return 1.0
    tau = np.abs(spec.axes[0])[:, None]
    eta = np.abs(spec.axes[1])[None, :]
    inside = eta <= (1 + delta) * tau
    return float(e[np.broadcast_to(inside, e.shape)].sum() / total)


def edge_cone_fractions(data: BoundaryData, delta: float = 0.1,
                        relative_floor: float = 1e-10) -> list[float]:
    """:func:`cone_fraction` for all edges; edges carrying less than
    ``relative_floor`` of the strongest edge's energy are treated as empty."""
    energies = [float(np.sum(v ** 2)) * data.dt * data.arc_spacing(e)
                for e, v in enumerate(data.values)]
    peak = max(energies)
    out = []
    for e, v in enumerate(data.values):
        if peak == 0 or energies[e] <= relative_floor * peak:
            out.append(1.0)
        else:
            out.append(cone_fraction(v, data.dt, data.arc_spacing(e), data.h, delta))
    return out
