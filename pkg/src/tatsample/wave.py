"""Leapfrog finite differences for ``u_tt = c^2 Laplace(u)`` and boundary recording.

The forward problem is posed on a grid larger than the measurement square
and terminated by an exponential damping sponge, so waves leave the square
without coming back. Boundary data are read off the square every step.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .domain import DomainError, Grid2D, ScalarField2D, SpeedField, SquareBoundary

BOUNDARY_MODES = ("absorbing", "reflecting", "periodic")


class CFLError(DomainError):
    """Time step violates the leapfrog stability bound."""


class SimulationWarning(UserWarning):
    pass


DIVERGENCE_CHECK = 64


def check_finite(u: np.ndarray, t: float) -> None:
    """Raise ``FloatingPointError`` once the solution has left the floats."""
    if not np.isfinite(u).all():
        raise FloatingPointError(f"wave solution diverged by t = {t:.4g}")


def cfl_timestep(grid: Grid2D, c_max: float, safety: float = 0.9) -> float:
    """Largest stable leapfrog step ``safety * dx / (sqrt(2) c_max)``."""
    if not 0 < safety <= 1:
        raise DomainError("safety must lie in (0, 1]")
    if c_max <= 0:
        raise DomainError("c_max must be positive")
    if not math.isclose(grid.dx, grid.dy, rel_tol=1e-9):
        raise DomainError(f"leapfrog solver needs square cells (dx={grid.dx}, dy={grid.dy})")
    return safety * grid.dx / (math.sqrt(2.0) * c_max)


@dataclass(frozen=True)
class SolverConfig:
    safety: float = 0.9
    boundary: str = "absorbing"
    sponge_cells: int = 20
    # Target amplitude reflection of the damping ramp at normal incidence.
    sponge_reflection: float = 1e-6

    def __post_init__(self):
        if self.boundary not in BOUNDARY_MODES:
            raise DomainError(f"unknown boundary mode {self.boundary!r}")
        if not 0 < self.safety <= 1:
            raise DomainError("safety must lie in (0, 1]")


def sponge_profile(grid: Grid2D, cells: int, reflection: float, dt: float) -> np.ndarray:
    """Damping rate ``sigma`` growing quadratically over the outer ``cells`` nodes."""
    sigma = np.zeros(grid.shape)
    if cells <= 0:
        return sigma
    width = cells * grid.dx
    sigma_max = 3.0 * math.log(1.0 / reflection) / (2.0 * width)
    # Keep the explicit damping factor well inside its stable range.
    sigma_max = min(sigma_max, 1.0 / dt)
    ii = np.arange(grid.nx)
    jj = np.arange(grid.ny)
    dxi = np.maximum(cells - np.minimum(ii, grid.nx - 1 - ii), 0) / cells
    dyj = np.maximum(cells - np.minimum(jj, grid.ny - 1 - jj), 0) / cells
    depth = np.maximum(dxi[None, :], dyj[:, None])
    sigma[:] = sigma_max * depth ** 2
    return sigma


class LeapfrogSolver:
    """Second-order leapfrog with the 5-point Laplacian.

    ``absorbing`` and ``reflecting`` hold the outermost ring at zero
    (the absorbing mode adds the sponge in front of it); ``periodic`` wraps.
    """

    def __init__(self, speed: SpeedField, dt: float, config: SolverConfig = SolverConfig()):
        grid = speed.grid
        limit = cfl_timestep(grid, speed.c_max, 1.0)
        if dt <= 0 or dt > limit * (1 + 1e-12):
            raise CFLError(f"dt={dt:.6g} exceeds the CFL limit {limit:.6g}")
        self.grid = grid
        self.speed = speed
        self.dt = dt
        self.config = config
        self.coef = (speed.values * dt / grid.dx) ** 2
        self._damped = False
        if config.boundary == "absorbing" and config.sponge_cells > 0:
            sigma = sponge_profile(grid, config.sponge_cells, config.sponge_reflection, dt)
            self.sigma = sigma
            self._a = 1 - sigma * dt / 2
            self._b = 1 / (1 + sigma * dt / 2)
            self._damped = True
        else:
            self.sigma = np.zeros(grid.shape)

    def laplacian_sum(self, u: np.ndarray) -> np.ndarray:
        """``dx^2`` times the 5-point Laplacian; zero on the outer ring unless periodic."""
        if self.config.boundary == "periodic":
            return (np.roll(u, 1, 0) + np.roll(u, -1, 0) + np.roll(u, 1, 1)
                    + np.roll(u, -1, 1) - 4 * u)
        lap = np.zeros_like(u)
        lap[1:-1, 1:-1] = (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2]
                           - 4 * u[1:-1, 1:-1])
        return lap

    def step(self, u_prev: np.ndarray, u_curr: np.ndarray,
             out: np.ndarray | None = None) -> np.ndarray:
        if out is None:
            out = np.zeros_like(u_curr)
        if self.config.boundary == "periodic":
            out[:] = 2 * u_curr - u_prev + self.coef * self.laplacian_sum(u_curr)
            return out
        s = (slice(1, -1), slice(1, -1))
        c = u_curr[s]
        lap = u_curr[2:, 1:-1] + u_curr[:-2, 1:-1] + u_curr[1:-1, 2:] + u_curr[1:-1, :-2] - 4 * c
        if self._damped:
            out[s] = (2 * c - self._a[s] * u_prev[s] + self.coef[s] * lap) * self._b[s]
        else:
            out[s] = 2 * c - u_prev[s] + self.coef[s] * lap
        out[0, :] = 0
        out[-1, :] = 0
        out[:, 0] = 0
        out[:, -1] = 0
        return out

    def initial_previous(self, f: np.ndarray) -> np.ndarray:
        """``u(-dt)`` for zero initial velocity, by a second-order Taylor start."""
        return f + 0.5 * self.coef * self.laplacian_sum(f)


@dataclass(frozen=True)
class WaveState:
    u_prev: ScalarField2D
    u_curr: ScalarField2D
    t: float
    dt: float
    step_index: int = 0

    def __post_init__(self):
        if self.u_prev.grid != self.u_curr.grid:
            raise DomainError("wave state fields live on different grids")

    @property
    def grid(self) -> Grid2D:
        return self.u_curr.grid


def initial_state(f: ScalarField2D, speed: SpeedField, dt: float,
                  config: SolverConfig = SolverConfig()) -> WaveState:
    """State at ``t = 0`` for initial data ``(f, 0)``."""
    if f.kind != "real":
        raise DomainError("initial pressure must be real")
    solver = LeapfrogSolver(speed, dt, config)
    prev = solver.initial_previous(np.asarray(f.values))
    if config.boundary != "periodic":
        prev[0, :] = prev[-1, :] = 0
        prev[:, 0] = prev[:, -1] = 0
    return WaveState(ScalarField2D(f.grid, prev), f, 0.0, dt, 0)


def step_leapfrog(state: WaveState, speed: SpeedField,
                  config: SolverConfig = SolverConfig()) -> WaveState:
    """Advance one step: ``u_next = 2u - u_prev + dt^2 c^2 Laplace(u)`` (plus sponge)."""
    solver = LeapfrogSolver(speed, state.dt, config)
    nxt = solver.step(np.asarray(state.u_prev.values), np.asarray(state.u_curr.values))
    return WaveState(state.u_curr, ScalarField2D(state.grid, nxt),
                     state.t + state.dt, state.dt, state.step_index + 1)


def energy_terms(u_prev: np.ndarray, u_curr: np.ndarray, speed: np.ndarray,
                 dt: float, dx: float) -> float:
    """Discrete energy between two time levels.

    Kinetic part uses the time difference, the potential part the product of
    forward-difference gradients at the two levels, which is the quantity the
    leapfrog scheme conserves exactly on a closed domain.
    """
    ut = (u_curr - u_prev) / dt
    kinetic = np.sum(ut ** 2 / speed ** 2)
    gx_c = np.diff(u_curr, axis=1) / dx
    gx_p = np.diff(u_prev, axis=1) / dx
    gy_c = np.diff(u_curr, axis=0) / dx
    gy_p = np.diff(u_prev, axis=0) / dx
    potential = np.sum(gx_c * gx_p) + np.sum(gy_c * gy_p)
    return float((kinetic + potential) * dx * dx)


def discrete_energy(state: WaveState, speed: SpeedField) -> float:
    return energy_terms(np.asarray(state.u_prev.values), np.asarray(state.u_curr.values),
                        np.asarray(speed.values), state.dt, state.grid.dx)


@dataclass(frozen=True)
class BoundaryData:
    """Time series on the four edges of the measurement square.

    ``values[e]`` has shape ``(n_t, n_e)``: time-major, arc index minor.
    Samples on edge ``e`` sit at arc coordinates ``k * side / n_e``.
    """

    boundary: SquareBoundary
    dt: float
    values: tuple
    h: float
    t0: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        vals = tuple(np.asarray(v, dtype=float) for v in self.values)
        if len(vals) != 4:
            raise DomainError("boundary data needs exactly four edges")
        n_t = {v.shape[0] for v in vals}
        if len(n_t) != 1 or any(v.ndim != 2 for v in vals):
            raise DomainError("all edges must share the number of time samples")
        if self.dt <= 0 or self.h <= 0:
            raise DomainError("dt and h must be positive")
        for v in vals:
            v.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n_t(self) -> int:
        return self.values[0].shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_t)

    @property
    def T(self) -> float:
        return self.t0 + self.dt * (self.n_t - 1)

    def n_arc(self, edge: int) -> int:
        return self.values[edge].shape[1]

    def arc_spacing(self, edge: int) -> float:
        return self.boundary.side / self.n_arc(edge)

    @property
    def s_t(self) -> float:
        return self.dt / self.h

    def s_y(self, edge: int) -> float:
        return self.arc_spacing(edge) / self.h

    def is_uniform(self) -> bool:
        return len({self.n_arc(e) for e in range(4)}) == 1

    def replace(self, values=None, dt=None, h=None, meta=None) -> "BoundaryData":
        return BoundaryData(self.boundary, self.dt if dt is None else dt,
                            self.values if values is None else values,
                            self.h if h is None else h, self.t0,
                            dict(self.meta) if meta is None else meta)

    def scaled(self, alpha: float) -> "BoundaryData":
        return self.replace(values=[alpha * v for v in self.values])

    def __add__(self, other: "BoundaryData") -> "BoundaryData":
        return self.replace(values=[a + b for a, b in zip(self.values, other.values)])

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(v))) if v.size else 0.0 for v in self.values)


def _bilinear_sampler(grid: Grid2D, pts: np.ndarray):
    fx = (pts[:, 0] - grid.x_min) / grid.dx
    fy = (pts[:, 1] - grid.y_min) / grid.dy
    # Snap points within roundoff of a node onto it.
    fx = np.where(np.abs(fx - np.round(fx)) < 1e-9, np.round(fx), fx)
    fy = np.where(np.abs(fy - np.round(fy)) < 1e-9, np.round(fy), fy)
    i0 = np.clip(np.floor(fx).astype(int), 0, grid.nx - 2)
    j0 = np.clip(np.floor(fy).astype(int), 0, grid.ny - 2)
    wx = fx - i0
    wy = fy - j0

    def sample(u: np.ndarray) -> np.ndarray:
        return ((1 - wy) * ((1 - wx) * u[j0, i0] + wx * u[j0, i0 + 1])
                + wy * ((1 - wx) * u[j0 + 1, i0] + wx * u[j0 + 1, i0 + 1]))

    return sample


def default_duration(boundary: SquareBoundary, c_min: float) -> float:
    """Twice the time to cross the square's diagonal at the slowest speed (heuristic)."""
    return 2.0 * math.sqrt(2.0) * boundary.side / c_min


def _support_distance(f: np.ndarray, grid: Grid2D, boundary: SquareBoundary) -> float:
    X, Y = grid.mesh()
    mask = f != 0
    if not mask.any():
        return math.inf
    d = np.minimum.reduce([X[mask] - boundary.x_min, boundary.x_max - X[mask],
                           Y[mask] - boundary.y_min, boundary.y_max - Y[mask]])
    return float(d.min())


def simulate_forward(f: ScalarField2D, speed: SpeedField, T: float | None,
                     boundary: SquareBoundary, h: float, safety: float = 0.9,
                     config: SolverConfig | None = None,
                     reflection_warn: float = 1e-2) -> BoundaryData:
    """Record ``u(t, y)`` on the square boundary for ``0 <= t <= T``.

    ``dt`` comes from :func:`cfl_timestep`; boundary points are sampled
    bilinearly every step, so on grid-aligned squares the data are exact
    node values and the boundary rate equals the grid rate.
    """
    grid = speed.grid
    if f.grid != grid:
        raise DomainError("phantom and speed must share a grid")
    if f.kind != "real":
        raise DomainError("initial pressure must be real")
    if config is None:
        config = SolverConfig(safety=safety)
    if T is None:
        T = default_duration(boundary, speed.c_min)
    if T <= 0:
        raise DomainError("T must be positive")
    if not (grid.x_min < boundary.x_min and boundary.x_max < grid.x_max
            and grid.y_min < boundary.y_min and boundary.y_max < grid.y_max):
        raise DomainError("measurement square must lie strictly inside the grid")
    if config.boundary == "absorbing":
        pad = (boundary.x_min - grid.x_min) / grid.dx
        if pad < config.sponge_cells + 1:
            raise DomainError("sponge layer overlaps the measurement square")

    dt = cfl_timestep(grid, speed.c_max, config.safety)
    solver = LeapfrogSolver(speed, dt, config)
    n_steps = max(1, int(math.ceil(T / dt - 1e-9)))

    f0 = np.array(f.values, dtype=float)
    dist = _support_distance(f0, grid, boundary)
    if math.isfinite(dist) and T < dist / speed.c_max:
        warnings.warn(f"T={T:.4g} ends before any wave can reach the boundary",
                      SimulationWarning, stacklevel=2)

    samplers = [_bilinear_sampler(grid, boundary.points(e)) for e in range(4)]
    n = boundary.points_per_edge
    out = [np.empty((n_steps + 1, n)) for _ in range(4)]

    u_prev = solver.initial_previous(f0)
    u_curr = f0.copy()
    u_curr[0, :] = u_curr[-1, :] = 0
    u_curr[:, 0] = u_curr[:, -1] = 0
    c = np.asarray(speed.values)
    e0 = energy_terms(u_prev, u_curr, c, dt, grid.dx)
    scratch = np.zeros_like(u_curr)
    for k in range(n_steps + 1):
        for e in range(4):
            out[e][k] = samplers[e](u_curr)
        if k == n_steps:
            break
        scratch = solver.step(u_prev, u_curr, out=scratch)
        u_prev, u_curr, scratch = u_curr, scratch, u_prev
        if k % DIVERGENCE_CHECK == 0:
            check_finite(u_curr, k * dt)

    meta = {"dt": dt, "n_steps": n_steps, "T": n_steps * dt, "safety": config.safety}
    if e0 > 0 and config.boundary == "absorbing":
        residual = energy_terms(u_prev, u_curr, c, dt, grid.dx) / e0
        meta["residual_energy_fraction"] = residual
        if residual > reflection_warn:
            warnings.warn(f"{residual:.2%} of the initial energy is still on the grid at T; "
                          "T may be too short or the sponge is reflecting",
                          SimulationWarning, stacklevel=2)
    return BoundaryData(boundary, dt, out, h, 0.0, meta)
