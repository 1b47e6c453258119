"""Geodesics of ``c^-2 dx^2``, exit data on the square, and artifact maps.

Rays are integrated as Hamiltonian flow of ``H(x, p) = c(x) |p|`` with ``p``
normalized to ``H = 1``, so the flow parameter is travel time. A covector
``xi`` at ``x`` has metric norm ``|xi|_g = c(x) |xi|``.

Boundary covectors ``(tau, eta)`` follow the phase of the recorded data:
``tau = -|xi|_g`` on the ``+`` branch and ``+|xi|_g`` on the ``-`` branch,
and ``eta`` is the tangential part of the covector carried by the wave, taken
along the counterclockwise arc direction of the exit edge. The outgoing ray's
tangential velocity is therefore ``-sign(tau) * eta``; this rule is what the
inverse map uses for every shifted covector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .domain import CovectorPoint, DomainError, SpeedField, SquareBoundary

BRANCHES = ("+", "-")


class RayTraceError(RuntimeError):
    """Ray did not leave the square within the watchdog time."""


class SpeedModel:
    """Speed and its gradient at arbitrary points.

    Variable speeds use the interpolating cubic B-spline through the grid
    values (C^2, with exact derivatives of the interpolant); constant speeds
    are exact.
    """

    def __init__(self, speed: SpeedField):
        self.speed = speed
        grid = speed.grid
        self.constant = speed.is_constant()
        self.c_min = speed.c_min
        self.c_max = speed.c_max
        self.dx = grid.dx
        self._origin = np.array([grid.x_min, grid.y_min])
        self._h = np.array([grid.dx, grid.dy])
        if not self.constant:
            self._coef = ndimage.spline_filter(speed.values, order=3, mode="mirror")
            gy, gx = np.gradient(speed.values, grid.dy, grid.dx)
            self.grad_max = float(np.max(np.hypot(gx, gy)))
        else:
            self.grad_max = 0.0

    def __call__(self, x: np.ndarray):
        """``(c, dc/dx, dc/dy)`` at points ``x`` of shape ``(N, 2)``."""
        n = x.shape[0]
        if self.constant:
            return np.full(n, self.c_min), np.zeros(n), np.zeros(n)
        coef = self._coef
        g = (x - self._origin) / self._h
        i0 = np.floor(g).astype(int)
        hi = np.array([coef.shape[1] - 3, coef.shape[0] - 3])
        i0 = np.clip(i0, 1, hi)
        u = g - i0
        w, dw = _bspline_weights(u[:, 0])
        v, dv = _bspline_weights(u[:, 1])
        rows = (i0[:, 1, None] + np.arange(-1, 3))[:, :, None]
        cols = (i0[:, 0, None] + np.arange(-1, 3))[:, None, :]
        block = coef[rows, cols]
        c = np.einsum("ni,nij,nj->n", v, block, w)
        cx = np.einsum("ni,nij,nj->n", v, block, dw) / self._h[0]
        cy = np.einsum("ni,nij,nj->n", dv, block, w) / self._h[1]
        return c, cx, cy

    def value(self, p) -> float:
        return float(self(np.asarray(p, dtype=float).reshape(1, 2))[0][0])

    def default_step(self) -> float:
        if self.constant:
            return self.dx
        # Quarter cells: the spline's third derivative jumps at every knot, and a
        # full-cell step leaves Hamiltonian drift near 2e-6 on sharp bumps.
        return min(0.25 * self.dx, 0.1 * self.c_min / self.grad_max)


def _bspline_weights(u: np.ndarray):
    """Cubic B-spline weights and their derivatives for fractional offsets ``u``."""
    u2, u3 = u * u, u * u * u
    om = 1 - u
    w = np.stack([om ** 3, 3 * u3 - 6 * u2 + 4, -3 * u3 + 3 * u2 + 3 * u + 1, u3], axis=1) / 6
    dw = np.stack([-om ** 2, 3 * u2 - 4 * u, -3 * u2 + 2 * u + 1, u2], axis=1) / 2
    return w, dw


def _rhs(model: SpeedModel, x: np.ndarray, p: np.ndarray):
    c, cx, cy = model(x)
    norm = np.hypot(p[:, 0], p[:, 1])
    xdot = (c / norm)[:, None] * p
    pdot = -norm[:, None] * np.stack([cx, cy], axis=1)
    return xdot, pdot


def _rk4(model: SpeedModel, x: np.ndarray, p: np.ndarray, dt):
    dt = np.asarray(dt, dtype=float).reshape(-1, 1) if np.ndim(dt) else dt
    k1x, k1p = _rhs(model, x, p)
    k2x, k2p = _rhs(model, x + 0.5 * dt * k1x, p + 0.5 * dt * k1p)
    k3x, k3p = _rhs(model, x + 0.5 * dt * k2x, p + 0.5 * dt * k2p)
    k4x, k4p = _rhs(model, x + dt * k3x, p + dt * k3p)
    return (x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x),
            p + dt / 6 * (k1p + 2 * k2p + 2 * k3p + k4p))


def _outside(square: SquareBoundary, x: np.ndarray) -> np.ndarray:
    """Signed excess beyond the square in the max norm (> 0 outside)."""
    c = square.center
    half = square.side / 2
    return np.max(np.abs(x - c[None, :]), axis=1) - half


@dataclass(frozen=True)
class RayPath:
    times: np.ndarray
    points: np.ndarray
    covectors: np.ndarray
    exit_time: float
    exit_point: np.ndarray
    edge: int
    arc: float
    exit_velocity: np.ndarray
    exit_covector: np.ndarray
    tangential_component: float
    normal_component: float

    def hamiltonian(self, model: SpeedModel) -> np.ndarray:
        c, _, _ = model(self.points)
        return c * np.hypot(self.covectors[:, 0], self.covectors[:, 1])


def integrate_rays(model: SpeedModel, square: SquareBoundary, x0: np.ndarray, p0: np.ndarray,
                   step: float | None = None, tol: float = 1e-9,
                   max_time: float | None = None, record: bool = False):
    """Integrate a batch of rays until each leaves the square.

    ``p0`` must satisfy ``c(x0) |p0| = 1``. Returns exit times, exit points,
    exit covectors and, with ``record``, per-ray lists of samples.
    """
    x = np.array(x0, dtype=float).reshape(-1, 2)
    p = np.array(p0, dtype=float).reshape(-1, 2)
    n = x.shape[0]
    if np.any(_outside(square, x) >= 0):
        raise DomainError("ray start must lie strictly inside the square")
    dt = model.default_step() if step is None else float(step)
    if model.constant and step is None:
        # Straight rays: RK4 is exact, so one step crosses the whole square.
        dt = 1.5 * square.side / model.c_min
    if max_time is None:
        max_time = 20 * math.sqrt(2) * square.side / model.c_min
    t = np.zeros(n)
    active = np.ones(n, dtype=bool)
    exit_t = np.full(n, np.nan)
    exit_x = np.full((n, 2), np.nan)
    exit_p = np.full((n, 2), np.nan)
    paths = [[(0.0, x[i].copy(), p[i].copy())] for i in range(n)] if record else None

    while active.any():
        idx = np.flatnonzero(active)
        if np.any(t[idx] > max_time):
            raise RayTraceError("ray did not exit the square (trapping or bad speed field)")
        xa, pa = x[idx], p[idx]
        xn, pn = _rk4(model, xa, pa, dt)
        out = _outside(square, xn) >= 0
        stay = idx[~out]
        x[stay], p[stay] = xn[~out], pn[~out]
        t[stay] += dt
        if record:
            for i in stay:
                paths[i].append((t[i], x[i].copy(), p[i].copy()))
        if out.any():
            cross = idx[out]
            xs, ps = x[cross], p[cross]
            lo = np.zeros(len(cross))
            hi = np.full(len(cross), dt)
            # Bisection on the step length until the bracket is below tol in time,
            # which bounds the position error by tol * c_max.
            while np.max(hi - lo) > tol / max(model.c_max, 1.0) * 0.5:
                mid = 0.5 * (lo + hi)
                xm, _ = _rk4(model, xs, ps, mid)
                o = _outside(square, xm) >= 0
                hi = np.where(o, mid, hi)
                lo = np.where(o, lo, mid)
            tau = 0.5 * (lo + hi)
            xe, pe = _rk4(model, xs, ps, tau)
            exit_t[cross] = t[cross] + tau
            exit_x[cross] = xe
            exit_p[cross] = pe
            active[cross] = False
            if record:
                for j, i in enumerate(cross):
                    paths[i].append((exit_t[i], xe[j].copy(), pe[j].copy()))
    return exit_t, exit_x, exit_p, paths


def _snap_to_boundary(square: SquareBoundary, xe: np.ndarray) -> tuple[int, float, np.ndarray]:
    c = square.center
    half = square.side / 2
    d = xe - c
    if abs(d[0]) >= abs(d[1]):
        edge = 1 if d[0] > 0 else 3
        pt = np.array([c[0] + math.copysign(half, d[0]), xe[1]])
    else:
        edge = 2 if d[1] > 0 else 0
        pt = np.array([xe[0], c[1] + math.copysign(half, d[1])])
    arc = float(np.dot(pt - square.corner(edge), square.tangent(edge)))
    return edge, arc, pt


def _unit_covector(model: SpeedModel, x, direction) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    nrm = float(np.hypot(*d))
    if nrm == 0:
        raise DomainError("covector must be nonzero")
    return d / (nrm * model.value(x))


def trace_ray(start: CovectorPoint, branch: str, speed: SpeedField | SpeedModel,
              square: SquareBoundary, tol: float = 1e-9, step: float | None = None,
              record: bool = True) -> RayPath:
    """Geodesic from ``start.x`` in direction ``+xi`` or ``-xi`` up to its exit."""
    if branch not in BRANCHES:
        raise DomainError(f"branch must be '+' or '-', got {branch!r}")
    model = speed if isinstance(speed, SpeedModel) else SpeedModel(speed)
    if start.norm == 0:
        raise DomainError("covector must be nonzero")
    if not square.contains(start.x):
        raise DomainError("ray start lies outside the square")
    sign = 1.0 if branch == "+" else -1.0
    p0 = _unit_covector(model, start.x, sign * start.xi)
    et, ex, ep, paths = integrate_rays(model, square, start.x[None, :], p0[None, :],
                                       step=step, tol=tol, record=record)
    edge, arc, pt = _snap_to_boundary(square, ex[0])
    c_exit = model.value(pt)
    pe = ep[0]
    vel = c_exit * pe / np.hypot(*pe)
    if record:
        times = np.array([s[0] for s in paths[0]])
        pts = np.array([s[1] for s in paths[0]])
        covs = np.array([s[2] for s in paths[0]])
    else:
        times = np.array([0.0, et[0]])
        pts = np.array([start.x, ex[0]])
        covs = np.array([p0, pe])
    return RayPath(times, pts, covs, float(et[0]), pt, edge, arc, vel, pe,
                   float(vel @ square.tangent(edge)), float(vel @ square.normal(edge)))


@dataclass(frozen=True)
class BoundaryCovector:
    """Image of a phase-space point under one branch of the canonical relation."""

    s: float
    edge: int
    arc: float
    point: np.ndarray
    tau: float
    eta: float
    c_exit: float = 1.0
    path: RayPath | None = field(default=None, compare=False, repr=False)


def canonical_map(start: CovectorPoint, branch: str, speed: SpeedField | SpeedModel,
                  square: SquareBoundary, tol: float = 1e-9) -> BoundaryCovector:
    """``(x, xi) -> (s, y, tau, eta)`` for the ``+`` or ``-`` branch."""
    model = speed if isinstance(speed, SpeedModel) else SpeedModel(speed)
    path = trace_ray(start, branch, model, square, tol=tol)
    norm_g = model.value(start.x) * start.norm
    # p is normalized to H = 1, so norm_g * p is the transported covector.
    p_t = norm_g * float(path.exit_covector @ square.tangent(path.edge))
    if branch == "+":
        tau, eta = -norm_g, p_t
    else:
        tau, eta = norm_g, -p_t
    return BoundaryCovector(path.exit_time, path.edge, path.arc, path.exit_point, tau, eta,
                            model.value(path.exit_point), path)


def inverse_canonical_map(bc: BoundaryCovector, speed: SpeedField | SpeedModel,
                          square: SquareBoundary, tol: float = 1e-9,
                          step: float | None = None) -> CovectorPoint | None:
    """Phase-space point whose ray reaches ``bc``; ``None`` when no real ray does.

    The branch is read off the sign of ``tau``. The back-traced ray must stay
    in the square for the whole time ``s``.
    """
    model = speed if isinstance(speed, SpeedModel) else SpeedModel(speed)
    if bc.tau == 0:
        return None
    y = square.corner(bc.edge) + bc.arc * square.tangent(bc.edge)
    c_y = model.value(y)
    mag = abs(bc.tau) / c_y
    p_t = -math.copysign(1.0, bc.tau) * bc.eta
    rad = mag * mag - p_t * p_t
    if rad < -1e-12 * mag * mag:
        return None
    p_n = math.sqrt(max(rad, 0.0))
    if p_n <= 1e-12 * mag:
        # Grazing rays never re-enter.
        return None
    P = p_t * square.tangent(bc.edge) + p_n * square.normal(bc.edge)
    q = -P / abs(bc.tau)
    x, qq = _flow_for_time(model, square, y, q, bc.s, step=step)
    if x is None:
        return None
    return CovectorPoint(x, bc.tau * qq)


def _flow_for_time(model: SpeedModel, square: SquareBoundary, y, q, s: float,
                   step: float | None = None):
    """Flow ``(y, q)`` for time ``s``; ``(None, None)`` if the ray leaves the square.

    The start point sits on the boundary, so the exit test is only applied
    after the ray has moved inward.
    """
    dt = model.default_step() if step is None else float(step)
    # The square is convex, so a straight ray stays inside if its end does.
    n = 1 if model.constant and step is None else max(1, int(math.ceil(s / dt)))
    h = s / n
    x = np.asarray(y, dtype=float).reshape(1, 2)
    p = np.asarray(q, dtype=float).reshape(1, 2)
    slack = 1e-9
    for k in range(n):
        x, p = _rk4(model, x, p, h)
        if _outside(square, x)[0] > slack:
            return None, None
    return x[0], p[0]


# -- artifact maps ---------------------------------------------------------------

@dataclass(frozen=True)
class ArtifactPrediction:
    source: CovectorPoint
    k: int
    branch: str
    variable: str  # "t" or "y<edge>"
    status: str  # "valid", "invalid" or "no-artifact"
    image: CovectorPoint | None = None
    shifted: float | None = None
    reason: str = ""

    @property
    def valid(self) -> bool:
        return self.status == "valid"

    def to_dict(self) -> dict:
        return {
            "source": self.source.as_list(),
            "k": self.k,
            "branch": self.branch,
            "variable": self.variable,
            "status": self.status,
            "image": None if self.image is None else self.image.as_list(),
            "shifted": self.shifted,
            "reason": self.reason,
        }


def fold_index(freq: float, s: float) -> int:
    """The unique ``k`` with ``freq + 2 pi k / s`` in ``[-pi/s, pi/s)``."""
    return -int(math.floor((freq * s + math.pi) / (2 * math.pi)))


def valid_shifts(freq: float, s: float, k_max: int) -> list[int]:
    """Nonzero shifts ``k`` (``|k| <= k_max``) landing ``freq`` in the Nyquist band."""
    k = fold_index(freq, s)
    return [k] if k != 0 and abs(k) <= k_max else []


def _in_band(value: float, s: float) -> bool:
    half = math.pi / s
    return -half * (1 + 1e-12) <= value < half * (1 - 1e-12) or abs(value + half) <= 1e-12 * half


def artifact_map_t(start: CovectorPoint, branch: str, k: int, s_t: float,
                   speed: SpeedField | SpeedModel, square: SquareBoundary,
                   tol: float = 1e-9, image: BoundaryCovector | None = None) -> ArtifactPrediction:
    """Image of ``(x, xi)`` under ``C^-1 o S_k o C`` with ``S_k: tau -> tau + 2 pi k / s_t``."""
    if s_t <= 0:
        raise DomainError("s_t must be positive")
    model = speed if isinstance(speed, SpeedModel) else SpeedModel(speed)
    bc = image or canonical_map(start, branch, model, square, tol)
    tau2 = bc.tau + 2 * math.pi * k / s_t
    pred = dict(source=start, k=k, branch=branch, variable="t", shifted=tau2)
    if k != 0 and not _in_band(tau2, s_t):
        return ArtifactPrediction(status="invalid", reason="shift leaves the Nyquist band", **pred)
    if k != 0 and tau2 == 0:
        return ArtifactPrediction(status="invalid", reason="zero frequency", **pred)
    if abs(bc.eta) * bc.c_exit > abs(tau2) * (1 + 1e-12):
        return ArtifactPrediction(status="invalid", reason="outside the characteristic cone", **pred)
    img = inverse_canonical_map(BoundaryCovector(bc.s, bc.edge, bc.arc, bc.point, tau2, bc.eta,
                                                 bc.c_exit), model, square, tol)
    if img is None:
        return ArtifactPrediction(status="invalid", reason="no ray back into the square", **pred)
    return ArtifactPrediction(status="valid", image=img, **pred)


def artifact_map_y(start: CovectorPoint, branch: str, k: int, edge: int, s_y: float,
                   speed: SpeedField | SpeedModel, square: SquareBoundary,
                   tol: float = 1e-9, image: BoundaryCovector | None = None) -> ArtifactPrediction:
    """Image under ``C^-1 o S_k o C`` with ``S_k: eta -> eta + 2 pi k / s_y`` on ``edge``."""
    if s_y <= 0:
        raise DomainError("s_y must be positive")
    model = speed if isinstance(speed, SpeedModel) else SpeedModel(speed)
    bc = image or canonical_map(start, branch, model, square, tol)
    eta2 = bc.eta + 2 * math.pi * k / s_y
    pred = dict(source=start, k=k, branch=branch, variable=f"y{edge}", shifted=eta2)
    if bc.edge != edge:
        return ArtifactPrediction(status="no-artifact", reason="ray exits through another edge",
                                  **pred)
    if k != 0 and not _in_band(eta2, s_y):
        return ArtifactPrediction(status="invalid", reason="shift leaves the Nyquist band", **pred)
    if abs(eta2) * bc.c_exit > abs(bc.tau) * (1 + 1e-12):
        return ArtifactPrediction(status="invalid", reason="outside the characteristic cone", **pred)
    img = inverse_canonical_map(BoundaryCovector(bc.s, bc.edge, bc.arc, bc.point, bc.tau, eta2,
                                                 bc.c_exit), model, square, tol)
    if img is None:
        return ArtifactPrediction(status="invalid", reason="no ray back into the square", **pred)
    return ArtifactPrediction(status="valid", image=img, **pred)


def predict_all_artifacts(source: CovectorPoint, spec, speed: SpeedField | SpeedModel,
                          square: SquareBoundary, k_max: int = 2,
                          tol: float = 1e-9) -> list[ArtifactPrediction]:
    """All valid artifact images for both branches, time and per-edge space shifts.

    ``spec`` is a :class:`~tatsample.sampling.SamplingSpec`; ``None`` rates
    are treated as alias-free.
    """
    if k_max < 1:
        raise DomainError("k_max must be >= 1")
    model = speed if isinstance(speed, SpeedModel) else SpeedModel(speed)
    out: list[ArtifactPrediction] = []
    for branch in BRANCHES:
        bc = canonical_map(source, branch, model, square, tol)
        if spec.s_t is not None:
            for k in range(-k_max, k_max + 1):
                if k == 0:
                    continue
                p = artifact_map_t(source, branch, k, spec.s_t, model, square, tol, image=bc)
                if p.valid:
                    out.append(p)
        for edge, s_y in enumerate(spec.edge_rates()):
            if s_y is None or edge != bc.edge:
                continue
            for k in range(-k_max, k_max + 1):
                if k == 0:
                    continue
                p = artifact_map_y(source, branch, k, edge, s_y, model, square, tol, image=bc)
                if p.valid:
                    out.append(p)
    unique: list[ArtifactPrediction] = []
    for p in out:
        if not any(p.image.distance(q.image) <= 1e-6
                   and np.allclose(p.image.xi, q.image.xi, atol=1e-6) for q in unique):
            unique.append(p)
    return unique


def straight_exit(x, direction, square: SquareBoundary) -> tuple[float, np.ndarray]:
    """Exact exit time and point of a unit-speed straight ray (constant speed oracle)."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.hypot(*d)
    ts = []
    for lo, hi, xi, di in ((square.x_min, square.x_max, x[0], d[0]),
                           (square.y_min, square.y_max, x[1], d[1])):
        if di > 0:
            ts.append((hi - xi) / di)
        elif di < 0:
            ts.append((lo - xi) / di)
    t = min(ts)
    return t, x + t * d
