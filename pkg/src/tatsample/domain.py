"""Grids, fields, the square measurement boundary and phase-space points.

Conventions used throughout the package:

* 2D arrays are indexed ``values[j, i]`` with ``j`` running over y and ``i``
  over x (row-major, rows are y).
* The ambient metric is Euclidean, so covectors and vectors are identified.
  A covector ``xi`` is given in semiclassical units: the physical wavenumber
  is ``xi / h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

MIN_CELLS = 16

# Edge ids of the measurement square, counterclockwise from the bottom edge.
BOTTOM, RIGHT, TOP, LEFT = 0, 1, 2, 3
EDGE_NAMES = ("bottom", "right", "top", "left")


class DomainError(ValueError):
    """A geometric or physical precondition of the domain model failed."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if self.nx < MIN_CELLS or self.ny < MIN_CELLS:
            raise DomainError(f"grid {self.nx}x{self.ny} is degenerate (need >= {MIN_CELLS})")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise DomainError("grid extents must be increasing")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def extents(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)

    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.nx)

    def y(self) -> np.ndarray:
        return self.y_min + self.dy * np.arange(self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays ``(X, Y)`` of shape ``(ny, nx)``."""
        return np.meshgrid(self.x(), self.y())

    def index_of(self, x: float, y: float, tol: float = 1e-9) -> tuple[int, int]:
        """Node indices ``(i, j)`` of a point that must lie on a grid node."""
        fi = (x - self.x_min) / self.dx
        fj = (y - self.y_min) / self.dy
        i, j = int(round(fi)), int(round(fj))
        if abs(fi - i) > tol * max(1.0, abs(fi)) or abs(fj - j) > tol * max(1.0, abs(fj)):
            raise DomainError(f"point ({x}, {y}) is not on a grid node")
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise DomainError(f"point ({x}, {y}) is outside the grid")
        return i, j


@dataclass(frozen=True)
class ScalarField2D:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != self.grid.shape:
            raise DomainError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if np.iscomplexobj(v):
            v = v.astype(np.complex128)
        else:
            v = v.astype(np.float64)
        if not np.all(np.isfinite(v)):
            raise DomainError("field contains non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def kind(self) -> str:
        return "complex" if np.iscomplexobj(self.values) else "real"

    def real(self) -> "ScalarField2D":
        return ScalarField2D(self.grid, self.values.real)

    def with_values(self, values: np.ndarray) -> "ScalarField2D":
        return ScalarField2D(self.grid, values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class SpeedField:
    """Positive wave speed, identically 1 on a band along the grid boundary.

    ``margin`` is the width of that band as a fraction of the grid side.
    """

    field: ScalarField2D
    margin: float = 0.1
    c_min: float = field(init=False)
    c_max: float = field(init=False)

    def __post_init__(self):
        if self.field.kind != "real":
            raise DomainError("speed must be real")
        c = self.field.values
        c_min, c_max = float(c.min()), float(c.max())
        if c_min <= 0:
            raise DomainError(f"speed must be positive (c_min = {c_min})")
        band = margin_mask(self.field.grid, self.margin)
        if band.any() and np.max(np.abs(c[band] - 1.0)) > 1e-6:
            raise DomainError("speed is not identically 1 on the grid margin band")
        object.__setattr__(self, "c_min", c_min)
        object.__setattr__(self, "c_max", c_max)

    @property
    def grid(self) -> Grid2D:
        return self.field.grid

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    @classmethod
    def constant(cls, grid: Grid2D, value: float = 1.0) -> "SpeedField":
        return cls(ScalarField2D(grid, np.full(grid.shape, float(value))),
                   margin=0.0 if value != 1.0 else 0.1)

    def is_constant(self) -> bool:
        return self.c_min == self.c_max


def margin_mask(grid: Grid2D, fraction: float) -> np.ndarray:
    """Boolean mask of the band of relative width ``fraction`` along the grid edge."""
    mx = int(round(fraction * (grid.nx - 1)))
    my = int(round(fraction * (grid.ny - 1)))
    mask = np.zeros(grid.shape, dtype=bool)
    if mx > 0:
        mask[:, :mx] = True
        mask[:, -mx:] = True
    if my > 0:
        mask[:my, :] = True
        mask[-my:, :] = True
    return mask


@dataclass(frozen=True)
class SquareBoundary:
    """Boundary of the measurement square, discretized per edge.

    Each edge owns its counterclockwise-first corner, so edge ``e`` has
    points ``start_e + k * spacing * tangent_e`` for ``k = 0 .. n - 1``.
    Arc length increases counterclockwise.
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    points_per_edge: int

    def __post_init__(self):
        sx, sy = self.x_max - self.x_min, self.y_max - self.y_min
        if sx <= 0 or abs(sx - sy) > 1e-12 * max(1.0, sx):
            raise DomainError("measurement region must be a square")
        if self.points_per_edge < 2:
            raise DomainError("need at least 2 points per edge")

    @property
    def side(self) -> float:
        return self.x_max - self.x_min

    @property
    def spacing(self) -> float:
        return self.side / self.points_per_edge

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2])

    @property
    def extents(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_max, self.y_min, self.y_max)

    def corner(self, edge: int) -> np.ndarray:
        return np.array([
            (self.x_min, self.y_min),
            (self.x_max, self.y_min),
            (self.x_max, self.y_max),
            (self.x_min, self.y_max),
        ][edge], dtype=float)

    @staticmethod
    def tangent(edge: int) -> np.ndarray:
        return np.array([(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][edge])

    @staticmethod
    def normal(edge: int) -> np.ndarray:
        """Outward unit normal."""
        return np.array([(0.0, -1.0), (1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)][edge])

    def arc(self, n: int | None = None) -> np.ndarray:
        n = self.points_per_edge if n is None else n
        return np.arange(n) * (self.side / n)

    def points(self, edge: int, n: int | None = None) -> np.ndarray:
        """Coordinates ``(n, 2)`` of the sample points on ``edge``."""
        s = self.arc(n)
        return self.corner(edge)[None, :] + s[:, None] * self.tangent(edge)[None, :]

    def edges(self) -> Iterator[int]:
        return iter(range(4))

    def contains(self, p, strict: bool = True) -> bool:
        x, y = float(p[0]), float(p[1])
        if strict:
            return self.x_min < x < self.x_max and self.y_min < y < self.y_max
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def distance_inside(self, p) -> float:
        """Distance from an interior point to the boundary (negative outside)."""
        x, y = float(p[0]), float(p[1])
        return min(x - self.x_min, self.x_max - x, y - self.y_min, self.y_max - y)

    def locate(self, p) -> tuple[int, float]:
        """Edge id and arc coordinate of a boundary point (nearest edge)."""
        x, y = float(p[0]), float(p[1])
        d = [abs(y - self.y_min), abs(x - self.x_max), abs(y - self.y_max), abs(x - self.x_min)]
        edge = int(np.argmin(d))
        arc = float(np.dot(np.array([x, y]) - self.corner(edge), self.tangent(edge)))
        return edge, arc

    def node_block(self, grid: Grid2D) -> tuple[int, int, int, int]:
        """Index bounds ``(i0, i1, j0, j1)`` (inclusive) of the square on ``grid``."""
        i0, j0 = grid.index_of(self.x_min, self.y_min)
        i1, j1 = grid.index_of(self.x_max, self.y_max)
        if i1 - i0 != self.points_per_edge or j1 - j0 != self.points_per_edge:
            raise DomainError("boundary sampling does not match the grid spacing")
        return i0, i1, j0, j1

    def subgrid(self, grid: Grid2D) -> Grid2D:
        """The grid restricted to the closed square."""
        i0, i1, j0, j1 = self.node_block(grid)
        return Grid2D(i1 - i0 + 1, j1 - j0 + 1, self.x_min, self.x_max, self.y_min, self.y_max)

    def inner_mask(self, grid: Grid2D, margin: float) -> np.ndarray:
        """Nodes inside the square shrunk by ``margin`` on every side."""
        X, Y = grid.mesh()
        return ((X > self.x_min + margin) & (X < self.x_max - margin)
                & (Y > self.y_min + margin) & (Y < self.y_max - margin))


@dataclass(frozen=True)
class CovectorPoint:
    """Phase-space point ``(x, xi)``; ``xi`` is a semiclassical frequency."""

    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(2)
        xi = np.asarray(self.xi, dtype=float).reshape(2)
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "xi", _frozen(xi))

    @property
    def norm(self) -> float:
        return float(np.hypot(*self.xi))

    def distance(self, other: "CovectorPoint") -> float:
        return float(np.hypot(*(self.x - other.x)))

    def as_list(self) -> list[float]:
        return [float(v) for v in (*self.x, *self.xi)]


@dataclass(frozen=True)
class Layout:
    """A computational grid together with the measurement square inside it."""

    grid: Grid2D
    boundary: SquareBoundary

    @property
    def square_grid(self) -> Grid2D:
        return self.boundary.subgrid(self.grid)


def make_layout(half_side: float = 1.0, cells: int = 256, extension: float = 2.0,
                center=(0.0, 0.0), pad_cells: int | None = None) -> Layout:
    """Square ``[c - half_side, c + half_side]^2`` sampled with ``cells`` cells per
    side, embedded in a grid whose side is ``extension`` times larger.

    ``pad_cells`` overrides the extension with an explicit number of cells
    added on every side.
    """
    if cells < MIN_CELLS:
        raise DomainError(f"need at least {MIN_CELLS} cells across the square")
    if pad_cells is None:
        if extension < 1:
            raise DomainError("extension must be >= 1")
        pad_cells = int(round(cells * (extension - 1) / 2))
    h = 2 * half_side / cells
    cx, cy = float(center[0]), float(center[1])
    n = cells + 1 + 2 * pad_cells
    lo = -half_side - pad_cells * h
    hi = half_side + pad_cells * h
    grid = Grid2D(n, n, cx + lo, cx + hi, cy + lo, cy + hi)
    square = SquareBoundary(cx - half_side, cx + half_side, cy - half_side, cy + half_side, cells)
    return Layout(grid, square)
