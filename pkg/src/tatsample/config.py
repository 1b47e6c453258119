"""Experiment configuration: TOML schema, validation and construction of inputs.

Schema (all tables optional except ``phantom``)::

    [grid]       half_side, cells, extension | pad_cells, center
    [speed]      kind = "constant" | "bumps"; value; margin;
                 bumps = [{center, amplitude, width}, ...]
    [phantom]    kind = "coherent_state" | "image" | "segment" | "zero";
                 coherent_state: states = [{x0, xi0}, ...] (or x0, xi0), h taken
                 from [simulation]; image: path, smoothing_width;
                 segment: p0, p1, thickness
    [simulation] h, T, safety
    [sampling]   s_t | decimation_t; s_y | decimation_y (number or table of
                 edge name -> value); kernel
    [filter]     a, b, psi, scale (number or "nyquist")
    [artifacts]  k_max, sources = [[x, y, xi1, xi2], ...], disk_cells
    [output]     dir, png
    seed
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .domain import EDGE_NAMES, CovectorPoint, DomainError, Layout, SpeedField, make_layout
from .phantoms import (load_image_phantom, make_coherent_state, make_line_segment_phantom,
                       make_speed, zero_phantom)
from .recon import FilterSpec

PHANTOM_KINDS = ("coherent_state", "image", "segment", "zero")
SPEED_KINDS = ("constant", "bumps")
TABLES = ("grid", "speed", "phantom", "simulation", "sampling", "filter", "artifacts", "output")


class ConfigError(DomainError):
    """Invalid or incomplete experiment configuration."""


def _vec(value, name: str, n: int = 2) -> list[float]:
    try:
        out = [float(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a list of {n} numbers") from exc
    if len(out) != n:
        raise ConfigError(f"{name} must have {n} entries")
    return out


def _edge_table(value, name: str) -> list[float | None]:
    """Number -> same on all edges; table keyed by edge name -> per edge."""
    if value is None:
        return [None] * 4
    if isinstance(value, (int, float)):
        return [float(value)] * 4
    if isinstance(value, dict):
        unknown = set(value) - set(EDGE_NAMES)
        if unknown:
            raise ConfigError(f"{name}: unknown edges {sorted(unknown)}")
        return [None if value.get(e) is None else float(value[e]) for e in EDGE_NAMES]
    raise ConfigError(f"{name} must be a number or a table of edges")


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    # -- parsing ---------------------------------------------------------------
    @classmethod
    def from_toml(cls, text: str, base_dir=None) -> "ExperimentConfig":
        try:
            raw = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from exc
        cfg = cls(raw, Path(base_dir) if base_dir is not None else Path.cwd())
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_toml(text, path.parent)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.raw)

    def with_overrides(self, **tables) -> "ExperimentConfig":
        """Copy with ``table={key: value}`` entries replaced."""
        raw = copy.deepcopy(self.raw)
        for name, entries in tables.items():
            if entries:
                raw.setdefault(name, {}).update(entries)
        cfg = ExperimentConfig(raw, self.base_dir)
        cfg.validate()
        return cfg

    def table(self, name: str) -> dict:
        value = self.raw.get(name, {})
        if not isinstance(value, dict):
            raise ConfigError(f"[{name}] must be a table")
        return value

    # -- accessors ---------------------------------------------------------------
    @property
    def h(self) -> float:
        h = float(self.table("simulation").get("h", 0.02))
        if h <= 0:
            raise ConfigError("simulation.h must be positive")
        return h

    @property
    def T(self) -> float | None:
        T = self.table("simulation").get("T")
        return None if T is None else float(T)

    @property
    def safety(self) -> float:
        return float(self.table("simulation").get("safety", 0.9))

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def k_max(self) -> int:
        return int(self.table("artifacts").get("k_max", 2))

    @property
    def kernel(self) -> str:
        return str(self.table("sampling").get("kernel", "sinc"))

    def output_dir(self) -> Path:
        return self.base_dir / self.table("output").get("dir", "out")

    @property
    def png(self) -> bool:
        return bool(self.table("output").get("png", True))

    def layout(self) -> Layout:
        g = self.table("grid")
        try:
            return make_layout(half_side=float(g.get("half_side", 1.0)),
                               cells=int(g.get("cells", 256)),
                               extension=float(g.get("extension", 2.0)),
                               center=_vec(g.get("center", [0.0, 0.0]), "grid.center"),
                               pad_cells=None if g.get("pad_cells") is None
                               else int(g["pad_cells"]))
        except DomainError as exc:
            raise ConfigError(f"[grid]: {exc}") from exc

    def speed(self, layout: Layout) -> SpeedField:
        s = self.table("speed")
        kind = s.get("kind", "constant")
        margin = float(s.get("margin", 0.1))
        try:
            if kind == "constant":
                value = float(s.get("value", 1.0))
                if value != 1.0:
                    raise ConfigError("constant speed must be 1 (c = 1 near the grid edge)")
                return SpeedField.constant(layout.grid, value)
            if kind == "bumps":
                bumps = []
                for i, b in enumerate(s.get("bumps", [])):
                    bumps.append((_vec(b["center"], f"speed.bumps[{i}].center"),
                                  float(b["amplitude"]), float(b["width"])))
                return make_speed(layout.grid, bumps, margin=margin)
        except KeyError as exc:
            raise ConfigError(f"[speed]: missing key {exc}") from exc
        except ConfigError:
            raise
        except DomainError as exc:
            raise ConfigError(f"[speed]: {exc}") from exc
        raise ConfigError(f"unknown speed kind {kind!r}")

    def states(self) -> list[CovectorPoint]:
        """Coherent-state centres; empty for other phantom kinds."""
        p = self.table("phantom")
        if p.get("kind") != "coherent_state":
            return []
        entries = p.get("states") or [{"x0": p.get("x0"), "xi0": p.get("xi0")}]
        out = []
        for i, st in enumerate(entries):
            if st.get("x0") is None or st.get("xi0") is None:
                raise ConfigError(f"phantom.states[{i}] needs x0 and xi0")
            out.append(CovectorPoint(_vec(st["x0"], "x0"), _vec(st["xi0"], "xi0")))
        return out

    def phantom(self, layout: Layout):
        p = self.table("phantom")
        kind = p.get("kind")
        grid, square = layout.grid, layout.boundary
        try:
            if kind == "coherent_state":
                total = np.zeros(grid.shape)
                for st in self.states():
                    total += make_coherent_state(st.x, st.xi, self.h, grid, square,
                                                 real=True, centered=True).values
                return zero_phantom(grid).with_values(total)
            if kind == "image":
                path = self.base_dir / p["path"]
                return load_image_phantom(path, grid, float(p.get("smoothing_width", 0.02)),
                                          square)
            if kind == "segment":
                return make_line_segment_phantom(_vec(p["p0"], "p0"), _vec(p["p1"], "p1"),
                                                 float(p["thickness"]), grid, square)
            if kind == "zero":
                return zero_phantom(grid)
        except KeyError as exc:
            raise ConfigError(f"[phantom]: missing key {exc}") from exc
        except ConfigError:
            raise
        except DomainError as exc:
            raise ConfigError(f"[phantom]: {exc}") from exc
        raise ConfigError(f"unknown phantom kind {kind!r}")

    def sampling_request(self) -> dict:
        """Raw sampling request: rates and/or integer decimation factors."""
        s = self.table("sampling")
        return {
            "s_t": None if s.get("s_t") is None else float(s["s_t"]),
            "decimation_t": None if s.get("decimation_t") is None else int(s["decimation_t"]),
            "s_y": _edge_table(s.get("s_y"), "sampling.s_y"),
            "decimation_y": _edge_table(s.get("decimation_y"), "sampling.decimation_y"),
        }

    def has_sampling(self) -> bool:
        r = self.sampling_request()
        return (r["s_t"] is not None or r["decimation_t"] is not None
                or any(v is not None for v in r["s_y"] + r["decimation_y"]))

    def filter_spec(self, nyquist: float | None = None) -> FilterSpec | None:
        f = self.table("filter")
        if not f:
            return None
        a = float(f.get("a", 0.0))
        b = float(f.get("b", 1.0))
        psi = str(f.get("psi", "gaussian"))
        scale = f.get("scale", "nyquist")
        try:
            if scale == "nyquist":
                if nyquist is None:
                    raise ConfigError("filter.scale = 'nyquist' needs undersampling")
                return FilterSpec.half_at(nyquist, a, b, psi)
            return FilterSpec(a, b, psi, float(scale))
        except ConfigError:
            raise
        except (DomainError, ValueError) as exc:
            raise ConfigError(f"[filter]: {exc}") from exc

    # -- validation ----------------------------------------------------------------
    def validate(self) -> None:
        unknown = set(self.raw) - set(TABLES) - {"seed", "name", "description"}
        if unknown:
            raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
        if "phantom" not in self.raw:
            raise ConfigError("config needs a [phantom] table")
        kind = self.table("phantom").get("kind")
        if kind not in PHANTOM_KINDS:
            raise ConfigError(f"phantom.kind must be one of {PHANTOM_KINDS}")
        if self.table("speed").get("kind", "constant") not in SPEED_KINDS:
            raise ConfigError(f"speed.kind must be one of {SPEED_KINDS}")
        if kind == "image":
            path = self.base_dir / self.table("phantom").get("path", "")
            if not path.is_file():
                raise ConfigError(f"phantom image {path} does not exist")
        if not 0 < self.safety <= 1:
            raise ConfigError("simulation.safety must lie in (0, 1]")
        if self.T is not None and self.T <= 0:
            raise ConfigError("simulation.T must be positive")
        if self.k_max < 1:
            raise ConfigError("artifacts.k_max must be >= 1")
        self.h
        req = self.sampling_request()
        if req["s_t"] is not None and req["decimation_t"] is not None:
            raise ConfigError("give either sampling.s_t or sampling.decimation_t")
        for e in range(4):
            if req["s_y"][e] is not None and req["decimation_y"][e] is not None:
                raise ConfigError("give either sampling.s_y or sampling.decimation_y per edge")
        for v in [req["s_t"], req["decimation_t"], *req["s_y"], *req["decimation_y"]]:
            if v is not None and v <= 0:
                raise ConfigError("sampling rates and factors must be positive")
        # Fail fast on physical preconditions.
        layout = self.layout()
        self.speed(layout)
        self.phantom(layout)
        for i, src in enumerate(self.table("artifacts").get("sources", [])):
            pt = _vec(src, f"artifacts.sources[{i}]", 4)
            if math.hypot(pt[2], pt[3]) == 0:
                raise ConfigError(f"artifacts.sources[{i}] has zero covector")
        if self.table("filter"):
            self.filter_spec(nyquist=1.0)


def bundled_config_dir() -> Path:
    return Path(__file__).parent / "configs"


def bundled_configs() -> list[Path]:
    return sorted(bundled_config_dir().glob("*.toml"))
