"""Full pipeline: simulate, average, sample, reconstruct, predict, measure, write."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .domain import CovectorPoint
from .fileio import write_boundary_data, write_field, write_spectrum
from .rays import SpeedModel, predict_all_artifacts
from .recon import (average_data, disk_mask, local_frequency, nearest_peak, time_reverse)
from .render import render_png
from .sampling import (SamplingSpec, downsample, edge_cone_fractions, edge_spectrum,
                       estimate_bandlimit, field_spectrum, nyquist_rates, resample_boundary)
from .wave import BoundaryData, simulate_forward

MANIFEST = "manifest.json"


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentResult:
    manifest: dict
    output_dir: Path
    fields: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)


def _jsonable(obj):
    """Plain JSON types; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def sampling_spec(cfg: ExperimentConfig, data: BoundaryData) -> SamplingSpec | None:
    """Requested relative rates, with integer decimations converted via the native rates."""
    if not cfg.has_sampling():
        return None
    req = cfg.sampling_request()
    h = data.h
    s_t = req["s_t"]
    if s_t is None and req["decimation_t"] is not None:
        s_t = req["decimation_t"] * data.dt / h
    s_y = []
    for e in range(4):
        v = req["s_y"][e]
        if v is None and req["decimation_y"][e] is not None:
            v = req["decimation_y"][e] * data.arc_spacing(e) / h
        s_y.append(v)
    return SamplingSpec(h, s_t, s_y)


def actual_spec(low: BoundaryData, spec: SamplingSpec) -> SamplingSpec:
    """Rates actually realised by decimation; untouched variables stay ``None``."""
    rates = spec.edge_rates()
    s_y = [low.meta["s_y"][e] if rates[e] is not None else None for e in range(4)]
    return SamplingSpec(low.h, low.meta["s_t"] if spec.s_t is not None else None, s_y)


def _band_edge(cfg: ExperimentConfig, spec: SamplingSpec | None) -> float | None:
    """Nyquist band edge used by ``scale = "nyquist"`` filters."""
    if spec is None:
        return None
    filt = cfg.table("filter")
    a = float(filt.get("a", 0.0))
    b = float(filt.get("b", 1.0))
    edges = []
    if b > 0:
        edges += [math.pi / s for s in spec.edge_rates() if s is not None]
    if a > 0 and spec.s_t is not None:
        edges.append(math.pi / spec.s_t)
    return min(edges) if edges else None


def _sources(cfg: ExperimentConfig) -> list[CovectorPoint]:
    extra = [CovectorPoint(s[:2], s[2:]) for s in cfg.table("artifacts").get("sources", [])]
    return cfg.states() + extra


def _energy(v: np.ndarray, mask=None) -> float:
    v = np.asarray(v)
    return float(np.sum(v[mask] ** 2) if mask is not None else np.sum(v ** 2))


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise StageError(name, exc) from exc


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> ExperimentResult:
    """Execute the pipeline for ``cfg`` and write all outputs plus ``manifest.json``.

    Outputs depend only on the configuration and the FFT thread count, so two
    runs produce byte-identical files.
    """
    out = Path(output_dir) if output_dir is not None else cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    h = cfg.h

    layout = _stage("setup", cfg.layout)
    grid, square = layout.grid, layout.boundary
    speed = _stage("setup", cfg.speed, layout)
    phantom = _stage("setup", cfg.phantom, layout)
    sources = _stage("setup", _sources, cfg)
    trivial = not np.any(phantom.values)

    data = _stage("simulate", simulate_forward, phantom, speed, cfg.T, square, h, cfg.safety)

    # Diagnostics of the well-sampled data.
    band_limit = None if trivial else _stage("analyze", estimate_bandlimit, phantom, h)
    nyq = None if band_limit is None or band_limit == 0 else nyquist_rates(band_limit,
                                                                          speed.c_max)
    cones = _stage("analyze", edge_cone_fractions, data)

    spec = _stage("sample", sampling_spec, cfg, data)
    filt = None
    if cfg.table("filter"):
        filt = _stage("average", cfg.filter_spec, _band_edge(cfg, spec))

    kernel = cfg.kernel
    native = [data.n_arc(e) for e in range(4)]
    reference = _stage("reconstruct", time_reverse, data, speed, kernel=kernel)
    recons = {"recon_full": reference}
    sampled = {"data_full": data}
    real_spec = None
    if spec is not None:
        averaged = data
        if filt is not None:
            edges = [e for e, s in enumerate(spec.edge_rates()) if s is not None]
            if filt.b == 0:
                edges = list(range(4))
            averaged = _stage("average", average_data, data, filt, edges=edges)
        low = _stage("sample", downsample, averaged, spec)
        real_spec = actual_spec(low, spec)
        up = _stage("sample", resample_boundary, low, data.dt, native, kernel)
        recons["recon_sampled"] = _stage("reconstruct", time_reverse, up, speed, kernel=kernel)
        sampled["data_sampled"] = low if low.is_uniform() else up
        if filt is not None:
            naive_low = _stage("sample", downsample, data, spec)
            naive_up = _stage("sample", resample_boundary, naive_low, data.dt, native, kernel)
            recons["recon_naive"] = _stage("reconstruct", time_reverse, naive_up, speed,
                                           kernel=kernel)

    predictions = []
    if real_spec is not None and sources:
        model = SpeedModel(speed)
        for src in sources:
            preds = _stage("predict", predict_all_artifacts, src, real_spec, model, square,
                           cfg.k_max)
            predictions.extend(preds)

    metrics = _stage("metrics", _metrics, cfg, recons, sources, predictions, h)

    files = {}

    def record(name: str, path: Path):
        files[name] = {"path": path.name, "sha256": _sha256(path)}

    def write_all():
        record("phantom", write_field(out / "phantom.tatf", phantom))
        record("speed", write_field(out / "speed.tatf", speed.field))
        for name, d in sampled.items():
            record(name, write_boundary_data(out / f"{name}.tatb", d))
        for name, r in recons.items():
            record(name, write_field(out / f"{name}.tatf", r))
        if not trivial:
            p, side = write_spectrum(out / "spectrum_phantom.tatf", field_spectrum(phantom, h))
            record("spectrum_phantom", p)
            record("spectrum_phantom_axes", side)
            for e in range(4):
                p, side = write_spectrum(out / f"spectrum_edge{e}.tatf", edge_spectrum(data, e))
                record(f"spectrum_edge{e}", p)
                record(f"spectrum_edge{e}_axes", side)

    _stage("write", write_all)

    renders = {}
    if cfg.png:
        def render_all():
            items = [("phantom", phantom), ("speed", speed.field)]
            items += list(sampled.items()) + list(recons.items())
            if not trivial:
                items.append(("spectrum_phantom", field_spectrum(phantom, h)))
            for name, obj in items:
                path = out / f"{name}.png"
                renders[name] = render_png(obj, path)
                record(f"{name}_png", path)
        _stage("render", render_all)

    dt = data.dt
    manifest = {
        "name": cfg.raw.get("name", ""),
        "config": cfg.raw,
        "trivial": trivial,
        "threads": int(os.environ.get("TAT_THREADS", "1") or 1),
        "grid": {"nx": grid.nx, "ny": grid.ny, "extents": list(grid.extents),
                 "square": list(square.extents), "points_per_edge": square.points_per_edge},
        "h": h,
        "dt": dt,
        "T": data.T,
        "n_t": data.n_t,
        "native_rates": {"s_t": data.s_t, "s_y": [data.s_y(e) for e in range(4)]},
        "band_limit": band_limit,
        "nyquist": None if nyq is None else {"s_t": nyq[0], "s_y": nyq[1]},
        "sampling": None if real_spec is None else {
            "s_t": real_spec.s_t, "s_y": real_spec.edge_rates(),
            "decimation_t": sampled.get("data_sampled", data).meta.get("decimation_t"),
            "decimation_y": sampled.get("data_sampled", data).meta.get("decimation_y")},
        "filter": None if filt is None else {"a": filt.a, "b": filt.b, "psi": filt.psi,
                                             "scale": filt.scale},
        "cone_fraction": cones,
        "sources": [s.as_list() for s in sources],
        "predictions": [p.to_dict() for p in predictions],
        "metrics": metrics,
        "files": files,
        "renders": renders,
    }
    manifest = _jsonable(manifest)
    (out / MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return ExperimentResult(manifest, out, recons, sampled)


def _metrics(cfg: ExperimentConfig, recons: dict, sources, predictions, h: float) -> dict:
    ref = recons["recon_full"]
    grid = ref.grid
    disk_cells = float(cfg.table("artifacts").get("disk_cells", 5))
    blob = 1.5 * math.sqrt(h)
    total = _energy(ref.values)
    metrics: dict = {"reference_energy": total}
    if total == 0 or "recon_sampled" not in recons:
        return metrics
    rec = recons["recon_sampled"]
    outside = np.ones(grid.shape, dtype=bool)
    for src in sources:
        outside &= ~disk_mask(grid, src.x, disk_cells * grid.dx)
    diff = np.asarray(rec.values) - np.asarray(ref.values)
    metrics["relative_error"] = math.sqrt(_energy(diff) / total)
    metrics["artifact_energy_fraction"] = _energy(diff, outside) / total
    metrics["sources"] = []
    for src in sources:
        m = disk_mask(grid, src.x, blob)
        peak_ref = float(np.max(np.abs(np.asarray(ref.values)[m])))
        entry = {"x": list(src.x),
                 "peak_ratio": float(np.max(np.abs(np.asarray(rec.values)[m]))) / peak_ref
                 if peak_ref > 0 else None}
        if "recon_naive" in recons:
            naive = np.asarray(recons["recon_naive"].values)
            e_naive = _energy(naive, m)
            entry["retained_vs_naive"] = (_energy(rec.values, m) / e_naive
                                          if e_naive > 0 else None)
        metrics["sources"].append(entry)
    metrics["artifacts"] = []
    for p in predictions:
        m = disk_mask(grid, p.image.x, blob)
        peak, cells = nearest_peak(rec, p.image.x)
        entry = {"k": p.k, "branch": p.branch, "variable": p.variable,
                 "image": p.image.as_list(),
                 "energy_fraction": _energy(rec.values, m) / total,
                 "nearest_peak": None if peak is None else list(peak),
                 "nearest_peak_cells": cells}
        if peak is not None:
            entry["local_frequency"] = local_frequency(rec, peak, h)
        if "recon_naive" in recons:
            e_naive = _energy(recons["recon_naive"].values, m)
            entry["reduction_vs_naive"] = (_energy(rec.values, m) / e_naive
                                           if e_naive > 0 else None)
        metrics["artifacts"].append(entry)
    return metrics
