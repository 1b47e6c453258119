"""Command-line interface: ``tatsample <subcommand> ...``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure
(the failing stage is printed on stderr).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np
import tomli

from .config import ConfigError, ExperimentConfig
from .domain import CovectorPoint, DomainError, SpeedField, make_layout
from .experiment import StageError, run_experiment
from .fileio import (FormatError, read_boundary_data, read_field, write_boundary_data,
                     write_field, write_spectrum)
from .rays import SpeedModel, predict_all_artifacts, trace_ray
from .recon import FilterSpec, antialias_pipeline, time_reverse
from .phantoms import zero_phantom
from .render import render_overlay, render_png
from .sampling import (SamplingSpec, downsample, edge_spectrum, estimate_bandlimit,
                       field_spectrum, resample_boundary)
from .wave import simulate_forward

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _floats(text: str, n: int | None = None, name: str = "value") -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"{name}: expected comma-separated numbers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"{name}: expected {n} numbers")
    return vals


def _pairs(text: str, name: str) -> dict:
    """``k=v,k=v`` into a dict of strings."""
    out = {}
    for item in filter(None, text.split(",")):
        if "=" not in item:
            raise ConfigError(f"{name}: expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _parse_spec(text: str | None, h: float, s_t=None, s_y=None) -> SamplingSpec:
    """``s_t=..,s_y=..`` (``s_y`` applies to every edge; ``s_y<e>`` to one edge)."""
    rates = {"s_t": s_t, "s_y": [s_y] * 4}
    for k, v in _pairs(text or "", "--spec").items():
        if k == "s_t":
            rates["s_t"] = float(v)
        elif k == "s_y":
            rates["s_y"] = [float(v)] * 4
        elif k.startswith("s_y") and k[3:].isdigit() and int(k[3:]) < 4:
            rates["s_y"][int(k[3:])] = float(v)
        else:
            raise ConfigError(f"--spec: unknown key {k!r}")
    return SamplingSpec(h, rates["s_t"], rates["s_y"])


def _parse_filter(text: str, nyquist: float | None) -> FilterSpec:
    p = _pairs(text, "--filter")
    unknown = set(p) - {"a", "b", "psi", "scale"}
    if unknown:
        raise ConfigError(f"--filter: unknown keys {sorted(unknown)}")
    a = float(p.get("a", 0.0))
    b = float(p.get("b", 1.0))
    psi = p.get("psi", "gaussian")
    scale = p.get("scale", "nyquist")
    if scale == "nyquist":
        if nyquist is None:
            raise ConfigError("--filter scale=nyquist needs an undersampling --spec")
        return FilterSpec.half_at(nyquist, a, b, psi)
    return FilterSpec(a, b, psi, float(scale))


def _read_speed(path) -> SpeedField:
    f = read_field(path)
    return SpeedField(f, margin=0.0)


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    overrides: dict = {}
    for item in args.set or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects table.key=value, got {item!r}")
        key, value = item.split("=", 1)
        table, name = key.split(".", 1)
        try:
            parsed = tomli.loads(f"v = {value}")["v"]
        except tomli.TOMLDecodeError:
            parsed = value
        overrides.setdefault(table, {})[name] = parsed
    return cfg.with_overrides(**overrides) if overrides else cfg


# -- subcommands -------------------------------------------------------------

def cmd_simulate(args) -> dict:
    cfg = _load_config(args)
    layout = cfg.layout()
    speed = cfg.speed(layout)
    phantom = cfg.phantom(layout)
    data = simulate_forward(phantom, speed, cfg.T, layout.boundary, cfg.h, cfg.safety)
    write_boundary_data(args.out, data)
    if args.phantom_out:
        write_field(args.phantom_out, phantom)
    if args.speed_out:
        write_field(args.speed_out, speed.field)
    if args.png:
        render_png(data, args.png)
    return {"out": str(args.out), "dt": data.dt, "n_t": data.n_t, "h": data.h}


def cmd_sample(args) -> dict:
    data = read_boundary_data(args.data, center=_floats(args.center, 2, "--center"))
    spec = _parse_spec(args.spec, data.h)
    low = downsample(data, spec)
    if not low.is_uniform():
        # TATB stores one point count per edge: keep the aliased samples on the native grid.
        low = resample_boundary(low, data.dt, [data.n_arc(e) for e in range(4)], args.kernel)
    write_boundary_data(args.out, low)
    if args.png:
        render_png(low, args.png)
    return {"out": str(args.out), "s_t": low.meta.get("s_t"), "s_y": low.meta.get("s_y"),
            "decimation_t": low.meta.get("decimation_t"),
            "decimation_y": low.meta.get("decimation_y")}


def cmd_reconstruct(args) -> dict:
    speed = _read_speed(args.speed)
    data = read_boundary_data(args.data, center=_floats(args.center, 2, "--center"))
    recon = time_reverse(data, speed, kernel=args.kernel)
    write_field(args.out, recon)
    info = {"out": str(args.out)}
    if args.png:
        info["png"] = render_png(recon, args.png)
    return info


def _default_speed(half_side: float, center, cells: int) -> tuple[SpeedField, object]:
    layout = make_layout(half_side=half_side, cells=cells, center=center, pad_cells=24)
    return SpeedField.constant(layout.grid), layout.boundary


def cmd_predict(args) -> dict:
    src = _floats(args.source, 4, "--source")
    source = CovectorPoint(src[:2], src[2:])
    center = _floats(args.center, 2, "--center")
    if args.speed:
        speed = _read_speed(args.speed)
        square = make_layout(half_side=args.half_side, cells=args.cells, center=center,
                             pad_cells=24).boundary
    else:
        speed, square = _default_speed(args.half_side, center, args.cells)
    spec = _parse_spec(args.spec, 1.0)
    model = SpeedModel(speed)
    preds = predict_all_artifacts(source, spec, model, square, args.kmax)
    result = [p.to_dict() for p in preds]
    text = json.dumps(result, sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    if args.png:
        lines, markers = [], [source.x]
        for branch in ("+", "-"):
            lines.append(trace_ray(source, branch, model, square).points)
        for p in preds:
            markers.append(p.image.x)
            paths = [trace_ray(p.image, b, model, square) for b in ("+", "-")]
            lines.append(_matching_path(paths, model, source, p, square).points)
        background = (read_field(args.phantom) if args.phantom
                      else zero_phantom(square.subgrid(speed.grid)))
        render_overlay(background, lines, markers, args.png)
    return {"predictions": result}


def _matching_path(paths, model, source, pred, square):
    """Branch of the artifact's ray that ends where the source's ray exits."""
    exit_src = trace_ray(source, pred.branch, model, square).exit_point
    return min(paths, key=lambda r: float(np.hypot(*(r.exit_point - exit_src))))


def cmd_analyze(args) -> dict:
    path = Path(args.input)
    head = path.read_bytes()[:4]
    if head == b"TATB":
        data = read_boundary_data(path)
        if args.edge is None:
            raise ConfigError("--edge is required for boundary data")
        h = args.h if args.h is not None else data.h
        data = data.replace(h=h)
        spec = edge_spectrum(data, args.edge)
        info = {"kind": "edge", "edge": args.edge}
    elif head == b"TATF":
        if args.h is None:
            raise ConfigError("--h is required for fields")
        f = read_field(path)
        spec = field_spectrum(f, args.h, window=args.window)
        h = args.h
        info = {"kind": "field", "band_limit": estimate_bandlimit(f, h)
                if np.any(f.values) else None}
    else:
        raise FormatError(f"{path}: unknown file type")
    info["peak"] = list(spec.peak())
    info["axis_names"] = list(spec.names)
    info["h"] = h
    if args.out:
        write_spectrum(args.out, spec)
    if args.png:
        info["png"] = render_png(spec, args.png)
    return info


def cmd_antialias(args) -> dict:
    speed = _read_speed(args.speed)
    data = read_boundary_data(args.data, center=_floats(args.center, 2, "--center"))
    spec = _parse_spec(args.spec, data.h)
    rates = [s for s in spec.edge_rates() if s is not None]
    nyquist = math.pi / min(rates) if rates else None
    filt = _parse_filter(args.filter, nyquist)
    res = antialias_pipeline(data, spec, filt, speed, with_naive=args.naive_out is not None,
                             kernel=args.kernel)
    write_field(args.out, res.reconstruction)
    info = {"out": str(args.out), "filter": {"a": filt.a, "b": filt.b, "psi": filt.psi,
                                             "scale": filt.scale}}
    if args.naive_out:
        write_field(args.naive_out, res.naive)
    if args.png:
        info["png"] = render_png(res.reconstruction, args.png)
    return info


def cmd_run(args) -> dict:
    cfg = _load_config(args)
    result = run_experiment(cfg, args.out)
    m = result.manifest
    return {"output_dir": str(result.output_dir), "trivial": m["trivial"],
            "files": sorted(m["files"])}


# -- entry point -----------------------------------------------------------------

STAGES = {"simulate": "simulate", "sample": "sample", "reconstruct": "reconstruct",
          "predict-artifacts": "predict", "analyze-spectrum": "analyze",
          "antialias": "antialias", "run": "run"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tatsample", description=__doc__.splitlines()[0])
    ap.add_argument("--threads", type=int, help="FFT worker threads (sets TAT_THREADS)")
    ap.add_argument("--quiet", action="store_true", help="suppress the JSON summary")
    # Also accepted after the subcommand; SUPPRESS keeps the top-level value otherwise.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    sub = ap.add_subparsers(dest="command", required=True)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    def config_args(p):
        p.add_argument("--config", required=True, help="experiment TOML file")
        p.add_argument("--set", action="append", metavar="TABLE.KEY=VALUE",
                       help="override a config entry (TOML value syntax)")

    p = sub.add_parser("simulate", help="forward-simulate boundary data")
    config_args(p)
    p.add_argument("--out", required=True, help="output .tatb")
    p.add_argument("--phantom-out", help="also write the phantom as .tatf")
    p.add_argument("--speed-out", help="also write the speed as .tatf")
    p.add_argument("--png")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sample", help="decimate boundary data")
    p.add_argument("--data", required=True)
    p.add_argument("--spec", required=True, help="s_t=..,s_y=.. or s_y<edge>=..")
    p.add_argument("--out", required=True)
    p.add_argument("--center", default="0,0")
    p.add_argument("--kernel", default="sinc")
    p.add_argument("--png")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("reconstruct", help="time-reversal reconstruction")
    p.add_argument("--data", required=True)
    p.add_argument("--speed", required=True, help="speed .tatf on the reconstruction grid")
    p.add_argument("--out", required=True)
    p.add_argument("--center", default="0,0")
    p.add_argument("--kernel", default="sinc")
    p.add_argument("--png")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("predict-artifacts", help="geometric artifact predictions")
    p.add_argument("--source", required=True, help="x,y,xi1,xi2")
    p.add_argument("--spec", required=True, help="s_t=..,s_y=.. (relative rates)")
    p.add_argument("--kmax", type=int, default=2)
    p.add_argument("--speed", help="speed .tatf (default c = 1)")
    p.add_argument("--half-side", type=float, default=1.0)
    p.add_argument("--center", default="0,0")
    p.add_argument("--cells", type=int, default=256)
    p.add_argument("--phantom", help="background .tatf for the overlay")
    p.add_argument("--out", help="JSON output")
    p.add_argument("--png", help="ray overlay image")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("analyze-spectrum", help="semiclassical spectrum of a field or edge")
    p.add_argument("--input", required=True, help=".tatf field or .tatb data")
    p.add_argument("--h", type=float)
    p.add_argument("--edge", type=int, choices=range(4))
    p.add_argument("--window", action="store_true")
    p.add_argument("--out", help="spectrum .tatf (with .json sidecar)")
    p.add_argument("--png")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("antialias", help="average, sample and reconstruct")
    p.add_argument("--data", required=True)
    p.add_argument("--speed", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--filter", default="a=0,b=1,psi=gaussian,scale=nyquist")
    p.add_argument("--out", required=True)
    p.add_argument("--naive-out")
    p.add_argument("--center", default="0,0")
    p.add_argument("--kernel", default="sinc")
    p.add_argument("--png")
    p.set_defaults(func=cmd_antialias)

    p = sub.add_parser("run", help="full pipeline with manifest")
    config_args(p)
    p.add_argument("--out", help="output directory (default from config)")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        os.environ["TAT_THREADS"] = str(max(1, args.threads))
    stage = STAGES[args.command]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            info = args.func(args)
    except (DomainError, OSError) as exc:
        # Invalid configuration, parameters violating a precondition, unreadable files.
        print(f"config error [{stage}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"numerical failure [{exc.stage}]: {exc.cause}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure [{stage}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if not args.quiet:
        print(json.dumps(info, sort_keys=True, indent=1, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
