import json

import numpy as np
import pytest

from tatsample.domain import Grid2D, ScalarField2D
from tatsample.fileio import (FormatError, read_boundary_data, read_field, write_boundary_data,
                              write_field, write_spectrum)
from tatsample.sampling import SamplingSpec, downsample, field_spectrum
from tatsample.wave import BoundaryData


def test_field_round_trip(tmp_path, rng):
    g = Grid2D(21, 17, -1.0, 1.5, -0.5, 0.5)
    real = ScalarField2D(g, rng.standard_normal(g.shape))
    cplx = ScalarField2D(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
    for f in (real, cplx):
        back = read_field(write_field(tmp_path / "f.tatf", f))
        assert back.grid == g and back.kind == f.kind
        assert np.array_equal(back.values, f.values)


def test_boundary_round_trip(tmp_path, small_layout, rng):
    sq = small_layout.boundary
    d = BoundaryData(sq, 0.01, [rng.standard_normal((30, 64)) for _ in range(4)], 0.02)
    back = read_boundary_data(write_boundary_data(tmp_path / "d.tatb", d))
    assert back.boundary.extents == pytest.approx(sq.extents)
    assert back.dt == d.dt and back.h == d.h
    assert all(np.array_equal(a, b) for a, b in zip(back.values, d.values))
    back = read_boundary_data(tmp_path / "d.tatb", square=sq)
    assert back.boundary == sq


def test_non_uniform_data_rejected(tmp_path, small_layout):
    d = BoundaryData(small_layout.boundary, 0.01, [np.zeros((10, 64))] * 4, 0.02)
    low = downsample(d, SamplingSpec(0.02, s_y=[None, 4 * d.s_y(1), None, None]))
    with pytest.raises(FormatError):
        write_boundary_data(tmp_path / "x.tatb", low)


def test_corrupt_files(tmp_path):
    g = Grid2D(17, 17, 0, 1, 0, 1)
    p = write_field(tmp_path / "f.tatf", ScalarField2D(g, np.ones(g.shape)))
    raw = p.read_bytes()
    cases = {"magic": b"XXXX" + raw[4:], "short": raw[:10], "body": raw[:-8],
             "version": raw[:4] + (9).to_bytes(4, "little") + raw[8:]}
    for name, blob in cases.items():
        (tmp_path / name).write_bytes(blob)
        with pytest.raises(FormatError):
            read_field(tmp_path / name)
    with pytest.raises(FormatError):
        read_boundary_data(p)


def test_spectrum_sidecar(tmp_path):
    g = Grid2D(33, 33, -1, 1, -1, 1)
    X, Y = g.mesh()
    spec = field_spectrum(ScalarField2D(g, np.exp(-(X ** 2 + Y ** 2) / 0.1)), 0.05)
    path, side = write_spectrum(tmp_path / "s.tatf", spec)
    meta = json.loads(side.read_text())
    assert meta["axis0"] == list(spec.axes[0]) and meta["h"] == 0.05
    assert np.allclose(read_field(path).values, spec.magnitude)
