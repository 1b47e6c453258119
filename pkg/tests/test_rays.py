import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tatsample.domain import CovectorPoint, DomainError, SpeedField, make_layout
from tatsample.phantoms import make_gaussian_bump_speed
from tatsample.rays import (SpeedModel, artifact_map_t, artifact_map_y, canonical_map,
                            fold_index, inverse_canonical_map, predict_all_artifacts,
                            straight_exit, trace_ray, valid_shifts)
from tatsample.sampling import SamplingSpec

LAYOUT = make_layout(cells=128, pad_cells=24)
SQ = LAYOUT.boundary
CONST = SpeedModel(SpeedField.constant(LAYOUT.grid))
BUMPY = SpeedModel(make_gaussian_bump_speed((0.0, 0.0), 0.5, 0.01, LAYOUT.grid, margin=0.04))


def test_straight_ray_to_top_midpoint():
    path = trace_ray(CovectorPoint((0, 0), (0, 1)), "+", CONST, SQ)
    assert path.edge == 2
    np.testing.assert_allclose(path.exit_point, [0, 1], atol=1e-9)
    assert path.exit_time == pytest.approx(1.0, abs=1e-9)
    assert path.tangential_component == pytest.approx(0, abs=1e-12)
    v = path.exit_velocity
    assert v @ v == pytest.approx(path.tangential_component ** 2 + path.normal_component ** 2)


def test_oblique_ray_matches_line_intersection():
    xi = np.array([1.0, 1.0]) / math.sqrt(2)
    path = trace_ray(CovectorPoint((0.3, 0), xi), "+", CONST, SQ)
    t, pt = straight_exit((0.3, 0), xi, SQ)
    assert t == pytest.approx(0.7 * math.sqrt(2))
    np.testing.assert_allclose(path.exit_point, pt, atol=1e-6)
    assert abs(path.exit_time - t) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(x=st.tuples(st.floats(-0.95, 0.95), st.floats(-0.95, 0.95)),
       ang=st.floats(0, 2 * math.pi), mag=st.floats(0.1, 20), branch=st.sampled_from("+-"))
def test_constant_speed_exit_and_cone(x, ang, mag, branch):
    xi = mag * np.array([math.cos(ang), math.sin(ang)])
    bc = canonical_map(CovectorPoint(x, xi), branch, CONST, SQ)
    t, pt = straight_exit(x, xi if branch == "+" else -xi, SQ)
    assert abs(bc.s - t) <= 1e-6
    np.testing.assert_allclose(bc.point, pt, atol=1e-6)
    assert bc.tau == pytest.approx(-mag if branch == "+" else mag)
    assert abs(bc.eta) <= abs(bc.tau) * (1 + 1e-9)


def test_fast_spot_bends_ray_away_and_conserves_hamiltonian():
    start = CovectorPoint((0.12, -0.8), (0.0, 1.0))
    path = trace_ray(start, "+", BUMPY, SQ)
    H = path.hamiltonian(BUMPY)
    assert np.max(np.abs(H - H[0])) <= 1e-6 * H[0]
    # The fast spot acts as a diverging lens: the ray is pushed to larger x.
    assert path.exit_point[0] > 0.12 + 0.05
    # Fermat oracle: the geodesic is no slower than the straight chord to the same exit.
    a, b = start.x, path.exit_point
    s = np.linspace(0, 1, 20001)
    c, _, _ = BUMPY(a + (b - a) * s[:, None])
    chord_time = np.trapezoid(1 / c, s) * np.hypot(*(b - a))
    assert path.exit_time < chord_time


def test_tau_uses_speed_at_source():
    # c(x) = 1 far from the bump, but the ray crosses it.
    start = CovectorPoint((0.0, -0.9), (0.0, 3.0))
    assert BUMPY.value(start.x) == pytest.approx(1.0, abs=1e-8)
    bc = canonical_map(start, "+", BUMPY, SQ)
    assert bc.tau == pytest.approx(-3.0, abs=1e-6)
    bc = canonical_map(start, "-", BUMPY, SQ)
    assert bc.tau == pytest.approx(3.0, abs=1e-6)


def test_trace_errors():
    with pytest.raises(DomainError):
        trace_ray(CovectorPoint((2, 0), (1, 0)), "+", CONST, SQ)
    with pytest.raises(DomainError):
        trace_ray(CovectorPoint((0, 0), (1, 0)), "x", CONST, SQ)
    with pytest.raises(DomainError):
        trace_ray(CovectorPoint((0, 0), (0, 0)), "+", CONST, SQ)


@pytest.mark.parametrize("model", [CONST, BUMPY], ids=["constant", "bump"])
@pytest.mark.parametrize("branch", ["+", "-"])
def test_k0_round_trip(model, branch):
    rng = np.random.default_rng(7)
    for _ in range(10):
        x = rng.uniform(-0.8, 0.8, 2)
        xi = rng.normal(size=2)
        xi *= rng.uniform(0.5, 10) / np.hypot(*xi)
        src = CovectorPoint(x, xi)
        bc = canonical_map(src, branch, model, SQ)
        for p in (artifact_map_t(src, branch, 0, 0.3, model, SQ, image=bc),
                  artifact_map_y(src, branch, 0, bc.edge, 0.3, model, SQ, image=bc)):
            assert p.valid
            assert p.image.distance(src) <= 1e-6 * max(1.0, src.norm)
        back = inverse_canonical_map(bc, model, SQ)
        np.testing.assert_allclose(back.xi, xi, atol=1e-6 * np.hypot(*xi))


def test_perpendicular_t_artifact_on_normal_line():
    src = CovectorPoint((0, 0), (0, 10))
    s_t = math.pi / 6
    p = artifact_map_t(src, "+", 1, s_t, CONST, SQ)
    assert p.valid and p.shifted == pytest.approx(2.0)
    # Straight rays along the normal: eta stays 0 and the image is on x = 0.
    assert p.image.x[0] == pytest.approx(0, abs=1e-9)
    assert p.image.xi[0] == pytest.approx(0, abs=1e-9)
    assert p.image.norm == pytest.approx(2.0)
    # Travel time s back along the same normal lands at the source itself.
    np.testing.assert_allclose(p.image.x, [0, 0], atol=1e-9)


def test_y_artifacts_keep_frequency_and_perpendicular_gives_none():
    src = CovectorPoint((0.2, -0.1), (2.0, 6.0))
    bc = canonical_map(src, "+", CONST, SQ)
    # |eta| = 2 exceeds pi / s_y, so a unit shift folds it back into the band.
    assert abs(bc.eta) > math.pi / 2.0
    found = 0
    for k in (-2, -1, 1, 2):
        p = artifact_map_y(src, "+", k, bc.edge, 2.0, CONST, SQ)
        if p.valid:
            found += 1
            assert p.image.norm == pytest.approx(src.norm, rel=1e-6)
    assert found >= 1
    perp = CovectorPoint((0.2, -0.1), (0.0, 6.0))
    e = canonical_map(perp, "+", CONST, SQ).edge
    for k in (-3, -2, -1, 1, 2, 3):
        assert artifact_map_y(perp, "+", k, e, 0.6, CONST, SQ).status == "invalid"
    other = artifact_map_y(perp, "+", 1, (e + 1) % 4, 0.6, CONST, SQ)
    assert other.status == "no-artifact"


@given(freq=st.floats(-200, 200), s=st.floats(0.02, 3))
def test_fold_index_matches_brute_force(freq, s):
    half = math.pi / s
    brute = [k for k in range(-400, 401) if -half <= freq + 2 * math.pi * k / s < half]
    assert brute == [fold_index(freq, s)]
    expect = [k for k in brute if k != 0 and abs(k) <= 2]
    assert valid_shifts(freq, s, 2) == expect


def test_branch_mirror_symmetry_at_centre():
    src = CovectorPoint((0, 0), (3.0, 0.5))
    spec = SamplingSpec(0.02, s_t=math.pi / 2)
    plus = artifact_map_t(src, "+", 1, spec.s_t, CONST, SQ)
    minus = artifact_map_t(src, "-", -1, spec.s_t, CONST, SQ)
    assert plus.valid and minus.valid
    np.testing.assert_allclose(plus.image.x, -minus.image.x, atol=1e-6)


def test_predict_all_enumeration():
    src = CovectorPoint((0.1, 0.0), (0.8, 0.1))
    B = src.norm
    assert predict_all_artifacts(src, SamplingSpec(0.02, s_t=0.9 * math.pi / B), CONST, SQ) == []
    mild = predict_all_artifacts(src, SamplingSpec(0.02, s_t=1.5 * math.pi / B), CONST, SQ,
                                 k_max=3)
    assert mild and all(abs(p.k) == 1 for p in mild)
    both = predict_all_artifacts(src, SamplingSpec(0.02, s_t=1.5 * math.pi / B,
                                                   s_y=[0.9 * math.pi / B] * 4), CONST, SQ)
    assert {p.variable for p in both} == {"t"}
    imgs = [p.image for p in both]
    for i, a in enumerate(imgs):
        for b in imgs[i + 1:]:
            assert a.distance(b) > 1e-6 or not np.allclose(a.xi, b.xi, atol=1e-6)
    with pytest.raises(DomainError):
        predict_all_artifacts(src, SamplingSpec(0.02, s_t=1.0), CONST, SQ, k_max=0)
