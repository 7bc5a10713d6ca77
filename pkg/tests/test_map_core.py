import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from logcircle import _kernels as kern
from logcircle.errors import NoZeros, NonMorse, SingularProximity
from logcircle.map_core import (CircleMap, ExperimentProfile, PhiSpec, distance_to_set, eval_derivatives, eval_map,
                                find_marked_sets, fit_derivative_bounds, verify_derivative_bounds)

mpmath.mp.prec = 200


def mp_map(a, L, x):
    x = mpmath.mpf(x)
    s = mpmath.sin(2 * mpmath.pi * x)
    return x + a + L * mpmath.log(abs(s))


def mp_derivs(L, x):
    t = 2 * mpmath.pi * mpmath.mpf(x)
    return 1 + 2 * mpmath.pi * L * mpmath.cot(t), -4 * mpmath.pi ** 2 * L / mpmath.sin(t) ** 2


def test_phi_rejects_constant():
    with pytest.raises(NoZeros):
        PhiSpec(cosine_coefficients=(), sine_coefficients=(), constant_offset=1.0)


def test_phi_rejects_positive_profile():
    with pytest.raises(NoZeros):
        PhiSpec(sine_coefficients=(1.0,), constant_offset=2.0)


def test_phi_double_zero_has_no_sign_change():
    # 1 + sin(2 pi x) touches zero at x = 3/4 without crossing
    with pytest.raises(NoZeros):
        PhiSpec(sine_coefficients=(1.0,), constant_offset=1.0)


def test_phi_rejects_flat_crossing():
    # sin^3(2 pi x) = (3 sin(2 pi x) - sin(6 pi x)) / 4 crosses zero with zero slope
    with pytest.raises(NonMorse):
        PhiSpec(sine_coefficients=(0.75, 0.0, -0.25))


def test_circle_map_validates_parameters():
    with pytest.raises(ValueError):
        CircleMap(1.0, 10.0)
    with pytest.raises(ValueError):
        CircleMap(0.1, 0.0)


def test_singular_set_of_sine():
    m = CircleMap(0.3, 200.0)
    assert m.marked.singular.points == pytest.approx((0.0, 0.5), abs=1e-15)


@pytest.mark.parametrize("L", [10.0, 200.0, 1e4])
def test_critical_set_matches_closed_form(L):
    # f' = 1 + 2 pi L cot(2 pi x) vanishes at x = 1/4 + atan(1/(2 pi L)) / (2 pi) and its half-turn shift
    c = 0.25 + math.atan(1.0 / (2 * math.pi * L)) / (2 * math.pi)
    crit, _ = find_marked_sets(CircleMap(0.1, L))
    assert crit.points == pytest.approx((c, c + 0.5), abs=1e-14)
    assert all(r <= 1e-9 for r in crit.certification)


def test_eval_map_matches_high_precision(small_map):
    for x in np.linspace(0.013, 0.987, 41):
        if min(abs(x), abs(x - 0.5)) < 1e-3:
            continue
        want = mp_map(small_map.a, small_map.L, x)
        got = eval_map(small_map, x, lift=True)
        assert got == pytest.approx(float(want), rel=1e-13, abs=1e-12)


def test_eval_map_reduces_mod_one(small_map):
    y = eval_map(small_map, 0.1)
    assert 0.0 <= y < 1.0
    assert y == pytest.approx(eval_map(small_map, 0.1, lift=True) % 1.0, abs=1e-12)


def test_derivatives_match_high_precision():
    m = CircleMap(0.2, 200.0)
    for x in (0.01, 0.2, 0.2501, 0.37, 0.49, 0.77, 0.9):
        fp, fpp = eval_derivatives(m, x)
        wp, wpp = mp_derivs(m.L, x)
        assert fp == pytest.approx(float(wp), rel=1e-11)
        assert fpp == pytest.approx(float(wpp), rel=1e-11)


def test_singular_points_raise():
    m = CircleMap(0.2, 200.0)
    with pytest.raises(SingularProximity):
        eval_map(m, 0.5)
    with pytest.raises(SingularProximity):
        eval_derivatives(m, 1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-3, max_value=0.499), st.integers(min_value=-3, max_value=3))
def test_lift_commutes_with_integer_shift(x, k):
    m = CircleMap(0.41, 200.0)
    a, L, tp = m.args
    assert kern.f_lift(a, L, tp, x + k) - kern.f_lift(a, L, tp, x) == pytest.approx(k, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=0.0, max_value=1.0, exclude_max=True), st.floats(min_value=-0.05, max_value=0.05))
def test_accurate_increment_agrees_with_direct_difference(x, d):
    m = CircleMap(0.41, 200.0)
    a, L, tp = m.args
    md = m.marked
    if min(kern.dist_to(x, md.sps), kern.dist_to(x + d, md.sps)) < 1e-3 or abs(d) < 1e-9:
        return
    if math.floor(2 * x) != math.floor(2 * (x + d)):
        return  # crossing a singular point is undefined
    direct = kern.f_lift(a, L, tp, x + d) - kern.f_lift(a, L, tp, x)
    assert kern.f_delta(a, L, tp, x, d) == pytest.approx(direct, rel=1e-8, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=0.0, max_value=1.0, exclude_max=True))
def test_distance_to_set_is_circle_distance(x):
    _, sing = find_marked_sets(CircleMap(0.1, 20.0))
    want = min(min(abs(x - p), 1 - abs(x - p)) for p in sing.points)
    assert distance_to_set(sing, x) == pytest.approx(want, abs=1e-15)


@pytest.mark.parametrize("L", [100.0, 1000.0])
def test_derivative_bounds_fit_and_reverify(L):
    m = CircleMap(0.3, L)
    b = fit_derivative_bounds(m, 100_000)
    assert math.isfinite(b.K0) and b.K0 > 1.0
    assert 0.0 < b.eps0 <= 0.25
    checks = verify_derivative_bounds(m, b, 100_000)
    assert checks["first_derivative"] and checks["second_derivative"] and checks["curvature_near_critical"]


def test_practical_profile_constants():
    p = ExperimentProfile.practical(200.0)
    assert p.delta == pytest.approx(0.01)
    assert p.delta == pytest.approx(200.0 ** (-p.alpha * p.N0))
    assert p.M0 == 5
    assert p.sigma == pytest.approx(0.1 * 200.0 ** (-1 / 6))


def test_practical_profile_rejects_inverted_scales():
    with pytest.raises(ValueError):
        ExperimentProfile(lam=0.3, alpha=0.3, N0=3, delta=0.5, sigma=0.1, M0=5, mode="practical")


def test_with_a_shares_marked_sets():
    m = CircleMap(0.1, 200.0)
    md = m.marked
    m2 = m.with_a(0.7)
    assert m2.a == 0.7 and m2.marked is md
