import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from logcircle import _kernels as kern
from logcircle.errors import BudgetExceeded, GrowthFailed
from logcircle.inducing import (build_full_return_map, build_stopping_partition, certify_good_pair,
                                check_stopped_element, default_N1, epsilon0_candidates, grow_to_full_circle,
                                refine_step, root_element, tail_statistics, write_branches_csv,
                                write_induced_summary)
from logcircle.map_core import CircleMap, ExperimentProfile, eval_map, fit_derivative_bounds
from logcircle.orbit_engine import compute_contraction, iterate_orbit

OMEGAS = [(0.45, 0.55), (0.2, 0.3), (0.3, 0.4), (0.6, 0.7), (0.05, 0.15), (0.8, 0.95)]


@pytest.fixture(scope="module")
def bounds(canonical_map):
    return fit_derivative_bounds(canonical_map, 100_000)


@pytest.fixture(scope="module")
def canonical_partition(canonical_map, canonical_profile):
    return build_stopping_partition(canonical_map, (0.1, 0.11), canonical_profile, samples=3000,
                                    rng=np.random.default_rng(1))


def _forward_image(m, cut, points=33):
    """Image of a cut piece by sampling its interior and applying f on the lift."""
    a, L, tp = m.args
    us = np.linspace(cut[0], cut[1], points)
    ys = np.array([kern.f_lift(a, L, tp, float(u)) for u in us])
    return ys.min(), ys.max()


def _assert_children_tile(m, parent, children):
    cuts = sorted(c.cut for c in children)
    assert cuts[0][0] == pytest.approx(parent.image[0], abs=1e-12)
    assert cuts[-1][1] == pytest.approx(parent.image[1], abs=1e-12)
    for (_, hi), (lo, _) in zip(cuts, cuts[1:]):
        assert lo == hi
    assert all(hi > lo for lo, hi in cuts)


# ---------------------------------------------------------------------------
# refine_step


def test_refine_tiny_interval_gives_one_uncut_child(canonical_map, canonical_profile):
    parent = root_element((0.1, 0.1 + 1e-9))
    (child,) = refine_step(canonical_map, parent, 1, canonical_profile)
    assert child.cut == parent.image
    assert child.interval == parent.interval
    assert child.generation_log == [(1, "I")]
    y0, y1 = _forward_image(canonical_map, child.cut)
    k = math.floor(y0)
    assert child.image[0] == pytest.approx(y0 - k, abs=1e-12)
    assert child.image[1] == pytest.approx(y1 - k, abs=1e-12)


def test_refine_straddling_singular_point_splits(canonical_map, canonical_profile):
    parent = root_element((0.495, 0.505))
    children = refine_step(canonical_map, parent, 1, canonical_profile)
    assert len(children) >= 2
    _assert_children_tile(canonical_map, parent, children)
    assert all(c.generation_log[-1] == (1, "II") for c in children)
    # no resolved child contains the singular point
    for c in children:
        if c.resolved:
            assert not c.cut[0] < 0.5 < c.cut[1]
    assert any(c.cut[1] <= 0.5 for c in children) and any(c.cut[0] >= 0.5 for c in children)


def test_refine_rejects_stopped_or_out_of_sync(canonical_map, canonical_profile):
    el = root_element((0.1, 0.11))
    with pytest.raises(ValueError):
        refine_step(canonical_map, el, 2, canonical_profile)
    el.stop_time = 5
    with pytest.raises(ValueError):
        refine_step(canonical_map, el, 1, canonical_profile)


def test_five_step_lineage_matches_dense_sampling(canonical_map, canonical_profile):
    m = canonical_map
    el = root_element((0.1, 0.11))
    rng = np.random.default_rng(3)
    for step in range(1, 6):
        children = refine_step(m, el, step, canonical_profile)
        _assert_children_tile(m, el, children)
        resolved = [c for c in children if c.resolved]
        assert len(resolved) >= 0.99 * len(children)
        for i in rng.choice(len(resolved), size=min(50, len(resolved)), replace=False):
            c = resolved[i]
            y0, y1 = _forward_image(m, c.cut)
            k = math.floor(y0)
            scale = 1e-9 * (y1 - y0) + 1e-12
            assert abs(c.image[0] - (y0 - k)) <= scale
            assert abs(c.image[1] - (y1 - k)) <= scale
            assert c.time == step
            if c.stop_time is not None:
                assert c.stop_time >= canonical_profile.M0 and c.image_length >= canonical_profile.sqrt_delta
        pending = [c for c in resolved if c.stop_time is None]
        el = pending[len(pending) // 2]


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=0.0, max_value=0.999), st.floats(min_value=1e-6, max_value=1e-3))
def test_first_step_conserves_length(x, w):
    m = CircleMap(0.303, 200.0)
    prof = ExperimentProfile.practical(200.0)
    parent = root_element((x, x + w))
    children = refine_step(m, parent, 1, prof)
    _assert_children_tile(m, parent, children)
    total = math.fsum(math.exp(c.log_length) for c in children if c.log_length > -math.inf)
    assert total == pytest.approx(w, rel=1e-10)


# ---------------------------------------------------------------------------
# stopping-time partition


def test_partition_invariants(canonical_partition, canonical_profile):
    part = canonical_partition
    I = part.base_interval
    assert part.unresolved_measure <= 0.1 * part.base_length
    assert part.tail_counts[0] == pytest.approx(part.base_length, abs=1e-12)
    tails = [part.tail_counts[n] for n in sorted(part.tail_counts)]
    assert all(b <= a for a, b in zip(tails, tails[1:]))
    els = part.elements
    for a, b in zip(els, els[1:]):
        assert a.interval[1] <= b.interval[0]
    assert I[0] <= els[0].interval[0] and els[-1].interval[1] <= I[1]
    for e in els:
        # endpoints may coincide at double resolution; the log length keeps the size
        assert e.interval[0] <= e.interval[1]
        assert math.isfinite(e.log_length) and e.log_length < math.log(part.base_length)
        assert all(check_stopped_element(e, canonical_profile).values())


def test_partition_tails_decay_log_linearly(canonical_partition, canonical_profile):
    slope, _, r2 = canonical_partition.tail_fit(canonical_profile.M0)
    assert slope < 0
    assert r2 >= 0.9


def test_elements_far_from_critical_points_stop_early(canonical_partition, canonical_profile):
    quiet = [e for e in canonical_partition.elements if not e.itinerary]
    assert len(quiet) > 100
    times = np.array([e.stop_time for e in quiet])
    assert times.min() == canonical_profile.M0
    assert np.mean(times == canonical_profile.M0) > 0.5
    assert times.max() <= 2 * canonical_profile.M0


def test_enumerate_mode_conserves_mass():
    m = CircleMap(0.3, 10.0)
    prof = ExperimentProfile.practical(10.0, delta=0.05, sigma_scale=1.0, M0=2)
    part = build_stopping_partition(m, (0.1, 0.125), prof, mode="enumerate", max_steps=2, unresolved_limit=1.0)
    assert len(part.elements) > 100
    assert part.resolved_measure() + part.unresolved_measure == pytest.approx(0.025, abs=1e-10)
    for a, b in zip(part.elements, part.elements[1:]):
        assert a.interval[1] <= b.interval[0] + 1e-15
    assert all(e.stop_time == 2 for e in part.elements)


def test_partition_rejects_bad_base_and_budget(canonical_map, canonical_profile):
    with pytest.raises(ValueError):
        build_stopping_partition(canonical_map, (0.1, 0.3), canonical_profile)
    with pytest.raises(ValueError):
        build_stopping_partition(canonical_map, (0.1, 0.1005), canonical_profile)
    with pytest.raises(BudgetExceeded) as info:
        build_stopping_partition(canonical_map, (0.1, 0.11), canonical_profile, max_steps=3, samples=100)
    assert info.value.partial.unresolved_measure == pytest.approx(0.01)


# ---------------------------------------------------------------------------
# growth to the full circle


def test_singular_neighbourhood_wraps_in_one_iterate(canonical_map, canonical_profile, bounds):
    gp = grow_to_full_circle(canonical_map, (0.45, 0.55), canonical_profile, bounds)
    assert gp.scenario == "singular"
    assert gp.M == 1
    lo, hi = gp.inner
    # one side of the singular point, inside its delta-neighbourhood
    assert 0.5 < lo < hi <= 0.5 + canonical_profile.delta
    span = abs(eval_map(canonical_map, hi, lift=True) - eval_map(canonical_map, lo, lift=True))
    assert span >= 1.0 - 1e-6


@pytest.mark.parametrize("mode", ["lemma", "greedy"])
@pytest.mark.parametrize("omega", OMEGAS)
def test_good_pair_conditions(canonical_map, canonical_profile, bounds, omega, mode):
    gp = grow_to_full_circle(canonical_map, omega, canonical_profile, bounds, mode=mode)
    c = gp.certificate
    third = (omega[1] - omega[0]) / 3
    assert omega[0] + third <= gp.inner[0] < gp.inner[1] <= omega[1] - third
    assert c["components_ok"]
    assert c["injective"] and c["covers_circle"]
    fine = certify_good_pair(canonical_map, gp.outer, gp.inner, gp.M, canonical_profile, samples=10_001)
    assert fine["max_gap"] < 1e-3
    assert (gp.inner[1] - gp.inner[0]) >= gp.epsilon * (omega[1] - omega[0]) * (1 - 1e-12)
    assert c["min_dC"] >= gp.epsilon and c["min_dS"] >= gp.epsilon
    assert gp.M <= 2 * canonical_profile.M0


def test_epsilon_candidates(canonical_map, canonical_profile, bounds):
    N1 = default_N1(canonical_profile)
    cands = epsilon0_candidates(canonical_map, canonical_profile, bounds, N1, 0.25)
    assert cands["delta_over_10"] == canonical_profile.delta / 10
    assert cands["sigma_over_2"] == canonical_profile.sigma / 2
    assert cands["distortion_ratio"] == 0.25
    expected = math.inf
    for c in canonical_map.marked.cps:
        orb = iterate_orbit(canonical_map, eval_map(canonical_map, c), N1 + 1)
        cd = compute_contraction(canonical_map, orb, N1 + 1)
        expected = min(expected, math.exp(0.5 * (cd.log_Dn[N1 + 1] - math.log(bounds.K0 * canonical_map.L))))
    assert cands["binding_radius"] == pytest.approx(expected, rel=1e-9)
    assert cands["epsilon0"] == min(v for k, v in cands.items() if k != "epsilon0")


def test_growth_errors(canonical_map, canonical_profile, bounds):
    with pytest.raises(ValueError):
        grow_to_full_circle(canonical_map, (0.2, 0.25), canonical_profile, bounds)
    with pytest.raises(ValueError):
        grow_to_full_circle(canonical_map, (0.2, 0.3), canonical_profile, bounds, mode="other")
    with pytest.raises(GrowthFailed):
        grow_to_full_circle(canonical_map, (0.2, 0.3), canonical_profile, bounds, mode="greedy", margin=0.4)


# ---------------------------------------------------------------------------
# induced map


def test_induced_branches(canonical_imap, canonical_profile):
    imap = canonical_imap
    M0 = canonical_profile.M0
    assert imap.total_mass >= 0.999
    assert len(imap.branches) > 100
    for b in imap.branches:
        assert b.return_time > M0
        times = b.large_scale_times
        assert times[0] == 0
        assert all(t1 - t0 >= M0 for t0, t1 in zip(times, times[1:]))
        assert b.return_time == times[-1] + b.tail_step
        assert 1 <= b.tail_step <= 2 * M0
        assert b.coverage_defect <= 1e-6
        assert b.max_gap < 1e-3
        assert b.monotone
    assert math.isfinite(imap.distortion_constant)


def test_induced_orbits_follow_the_map(canonical_map, canonical_imap):
    a, L, tp = canonical_map.args
    imap = canonical_imap
    ok = np.flatnonzero(imap.resolved())
    for i in ok[::40]:
        ob = imap.orbit(i)
        assert ob.shape[0] == imap.R[i]
        assert ob[0] == pytest.approx(imap.x[i], abs=1e-12)
        for u, v in zip(ob, ob[1:]):
            y = kern.f_lift(a, L, tp, float(u))
            assert abs((y - v + 0.5) % 1.0 - 0.5) < 1e-6
        y = kern.f_lift(a, L, tp, float(ob[-1]))
        assert abs((y - imap.Fx[i] + 0.5) % 1.0 - 0.5) < 1e-6
        assert imap.log_dF[i] == pytest.approx(kern.sum_log_deriv(a, L, tp, ob), rel=1e-12)


def test_induced_budget_returns_partial(canonical_map, canonical_profile):
    with pytest.raises(BudgetExceeded) as info:
        build_full_return_map(canonical_map, canonical_profile, samples=200, max_stages=1,
                              rng=np.random.default_rng(0), distortion_branches=0)
    part = info.value.partial
    assert 0.0 <= part.total_mass < 0.999
    assert part.unresolved_mass == pytest.approx(1.0 - part.total_mass)


def test_tail_statistics(canonical_imap):
    counts, (rate, _, r2) = tail_statistics(canonical_imap)
    assert math.fsum(counts.values()) == pytest.approx(canonical_imap.total_mass, abs=1e-12)
    assert rate < 0
    counts_hi, fit_hi = tail_statistics(canonical_imap, threshold=1e-2)
    assert counts_hi == counts
    assert fit_hi != (rate, _, r2)


def test_tail_statistics_needs_mass(canonical_map, canonical_profile):
    partial = build_full_return_map(canonical_map, canonical_profile, samples=50, max_stages=1,
                                    rng=np.random.default_rng(0), distortion_branches=0, strict=False)
    assert partial.total_mass <= 0.9
    with pytest.raises(ValueError):
        tail_statistics(partial)


def test_induced_artifacts(canonical_imap, tmp_path):
    write_branches_csv(canonical_imap, tmp_path / "b.csv")
    write_induced_summary(canonical_imap, tmp_path / "s.json")
    with open(tmp_path / "b.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(canonical_imap.branches)
    assert int(rows[0]["R"]) == canonical_imap.branches[0].return_time
    summary = json.loads((tmp_path / "s.json").read_text())
    assert summary["total_mass"] == canonical_imap.total_mass
    assert summary["tail_fit"]["rate"] < 0
