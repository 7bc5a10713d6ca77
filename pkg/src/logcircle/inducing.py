"""Stopping-time partitions, growth to the full circle and the induced Markov map.

Elements are tracked through their current image ("image coordinates"),
because base widths fall below double resolution after a few iterates.
Two ways of building a partition are offered:

* ``enumerate`` refines every element (feasible for few steps or small L);
* ``sample`` follows only the elements holding uniformly drawn points, so
  masses and tails are sample fractions of the base interval.

The induced map is always built by sampling.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from . import _kernels as kern
from .errors import BudgetExceeded, GrowthFailed, UnresolvableCut
from .map_core import CircleMap, DerivativeBounds, ExperimentProfile
from .return_structure import BindingIntervals, build_binding_intervals, r_index

SLIVER = 1e-13
MAX_CUTS = 1_000_000
Interval = tuple[float, float]


class _Scratch:
    """Work arrays shared by the descent kernels."""

    def __init__(self, max_steps: int):
        n = max_steps + 2
        self.max_steps = max_steps
        self.gl = np.zeros(n)
        self.gh = np.zeros(n)
        self.gsl = np.zeros(n, dtype=np.int64)
        self.gsh = np.zeros(n, dtype=np.int64)
        self.kk = np.zeros(n)
        self.chain = np.zeros(n)
        self.chain2 = np.zeros(n)
        self.chain3 = np.zeros(n)
        self.dtmp = np.zeros(n)
        self.tpos = np.zeros(n)
        self.tcase = np.zeros(n, dtype=np.int64)

    def history(self, S: int) -> "History":
        return History(self.gl[:S].copy(), self.gh[:S].copy(), self.gsl[:S].copy(),
                       self.gsh[:S].copy(), self.kk[:S + 1].copy())


@dataclass(frozen=True, eq=False)
class History:
    """Monotone gaps visited at times 0..n-1 and the integer shifts of the images."""

    gl: np.ndarray
    gh: np.ndarray
    gsl: np.ndarray
    gsh: np.ndarray
    kk: np.ndarray

    @classmethod
    def empty(cls) -> "History":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                   np.zeros(1))

    def extended(self, glo, ghi, gslo, gshi, k) -> "History":
        return History(np.append(self.gl, glo), np.append(self.gh, ghi),
                       np.append(self.gsl, int(gslo)), np.append(self.gsh, int(gshi)),
                       np.append(self.kk, k))

    def padded(self, size: int) -> tuple[np.ndarray, ...]:
        def pad(v, n, dtype):
            out = np.zeros(n, dtype=dtype)
            out[:v.shape[0]] = v
            return out
        return (pad(self.gl, size, float), pad(self.gh, size, float), pad(self.gsl, size, np.int64),
                pad(self.gsh, size, np.int64), pad(self.kk, size + 1, float))


# ---------------------------------------------------------------------------
# stopping-time partition


@dataclass(eq=False)
class PartitionElement:
    """An element of a stopping-time partition.

    ``interval`` is the base interval (its endpoints may coincide at double
    resolution, ``log_length`` keeps the true size).  ``image`` is the image
    at time ``time`` in normalised lift coordinates.
    """

    interval: Interval
    log_length: float
    stop_time: int | None
    image: Interval
    time: int
    orientation: float = 1.0
    history: History = field(default_factory=History.empty, repr=False)
    itinerary: list[tuple[int, int, float]] = field(default_factory=list)
    generation_log: list[tuple[int, str]] = field(default_factory=list)
    resolved: bool = True
    min_log_derivative: float = math.nan
    cut: Interval | None = None  # the piece at time ``time - 1`` that was cut out of the parent image

    @property
    def length(self) -> float:
        return math.exp(self.log_length)

    @property
    def image_length(self) -> float:
        return self.image[1] - self.image[0]


def root_element(I: Interval) -> PartitionElement:
    lo, hi = float(I[0]), float(I[1])
    return PartitionElement(interval=(lo, hi), log_length=math.log(hi - lo), stop_time=None,
                            image=(lo, hi), time=0)


def _itinerary_entry(m: CircleMap, profile: ExperimentProfile, step: int, lo: float, hi: float):
    cps = m.marked.cps
    best = None
    for c in cps:
        u = c - lo
        u -= math.floor(u)
        if lo + u <= hi:
            return (step, math.inf, float(c))  # image straddles c
        d = min(kern.dist_to(lo, np.array([c])), kern.dist_to(hi, np.array([c])))
        if d < profile.delta and (best is None or d < best[0]):
            best = (d, float(c))
    if best is None:
        return None
    return (step, r_index(best[0], m.L), best[1])


def refine_step(m: CircleMap, element: PartitionElement, step: int, profile: ExperimentProfile,
                bindings: Sequence[BindingIntervals] | None = None, strict: bool = False,
                sliver: float = SLIVER, max_cuts: int = MAX_CUTS) -> list[PartitionElement]:
    """Children of ``element`` after the cuts of time ``step``, pushed to time ``step``.

    Unresolvable pieces (slivers at marked points, undefined widths) come back
    with ``resolved=False``; with ``strict`` an undefined width raises.
    """
    if element.stop_time is not None:
        raise ValueError("element already stopped")
    if element.time != step - 1:
        raise ValueError(f"element image is at time {element.time}, expected {step - 1}")
    a, L, tp = m.args
    md = m.marked
    gl, gh, gsl, gsh, kk = element.history.padded(step + 1)
    n = step + 2
    chain, chain2, chain3, dtmp = (np.zeros(n) for _ in range(4))
    cap = 4096
    while True:
        out_c0, out_c1, out_lw = np.zeros(cap), np.zeros(cap), np.zeros(cap)
        out_flag = np.zeros(cap, dtype=np.int64)
        out_case = np.zeros(cap, dtype=np.int64)
        status, _, _, _, cnt = kern.refine(a, L, tp, md.mp, md.mk, md.cps, md.sps, gl, gh, gsl, gsh, kk,
                                           step, element.image[0], element.image[1], element.orientation,
                                           math.nan, 1, sliver, max_cuts, chain, chain2, chain3, dtmp,
                                           out_c0, out_c1, out_lw, out_flag, out_case)
        if cnt <= cap:
            break
        cap = 2 * cnt
    if strict and status == 3:
        raise UnresolvableCut(f"a cut width is undefined at step {step}")
    children = []
    for i in range(cnt):
        c0, c1 = sorted((float(out_c0[i]), float(out_c1[i])))
        ok = out_flag[i] == 0
        case = "I" if out_case[i] == 1 else "II"
        # base endpoints and log length from the time step-1 piece
        b0 = b1 = math.nan
        lgl = math.nan
        if kern.chain_back(a, L, tp, gl, gh, gsl, gsh, kk, step, c0, chain):
            b0 = float(chain[0])
            _, lgl = kern.back_offset(a, L, tp, chain, step, gl, gh, c1 - c0)
        if kern.chain_back(a, L, tp, gl, gh, gsl, gsh, kk, step, c1, chain):
            b1 = float(chain[0])
        if step == 1:
            lgl = math.log(c1 - c0) if c1 > c0 else -math.inf
        base = (min(b0, b1), max(b0, b1))
        if not ok:
            # slivers touch a marked point, so their image is not defined
            children.append(PartitionElement(
                interval=base, log_length=float(lgl), stop_time=None, image=(math.nan, math.nan), time=step,
                orientation=element.orientation, history=element.history, itinerary=list(element.itinerary),
                generation_log=element.generation_log + [(step, case)], resolved=False, cut=(c0, c1)))
            continue
        ylo, yhi, _, flip, glo, ghi, gslo, gshi = kern.push_child(a, L, tp, md.mp, md.mk, c0, c1, math.nan)
        k = math.floor(ylo)
        hist = element.history.extended(glo, ghi, gslo, gshi, k)
        img = (ylo - k, yhi - k)
        stopped = ok and step >= profile.M0 and yhi - ylo >= profile.sqrt_delta
        itin = list(element.itinerary)
        if ok:
            entry = _itinerary_entry(m, profile, step, img[0], img[1])
            if entry is not None:
                itin.append(entry)
        min_ld = math.nan
        if stopped:
            min_ld = _min_log_derivative(m, hist, step, img)
        children.append(PartitionElement(
            interval=base, log_length=float(lgl), stop_time=step if stopped else None,
            image=img, time=step, orientation=-element.orientation if flip else element.orientation,
            history=hist, itinerary=itin, generation_log=element.generation_log + [(step, case)],
            resolved=bool(ok and lgl == lgl), min_log_derivative=min_ld, cut=(c0, c1)))
    return children


def _min_log_derivative(m: CircleMap, hist: History, S: int, img: Interval, probes: int = 5) -> float:
    a, L, tp = m.args
    chain = np.zeros(S + 2)
    best = math.inf
    for u in np.linspace(img[0], img[1], probes):
        _, ld = kern.pull_back_log_deriv(a, L, tp, hist.gl, hist.gh, hist.gsl, hist.gsh, hist.kk, S,
                                         float(u), chain)
        if ld == ld:
            best = min(best, ld)
    return best


@dataclass(eq=False)
class StoppingPartition:
    """``tail_counts[n]`` is the measure of {S >= n} for n = 0..max observed."""

    base_interval: Interval
    elements: list[PartitionElement]
    unresolved_measure: float
    tail_counts: dict[int, float]
    mode: Literal["enumerate", "sample"] = "enumerate"
    samples: int = 0
    stop_times: np.ndarray | None = field(default=None, repr=False)

    @property
    def base_length(self) -> float:
        return self.base_interval[1] - self.base_interval[0]

    def resolved_measure(self) -> float:
        if self.mode == "enumerate":
            return float(sum(e.length for e in self.elements))
        return self.base_length - self.unresolved_measure

    def tail_fit(self, n_min: int) -> tuple[float, float, float]:
        ns = np.array([n for n, v in sorted(self.tail_counts.items()) if n >= n_min and v > 1e-8])
        vs = np.array([self.tail_counts[n] for n in ns])
        return _loglinear_fit(ns, vs)


def _loglinear_fit(ns: np.ndarray, vs: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line through (n, ln v); returns (slope, intercept, r^2)."""
    if ns.size < 2:
        return math.nan, math.nan, math.nan
    y = np.log(vs)
    slope, intercept = np.polyfit(ns.astype(float), y, 1)
    pred = slope * ns + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def _tails_from_stop_times(times: np.ndarray, weight: float, horizon: int) -> dict[int, float]:
    hist = np.bincount(times, minlength=horizon + 2).astype(float) * weight
    tail = np.cumsum(hist[::-1])[::-1]
    return {n: float(tail[n]) for n in range(horizon + 1)}


def build_stopping_partition(m: CircleMap, I: Interval, profile: ExperimentProfile,
                             bindings: Sequence[BindingIntervals] | None = None, max_steps: int = 60,
                             mode: Literal["enumerate", "sample"] = "sample", samples: int = 1000,
                             rng: np.random.Generator | None = None, max_elements: int = 200_000,
                             unresolved_limit: float = 0.1) -> StoppingPartition:
    """Stopping-time partition of I: elements stop at the first n >= M0 with image >= sqrt(delta)."""
    lo, hi = float(I[0]), float(I[1])
    if not hi > lo:
        raise ValueError("empty base interval")
    length = hi - lo
    if not profile.delta / 10 * (1 - 1e-12) <= length <= profile.delta * (1 + 1e-12):
        raise ValueError("base interval length must lie in [delta/10, delta]")
    if mode == "enumerate":
        part = _enumerate_partition(m, (lo, hi), profile, bindings, max_steps, max_elements)
    elif mode == "sample":
        part = _sample_partition(m, (lo, hi), profile, max_steps, samples, rng or np.random.default_rng(0))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if part.unresolved_measure > unresolved_limit * length:
        raise BudgetExceeded(f"unresolved measure {part.unresolved_measure:.3g} exceeds "
                             f"{unresolved_limit:.0%} of the base interval", partial=part)
    return part


def _enumerate_partition(m, I, profile, bindings, max_steps, max_elements) -> StoppingPartition:
    active = [root_element(I)]
    stopped: list[PartitionElement] = []
    unresolved = 0.0
    stop_times: list[tuple[int, float]] = []
    for step in range(1, max_steps + 1):
        nxt = []
        for el in active:
            for ch in refine_step(m, el, step, profile, bindings):
                if not ch.resolved:
                    unresolved += ch.length if ch.log_length == ch.log_length else 0.0
                elif ch.stop_time is not None:
                    stopped.append(ch)
                    stop_times.append((step, ch.length))
                else:
                    nxt.append(ch)
        active = nxt
        if not active:
            break
        if len(stopped) + len(active) > max_elements:
            break
    pending = float(sum(e.length for e in active))
    unresolved += pending
    horizon = max([s for s, _ in stop_times], default=0)
    total = I[1] - I[0]
    tails = {}
    for n in range(horizon + 1):
        tails[n] = float(sum(w for s, w in stop_times if s >= n)) + pending
    stopped.sort(key=lambda e: e.interval[0])
    return StoppingPartition(base_interval=I, elements=stopped, unresolved_measure=min(unresolved, total),
                             tail_counts=tails, mode="enumerate", samples=0,
                             stop_times=np.array([s for s, _ in stop_times], dtype=np.int64))


@dataclass(frozen=True)
class DescentResult:
    status: int
    S: int
    image: Interval
    target: float
    orientation: float
    piece: Interval
    history: History | None
    positions: np.ndarray


def descend_point(m: CircleMap, base: Interval, x: float, profile: ExperimentProfile, scratch: _Scratch,
                  keep_history: bool = False) -> DescentResult:
    """Follow the refinement of ``base`` along the element holding x until it stops."""
    a, L, tp = m.args
    md = m.marked
    s = scratch
    st, S, elo, ehi, tS, orient, c0, c1 = kern.descend(
        a, L, tp, md.mp, md.mk, md.cps, md.sps, base[0], base[1], x, profile.M0, profile.sqrt_delta,
        s.max_steps, SLIVER, MAX_CUTS, s.gl, s.gh, s.gsl, s.gsh, s.kk, s.chain, s.chain2, s.chain3, s.dtmp,
        s.tpos, s.tcase)
    hist = s.history(S) if (keep_history and st == 0) else None
    return DescentResult(int(st), int(S), (elo, ehi), tS, orient, (c0, c1), hist, s.tpos[:S + 1].copy())


def _sample_partition(m, I, profile, max_steps, samples, rng) -> StoppingPartition:
    a, L, tp = m.args
    scratch = _Scratch(max_steps)
    elements: dict[tuple[int, float], PartitionElement] = {}
    times = []
    fails = 0
    xs = I[0] + (I[1] - I[0]) * rng.random(samples)
    for x in xs:
        r = descend_point(m, I, float(x), profile, scratch)
        if r.status != 0:
            fails += 1
            times.append(max_steps + 1)
            continue
        times.append(r.S)
        s = scratch
        b0, b1, lg, ld0, ld1, ok = kern.element_summary(a, L, tp, s.gl, s.gh, s.gsl, s.gsh, s.kk, r.S,
                                                        r.piece[0], r.piece[1], s.chain)
        key = (r.S, float(b0))
        if key in elements:
            continue
        ld_t = kern.sum_log_deriv(a, L, tp, r.positions[:r.S])
        itin = []
        for j in range(r.S + 1):
            p = float(r.positions[j])
            d = kern.dist_to(p, m.marked.cps)
            if d < profile.delta:
                c = float(m.marked.cps[np.argmin(np.abs((p - m.marked.cps + 0.5) % 1.0 - 0.5))])
                itin.append((j, r_index(d, m.L) if d > 0 else math.inf, c))
        cases = [(j + 1, "I" if scratch.tcase[j] == 1 else "II") for j in range(r.S)]
        elements[key] = PartitionElement(
            interval=(float(b0), float(b1)), log_length=float(lg), stop_time=r.S, image=r.image, time=r.S,
            orientation=r.orientation, itinerary=itin, generation_log=cases, resolved=bool(ok),
            min_log_derivative=float(min(ld0, ld1, ld_t)))
    times_arr = np.array(times, dtype=np.int64)
    weight = (I[1] - I[0]) / samples
    tails = _tails_from_stop_times(np.minimum(times_arr, max_steps + 1), weight, max_steps + 1)
    last = max((n for n, v in tails.items() if v > 0), default=0)
    tails = {n: v for n, v in tails.items() if n <= last}
    els = sorted(elements.values(), key=lambda e: e.interval[0])
    return StoppingPartition(base_interval=I, elements=els, unresolved_measure=fails * weight,
                             tail_counts=tails, mode="sample", samples=samples,
                             stop_times=times_arr[times_arr <= max_steps])


def check_stopped_element(el: PartitionElement, profile: ExperimentProfile) -> dict:
    """Large-scale and expansion checks for a stopped element."""
    return {
        "stop_time_ok": el.stop_time is not None and el.stop_time >= profile.M0,
        "large_scale": el.image_length >= profile.sqrt_delta,
        "expansion": el.min_log_derivative >= math.log(profile.delta ** (-1.0 / 3.0)),
    }


# ---------------------------------------------------------------------------
# growth to the full circle


@dataclass(frozen=True)
class GoodPair:
    outer: Interval
    inner: Interval
    M: int
    epsilon: float
    scenario: Literal["direct", "singular", "critical"] = "direct"
    epsilon_candidates: dict = field(default_factory=dict, compare=False)
    certificate: dict = field(default_factory=dict, compare=False)


def _compose(m: CircleMap, x: float, k: int) -> float:
    """f^k on the lift, without reducing modulo one."""
    a, L, tp = m.args
    for _ in range(k):
        x = kern.f_lift(a, L, tp, x)
    return x


def _image_interval(m: CircleMap, lo: float, hi: float) -> Interval:
    a, L, tp = m.args
    y0 = kern.f_lift(a, L, tp, lo)
    y1 = y0 + kern.f_delta(a, L, tp, lo, hi - lo)
    return (min(y0, y1), max(y0, y1))


def _split_at_marked(m: CircleMap, lo: float, hi: float) -> list[Interval]:
    pts = []
    for p in m.marked.mp:
        k = math.ceil(lo - p)
        q = p + k
        while q < hi:
            if q > lo:
                pts.append(q)
            q += 1.0
    edges = [lo] + sorted(pts) + [hi]
    return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1) if edges[i + 1] > edges[i]]


def _set_distance(m: CircleMap, lo: float, hi: float, pts: np.ndarray) -> float:
    for p in pts:
        u = p - lo
        u -= math.floor(u)
        if lo + u <= hi:
            return 0.0
    return min(kern.dist_to(lo, pts), kern.dist_to(hi, pts))


def certify_good_pair(m: CircleMap, outer: Interval, inner: Interval, M: int, profile: ExperimentProfile,
                      samples: int = 1001) -> dict:
    """Numerical check of the four good-pair conditions; returns the measured quantities."""
    md = m.marked
    lo, hi = inner
    left = inner[0] - outer[0]
    right = outer[1] - inner[1]
    ratio = (hi - lo) / (outer[1] - outer[0])
    dmin_c = dmin_s = math.inf
    u0, u1 = lo, hi
    monotone = True
    for _ in range(M):
        dmin_c = min(dmin_c, _set_distance(m, u0, u1, md.cps))
        dmin_s = min(dmin_s, _set_distance(m, u0, u1, md.sps))
        if dmin_c == 0.0 or dmin_s == 0.0:
            monotone = False
            break
        u0, u1 = _image_interval(m, u0, u1)
    span = u1 - u0 if monotone else math.nan
    ts = np.linspace(lo, hi, samples)
    ys = np.array([_compose(m, float(t), M) for t in ts])
    steps = np.diff(ys)
    same_sign = bool(np.all(steps > 0) or np.all(steps < 0))
    img = np.sort(ys - np.floor(ys))
    gaps = np.diff(np.concatenate([img, [img[0] + 1.0]]))
    eps = min(ratio, dmin_c, dmin_s)
    return {
        "inner_ratio": ratio,
        "left_component": left,
        "right_component": right,
        "components_ok": left >= profile.sqrt_delta / 3 * (1 - 1e-12) and right >= profile.sqrt_delta / 3 * (1 - 1e-12),
        "injective": monotone and same_sign and span <= 1.0 + 1e-6,
        "image_span": span,
        "covers_circle": monotone and abs(span - 1.0) <= 1e-6,
        "max_gap": float(gaps.max()),
        "min_dC": dmin_c,
        "min_dS": dmin_s,
        "epsilon": eps,
    }


def epsilon0_candidates(m: CircleMap, profile: ExperimentProfile, bounds: DerivativeBounds, N1: int,
                        eps_prime: float) -> dict:
    """The four quantities whose minimum is the growth constant."""
    radii = [build_binding_intervals(m, c, N1 + 1, bounds).radii[N1] for c in m.marked.cps]
    cands = {"delta_over_10": profile.delta / 10, "sigma_over_2": profile.sigma / 2,
             "binding_radius": float(min(radii)), "distortion_ratio": float(eps_prime)}
    cands["epsilon0"] = min(cands.values())
    return cands


def default_N1(profile: ExperimentProfile) -> int:
    return max(1, int(math.floor(10 * profile.alpha * profile.N0)))


def grow_to_full_circle(m: CircleMap, omega: Interval, profile: ExperimentProfile, bounds: DerivativeBounds,
                        mode: Literal["greedy", "lemma"] = "lemma", N1: int | None = None,
                        margin: float | None = None, grid: int = 256) -> GoodPair:
    """A good pair (omega, inner) with the inner interval in the middle third of omega.

    ``lemma`` follows the two growth scenarios (singular neighbourhood, then
    one more iterate; or a binding interval of a critical point followed for
    N1 + 1 iterates).  ``greedy`` takes the longest single full turn of f
    inside the middle third.
    """
    lo, hi = float(omega[0]), float(omega[1])
    if hi - lo < profile.sqrt_delta * (1 - 1e-12):
        raise ValueError("omega must have length at least sqrt(delta)")
    margin = profile.delta / 10 if margin is None else margin
    if mode == "greedy":
        a, L, tp = m.args
        found, j0, j1 = kern.best_full_branch(a, L, tp, m.marked.mp, m.marked.mk, lo, hi, margin, grid)
        if not found:
            raise GrowthFailed("no full turn of f inside the middle third", step=0)
        cert = certify_good_pair(m, (lo, hi), (j0, j1), 1, profile)
        return GoodPair((lo, hi), (j0, j1), 1, cert["epsilon"], "direct", {}, cert)
    if mode != "lemma":
        raise ValueError(f"unknown growth mode {mode!r}")
    return _grow_lemma(m, (lo, hi), profile, bounds, default_N1(profile) if N1 is None else N1)


def _pull_back(m: CircleMap, piece: Interval, k: int, target: float) -> float:
    """Point z of the monotone piece with f^k(z) = target (bisection on the lift)."""
    zl, zh = piece
    fl = _compose(m, zl, k)
    fh = _compose(m, zh, k)
    inc = fh > fl
    for _ in range(200):
        mid = 0.5 * (zl + zh)
        if mid <= zl or mid >= zh:
            break
        v = _compose(m, mid, k)
        if (v < target) == inc:
            zl = mid
        else:
            zh = mid
    return 0.5 * (zl + zh)


def _find_components(m: CircleMap, profile: ExperimentProfile, lo: float, hi: float) -> list[tuple[str, float]]:
    """Components of S_delta, then of C_delta, contained in the lift interval [lo, hi] (first copy of each point).

    Singular components come first: the critical scenario needs binding
    intervals that may sit below double resolution.
    """
    d = profile.delta
    out = []
    for kind, pts in (("singular", m.marked.sps), ("critical", m.marked.cps)):
        found = []
        for p in pts:
            q = p + math.ceil(lo + d - p)
            if q + d <= hi:
                found.append((kind, q))
        out.extend(sorted(found, key=lambda t: t[1]))
    return out


def _grow_lemma(m: CircleMap, omega: Interval, profile: ExperimentProfile, bounds: DerivativeBounds,
                N1: int) -> GoodPair:
    d = profile.delta
    third = (omega[1] - omega[0]) / 3
    mid = (omega[0] + third, omega[1] - third)
    # each piece: (base lo, base hi, image lo, image hi) with f^i monotone on it
    pieces = [(mid[0], mid[1], mid[0], mid[1])]
    for M in range(profile.M0 + 1):
        for b0, b1, y0, y1 in pieces:
            for kind, q in _find_components(m, profile, y0, y1):
                pair = _try_component(m, omega, profile, bounds, N1, (b0, b1), M, kind, q)
                if pair is not None:
                    return pair
        # delete the parts falling into C_delta or S_delta and iterate the rest
        nxt = []
        for b0, b1, y0, y1 in pieces:
            for u0, u1 in _outside_parts(m, y0, y1, d):
                z0 = _pull_back(m, (b0, b1), M, u0) if M else u0
                z1 = _pull_back(m, (b0, b1), M, u1) if M else u1
                i0, i1 = _image_interval(m, u0, u1)
                nxt.append((min(z0, z1), max(z0, z1), i0, i1))
        pieces = nxt
        if not pieces:
            break
    raise GrowthFailed("no critical or singular component reached within M0 iterates", step=profile.M0)


def _try_component(m, omega, profile, bounds, N1, piece, M, kind, q) -> GoodPair | None:
    d = profile.delta
    if kind == "singular":
        inner, k = _singular_branch(m, piece, M, q, d)
    else:
        inner, k = _critical_branch(m, piece, M, q, N1, bounds)
    if inner is None or not inner[1] > inner[0]:
        return None
    w0 = _pull_back(m, piece, M, q - d) if M else q - d
    w1 = _pull_back(m, piece, M, q + d) if M else q + d
    cert = certify_good_pair(m, omega, inner, k, profile)
    eps_prime = (inner[1] - inner[0]) / abs(w1 - w0)
    cands = epsilon0_candidates(m, profile, bounds, N1, eps_prime)
    return GoodPair(omega, inner, k, cert["epsilon"], kind, cands, cert)


def _outside_parts(m: CircleMap, lo: float, hi: float, d: float) -> list[Interval]:
    cuts = []
    for p in m.marked.mp:
        q = p + math.floor(lo - p)
        while q - d < hi:
            if q + d > lo:
                cuts.append((q - d, q + d))
            q += 1.0
    cuts.sort()
    out = []
    cur = lo
    for c0, c1 in cuts:
        if c0 > cur:
            out.append((cur, min(c0, hi)))
        cur = max(cur, c1)
    if cur < hi:
        out.append((cur, hi))
    return [p for p in out if p[1] > p[0]]


def _singular_branch(m, piece, M, s, d):
    """One full turn of f inside (s + d/10, s + d) or its mirror, pulled back by f^M."""
    a, L, tp = m.args
    md = m.marked
    for side in (1.0, -1.0):
        u0 = s + side * d / 10
        g, sh = kern.gap_of(md.mp, u0)
        glo, ghi, gslo, gshi = kern.gap_bounds(md.mp, md.mk, g, sh)
        fu = kern.f_lift(a, L, tp, u0)
        # moving away from s, |f| decreases towards the far side of the gap: step one turn
        far = s + side * d
        ffar = kern.f_lift(a, L, tp, far)
        if abs(ffar - fu) < 1.0:
            continue
        target = fu + (1.0 if ffar > fu else -1.0)
        u1 = kern.inv_gap(a, L, tp, glo, ghi, gslo, gshi, target)
        if u1 != u1:
            continue
        j = (min(u0, u1), max(u0, u1))
        if M == 0:
            return j, 1
        w0 = _pull_back(m, piece, M, j[0])
        w1 = _pull_back(m, piece, M, j[1])
        return (min(w0, w1), max(w0, w1)), M + 1
    return None, 0


def _critical_branch(m, piece, M, c, N1, bounds):
    """Sub-interval of the binding interval I_{N1}(c) wrapping the circle under f^(N1+1)."""
    cc = float(c - math.floor(c))
    b = build_binding_intervals(m, cc, N1, bounds)
    shift = c - cc
    for side in (1.0, -1.0):
        inner_r, outer_r = b.radii[N1 - 1], b.radii[N1 - 2]
        lo = c + side * inner_r
        hi = c + side * outer_r
        seg = (min(lo, hi), max(lo, hi))
        k = N1 + 1
        ys = [_compose(m, float(t), k) for t in np.linspace(seg[0], seg[1], 257)]
        if not (np.all(np.diff(ys) > 0) or np.all(np.diff(ys) < 0)):
            continue
        if abs(ys[-1] - ys[0]) < 1.0:
            continue
        z0 = seg[0]
        z1 = _pull_back(m, seg, k, ys[0] + (1.0 if ys[-1] > ys[0] else -1.0))
        j = (min(z0, z1), max(z0, z1))
        if M == 0:
            return j, k
        w0 = _pull_back(m, piece, M, j[0])
        w1 = _pull_back(m, piece, M, j[1])
        return (min(w0, w1), max(w0, w1)), M + k
    del shift
    return None, 0


# ---------------------------------------------------------------------------
# the induced Markov map


@dataclass(frozen=True, eq=False)
class Branch:
    """A branch of F = f^R, located by the sample that found it.

    ``log_width`` estimates ln|omega| as -ln|F'| at the sample.  ``turn`` is
    the whole turn of f at the last large-scale image; the certificate
    fields are measured there because base widths are below double
    resolution.
    """

    anchor: float
    return_time: int
    large_scale_times: tuple[int, ...]
    tail_step: int
    turn: Interval
    log_width: float
    coverage_defect: float
    max_gap: float
    monotone: bool
    epsilon: float

    @property
    def domain(self) -> Interval:
        w = math.exp(self.log_width)
        return (self.anchor - w / 2, self.anchor + w / 2)


@dataclass(eq=False)
class InducedMarkovMap:
    """Sample-based induced map; ``samples`` arrays hold one row per uniform draw."""

    branches: list[Branch]
    total_mass: float
    unresolved_mass: float
    x: np.ndarray = field(repr=False)
    Fx: np.ndarray = field(repr=False)
    R: np.ndarray = field(repr=False)
    log_dF: np.ndarray = field(repr=False)
    stages: np.ndarray = field(repr=False)
    orbit_offsets: np.ndarray = field(repr=False)
    orbit_points: np.ndarray = field(repr=False)
    branch_of: np.ndarray = field(repr=False)
    distortion_constant: float = math.nan
    distortion_samples: list = field(default_factory=list, repr=False)
    profile: ExperimentProfile | None = None

    @property
    def coverage_defect(self) -> np.ndarray:
        return np.array([b.coverage_defect for b in self.branches])

    def resolved(self) -> np.ndarray:
        return self.R > 0

    def orbit(self, i: int) -> np.ndarray:
        return self.orbit_points[self.orbit_offsets[i]:self.orbit_offsets[i + 1]]


def _cut_circle(delta: float) -> np.ndarray:
    n = math.ceil(1.0 / delta)
    return np.linspace(0.0, 1.0, n + 1)


def _leftover_piece(lo: float, hi: float, t: float, delta: float) -> Interval:
    k = max(1, math.ceil((hi - lo) / delta))
    w = (hi - lo) / k
    j = min(k - 1, max(0, int((t - lo) / w)))
    return (lo + j * w, hi if j == k - 1 else lo + (j + 1) * w)


def _branch_certificate(m: CircleMap, turn: Interval, points: int) -> tuple[float, float, bool]:
    a, L, tp = m.args
    defect, gap, mono = kern.turn_certificate(a, L, tp, float(turn[0]), float(turn[1]), points)
    return float(defect), float(gap), bool(mono)


def build_full_return_map(m: CircleMap, profile: ExperimentProfile, mass_target: float = 0.999,
                          samples: int = 20000, rng: np.random.Generator | None = None,
                          max_steps: int = 200, max_stages: int = 200, margin: float | None = None,
                          certificate_points: int = 10_000, distortion_branches: int = 200,
                          distortion_pairs: int = 20, strict: bool = True) -> InducedMarkovMap:
    """Alternate stopping-time descents and full-turn growth for uniformly drawn points.

    The circle is cut into pieces of length at most delta.  Each draw descends
    until its element reaches the large scale; if the draw lies on a whole
    turn of f in the middle third of that image the branch closes after one
    more iterate, otherwise the leftover component is cut into pieces of
    length at most delta and the next stage starts from the piece holding it.
    """
    rng = rng or np.random.default_rng(0)
    a, L, tp = m.args
    margin = profile.delta / 10 if margin is None else margin
    edges = _cut_circle(profile.delta)
    scratch = _Scratch(max_steps)
    xs = np.sort(rng.random(samples))
    Rs = np.zeros(samples, dtype=np.int64)
    Fx = np.full(samples, np.nan)
    logdF = np.full(samples, np.nan)
    n_stages = np.zeros(samples, dtype=np.int64)
    offsets = np.zeros(samples + 1, dtype=np.int64)
    pts: list[np.ndarray] = []
    branch_of = np.full(samples, -1, dtype=np.int64)
    branches: list[Branch] = []
    keys: dict = {}
    dist_records = []
    for i, x in enumerate(xs):
        j = min(int(np.searchsorted(edges, x, side="right")) - 1, len(edges) - 2)
        base = (float(edges[j]), float(edges[j + 1]))
        t = float(x)
        R = 0
        times = []
        orbit = []
        stage_hist = []
        key = []
        closed = False
        want_hist = len(dist_records) < distortion_branches
        for _ in range(max_stages):
            r = descend_point(m, base, t, profile, scratch, keep_history=want_hist)
            if r.status != 0:
                break
            orbit.append(r.positions[:r.S])
            R += r.S
            times.append(R)
            key.append((r.S, round(r.piece[0], 15)))
            if want_hist:
                stage_hist.append((r.S, r.history))
            elo, ehi = r.image
            cap, j0, j1, k, c_lo, c_hi = kern.capture_turn(a, L, tp, m.marked.mp, m.marked.mk, elo, ehi,
                                                            r.target, margin)
            if cap:
                orbit.append(np.array([r.target]))
                R += 1
                closed = True
                ft = kern.f_lift(a, L, tp, r.target)
                Fx[i] = ft - math.floor(ft)
                key.append((int(k), round(j0, 15)))
                break
            base = _leftover_piece(c_lo, c_hi, r.target, profile.delta)
            t = r.target
        if not closed:
            offsets[i + 1] = offsets[i]
            continue
        ob = np.concatenate(orbit)
        ob = ob - np.floor(ob)
        pts.append(ob)
        offsets[i + 1] = offsets[i] + ob.shape[0]
        Rs[i] = R
        n_stages[i] = len(times)
        logdF[i] = kern.sum_log_deriv(a, L, tp, ob)
        kt = tuple(key)
        if kt not in keys:
            defect, gap, mono = _branch_certificate(m, (j0, j1), certificate_points)
            keys[kt] = len(branches)
            eps = min((j1 - j0) / (ehi - elo), kern.dist_to(j0, m.marked.mp), kern.dist_to(j1, m.marked.mp))
            branches.append(Branch(anchor=float(x), return_time=R, large_scale_times=tuple([0] + times),
                                   tail_step=1, turn=(float(j0), float(j1)), log_width=-float(logdF[i]),
                                   coverage_defect=defect, max_gap=gap, monotone=mono, epsilon=float(eps)))
            if want_hist:
                dist_records.append(_branch_distortion(m, stage_hist, (j0, j1), distortion_pairs, rng))
        branch_of[i] = keys[kt]
    resolved = Rs > 0
    total = float(resolved.mean())
    K = max((d for d in dist_records if d == d), default=math.nan)
    imap = InducedMarkovMap(branches=branches, total_mass=total, unresolved_mass=1.0 - total, x=xs, Fx=Fx,
                            R=Rs, log_dF=logdF, stages=n_stages, orbit_offsets=offsets,
                            orbit_points=np.concatenate(pts) if pts else np.zeros(0), branch_of=branch_of,
                            distortion_constant=K, distortion_samples=dist_records, profile=profile)
    if strict and total < mass_target:
        raise BudgetExceeded(f"total mass {total:.6f} below target {mass_target}", partial=imap)
    return imap


def _branch_distortion(m: CircleMap, stage_hist, turn: Interval, pairs: int, rng) -> float:
    """max |F'(u)/F'(v) - 1| / |F(u) - F(v)| over random pairs of the branch."""
    a, L, tp = m.args
    width = turn[1] - turn[0]
    us = turn[0] + width * rng.random(2 * pairs)
    chain = np.zeros(max(S for S, _ in stage_hist) + 2)
    vals = []
    for u in us:
        u = float(u)
        ld = math.log(abs(kern.f_prime(a, L, tp, u)))
        pos = u
        for S, h in reversed(stage_hist):
            pos, l = kern.pull_back_log_deriv(a, L, tp, h.gl, h.gh, h.gsl, h.gsh, h.kk, S, pos, chain)
            if l != l:
                return math.nan
            ld += l
        vals.append((kern.f_lift(a, L, tp, u), ld))
    best = 0.0
    for p in range(pairs):
        (y1, l1), (y2, l2) = vals[2 * p], vals[2 * p + 1]
        if y1 == y2:
            continue
        best = max(best, abs(math.expm1(l1 - l2)) / abs(y1 - y2))
    return best


def tail_statistics(imap: InducedMarkovMap, threshold: float = 1e-8) -> tuple[dict[int, float], tuple[float, float, float]]:
    """Measure of {R = n} per n and a log-linear fit over bins above ``threshold``."""
    if imap.total_mass <= 0.9:
        raise ValueError("tail statistics need total mass above 0.9")
    Rs = imap.R[imap.R > 0]
    w = 1.0 / imap.R.shape[0]
    counts = {int(n): c * w for n, c in sorted(Counter(Rs.tolist()).items())}
    ns = np.array([n for n, v in counts.items() if v > threshold])
    vs = np.array([counts[n] for n in ns])
    return counts, _loglinear_fit(ns, vs)


def write_branches_csv(imap: InducedMarkovMap, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["left", "right", "R", "large_scale_times", "coverage_defect"])
        for b in imap.branches:
            lo, hi = b.domain
            w.writerow([repr(lo), repr(hi), b.return_time, " ".join(map(str, b.large_scale_times)),
                        repr(b.coverage_defect)])


def induced_summary(imap: InducedMarkovMap) -> dict:
    counts, fit = tail_statistics(imap) if imap.total_mass > 0.9 else ({}, (math.nan,) * 3)
    return {"total_mass": imap.total_mass, "branches": len(imap.branches), "samples": int(imap.R.shape[0]),
            "tail_fit": {"rate": fit[0], "intercept": fit[1], "r_squared": fit[2]},
            "distortion_constant": imap.distortion_constant,
            "max_coverage_defect": float(imap.coverage_defect.max()) if imap.branches else math.nan}


def write_induced_summary(imap: InducedMarkovMap, path) -> None:
    with open(path, "w") as fh:
        json.dump(induced_summary(imap), fh, indent=2, sort_keys=True)
