"""Binding intervals, bound/free decomposition of orbits and return depth."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .errors import CriticalOrbitTruncated, NotAFreeReturn, OutOfBindingRange
from .map_core import CircleMap, DerivativeBounds, ExperimentProfile, eval_map
from .orbit_engine import OrbitRecord, PrecisionPolicy, compute_contraction, iterate_orbit

ShallowPolicy = Literal["clamp", "strict"]


@dataclass(frozen=True, eq=False)
class BindingIntervals:
    """Radii r_p = sqrt(D_p(v0) / (K0 L)); I_p is (c + r_p, c + r_{p-1}] and its mirror.

    ``radii[j]`` holds r_{j+1}, so the family covers p = 2..p_max.
    """

    critical_point: float
    radii: np.ndarray
    log_radii: np.ndarray
    K0: float

    @property
    def p_max(self) -> int:
        return self.radii.shape[0]

    @property
    def entries(self) -> list[tuple[int, tuple[float, float], tuple[float, float]]]:
        c = self.critical_point
        out = []
        for p in range(2, self.p_max + 1):
            inner, outer = self.radii[p - 1], self.radii[p - 2]
            out.append((p, (c + inner, c + outer), (c - outer, c - inner)))
        return out

    @property
    def outer_radius(self) -> float:
        return float(self.radii[0])

    @property
    def inner_radius(self) -> float:
        return float(self.radii[-1])


def build_binding_intervals(m: CircleMap, c: float, p_max: int, bounds: DerivativeBounds,
                            policy: PrecisionPolicy | None = None) -> BindingIntervals:
    if p_max < 2:
        raise ValueError("p_max must be at least 2")
    v0 = eval_map(m, c)
    orbit = iterate_orbit(m, v0, p_max, policy)
    if orbit.truncated and orbit.length < p_max:
        raise CriticalOrbitTruncated(f"critical orbit of {c!r} truncated at step {orbit.length}", orbit.length)
    cd = compute_contraction(m, orbit, p_max)
    log_r = 0.5 * (cd.log_Dn[1:p_max + 1] - math.log(bounds.K0 * m.L))
    return BindingIntervals(critical_point=float(c), radii=np.exp(log_r), log_radii=log_r, K0=bounds.K0)


def _circle_offset(x: float, c: float) -> float:
    u = x - c
    return u - math.floor(u + 0.5)


def bound_period_of(b: BindingIntervals, x: float) -> int:
    """The p with x in I_p(c) or its mirror (closed on the end away from c).

    Comparisons are made against the rounded endpoints c +- r_p, so the
    result agrees with ``entries`` exactly.
    """
    c = b.critical_point
    off = _circle_offset(x, c)
    xx = float(x) if abs(float(x) - c) <= 0.5 else c + off
    if off > 0:
        ends = c + b.radii
        if xx > ends[0]:
            raise OutOfBindingRange(f"{x!r} lies beyond I_2")
        if xx <= ends[-1]:
            raise OutOfBindingRange(f"{x!r} is closer to c than the innermost interval; raise p_max")
        j = int(np.searchsorted(-ends, -xx, side="right"))
    else:
        ends = c - b.radii
        if xx < ends[0]:
            raise OutOfBindingRange(f"{x!r} lies beyond I_2")
        if xx >= ends[-1]:
            raise OutOfBindingRange(f"{x!r} is closer to c than the innermost interval; raise p_max")
        j = int(np.searchsorted(ends, xx, side="right"))
    return j + 1


def lemma25a_bound(b: BindingIntervals, x: float, lam: float, L: float) -> float:
    """(2 / lam) * log_L(1 / |c - x|), the upper bound for the bound period."""
    u = abs(_circle_offset(x, b.critical_point))
    return 2.0 / lam * (-math.log(u) / math.log(L))


@dataclass(frozen=True)
class ReturnEvent:
    time: int
    critical_point: float
    distance: float
    r_index: int
    bound_period: int
    depth: Literal["deep", "shallow", "unclassified"] = "unclassified"
    clamped: bool = False


@dataclass(frozen=True)
class ReturnDecomposition:
    events: tuple[ReturnEvent, ...]
    free_segments: tuple[tuple[int, int], ...]
    horizon: int
    log_base: float = field(default=math.e)

    def times(self) -> list[int]:
        return [e.time for e in self.events]


def r_index(distance: float, L: float) -> int:
    """Unique r with L^-r < distance <= L^(-r+1)."""
    r = math.floor(-math.log(distance) / math.log(L)) + 1
    # guard against rounding at exact powers
    while L ** (-r) >= distance:
        r += 1
    while r > 0 and L ** (-r + 1) < distance:
        r -= 1
    return int(r)


def decompose_orbit(m: CircleMap, orbit: OrbitRecord, profile: ExperimentProfile,
                    bindings: Sequence[BindingIntervals], shallow_policy: ShallowPolicy = "clamp") -> ReturnDecomposition:
    """Split the orbit into bound windows (n_k, n_k + p_k) and free segments.

    Returns whose distance exceeds the outer binding radius (possible when
    delta is not small against the binding scale) receive p = 2 under the
    ``clamp`` policy and raise under ``strict``.
    """
    if not bindings:
        raise ValueError("need binding intervals for every critical point")
    centers = np.array([b.critical_point for b in bindings])
    delta = profile.delta
    horizon = orbit.length
    events: list[ReturnEvent] = []
    segments: list[tuple[int, int]] = []
    j = 0
    seg_start = 0
    while j <= horizon:
        if orbit.dC[j] < delta:
            x = float(orbit.points[j])
            offs = np.abs(((x - centers) + 0.5) % 1.0 - 0.5)
            b = bindings[int(np.argmin(offs))]
            dist = float(orbit.dC[j])
            clamped = False
            try:
                p = bound_period_of(b, x)
            except OutOfBindingRange as exc:
                if shallow_policy == "clamp" and dist > b.outer_radius:
                    p, clamped = 2, True
                else:
                    raise OutOfBindingRange(str(exc), time=j) from None
            segments.append((seg_start, j))
            events.append(ReturnEvent(time=j, critical_point=b.critical_point, distance=dist,
                                      r_index=r_index(dist, m.L), bound_period=p, clamped=clamped))
            seg_start = j + p
            j += p
        else:
            j += 1
    if seg_start <= horizon:
        segments.append((seg_start, horizon))
    return ReturnDecomposition(events=tuple(events), free_segments=tuple(segments), horizon=horizon,
                               log_base=m.L)


def _is_deep(logs: Sequence[float], k_new: int) -> bool:
    """Depth test for return k_new given log distances of all earlier free returns."""
    if k_new == 0:
        return True
    lv = logs[k_new]
    earlier = logs[:k_new]
    # suffix sums over (n_k, n_t] for each earlier k
    tail = 0.0
    for k in range(k_new - 1, -1, -1):
        if 2.0 * lv + 2.0 * tail > earlier[k]:
            return False
        tail += earlier[k]
    return True


def classify_returns(d: ReturnDecomposition) -> ReturnDecomposition:
    """Label each free return deep or shallow (logs base L)."""
    lb = math.log(d.log_base)
    logs = [math.log(e.distance) / lb for e in d.events]
    events = tuple(replace(e, depth="deep" if _is_deep(logs, i) else "shallow") for i, e in enumerate(d.events))
    return replace(d, events=events)


@dataclass(frozen=True)
class ThetaDiagnostics:
    log_theta_0: float
    log_theta_k: tuple[float, ...]
    sublem2_margins: tuple[float, ...]
    exp0_margin: float
    recovery_margins: tuple[float, ...]
    deep_margin: float | None

    @property
    def sublem2_ok(self) -> bool:
        return all(v >= 0 for v in self.sublem2_margins)

    @property
    def exp0_ok(self) -> bool:
        return self.exp0_margin > 0


def _log_inv_d(orbit: OrbitRecord, n: int) -> np.ndarray:
    return orbit.log_deriv_prefix[:n] - np.log(orbit.dC[:n]) - np.log(orbit.dS[:n])


def _logsum(v: np.ndarray) -> float:
    return float(np.logaddexp.reduce(v)) if v.size else -math.inf


def theta_contributions(m: CircleMap, orbit: OrbitRecord, d: ReturnDecomposition, nu: int,
                        profile: ExperimentProfile) -> tuple[float, list[float], ThetaDiagnostics]:
    """Distortion split at the free return nu into bound pieces and the free remainder.

    Margins are natural-log slack in each inequality (non-negative when it holds).
    """
    times = d.times()
    if nu not in times:
        raise NotAFreeReturn(f"{nu} is not a recorded free return")
    if nu > orbit.length:
        raise ValueError("orbit shorter than nu")
    idx = times.index(nu)
    li = _log_inv_d(orbit, nu)
    mask = np.ones(nu, dtype=bool)
    log_tk, sub_m, rec_m = [], [], []
    lnL = math.log(m.L)
    for e in d.events[:idx]:
        n_k, p_k = e.time, e.bound_period
        lt = _logsum(li[n_k:n_k + p_k])
        mask[n_k:n_k + p_k] = False
        log_tk.append(lt)
        bound = -18.0 * profile.alpha / profile.lam * math.log(e.distance)
        sub_m.append(bound - (lt - orbit.log_deriv_prefix[n_k + p_k]))
        recovered = orbit.log_deriv_prefix[n_k + p_k] - orbit.log_deriv_prefix[n_k]
        need = max((-1.0 + 16.0 * profile.alpha / profile.lam) * math.log(e.distance),
                   profile.lam / 3.0 * p_k * lnL)
        rec_m.append(recovered - need)
    lt0 = _logsum(li[mask])
    exp0 = math.log(1.0 / profile.delta) / 3.0 - (lt0 - orbit.log_deriv_prefix[nu])
    deep_margin = None
    ev = d.events[idx]
    if ev.depth == "deep" and nu > 0:
        log_D = -0.5 * lnL - _logsum(li)
        deep_margin = orbit.log_deriv_prefix[nu] + log_D - 0.5 * math.log(ev.distance)
    diag = ThetaDiagnostics(log_theta_0=lt0, log_theta_k=tuple(log_tk), sublem2_margins=tuple(sub_m),
                            exp0_margin=exp0, recovery_margins=tuple(rec_m), deep_margin=deep_margin)
    with np.errstate(over="ignore"):
        return float(np.exp(lt0)), [float(np.exp(v)) for v in log_tk], diag


def shallow_deep_sums(d: ReturnDecomposition) -> tuple[float, float]:
    """Sums of log_L d_C over shallow and over deep free returns."""
    lb = math.log(d.log_base)
    sh = sum(math.log(e.distance) / lb for e in d.events if e.depth == "shallow")
    dp = sum(math.log(e.distance) / lb for e in d.events if e.depth == "deep")
    return sh, dp


def write_decomposition_csv(d: ReturnDecomposition, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "critical_point", "distance", "r_index", "p", "depth"])
        for e in d.events:
            w.writerow([e.time, repr(e.critical_point), repr(e.distance), e.r_index, e.bound_period, e.depth])
