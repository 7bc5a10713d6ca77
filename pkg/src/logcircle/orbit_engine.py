"""Orbits with derivative bookkeeping, contraction radii and the distortion checks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Literal

import mpmath
import numpy as np

from . import _kernels as kern
from .errors import OrbitHitsSet, SingularProximity, UndefinedAtStep
from .map_core import CircleMap, ExperimentProfile

FLAG_OK, FLAG_PROMOTED, FLAG_TRUNCATED = 0, 1, 2
_FLAG_NAMES = {FLAG_OK: "ok", FLAG_PROMOTED: "promoted", FLAG_TRUNCATED: "truncated"}
EXTENDED_BITS = 106
ZERO_DISTANCE = 1e-15


@dataclass(frozen=True)
class PrecisionPolicy:
    working_precision: Literal["double", "extended"] = "extended"
    singular_exclusion_radius: float = 1e-13
    promotion_threshold: float = 1e-8
    max_orbit_length: int = 10_000_000

    def __post_init__(self):
        if self.working_precision not in ("double", "extended"):
            raise ValueError("working_precision must be 'double' or 'extended'")
        if not 0.0 < self.singular_exclusion_radius < self.promotion_threshold:
            raise ValueError("need 0 < singular_exclusion_radius < promotion_threshold")

    def check_profile(self, profile: ExperimentProfile) -> None:
        if not self.promotion_threshold < profile.sigma:
            raise ValueError("promotion_threshold must stay below the profile's sigma")

    def to_dict(self) -> dict:
        return {"working_precision": self.working_precision,
                "singular_exclusion_radius": self.singular_exclusion_radius,
                "promotion_threshold": self.promotion_threshold,
                "max_orbit_length": self.max_orbit_length}


@dataclass(frozen=True, eq=False)
class OrbitRecord:
    points: np.ndarray
    log_deriv_prefix: np.ndarray
    dC: np.ndarray
    dS: np.ndarray
    flags: np.ndarray

    @property
    def length(self) -> int:
        """Number of iterates after x_0."""
        return self.points.shape[0] - 1

    @property
    def truncated(self) -> bool:
        return bool(self.flags.size and self.flags[-1] == FLAG_TRUNCATED)

    def flag_names(self) -> list[str]:
        return [_FLAG_NAMES[int(f)] for f in self.flags]


@dataclass(frozen=True, eq=False)
class ContractionData:
    """Dn[n] = D_n(x) for n >= 1 (Dn[0] is +inf, the empty-sum convention)."""

    base_point: float
    Dn: np.ndarray
    log_Dn: np.ndarray
    di_inv_prefix: np.ndarray
    log_di_inv_prefix: np.ndarray


def _extended_step(m: CircleMap, x: float) -> tuple[float, float]:
    """One iterate and ln|f'| evaluated at ~106 bits from the exact double x."""
    with mpmath.workprec(EXTENDED_BITS):
        X = mpmath.mpf(x)
        v = mpmath.mpf(m.phi.constant_offset)
        d1 = mpmath.mpf(0)
        for k, c in enumerate(m.phi.cosine_coefficients, start=1):
            if c:
                ang = 2 * mpmath.pi * k * X
                v += c * mpmath.cos(ang)
                d1 -= 2 * mpmath.pi * k * c * mpmath.sin(ang)
        for k, s in enumerate(m.phi.sine_coefficients, start=1):
            if s:
                ang = 2 * mpmath.pi * k * X
                v += s * mpmath.sin(ang)
                d1 += 2 * mpmath.pi * k * s * mpmath.cos(ang)
        y = X + m.a + m.L * mpmath.log(abs(v))
        y -= mpmath.floor(y)
        return float(y), float(mpmath.log(abs(1 + m.L * d1 / v)))


def iterate_orbit(m: CircleMap, x0: float, n: int, policy: PrecisionPolicy | None = None) -> OrbitRecord:
    """Orbit x_0..x_n with log-derivative prefix sums and distances to C and S.

    Stops early (flag ``truncated``) when an iterate enters the singular
    exclusion radius.  Under extended precision, steps starting closer than
    the promotion threshold to S are evaluated at ~106 bits.
    """
    policy = policy or PrecisionPolicy()
    n = int(min(n, policy.max_orbit_length))
    md = m.marked
    a, L, tp = m.args
    x0 = float(x0) - math.floor(float(x0))
    excl = policy.singular_exclusion_radius
    if kern.dist_to(x0, md.sps) < excl:
        raise SingularProximity(f"x0={x0!r} lies within the singular exclusion radius")
    xs = np.empty(n + 1)
    logp = np.empty(n + 1)
    dcs = np.empty(n + 1)
    dss = np.empty(n + 1)
    flags = np.zeros(n + 1, dtype=np.int8)
    logp[0] = 0.0
    extended = policy.working_precision == "extended"
    start, x = 0, x0
    while True:
        i, reason = kern.iterate_block(a, L, tp, md.cps, md.sps, x, n, excl,
                                       policy.promotion_threshold, extended, xs, logp, dcs, dss, start)
        if reason == 0:
            end = i
            break
        if reason == 1:
            flags[i] = FLAG_TRUNCATED
            end = i
            break
        x, lg = _extended_step(m, xs[i])
        flags[i] = FLAG_PROMOTED
        logp[i + 1] = logp[i] + lg
        start = i + 1
        if start > n:
            end = n
            break
    s = slice(0, end + 1)
    return OrbitRecord(xs[s].copy(), logp[s].copy(), dcs[s].copy(), dss[s].copy(), flags[s].copy())


def compute_contraction(m: CircleMap, orbit: OrbitRecord, n_max: int) -> ContractionData:
    """D_n(x_0) = 1 / (sqrt(L) sum_{i<n} d_i^-1), d_i = d_C d_S / |(f^i)'|, for n <= n_max."""
    if n_max > orbit.length + 1 or (orbit.truncated and n_max > orbit.length):
        raise ValueError("orbit too short for the requested n_max")
    dd = orbit.dC[:n_max] * orbit.dS[:n_max]
    bad = np.nonzero(dd < ZERO_DISTANCE ** 2)[0]
    if bad.size:
        raise UndefinedAtStep(f"orbit meets C or S at step {bad[0]}", int(bad[0]))
    terms = orbit.log_deriv_prefix[:n_max] - np.log(dd)
    log_sum = np.concatenate([[-np.inf], np.logaddexp.accumulate(terms)])
    log_D = -0.5 * math.log(m.L) - log_sum
    return ContractionData(base_point=float(orbit.points[0]), Dn=np.exp(log_D), log_Dn=log_D,
                           di_inv_prefix=np.exp(log_sum), log_di_inv_prefix=log_sum)


@dataclass(frozen=True)
class DistortionReport:
    x: float
    n: int
    D_n: float
    max_ratio: float
    max_refined: float
    refined_bound: float
    passed: bool
    enlarged_max_ratio: float | None = None


def check_distortion(m: CircleMap, x: float, n: int, samples: int, rng: np.random.Generator | None = None,
                     tol: float = 1e-9, enlargement: float | None = 10.0) -> DistortionReport:
    """Sample pairs in [x - D_n, x + D_n] and measure the derivative ratio of f^n.

    With ``enlargement`` set, the ratio is also reported on the interval
    enlarged by that factor (diagnostic only).
    """
    rng = rng or np.random.default_rng(0)
    orbit = iterate_orbit(m, x, n, PrecisionPolicy(working_precision="double"))
    if orbit.length < n or np.any(orbit.dC[:n] < ZERO_DISTANCE) or np.any(orbit.dS[:n] < ZERO_DISTANCE):
        raise OrbitHitsSet(f"orbit of {x!r} meets C or S within {n} steps")
    cd = compute_contraction(m, orbit, n)
    Dn = float(cd.Dn[n])
    a, L, tp = m.args

    def ratios(width):
        offs = rng.uniform(-width, width, size=(samples, 2))
        end, dlog = kern.offset_log_derivs(a, L, tp, orbit.points, n, offs.ravel())
        if np.any(~np.isfinite(dlog)):
            raise OrbitHitsSet("a sampled point crossed C or S")
        end = end.reshape(samples, 2)
        dlog = dlog.reshape(samples, 2)
        diff = dlog[:, 0] - dlog[:, 1]
        ratio = np.exp(np.abs(diff))
        sep = np.abs(end[:, 0] - end[:, 1])
        scale = Dn * math.exp(orbit.log_deriv_prefix[n])
        with np.errstate(divide="ignore", invalid="ignore"):
            refined = np.where(sep > 0, np.abs(np.expm1(diff)) * scale / sep, 0.0)
        return float(ratio.max()), float(refined.max())

    max_ratio, max_refined = ratios(Dn)
    enlarged = ratios(enlargement * Dn)[0] if enlargement else None
    return DistortionReport(x=float(x), n=n, D_n=Dn, max_ratio=max_ratio, max_refined=max_refined,
                            refined_bound=m.L ** (-1.0 / 3.0), passed=max_ratio <= 2.0 * (1 + tol),
                            enlarged_max_ratio=enlarged)


@dataclass(frozen=True)
class ExpansionReport:
    trials: int
    violation_rate: float
    worst_margin: float
    violations_a: int
    violations_b: int
    entered: int


def check_expansion_outside(m: CircleMap, profile: ExperimentProfile, trials: int,
                            rng: np.random.Generator | None = None, max_len: int = 1000) -> ExpansionReport:
    """Follow random orbits until they enter C_delta and test both expansion bounds.

    Margins are ln|(f^k)'x| minus the required logarithm; the worst margin is
    the minimum over all checks performed.
    """
    rng = rng or np.random.default_rng(0)
    md = m.marked
    delta, lnL = profile.delta, math.log(m.L)
    policy = PrecisionPolicy(working_precision="double")
    bad_any = bad_a = bad_b = entered = 0
    worst = math.inf
    done = 0
    while done < trials:
        x = float(rng.random())
        if kern.dist_to(x, md.cps) <= delta or kern.dist_to(x, md.sps) < policy.singular_exclusion_radius:
            continue
        done += 1
        orb = iterate_orbit(m, x, max_len, policy)
        inside = np.nonzero(orb.dC < delta)[0]
        n = int(inside[0]) if inside.size else orb.length
        k = np.arange(1, n + 1)
        lp = orb.log_deriv_prefix[1:n + 1]
        marg_a = lp - (math.log(delta) + 2 * profile.lam * k * lnL)
        va = bool(np.any(marg_a < 0))
        vb = False
        if marg_a.size:
            worst = min(worst, float(marg_a.min()))
        if inside.size and n > 0:
            entered += 1
            marg_b = orb.log_deriv_prefix[n] - 2 * profile.lam * n * lnL
            worst = min(worst, float(marg_b))
            vb = marg_b < 0
        bad_a += va
        bad_b += vb
        bad_any += va or vb
    return ExpansionReport(trials=trials, violation_rate=bad_any / trials, worst_margin=worst,
                           violations_a=bad_a, violations_b=bad_b, entered=entered)


def write_orbit_csv(orbit: OrbitRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "x_i", "log_deriv_prefix", "dC", "dS", "flag"])
        for i in range(orbit.points.shape[0]):
            w.writerow([i, repr(float(orbit.points[i])), repr(float(orbit.log_deriv_prefix[i])),
                        repr(float(orbit.dC[i])), repr(float(orbit.dS[i])), _FLAG_NAMES[int(orbit.flags[i])]])
