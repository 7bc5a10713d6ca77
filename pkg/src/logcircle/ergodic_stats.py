"""Invariant density, Lyapunov exponent, correlations, CLT and entropy checks."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy import stats

from . import _kernels as kern
from .errors import (DivergentIntegral, EmptyBall, InsufficientData, NegativeVarianceEstimate, NoiseDominated,
                     NonConvergence)
from .inducing import InducedMarkovMap
from .map_core import CircleMap, ExperimentProfile, _pack

SINGULAR_EXCLUSION = 1e-13
MIN_SAMPLES = 10_000


@dataclass(frozen=True)
class Observable:
    """Trigonometric polynomial on the circle.

    With ``coboundary_of_map`` the observable is psi o f - psi, where psi is
    the polynomial; this needs the map at evaluation time.
    """

    cosine_coeffs: tuple[float, ...] = ()
    sine_coeffs: tuple[float, ...] = ()
    constant: float = 0.0
    holder_exponent: float = 1.0
    coboundary_of_map: bool = False

    def __post_init__(self):
        if not 0.0 < self.holder_exponent <= 1.0:
            raise ValueError("holder_exponent must lie in (0, 1]")

    @property
    def packed(self) -> np.ndarray:
        return _pack(self.constant, tuple(self.cosine_coeffs), tuple(self.sine_coeffs))

    @classmethod
    def cosine(cls, amplitude: float = 1.0) -> "Observable":
        return cls(cosine_coeffs=(amplitude,))

    @classmethod
    def coboundary(cls, psi: "Observable") -> "Observable":
        return cls(psi.cosine_coeffs, psi.sine_coeffs, psi.constant, psi.holder_exponent, True)

    def values(self, m: CircleMap, xs: np.ndarray) -> np.ndarray:
        a, L, tp = m.args
        return kern.observable_many(self.packed, self.coboundary_of_map, a, L, tp, np.asarray(xs, dtype=float))

    def is_constant(self) -> bool:
        return not self.coboundary_of_map and not any(self.cosine_coeffs) and not any(self.sine_coeffs)

    def mean(self, m: CircleMap, mu: "EmpiricalMeasure", refine: int = 8) -> float:
        """Integral against a binned measure (density constant inside each bin)."""
        edges = np.linspace(0.0, 1.0, mu.bin_count + 1)
        offs = (np.arange(refine) + 0.5) / refine
        pts = (edges[:-1, None] + offs[None, :] / mu.bin_count).ravel()
        vals = self.values(m, pts).reshape(mu.bin_count, refine).mean(axis=1)
        return float(np.dot(vals, mu.bin_masses))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    bin_count: int
    bin_masses: np.ndarray
    source: Literal["birkhoff", "induced"]

    def __post_init__(self):
        if self.bin_masses.shape != (self.bin_count,):
            raise ValueError("bin_masses must have bin_count entries")
        if np.any(self.bin_masses < 0) or abs(self.bin_masses.sum() - 1.0) > 1e-10:
            raise ValueError("masses must be non-negative and sum to one")

    @property
    def density(self) -> np.ndarray:
        return self.bin_masses * self.bin_count

    def density_at(self, x: float) -> float:
        return float(self.density[min(int((x % 1.0) * self.bin_count), self.bin_count - 1)])

    def tv_distance(self, other: "EmpiricalMeasure") -> float:
        if other.bin_count != self.bin_count:
            raise ValueError("bin counts differ")
        return 0.5 * float(np.abs(self.bin_masses - other.bin_masses).sum())

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        b = rng.choice(self.bin_count, size=n, p=self.bin_masses)
        return (b + rng.random(n)) / self.bin_count


@dataclass(frozen=True, eq=False)
class InducedInvariantMeasure:
    ulam_bins: int
    stationary_density: np.ndarray
    mean_return_time: float
    residual: float
    iterations: int
    density_bounds: tuple[float, float]
    weights: np.ndarray = field(repr=False)


def _normalise(counts: np.ndarray) -> np.ndarray:
    masses = counts / counts.sum()
    return masses / masses.sum()


def _uniform_starts(rng: np.random.Generator, n: int, sps: np.ndarray) -> np.ndarray:
    xs = rng.random(n)
    bad = np.array([kern.dist_to(x, sps) < SINGULAR_EXCLUSION for x in xs], dtype=bool)
    while bad.any():
        xs[bad] = rng.random(int(bad.sum()))
        bad = np.array([kern.dist_to(x, sps) < SINGULAR_EXCLUSION for x in xs], dtype=bool)
    return xs


@dataclass(frozen=True, eq=False)
class BirkhoffRun:
    measure: EmpiricalMeasure
    lyapunov: float
    samples: int
    reseeded: int


def run_birkhoff(m: CircleMap, n_orbits: int, orbit_len: int, burn_in: int, bins: int,
                 seed: int | np.random.Generator = 0, max_reseed_rounds: int = 10) -> BirkhoffRun:
    """Histogram and ln|f'| average of post burn-in points; truncated orbits are re-seeded."""
    if min(n_orbits, orbit_len, bins) <= 0 or not 0 <= burn_in < orbit_len:
        raise ValueError("need positive sizes and burn_in < orbit_len")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    a, L, tp = m.args
    sps = m.marked.sps
    counts = np.zeros(bins, dtype=np.int64)
    lyap_sum = 0.0
    kept_total = 0
    need = n_orbits
    reseeded = 0
    for _ in range(max_reseed_rounds):
        x0 = _uniform_starts(rng, need, sps)
        c = np.zeros(bins, dtype=np.int64)
        ly = np.zeros(need)
        kept = kern.birkhoff_histogram(a, L, tp, sps, x0, orbit_len, burn_in, bins, SINGULAR_EXCLUSION, c, ly)
        good = kept > 0
        if good.all():
            counts += c
        else:
            # discard truncated orbits entirely by recomputing the good ones
            c2 = np.zeros(bins, dtype=np.int64)
            ly2 = np.zeros(int(good.sum()))
            kern.birkhoff_histogram(a, L, tp, sps, x0[good], orbit_len, burn_in, bins, SINGULAR_EXCLUSION, c2, ly2)
            counts += c2
            ly = ly2
            kept = kept[good]
        lyap_sum += float(ly.sum())
        kept_total += int(kept.sum())
        need = int((~good).sum())
        reseeded += need
        if need == 0:
            break
    if kept_total < MIN_SAMPLES:
        raise InsufficientData(f"only {kept_total} samples survived")
    return BirkhoffRun(EmpiricalMeasure(bins, _normalise(counts.astype(float)), "birkhoff"),
                       lyap_sum / kept_total, kept_total, reseeded)


def estimate_acim_birkhoff(m: CircleMap, n_orbits: int, orbit_len: int, burn_in: int, bins: int,
                           seed: int | np.random.Generator = 0) -> EmpiricalMeasure:
    return run_birkhoff(m, n_orbits, orbit_len, burn_in, bins, seed).measure


def lyapunov_direct(m: CircleMap, n_orbits: int = 100, orbit_len: int = 100_000, burn_in: int = 100,
                    seed: int | np.random.Generator = 0) -> float:
    """Birkhoff average of ln|f'| along orbits."""
    return run_birkhoff(m, n_orbits, orbit_len, burn_in, 16, seed).lyapunov


def _ulam_stationary(P: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, float, int]:
    n = P.shape[0]
    pi = np.full(n, 1.0 / n)
    res = math.inf
    for it in range(1, max_iter + 1):
        nxt = pi @ P
        nxt /= nxt.sum()
        res = float(np.abs(nxt - pi).sum())
        pi = nxt
        if res < tol:
            return pi, res, it
    raise NonConvergence(f"Ulam power iteration residual {res:.3g} after {max_iter} steps")


def estimate_acim_induced(imap: InducedMarkovMap, m: CircleMap, ulam_bins: int = 100, bins: int = 1000,
                          tol: float = 1e-8, max_iter: int = 100_000) -> tuple[InducedInvariantMeasure, EmpiricalMeasure]:
    """Invariant density of F by Ulam's method and its push-forward along the branch orbits."""
    if imap.total_mass <= 0.99:
        raise ValueError("induced map must cover more than 99% of the circle")
    ok = imap.R > 0
    x = imap.x[ok]
    Fx = imap.Fx[ok]
    src = np.minimum((x * ulam_bins).astype(np.int64), ulam_bins - 1)
    dst = np.minimum((Fx * ulam_bins).astype(np.int64), ulam_bins - 1)
    P = np.zeros((ulam_bins, ulam_bins))
    np.add.at(P, (src, dst), 1.0)
    rows = P.sum(axis=1)
    if np.any(rows == 0):
        raise InsufficientData("an Ulam cell received no samples; use more samples or fewer cells")
    P /= rows[:, None]
    pi, res, it = _ulam_stationary(P, tol, max_iter)
    dens = pi * ulam_bins
    w_all = np.zeros(imap.R.shape[0])
    w_all[ok] = dens[src]
    R = imap.R.astype(float)
    mean_R = float(np.dot(w_all, R) / w_all.sum())
    lens = np.diff(imap.orbit_offsets)
    pw = np.repeat(w_all, lens)
    pb = np.minimum((imap.orbit_points * bins).astype(np.int64), bins - 1)
    hist = np.bincount(pb, weights=pw, minlength=bins)
    nu = InducedInvariantMeasure(ulam_bins=ulam_bins, stationary_density=dens, mean_return_time=mean_R,
                                 residual=res, iterations=it, density_bounds=(float(dens.min()), float(dens.max())),
                                 weights=w_all)
    return nu, EmpiricalMeasure(bins, _normalise(hist), "induced")


def _bin_log_average(m: CircleMap, lo: float, hi: float, depth: int) -> float:
    a, L, tp = m.args
    n = 1 << depth
    pts = lo + (hi - lo) * (np.arange(n) + 0.5) / n
    return float(kern.log_fprime_many(a, L, tp, pts).mean())


def lyapunov_exponent(m: CircleMap, mu: EmpiricalMeasure, tol: float = 1e-4, depth: int = 4,
                      max_depth: int = 24) -> float:
    """Integral of ln|f'| against mu (density constant per bin).

    Every bin gets 2**depth midpoints.  Bins holding a critical or singular
    point are refined dyadically beyond that until their contribution
    changes by less than ``tol`` (split evenly among those bins).
    """
    edges = np.linspace(0.0, 1.0, mu.bin_count + 1)
    a, L, tp = m.args
    n = 1 << depth
    offs = (np.arange(n) + 0.5) / n
    pts = (edges[:-1, None] + offs[None, :] / mu.bin_count).ravel()
    avg = kern.log_fprime_many(a, L, tp, pts).reshape(mu.bin_count, n).mean(axis=1)
    total = float(np.dot(avg, mu.bin_masses))
    special = sorted({min(int(p * mu.bin_count), mu.bin_count - 1) for p in m.marked.mp})
    for b in special:
        if mu.bin_masses[b] == 0.0:
            continue
        level, prev = depth, avg[b]
        while True:
            level += 1
            if level > max(max_depth, depth + 1):
                raise DivergentIntegral(f"bin {b} did not stabilise")
            cur = _bin_log_average(m, edges[b], edges[b + 1], level)
            if abs(cur - prev) * mu.bin_masses[b] < tol / len(special):
                break
            prev = cur
        total += (cur - avg[b]) * mu.bin_masses[b]
    return total


@dataclass(frozen=True, eq=False)
class CorrelationFit:
    correlations: np.ndarray
    noise_floor: np.ndarray
    usable: np.ndarray
    tau: float
    constant: float
    r_squared: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.tau, self.constant, self.r_squared)


def _correlations(m: CircleMap, phi: Observable, psi: Observable, n_max: int, orbits: int, orbit_len: int,
                  burn_in: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Signed covariances Cov(phi o f^n, psi) and their standard errors across orbits."""
    a, L, tp = m.args
    x0 = _uniform_starts(rng, orbits, m.marked.sps)
    out = np.zeros((orbits, n_max + 3))
    kern.correlation_sums(a, L, tp, phi.packed, phi.coboundary_of_map, psi.packed, psi.coboundary_of_map,
                          x0, orbit_len, burn_in, n_max, out)
    mp = out[:, n_max + 1].mean()
    mq = out[:, n_max + 2].mean()
    per_orbit = out[:, :n_max + 1] - out[:, [n_max + 1]] * out[:, [n_max + 2]]
    cov = out[:, :n_max + 1].mean(axis=0) - mp * mq
    se = per_orbit.std(axis=0, ddof=1) / math.sqrt(orbits)
    return cov, se


def correlation_decay(m: CircleMap, phi: Observable, psi: Observable, mu: EmpiricalMeasure | None = None,
                      n_max: int = 20, samples: int = 200, seed: int | np.random.Generator = 0,
                      orbit_len: int = 50_000, burn_in: int = 100, noise_sigmas: float = 3.0,
                      min_usable: int = 5) -> CorrelationFit:
    """Fit C_n ~ K tau^n over the n whose |C_n| clears ``noise_sigmas`` standard errors.

    ``samples`` is the number of orbits; starts are Lebesgue-uniform and the
    burn-in brings them close to the invariant measure.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if phi.is_constant() or psi.is_constant():
        # exactly zero; sampled covariances would only show rounding noise
        cov = se = np.zeros(n_max + 1)
    else:
        cov, se = _correlations(m, phi, psi, n_max, samples, orbit_len, burn_in, rng)
    C = np.abs(cov)
    floor = noise_sigmas * se
    usable = np.nonzero(C > floor)[0]
    if usable.size < min_usable:
        fit = CorrelationFit(C, floor, usable, math.nan, math.nan, math.nan)
        raise NoiseDominated(f"only {usable.size} correlation values clear the noise floor", partial=fit)
    y = np.log(C[usable])
    slope, icpt = np.polyfit(usable.astype(float), y, 1)
    pred = slope * usable + icpt
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(((y - pred) ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return CorrelationFit(C, floor, usable, float(math.exp(slope)), float(math.exp(icpt)), r2)


@dataclass(frozen=True, eq=False)
class CLTResult:
    sigma_squared: float
    ks_distance: float
    truncation: int
    variance_ratio: float
    mean_shift: float
    normalised_sums: np.ndarray = field(repr=False)
    covariances: np.ndarray = field(repr=False)
    sigma_squared_se: float = 0.0


def birkhoff_sum_samples(m: CircleMap, phi: Observable, n_values: Sequence[int], n_samples: int,
                         rng: np.random.Generator, burn_in: int = 100, shift: float = 0.0) -> np.ndarray:
    """S_n for every n in ``n_values`` (columns) from ``n_samples`` starts."""
    a, L, tp = m.args
    nv = np.array(sorted(n_values), dtype=np.int64)
    x0 = _uniform_starts(rng, n_samples, m.marked.sps)
    out = np.zeros((n_samples, nv.shape[0]))
    kern.birkhoff_sums(a, L, tp, phi.packed, phi.coboundary_of_map, shift, x0, burn_in, nv, out)
    return out


def variance_growth(m: CircleMap, phi: Observable, n_values: Sequence[int] = (100, 1000, 10_000),
                    n_samples: int = 2000, seed: int | np.random.Generator = 0) -> dict[int, float]:
    """(1/n) Var(S_n) for each n."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    sums = birkhoff_sum_samples(m, phi, n_values, n_samples, rng)
    return {int(n): float(sums[:, j].var(ddof=1) / n) for j, n in enumerate(sorted(n_values))}


def clt_test(m: CircleMap, phi: Observable, mu: EmpiricalMeasure | None = None, n: int = 1000,
             n_samples: int = 10_000, seed: int | np.random.Generator = 0, k_max: int = 20,
             cov_orbits: int = 200, cov_orbit_len: int = 50_000, noise_sigmas: float = 3.0,
             truncation: int | None = None) -> CLTResult:
    """Green-Kubo variance and the KS distance of S_n / sqrt(n) to the matching normal.

    The truncation K is the last lag whose covariance clears the noise
    floor, unless given.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if phi.is_constant():
        z = np.zeros(n_samples)
        return CLTResult(0.0, 0.0, 0, 0.0, 0.0, z, np.zeros(1), 0.0)
    cov, se = _correlations(m, phi, phi, k_max, cov_orbits, cov_orbit_len, 100, rng)
    if truncation is None:
        above = np.nonzero(np.abs(cov[1:]) > noise_sigmas * se[1:])[0]
        truncation = int(above.max() + 1) if above.size else 0
    s2 = float(cov[0] + 2.0 * cov[1:truncation + 1].sum())
    s2_se = float(math.sqrt(se[0] ** 2 + 4.0 * (se[1:truncation + 1] ** 2).sum()))
    sums = birkhoff_sum_samples(m, phi, [n], n_samples, rng)[:, 0]
    shift = float(sums.mean())
    z = (sums - shift) / math.sqrt(n)
    var_ratio = float(sums.var(ddof=1) / n)
    # a slightly negative sum is zero within sampling error (coboundaries land there)
    if s2 < -noise_sigmas * s2_se:
        raise NegativeVarianceEstimate(f"truncated Green-Kubo sum is {s2:.3g} at K={truncation}")
    ks = float(stats.kstest(z, "norm", args=(0.0, math.sqrt(s2))).statistic) if s2 > 0 else math.nan
    return CLTResult(s2, ks, truncation, var_ratio, shift / n, z, cov, s2_se)


def coboundary_diagnostic(m: CircleMap, phi: Observable, points: int = 200, depth: int = 40,
                          seed: int = 0) -> float:
    """Residual of a transfer function built from backward telescoped sums.

    psi(z) - psi(z0) is estimated by summing phi along one contracting
    inverse branch g of f.  For phi = psi o f - psi the sums telescope and
    max |psi(f y) - psi(y) - phi(y)| is tiny; otherwise it is of order |phi|.
    """
    a, L, tp = m.args
    md = m.marked
    # gap whose left end is singular: f runs from -inf there, so every residue has a preimage
    g = next(i for i in range(len(md.mp)) if md.mk[i] == 1)
    lo, hi, slo, shi = kern.gap_bounds(md.mp, md.mk, g, 0.0)
    shift = math.floor(kern.f_lift(a, L, tp, lo + 0.5 * (hi - lo))) - 1.0

    def pre_orbit(z: float) -> np.ndarray:
        out = np.empty(depth)
        for i in range(depth):
            z = kern.inv_gap(a, L, tp, lo, hi, slo, shi, (z - math.floor(z)) + shift)
            out[i] = z
        return out

    base = phi.values(m, pre_orbit(0.123))

    def psi_hat(z: float) -> float:
        return float((phi.values(m, pre_orbit(z)) - base).sum())

    ys = np.random.default_rng(seed).random(points)
    ys = ys[[kern.dist_to(float(y), md.sps) > 1e-6 for y in ys]]
    fys = kern.advance(a, L, tp, ys, 1)
    ph = phi.values(m, ys)
    res = np.array([psi_hat(float(fy)) - psi_hat(float(y)) - p for y, fy, p in zip(ys, fys, ph)])
    return float(np.abs(res).max())


@dataclass(frozen=True)
class EntropyResult:
    induced_log_derivative: float
    mean_return_time: float
    lyapunov: float
    residual: float
    mean_return_time_by_branch: float


def entropy_check(imap: InducedMarkovMap, nu: InducedInvariantMeasure, m: CircleMap, lyapunov: float) -> EntropyResult:
    """Compare the integral of ln|F'| against nu with (integral of R dnu) times the Lyapunov exponent."""
    ok = imap.R > 0
    w = nu.weights[ok]
    A = float(np.dot(w, imap.log_dF[ok]) / w.sum())
    B = nu.mean_return_time * lyapunov
    # second summation: accumulate nu-mass per branch first
    nb = len(imap.branches)
    mass = np.bincount(imap.branch_of[ok], weights=w, minlength=nb)
    Rb = np.array([b.return_time for b in imap.branches], dtype=float)
    mean_R_b = float(np.dot(mass, Rb) / mass.sum())
    return EntropyResult(A, nu.mean_return_time, lyapunov, abs(A - B) / B, mean_R_b)


def rho_beta(m: CircleMap, x: float, beta: float) -> float:
    dc = kern.dist_to(x, m.marked.cps)
    if dc <= beta:
        return dc
    ds = kern.dist_to(x, m.marked.sps)
    if ds <= beta:
        return ds
    return beta


@dataclass(frozen=True, eq=False)
class LocalEntropyProbe:
    values: np.ndarray
    inclusion_ok: bool
    inclusion_checked: int
    ball_log_widths: np.ndarray
    starts: np.ndarray

    @property
    def median(self) -> float:
        return float(np.median(self.values)) if self.values.size else math.nan


def local_entropy_probe(m: CircleMap, mu: EmpiricalMeasure, profile: ExperimentProfile, beta: float,
                        x_samples: int, n: int, seed: int | np.random.Generator = 0, inclusion_points: int = 1000,
                        burn_in: int = 50) -> LocalEntropyProbe:
    """-(1/n) ln mu(B(x, rho_beta; n)) at mu-typical x, plus the inclusion check of beta * J_n(x)."""
    if not 0.0 < beta < profile.delta:
        raise ValueError("beta must lie in (0, delta)")
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        # -(1/n) ln mu(B) is undefined at n = 0; nothing to sample
        empty = np.empty(0)
        return LocalEntropyProbe(empty, True, 0, empty, empty)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    a, L, tp = m.args
    md = m.marked
    starts = kern.advance(a, L, tp, _uniform_starts(rng, x_samples, md.sps), burn_in)
    vals, widths = [], []
    incl_ok = True
    checked = 0
    for x in starts:
        xs = np.empty(n + 1)
        xs[0] = x
        for i in range(n):
            y = kern.f_lift(a, L, tp, xs[i])
            xs[i + 1] = y - math.floor(y)
        rho = np.array([rho_beta(m, float(p), beta) for p in xs[:n]])
        lo0, hi0, _, _, ok = kern.dynamical_ball(a, L, tp, md.mp, md.mk, xs, rho, n)
        dens = mu.density_at(float(x))
        if not ok or not hi0 > lo0 or dens <= 0.0:
            raise EmptyBall(f"dynamical ball at x={x!r} has no resolvable mass")
        log_mass = math.log(dens) + math.log(hi0 - lo0)
        vals.append(-log_mass / n)
        widths.append(math.log(hi0 - lo0))
        lD = kern.log_contraction(a, L, tp, md.cps, md.sps, xs, n)
        if lD == lD:
            half = beta * math.exp(lD)
            offs = np.linspace(-half, half, inclusion_points + 2)[1:-1]
            inside = kern.track_offsets(a, L, tp, xs, rho, n, offs)
            checked += offs.shape[0]
            incl_ok = incl_ok and bool(inside.all())
    return LocalEntropyProbe(np.array(vals), incl_ok, checked, np.array(widths), starts)


@dataclass
class StatReport:
    lyapunov: float
    correlation_fit: tuple[float, float, float]
    clt: tuple[float, float]
    entropy_residual: float
    local_entropy_samples: list[float]
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"lyapunov": self.lyapunov, "correlation_fit": list(self.correlation_fit), "clt": list(self.clt),
                "entropy_residual": self.entropy_residual, "local_entropy_samples": list(self.local_entropy_samples),
                **self.extras}

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def write_correlations_csv(fit: CorrelationFit, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "C_n", "noise_floor", "usable"])
        used = set(fit.usable.tolist())
        for k, (c, f) in enumerate(zip(fit.correlations, fit.noise_floor)):
            w.writerow([k, repr(float(c)), repr(float(f)), int(k in used)])


def write_clt_csv(res: CLTResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "normalised_sum"])
        for i, v in enumerate(res.normalised_sums):
            w.writerow([i, repr(float(v))])


# ---------------------------------------------------------------------------
# plots


def _figure():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "logcircle"
    return plt


def _save(plt, fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_density(measures: Sequence[EmpiricalMeasure], path) -> None:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for mu in measures:
        xs = (np.arange(mu.bin_count) + 0.5) / mu.bin_count
        ax.plot(xs, mu.density, lw=0.8, label=mu.source)
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.legend()
    _save(plt, fig, path)


def plot_correlations(fit: CorrelationFit, path) -> None:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ns = np.arange(fit.correlations.shape[0])
    ax.semilogy(ns, np.maximum(fit.correlations, 1e-300), "o", label="|C_n|")
    ax.semilogy(ns, np.maximum(fit.noise_floor, 1e-300), "--", label="noise floor")
    if fit.tau == fit.tau:
        ax.semilogy(ns, fit.constant * fit.tau ** ns, "-", label="fit")
    ax.set_xlabel("n")
    ax.legend()
    _save(plt, fig, path)


def plot_clt(res: CLTResult, path) -> None:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.hist(res.normalised_sums, bins=60, density=True, alpha=0.6)
    if res.sigma_squared > 0:
        s = math.sqrt(res.sigma_squared)
        t = np.linspace(-4 * s, 4 * s, 200)
        ax.plot(t, stats.norm.pdf(t, scale=s))
    ax.set_xlabel("S_n / sqrt(n)")
    _save(plt, fig, path)


def plot_tails(counts: dict[int, float], fit: tuple[float, float, float], path, label: str = "R") -> None:
    plt = _figure()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ns = np.array(sorted(counts))
    ax.semilogy(ns, [counts[n] for n in ns], "o", label=f"measure of {{{label} = n}}")
    if fit[0] == fit[0]:
        ax.semilogy(ns, np.exp(fit[1] + fit[0] * ns), "-", label="fit")
    ax.set_xlabel("n")
    ax.legend()
    _save(plt, fig, path)
