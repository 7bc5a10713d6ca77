"""The map family x -> x + a + L ln|phi(x)| on the circle.

phi is a real trigonometric polynomial.  This module evaluates the map and
its derivatives, locates the critical set C (zeros of f') and the singular
set S (zeros of phi), fits the derivative-bound constants, and holds the
experiment constants (``ExperimentProfile``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
from numba import njit

from . import _kernels as kern
from .errors import NoZeros, NonMorse, SingularProximity, UnboundedRatio, UnresolvedRoot

TOL_TRANSVERSE = 1e-6
TOL_MORSE = 1e-6
ROOT_RESIDUAL = 1e-12
SINGULAR_EXCLUSION = 1e-13
K0_CAP = 1e6


def _pack(constant: float, cos: tuple[float, ...], sin: tuple[float, ...]) -> np.ndarray:
    K = max(len(cos), len(sin))
    tp = np.zeros(2 + 2 * K)
    tp[0] = constant
    tp[1] = K
    tp[2:2 + len(cos)] = cos
    tp[2 + K:2 + K + len(sin)] = sin
    return tp


def _sign_change_roots(fun, grid: np.ndarray, values: np.ndarray) -> list[tuple[float, float]]:
    """Roots of a periodic function from grid sign changes, refined to adjacent doubles.

    Returns (root, residual) pairs; grid points where the value is exactly zero
    count only when the sign changes across them.
    """
    n = grid.shape[0]
    sgn = np.sign(values)
    roots: list[tuple[float, float]] = []
    for i in range(n):
        j = (i + 1) % n
        lo = grid[i]
        hi = grid[j] + (1.0 if j == 0 else 0.0)
        if sgn[i] == 0.0:
            if sgn[i - 1] * sgn[j] < 0.0:
                roots.append((float(lo % 1.0), 0.0))
            continue
        if sgn[j] == 0.0 or sgn[i] * sgn[j] > 0.0:
            continue
        flo = values[i]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            fm = fun(mid)
            if fm == 0.0:
                lo = hi = mid
                break
            if (fm > 0.0) == (flo > 0.0):
                lo = mid
            else:
                hi = mid
        r = lo if abs(fun(lo)) <= abs(fun(hi)) else hi
        roots.append((float(r - math.floor(r)), float(abs(fun(r)))))
    roots.sort()
    return roots


@njit(cache=True)
def _deriv_table(a, L, tp, cps, sps, xs):
    n = xs.shape[0]
    out = np.empty((n, 4))
    for i in range(n):
        out[i, 2] = kern.dist_to(xs[i], cps)
        out[i, 3] = kern.dist_to(xs[i], sps)
        if kern.trig_value(tp, xs[i]) == 0.0:
            out[i, 0] = np.inf
            out[i, 1] = np.inf
            continue
        fp, fpp = kern.f_prime2(a, L, tp, xs[i])
        out[i, 0] = fp
        out[i, 1] = fpp
    return out


@dataclass(frozen=True)
class PhiSpec:
    """phi(x) = offset + sum_k c_k cos(2 pi k x) + s_k sin(2 pi k x).

    Construction certifies that phi has a root, that its roots are transverse
    and that its critical points are non-degenerate.
    """

    cosine_coefficients: tuple[float, ...] = ()
    sine_coefficients: tuple[float, ...] = (1.0,)
    constant_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "cosine_coefficients", tuple(float(c) for c in self.cosine_coefficients))
        object.__setattr__(self, "sine_coefficients", tuple(float(s) for s in self.sine_coefficients))
        object.__setattr__(self, "constant_offset", float(self.constant_offset))
        self._certify()

    @cached_property
    def packed(self) -> np.ndarray:
        return _pack(self.constant_offset, self.cosine_coefficients, self.sine_coefficients)

    @property
    def degree(self) -> int:
        return int(self.packed[1])

    def value(self, x: float) -> float:
        return kern.trig_value(self.packed, float(x))

    def derivatives(self, x: float) -> tuple[float, float, float]:
        return kern.trig3(self.packed, float(x))

    def _grid(self) -> np.ndarray:
        n = 2048 * max(1, self.degree)
        return np.arange(n) / n

    def _certify(self) -> None:
        if self.degree == 0:
            raise NoZeros("constant profile has no sign change")
        grid = self._grid()
        tp = self.packed
        vals = np.array([kern.trig_value(tp, x) for x in grid])
        roots = _sign_change_roots(lambda x: kern.trig_value(tp, x), grid, vals)
        if not roots:
            raise NoZeros("phi has no sign change on [0,1)")
        for r, _ in roots:
            _, d1, _ = kern.trig3(tp, r)
            if abs(d1) <= TOL_TRANSVERSE:
                raise NonMorse(f"root {r!r} of phi is not transverse (|phi'|={abs(d1):.3g})")
        d1s = np.array([kern.trig3(tp, x)[1] for x in grid])
        for r, _ in _sign_change_roots(lambda x: kern.trig3(tp, x)[1], grid, d1s):
            if abs(kern.trig3(tp, r)[2]) <= TOL_MORSE:
                raise NonMorse(f"critical point {r!r} of phi is degenerate")

    def to_dict(self) -> dict:
        return {
            "cosine_coefficients": list(self.cosine_coefficients),
            "sine_coefficients": list(self.sine_coefficients),
            "constant_offset": self.constant_offset,
        }


@dataclass(frozen=True)
class MarkedSet:
    kind: Literal["critical", "singular"]
    points: tuple[float, ...]
    certification: tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)


@dataclass(frozen=True)
class CircleMap:
    a: float
    L: float
    phi: PhiSpec = field(default_factory=PhiSpec)

    def __post_init__(self):
        if not 0.0 <= self.a < 1.0:
            raise ValueError("a must lie in [0, 1)")
        if not self.L > 0.0:
            raise ValueError("L must be positive")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "L", float(self.L))

    @property
    def args(self) -> tuple[float, float, np.ndarray]:
        return self.a, self.L, self.phi.packed

    @cached_property
    def marked(self) -> "MarkedData":
        crit, sing = find_marked_sets(self, 8192)
        return MarkedData.from_sets(crit, sing)

    def with_a(self, a: float) -> "CircleMap":
        """Same phi and L with a new rotation; C and S do not depend on a, so they are shared."""
        other = CircleMap(a, self.L, self.phi)
        if "marked" in self.__dict__:
            other.__dict__["marked"] = self.__dict__["marked"]
        return other

    def lift(self, x: float) -> float:
        return kern.f_lift(self.a, self.L, self.phi.packed, float(x))

    def to_dict(self) -> dict:
        return {"a": self.a, "L": self.L, "phi": self.phi.to_dict()}


@dataclass(frozen=True)
class MarkedData:
    """Critical and singular sets in the array layout the kernels expect."""

    critical: MarkedSet
    singular: MarkedSet
    mp: np.ndarray = field(repr=False)
    mk: np.ndarray = field(repr=False)

    @classmethod
    def from_sets(cls, critical: MarkedSet, singular: MarkedSet) -> "MarkedData":
        pts = [(p, 0) for p in critical.points] + [(p, 1) for p in singular.points]
        pts.sort()
        mp = np.array([p for p, _ in pts], dtype=float)
        mk = np.array([k for _, k in pts], dtype=np.int64)
        return cls(critical, singular, mp, mk)

    @property
    def cps(self) -> np.ndarray:
        return self.critical.as_array()

    @property
    def sps(self) -> np.ndarray:
        return self.singular.as_array()


@dataclass(frozen=True)
class DerivativeBounds:
    K0: float
    eps0: float
    ratios: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class ExperimentProfile:
    """Constants of the construction.

    ``lam`` is the expansion exponent (serialised as ``lambda``).
    """

    lam: float
    alpha: float
    N0: int
    delta: float
    sigma: float
    M0: int
    mode: Literal["paper", "practical"]

    def __post_init__(self):
        if self.mode == "practical":
            if not 0.0 < self.delta < self.sigma < 1.0:
                raise ValueError("practical profile needs 0 < delta < sigma < 1")
            if self.M0 < 1:
                raise ValueError("practical profile needs M0 >= 1")
        elif self.mode != "paper":
            raise ValueError(f"unknown profile mode {self.mode!r}")

    @classmethod
    def paper(cls, L: float, N0: int = 1000) -> "ExperimentProfile":
        lam, alpha = 1e-3, 1e-6
        return cls(lam=lam, alpha=alpha, N0=N0, delta=L ** (-alpha * N0), sigma=L ** (-1.0 / 6.0),
                   M0=int(math.floor(2 * alpha * N0 / lam)), mode="paper")

    @classmethod
    def practical(cls, L: float, delta: float = 1e-2, lam: float = 0.3, N0: int = 3,
                  sigma_scale: float = 0.1, M0: int | None = None) -> "ExperimentProfile":
        """Desk-scale constants; alpha is chosen so that delta = L^(-alpha N0)."""
        alpha = math.log(1.0 / delta) / (N0 * math.log(L))
        if M0 is None:
            M0 = max(1, int(math.floor(2 * alpha * N0 / lam)))
        return cls(lam=lam, alpha=alpha, N0=N0, delta=delta, sigma=sigma_scale * L ** (-1.0 / 6.0),
                   M0=M0, mode="practical")

    @property
    def sqrt_delta(self) -> float:
        return math.sqrt(self.delta)

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "alpha": self.alpha, "N0": self.N0, "delta": self.delta,
                "sigma": self.sigma, "M0": self.M0, "mode": self.mode}


# ---------------------------------------------------------------------------
# operations


def _check_singular(m: CircleMap, x: float) -> None:
    v = m.phi.value(x)
    if v == 0.0 or kern.dist_to(float(x), m.marked.sps) < SINGULAR_EXCLUSION:
        raise SingularProximity(f"x={x!r} lies within the singular exclusion radius")


def eval_map(m: CircleMap, x: float, lift: bool = False) -> float:
    _check_singular(m, x)
    y = m.lift(x)
    return y if lift else y - math.floor(y)


def eval_derivatives(m: CircleMap, x: float) -> tuple[float, float]:
    _check_singular(m, x)
    fp, fpp = kern.f_prime2(m.a, m.L, m.phi.packed, float(x))
    return fp, fpp


def find_marked_sets(m: CircleMap, grid_points: int = 8192) -> tuple[MarkedSet, MarkedSet]:
    """Critical and singular sets by grid sign changes and bisection."""
    if grid_points < 1000:
        raise ValueError("grid_points must be at least 1000")
    tp = m.phi.packed
    L = m.L
    grid = np.arange(grid_points) / grid_points
    phi_vals = np.array([kern.trig_value(tp, x) for x in grid])
    sing = _sign_change_roots(lambda x: kern.trig_value(tp, x), grid, phi_vals)
    if not sing:
        raise NoZeros("phi has no sign change on [0,1)")
    for r, res in sing:
        if res >= ROOT_RESIDUAL:
            raise UnresolvedRoot(f"singular point near {r!r} has residual {res:.3g}")

    # phi * f' = phi + L phi' is smooth, so its zeros are exactly the critical points
    def g(x):
        v, d1, _ = kern.trig3(tp, x)
        return v + L * d1

    g_vals = np.array([g(x) for x in grid])
    crit_raw = _sign_change_roots(g, grid, g_vals)
    crit = []
    for r, _ in crit_raw:
        fp = abs(kern.f_prime(m.a, L, tp, r))
        # at double resolution |f'| is bounded below by |f''| * ulp(c)
        floor_res = abs(kern.f_prime2(m.a, L, tp, r)[1]) * 4 * np.spacing(max(r, 0.5))
        if fp >= max(ROOT_RESIDUAL, floor_res):
            raise UnresolvedRoot(f"critical point near {r!r} has residual {fp:.3g}")
        crit.append((r, fp))
    if not crit:
        raise UnresolvedRoot("no critical point found")
    allpts = sorted([p for p, _ in sing] + [p for p, _ in crit])
    spacing = np.diff(np.array(allpts + [allpts[0] + 1.0]))
    if len(allpts) > 1 and spacing.min() <= 10.0 / grid_points:
        raise UnresolvedRoot("marked points closer than ten grid cells; refine the grid")
    sp = [p for p, _ in sing]
    cp = np.array([p for p, _ in crit])
    for i, s in enumerate(sp):
        t = sp[(i + 1) % len(sp)] + (1.0 if i + 1 == len(sp) else 0.0)
        between = np.sum(((cp - s) % 1.0 > 0) & ((cp - s) % 1.0 < t - s))
        if between % 2 == 0:
            raise UnresolvedRoot(f"even number of critical points between singular points {s!r} and {t % 1.0!r}")
    return (
        MarkedSet("critical", tuple(p for p, _ in crit), tuple(r for _, r in crit)),
        MarkedSet("singular", tuple(p for p, _ in sing), tuple(r for _, r in sing)),
    )


def distance_to_set(s: MarkedSet, x: float) -> float:
    if not s.points:
        raise ValueError("empty marked set")
    return kern.dist_to(float(x), s.as_array())


def _ratios(m: CircleMap, xs: np.ndarray, exclusion: float):
    md = m.marked
    tab = _deriv_table(m.a, m.L, m.phi.packed, md.cps, md.sps, xs)
    fp = np.abs(tab[:, 0])
    fpp = np.abs(tab[:, 1])
    dc = tab[:, 2]
    ds = tab[:, 3]
    keep = (dc > exclusion) & (ds > exclusion)
    fp, fpp, dc, ds = fp[keep], fpp[keep], dc[keep], ds[keep]
    L = m.L
    lower = L * dc / (ds * fp)
    upper = fp * ds / (L * dc)
    second = fpp * ds * ds / L
    near = np.maximum(L / fpp, fpp / L)
    return lower, upper, second, near, dc


def fit_derivative_bounds(m: CircleMap, grid_points: int = 100_000,
                          exclusion: float = 1e-9) -> DerivativeBounds:
    """Fit K0 and eps0 so that the three derivative inequalities hold on a grid.

    K0 is 5% above the largest observed ratio (the smallest admissible value
    on the grid, to 5%); eps0 is the largest radius around C on which
    K0^-1 L < |f''| < K0 L holds.
    """
    xs = (np.arange(grid_points) + 0.5) / grid_points
    lower, upper, second, near, dc = _ratios(m, xs, exclusion)
    at_c = [max(m.L / abs(fpp), abs(fpp) / m.L)
            for fpp in (eval_derivatives(m, c)[1] for c in m.marked.critical.points)]
    worst = max(lower.max(), upper.max(), second.max(), max(at_c))
    K0 = 1.05 * worst
    if not np.isfinite(K0) or K0 >= K0_CAP:
        raise UnboundedRatio(f"derivative ratios reach {worst:.3g}")
    bad = dc[near >= K0]
    eps0 = float(min(0.9 * bad.min() if bad.size else 0.25, 0.25))
    ratios = {"lower": float(lower.max()), "upper": float(upper.max()),
              "second": float(second.max()), "critical_curvature": float(max(at_c))}
    return DerivativeBounds(K0=float(K0), eps0=eps0, ratios=ratios)


def verify_derivative_bounds(m: CircleMap, bounds: DerivativeBounds, grid_points: int = 100_000,
                             exclusion: float = 1e-9) -> dict:
    """Re-check the three inequalities on an independent (endpoint-aligned) grid."""
    xs = np.arange(grid_points) / grid_points
    lower, upper, second, near, dc = _ratios(m, xs, exclusion)
    K0 = bounds.K0
    inside = dc < bounds.eps0
    return {
        "first_derivative": bool(np.all(lower <= K0) and np.all(upper <= K0)),
        "second_derivative": bool(np.all(second <= K0)),
        "curvature_near_critical": bool(np.all(near[inside] < K0)),
        "points_checked": int(lower.size),
    }
