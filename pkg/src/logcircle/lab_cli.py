"""Experiment configuration, the parameter-assumption checker, sweeps and the command line."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import sys
import typing
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np
import yaml

from . import _kernels as kern
from . import ergodic_stats as es
from .errors import ConfigError, CriticalOrbitTruncated, LabError, NoiseDominated, OrbitHitsSet
from .inducing import (_loglinear_fit, build_full_return_map, build_stopping_partition, check_stopped_element,
                       induced_summary, tail_statistics, write_branches_csv)
from .map_core import CircleMap, ExperimentProfile, PhiSpec, fit_derivative_bounds, verify_derivative_bounds
from .orbit_engine import PrecisionPolicy, check_distortion, iterate_orbit, write_orbit_csv
from .return_structure import build_binding_intervals, classify_returns, decompose_orbit, write_decomposition_csv

TASKS = ("verify-map", "build-partition", "build-induced", "stats", "entropy", "clt", "sweep", "all")
VERBS = {"verify-map": "verify-map", "partition": "build-partition", "induce": "build-induced", "stats": "stats",
         "entropy": "entropy", "clt": "clt", "sweep": "sweep", "all": "all"}
HORIZON_LABEL = "finite-horizon approximation"
BINDING_DEPTH = 8  # deeper binding radii fall below the double spacing at L = 200


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class MapConfig:
    a: float = 0.303
    L: float = 200.0
    phi: PhiSpec = field(default_factory=PhiSpec)


@dataclass(frozen=True)
class ProfileConfig:
    """Practical-mode constants; in paper mode only N0 is read."""

    mode: Literal["paper", "practical"] = "practical"
    delta: float = 1e-2
    lam: float = 0.3
    N0: int = 3
    sigma_scale: float = 0.1
    M0: int = 5

    def build(self, L: float) -> ExperimentProfile:
        if self.mode == "paper":
            return ExperimentProfile.paper(L, self.N0)
        return ExperimentProfile.practical(L, delta=self.delta, lam=self.lam, N0=self.N0,
                                           sigma_scale=self.sigma_scale, M0=self.M0)


@dataclass(frozen=True)
class VerifyBudget:
    points: int = 10_000
    bound_grid: int = 100_000
    distortion_configs: int = 100
    distortion_pairs: int = 1000
    distortion_n_max: int = 20


@dataclass(frozen=True)
class PartitionBudget:
    base_intervals: int = 20
    samples: int = 1000
    max_steps: int = 60


@dataclass(frozen=True)
class InducedBudget:
    samples: int = 20_000
    mass_target: float = 0.999
    ulam_bins: int = 100
    max_stages: int = 200
    certificate_points: int = 10_000


@dataclass(frozen=True)
class BirkhoffBudget:
    n_orbits: int = 1000
    orbit_len: int = 10_000
    burn_in: int = 100
    bins: int = 1000


@dataclass(frozen=True)
class CorrelationBudget:
    n_max: int = 20
    orbits: int = 200
    orbit_len: int = 50_000


@dataclass(frozen=True)
class CLTBudget:
    n: int = 1000
    samples: int = 10_000
    ks_threshold: float = 0.05
    growth_n: tuple[int, ...] = (100, 1000, 10_000)
    growth_samples: int = 2000
    coboundary_amplitude: float = 0.1
    green_kubo_tolerance: float = 0.15


@dataclass(frozen=True)
class EntropyBudget:
    beta: float = 0.005
    x_samples: int = 200
    n: int = 50
    probe_tolerance: float = 0.15
    residual_tolerance: float = 0.02


@dataclass(frozen=True)
class SweepBudget:
    a_grid: int = 200
    L_values: tuple[float, ...] = (100.0, 10_000.0)
    horizon: int = 1000


@dataclass(frozen=True)
class RunConfig:
    task: str = "all"
    seed: int = 20261015
    out: str = "out"
    horizon: int = 1000
    skip_assertions: tuple[str, ...] = ()
    verify: VerifyBudget = field(default_factory=VerifyBudget)
    partition: PartitionBudget = field(default_factory=PartitionBudget)
    induced: InducedBudget = field(default_factory=InducedBudget)
    birkhoff: BirkhoffBudget = field(default_factory=BirkhoffBudget)
    correlation: CorrelationBudget = field(default_factory=CorrelationBudget)
    clt: CLTBudget = field(default_factory=CLTBudget)
    entropy: EntropyBudget = field(default_factory=EntropyBudget)
    sweep: SweepBudget = field(default_factory=SweepBudget)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {', '.join(TASKS)}")


@dataclass(frozen=True)
class ExperimentConfig:
    map: MapConfig = field(default_factory=MapConfig)
    profile: ProfileConfig = field(default_factory=ProfileConfig)
    precision: PrecisionPolicy = field(default_factory=PrecisionPolicy)
    run: RunConfig = field(default_factory=RunConfig)

    def circle_map(self) -> CircleMap:
        return CircleMap(self.map.a, self.map.L, self.map.phi)

    def experiment_profile(self) -> ExperimentProfile:
        return self.profile.build(self.map.L)

    def to_dict(self) -> dict:
        return _to_plain(self)

    def content_dict(self) -> dict:
        """Everything that can change a result; the output directory is left out."""
        d = self.to_dict()
        d["run"].pop("out", None)
        return d

    def sha256(self) -> str:
        return hashlib.sha256(_canonical_json(self.content_dict()).encode()).hexdigest()

    def replace(self, **run_overrides) -> "ExperimentConfig":
        return dataclasses.replace(self, run=dataclasses.replace(self.run, **run_overrides))

    def with_profile_mode(self, mode: str) -> "ExperimentConfig":
        return dataclasses.replace(self, profile=dataclasses.replace(self.profile, mode=mode))


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(map(str, unknown))}")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _coerce(hints[name], value, f"{where}.{name}" if where else name)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError, LabError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        inner = typing.get_args(tp)[0]
        return tuple(_coerce(inner, v, where) for v in value)
    if origin is Literal:
        if value not in typing.get_args(tp):
            raise ConfigError(f"{where}: {value!r} not in {typing.get_args(tp)}")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Read a YAML config; missing keys take the canonical defaults, unknown keys are rejected."""
    if path is None:
        return ExperimentConfig()
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    return config_from_dict(data or {})


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "")


# ---------------------------------------------------------------------------
# dynamical assumptions


@dataclass(frozen=True)
class FirstFailure:
    condition: Literal["a", "G1", "G2", "G3", "proximity"]
    critical_point: float
    time: int


@dataclass(frozen=True)
class AssumptionVerdict:
    passed: bool
    first_failure: FirstFailure | None
    horizon: int
    label: str = HORIZON_LABEL

    def __post_init__(self):
        if self.passed != (self.first_failure is None):
            raise ValueError("passed must hold exactly when there is no failure")

    def to_dict(self) -> dict:
        return {"passed": self.passed, "horizon": self.horizon, "label": self.label,
                "first_failure": dataclasses.asdict(self.first_failure) if self.first_failure else None}


def _first_failure_for(m: CircleMap, c: float, profile: ExperimentProfile, horizon: int,
                       policy: PrecisionPolicy) -> FirstFailure | None:
    lnL = math.log(m.L)
    N0, sigma, alpha, lam = profile.N0, profile.sigma, profile.alpha, profile.lam
    v0 = kern.f_lift(*m.args, float(c))
    v0 -= math.floor(v0)
    orbit = iterate_orbit(m, v0, horizon + 1, policy)
    avail = orbit.length
    P, dC, dS = orbit.log_deriv_prefix, orbit.dC, orbit.dS
    for n in range(min(N0, horizon, avail) + 1):
        if not (dC[n] > sigma and dS[n] > sigma):
            return FirstFailure("a", float(c), n)
    if horizon > N0:
        cands = []
        # G1 over all pairs i < j: the binding constraint is the running max of P[i] + threshold(i)
        idx = np.arange(avail + 1)
        thr = lnL + np.minimum(math.log(sigma), -alpha * idx * lnL)
        run_max = np.maximum.accumulate(P + thr)
        j = np.arange(1, min(horizon + 1, avail) + 1)
        bad = np.nonzero(P[j] < run_max[j - 1])[0]
        if bad.size:
            cands.append((max(N0 + 1, int(j[bad[0]]) - 1), 0, "G1"))
        bad = np.nonzero(P[j] < lam * j * lnL)[0]
        if bad.size:
            cands.append((max(N0 + 1, int(j[bad[0]]) - 1), 1, "G2"))
        i = np.arange(N0, min(horizon, avail) + 1)
        with np.errstate(divide="ignore"):
            bad = np.nonzero(np.log(dS[i]) < -4.0 * alpha * i * lnL)[0]
        if bad.size:
            cands.append((max(N0 + 1, int(i[bad[0]])), 2, "G3"))
        if cands:
            n, _, cond = min(cands)
            return FirstFailure(cond, float(c), n)
    if orbit.truncated or avail < horizon + 1:
        return FirstFailure("proximity", float(c), avail)
    return None


def check_dynamical_assumptions(m: CircleMap, profile: ExperimentProfile, horizon: int,
                                policy: PrecisionPolicy | None = None) -> AssumptionVerdict:
    """Follow every critical orbit for ``horizon`` steps and return the earliest violated condition."""
    if horizon < profile.N0:
        raise ValueError("horizon must be at least N0")
    policy = policy or PrecisionPolicy()
    worst: FirstFailure | None = None
    for c in m.marked.critical.points:
        try:
            f = _first_failure_for(m, c, profile, horizon, policy)
        except CriticalOrbitTruncated as exc:
            f = FirstFailure("proximity", float(c), exc.step)
        if f is not None and (worst is None or f.time < worst.time):
            worst = f
    return AssumptionVerdict(worst is None, worst, horizon)


@dataclass(frozen=True)
class SweepRow:
    L: float
    accepted_fraction: float
    accepted: int
    grid: int
    failures: dict[str, int]
    passing_a: tuple[float, ...]


@dataclass(frozen=True)
class SweepTable:
    rows: tuple[SweepRow, ...]
    horizon: int
    label: str = HORIZON_LABEL

    def fractions(self) -> dict[float, float]:
        return {r.L: r.accepted_fraction for r in self.rows}

    def to_dict(self) -> dict:
        return {"horizon": self.horizon, "label": self.label,
                "rows": [{"L": r.L, "accepted_fraction": r.accepted_fraction, "accepted": r.accepted,
                          "grid": r.grid, "failures": dict(r.failures)} for r in self.rows]}


def sweep_parameters(m_template: CircleMap, a_grid: int, L_values: Sequence[float],
                     profile_for: Callable[[float], ExperimentProfile], horizon: int,
                     policy: PrecisionPolicy | None = None) -> SweepTable:
    """Fraction of a in {i / a_grid} passing the assumption checker, for each L."""
    if a_grid < 100:
        raise ValueError("a_grid must be at least 100")
    rows = []
    for L in L_values:
        base = CircleMap(0.0, float(L), m_template.phi)
        profile = profile_for(float(L))
        fails: Counter[str] = Counter()
        passing = []
        for i in range(a_grid):
            v = check_dynamical_assumptions(base.with_a(i / a_grid), profile, horizon, policy)
            if v.passed:
                passing.append(i / a_grid)
            else:
                fails[v.first_failure.condition] += 1
        rows.append(SweepRow(float(L), len(passing) / a_grid, len(passing), a_grid,
                             dict(sorted(fails.items())), tuple(passing)))
    return SweepTable(tuple(rows), horizon)


def find_passing_a(m: CircleMap, profile: ExperimentProfile, horizon: int, grid: int = 1000,
                   start: float = 0.0) -> float | None:
    """First grid value of a (scanning upward from ``start``) that passes the checker."""
    for i in range(grid):
        a = (start + i / grid) % 1.0
        if check_dynamical_assumptions(m.with_a(a), profile, horizon).passed:
            return a
    return None


# ---------------------------------------------------------------------------
# experiment orchestration


def _finite(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return _finite(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _canonical_json(obj) -> str:
    return json.dumps(_finite(obj), sort_keys=True, indent=2, allow_nan=False)


class _Lab:
    """Shared state for one run; expensive objects are built once and reused across tasks."""

    def __init__(self, config: ExperimentConfig, out: Path):
        self.config = config
        self.run = config.run
        self.out = out
        self.sha = config.sha256()
        self.m = config.circle_map()
        self.profile = config.experiment_profile()
        self.results: dict[str, dict] = {}
        self.assertions: dict[str, bool] = {}
        self.errors: dict[str, str] = {}
        self.files: list[str] = []
        self._cache: dict[str, object] = {}

    def rng(self, stream: str) -> np.random.Generator:
        key = int.from_bytes(hashlib.sha256(stream.encode()).digest()[:4], "little")
        return np.random.default_rng([self.run.seed, key])

    def check(self, name: str, ok: bool) -> None:
        if name not in self.run.skip_assertions:
            self.assertions[name] = bool(ok)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def stamp(self, name: str) -> None:
        p = self.out / name
        text = p.read_text()
        cfg = json.dumps(_finite(self.config.content_dict()), sort_keys=True)
        if name.endswith(".csv"):
            p.write_text(f"# config_sha256: {self.sha}\n# config: {cfg}\n" + text)
        elif name.endswith(".svg"):
            head, sep, rest = text.partition("?>\n")
            note = f"<!-- config_sha256: {self.sha} config: {cfg.replace('--', '- -')} -->\n"
            p.write_text(head + sep + note + rest if sep else note + text)

    # cached building blocks

    def cached(self, key: str, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def imap(self):
        b = self.run.induced
        return self.cached("imap", lambda: build_full_return_map(
            self.m, self.profile, mass_target=b.mass_target, samples=b.samples, rng=self.rng("induced"),
            max_stages=b.max_stages, certificate_points=b.certificate_points, strict=False))

    def birkhoff(self, which: int = 0) -> es.BirkhoffRun:
        b = self.run.birkhoff
        return self.cached(f"birkhoff{which}", lambda: es.run_birkhoff(
            self.m, b.n_orbits, b.orbit_len, b.burn_in, b.bins, self.rng(f"birkhoff{which}")))

    def induced_measures(self):
        return self.cached("nu", lambda: es.estimate_acim_induced(self.imap(), self.m, self.run.induced.ulam_bins,
                                                                  bins=self.run.birkhoff.bins))

    def lyapunov(self) -> float:
        return self.birkhoff().lyapunov


def _task_verify_map(lab: _Lab) -> dict:
    m, b = lab.m, lab.run.verify
    a, L, tp = m.args
    md = m.marked
    rng = lab.rng("verify")
    xs = rng.random(4 * b.points)
    keep = np.array([kern.dist_to(x, md.cps) > 1e-3 and kern.dist_to(x, md.sps) > 1e-3 for x in xs])
    xs = xs[keep][:b.points]
    lift_err = max(abs(kern.f_lift(a, L, tp, x + 1.0) - kern.f_lift(a, L, tp, x) - 1.0) for x in xs)
    rel = []
    for x in xs:
        h = 1e-4 * min(kern.dist_to(x, md.cps), kern.dist_to(x, md.sps))
        fd = (kern.f_delta(a, L, tp, x, h) - kern.f_delta(a, L, tp, x, -h)) / (2 * h)
        fp = kern.f_prime(a, L, tp, x)
        rel.append(abs(fd - fp) / abs(fp))
    bounds = fit_derivative_bounds(m, b.bound_grid)
    ver = verify_derivative_bounds(m, bounds, b.bound_grid)
    lab.cached("bounds", lambda: bounds)
    reports, skipped = [], 0
    while len(reports) < b.distortion_configs and skipped < 10 * b.distortion_configs:
        x, n = float(rng.random()), int(rng.integers(1, b.distortion_n_max + 1))
        try:
            reports.append(check_distortion(m, x, n, b.distortion_pairs, rng))
        except OrbitHitsSet:
            skipped += 1
    frac = float(np.mean([r.passed for r in reports])) if reports else 0.0
    verdict = check_dynamical_assumptions(m, lab.profile, lab.run.horizon, lab.config.precision)
    # orbit of the first critical value and its return structure up to the horizon
    v0 = kern.f_lift(a, L, tp, float(md.cps[0]))
    orbit = iterate_orbit(m, v0 - math.floor(v0), lab.run.horizon, lab.config.precision)
    write_orbit_csv(orbit, lab.path("critical_orbit.csv"))
    bindings = [build_binding_intervals(m, float(c), BINDING_DEPTH, bounds) for c in md.cps]
    dec = classify_returns(decompose_orbit(m, orbit, lab.profile, bindings))
    write_decomposition_csv(dec, lab.path("critical_returns.csv"))
    with open(lab.path("marked_sets.csv"), "w") as fh:
        fh.write("kind,point\n")
        for kind, pts in (("critical", md.critical.points), ("singular", md.singular.points)):
            for p in pts:
                fh.write(f"{kind},{p!r}\n")
    lab.check("verify-map.lift_identity", lift_err < 1e-9)
    lab.check("verify-map.derivative_agreement", max(rel) < 1e-6)
    lab.check("verify-map.derivative_bounds", all(v for k, v in ver.items() if k != "points_checked"))
    lab.check("verify-map.distortion", frac >= 0.95)
    lab.check("verify-map.assumptions", verdict.passed)
    return {"critical_points": list(md.critical.points), "singular_points": list(md.singular.points),
            "lift_error": lift_err, "max_relative_derivative_error": max(rel), "K0": bounds.K0,
            "eps0": bounds.eps0, "bound_checks": ver, "distortion_pass_fraction": frac,
            "distortion_configs": len(reports), "assumptions": verdict.to_dict(),
            "critical_orbit": {"length": orbit.length, "truncated": orbit.truncated, "returns": len(dec.events)}}


def _task_partition(lab: _Lab) -> dict:
    b, prof = lab.run.partition, lab.profile
    rng = lab.rng("partition")
    tails: dict[int, float] = {}
    unresolved = base_mass = 0.0
    bad = {"large_scale": 0, "expansion": 0, "stop_time_ok": 0}
    count = 0
    with open(lab.path("partition_elements.csv"), "w") as fh:
        fh.write("base,left,right,stop_time,log_image_length,min_log_derivative\n")
        for k in range(b.base_intervals):
            lo = (k + 0.5) / b.base_intervals
            part = build_stopping_partition(lab.m, (lo, lo + prof.delta), prof, max_steps=b.max_steps,
                                            samples=b.samples, rng=rng)
            unresolved += part.unresolved_measure
            base_mass += part.base_length
            for n, v in part.tail_counts.items():
                tails[n] = tails.get(n, 0.0) + v
            for el in part.elements:
                count += 1
                for key, ok in check_stopped_element(el, prof).items():
                    bad[key] += not ok
                fh.write(f"{k},{el.interval[0]!r},{el.interval[1]!r},{el.stop_time},"
                         f"{math.log(el.image_length)!r},{el.min_log_derivative!r}\n")
    ns = np.array([n for n in sorted(tails) if n >= prof.M0 and tails[n] > 0])
    fit = _loglinear_fit(ns, np.array([tails[n] for n in ns]))
    with open(lab.path("partition_tails.csv"), "w") as fh:
        fh.write("n,measure_S_at_least_n\n")
        for n in sorted(tails):
            fh.write(f"{n},{tails[n]!r}\n")
    es.plot_tails({n: tails[n] for n in ns}, fit, lab.path("partition_tails.svg"), label="S >=")
    lab.check("build-partition.large_scale", bad["large_scale"] == 0 and bad["stop_time_ok"] == 0)
    lab.check("build-partition.expansion", bad["expansion"] == 0)
    lab.check("build-partition.unresolved", unresolved < 1e-3 * base_mass)
    lab.check("build-partition.tail_fit", fit[0] < 0 and fit[2] >= 0.9)
    return {"elements": count, "violations": bad, "unresolved_fraction": unresolved / base_mass,
            "tail_fit": {"rate": fit[0], "intercept": fit[1], "r_squared": fit[2]}}


def _task_induced(lab: _Lab) -> dict:
    imap = lab.imap()
    write_branches_csv(imap, lab.path("induced_branches.csv"))
    counts, fit = tail_statistics(imap)
    es.plot_tails(counts, fit, lab.path("induced_tails.svg"), label="R =")
    summary = induced_summary(imap)
    gaps = np.array([b.max_gap for b in imap.branches])
    lab.check("build-induced.total_mass", imap.total_mass >= 0.999)
    lab.check("build-induced.coverage", bool(imap.branches) and float(imap.coverage_defect.max()) < 1e-6)
    lab.check("build-induced.max_gap", bool(imap.branches) and float(gaps.max()) < 1e-3)
    lab.check("build-induced.injective", all(b.monotone for b in imap.branches))
    lab.check("build-induced.tail_slope", fit[0] < 0)
    summary["max_gap"] = float(gaps.max()) if gaps.size else math.nan
    lab.path("induced_summary.json").write_text(
        _canonical_json({"config": lab.config.to_dict(), "config_sha256": lab.sha, **summary}) + "\n")
    return summary


def _task_stats(lab: _Lab) -> dict:
    m = lab.m
    run0, run1 = lab.birkhoff(0), lab.birkhoff(1)
    nu, mu_ind = lab.induced_measures()
    tv_seeds = run0.measure.tv_distance(run1.measure)
    tv = run0.measure.tv_distance(mu_ind)
    lq = es.lyapunov_exponent(m, run0.measure)
    lq2 = es.lyapunov_exponent(m, run0.measure, depth=8, max_depth=48)
    cos = es.Observable.cosine()
    cb = lab.run.correlation
    corr_ok, corr = False, {}
    try:
        fit = es.correlation_decay(m, cos, cos, run0.measure, cb.n_max, cb.orbits, lab.rng("correlation"),
                                   orbit_len=cb.orbit_len)
        corr_ok = 0.0 < fit.tau < 1.0 and fit.r_squared >= 0.8
        corr = {"tau": fit.tau, "constant": fit.constant, "r_squared": fit.r_squared,
                "usable": fit.usable.tolist()}
    except NoiseDominated as exc:
        fit = exc.partial
        corr = {"error": str(exc), "usable": fit.usable.tolist()}
    es.write_correlations_csv(fit, lab.path("correlations.csv"))
    es.plot_correlations(fit, lab.path("correlations.svg"))
    es.plot_density([run0.measure, mu_ind], lab.path("density.svg"))
    with open(lab.path("density.csv"), "w") as fh:
        fh.write("bin,birkhoff,induced\n")
        for i, (p, q) in enumerate(zip(run0.measure.bin_masses, mu_ind.bin_masses)):
            fh.write(f"{i},{p!r},{q!r}\n")
    lab.check("stats.acim_tv", tv < 0.1)
    lab.check("stats.bins_positive", bool(np.all(mu_ind.bin_masses > 0)))
    lab.check("stats.lyapunov_positive", lq > 0)
    lab.check("stats.lyapunov_agreement", abs(lq - run0.lyapunov) <= 0.02 * abs(run0.lyapunov))
    lab.check("stats.quadrature_converged", abs(lq - lq2) < 1e-4)
    lab.check("stats.correlation_fit", corr_ok)
    lab._cache["stats_fit"] = (fit, lq)
    return {"tv_birkhoff_vs_induced": tv, "tv_between_seeds": tv_seeds, "lyapunov_quadrature": lq,
            "lyapunov_direct": run0.lyapunov, "lyapunov_refined": lq2, "birkhoff_samples": run0.samples,
            "reseeded_orbits": run0.reseeded, "ulam_residual": nu.residual,
            "mean_return_time": nu.mean_return_time, "density_bounds": list(nu.density_bounds),
            "correlation": corr}


def _task_entropy(lab: _Lab) -> dict:
    imap = lab.imap()
    nu, _ = lab.induced_measures()
    lam = lab.lyapunov()
    ent = es.entropy_check(imap, nu, lab.m, lam)
    eb = lab.run.entropy
    probe = es.local_entropy_probe(lab.m, lab.birkhoff().measure, lab.profile, eb.beta, eb.x_samples, eb.n,
                                   lab.rng("probe"))
    with open(lab.path("local_entropy.csv"), "w") as fh:
        fh.write("x,value,log_ball_width\n")
        for x, v, w in zip(probe.starts, probe.values, probe.ball_log_widths):
            fh.write(f"{x!r},{v!r},{w!r}\n")
    lab.check("entropy.residual", ent.residual <= eb.residual_tolerance)
    lab.check("entropy.induced_positive", ent.induced_log_derivative > 0)
    lab.check("entropy.scaling", abs(ent.mean_return_time_by_branch - ent.mean_return_time) <= 1e-6)
    lab.check("entropy.inclusion", probe.inclusion_ok)
    lab.check("entropy.probe", abs(probe.median - lam) <= eb.probe_tolerance * lam)
    lab._cache["probe"] = probe
    return {**dataclasses.asdict(ent), "probe_median": probe.median, "probe_n": eb.n, "beta": eb.beta,
            "inclusion_points_checked": probe.inclusion_checked}


def _task_clt(lab: _Lab) -> dict:
    m, cb = lab.m, lab.run.clt
    cos = es.Observable.cosine()
    res = es.clt_test(m, cos, None, cb.n, cb.samples, lab.rng("clt"))
    cob = es.Observable.coboundary(es.Observable.cosine(cb.coboundary_amplitude))
    growth = es.variance_growth(m, cob, cb.growth_n, cb.growth_samples, lab.rng("growth"))
    vals = [growth[n] for n in sorted(growth)]
    cob_res = es.clt_test(m, cob, None, cb.n, 2000, lab.rng("clt-coboundary"))
    diag = {"coboundary": es.coboundary_diagnostic(m, cob), "cosine": es.coboundary_diagnostic(m, cos)}
    es.write_clt_csv(res, lab.path("clt_samples.csv"))
    es.plot_clt(res, lab.path("clt.svg"))
    with open(lab.path("variance_growth.csv"), "w") as fh:
        fh.write("n,var_over_n\n")
        for n in sorted(growth):
            fh.write(f"{n},{growth[n]!r}\n")
    lab.check("clt.sigma_positive", res.sigma_squared > 0)
    lab.check("clt.ks_distance", res.ks_distance < cb.ks_threshold)
    lab.check("clt.coboundary_decreasing", all(x > y for x, y in zip(vals, vals[1:])))
    lab.check("clt.green_kubo", abs(res.sigma_squared - res.variance_ratio) <= cb.green_kubo_tolerance
              * res.variance_ratio)
    lab._cache["clt"] = res
    return {"sigma_squared": res.sigma_squared, "ks_distance": res.ks_distance, "truncation": res.truncation,
            "var_over_n": res.variance_ratio, "coboundary_sigma_squared": cob_res.sigma_squared,
            "coboundary_var_over_n": {str(k): v for k, v in growth.items()},
            "transfer_function_residual": diag}


def _task_sweep(lab: _Lab) -> dict:
    sb = lab.run.sweep
    table = sweep_parameters(lab.m, sb.a_grid, sb.L_values, lab.config.profile.build, sb.horizon,
                             lab.config.precision)
    with open(lab.path("sweep.csv"), "w") as fh:
        fh.write("L,accepted_fraction,accepted,grid,fail_a,fail_G1,fail_G2,fail_G3,fail_proximity\n")
        for r in table.rows:
            f = r.failures
            fh.write(f"{r.L!r},{r.accepted_fraction!r},{r.accepted},{r.grid},{f.get('a', 0)},{f.get('G1', 0)},"
                     f"{f.get('G2', 0)},{f.get('G3', 0)},{f.get('proximity', 0)}\n")
    _plot_sweep(table, lab.path("sweep.svg"))
    fr = [r.accepted_fraction for r in sorted(table.rows, key=lambda r: r.L)]
    lab.check("sweep.trend", fr[-1] >= fr[0] - 1.0 / sb.a_grid)
    lab.check("sweep.bookkeeping", all(r.accepted + sum(r.failures.values()) == r.grid for r in table.rows))
    return table.to_dict()


def _plot_sweep(table: SweepTable, path) -> None:
    plt = es._figure()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    Ls = [r.L for r in table.rows]
    ax.semilogx(Ls, [r.accepted_fraction for r in table.rows], "o-")
    ax.set_xlabel("L")
    ax.set_ylabel(f"accepted fraction ({table.label})")
    ax.set_ylim(0, 1)
    es._save(plt, fig, path)


_TASKS = {"verify-map": _task_verify_map, "build-partition": _task_partition, "build-induced": _task_induced,
          "stats": _task_stats, "entropy": _task_entropy, "clt": _task_clt, "sweep": _task_sweep}


@dataclass(frozen=True)
class ReportBundle:
    out: Path
    files: tuple[str, ...]
    failures: tuple[str, ...]
    summary: dict

    @property
    def exit_code(self) -> int:
        return 0 if not self.failures else 1


def run_experiment(config: ExperimentConfig) -> ReportBundle:
    """Run the configured task(s), write summary.json plus CSV and SVG artefacts, and collect failures."""
    out = Path(config.run.out)
    out.mkdir(parents=True, exist_ok=True)
    lab = _Lab(config, out)
    tasks = [t for t in TASKS if t != "all"] if config.run.task == "all" else [config.run.task]
    for t in tasks:
        before = len(lab.files)
        try:
            lab.results[t] = _TASKS[t](lab)
        except LabError as exc:
            lab.errors[t] = f"{type(exc).__name__}: {exc}"
        for name in lab.files[before:]:
            lab.stamp(name)
    if config.run.task == "all" and "stats_fit" in lab._cache and "clt" in lab._cache:
        fit, lq = lab._cache["stats_fit"]
        clt = lab._cache["clt"]
        probe = lab._cache.get("probe")
        ent = lab.results.get("entropy", {})
        report = es.StatReport(lyapunov=lq, correlation_fit=fit.as_tuple(), clt=(clt.sigma_squared, clt.ks_distance),
                               entropy_residual=ent.get("residual", math.nan),
                               local_entropy_samples=probe.values.tolist() if probe is not None else [])
        lab.path("stat_report.json").write_text(
            _canonical_json({"config": config.to_dict(), "config_sha256": lab.sha, **report.to_dict()}) + "\n")
    failures = sorted([k for k, v in lab.assertions.items() if not v] + [f"{t}.error" for t in lab.errors])
    summary = {"config": config.to_dict(), "config_sha256": lab.sha, "tasks": tasks, "results": lab.results,
               "assertions": dict(sorted(lab.assertions.items())), "errors": lab.errors, "failures": failures,
               "passed": not failures, "artifacts": sorted(set(lab.files)) + ["summary.json"]}
    (out / "summary.json").write_text(_canonical_json(summary) + "\n")
    return ReportBundle(out, tuple(summary["artifacts"]), tuple(failures), summary)


# ---------------------------------------------------------------------------
# command line


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="logcircle", description="Numerical lab for x -> x + a + L ln|phi(x)|.")
    p.add_argument("verb", choices=sorted(VERBS))
    p.add_argument("--config", help="YAML experiment config (defaults to the canonical settings)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.add_argument("--out", help="override run.out")
    p.add_argument("--profile", choices=("paper", "practical"), help="override profile.mode")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        over = {"task": VERBS[args.verb]}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.out is not None:
            over["out"] = args.out
        cfg = cfg.replace(**over)
        if args.profile:
            cfg = cfg.with_profile_mode(args.profile)
        cfg.circle_map()
        cfg.experiment_profile()
    except (ConfigError, LabError, ValueError, OSError) as exc:
        print(json.dumps({"passed": False, "failures": ["config"], "error": str(exc)}), file=sys.stderr)
        return 2
    bundle = run_experiment(cfg)
    print(json.dumps({"passed": not bundle.failures, "failures": list(bundle.failures),
                      "summary": str(bundle.out / "summary.json")}))
    return bundle.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
