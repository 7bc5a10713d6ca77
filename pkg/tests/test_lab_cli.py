import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml

from logcircle import _kernels as kern
from logcircle.errors import ConfigError
from logcircle.lab_cli import (HORIZON_LABEL, AssumptionVerdict, ExperimentConfig, FirstFailure,
                               check_dynamical_assumptions, config_from_dict, find_passing_a, load_config, main,
                               run_experiment, sweep_parameters)
from logcircle.map_core import CircleMap, ExperimentProfile
from logcircle.orbit_engine import iterate_orbit

ROOT = Path(__file__).resolve().parents[1]
CANONICAL = ROOT / "configs" / "canonical.yaml"

SMALL_RUN = {
    "verify": {"points": 1000, "bound_grid": 10_000, "distortion_configs": 20, "distortion_pairs": 100},
    "partition": {"base_intervals": 3, "samples": 300},
    "induced": {"samples": 3000, "ulam_bins": 50, "certificate_points": 2000},
    "birkhoff": {"n_orbits": 200, "orbit_len": 5000},
    "correlation": {"orbits": 40, "orbit_len": 5000},
    "clt": {"n": 200, "samples": 1000, "growth_n": [10, 100], "growth_samples": 200},
    "entropy": {"x_samples": 10, "n": 20},
    "sweep": {"a_grid": 100, "L_values": [100.0, 1000.0], "horizon": 100},
}


def _write_config(path: Path, data: dict) -> Path:
    path.write_text(yaml.safe_dump(data))
    return path


# ---------------------------------------------------------------------------
# configuration


def test_canonical_config_matches_defaults():
    cfg = load_config(CANONICAL)
    assert cfg == ExperimentConfig().replace(out="out/canonical")
    assert cfg.circle_map().a == 0.303
    assert cfg.experiment_profile().M0 == 5
    assert load_config(None) == ExperimentConfig()


@pytest.mark.parametrize("data", [
    {"map": {"b": 1.0}},
    {"run": {"verify": {"pointz": 10}}},
    {"extra": {}},
    {"map": {"phi": {"sine_coefficients": [1.0], "colour": "red"}}},
])
def test_unknown_keys_are_rejected(data):
    with pytest.raises(ConfigError, match="unknown key"):
        config_from_dict(data)


@pytest.mark.parametrize("data", [
    {"map": {"a": "zero"}},
    {"run": {"task": "dance"}},
    {"run": {"seed": 1.5}},
    {"profile": {"mode": "fast"}},
    {"precision": {"working_precision": "quad"}},
    {"run": {"sweep": {"L_values": 100.0}}},
    {"map": []},
])
def test_malformed_values_are_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_config_hash_tracks_content():
    a = ExperimentConfig()
    assert a.sha256() == ExperimentConfig().sha256()
    assert a.sha256() != a.replace(seed=1).sha256()
    assert a.sha256() == a.replace(out="elsewhere").sha256()
    assert a.with_profile_mode("paper").experiment_profile().mode == "paper"
    assert config_from_dict({"run": {"seed": 7.0}}).run.seed == 7


def test_cli_rejects_unknown_key(tmp_path, capsys):
    bad = _write_config(tmp_path / "bad.yaml", {"map": {"a": 0.3, "wobble": 1}})
    assert main(["verify-map", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["passed"] is False and "wobble" in err["error"]
    assert not (tmp_path / "o").exists()


# ---------------------------------------------------------------------------
# assumption checker


def _brute_force_verdict(m: CircleMap, profile: ExperimentProfile, horizon: int) -> tuple[bool, set]:
    """Direct all-pairs evaluation of the four conditions along every critical orbit."""
    lnL = math.log(m.L)
    violated = set()
    for c in m.marked.cps:
        v0 = kern.f_lift(*m.args, float(c))
        orb = iterate_orbit(m, v0 - math.floor(v0), horizon + 1)
        P, dC, dS = orb.log_deriv_prefix, orb.dC, orb.dS
        for n in range(profile.N0 + 1):
            if not (dC[n] > profile.sigma and dS[n] > profile.sigma):
                violated.add("a")
        if horizon <= profile.N0:
            continue
        top = min(horizon, orb.length)
        for j in range(1, top + 1):
            if P[j] < profile.lam * j * lnL:
                violated.add("G2")
            for i in range(j):
                if P[j] - P[i] < lnL + min(math.log(profile.sigma), -profile.alpha * i * lnL):
                    violated.add("G1")
                    break
        for i in range(profile.N0, top + 1):
            if dS[i] == 0.0 or math.log(dS[i]) < -4 * profile.alpha * i * lnL:
                violated.add("G3")
        if orb.truncated or orb.length < horizon + 1:
            violated.add("proximity")
    return not violated, violated


@pytest.mark.parametrize("a", [0.0, 0.1, 0.2, 0.3, 0.303, 0.45, 0.6, 0.77, 0.9, 0.95])
def test_checker_matches_brute_force(a):
    m = CircleMap(a, 200.0)
    prof = ExperimentProfile.practical(200.0)
    v = check_dynamical_assumptions(m, prof, 150)
    ok, violated = _brute_force_verdict(m, prof, 150)
    assert v.passed == ok
    if not ok:
        assert v.first_failure.condition in violated


def test_critical_value_near_critical_point_fails_a_at_time_zero():
    L = 200.0
    prof = ExperimentProfile.practical(L)
    m0 = CircleMap(0.0, L)
    c, c2 = (float(p) for p in m0.marked.cps)
    # solve f(c) = c2 + sigma / 2 for a (c does not depend on a)
    a = (c2 + prof.sigma / 2 - kern.f_lift(*m0.args, c)) % 1.0
    m = m0.with_a(a)
    v0 = kern.f_lift(*m.args, c) % 1.0
    assert abs(v0 - (c2 + prof.sigma / 2)) < 1e-9
    verdict = check_dynamical_assumptions(m, prof, 1000)
    assert not verdict.passed
    assert verdict.first_failure == FirstFailure("a", c, 0)


def test_horizon_equal_to_n0_checks_only_condition_a():
    # a growth threshold above the actual rate makes G2 fail after N0
    prof = dataclasses.replace(ExperimentProfile.practical(200.0), lam=3.0)
    m = CircleMap(0.303, 200.0)
    long = check_dynamical_assumptions(m, prof, 1000)
    assert not long.passed and long.first_failure.condition == "G2"
    assert long.first_failure.time > prof.N0
    assert _brute_force_verdict(m, prof, 1000) == (False, {"G2"})
    short = check_dynamical_assumptions(m, prof, prof.N0)
    assert short.passed and short.horizon == prof.N0
    with pytest.raises(ValueError):
        check_dynamical_assumptions(m, prof, prof.N0 - 1)


def test_scan_finds_passing_parameter():
    prof = ExperimentProfile.practical(200.0)
    a = find_passing_a(CircleMap(0.0, 200.0), prof, 1000, start=0.3)
    assert a == pytest.approx(0.303)
    v = check_dynamical_assumptions(CircleMap(a, 200.0), prof, 1000)
    assert v.passed and v.label == HORIZON_LABEL
    assert v.to_dict() == {"passed": True, "horizon": 1000, "label": HORIZON_LABEL, "first_failure": None}


def test_verdict_consistency():
    with pytest.raises(ValueError):
        AssumptionVerdict(True, FirstFailure("a", 0.25, 0), 10)
    with pytest.raises(ValueError):
        AssumptionVerdict(False, None, 10)


def test_sweep_bookkeeping():
    prof_for = ExperimentConfig().profile.build
    table = sweep_parameters(CircleMap(0.0, 200.0), 100, [100.0, 1000.0], prof_for, 100)
    assert table.label == HORIZON_LABEL
    for row in table.rows:
        assert 0.0 <= row.accepted_fraction <= 1.0
        assert row.accepted + sum(row.failures.values()) == row.grid == 100
        assert len(row.passing_a) == row.accepted
        for a in row.passing_a[:3]:
            assert check_dynamical_assumptions(CircleMap(a, row.L), prof_for(row.L), 100).passed
    with pytest.raises(ValueError):
        sweep_parameters(CircleMap(0.0, 200.0), 50, [100.0], prof_for, 100)


# ---------------------------------------------------------------------------
# experiments


def test_verify_map_on_canonical_config(tmp_path):
    bundle = run_experiment(load_config(CANONICAL).replace(task="verify-map", out=str(tmp_path)))
    assert bundle.exit_code == 0, bundle.failures
    assert set(bundle.files) == {"critical_orbit.csv", "critical_returns.csv", "marked_sets.csv", "summary.json"}
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["passed"] and summary["config_sha256"] == bundle.summary["config_sha256"]
    assert summary["results"]["verify-map"]["assumptions"]["label"] == HORIZON_LABEL
    first = (tmp_path / "marked_sets.csv").read_text().splitlines()[0]
    assert first == f"# config_sha256: {summary['config_sha256']}"


def test_runs_are_byte_identical(tmp_path):
    data = {"run": {"task": "sweep", "sweep": {"a_grid": 100, "L_values": [100.0], "horizon": 50}}}
    cfg = _write_config(tmp_path / "c.yaml", data)
    outs = []
    for name in ("one", "two"):
        out = tmp_path / name
        assert main(["sweep", "--config", str(cfg), "--out", str(out), "--seed", "3"]) in (0, 1)
        outs.append(out)
    for f in ("sweep.csv", "sweep.svg"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    # the summary records its own output directory; everything else must match
    one, two = ((o / "summary.json").read_text().replace(str(o), "OUT") for o in outs)
    assert one == two
    summary = json.loads((outs[0] / "summary.json").read_text())
    assert summary["config"]["run"]["seed"] == 3
    assert summary["results"]["sweep"]["label"] == HORIZON_LABEL


def test_all_task_writes_every_artifact(tmp_path):
    cfg = config_from_dict({"run": dict(SMALL_RUN, task="all", out=str(tmp_path))})
    bundle = run_experiment(cfg)
    expected = {
        "summary.json", "marked_sets.csv", "critical_orbit.csv", "critical_returns.csv",
        "partition_elements.csv", "partition_tails.csv", "partition_tails.svg",
        "induced_branches.csv", "induced_summary.json", "induced_tails.svg",
        "density.csv", "density.svg", "correlations.csv", "correlations.svg",
        "clt_samples.csv", "clt.svg", "variance_growth.csv", "local_entropy.csv",
        "sweep.csv", "sweep.svg", "stat_report.json",
    }
    assert expected <= set(bundle.files)
    for f in expected:
        assert (tmp_path / f).stat().st_size > 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["failures"] == list(bundle.failures)
    assert bundle.exit_code == (1 if bundle.failures else 0)
    report = json.loads((tmp_path / "stat_report.json").read_text())
    assert report["config_sha256"] == summary["config_sha256"]
    assert np.isfinite(report["lyapunov"])
