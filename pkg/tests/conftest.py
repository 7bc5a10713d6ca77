import numpy as np
import pytest

from logcircle.map_core import CircleMap, ExperimentProfile

CANONICAL_A = 0.303
CANONICAL_L = 200.0


@pytest.fixture(scope="session")
def canonical_map():
    return CircleMap(CANONICAL_A, CANONICAL_L)


@pytest.fixture(scope="session")
def canonical_profile():
    return ExperimentProfile.practical(CANONICAL_L)


@pytest.fixture(scope="session")
def small_map():
    return CircleMap(0.3, 10.0)


@pytest.fixture(scope="session")
def canonical_imap(canonical_map, canonical_profile):
    from logcircle.inducing import build_full_return_map
    return build_full_return_map(canonical_map, canonical_profile, samples=4000, rng=np.random.default_rng(11),
                                 distortion_branches=50)


@pytest.fixture(scope="session")
def canonical_birkhoff(canonical_map):
    from logcircle.ergodic_stats import run_birkhoff
    return run_birkhoff(canonical_map, 300, 10_000, 100, 1000, seed=5)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Lines collected here are printed in the terminal summary, one per criterion."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
