import math
import sys

import pytest

from swingreach.hjsolver import DisturbanceBound
from swingreach.plant import RelayStatus, SafeBounds, SmibParams
from swingreach.reachability import invariant_set, stability_region, viability_set


@pytest.fixture(scope="session")
def params():
    return SmibParams()


@pytest.fixture(scope="session")
def safe(params):
    return SafeBounds.nominal(params)


@pytest.fixture(scope="session")
def attack_bound():
    return DisturbanceBound.symmetric(0.2)


@pytest.fixture(scope="session")
def inv_sets(params, safe, attack_bound):
    """Invariant sets at |d| <= 0.2, horizon 3 s, default grid, keyed by relay."""
    return {r: invariant_set(safe, params, r, attack_bound, 3.0) for r in RelayStatus}


@pytest.fixture(scope="session")
def viab_sets(params, safe, attack_bound):
    return {r: viability_set(safe, params, r, attack_bound, 3.0) for r in RelayStatus}


@pytest.fixture(scope="session")
def stability_regions(params):
    return {r: stability_region(params, r, 3.0) for r in RelayStatus}


def near(a, b, tol):
    return math.isclose(a, b, abs_tol=tol)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
