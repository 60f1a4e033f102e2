from dataclasses import replace

import numpy as np
import pytest

from deskmd.core import assign_parameters, make_system
from deskmd.systems import lattice_fluid

_acceptance_lines: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        doc = getattr(report, "acceptance_title", None) or report.nodeid.split("::")[-1]
        if report.skipped and isinstance(report.longrepr, tuple):
            doc += f" ({report.longrepr[2].removeprefix('Skipped: ')})"
        _acceptance_lines.append((status, doc))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        report.acceptance_title = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for status, title in _acceptance_lines:
        terminalreporter.write_line(f"[{status}] {title}")


@pytest.fixture
def argon_pair():
    def build(r, box=None):
        return assign_parameters(make_system(["Ar", "Ar"], [[0, 0, 0], [r, 0, 0]], box_length=box))
    return build


@pytest.fixture(scope="session")
def fluid64():
    return lattice_fluid(64)


@pytest.fixture(scope="session")
def charged_system():
    return random_charged_system


def random_charged_system(seed, n=50, extent=2.5, min_sep=0.25):
    """Non-periodic LJ + Coulomb configuration with no very close pairs."""
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < n:
        p = rng.uniform(0, extent, 3)
        if all(np.linalg.norm(p - q) >= min_sep for q in pts):
            pts.append(p)
    elements = rng.choice(["Ar", "C", "N", "O"], size=n)
    system = assign_parameters(make_system(list(elements), np.array(pts)))
    charges = rng.uniform(-0.5, 0.5, n)
    return replace(system, atoms=tuple(replace(a, charge=float(q)) for a, q in zip(system.atoms, charges)))
