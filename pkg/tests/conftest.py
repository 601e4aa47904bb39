import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sfrjlab.engine import BoundaryCondition, build_geometry, build_grid  # noqa: E402
from sfrjlab.envelope import EXTENDED_FLUXES  # noqa: E402

ACCEPTANCE_LINES = []


def record(criterion: int, name: str, ok: bool, detail: str = ""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion:2d} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def grid500():
    return build_grid(build_geometry(), 500)


@pytest.fixture(scope="session")
def nominal_bc():
    return BoundaryCondition()


@pytest.fixture(scope="session")
def calibration(nominal_bc, grid500):
    from sfrjlab.harness import calibrate
    return calibrate(nominal_bc, grid500)


@pytest.fixture(scope="session")
def packaged_table():
    from sfrjlab.engagement import default_table
    return default_table()


SWEEP_STEP = 2e6
SWEEP_FLUXES = list(EXTENDED_FLUXES)


@pytest.fixture(scope="session")
def nominal_sweep(nominal_bc, grid500):
    """(SweepTable, {q: SteadyResult}) over SWEEP_FLUXES at nominal inflow."""
    from sfrjlab.envelope import heat_flux_sweep
    results = {}
    table = heat_flux_sweep(nominal_bc, SWEEP_FLUXES, grid500,
                            on_result=lambda q, r: results.__setitem__(q, r))
    return table, results
