import numpy as np
import pytest

from rkkytune import spectra


@pytest.fixture(scope="session")
def small_basis():
    """N=6 harmonic trap on a coarse grid with 30 states."""
    trap = spectra.TrapSpec1D(6)
    grid = spectra.GridSpec(18.0, 361)
    op = spectra.build_1d_hamiltonian(trap, grid)
    return spectra.solve_eigenbasis(op, 30)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Print the values recorded by the acceptance tests."""
    reports = [r for key in ("passed", "failed") for r in terminalreporter.stats.get(key, [])
               if r.when == "call" and r.user_properties and "acceptance" in r.nodeid]
    if not reports:
        return
    terminalreporter.section("acceptance measurements")
    for r in sorted(reports, key=lambda r: r.nodeid):
        name = r.nodeid.split("::")[-1]
        terminalreporter.write_line(f"{name} [{r.outcome}]")
        for key, value in r.user_properties:
            terminalreporter.write_line(f"    {key} = {value}")
