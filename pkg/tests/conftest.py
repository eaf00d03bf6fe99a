import pytest

from tweezer_transport.model import (ControlSignal, Landscape, PhysicalConstants, TrapSpec, UnitSystem,
                                     thermal_initial_field)
from tweezer_transport.phase_grid import PhaseGrid


@pytest.fixture(scope="session")
def sr_units():
    return UnitSystem(PhysicalConstants.for_species("Sr88"))


@pytest.fixture(scope="session")
def small_case(sr_units):
    """Short two-trap problem on a coarse grid: (landscape, grid, f0, control)."""
    kb = sr_units.kb_mk
    land = Landscape(TrapSpec(0.0, -kb, 1.5), TrapSpec(10.0, -kb, 1.5), 1.5)
    grid = PhaseGrid(-4.0, 6.0, -1.5, 1.5, 128, 128)
    f0 = thermal_initial_field(land.trap_a, 0.1 * kb, grid)
    control = ControlSignal.smooth_ramp(0.0, 1.0, 2.0, -1.5 * kb, 100)
    return land, grid, f0, control


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Criterion number -> PASS/FAIL line, echoed in the terminal summary."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
