import numpy as np
import pytest

from sshjunction.ground_state import optimize_geometry
from sshjunction.model import SystemParams

# One line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []

_GEOMETRIES: dict[int, np.ndarray] = {}


def relaxed(n_sites: int) -> np.ndarray:
    """Optimised displacements, computed once per session."""
    if n_sites not in _GEOMETRIES:
        _GEOMETRIES[n_sites] = optimize_geometry(SystemParams(n_sites=n_sites)).u
    return _GEOMETRIES[n_sites].copy()


@pytest.fixture(scope="session")
def relaxed_geometry():
    return relaxed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
