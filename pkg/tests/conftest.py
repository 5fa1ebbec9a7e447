import numpy as np
import pytest

from perfhom import BoundaryFluxModel, CellGeometry, FluxModel, centred, mesh_unit_cell
from perfhom.geometry import periodic_pairing


@pytest.fixture(scope="session")
def disk_cell():
    return mesh_unit_cell(CellGeometry.disk(0.25), 1 / 8)


@pytest.fixture(scope="session")
def coarse_disk_cell():
    return mesh_unit_cell(CellGeometry.disk(0.25), 1 / 4)


@pytest.fixture(scope="session")
def plain_cell():
    return mesh_unit_cell(CellGeometry.none(), 1 / 8)


@pytest.fixture(scope="session")
def disk_pairing(disk_cell):
    return periodic_pairing(disk_cell)


@pytest.fixture(scope="session")
def catalog_g(disk_cell):
    return centred(BoundaryFluxModel("cos_angle", "sin2_angle", "soft_abs"), disk_cell)


@pytest.fixture(scope="session")
def linear_g(disk_cell):
    return centred(BoundaryFluxModel("cos_angle", "sin2_angle", "identity"), disk_cell)


@pytest.fixture(scope="session")
def nonlinear_flux():
    return FluxModel("monotone_nonlinear", "sinprod", mu=1.0)


@pytest.fixture(scope="session")
def nonsym_flux():
    return FluxModel("linear", "aniso_nonsym")


@pytest.fixture(scope="session")
def sym_flux():
    return FluxModel("linear", "aniso_sym")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    def log(number, title, passed, detail, runtime, limit):
        ok = passed and runtime < limit
        line = (f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} "
                f"({detail}; {runtime:.1f} s, limit {limit:g} s)")
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
