import numpy as np
import pytest

from proxie.datamodel import ColumnRoles, Dataset
from proxie.dgm import LinearGaussianDgm, sample

ROLES = ColumnRoles("Y", "A", ("X",), ("Z",), ("W",))


def make_dataset(cols, roles=ROLES):
    return Dataset({k: np.asarray(v, dtype=float) for k, v in cols.items()}, roles)


@pytest.fixture
def roles():
    return ROLES


@pytest.fixture(scope="session")
def pci_data():
    """Moderate-size sample from the reference valid-PCI model (observed columns only)."""
    return sample(LinearGaussianDgm(), 5000, 123).observed()


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
