import numpy as np
import pytest
from hypothesis import settings

from hmaxwell import clustering, fem, hcore, mesh

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def cube_system(level, kappa=25.0, bc=fem.KEEP_ALL, source=(0.0, 0.0, 1.0), beta=1.0):
    m = mesh.unit_cube(level)
    e = mesh.enumerate_edges(m)
    return m, e, fem.assemble(m, e, fem.MaterialParams(kappa, beta), source, bc)


@pytest.fixture(scope="session")
def cube1():
    return cube_system(1)


@pytest.fixture(scope="session")
def cube2():
    return cube_system(2)


@pytest.fixture(scope="session")
def cube1_h(cube1):
    """k=1 system on a tree fine enough to have admissible blocks."""
    sys_ = cube1[2]
    bt = clustering.build_square(sys_.geometry, n_min=4)
    return sys_, bt, hcore.sparse_to_h(sys_, bt)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
