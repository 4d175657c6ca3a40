import numpy as np
import pytest

from biharm.femspace import DofMap
from biharm.mesh import lshape, uniform_refine, unit_square


@pytest.fixture
def square():
    return unit_square()


@pytest.fixture
def square_dofmap(square):
    return DofMap(square)


@pytest.fixture
def bubble(square_dofmap):
    """The single basis function of the two-triangle square."""
    from biharm.femspace import FeFunction
    return FeFunction(square_dofmap, np.ones(1))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=["square", "lshape"])
def refined_mesh(request):
    base = unit_square() if request.param == "square" else lshape()
    return uniform_refine(base, 2)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
