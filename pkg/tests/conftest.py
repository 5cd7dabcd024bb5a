import numpy as np
import pytest

from stochlin.sde import DiffusionField, VectorField


@pytest.fixture
def ou_system():
    f = VectorField(1, lambda x: -x, jac=lambda x: np.array([[-1.0]]), name="ou")
    return f, DiffusionField.constant([[1.0]])


@pytest.fixture
def cubic_system():
    from stochlin.presets import cubic

    return cubic()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
