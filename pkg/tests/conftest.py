import numpy as np
import pytest

from etconsensus.dynamics import make_params
from etconsensus.graph import five_agent_digraph
from etconsensus.simulator import Mode, SimConfig, run

X0 = np.array([-1.0, 0.0, 2.0, 1.0, 2.0])
SIGMA = np.array([0.9, 0.4, 0.4, 0.3, 0.6])
DELTA = np.array([0.05, 0.05, 0.05, 0.03, 0.05])
BOUNDS = np.array([0.45, 0.2, 0.2, 0.1, 0.2])

# the Laplacian written out by hand, independent of the graph module
L_FIVE = np.array(
    [
        [2, -1, 0, 0, -1],
        [0, 2, 0, 0, -2],
        [-2, 0, 2, 0, 0],
        [0, -1, -2, 3, 0],
        [0, 0, 0, -3, 3],
    ],
    dtype=float,
)

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def graph5():
    return five_agent_digraph()


@pytest.fixture(scope="session")
def params5(graph5):
    return make_params(graph5, SIGMA)


@pytest.fixture(scope="session")
def config5(graph5, params5):
    return SimConfig(graph5, params5, X0, 20.0)


@pytest.fixture(scope="session")
def run5(config5):
    return run(config5)


@pytest.fixture(scope="session")
def robust_config5(graph5):
    return SimConfig(graph5, make_params(graph5, SIGMA, delta=DELTA), X0, 20.0, mode=Mode.ROBUST, rng_seed=7)


@pytest.fixture(scope="session")
def robust_run5(robust_config5):
    return run(robust_config5)
