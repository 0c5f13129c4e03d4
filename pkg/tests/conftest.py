import math

import numpy as np
import pytest

from urbanmfg.network import build_network, discretize

TRIANGLE = {
    "vertices": [
        {"id": 0, "x": 1.0, "y": 0.0},
        {"id": 1, "x": math.cos(2 * math.pi / 3), "y": math.sin(2 * math.pi / 3)},
        {"id": 2, "x": math.cos(4 * math.pi / 3), "y": math.sin(4 * math.pi / 3)},
    ],
    "edges": [{"tail": 0, "head": 1}, {"tail": 1, "head": 2}, {"tail": 0, "head": 2}],
}

SQUARE = {
    "vertices": [
        {"id": 0, "x": 0.0, "y": 0.0},
        {"id": 1, "x": 1.0, "y": 0.0},
        {"id": 2, "x": 1.0, "y": 1.0},
        {"id": 3, "x": 0.0, "y": 1.0},
    ],
    "edges": [
        {"tail": 0, "head": 1}, {"tail": 1, "head": 2}, {"tail": 2, "head": 3},
        {"tail": 0, "head": 3}, {"tail": 0, "head": 2},
    ],
}

SEGMENT = {"vertices": [(0, 0.0, 0.0), (1, 1.0, 0.0)], "edges": [{"tail": 0, "head": 1}]}

STAR = {
    "vertices": [(0, 0.0, 0.0), (1, 1.0, 0.0), (2, -0.6, 0.8), (3, -0.6, -0.8)],
    "edges": [{"tail": 0, "head": 1}, {"tail": 0, "head": 2}, {"tail": 0, "head": 3}],
}

MU = (0.4, 0.2)


@pytest.fixture(scope="session")
def triangle():
    return build_network(TRIANGLE, mu=MU)


@pytest.fixture(scope="session")
def square():
    return build_network(SQUARE, mu=MU)


@pytest.fixture(scope="session")
def star():
    return build_network(STAR, mu=MU)


@pytest.fixture(scope="session")
def triangle_grid(triangle):
    return discretize(triangle, 0.05)


@pytest.fixture(scope="session")
def square_grid(square):
    return discretize(square, 0.05)


@pytest.fixture(scope="session")
def star_grid(star):
    return discretize(star, 0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.RESULTS):
            terminalreporter.write_line(line)
