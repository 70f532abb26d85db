import functools

import numpy as np
import pytest

from willmore_flow.grid import build_grids
from willmore_flow.surfaces import make_sphere, make_torus


@functools.lru_cache(maxsize=None)
def sphere_atlas(n, radius=1.0):
    return build_grids(make_sphere(radius), n)


@functools.lru_cache(maxsize=None)
def torus_atlas(n, R=2.0, r=1.0):
    return build_grids(make_torus(R, r), n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def acceptance_line(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
