import functools

import numpy as np
import pytest

from fhnrom.dg import DGSpace
from fhnrom.fom import build_fom_operators
from fhnrom.mesh import build_square_mesh


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-scale tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="full-scale; pass --runslow to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@functools.lru_cache(maxsize=None)
def space_at(refinements, degree=1):
    return DGSpace(build_square_mesh(10.0, refinements), degree)


@functools.lru_cache(maxsize=None)
def ops_at(refinements):
    return build_fom_operators(space_at(refinements))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
