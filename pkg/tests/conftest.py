# tests/conftest.py

import numpy as np
import pytest

from beamcast.netgeom import NodeSet, generate_network
from beamcast.settings import SimulationConfig


def _nodes_from_points(points, side=16.0, config=None):
    positions = np.asarray(points, dtype=float)
    positions.setflags(write=False)
    cfg = config or SimulationConfig(n=max(1, len(positions)), nu=1.0)
    return NodeSet(positions=positions, side=side, config=cfg)


@pytest.fixture(scope="session")
def make_nodes():
    """Builds a NodeSet from explicit coordinates, for hand-built geometries."""
    return _nodes_from_points


@pytest.fixture(scope="module")
def small_config():
    return SimulationConfig(n=256, nu=1.0, epsilon=0.1, gamma=1.0, c1=2.0, c2=1.0, seed=7)


@pytest.fixture(scope="module")
def small_network(small_config):
    return generate_network(small_config)


@pytest.fixture(scope="module")
def scheme_config():
    return SimulationConfig(n=1024, nu=1.0, epsilon=0.1, gamma=1.0, c1=2.0, c2=1.0, seed=3)


@pytest.fixture(scope="module")
def scheme_network(scheme_config):
    return generate_network(scheme_config)
