import numpy as np
import pytest

from rntraj.roadnet import Intersection, RoadNetwork, RoadSegment, generate_grid_network


@pytest.fixture(scope="session")
def line_network():
    """Two straight segments: (0,0)->(1,0)->(2,0) in degrees, 100 m each."""
    nodes = {
        0: Intersection(0, 0.0, 0.0),
        1: Intersection(1, 1.0, 0.0),
        2: Intersection(2, 2.0, 0.0),
    }
    segs = {
        0: RoadSegment(0, 0, 1, 100.0),
        1: RoadSegment(1, 1, 2, 100.0),
    }
    return RoadNetwork("line", nodes, segs)


@pytest.fixture(scope="session")
def grid6():
    return generate_grid_network(6, 6, 100.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
