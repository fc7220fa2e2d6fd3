import logging

import numpy as np
import pytest

from costmap import build_maps
from datagen import build_reachability_graph, generate_pairs, sample_viewpoints
from envworld import Environment2D, SensorConfig, make_corridor, make_urban_toy
from semantics import default_table


def pytest_configure(config):
    logging.getLogger().setLevel(logging.WARNING)


@pytest.fixture(scope="session")
def table():
    return default_table()


def uniform_env(table, name="floor", width=4.0, height=3.0, resolution=0.1, heights=None):
    """Single-class environment, optionally with a height field."""
    rows, cols = int(round(height / resolution)), int(round(width / resolution))
    labels = np.full((rows, cols), table.index_of(name), dtype=np.int64)
    heights = np.zeros((rows, cols)) if heights is None else np.asarray(heights, dtype=np.float64)
    return Environment2D(width, height, resolution, labels, heights, table, name=f"uniform-{name}")


@pytest.fixture(scope="session")
def floor_env(table):
    return uniform_env(table, "floor", width=6.0, height=4.0)


@pytest.fixture(scope="session")
def corridor(table):
    return make_corridor(8.0, 2.0, "floor", seed=0)


@pytest.fixture(scope="session")
def corridor_maps(corridor):
    return build_maps(corridor)


@pytest.fixture(scope="session")
def urban():
    return make_urban_toy(seed=7)


@pytest.fixture(scope="session")
def urban_maps(urban):
    return build_maps(urban)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def corridor_graph(corridor, corridor_maps):
    points = sample_viewpoints(corridor, corridor_maps.semantic, 20)
    return build_reachability_graph(points, corridor_maps.semantic)


@pytest.fixture(scope="session")
def corridor_samples(corridor, corridor_maps, corridor_graph):
    """Eight 8-ray samples in the corridor."""
    sensor = SensorConfig(n_rays=8)
    return generate_pairs(corridor_graph, corridor, corridor.table, sensor, 8, seed=5, height_map=corridor_maps.height)
