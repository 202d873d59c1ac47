import datetime as dt
from pathlib import Path

import numpy as np
import pytest

from landcover import synthetic
from landcover.grid import NODATA, GridSpec, Raster, SceneStack, TimedScene

DATA_DIR = Path(__file__).parent / "data"


def grid_for(width=8, height=8, cell=10.0, origin=(0.0, 0.0), crs="local"):
    return GridSpec(width=width, height=height, origin_x=origin[0], origin_y=origin[1],
                    cell_size=cell, crs_tag=crs)


def raster_of(values, grid=None, nodata=NODATA):
    values = np.asarray(values, dtype=np.float32)
    if grid is None:
        grid = grid_for(width=values.shape[1], height=values.shape[0])
    return Raster(grid, values, nodata)


def scene_of(bands, timestamp=dt.date(2018, 7, 1), metadata=None, mask=None, grid=None):
    rasters = {}
    for name, vals in bands.items():
        rasters[name] = raster_of(vals, grid=grid) if not isinstance(vals, Raster) else vals
        grid = rasters[name].grid
    return TimedScene(grid, timestamp, rasters, mask, metadata or {})


def stack_of(scenes, sensor="optical"):
    return SceneStack(list(scenes), sensor)


def multi_scene_stack(cell_series, band="b", sensor="optical", month=7):
    """Stack whose every cell of every scene holds the series value for that
    scene; lets per-cell reductions be checked against a plain list."""
    scenes = []
    for i, value in enumerate(cell_series):
        ts = dt.date(2018, month, min(28, i + 1))
        scenes.append(scene_of({band: np.full((4, 4), value, dtype=np.float32)}, timestamp=ts))
    return stack_of(scenes, sensor)


@pytest.fixture(scope="session")
def benchmark():
    return synthetic.make_cluster_benchmark()


@pytest.fixture(scope="session")
def dual_benchmark():
    return synthetic.make_dual_sensor_benchmark()


@pytest.fixture()
def error_matrix_csv():
    return DATA_DIR / "error_matrix_8class.csv"
