import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from config import SYNTHETIC_PRESET, UNKNOWN, Config  # noqa: E402
from grid import GridGeometry, OccupancyGrid, Pose2, Submap  # noqa: E402
from synth import BenchmarkPlan, WorldSpec, generate_benchmark  # noqa: E402

RES = 0.1
PAD = 3
ROOM = 41  # interior cells of the square room
CLUTTER_ROOM = (80, 60)  # interior (width, height) of the cluttered room
# (col, row, width, height) of boxes inside the cluttered room interior, no symmetry
BOXES = [(14, 12, 3, 3), (45, 20, 4, 2), (60, 44, 2, 4), (25, 38, 3, 2), (52, 9, 2, 2), (33, 27, 4, 4)]

OCC, FREE = 0.9, 0.1


def walled_room(width, height, boxes=(), pad=PAD):
    """A FREE interior ringed by one OCCUPIED cell, surrounded by UNKNOWN padding."""
    cells = np.full((height + 2 + 2 * pad, width + 2 + 2 * pad), UNKNOWN, dtype=np.float32)
    cells[pad:pad + height + 2, pad:pad + width + 2] = OCC
    inner = pad + 1
    cells[inner:inner + height, inner:inner + width] = FREE
    for c, r, w, h in boxes:
        cells[inner + r:inner + r + h, inner + c:inner + c + w] = OCC
    return cells


def make_submap(cells, submap_id="room", pose=None, res=RES):
    h, w = cells.shape
    return Submap(submap_id, pose or Pose2.identity(), OccupancyGrid(GridGeometry(w, h, res), cells))


def rotate_cells_cw(cells, times=1):
    """np.rot90 on row-major y-up storage: cell (c, r) -> (r, W - 1 - c), a clockwise turn."""
    return np.ascontiguousarray(np.rot90(cells, times))


def square_room_centre():
    """(col, row) of the exact centre cell of the square room."""
    c = PAD + 1 + ROOM // 2
    return c, c


@pytest.fixture
def test_config():
    return Config().with_values(SYNTHETIC_PRESET)


@pytest.fixture
def square_room():
    return make_submap(walled_room(ROOM, ROOM), "square")


@pytest.fixture
def cluttered_room():
    return make_submap(walled_room(*CLUTTER_ROOM, boxes=BOXES), "cluttered")


SMALL_WORLD = WorldSpec(seed=7, extent=(20.0, 12.0), room_count=(2, 3), room_size=(3.0, 4.5),
                        corridor_width=(1.0, 1.2), clutter_density=0.2)
SMALL_PLAN = BenchmarkPlan(matching_pairs=3, disjoint_pairs=3, window=(5.0, 5.0), sensor_range=4.5,
                           max_offset=0.6, viewpoints=2)


@pytest.fixture(scope="session")
def small_benchmark():
    return generate_benchmark(SMALL_WORLD, SMALL_PLAN)


def slow_enabled():
    return os.environ.get("LOCUS_SLOW") == "1"


slow = pytest.mark.skipif(not slow_enabled(), reason="set LOCUS_SLOW=1 for acceptance-scale runs")
