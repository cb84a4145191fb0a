"""
Deterministic synthetic indoor worlds and submaps with exact ground truth.

Worlds are rooms joined by corridors plus convex clutter, rasterized on a
fixed grid whose cell (0, 0) centre is the world origin. Submaps are
grid-aligned windows of the world observed from a few viewpoints by
cell-centre ray casting.
"""

import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from matplotlib.path import Path as PolygonPath
from PIL import Image

from config import OVERLAP_THRESHOLD, SYNTHETIC_RESOLUTION, UNKNOWN, parse_key_values
from errors import ConfigError, GenerationError
from evaluation import ground_truth, overlap_ratio
from grid import GridGeometry, OccupancyGrid, Pose2, Submap, save_dataset

logger = logging.getLogger(__name__)

P_OBSERVED_OCCUPIED = 0.9
P_OBSERVED_FREE = 0.1
MAX_PLACEMENT_ATTEMPTS = 200
MAX_PAIR_ATTEMPTS = 100
ROOM_GAP = 2  # solid cells kept between rooms
CLUTTER_RADIUS = (0.15, 0.4)  # meters
CLUTTER_VERTICES = (3, 6)
VIEWPOINT_JITTER = 0.3  # cells
VIEWPOINT_SPREAD = 2.0  # meters around the first viewpoint of a submap


@dataclass(frozen=True)
class WorldSpec:
    seed: int = 0
    extent: tuple = (24.0, 18.0)  # meters
    room_count: tuple = (3, 5)
    room_size: tuple = (3.0, 6.0)  # meters
    corridor_width: tuple = (1.0, 1.6)  # meters
    clutter_density: float = 0.15  # obstacles per m^2 of room floor
    resolution: float = SYNTHETIC_RESOLUTION

    def __post_init__(self):
        if not (self.extent[0] > 0 and self.extent[1] > 0):
            raise ValueError(f"extent must be positive, got {self.extent}")
        for name in ("room_count", "room_size", "corridor_width"):
            lo, hi = getattr(self, name)
            if lo > hi or lo <= 0:
                raise ValueError(f"{name} range must be non-empty and positive, got {(lo, hi)}")
        if self.clutter_density < 0:
            raise ValueError(f"clutter_density must be >= 0, got {self.clutter_density}")
        if not self.resolution > 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")


@dataclass(frozen=True)
class BenchmarkPlan:
    matching_pairs: int = 10
    disjoint_pairs: int = 10
    window: tuple = (6.0, 6.0)  # meters
    sensor_range: float = 5.0
    max_offset: float = 1.0  # meters between the windows of a matching pair
    viewpoints: int = 3
    overlap_threshold: float = OVERLAP_THRESHOLD


@dataclass(frozen=True, eq=False)
class World:
    geometry: GridGeometry
    occupied: np.ndarray
    rooms: tuple  # interior boxes (c0, r0, c1, r1), half-open, in cells


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    world: World
    submaps: list
    pairs: list  # (id_a, id_b, "match" | "non-match")
    viewpoints: dict = field(default_factory=dict)  # id -> list of world Pose2
    spec: WorldSpec = None
    plan: BenchmarkPlan = None


def _cells(meters, resolution):
    return max(1, int(round(meters / resolution)))


def _separated(a, b, gap):
    return (a[2] + gap <= b[0] or b[2] + gap <= a[0]
            or a[3] + gap <= b[1] or b[3] + gap <= a[1])


def _place_rooms(rng, spec, width, height):
    n_rooms = int(rng.integers(spec.room_count[0], spec.room_count[1] + 1))
    rooms = []
    for index in range(n_rooms):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            w = _cells(rng.uniform(*spec.room_size), spec.resolution)
            h = _cells(rng.uniform(*spec.room_size), spec.resolution)
            if w > width - 2 or h > height - 2:
                raise GenerationError(f"room of {w}x{h} cells cannot fit a {width}x{height} world")
            c0 = int(rng.integers(1, width - w))
            r0 = int(rng.integers(1, height - h))
            box = (c0, r0, c0 + w, r0 + h)
            if all(_separated(box, other, ROOM_GAP) for other in rooms):
                rooms.append(box)
                break
        else:
            raise GenerationError(f"could not place room {index + 1} of {n_rooms}")
    return rooms


def _carve_corridor(occupied, a, b, width_cells):
    height, width = occupied.shape
    ca = ((a[0] + a[2]) // 2, (a[1] + a[3]) // 2)
    cb = ((b[0] + b[2]) // 2, (b[1] + b[3]) // 2)
    half = width_cells // 2

    def carve(c0, c1, r0, r1):
        occupied[max(r0, 1):min(r1, height - 1), max(c0, 1):min(c1, width - 1)] = False

    # L-shape: along x at room a's centre row, then along y at room b's centre column
    carve(min(ca[0], cb[0]) - half, max(ca[0], cb[0]) - half + width_cells, ca[1] - half, ca[1] - half + width_cells)
    carve(cb[0] - half, cb[0] - half + width_cells, min(ca[1], cb[1]) - half, max(ca[1], cb[1]) - half + width_cells)


def _add_clutter(rng, spec, occupied, rooms):
    res = spec.resolution
    floor_area = sum((r[2] - r[0]) * (r[3] - r[1]) for r in rooms) * res * res
    count = int(round(spec.clutter_density * floor_area))
    height, width = occupied.shape
    for _ in range(count):
        room = rooms[int(rng.integers(len(rooms)))]
        cx = rng.uniform(room[0] + 1, room[2] - 2)
        cy = rng.uniform(room[1] + 1, room[3] - 2)
        radius = rng.uniform(*CLUTTER_RADIUS) / res
        k = int(rng.integers(CLUTTER_VERTICES[0], CLUTTER_VERTICES[1] + 1))
        angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, size=k))
        # vertices on a circle in angular order form a convex polygon
        polygon = PolygonPath(np.column_stack([cx + radius * np.cos(angles), cy + radius * np.sin(angles)]))
        c0, c1 = max(int(math.floor(cx - radius)), 0), min(int(math.ceil(cx + radius)) + 1, width)
        r0, r1 = max(int(math.floor(cy - radius)), 0), min(int(math.ceil(cy + radius)) + 1, height)
        rr, cc = np.mgrid[r0:r1, c0:c1]
        inside = polygon.contains_points(np.column_stack([cc.ravel(), rr.ravel()])).reshape(rr.shape)
        occupied[r0:r1, c0:c1] |= inside
    return count


def generate_world(spec):
    """
    Rasterize a world of axis-aligned rooms, L-shaped corridors and convex clutter.

    Raises:
        GenerationError when the rooms cannot be placed
    """
    rng = np.random.default_rng(spec.seed)
    width = _cells(spec.extent[0], spec.resolution)
    height = _cells(spec.extent[1], spec.resolution)
    occupied = np.ones((height, width), dtype=bool)

    rooms = _place_rooms(rng, spec, width, height)
    for c0, r0, c1, r1 in rooms:
        occupied[r0:r1, c0:c1] = False
    ordered = sorted(rooms, key=lambda r: (r[0] + r[2], r[1] + r[3]))
    for a, b in zip(ordered, ordered[1:]):
        _carve_corridor(occupied, a, b, _cells(rng.uniform(*spec.corridor_width), spec.resolution))
    n_clutter = _add_clutter(rng, spec, occupied, rooms) if spec.clutter_density > 0 else 0

    logger.info("world %dx%d cells: %d rooms, %d clutter obstacles", width, height, len(rooms), n_clutter)
    return World(GridGeometry(width, height, spec.resolution), occupied, tuple(rooms))


def visible_cells(occupied, start, targets):
    """
    Which target cells are visible from start.

    start is a fractional (col, row) position; targets is an (N, 2) integer
    array of (col, row) cells. Rays are traversed cell by cell (Amanatides-Woo)
    in lockstep; a crossing exactly through a cell corner steps in x first and
    a position exactly on a cell boundary belongs to the higher-index cell.
    A target is visible when no occupied or off-grid cell lies strictly between
    the start cell and the target; the target itself may be occupied.
    """
    height, width = occupied.shape
    sx, sy = float(start[0]), float(start[1])
    tx = targets[:, 0].astype(int)
    ty = targets[:, 1].astype(int)
    n = len(tx)
    cx = np.full(n, int(math.floor(sx + 0.5)))
    cy = np.full(n, int(math.floor(sy + 0.5)))

    dx = tx - sx
    dy = ty - sy
    step_x = np.sign(tx - cx).astype(int)
    step_y = np.sign(ty - cy).astype(int)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_max_x = np.where(step_x != 0, (cx + 0.5 * step_x - sx) / dx, np.inf)
        t_max_y = np.where(step_y != 0, (cy + 0.5 * step_y - sy) / dy, np.inf)
        t_delta_x = np.where(step_x != 0, 1.0 / np.abs(dx), np.inf)
        t_delta_y = np.where(step_y != 0, 1.0 / np.abs(dy), np.inf)

    n_steps = np.abs(tx - cx) + np.abs(ty - cy)
    blocked = np.zeros(n, dtype=bool)
    for k in range(int(n_steps.max(initial=0))):
        active = k < n_steps
        take_x = ((t_max_x <= t_max_y) & (cx != tx)) | (cy == ty)
        move_x = active & take_x
        move_y = active & ~take_x
        cx = cx + np.where(move_x, step_x, 0)
        t_max_x = np.where(move_x, t_max_x + t_delta_x, t_max_x)
        cy = cy + np.where(move_y, step_y, 0)
        t_max_y = np.where(move_y, t_max_y + t_delta_y, t_max_y)

        between = active & (k + 1 < n_steps)
        inside = (cx >= 0) & (cx < width) & (cy >= 0) & (cy < height)
        hit = ~inside | occupied[np.clip(cy, 0, height - 1), np.clip(cx, 0, width - 1)]
        blocked |= between & hit
    return ~blocked


def carve_submap(world, viewpoints, sensor_range, window, submap_id="submap"):
    """
    Observe a world window from a set of viewpoints.

    Parameters:
        world: World
        viewpoints: list of Pose2 (world frame, only x and y are used)
        sensor_range: meters from a viewpoint to an observed cell centre
        window: (x0, y0, width, height) in world meters, snapped to the grid
        submap_id: identifier of the new submap

    Returns:
        Submap posed at the window's lower-left cell with an identity grid
        origin; observed cells hold 0.9 (occupied) or 0.1 (free)

    Raises:
        GenerationError when a viewpoint lies in an obstacle or off the world
    """
    res = world.geometry.resolution
    height, width = world.occupied.shape
    c0, r0 = int(round(window[0] / res)), int(round(window[1] / res))
    wc, hc = _cells(window[2], res), _cells(window[3], res)

    rr, cc = np.mgrid[r0:r0 + hc, c0:c0 + wc]
    in_world = (cc >= 0) & (cc < width) & (rr >= 0) & (rr < height)
    observed = np.zeros((hc, wc), dtype=bool)
    range_cells = sensor_range / res

    for vp in viewpoints:
        vx, vy = vp.x / res, vp.y / res
        vc, vr = int(math.floor(vx + 0.5)), int(math.floor(vy + 0.5))
        if not (0 <= vc < width and 0 <= vr < height) or world.occupied[vr, vc]:
            raise GenerationError(f"viewpoint ({vp.x:.2f}, {vp.y:.2f}) lies in an obstacle or off the world")
        in_range = in_world & (np.hypot(cc - vx, rr - vy) <= range_cells) & ~observed
        if not in_range.any():
            continue
        targets = np.column_stack([cc[in_range], rr[in_range]])
        visible = visible_cells(world.occupied, (vx, vy), targets)
        observed[in_range] = visible

    cells = np.full((hc, wc), UNKNOWN, dtype=np.float32)
    occ = world.occupied[np.clip(rr, 0, height - 1), np.clip(cc, 0, width - 1)]
    cells[observed & occ] = P_OBSERVED_OCCUPIED
    cells[observed & ~occ] = P_OBSERVED_FREE
    grid = OccupancyGrid(GridGeometry(wc, hc, res), cells)
    return Submap(submap_id, Pose2(c0 * res, r0 * res, 0.0), grid)


def _has_surface(submap):
    cells = submap.grid.cells
    return bool((cells == P_OBSERVED_OCCUPIED).any() and (cells == P_OBSERVED_FREE).any())


class _BenchmarkBuilder:
    """Draws windows and viewpoints for one benchmark from a single RNG."""

    def __init__(self, world, plan, rng):
        self.world = world
        self.plan = plan
        self.rng = rng
        self.res = world.geometry.resolution
        self.free_cells = np.argwhere(~world.occupied)  # (row, col)
        if len(self.free_cells) == 0:
            raise GenerationError("world has no free space")
        self.submaps = []
        self.viewpoints = {}

    def _next_id(self):
        return f"s{len(self.submaps):03d}"

    def _random_free_point(self, near=None):
        cells = self.free_cells
        if near is not None:
            d = np.hypot(cells[:, 1] * self.res - near[0], cells[:, 0] * self.res - near[1])
            cells = cells[d <= VIEWPOINT_SPREAD]
        row, col = cells[int(self.rng.integers(len(cells)))]
        jitter = self.rng.uniform(-VIEWPOINT_JITTER, VIEWPOINT_JITTER, size=2)
        return Pose2((col + jitter[0]) * self.res, (row + jitter[1]) * self.res, 0.0)

    def _viewpoint_set(self):
        first = self._random_free_point()
        extra = [self._random_free_point(near=(first.x, first.y)) for _ in range(self.plan.viewpoints - 1)]
        return [first] + extra

    def _window_around(self, x, y, offset=(0.0, 0.0)):
        w, h = self.plan.window
        return (x - w / 2.0 + offset[0], y - h / 2.0 + offset[1], w, h)

    def _carve(self, viewpoints, window):
        submap = carve_submap(self.world, viewpoints, self.plan.sensor_range, window, self._next_id())
        return submap if _has_surface(submap) else None

    def _keep(self, submap, viewpoints):
        self.submaps.append(submap)
        self.viewpoints[submap.id] = list(viewpoints)

    def single(self):
        for _ in range(MAX_PAIR_ATTEMPTS):
            vps = self._viewpoint_set()
            submap = self._carve(vps, self._window_around(vps[0].x, vps[0].y))
            if submap is not None:
                self._keep(submap, vps)
                return submap
        raise GenerationError("could not carve a submap with a visible surface")

    def matching_pair(self, overlap_of):
        for _ in range(MAX_PAIR_ATTEMPTS):
            vps = self._viewpoint_set()
            a = self._carve(vps, self._window_around(vps[0].x, vps[0].y))
            if a is None:
                continue
            offset = self.rng.uniform(-self.plan.max_offset, self.plan.max_offset, size=2)
            self._keep(a, vps)
            b = self._carve(vps, self._window_around(vps[0].x, vps[0].y, offset))
            if b is not None and overlap_of(a, b) >= self.plan.overlap_threshold:
                self._keep(b, vps)
                return a, b
            self.submaps.pop()
            del self.viewpoints[a.id]
        raise GenerationError("could not carve an overlapping submap pair")

    def disjoint_pair(self):
        w, h = self.plan.window
        for _ in range(MAX_PAIR_ATTEMPTS):
            a = self.single()
            ax, ay = a.pose.x, a.pose.y
            for _ in range(MAX_PAIR_ATTEMPTS):
                vps = self._viewpoint_set()
                window = self._window_around(vps[0].x, vps[0].y)
                # windows must not intersect, with a cell of slack for snapping
                if abs(window[0] - ax) >= w + self.res or abs(window[1] - ay) >= h + self.res:
                    b = self._carve(vps, window)
                    if b is not None:
                        self._keep(b, vps)
                        return a, b
            self.submaps.pop()
            del self.viewpoints[a.id]
        raise GenerationError("could not carve a disjoint submap pair")


def generate_benchmark(spec, plan=None, n_submaps=None):
    """
    Generate a world and a labelled set of submap pairs.

    Parameters:
        spec: WorldSpec
        plan: BenchmarkPlan (matching/disjoint pair counts, window, range)
        n_submaps: total submap count; extra unpaired submaps are added when
            it exceeds twice the planned pairs

    Returns:
        SyntheticDataset whose planned labels agree with the overlap labels
    """
    plan = plan or BenchmarkPlan()
    needed = 2 * (plan.matching_pairs + plan.disjoint_pairs)
    if n_submaps is not None and n_submaps < needed:
        raise GenerationError(f"plan needs {needed} submaps, only {n_submaps} allowed")
    world = generate_world(spec)
    builder = _BenchmarkBuilder(world, plan, np.random.default_rng([spec.seed, 1]))

    def overlap_of(a, b):
        return overlap_ratio(a, b, ground_truth(a, b))

    pairs = []
    for _ in range(plan.matching_pairs):
        a, b = builder.matching_pair(overlap_of)
        pairs.append((a.id, b.id, "match"))
    for _ in range(plan.disjoint_pairs):
        a, b = builder.disjoint_pair()
        pairs.append((a.id, b.id, "non-match"))
    for _ in range((n_submaps or needed) - needed):
        builder.single()

    logger.info("benchmark: %d submaps, %d pairs", len(builder.submaps), len(pairs))
    return SyntheticDataset(world, builder.submaps, pairs, builder.viewpoints, spec, plan)


def world_to_gray(world):
    """Occupied 255, free 0, first row = largest y."""
    gray = np.where(world.occupied, 255, 0).astype(np.uint8)
    return np.ascontiguousarray(np.flipud(gray))


def save_benchmark(dataset, directory):
    directory = Path(directory)
    save_dataset(dataset.submaps, directory, dataset.pairs)
    Image.fromarray(world_to_gray(dataset.world)).save(directory / "world.pgm", format="PPM")
    logger.info("wrote %d submaps to %s", len(dataset.submaps), directory)


# spec files reuse the key = value config format
def _parse_range(text, convert):
    parts = text.replace(",", " ").split()
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ValueError(f"expected 'low high', got {text!r}")
    return (convert(parts[0]), convert(parts[1]))


_WORLD_KEYS = {
    "seed": int,
    "extent": lambda t: _parse_range(t, float),
    "room_count": lambda t: _parse_range(t, int),
    "room_size": lambda t: _parse_range(t, float),
    "corridor_width": lambda t: _parse_range(t, float),
    "clutter_density": float,
    "resolution": float,
}
_PLAN_KEYS = {
    "matching_pairs": int,
    "disjoint_pairs": int,
    "window": lambda t: _parse_range(t, float),
    "sensor_range": float,
    "max_offset": float,
    "viewpoints": int,
    "overlap_threshold": float,
}


def parse_synth_spec(text, source="<spec>"):
    """
    Parse world.* / plan.* / n_submaps keys.

    Returns:
        (WorldSpec, BenchmarkPlan, n_submaps or None)
    """
    world_values, plan_values, n_submaps = {}, {}, None
    for key, raw in parse_key_values(text, source).items():
        section, _, name = key.partition(".")
        try:
            if key == "n_submaps":
                n_submaps = int(raw)
            elif section == "world" and name in _WORLD_KEYS:
                world_values[name] = _WORLD_KEYS[name](raw)
            elif section == "plan" and name in _PLAN_KEYS:
                plan_values[name] = _PLAN_KEYS[name](raw)
            else:
                raise ConfigError(f"{source}: unknown synth key: {key}")
        except ValueError as e:
            raise ConfigError(f"{source}: bad value for {key}: {raw!r} ({e})") from e
    try:
        return WorldSpec(**world_values), BenchmarkPlan(**plan_values), n_submaps
    except ValueError as e:
        raise ConfigError(f"{source}: {e}") from e


def load_synth_spec(path=None):
    if path is None:
        return WorldSpec(), BenchmarkPlan(), None
    with open(path, encoding="utf-8") as f:
        return parse_synth_spec(f.read(), str(path))


def dump_synth_spec(spec, plan, n_submaps=None):
    def fmt(value):
        if isinstance(value, tuple):
            return " ".join(str(v) for v in value)
        return str(value)

    lines = [f"world.{f.name} = {fmt(getattr(spec, f.name))}" for f in fields(spec)]
    lines += [f"plan.{f.name} = {fmt(getattr(plan, f.name))}" for f in fields(plan)]
    if n_submaps is not None:
        lines.append(f"n_submaps = {n_submaps}")
    return "\n".join(lines) + "\n"
