"""
Submap data model: SE(2) poses, occupancy / ternary grids, the grid container
format and the dataset directory layout.

Grid conventions: cells are stored row-major as array[row, col]; col runs
along +x and row along +y of the grid frame, and the grid origin is the pose
of the centre of cell (0, 0) in the submap frame.
"""

import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
from PIL import Image

from config import GRID_MAGIC, P_OCC, PGM_UNKNOWN_BYTE, UNKNOWN
from errors import EmptyDatasetError, GridParseError

logger = logging.getLogger(__name__)

POSES_MANIFEST = "poses.txt"
PAIRS_MANIFEST = "pairs.txt"
GRID_SUFFIX = ".grid"


def normalize_angle(theta):
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(float(theta), 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped = math.pi
    return wrapped


@dataclass(frozen=True)
class Pose2:
    """Rigid transform in SE(2); theta is kept in (-pi, pi]."""
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @classmethod
    def identity(cls):
        return cls(0.0, 0.0, 0.0)

    def compose(self, other):
        """self * other, i.e. apply other first."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    def __matmul__(self, other):
        return self.compose(other)

    def inverse(self):
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-(c * self.x + s * self.y), -(-s * self.x + c * self.y), -self.theta)

    def rotation(self):
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def apply(self, points):
        """Transform an (N, 2) array (or a single point) of xy coordinates."""
        pts = np.asarray(points, dtype=float)
        out = pts @ self.rotation().T + np.array([self.x, self.y])
        return out

    def as_tuple(self):
        return (self.x, self.y, self.theta)


@dataclass(frozen=True)
class GridGeometry:
    width: int
    height: int
    resolution: float
    origin: Pose2 = Pose2()

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ValueError("grid width/height must be integers")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid must have at least one cell, got {self.width}x{self.height}")
        if not (math.isfinite(self.resolution) and self.resolution > 0):
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def shape(self):
        return (self.height, self.width)

    def cell_to_metric(self, cols, rows):
        """Cell coordinates (may be fractional) -> (N, 2) points in the submap frame."""
        cols = np.asarray(cols, dtype=float).ravel()
        rows = np.asarray(rows, dtype=float).ravel()
        local = np.column_stack([cols * self.resolution, rows * self.resolution])
        return self.origin.apply(local)

    def metric_to_cell(self, points):
        """(N, 2) submap-frame points -> (cols, rows) fractional cell coordinates."""
        local = self.origin.inverse().apply(np.atleast_2d(points)) / self.resolution
        return local[:, 0], local[:, 1]

    def cell_centers(self, mask=None):
        """Metric centres of the cells selected by mask (all cells if None), row-major."""
        if mask is None:
            mask = np.ones(self.shape, dtype=bool)
        rows, cols = np.nonzero(mask)
        return self.cell_to_metric(cols, rows)


def _frozen_array(values, dtype):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Per-cell occupancy probability in [0, 1] or the UNKNOWN sentinel."""
    geometry: GridGeometry
    cells: np.ndarray

    def __post_init__(self):
        cells = _frozen_array(self.cells, np.float32)
        if cells.shape != self.geometry.shape:
            raise ValueError(f"cells shape {cells.shape} does not match geometry {self.geometry.shape}")
        ok = (cells == UNKNOWN) | ((cells >= 0.0) & (cells <= 1.0))
        if not ok.all():
            raise ValueError("occupancy values must lie in [0, 1] or equal the UNKNOWN sentinel")
        object.__setattr__(self, "cells", cells)

    width = property(lambda self: self.geometry.width)
    height = property(lambda self: self.geometry.height)
    resolution = property(lambda self: self.geometry.resolution)
    origin = property(lambda self: self.geometry.origin)

    @property
    def unknown(self):
        return self.cells == UNKNOWN

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(
            self.cells.view(np.uint32), other.cells.view(np.uint32)
        )

    __hash__ = None


class CellState(IntEnum):
    UNKNOWN = -1
    FREE = 0
    OCCUPIED = 1


@dataclass(frozen=True, eq=False)
class TernaryGrid:
    geometry: GridGeometry
    cells: np.ndarray

    def __post_init__(self):
        cells = _frozen_array(self.cells, np.int8)
        if cells.shape != self.geometry.shape:
            raise ValueError(f"cells shape {cells.shape} does not match geometry {self.geometry.shape}")
        if not np.isin(cells, (CellState.UNKNOWN, CellState.FREE, CellState.OCCUPIED)).all():
            raise ValueError("ternary cells must be UNKNOWN, FREE or OCCUPIED")
        object.__setattr__(self, "cells", cells)

    width = property(lambda self: self.geometry.width)
    height = property(lambda self: self.geometry.height)
    resolution = property(lambda self: self.geometry.resolution)
    origin = property(lambda self: self.geometry.origin)

    @property
    def occupied(self):
        return self.cells == CellState.OCCUPIED

    @property
    def free(self):
        return self.cells == CellState.FREE

    @property
    def observed(self):
        return self.cells != CellState.UNKNOWN

    def __eq__(self, other):
        if not isinstance(other, TernaryGrid):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.cells, other.cells)

    __hash__ = None


def valid_submap_id(submap_id):
    return isinstance(submap_id, str) and bool(submap_id) and not any(ch.isspace() for ch in submap_id)


@dataclass(frozen=True, eq=False)
class Submap:
    id: str
    pose: Pose2
    grid: OccupancyGrid

    def __post_init__(self):
        # ids are written unquoted into headers and space-separated manifests
        if not valid_submap_id(self.id):
            raise ValueError(f"submap id must be non-empty without whitespace, got {self.id!r}")

    def __eq__(self, other):
        if not isinstance(other, Submap):
            return NotImplemented
        return self.id == other.id and self.pose == other.pose and self.grid == other.grid

    __hash__ = None


def binarize(grid, p_occ=P_OCC):
    """
    Threshold occupancy probabilities into OCCUPIED / FREE, keeping UNKNOWN.

    Parameters:
        grid: OccupancyGrid
        p_occ: threshold in (0, 1); p == p_occ counts as OCCUPIED

    Returns:
        TernaryGrid with the same geometry
    """
    if not 0.0 < p_occ < 1.0:
        raise ValueError(f"p_occ must lie in (0, 1), got {p_occ}")
    cells = np.where(grid.cells >= p_occ, CellState.OCCUPIED, CellState.FREE).astype(np.int8)
    cells[grid.unknown] = CellState.UNKNOWN
    return TernaryGrid(grid.geometry, cells)


# container format
def _format_float(value):
    return repr(float(value))


def write_container(path, geometry, encoding, payload, extra=None):
    """Write the text header (blank-line terminated) followed by the binary payload."""
    lines = [
        GRID_MAGIC,
        f"width {geometry.width}",
        f"height {geometry.height}",
        f"resolution {_format_float(geometry.resolution)}",
        "origin " + " ".join(_format_float(v) for v in geometry.origin.as_tuple()),
        f"encoding {encoding}",
    ]
    for key, value in (extra or {}).items():
        if "\n" in value:
            raise ValueError(f"header value for {key} must be a single line")
        lines.append(f"{key} {value}")
    header = ("\n".join(lines) + "\n\n").encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def _parse_header(block, require_magic=True):
    """Parse header lines into {key: (value, byte offset)}."""
    entries = {}
    offset = 0
    for index, raw in enumerate(block.split(b"\n")):
        line_offset = offset
        offset += len(raw) + 1
        try:
            line = raw.decode("ascii").rstrip("\r")
        except UnicodeDecodeError:
            raise GridParseError("malformed header: non-ascii bytes", line_offset)
        if index == 0 and require_magic:
            if line.strip() != GRID_MAGIC:
                raise GridParseError(f"malformed header: expected '{GRID_MAGIC}'", line_offset)
            continue
        if not line.strip():
            continue
        key, _, value = line.partition(" ")
        entries[key] = (value.strip(), line_offset)
    return entries


def _header_geometry(entries, end_offset):
    def parsed(key, convert, check):
        if key not in entries:
            raise GridParseError(f"malformed header: missing '{key}'", end_offset)
        value, off = entries[key]
        try:
            result = convert(value)
        except ValueError:
            raise GridParseError(f"malformed header: bad {key} '{value}'", off)
        if not check(result):
            raise GridParseError(f"malformed header: bad {key} '{value}'", off)
        return result

    width = parsed("width", int, lambda v: v >= 1)
    height = parsed("height", int, lambda v: v >= 1)
    resolution = parsed("resolution", float, lambda v: math.isfinite(v) and v > 0)
    origin = parsed("origin", _parse_pose,
                    lambda p: all(math.isfinite(v) for v in p.as_tuple()))
    return GridGeometry(width, height, resolution, origin)


def _parse_pose(text):
    parts = text.split()
    if len(parts) != 3:
        raise ValueError(f"expected 3 numbers, got {len(parts)}")
    return Pose2(*(float(p) for p in parts))


def _header_pose(entries):
    if "pose" not in entries:
        return Pose2.identity()
    value, off = entries["pose"]
    try:
        return _parse_pose(value)
    except ValueError:
        raise GridParseError(f"malformed header: bad pose '{value}'", off)


def read_container(path, expected_encoding):
    """
    Read a container file.

    Returns:
        (entries, geometry, payload bytes, payload byte offset)
    """
    data = Path(path).read_bytes()
    end = data.find(b"\n\n")
    if end < 0:
        raise GridParseError("malformed header: no blank line terminator", len(data))
    entries = _parse_header(data[:end])
    geometry = _header_geometry(entries, end)
    encoding, off = entries.get("encoding", (None, end))
    if encoding != expected_encoding:
        raise GridParseError(f"malformed header: expected encoding {expected_encoding}, got {encoding}", off)
    payload_offset = end + 2
    return entries, geometry, data[payload_offset:], payload_offset


def _header_id(entries, path):
    """The header id, or the file stem when there is none."""
    if "id" not in entries:
        submap_id, offset = Path(path).stem, 0
    else:
        submap_id, offset = entries["id"]
    if not valid_submap_id(submap_id):
        raise GridParseError(f"malformed header: submap id {submap_id!r} is empty or contains whitespace", offset)
    return submap_id


def _submap_extras(submap):
    return {
        "id": submap.id,
        "pose": " ".join(_format_float(v) for v in submap.pose.as_tuple()),
    }


def load_grid(path):
    """
    Load a Submap from the grid container format.

    Raises:
        GridParseError naming the byte offset of the malformed header line,
        the first out-of-range value, or the end of a truncated payload.
    """
    entries, geometry, payload, offset = read_container(path, "float32")
    n_bytes = 4 * geometry.width * geometry.height
    if len(payload) < n_bytes:
        raise GridParseError(f"truncated payload: expected {n_bytes} bytes, found {len(payload)}",
                             offset + len(payload))
    if len(payload) > n_bytes:
        raise GridParseError("malformed payload: trailing bytes", offset + n_bytes)
    values = np.frombuffer(payload, dtype="<f4").reshape(geometry.shape)
    ok = (values == UNKNOWN) | ((values >= 0.0) & (values <= 1.0))
    if not ok.all():
        index = int(np.flatnonzero(~ok.ravel())[0])
        raise GridParseError(f"value out of range: {values.ravel()[index]!r}", offset + 4 * index)
    submap_id = _header_id(entries, path)
    return Submap(submap_id, _header_pose(entries), OccupancyGrid(geometry, values))


def save_grid(submap, path):
    payload = submap.grid.cells.astype("<f4").tobytes()
    write_container(path, submap.grid.geometry, "float32", payload, _submap_extras(submap))
    logger.debug("saved grid %s to %s", submap.id, path)


def load_pgm(pgm_path, header_path, unknown_byte=PGM_UNKNOWN_BYTE):
    """
    Import an 8-bit PGM map plus a sidecar header with the container keys.

    Byte v maps to occupancy v / 255 (255 -> 1.0, 0 -> 0.0); unknown_byte maps
    to UNKNOWN. The PGM's first row is the top of the map (largest y).
    """
    block = Path(header_path).read_bytes()
    end = block.find(b"\n\n")
    block = block if end < 0 else block[:end]
    entries = _parse_header(block.rstrip(b"\n"))
    geometry = _header_geometry(entries, len(block))
    with Image.open(pgm_path) as img:
        if img.mode != "L":
            raise GridParseError(f"expected an 8-bit grayscale PGM, got mode {img.mode}", 0)
        pixels = np.asarray(img, dtype=np.uint8)
    if pixels.shape != geometry.shape:
        raise GridParseError(f"PGM is {pixels.shape[1]}x{pixels.shape[0]} but header says "
                             f"{geometry.width}x{geometry.height}", 0)
    pixels = np.flipud(pixels)
    cells = (pixels.astype(np.float32) / np.float32(255.0))
    cells[pixels == unknown_byte] = UNKNOWN
    submap_id = _header_id(entries, pgm_path)
    return Submap(submap_id, _header_pose(entries), OccupancyGrid(geometry, cells))


def rotate_submap(submap, angle):
    """
    Rotate a submap's cells by angle (radians, counter-clockwise) about the grid
    centre using nearest-neighbour resampling.

    The returned submap has an identity grid origin and a pose chosen so that
    every cell keeps its true global position, so ground-truth transforms stay
    exact. Cells that fall outside the source grid become UNKNOWN.
    """
    g = submap.grid.geometry
    c, s = math.cos(angle), math.sin(angle)
    width = max(1, math.ceil(abs(g.width * c) + abs(g.height * s) - 1e-9))
    height = max(1, math.ceil(abs(g.width * s) + abs(g.height * c) - 1e-9))
    src_cx, src_cy = (g.width - 1) / 2.0, (g.height - 1) / 2.0
    dst_cx, dst_cy = (width - 1) / 2.0, (height - 1) / 2.0

    rows, cols = np.mgrid[0:height, 0:width]
    dx = cols - dst_cx
    dy = rows - dst_cy
    # inverse rotation pulls each destination cell back into the source grid
    src_cols = np.floor(src_cx + c * dx + s * dy + 0.5).astype(int)
    src_rows = np.floor(src_cy - s * dx + c * dy + 0.5).astype(int)
    inside = (src_cols >= 0) & (src_cols < g.width) & (src_rows >= 0) & (src_rows < g.height)

    cells = np.full((height, width), UNKNOWN, dtype=np.float32)
    cells[inside] = submap.grid.cells[src_rows[inside], src_cols[inside]]

    res = g.resolution
    src_from_dst = (g.origin
                    @ Pose2(src_cx * res, src_cy * res, 0.0)
                    @ Pose2(0.0, 0.0, -angle)
                    @ Pose2(-dst_cx * res, -dst_cy * res, 0.0))
    geometry = GridGeometry(width, height, res, Pose2.identity())
    return Submap(submap.id, submap.pose @ src_from_dst, OccupancyGrid(geometry, cells))


# dataset directories
def save_dataset(submaps, directory, pairs=None):
    """
    Write <id>.grid files plus a poses manifest ("id tx ty theta" per line).

    pairs, if given, is a list of (id_a, id_b, label) written to pairs.txt.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for submap in submaps:
        save_grid(submap, directory / f"{submap.id}{GRID_SUFFIX}")
        x, y, theta = submap.pose.as_tuple()
        lines.append(f"{submap.id} {_format_float(x)} {_format_float(y)} {_format_float(theta)}")
    (directory / POSES_MANIFEST).write_text("\n".join(lines) + "\n", encoding="ascii")
    if pairs is not None:
        pair_lines = [f"{a} {b} {label}" for a, b, label in pairs]
        (directory / PAIRS_MANIFEST).write_text("\n".join(pair_lines) + "\n", encoding="ascii")


def load_dataset(directory):
    """
    Load every submap listed in the poses manifest, in manifest order.

    The manifest pose overrides the pose stored in the grid header.
    """
    directory = Path(directory)
    manifest = directory / POSES_MANIFEST
    if not manifest.exists():
        raise EmptyDatasetError(f"no {POSES_MANIFEST} in {directory}")
    submaps = []
    for line_no, line in enumerate(manifest.read_text(encoding="ascii").splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 4:
            raise GridParseError(f"{manifest}:{line_no}: expected 'id tx ty theta'", 0)
        submap_id = parts[0]
        pose = Pose2(*(float(v) for v in parts[1:]))
        loaded = load_grid(directory / f"{submap_id}{GRID_SUFFIX}")
        submaps.append(Submap(submap_id, pose, loaded.grid))
    logger.info("loaded %d submaps from %s", len(submaps), directory)
    return submaps


def load_pairs_manifest(directory):
    """Planned pairs as a list of (id_a, id_b, label); empty if there is no manifest."""
    path = Path(directory) / PAIRS_MANIFEST
    if not path.exists():
        return []
    pairs = []
    for line in path.read_text(encoding="ascii").splitlines():
        parts = line.split()
        if len(parts) == 3:
            pairs.append((parts[0], parts[1], parts[2]))
    return pairs
