"""
Signed Euclidean distance fields over ternary submaps.

FREE cells hold +distance to the nearest OCCUPIED cell centre, OCCUPIED cells
hold -distance to the nearest FREE cell centre, both in meters. UNKNOWN cells
are transparent: they never act as surface and are flagged invalid.
"""

import logging
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage
from scipy.spatial.distance import cdist

from errors import DegenerateFieldError, EmptyFieldError, GridParseError
from grid import GridGeometry, binarize, read_container, write_container

logger = logging.getLogger(__name__)

SDF_ENCODING = "float32-sdf"
UNKNOWN_GRAY = 128


@dataclass(frozen=True, eq=False)
class SdfGrid:
    geometry: GridGeometry
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        valid = np.array(self.valid, dtype=bool, copy=True)
        if values.shape != self.geometry.shape or valid.shape != self.geometry.shape:
            raise ValueError("values/valid shape does not match geometry")
        values.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    width = property(lambda self: self.geometry.width)
    height = property(lambda self: self.geometry.height)
    resolution = property(lambda self: self.geometry.resolution)
    origin = property(lambda self: self.geometry.origin)

    def with_values(self, values, valid):
        return SdfGrid(self.geometry, values, valid)


def _check_surface(t):
    if not t.observed.any():
        raise EmptyFieldError("every cell is unknown")
    if not t.occupied.any() or not t.free.any():
        raise DegenerateFieldError("observed space holds a single occupancy class, no surface exists")


def compute_sdf(t):
    """
    Exact signed distance transform of a TernaryGrid.

    Uses scipy's exact Euclidean distance transform once per side: FREE cells
    measure to the nearest OCCUPIED centre, OCCUPIED cells to the nearest FREE
    centre. Unknown cells are treated as neither.

    Returns:
        SdfGrid with values in meters and valid == observed
    """
    _check_surface(t)
    occupied, free = t.occupied, t.free
    to_occupied = ndimage.distance_transform_edt(~occupied)
    to_free = ndimage.distance_transform_edt(~free)
    values = np.zeros(t.geometry.shape)
    values[free] = to_occupied[free]
    values[occupied] = -to_free[occupied]
    values *= t.resolution
    return SdfGrid(t.geometry, values, t.observed)


def brute_force_sdf(t, chunk=4096):
    """Exhaustive O(N^2) reference for compute_sdf."""
    _check_surface(t)
    occupied, free = t.occupied, t.free
    occ_idx = np.argwhere(occupied).astype(float)
    free_idx = np.argwhere(free).astype(float)
    values = np.zeros(t.geometry.shape)

    def nearest(queries, targets):
        out = np.empty(len(queries))
        for start in range(0, len(queries), chunk):
            out[start:start + chunk] = cdist(queries[start:start + chunk], targets).min(axis=1)
        return out

    values[free] = nearest(free_idx, occ_idx)
    values[occupied] = -nearest(occ_idx, free_idx)
    values *= t.resolution
    return SdfGrid(t.geometry, values, t.observed)


def save_sdf(sdf, path, submap_id="sdf", pose=None):
    """
    Write an SdfGrid: float32 values row-major, then the validity mask packed
    eight cells per byte (numpy packbits order).
    """
    extra = {"id": submap_id}
    if pose is not None:
        extra["pose"] = " ".join(repr(float(v)) for v in pose.as_tuple())
    payload = sdf.values.astype("<f4").tobytes() + np.packbits(sdf.valid.ravel()).tobytes()
    write_container(path, sdf.geometry, SDF_ENCODING, payload, extra)


def load_sdf(path):
    _, geometry, payload, offset = read_container(path, SDF_ENCODING)
    n = geometry.width * geometry.height
    n_values = 4 * n
    n_mask = (n + 7) // 8
    if len(payload) < n_values + n_mask:
        raise GridParseError(f"truncated payload: expected {n_values + n_mask} bytes, found {len(payload)}",
                             offset + len(payload))
    values = np.frombuffer(payload[:n_values], dtype="<f4").astype(float).reshape(geometry.shape)
    bits = np.frombuffer(payload[n_values:n_values + n_mask], dtype=np.uint8)
    valid = np.unpackbits(bits)[:n].astype(bool).reshape(geometry.shape)
    if not np.isfinite(values[valid]).all():
        index = int(np.flatnonzero(valid.ravel() & ~np.isfinite(values.ravel()))[0])
        raise GridParseError("value out of range: non-finite distance", offset + 4 * index)
    return SdfGrid(geometry, values, valid)


def sdf_to_gray(sdf):
    """Normalize valid distances to 0..255 (top row = largest y); unknown is mid-gray."""
    gray = np.full(sdf.geometry.shape, UNKNOWN_GRAY, dtype=np.uint8)
    if sdf.valid.any():
        vals = sdf.values[sdf.valid]
        lo, hi = vals.min(), vals.max()
        span = hi - lo if hi > lo else 1.0
        gray[sdf.valid] = np.round((vals - lo) / span * 255.0).astype(np.uint8)
    return np.ascontiguousarray(np.flipud(gray))


def export_pgm(sdf, path):
    Image.fromarray(sdf_to_gray(sdf)).save(path, format="PPM")
    logger.debug("wrote SDF debug image %s", path)


def submap_to_sdf(submap, p_occ):
    return compute_sdf(binarize(submap.grid, p_occ))
