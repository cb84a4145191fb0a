"""
Rotation-invariant keypoint descriptors built from SDF gradient orientations.

Each descriptor is an orientation histogram expressed relative to the
window's dominant gradient direction, plus a scaled mean SDF value and the
keypoint class. Descriptors of different classes are never compared.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import ndimage

from config import DescriptorParams
from detect import KeypointClass
from errors import ZeroGradientError
from grid import GridGeometry, normalize_angle

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
# circular [1 4 6 4 1] smoothing of the orientation histogram before peak picking
PEAK_SMOOTHING = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
MIN_GRADIENT_ENERGY = 1e-15
WRAP_EPS = 1e-9  # radians

# returned by descriptor_distance for descriptors of different classes
INCOMPATIBLE = None


@dataclass(frozen=True, eq=False)
class GradientField:
    """Central-difference gradient of a (smoothed) SDF, meters per cell."""
    geometry: GridGeometry
    values: np.ndarray
    magnitude: np.ndarray
    orientation: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True, eq=False)
class Descriptor:
    histogram: np.ndarray
    distance_term: float
    kind: KeypointClass
    dominant_orientation: float
    keypoint_index: int = -1

    def vector(self):
        return np.append(self.histogram, self.distance_term)


def gradient_field(sdf):
    f = sdf.values
    v = sdf.valid
    gx = np.zeros_like(f)
    gy = np.zeros_like(f)
    gx[:, 1:-1] = 0.5 * (f[:, 2:] - f[:, :-2])
    gy[1:-1, :] = 0.5 * (f[2:, :] - f[:-2, :])

    valid = np.zeros_like(v)
    valid[1:-1, 1:-1] = (v[1:-1, 1:-1] & v[1:-1, 2:] & v[1:-1, :-2] & v[2:, 1:-1] & v[:-2, 1:-1])

    magnitude = np.where(valid, np.hypot(gx, gy), 0.0)
    orientation = np.arctan2(gy, gx)
    orientation[orientation <= -math.pi] = math.pi
    orientation[~valid] = 0.0
    return GradientField(sdf.geometry, np.asarray(f), magnitude, orientation, valid)


def _as_gradient(field):
    return field if isinstance(field, GradientField) else gradient_field(field)


def _window(grad, keypoint, params):
    """Valid cells of the disc around a keypoint and their Gaussian spatial weights."""
    g = grad.geometry
    cols, rows = g.metric_to_cell(np.array([keypoint.position]))
    kc, kr = float(cols[0]), float(rows[0])
    radius = params.radius / g.resolution
    c0, c1 = max(int(math.floor(kc - radius)), 0), min(int(math.ceil(kc + radius)), g.width - 1)
    r0, r1 = max(int(math.floor(kr - radius)), 0), min(int(math.ceil(kr + radius)), g.height - 1)
    if c0 > c1 or r0 > r1:
        return np.empty(0, dtype=int), np.empty(0, dtype=int), np.empty(0)

    rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    d2 = (cc - kc) ** 2 + (rr - kr) ** 2
    keep = (d2 <= radius * radius) & grad.valid[rr, cc]
    sigma = params.spatial_sigma * radius
    weights = np.exp(-d2[keep] / (2.0 * sigma * sigma))
    return rr[keep], cc[keep], weights


def orientation_votes(theta, weights, n_bins):
    """
    Linear two-bin voting of angles into n_bins circular bins centred on
    multiples of 2 pi / n_bins.
    """
    u = np.mod(theta, TWO_PI) / (TWO_PI / n_bins)
    lower = np.floor(u)
    frac = u - lower
    lower = lower.astype(int) % n_bins
    upper = (lower + 1) % n_bins
    return (np.bincount(lower, weights * (1.0 - frac), minlength=n_bins)
            + np.bincount(upper, weights * frac, minlength=n_bins))


def dominant_orientation(field, keypoint, params=None):
    """
    Dominant gradient direction in a keypoint's window.

    Parameters:
        field: GradientField, or an SdfGrid to differentiate
        keypoint: Keypoint
        params: DescriptorParams

    Returns:
        angle in (-pi, pi], parabolic-interpolated around the highest bin

    Raises:
        ZeroGradientError if the window carries no gradient energy
    """
    params = params or DescriptorParams()
    grad = _as_gradient(field)
    rows, cols, spatial = _window(grad, keypoint, params)
    return _dominant(grad, rows, cols, spatial, params)


def _dominant(grad, rows, cols, spatial, params):
    weights = grad.magnitude[rows, cols] * spatial
    if weights.sum() <= MIN_GRADIENT_ENERGY:
        raise ZeroGradientError(f"no gradient energy around keypoint ({len(weights)} window cells)")
    n = params.n_orient_bins
    hist = orientation_votes(grad.orientation[rows, cols], weights, n)
    hist = ndimage.convolve1d(hist, PEAK_SMOOTHING, mode="wrap")

    k = int(np.argmax(hist))
    left, centre, right = hist[(k - 1) % n], hist[k], hist[(k + 1) % n]
    denom = left - 2.0 * centre + right
    offset = 0.5 * (left - right) / denom if denom < 0 else 0.0
    return normalize_angle((k + offset) * TWO_PI / n)


def describe_keypoint(field, keypoint, params=None, keypoint_index=-1):
    """
    Build the descriptor of one keypoint.

    The histogram bins (orientation - dominant) mod 2 pi into n_bins equal
    bins starting at relative angle 0, weighted by gradient magnitude times
    the spatial Gaussian, and is L1-normalized. distance_term is
    distance_weight times the window's mean SDF value.
    """
    params = params or DescriptorParams()
    grad = _as_gradient(field)
    rows, cols, spatial = _window(grad, keypoint, params)
    dominant = _dominant(grad, rows, cols, spatial, params)

    weights = grad.magnitude[rows, cols] * spatial
    relative = np.mod(grad.orientation[rows, cols] - dominant, TWO_PI)
    # rounding can leave an aligned gradient a few ulp short of a full turn
    relative[relative > TWO_PI - WRAP_EPS] = 0.0
    bins = np.floor(relative / (TWO_PI / params.n_bins)).astype(int) % params.n_bins
    hist = np.bincount(bins, weights, minlength=params.n_bins)
    hist = hist / hist.sum()
    hist.setflags(write=False)

    values = grad.values[rows, cols]
    if params.weighted_mean:
        mean = float(np.sum(values * spatial) / np.sum(spatial))
    else:
        mean = float(np.mean(values))
    return Descriptor(hist, params.distance_weight * mean, keypoint.kind, dominant, keypoint_index)


def describe_keypoints(field, keypoints, params=None):
    """Describe every keypoint, skipping zero-gradient windows; output keeps keypoint order."""
    params = params or DescriptorParams()
    grad = _as_gradient(field)
    descriptors = []
    for index, keypoint in enumerate(keypoints):
        try:
            descriptors.append(describe_keypoint(grad, keypoint, params, keypoint_index=index))
        except ZeroGradientError as e:
            logger.debug("skipping keypoint %d: %s", index, e)
    return descriptors


def descriptor_distance(a, b):
    """Euclidean distance over (histogram, distance_term); INCOMPATIBLE across classes."""
    if a.kind != b.kind:
        return INCOMPATIBLE
    return float(np.linalg.norm(a.vector() - b.vector()))


# csv artifacts
def _bin_columns(n_bins):
    return [f"bin_{i:02d}" for i in range(n_bins)]


def descriptors_to_frame(descriptors):
    n_bins = len(descriptors[0].histogram) if descriptors else DescriptorParams().n_bins
    columns = ["keypoint_index", "class", "dominant_orientation"] + _bin_columns(n_bins) + ["distance_term"]
    rows = []
    for d in descriptors:
        row = [d.keypoint_index, d.kind.value, d.dominant_orientation]
        row.extend(float(v) for v in d.histogram)
        row.append(d.distance_term)
        rows.append(row)
    return pd.DataFrame(rows, columns=columns)


def save_descriptors(descriptors, path):
    descriptors_to_frame(descriptors).to_csv(path, index=False, float_format="%.17g")


def load_descriptors(path):
    df = pd.read_csv(path)
    bin_cols = [c for c in df.columns if c.startswith("bin_")]
    if not bin_cols or "distance_term" not in df.columns:
        raise ValueError(f"descriptor CSV {path} has no histogram columns")
    descriptors = []
    for record in df.to_dict("records"):
        hist = np.array([record[c] for c in bin_cols], dtype=float)
        hist.setflags(write=False)
        descriptors.append(Descriptor(hist, float(record["distance_term"]), KeypointClass(record["class"]),
                                      float(record["dominant_orientation"]), int(record["keypoint_index"])))
    return descriptors
