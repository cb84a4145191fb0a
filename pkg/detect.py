"""
Keypoint detection on signed distance fields: Gaussian smoothing, Sobel
Hessian, determinant-of-Hessian response, non-maximum suppression and
eigenvalue classification.

Derivatives are taken per cell on a field in meters, so det(H) is in
m^2/cell^4. See DESIGN.md for how the default threshold relates to grid pitch.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import pandas as pd
from scipy import ndimage

from config import RADIUS, DetectorParams
from grid import GridGeometry

logger = logging.getLogger(__name__)

# central difference scaled so a unit ramp has derivative 1, and the
# matching [1 2 1] cross smoothing of the Sobel operator
DERIVATIVE_KERNEL = np.array([-0.5, 0.0, 0.5])
SOBEL_SMOOTHING = np.array([0.25, 0.5, 0.25])


class KeypointClass(Enum):
    MAXIMUM = "maximum"
    MINIMUM = "minimum"
    SADDLE = "saddle"


@dataclass(frozen=True)
class Keypoint:
    position: tuple  # (x, y) meters in the submap frame
    kind: KeypointClass
    response: float  # signed det(H) at the detection cell
    sdf_value: float  # meters, interpolated at position


@dataclass(frozen=True, eq=False)
class HessianField:
    geometry: GridGeometry
    hxx: np.ndarray
    hxy: np.ndarray
    hyy: np.ndarray
    valid: np.ndarray


def gaussian_kernel(sigma):
    """Normalized 1-D Gaussian truncated at +-ceil(3 sigma) cells."""
    radius = int(math.ceil(3.0 * sigma))
    k = np.arange(-radius, radius + 1, dtype=float)
    weights = np.exp(-(k * k) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def shrink_valid(valid, radius):
    """Cells whose (2r+1)^2 neighbourhood is entirely valid and inside the grid."""
    if radius <= 0:
        return valid.copy()
    size = 2 * radius + 1
    return ndimage.minimum_filter(valid.astype(np.uint8), size=size, mode="constant", cval=0).astype(bool)


def smooth(sdf, sigma):
    """
    Separable Gaussian convolution of an SdfGrid.

    Parameters:
        sdf: SdfGrid
        sigma: standard deviation in cells (> 0)

    Returns:
        SdfGrid; cells whose kernel support touches an invalid cell or the
        grid edge are invalid
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    kernel = gaussian_kernel(sigma)
    radius = len(kernel) // 2
    values = np.where(sdf.valid, sdf.values, 0.0)
    out = ndimage.correlate1d(values, kernel, axis=1, mode="constant", cval=0.0)
    out = ndimage.correlate1d(out, kernel, axis=0, mode="constant", cval=0.0)
    valid = shrink_valid(sdf.valid, radius)
    out[~valid] = 0.0
    return sdf.with_values(out, valid)


def _sobel(values, axis):
    # axis 1 is x (columns), axis 0 is y (rows)
    out = ndimage.correlate1d(values, DERIVATIVE_KERNEL, axis=axis, mode="nearest")
    return ndimage.correlate1d(out, SOBEL_SMOOTHING, axis=1 - axis, mode="nearest")


def hessian(smoothed):
    """Second derivatives by composing the Sobel operator; validity shrinks by two cells."""
    dx = _sobel(smoothed.values, axis=1)
    dy = _sobel(smoothed.values, axis=0)
    valid = shrink_valid(smoothed.valid, 2)
    hxx = np.where(valid, _sobel(dx, axis=1), 0.0)
    hyy = np.where(valid, _sobel(dy, axis=0), 0.0)
    hxy = np.where(valid, _sobel(dy, axis=1), 0.0)
    return HessianField(smoothed.geometry, hxx, hxy, hyy, valid)


def doh(h):
    """det(H) = Hxx Hyy - Hxy^2 per cell; NaN where the Hessian is invalid."""
    det = h.hxx * h.hyy - h.hxy * h.hxy
    return np.where(h.valid, det, np.nan)


def eigenvalues(hxx, hxy, hyy):
    """Closed-form eigenvalues (ascending) of [[hxx, hxy], [hxy, hyy]]."""
    mean = 0.5 * (hxx + hyy)
    radius = math.hypot(0.5 * (hxx - hyy), hxy)
    return mean - radius, mean + radius


def classify(hxx, hxy, hyy):
    low, high = eigenvalues(hxx, hxy, hyy)
    if high < 0:
        return KeypointClass.MAXIMUM
    if low > 0:
        return KeypointClass.MINIMUM
    return KeypointClass.SADDLE


def resolve_border_margin(params, resolution, descriptor_radius=RADIUS):
    """
    Margin in cells between a keypoint and any invalid cell or the grid edge.

    The automatic value covers the smoothing support, the gradient stencil and
    the descriptor disc, so every described window is fully valid.
    """
    if params.border_margin is not None:
        return params.border_margin
    return int(math.ceil(3.0 * params.sigma)) + 1 + int(math.ceil(descriptor_radius / resolution - 1e-9))


def distance_to_invalid(valid):
    """Euclidean distance in cells from each cell to the nearest invalid cell or off-grid cell."""
    padded = np.pad(valid, 1, mode="constant", constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1]


def _refine(mag, r, c):
    """Sub-cell offset (dc, dr) of the quadratic through the 3x3 neighbourhood, clamped to +-0.5."""
    height, width = mag.shape
    if not (0 < r < height - 1 and 0 < c < width - 1):
        return 0.0, 0.0
    m = mag[r - 1:r + 2, c - 1:c + 2]
    gx = 0.5 * (m[1, 2] - m[1, 0])
    gy = 0.5 * (m[2, 1] - m[0, 1])
    dxx = m[1, 2] - 2.0 * m[1, 1] + m[1, 0]
    dyy = m[2, 1] - 2.0 * m[1, 1] + m[0, 1]
    dxy = 0.25 * (m[2, 2] - m[2, 0] - m[0, 2] + m[0, 0])
    det = dxx * dyy - dxy * dxy
    if det > 0 and dxx < 0:
        dc = -(dyy * gx - dxy * gy) / det
        dr = -(dxx * gy - dxy * gx) / det
    else:
        dc = -gx / dxx if dxx < 0 else 0.0
        dr = -gy / dyy if dyy < 0 else 0.0
    return float(np.clip(dc, -0.5, 0.5)), float(np.clip(dr, -0.5, 0.5))


def sample_bilinear(values, col, row):
    return float(ndimage.map_coordinates(values, [[row], [col]], order=1, mode="nearest")[0])


def detect_keypoints(sdf, params=None, descriptor_radius=RADIUS, smoothed=None):
    """
    Detect free-space DoH keypoints on an SdfGrid.

    A cell is reported when |det H| exceeds the threshold, is the strict
    maximum of its (2 nms_radius + 1)^2 neighbourhood, lies at least
    border_margin cells from any invalid cell or the grid edge, and the
    refined position has 0 < sdf_value <= d_threshold.

    Parameters:
        sdf: SdfGrid (unsmoothed)
        params: DetectorParams
        descriptor_radius: meters, used only for the automatic border margin
        smoothed: optional precomputed smooth(sdf, params.sigma)

    Returns:
        list of Keypoint ordered by descending |response|
    """
    params = params or DetectorParams()
    if smoothed is None:
        smoothed = smooth(sdf, params.sigma)
    h = hessian(smoothed)
    det = doh(h)
    mag = np.where(h.valid, np.abs(np.nan_to_num(det)), 0.0)

    margin = resolve_border_margin(params, sdf.resolution, descriptor_radius)
    inside = h.valid & (distance_to_invalid(sdf.valid) >= margin)
    eligible = inside & (mag > params.detection_threshold)
    n = params.nms_radius
    local_max = ndimage.maximum_filter(mag, size=2 * n + 1, mode="constant", cval=0.0)
    peaks = inside & (mag == local_max) & (mag > 0)
    if peaks.any() and not eligible.any():
        logger.warning("no |det H| reaches detection_threshold %g: %d local maxima, peak %.3g at %g m cells",
                       params.detection_threshold, int(peaks.sum()), float(mag[peaks].max()), sdf.resolution)

    found = []
    for r, c in np.argwhere(eligible & (mag == local_max)):
        window = mag[max(r - n, 0):r + n + 1, max(c - n, 0):c + n + 1]
        if np.count_nonzero(window >= mag[r, c]) != 1:
            continue
        dc, dr = _refine(mag, r, c)
        col, row = c + dc, r + dr
        value = sample_bilinear(sdf.values, col, row)
        if not value > 0 or value > params.d_threshold:
            continue
        kind = classify(h.hxx[r, c], h.hxy[r, c], h.hyy[r, c])
        x, y = sdf.geometry.cell_to_metric(col, row)[0]
        found.append((-mag[r, c], r, c, Keypoint((float(x), float(y)), kind, float(det[r, c]), value)))

    found.sort(key=lambda item: item[:3])
    keypoints = [item[3] for item in found]
    logger.debug("detected %d keypoints (margin %d cells)", len(keypoints), margin)
    return keypoints


def keypoint_cells(keypoints, geometry):
    """Fractional (cols, rows) of keypoints in the grid."""
    if not keypoints:
        return np.empty(0), np.empty(0)
    return geometry.metric_to_cell(np.array([k.position for k in keypoints]))


# csv artifacts
KEYPOINT_COLUMNS = ["x_m", "y_m", "class", "response", "sdf_value"]


def keypoints_to_frame(keypoints):
    rows = [{
        "x_m": k.position[0],
        "y_m": k.position[1],
        "class": k.kind.value,
        "response": k.response,
        "sdf_value": k.sdf_value,
    } for k in keypoints]
    return pd.DataFrame(rows, columns=KEYPOINT_COLUMNS)


def save_keypoints(keypoints, path):
    keypoints_to_frame(keypoints).to_csv(path, index=False, float_format="%.17g")


def load_keypoints(path):
    df = pd.read_csv(path)
    missing = set(KEYPOINT_COLUMNS) - set(df.columns)
    if missing:
        raise ValueError(f"keypoint CSV {path} lacks columns {sorted(missing)}")
    return [
        Keypoint((float(row["x_m"]), float(row["y_m"])), KeypointClass(row["class"]),
                 float(row["response"]), float(row["sdf_value"]))
        for row in df.to_dict("records")
    ]
