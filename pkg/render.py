"""
Debug images: SDF gray levels with keypoint markers and inlier links (PGM),
and precision-recall figures.
"""

import logging

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from PIL import Image, ImageDraw  # noqa: E402

from detect import KeypointClass, keypoint_cells  # noqa: E402
from sdf import sdf_to_gray  # noqa: E402

logger = logging.getLogger(__name__)

MARKER_GRAY = {
    KeypointClass.MAXIMUM: 255,
    KeypointClass.MINIMUM: 0,
    KeypointClass.SADDLE: 128,
}
LINK_GRAY = 255
MARKER_RADIUS = 3  # pixels after scaling


def _pixel(geometry, cols, rows, scale, x_offset=0):
    # image rows run top-down from the largest y
    px = (np.asarray(cols) + 0.5) * scale + x_offset
    py = (geometry.height - 1 - np.asarray(rows) + 0.5) * scale
    return px, py


def overlay_image(sdf, keypoints, scale=4):
    """SDF rendered to gray with a marker per keypoint, gray level by class."""
    base = Image.fromarray(sdf_to_gray(sdf))
    image = base.resize((sdf.width * scale, sdf.height * scale), Image.Resampling.NEAREST)
    _draw_keypoints(ImageDraw.Draw(image), sdf.geometry, keypoints, scale)
    return image


def _draw_keypoints(draw, geometry, keypoints, scale, x_offset=0):
    cols, rows = keypoint_cells(keypoints, geometry)
    px, py = _pixel(geometry, cols, rows, scale, x_offset)
    r = MARKER_RADIUS
    for kp, x, y in zip(keypoints, px, py):
        gray = MARKER_GRAY[kp.kind]
        draw.ellipse([x - r, y - r, x + r, y + r], outline=gray)
        draw.point((x, y), fill=255 - gray)


def match_image(sdf_a, keypoints_a, sdf_b, keypoints_b, result, scale=4, gap=8):
    """Two SDFs side by side with a line per inlier correspondence."""
    left = overlay_image(sdf_a, keypoints_a, scale)
    right = overlay_image(sdf_b, keypoints_b, scale)
    width = left.width + gap + right.width
    height = max(left.height, right.height)
    canvas = Image.new("L", (width, height), 128)
    canvas.paste(left, (0, 0))
    canvas.paste(right, (left.width + gap, 0))

    draw = ImageDraw.Draw(canvas)
    for c in result.inliers:
        ca, ra = keypoint_cells([keypoints_a[c.index_a]], sdf_a.geometry)
        cb, rb = keypoint_cells([keypoints_b[c.index_b]], sdf_b.geometry)
        xa, ya = _pixel(sdf_a.geometry, ca, ra, scale)
        xb, yb = _pixel(sdf_b.geometry, cb, rb, scale, left.width + gap)
        draw.line([(float(xa[0]), float(ya[0])), (float(xb[0]), float(yb[0]))], fill=LINK_GRAY)
    return canvas


def save_pgm(image, path):
    image.convert("L").save(path, format="PPM")
    logger.debug("wrote %s", path)


def plot_pr_curves(curves, path, title="Precision-recall"):
    """
    Parameters:
        curves: {label: PrCurve}
        path: output image, format from the extension
    """
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, curve in curves.items():
        df = curve.to_frame()
        ax.plot(df["recall"], df["precision"], marker="o", markersize=3, label=str(label))
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0.0, 1.02)
    ax.set_ylim(0.0, 1.02)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if curves:
        ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    logger.debug("wrote %s", path)
