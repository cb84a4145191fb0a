"""
Submap -> features and features x features -> match decision, shared by the
CLI and the evaluation harness.
"""

import logging
from dataclasses import dataclass, field

from config import Config
from describe import describe_keypoints, gradient_field
from detect import detect_keypoints, smooth
from match import match_submaps
from sdf import submap_to_sdf

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Features:
    submap_id: str
    keypoints: list = field(default_factory=list)
    descriptors: list = field(default_factory=list)
    sdf: object = None


def features_from_sdf(sdf, config=None, submap_id="sdf"):
    """Smooth once, detect on the smoothed field and describe from its gradients."""
    config = config or Config()
    smoothed = smooth(sdf, config.detector.sigma)
    keypoints = detect_keypoints(sdf, config.detector, config.descriptor.radius, smoothed=smoothed)
    descriptors = describe_keypoints(gradient_field(smoothed), keypoints, config.descriptor)
    logger.debug("%s: %d keypoints, %d descriptors", submap_id, len(keypoints), len(descriptors))
    return Features(submap_id, keypoints, descriptors, sdf)


def extract_features(submap, config=None):
    """binarize -> SDF -> smooth -> detect -> describe for one submap."""
    config = config or Config()
    sdf = submap_to_sdf(submap, config.grid.p_occ)
    return features_from_sdf(sdf, config, submap.id)


def match_features(features_a, features_b, params):
    return match_submaps(features_a.keypoints, features_a.descriptors,
                         features_b.keypoints, features_b.descriptors, params)
