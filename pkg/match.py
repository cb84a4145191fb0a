"""
Pairwise submap matching: class-constrained nearest neighbour lookup with a
ratio test, two-point RANSAC over SE(2) and an inlier-count decision.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from config import MatchParams
from errors import DegenerateSampleError
from grid import Pose2

logger = logging.getLogger(__name__)

DEGENERATE_BASELINE = 1e-6  # meters
MAX_REFITS = 5


@dataclass(frozen=True)
class Correspondence:
    index_a: int
    index_b: int
    ratio: float


@dataclass(frozen=True)
class MatchResult:
    transform: Pose2  # maps submap b coordinates into submap a
    inliers: list = field(default_factory=list)
    total_correspondences: int = 0
    accepted: bool = False

    @property
    def n_inliers(self):
        return len(self.inliers)


def _keypoint_index(descriptor, position):
    return descriptor.keypoint_index if descriptor.keypoint_index >= 0 else position


def _class_trees(descriptors):
    """One KD-tree per keypoint class: {kind: (tree, [list positions])}."""
    groups = {}
    for position, d in enumerate(descriptors):
        groups.setdefault(d.kind, []).append(position)
    return {
        kind: (cKDTree(np.array([descriptors[p].vector() for p in members])), members)
        for kind, members in groups.items()
    }


def _nearest(trees, descriptor):
    """(nearest position, d1, d2) among same-class descriptors; d2 is None for a singleton class."""
    entry = trees.get(descriptor.kind)
    if entry is None:
        return None
    tree, members = entry
    if len(members) == 1:
        d1, _ = tree.query(descriptor.vector(), k=1)
        return members[0], float(d1), None
    dists, idx = tree.query(descriptor.vector(), k=2)
    return members[int(idx[0])], float(dists[0]), float(dists[1])


def match_descriptors(a, b, params=None):
    """
    Match descriptors of submap a against submap b.

    A query is matched to its nearest same-class descriptor in b when
    d1 / d2 < max_ratio. When b holds a single descriptor of that class the
    ratio is undefined and the match is kept if d1 < singleton_max_distance.

    Returns:
        list of Correspondence (keypoint indices) ordered by index_a
    """
    params = params or MatchParams()
    trees_b = _class_trees(b)
    trees_a = _class_trees(a) if params.mutual_check else None
    out = []
    for i, d in enumerate(a):
        found = _nearest(trees_b, d)
        if found is None:
            continue
        j, d1, d2 = found
        if d2 is None:
            if d1 >= params.singleton_max_distance:
                continue
            ratio = d1 / params.singleton_max_distance
        else:
            # identical nearest and second nearest is ambiguous
            ratio = d1 / d2 if d2 > 0 else 1.0
            if ratio >= params.max_ratio:
                continue
        if trees_a is not None:
            back = _nearest(trees_a, b[j])
            if back is None or back[0] != i:
                continue
        out.append(Correspondence(_keypoint_index(d, i), _keypoint_index(b[j], j), ratio))
    out.sort(key=lambda c: (c.index_a, c.index_b))
    return out


def estimate_rigid_2pt(p1, p2, q1, q2):
    """
    SE(2) transform T with T(p1) = q1 and T(p2 - p1) aligned to q2 - q1.

    Raises:
        DegenerateSampleError when p1 and p2 coincide
    """
    dp = np.subtract(p2, p1)
    dq = np.subtract(q2, q1)
    if math.hypot(dp[0], dp[1]) < DEGENERATE_BASELINE:
        raise DegenerateSampleError("sample points coincide")
    theta = math.atan2(dq[1], dq[0]) - math.atan2(dp[1], dp[0])
    rot = Pose2(0.0, 0.0, theta)
    t = np.asarray(q1, dtype=float) - rot.apply(np.asarray(p1, dtype=float))
    return Pose2(t[0], t[1], theta)


def fit_rigid(src, dst):
    """Closed-form least-squares SE(2) mapping src (N, 2) onto dst (N, 2), N >= 2."""
    src_mean = src.mean(axis=0)
    dst_mean = dst.mean(axis=0)
    cov = (src - src_mean).T @ (dst - dst_mean)
    theta = math.atan2(cov[0, 1] - cov[1, 0], cov[0, 0] + cov[1, 1])
    rot = Pose2(0.0, 0.0, theta)
    t = dst_mean - rot.apply(src_mean)
    return Pose2(t[0], t[1], theta)


def residuals(transform, src, dst):
    return np.linalg.norm(transform.apply(src) - dst, axis=1)


def adaptive_iterations(inlier_ratio, confidence, cap):
    """Samples needed to draw one all-inlier pair with the given confidence."""
    p_good = inlier_ratio * inlier_ratio
    if p_good >= 1.0:
        return 1
    if p_good <= 0.0:
        return cap
    return min(cap, int(math.ceil(math.log(1.0 - confidence) / math.log(1.0 - p_good))))


def ransac_se2(correspondences, keypoints_a, keypoints_b, params=None):
    """
    Robustly estimate the transform taking submap b keypoints onto submap a.

    Parameters:
        correspondences: list of Correspondence
        keypoints_a, keypoints_b: keypoint lists indexed by the correspondences
        params: MatchParams (inlier_radius, ransac_confidence,
            ransac_max_iters, rng_seed)

    Returns:
        (Pose2, list of inlier Correspondence); identity and no inliers when
        fewer than two correspondences are given
    """
    params = params or MatchParams()
    n = len(correspondences)
    if n < 2:
        return Pose2.identity(), []
    pa = np.array([keypoints_a[c.index_a].position for c in correspondences], dtype=float)
    pb = np.array([keypoints_b[c.index_b].position for c in correspondences], dtype=float)
    radius = params.inlier_radius

    rng = np.random.default_rng(params.rng_seed)
    best_transform, best_count = None, -1
    needed = params.ransac_max_iters
    iteration = 0
    while iteration < needed:
        iteration += 1
        i, j = rng.choice(n, size=2, replace=False)
        try:
            hypothesis = estimate_rigid_2pt(pb[i], pb[j], pa[i], pa[j])
        except DegenerateSampleError:
            continue
        count = int(np.count_nonzero(residuals(hypothesis, pb, pa) <= radius))
        if count > best_count:
            best_transform, best_count = hypothesis, count
            needed = adaptive_iterations(count / n, params.ransac_confidence, params.ransac_max_iters)

    if best_transform is None:
        logger.debug("every RANSAC sample was degenerate (%d correspondences)", n)
        return Pose2.identity(), []

    transform = best_transform
    mask = residuals(transform, pb, pa) <= radius
    for _ in range(MAX_REFITS):
        if np.count_nonzero(mask) < 2:
            break
        refit = fit_rigid(pb[mask], pa[mask])
        refit_mask = residuals(refit, pb, pa) <= radius
        if np.count_nonzero(refit_mask) < np.count_nonzero(mask):
            break
        transform = refit
        if np.array_equal(refit_mask, mask):
            break
        mask = refit_mask

    mask = residuals(transform, pb, pa) <= radius
    inliers = [c for c, keep in zip(correspondences, mask) if keep]
    logger.debug("RANSAC: %d iterations, %d/%d inliers", iteration, len(inliers), n)
    return transform, inliers


def match_submaps(keypoints_a, descriptors_a, keypoints_b, descriptors_b, params=None):
    """Descriptor matching, RANSAC and the min_inliers decision for one submap pair."""
    params = params or MatchParams()
    correspondences = match_descriptors(descriptors_a, descriptors_b, params)
    transform, inliers = ransac_se2(correspondences, keypoints_a, keypoints_b, params)
    return MatchResult(
        transform=transform,
        inliers=inliers,
        total_correspondences=len(correspondences),
        accepted=len(inliers) >= params.min_inliers,
    )


# csv artifacts
def result_frame(result):
    x, y, theta = result.transform.as_tuple()
    return pd.DataFrame([{
        "accepted": int(result.accepted),
        "tx": x,
        "ty": y,
        "theta": theta,
        "n_inliers": result.n_inliers,
        "n_correspondences": result.total_correspondences,
    }])


def inlier_pairs_frame(result, keypoints_a, keypoints_b):
    rows = []
    for c in result.inliers:
        xa, ya = keypoints_a[c.index_a].position
        xb, yb = keypoints_b[c.index_b].position
        rows.append({"index_a": c.index_a, "index_b": c.index_b, "xa": xa, "ya": ya,
                     "xb": xb, "yb": yb, "ratio": c.ratio})
    return pd.DataFrame(rows, columns=["index_a", "index_b", "xa", "ya", "xb", "yb", "ratio"])
