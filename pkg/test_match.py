import math
from dataclasses import replace

import numpy as np
import pytest

from config import MatchParams
from conftest import RES, SMALL_PLAN, SMALL_WORLD, make_submap, rotate_cells_cw, slow
from describe import Descriptor
from detect import Keypoint, KeypointClass
from errors import DegenerateSampleError
from grid import Pose2, normalize_angle
from match import (Correspondence, adaptive_iterations, estimate_rigid_2pt, fit_rigid, inlier_pairs_frame,
                   match_descriptors, match_submaps, ransac_se2, result_frame)
from pipeline import extract_features, match_features
from synth import generate_benchmark

MAX, MIN, SAD = KeypointClass.MAXIMUM, KeypointClass.MINIMUM, KeypointClass.SADDLE


def _descriptor(bin_index, kind=MAX, distance_term=0.0, index=-1):
    hist = np.zeros(17)
    hist[bin_index] = 1.0
    return Descriptor(hist, distance_term, kind, 0.0, index)


def _keypoints(points, kind=MAX):
    return [Keypoint((float(x), float(y)), kind, 1.0, 1.0) for x, y in points]


def _close(pose, expected, tol_m=1e-9, tol_rad=1e-9):
    return (math.hypot(pose.x - expected.x, pose.y - expected.y) <= tol_m
            and abs(normalize_angle(pose.theta - expected.theta)) <= tol_rad)


def test_two_point_estimate_is_exact():
    truth = Pose2(1.5, -0.3, 0.8)
    p1, p2 = np.array([0.2, 0.1]), np.array([-1.0, 2.0])
    q1, q2 = truth.apply(p1), truth.apply(p2)
    assert _close(estimate_rigid_2pt(p1, p2, q1, q2), truth, 1e-12, 1e-12)


def test_two_point_estimate_rejects_coincident_points():
    with pytest.raises(DegenerateSampleError):
        estimate_rigid_2pt([1.0, 1.0], [1.0, 1.0], [0.0, 0.0], [1.0, 0.0])


def test_fit_rigid_recovers_transform():
    rng = np.random.default_rng(8)
    for _ in range(20):
        truth = Pose2(*rng.uniform(-5, 5, size=2), rng.uniform(-math.pi, math.pi))
        src = rng.uniform(-3, 3, size=(12, 2))
        assert _close(fit_rigid(src, truth.apply(src)), truth, 1e-9, 1e-9)


def test_adaptive_iterations():
    assert adaptive_iterations(1.0, 0.99, 1000) == 1
    assert adaptive_iterations(0.0, 0.99, 1000) == 1000
    assert adaptive_iterations(0.5, 0.99, 1000) == 17
    assert adaptive_iterations(0.01, 0.99, 250) == 250


def test_ransac_rejects_outliers():
    rng = np.random.default_rng(21)
    truth = Pose2(2.0, -1.0, 0.6)
    inlier_b = rng.uniform(0, 10, size=(10, 2))
    outlier_b = rng.uniform(0, 10, size=(10, 2))
    outlier_a = rng.uniform(-10, 20, size=(10, 2))
    kps_b = _keypoints(np.vstack([inlier_b, outlier_b]))
    kps_a = _keypoints(np.vstack([truth.apply(inlier_b), outlier_a]))
    correspondences = [Correspondence(i, i, 0.5) for i in range(20)]

    transform, inliers = ransac_se2(correspondences, kps_a, kps_b, MatchParams(rng_seed=3))
    assert _close(transform, truth, 1e-6, 1e-6)
    assert [c.index_a for c in inliers] == list(range(10))


def test_ransac_is_deterministic_per_seed():
    rng = np.random.default_rng(5)
    points = rng.uniform(0, 5, size=(15, 2))
    kps = _keypoints(points)
    shuffled = _keypoints(rng.permutation(points))
    correspondences = [Correspondence(i, i, 0.5) for i in range(15)]
    first = ransac_se2(correspondences, shuffled, kps, MatchParams(rng_seed=9))
    second = ransac_se2(correspondences, shuffled, kps, MatchParams(rng_seed=9))
    assert first[0] == second[0] and first[1] == second[1]


def test_ransac_needs_two_correspondences():
    kps = _keypoints([(0.0, 0.0)])
    assert ransac_se2([Correspondence(0, 0, 0.1)], kps, kps) == (Pose2.identity(), [])
    assert ransac_se2([], kps, kps) == (Pose2.identity(), [])


def test_ratio_test_accepts_distinct_nearest():
    a = [_descriptor(0), _descriptor(3)]
    b = [_descriptor(3, distance_term=0.05), _descriptor(0, distance_term=0.1), _descriptor(7)]
    out = match_descriptors(a, b)
    assert [(c.index_a, c.index_b) for c in out] == [(0, 1), (1, 0)]
    # d1 = 0.1, d2 = sqrt(2)
    assert out[0].ratio == pytest.approx(0.1 / math.sqrt(2))


def test_ratio_test_rejects_ties():
    a = [_descriptor(0)]
    b = [_descriptor(0, distance_term=0.2), _descriptor(0, distance_term=-0.2)]
    assert match_descriptors(a, b) == []
    # exact duplicates give d2 == 0, treated as ratio 1
    assert match_descriptors(a, [_descriptor(0), _descriptor(0)]) == []


def test_classes_are_never_compared():
    a = [_descriptor(0, SAD)]
    b = [_descriptor(0, MAX), _descriptor(1, MAX)]
    assert match_descriptors(a, b) == []


def test_singleton_class_uses_distance_cap():
    b = [_descriptor(0, MIN), _descriptor(4, MAX), _descriptor(5, MAX)]
    near = match_descriptors([_descriptor(0, MIN, distance_term=0.1)], b)
    assert len(near) == 1 and near[0].ratio == pytest.approx(0.1 / 0.25)
    assert match_descriptors([_descriptor(0, MIN, distance_term=0.3)], b) == []


def test_mutual_check_drops_one_sided_matches():
    a = [_descriptor(0, distance_term=0.01), _descriptor(0, distance_term=0.02)]
    b = [_descriptor(0), _descriptor(9)]
    assert len(match_descriptors(a, b)) == 2
    mutual = match_descriptors(a, b, MatchParams(mutual_check=True))
    assert [(c.index_a, c.index_b) for c in mutual] == [(0, 0)]


def test_correspondences_carry_keypoint_indices():
    a = [_descriptor(2, index=7)]
    b = [_descriptor(2, index=4), _descriptor(11, index=5)]
    assert [(c.index_a, c.index_b) for c in match_descriptors(a, b)] == [(7, 4)]


def test_self_match_is_identity(cluttered_room, test_config):
    features = extract_features(cluttered_room, test_config)
    result = match_features(features, features, test_config.match)
    assert result.accepted
    assert _close(result.transform, Pose2.identity(), 1e-9, 1e-9)
    assert result.n_inliers == result.total_correspondences >= test_config.match.min_inliers


def test_quarter_turn_is_recovered(cluttered_room, test_config):
    """Matching the original against its storage rotation yields the quarter turn"""
    cells = cluttered_room.grid.cells
    width = cells.shape[1]
    a = extract_features(cluttered_room, test_config)
    b = extract_features(make_submap(rotate_cells_cw(cells), "turned"), test_config)
    result = match_features(a, b, test_config.match)
    assert result.accepted
    truth = Pose2((width - 1) * RES, 0.0, math.pi / 2)
    assert _close(result.transform, truth, 0.05, math.radians(0.5))


def test_unrelated_rooms_are_rejected(square_room, cluttered_room, test_config):
    result = match_features(extract_features(square_room, test_config),
                            extract_features(cluttered_room, test_config),
                            replace(test_config.match, min_inliers=6))
    assert not result.accepted


def test_result_frames(cluttered_room, test_config):
    features = extract_features(cluttered_room, test_config)
    result = match_features(features, features, test_config.match)
    df = result_frame(result)
    assert list(df.columns) == ["accepted", "tx", "ty", "theta", "n_inliers", "n_correspondences"]
    assert df.loc[0, "accepted"] == 1
    pairs = inlier_pairs_frame(result, features.keypoints, features.keypoints)
    assert len(pairs) == result.n_inliers
    np.testing.assert_allclose(pairs["xa"], pairs["xb"])


def _turn_truth(width, height, res, times):
    """Transform taking a grid turned `times` quarter turns in storage back onto the original."""
    truth = Pose2.identity()
    for _ in range(times):
        truth = truth @ Pose2((width - 1) * res, 0.0, math.pi / 2)
        width, height = height, width
    return truth


@slow
def test_quarter_turn_sweep_over_benchmark(test_config):
    """Every submap turned by 90, 180 and 270 degrees keeps its keypoints, descriptors and pose"""
    data = generate_benchmark(SMALL_WORLD, SMALL_PLAN, n_submaps=20)
    redetected = total = 0
    l1 = []
    cases = recovered = 0
    for submap in data.submaps:
        res = submap.grid.geometry.resolution
        base = extract_features(submap, test_config)
        for times in (1, 2, 3):
            cells = rotate_cells_cw(submap.grid.cells, times)
            turned = extract_features(make_submap(cells, f"{submap.id}-{times}", res=res), test_config)
            truth = _turn_truth(submap.grid.width, submap.grid.height, res, times)
            back = truth.inverse()

            found = np.array([k.position for k in turned.keypoints]).reshape(-1, 2)
            nearest = {}
            for i, k in enumerate(base.keypoints):
                total += 1
                if not len(found):
                    continue
                gap = np.hypot(*(found - back.apply(np.array(k.position))).T)
                j = int(np.argmin(gap))
                if gap[j] <= res:
                    redetected += 1
                    nearest[i] = j
            turned_by_index = {d.keypoint_index: d for d in turned.descriptors}
            for d in base.descriptors:
                other = turned_by_index.get(nearest.get(d.keypoint_index))
                if other is not None:
                    l1.append(np.abs(d.histogram - other.histogram).sum())

            if len(base.descriptors) >= 8:
                cases += 1
                result = match_features(base, turned, test_config.match)
                recovered += result.accepted and _close(result.transform, truth, 0.05, math.radians(0.5))

    assert total > 0 and redetected >= 0.8 * total
    assert l1 and np.mean(np.array(l1) <= 0.05) >= 0.9
    assert cases >= 10 and recovered >= 0.9 * cases


@slow
def test_ransac_matches_least_squares_on_true_inliers():
    """1000 trials at 30% inliers with 2 cm noise recover the least-squares fit of the inliers"""
    rng = np.random.default_rng(1234)
    n, n_in = 50, 15
    agree = 0
    for trial in range(1000):
        truth = Pose2(*rng.uniform(-5, 5, size=2), rng.uniform(-math.pi, math.pi))
        src = rng.uniform(0, 10, size=(n, 2))
        dst = truth.apply(src)
        dst[:n_in] += rng.normal(0.0, 0.02, size=(n_in, 2))
        for k in range(n_in, n):
            # outliers stay well clear of the true transform
            while True:
                candidate = rng.uniform(-15, 15, size=2)
                if np.hypot(*(candidate - dst[k])) > 1.0:
                    dst[k] = candidate
                    break
        correspondences = [Correspondence(i, i, 0.5) for i in range(n)]
        transform, inliers = ransac_se2(correspondences, _keypoints(dst), _keypoints(src),
                                        MatchParams(rng_seed=trial))
        expected = fit_rigid(src[:n_in], dst[:n_in])
        agree += _close(transform, expected, 1e-6, 1e-6) and [c.index_a for c in inliers] == list(range(n_in))
    assert agree >= 990


def test_match_submaps_decision_follows_min_inliers(cluttered_room, test_config):
    f = extract_features(cluttered_room, test_config)
    result = match_submaps(f.keypoints, f.descriptors, f.keypoints, f.descriptors, test_config.match)
    n = result.n_inliers
    assert n >= 2
    assert match_submaps(f.keypoints, f.descriptors, f.keypoints, f.descriptors,
                         replace(test_config.match, min_inliers=n)).accepted
    assert not match_submaps(f.keypoints, f.descriptors, f.keypoints, f.descriptors,
                             replace(test_config.match, min_inliers=n + 1)).accepted


def test_swapping_submaps_inverts_the_transform(cluttered_room, test_config):
    a = extract_features(cluttered_room, test_config)
    b = extract_features(make_submap(rotate_cells_cw(cluttered_room.grid.cells), "turned"), test_config)
    ab = match_features(a, b, test_config.match)
    ba = match_features(b, a, test_config.match)
    assert ab.accepted and ba.accepted
    assert _close(ba.transform, ab.transform.inverse(), 0.05, math.radians(0.5))
