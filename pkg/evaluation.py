"""
Evaluation harness: overlap-labelled submap pairs with random relative
rotations, precision-recall sweeps over the inlier threshold, recall at
precision 1.0, the free-space ablation and the parameter grid search.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
import pandas as pd
from sklearn.model_selection import ParameterGrid

from config import D_THRESHOLDS, Config, replace_params
from errors import EmptyCurveError, EmptyDatasetError, EmptyGridError, LocusError
from grid import Pose2, rotate_submap
from pipeline import extract_features, match_features

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["min_inliers", "tp", "fp", "fn", "precision", "recall"]


class Label(Enum):
    MATCH = "match"
    NON_MATCH = "non-match"


@dataclass(frozen=True)
class LabeledPair:
    i: str
    j: str
    rotation: float  # radians applied to submap j before matching
    overlap: float
    label: Label

    @property
    def is_match(self):
        return self.label is Label.MATCH


@dataclass(frozen=True)
class PairOutcome:
    pair: LabeledPair
    n_inliers: int
    transform: Pose2
    truth: Pose2
    pose_ok: bool
    failed: bool = False


@dataclass(frozen=True)
class PrPoint:
    min_inliers: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float


@dataclass(frozen=True)
class PrCurve:
    points: list = field(default_factory=list)

    def to_frame(self):
        return pd.DataFrame([vars(p) for p in self.points], columns=CURVE_COLUMNS)

    def save(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.6f")


@dataclass(frozen=True)
class Evaluation:
    curve: PrCurve
    outcomes: list
    mean_keypoints: float


def overlap_ratio(a, b, transform_ab):
    """
    Fraction of observed cells shared by two submaps under a known transform.

    Observed cell centres of b are mapped into a's frame and rounded to a's
    cells; the count landing on observed cells of a is divided by the smaller
    observed cell count, so a submap contained in another scores 1.0.
    """
    observed_a = ~a.grid.unknown
    observed_b = ~b.grid.unknown
    n_a, n_b = int(observed_a.sum()), int(observed_b.sum())
    if n_a == 0 or n_b == 0:
        return 0.0
    points = transform_ab.apply(b.grid.geometry.cell_centers(observed_b))
    cols, rows = a.grid.geometry.metric_to_cell(points)
    cols = np.floor(cols + 0.5).astype(int)
    rows = np.floor(rows + 0.5).astype(int)
    inside = (cols >= 0) & (cols < a.grid.width) & (rows >= 0) & (rows < a.grid.height)
    hits = np.count_nonzero(observed_a[rows[inside], cols[inside]])
    return min(1.0, hits / min(n_a, n_b))


def ground_truth(a, b):
    """Transform taking submap b's frame into submap a's frame."""
    return a.pose.inverse() @ b.pose


def _label(overlap, threshold):
    return Label.MATCH if overlap >= threshold else Label.NON_MATCH


def _labeled(a, b, rotation, threshold):
    overlap = overlap_ratio(a, b, ground_truth(a, b))
    return LabeledPair(a.id, b.id, float(rotation), overlap, _label(overlap, threshold))


def sample_pairs(submaps, n, rng_seed, overlap_threshold):
    """
    Draw n distinct unordered submap pairs (all pairs if fewer exist), each
    with a uniform random rotation in [-pi, pi) for its second member.

    Labels come from the ground-truth overlap before any rotation.
    """
    if len(submaps) < 2:
        raise EmptyDatasetError(f"need at least two submaps to form pairs, got {len(submaps)}")
    candidates = list(itertools.combinations(range(len(submaps)), 2))
    rng = np.random.default_rng(rng_seed)
    if n < len(candidates):
        picked = np.sort(rng.choice(len(candidates), size=n, replace=False))
        candidates = [candidates[k] for k in picked]
    rotations = rng.uniform(-math.pi, math.pi, size=len(candidates))
    pairs = [_labeled(submaps[i], submaps[j], rot, overlap_threshold)
             for (i, j), rot in zip(candidates, rotations)]
    logger.info("sampled %d pairs (%d labelled match)", len(pairs), sum(p.is_match for p in pairs))
    return pairs


def planned_pairs(submaps, plan, rng_seed, overlap_threshold):
    """
    Label the pairs listed in a benchmark plan ((id_a, id_b, planned label)
    tuples) with random rotations. The overlap decides the label; pairs whose
    planned label disagrees are logged.
    """
    by_id = {s.id: s for s in submaps}
    if len(by_id) < 2:
        raise EmptyDatasetError(f"need at least two submaps to form pairs, got {len(by_id)}")
    rng = np.random.default_rng(rng_seed)
    rotations = rng.uniform(-math.pi, math.pi, size=len(plan))
    pairs = []
    for (id_a, id_b, planned), rot in zip(plan, rotations):
        if id_a not in by_id or id_b not in by_id:
            raise EmptyDatasetError(f"pair {id_a}/{id_b} references a missing submap")
        pair = _labeled(by_id[id_a], by_id[id_b], rot, overlap_threshold)
        if pair.label.value != planned:
            logger.warning("pair %s/%s planned %s but overlap %.3f labels it %s",
                           id_a, id_b, planned, pair.overlap, pair.label.value)
        pairs.append(pair)
    return pairs


def pair_seed(rng_seed, index):
    """Per-pair RANSAC seed, independent of scheduling."""
    return int(np.random.SeedSequence([int(rng_seed), int(index)]).generate_state(1)[0])


def pose_within(estimate, truth, tolerance_m, tolerance_deg):
    error = truth.inverse() @ estimate
    return math.hypot(error.x, error.y) <= tolerance_m and abs(error.theta) <= math.radians(tolerance_deg)


def _sweep(outcomes, decision_only, thresholds):
    n_match = sum(o.pair.is_match for o in outcomes)
    points = []
    for m in thresholds:
        tp = fp = 0
        for o in outcomes:
            if o.n_inliers < m:
                continue
            if o.pair.is_match and (decision_only or o.pose_ok):
                tp += 1
            else:
                fp += 1
        fn = n_match - tp
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / n_match if n_match else 0.0
        points.append(PrPoint(m, tp, fp, fn, precision, recall))
    return PrCurve(points)


def evaluate(submaps, pairs, config=None, jobs=1, thresholds=None):
    """
    Run the full pipeline on every labelled pair and sweep min_inliers.

    Parameters:
        submaps: list of Submap with ground-truth poses
        pairs: list of LabeledPair
        config: Config (match.min_inliers is ignored, the sweep replaces it)
        jobs: worker threads; results do not depend on it
        thresholds: explicit min_inliers values, default 1..max inliers + 1

    Returns:
        Evaluation with the PrCurve, per-pair outcomes and mean keypoints
    """
    config = config or Config()
    by_id = {s.id: s for s in submaps}
    ev = config.eval

    def features_of(submap):
        try:
            return extract_features(submap, config)
        except LocusError as e:
            logger.warning("feature extraction failed for %s: %s", submap.id, e)
            return None

    for pair in pairs:
        if pair.i not in by_id or pair.j not in by_id:
            raise EmptyDatasetError(f"pair {pair.i}/{pair.j} references a missing submap")

    needed = sorted({p.i for p in pairs} | {p.j for p in pairs if p.rotation == 0.0})
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        cache = dict(zip(needed, pool.map(lambda k: features_of(by_id[k]), needed)))

        def run_pair(index):
            pair = pairs[index]
            a, b = by_id[pair.i], by_id[pair.j]
            if pair.rotation == 0.0:
                b_rot, fb = b, cache[pair.j]
            else:
                b_rot = rotate_submap(b, pair.rotation)
                fb = features_of(b_rot)
            truth = ground_truth(a, b_rot)
            fa = cache[pair.i]
            if fa is None or fb is None:
                logger.warning("pair %s/%s recorded as a rejection", pair.i, pair.j)
                return PairOutcome(pair, 0, Pose2.identity(), truth, False, failed=True), fb
            params = replace_params(config.match, "match.rng_seed", rng_seed=pair_seed(ev.rng_seed, index))
            result = match_features(fa, fb, params)
            ok = pose_within(result.transform, truth, ev.pose_tolerance_m, ev.pose_tolerance_deg)
            return PairOutcome(pair, result.n_inliers, result.transform, truth, ok), fb

        results = list(pool.map(run_pair, range(len(pairs))))

    outcomes = [o for o, _ in results]
    counts = [len(f.keypoints) for f in cache.values() if f is not None]
    counts += [len(fb.keypoints) for (o, fb) in results if fb is not None and o.pair.rotation != 0.0]
    mean_keypoints = float(np.mean(counts)) if counts else 0.0

    if thresholds is None:
        top = max((o.n_inliers for o in outcomes), default=0)
        thresholds = range(1, top + 2)
    curve = _sweep(outcomes, ev.decision_only, thresholds)
    logger.info("evaluated %d pairs, recall@1.0 = %.3f", len(pairs),
                recall_at_precision(curve, 1.0) if curve.points else 0.0)
    return Evaluation(curve, outcomes, mean_keypoints)


def recall_at_precision(curve, target_precision=1.0):
    """Maximum recall over curve points reaching target_precision, 0.0 if none do."""
    if not curve.points:
        raise EmptyCurveError("precision-recall curve has no points")
    qualifying = [p.recall for p in curve.points if p.precision >= target_precision]
    return max(qualifying, default=0.0)


def ablation_free_space(submaps, pairs, config=None, d_thresholds=D_THRESHOLDS, jobs=1):
    """
    One evaluation per free-space distance mask, plus the unmasked baseline.

    Returns:
        dict {d_threshold: Evaluation} in the given order, ending with inf
    """
    config = config or Config()
    runs = {}
    for d in list(d_thresholds) + [math.inf]:
        detector = replace_params(config.detector, "detect.d_threshold", d_threshold=float(d))
        logger.info("ablation run d_threshold=%s", d)
        runs[float(d)] = evaluate(submaps, pairs, replace(config, detector=detector), jobs=jobs)
    return runs


@dataclass(frozen=True)
class GridSearchResult:
    best_config: Config
    best_values: dict
    table: pd.DataFrame


def grid_search(submaps, pairs, param_grid, config=None, jobs=1):
    """
    Exhaustive search maximizing recall at precision 1.0.

    Parameters:
        param_grid: {dotted config key: list of values}
        config: base Config the grid values are applied to

    Ties go to fewer mean keypoints per submap, then to the earlier grid
    cell (keys in sorted order, values in the given order).
    """
    config = config or Config()
    if not param_grid or any(len(v) == 0 for v in param_grid.values()):
        raise EmptyGridError("parameter grid is empty")
    grid = ParameterGrid({k: list(v) for k, v in param_grid.items()})

    rows, best = [], None
    for order, values in enumerate(grid):
        candidate = config.with_values({k: str(v) for k, v in values.items()})
        ev = evaluate(submaps, pairs, candidate, jobs=jobs)
        score = recall_at_precision(ev.curve, 1.0)
        rows.append({**values, "recall_at_p1": score, "mean_keypoints": ev.mean_keypoints})
        key = (-score, ev.mean_keypoints, order)
        if best is None or key < best[0]:
            best = (key, candidate, values)
        logger.info("grid cell %s: recall@1.0 %.3f, %.1f keypoints", values, score, ev.mean_keypoints)
    return GridSearchResult(best[1], dict(best[2]), pd.DataFrame(rows))


def outcomes_frame(outcomes):
    rows = []
    for o in outcomes:
        tx, ty, theta = o.transform.as_tuple()
        rows.append({
            "id_a": o.pair.i, "id_b": o.pair.j, "rotation": o.pair.rotation,
            "overlap": o.pair.overlap, "label": o.pair.label.value,
            "n_inliers": o.n_inliers, "pose_ok": int(o.pose_ok),
            "tx": tx, "ty": ty, "theta": theta,
        })
    return pd.DataFrame(rows)


def summary_text(runs):
    """key = value lines of recall at precision 1.0 per named run."""
    lines = [f"{name} = {recall_at_precision(curve, 1.0):.6f}" for name, curve in runs.items()]
    return "\n".join(lines) + "\n"
