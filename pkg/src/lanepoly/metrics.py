"""Benchmark metrics: per-lane point accuracy, greedy prediction/ground-truth
matching, Acc/FP/FN rates, lane position deviation (LPD), and the
least-squares polynomial upper-bound experiment.

Metric arithmetic happens in pixel space at the annotation's native
resolution.  Predictions come in two shapes: polynomial predictions with a
restricted domain (in-process evaluation) and x-value lists sampled at the
annotation rows (prediction files)."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import geometry
from .data import NO_POINT, ImageAnnotation
from .errors import DegenerateFit, NoEgoLane
from .model import ModelOutput

TAU_ACC_PX = 20.0
EPSILON = 0.85


@dataclass(frozen=True)
class PolyLanePred:
    """A polynomial lane prediction in normalized coordinates with a
    normalized y-domain, evaluated against pixel-space ground truth."""

    poly: geometry.Polynomial
    domain: tuple[float, float]  # normalized y interval
    image_size: tuple[int, int]

    def x_at(self, ys_px: np.ndarray) -> np.ndarray:
        """Predicted x in pixels at the given pixel rows; NaN outside the
        domain.  Annotation rows are integer pixels, so membership allows a
        half-pixel tolerance at the domain boundaries."""
        w, h = self.image_size
        ys_n = np.asarray(ys_px, dtype=float) / h
        xs = geometry.eval_poly(self.poly, ys_n) * w
        lo, hi = self.domain
        tol = 0.5 / h
        return np.where((ys_n >= lo - tol) & (ys_n <= hi + tol), xs, np.nan)

    def x_extrapolated(self, ys_px: np.ndarray) -> np.ndarray:
        """Predicted x in pixels ignoring the domain (used by LPD)."""
        w, h = self.image_size
        return geometry.eval_poly(self.poly, np.asarray(ys_px, dtype=float) / h) * w

    def bottom_x(self) -> float:
        return float(self.x_extrapolated(np.array([self.image_size[1]]))[0])


@dataclass(frozen=True)
class SampledLanePred:
    """A lane prediction given as x values aligned with annotation rows,
    NO_POINT marking absent rows (prediction-file format)."""

    xs: tuple
    h_samples: tuple

    def x_at(self, ys_px: np.ndarray) -> np.ndarray:
        lut = {y: x for y, x in zip(self.h_samples, self.xs) if x != NO_POINT}
        return np.array([lut.get(y, np.nan) for y in np.asarray(ys_px).tolist()])

    def x_extrapolated(self, ys_px: np.ndarray) -> np.ndarray:
        return self.x_at(ys_px)

    def bottom_x(self) -> float:
        valid = [x for x in self.xs if x != NO_POINT]
        if not valid:
            return np.nan
        return float(valid[-1])


def lane_accuracy(pred, gt_points: np.ndarray, tau_acc: float = TAU_ACC_PX) -> float:
    """Fraction of ground-truth points the prediction hits within tau_acc
    pixels.  Points outside the prediction's domain count as misses."""
    gt_points = np.asarray(gt_points, dtype=float)
    if len(gt_points) == 0:
        raise ValueError("ground-truth lane has no points")
    xs = pred.x_at(gt_points[:, 1])
    dev = np.abs(xs - gt_points[:, 0])
    hits = np.where(np.isnan(dev), False, dev < tau_acc)
    return float(np.mean(hits))


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple  # (gt index, pred index, point accuracy)
    unmatched_gt: tuple
    unmatched_pred: tuple


def match_and_score(
    preds: list,
    gts: list[np.ndarray],
    tau_acc: float = TAU_ACC_PX,
    eps: float = EPSILON,
) -> tuple[MatchResult, float, float, float]:
    """Greedy one-to-one matching in descending point-accuracy order.

    A pair is a true positive iff its accuracy >= eps.  Per-image
    acc averages matched-pair accuracies over the number of ground-truth
    lanes (unmatched ground truth contributes 0; an image with no ground
    truth scores 1.0 vacuously); fp is the fraction of predictions not in
    a true-positive pair, fn the fraction of ground-truth lanes not in one.
    Ties are broken by lower prediction index, then lower gt index."""
    accs = np.array([[lane_accuracy(p, g, tau_acc) for g in gts] for p in preds])
    candidates = sorted(
        ((i, j) for i in range(len(preds)) for j in range(len(gts))),
        key=lambda ij: (-accs[ij], ij[0], ij[1]),
    )
    used_pred, used_gt, pairs = set(), set(), []
    for i, j in candidates:
        if i in used_pred or j in used_gt:
            continue
        used_pred.add(i)
        used_gt.add(j)
        pairs.append((j, i, float(accs[i, j])))
    tp_pred = {i for j, i, a in pairs if a >= eps}
    tp_gt = {j for j, i, a in pairs if a >= eps}
    result = MatchResult(
        pairs=tuple(sorted(pairs)),
        unmatched_gt=tuple(j for j in range(len(gts)) if j not in used_gt),
        unmatched_pred=tuple(i for i in range(len(preds)) if i not in used_pred),
    )
    acc = sum(a for _, _, a in pairs) / len(gts) if gts else 1.0
    fp = (len(preds) - len(tp_pred)) / len(preds) if preds else 0.0
    fn = (len(gts) - len(tp_gt)) / len(gts) if gts else 0.0
    return result, acc, fp, fn


def optimal_match_acc(
    preds: list,
    gts: list[np.ndarray],
    tau_acc: float = TAU_ACC_PX,
) -> float:
    """Exhaustive-assignment oracle: the best achievable per-image acc over
    all one-to-one pred/gt assignments.  Exponential; intended for small
    lane counts."""
    if not gts:
        return 1.0
    if not preds:
        return 0.0
    accs = np.array([[lane_accuracy(p, g, tau_acc) for g in gts] for p in preds])
    n_p, n_g = len(preds), len(gts)
    best = 0.0
    if n_p >= n_g:
        for perm in itertools.permutations(range(n_p), n_g):
            best = max(best, sum(accs[perm[j], j] for j in range(n_g)))
    else:
        for perm in itertools.permutations(range(n_g), n_p):
            best = max(best, sum(accs[i, perm[i]] for i in range(n_p)))
    return best / n_g


def ego_lane_indices(gts: list[np.ndarray], image_size: tuple[int, int]) -> list[int]:
    """Indices of the ego-lane markings: the ground-truth lanes whose
    bottom-most points are nearest to bottom-center, one per side when
    available."""
    if not gts:
        raise NoEgoLane("image has no ground-truth lanes")
    center = image_size[0] / 2.0
    bottoms = [float(g[-1, 0]) for g in gts]  # points are y-sorted
    left = [j for j, b in enumerate(bottoms) if b < center]
    right = [j for j, b in enumerate(bottoms) if b >= center]
    ego = []
    if left:
        ego.append(max(left, key=lambda j: bottoms[j]))
    if right:
        ego.append(min(right, key=lambda j: bottoms[j]))
    return ego


def lpd(
    preds: list,
    gts: list[np.ndarray],
    image_size: tuple[int, int],
    match: MatchResult | None = None,
) -> float:
    """Lane position deviation: mean absolute horizontal deviation in
    pixels between each ego marking and its prediction.

    Each ego marking uses the prediction matched by match_and_score, or
    the nearest prediction by bottom x when unmatched.  Returns NaN when
    no ego marking could be paired with a prediction (the caller excludes
    the image from the dataset mean)."""
    ego = ego_lane_indices(gts, image_size)  # raises NoEgoLane when empty
    if match is None:
        match, *_ = match_and_score(preds, gts)
    paired = {j: i for j, i, _ in match.pairs}
    per_marking = []
    for j in ego:
        if j in paired:
            pred = preds[paired[j]]
        elif preds:
            bottom = float(gts[j][-1, 0])
            pred = min(preds, key=lambda p: abs(p.bottom_x() - bottom))
        else:
            continue
        dev = np.abs(pred.x_extrapolated(gts[j][:, 1]) - gts[j][:, 0])
        dev = dev[~np.isnan(dev)]
        if len(dev):
            per_marking.append(float(np.mean(dev)))
    return float(np.mean(per_marking)) if per_marking else float("nan")


@dataclass(frozen=True)
class MetricReport:
    acc: float
    fp: float
    fn: float
    lpd: float
    n_images: int
    degenerate_fallbacks: int = 0
    greedy_optimal_gap: float = 0.0  # max |greedy - optimal| acc over checked images

    def format(self) -> str:
        return (f"Acc {self.acc:.4f}  FP {self.fp:.4f}  FN {self.fn:.4f}  "
                f"LPD {self.lpd:.3f} px  ({self.n_images} images)")


def aggregate_images(per_image: list[tuple[float, float, float, float]],
                     degenerate_fallbacks: int = 0,
                     greedy_optimal_gap: float = 0.0) -> MetricReport:
    """Average per-image (acc, fp, fn, lpd) tuples; lpd entries of NaN are
    excluded from the LPD mean (images without a paired ego marking)."""
    if not per_image:
        return MetricReport(0.0, 0.0, 0.0, float("nan"), 0,
                            degenerate_fallbacks, greedy_optimal_gap)
    arr = np.array(per_image)
    lpds = arr[:, 3]
    lpds = lpds[~np.isnan(lpds)]
    return MetricReport(
        acc=float(arr[:, 0].mean()),
        fp=float(arr[:, 1].mean()),
        fn=float(arr[:, 2].mean()),
        lpd=float(lpds.mean()) if len(lpds) else float("nan"),
        n_images=len(per_image),
        degenerate_fallbacks=degenerate_fallbacks,
        greedy_optimal_gap=greedy_optimal_gap,
    )


def score_image(preds, gts, image_size,
                tau_acc: float = TAU_ACC_PX, eps: float = EPSILON,
                check_optimal: bool = False):
    """(acc, fp, fn, lpd) for one image plus the greedy-vs-optimal gap
    (0 when not checked)."""
    match, acc, fp, fn = match_and_score(preds, gts, tau_acc, eps)
    try:
        image_lpd = lpd(preds, gts, image_size, match)
    except NoEgoLane:
        image_lpd = float("nan")
    gap = 0.0
    if check_optimal and len(gts) <= 4 and len(preds) <= 4:
        gap = abs(optimal_match_acc(preds, gts, tau_acc) - acc)
    return (acc, fp, fn, image_lpd), gap


def upper_bound(
    annotations: list[ImageAnnotation],
    degree: int,
    tau_acc: float = TAU_ACC_PX,
    eps: float = EPSILON,
    check_optimal: bool = True,
) -> MetricReport:
    """Best-case benchmark score of degree-K polynomial lane representations,
    measured by least-squares fitting each ground-truth lane to its own
    points and scoring the fits as predictions.

    Lanes with too few distinct rows for the requested degree fall back to
    a straight-line fit (counted in the report)."""
    per_image = []
    fallbacks = 0
    max_gap = 0.0
    for a in annotations:
        w, h = a.image_size
        gts = a.usable_lanes()
        preds = []
        for pts in gts:
            norm = pts / np.array([w, h], dtype=float)
            try:
                poly = geometry.fit_least_squares(norm, degree)
            except DegenerateFit:
                poly = geometry.fit_least_squares(norm, 1)
                fallbacks += 1
            domain = (float(norm[:, 1].min()), float(norm[:, 1].max()))
            preds.append(PolyLanePred(poly, domain, (w, h)))
        scores, gap = score_image(preds, gts, (w, h), tau_acc, eps, check_optimal)
        max_gap = max(max_gap, gap)
        per_image.append(scores)
    return aggregate_images(per_image, fallbacks, max_gap)


# ---------------------------------------------------------------------------
# model outputs <-> prediction files

def prediction_lanes(out: ModelOutput, image_size: tuple[int, int],
                     conf_threshold: float = 0.5) -> list[PolyLanePred]:
    """Confidence-filtered polynomial predictions for one image."""
    preds = []
    for j, lane in enumerate(out.lanes):
        if lane.c >= conf_threshold:
            preds.append(PolyLanePred(lane.poly, out.domain(j), tuple(image_size)))
    return preds


def sample_to_annotation(preds: list[PolyLanePred], gt: ImageAnnotation) -> ImageAnnotation:
    """Sample polynomial predictions at the ground-truth rows, producing a
    TuSimple-style prediction record (NO_POINT outside the domain or the
    image).  Lanes left with fewer than 2 samples are dropped."""
    w, _ = gt.image_size
    ys = np.array(gt.h_samples, dtype=float)
    lanes = []
    for p in preds:
        xs = p.x_at(ys)
        row = [float(x) if (not np.isnan(x)) and 0.0 <= x <= w else NO_POINT
               for x in xs]
        if sum(x != NO_POINT for x in row) >= 2:
            lanes.append(tuple(row))
    return ImageAnnotation(raw_file=gt.raw_file, h_samples=gt.h_samples,
                           lanes=tuple(lanes), image_size=gt.image_size)


def evaluate_annotations(
    gt_annotations: list[ImageAnnotation],
    pred_annotations: list[ImageAnnotation],
    tau_acc: float = TAU_ACC_PX,
    eps: float = EPSILON,
    check_optimal: bool = False,
) -> MetricReport:
    """Score prediction records against ground truth, keyed by raw_file.

    Raises ValueError when the two sets of raw_file keys differ."""
    pred_by_file = {a.raw_file: a for a in pred_annotations}
    gt_files = [a.raw_file for a in gt_annotations]
    if sorted(gt_files) != sorted(pred_by_file):
        missing = set(gt_files) ^ set(pred_by_file)
        raise ValueError(
            f"ground-truth and prediction files disagree on {len(missing)} "
            f"raw_file keys (e.g. {sorted(missing)[:3]})")
    per_image = []
    max_gap = 0.0
    for a in gt_annotations:
        pred = pred_by_file[a.raw_file]
        preds = [SampledLanePred(lane, pred.h_samples) for lane in pred.lanes
                 if sum(x != NO_POINT for x in lane) >= 2]
        gts = a.usable_lanes()
        scores, gap = score_image(preds, gts, a.image_size, tau_acc, eps,
                                  check_optimal)
        max_gap = max(max_gap, gap)
        per_image.append(scores)
    return aggregate_images(per_image, greedy_optimal_gap=max_gap)
