"""
Detection metrics for lane predictions.

Features:
- Width-rasterized lane masks and mask IoU
- F1 / precision / recall with one-to-one IoU matching and confidence thresholds
- Row-grid point accuracy with whole-lane FP / FN rates, per clip and pooled
- Confidence-threshold sweeps
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidArgumentError
from .geometry import Frame, LanePolyline

logger = logging.getLogger(__name__)

DEFAULT_CONF_THRESHOLD = 0.5
DEFAULT_IOU_THRESHOLD = 0.5
DEFAULT_POINT_TOLERANCE = 20.0
DEFAULT_LANE_THRESHOLD = 0.85

# Stroke width of 30 px at a 1640 px wide frame, scaled with frame width
REFERENCE_STROKE = 30
REFERENCE_WIDTH = 1640


def default_stroke_width(frame: Frame) -> int:
    return max(1, int(round(REFERENCE_STROKE * frame.width / REFERENCE_WIDTH)))


# =============================================================================
# Rasterization
# =============================================================================

@dataclass(eq=False)
class RasterMask:
    """H x W boolean lane mask."""
    frame: Frame
    bitmap: np.ndarray

    @property
    def area(self) -> int:
        return int(self.bitmap.sum())


def rasterize_lane(lane: LanePolyline, frame: Frame,
                   stroke_width: Optional[float] = None) -> RasterMask:
    """
    Draw a lane with a round-capped stroke.

    A pixel is set when its center (col + 0.5, row + 0.5) lies within
    stroke_width / 2 of any segment of the lane scaled to pixel units.
    """
    width = default_stroke_width(frame) if stroke_width is None else stroke_width
    if width < 1:
        raise InvalidArgumentError(f"stroke width must be >= 1, got {width}")
    radius = width / 2.0
    bitmap = np.zeros((frame.height, frame.width), dtype=bool)
    pts = lane.points * np.array([frame.width, frame.height], dtype=float)

    for a, b in zip(pts[:-1], pts[1:]):
        c0 = max(int(np.floor(min(a[0], b[0]) - radius)), 0)
        c1 = min(int(np.ceil(max(a[0], b[0]) + radius)) + 1, frame.width)
        r0 = max(int(np.floor(min(a[1], b[1]) - radius)), 0)
        r1 = min(int(np.ceil(max(a[1], b[1]) + radius)) + 1, frame.height)
        if c0 >= c1 or r0 >= r1:
            continue
        cx = np.arange(c0, c1) + 0.5
        cy = np.arange(r0, r1) + 0.5
        px, py = np.meshgrid(cx, cy)
        seg = b - a
        seg_sq = float(seg @ seg)
        if seg_sq > 0:
            t = np.clip(((px - a[0]) * seg[0] + (py - a[1]) * seg[1]) / seg_sq, 0.0, 1.0)
        else:
            t = np.zeros_like(px)
        dx = px - (a[0] + t * seg[0])
        dy = py - (a[1] + t * seg[1])
        bitmap[r0:r1, c0:c1] |= dx * dx + dy * dy <= radius * radius

    return RasterMask(frame=frame, bitmap=bitmap)


def lane_iou(a: RasterMask, b: RasterMask) -> float:
    """|a & b| / |a | b|, 0 for two empty masks."""
    if a.frame != b.frame:
        raise InvalidArgumentError(f"frames differ: {a.frame} vs {b.frame}")
    union = np.logical_or(a.bitmap, b.bitmap).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a.bitmap, b.bitmap).sum() / union)


# =============================================================================
# F1
# =============================================================================

@dataclass(eq=False)
class DetectionResult:
    """Counts and rates of one evaluation; iou is (kept predictions, ground truth)."""
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    iou: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    matches: list[tuple[int, int]] = field(default_factory=list)

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, **kwargs) -> "DetectionResult":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(tp, fp, fn, precision, recall, f1, **kwargs)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "iou": self.iou.tolist(),
            "matches": [list(m) for m in self.matches],
        }


def match_by_iou(iou: np.ndarray, threshold_iou: float) -> list[tuple[int, int]]:
    """
    One-to-one matching maximizing the number of pairs above threshold_iou,
    then their summed IoU. Returns only pairs above the threshold.
    """
    if iou.size == 0:
        return []
    qualifies = iou > threshold_iou
    bonus = min(iou.shape) + 1
    weight = np.where(qualifies, bonus + iou, 0.0)
    rows, cols = linear_sum_assignment(weight, maximize=True)
    return sorted((int(r), int(c)) for r, c in zip(rows, cols) if qualifies[r, c])


class F1Evaluator:
    """Rasterizes a prediction set and its ground truth once, then scores thresholds."""

    def __init__(self, predictions: Sequence[tuple[LanePolyline, float]],
                 gts: Sequence[LanePolyline], frame: Frame,
                 stroke_width: Optional[float] = None):
        self.confidences = np.array([float(c) for _, c in predictions])
        self.n_gt = len(gts)
        pred_masks = [rasterize_lane(p, frame, stroke_width) for p, _ in predictions]
        gt_masks = [rasterize_lane(g, frame, stroke_width) for g in gts]
        self.iou = np.zeros((len(pred_masks), len(gt_masks)))
        for i, pm in enumerate(pred_masks):
            for j, gm in enumerate(gt_masks):
                self.iou[i, j] = lane_iou(pm, gm)

    def evaluate(self, threshold_conf: float = DEFAULT_CONF_THRESHOLD,
                 threshold_iou: float = DEFAULT_IOU_THRESHOLD) -> DetectionResult:
        for name, value in (("threshold_conf", threshold_conf), ("threshold_iou", threshold_iou)):
            if not 0.0 <= value <= 1.0:
                raise InvalidArgumentError(f"{name} must lie in [0, 1], got {value}")
        kept = np.flatnonzero(self.confidences >= threshold_conf)
        iou = self.iou[kept]
        matches = match_by_iou(iou, threshold_iou)
        tp = len(matches)
        return DetectionResult.from_counts(
            tp, len(kept) - tp, self.n_gt - tp,
            iou=iou, matches=[(int(kept[p]), g) for p, g in matches],
        )


def detect_f1(predictions: Sequence[tuple[LanePolyline, float]], gts: Sequence[LanePolyline],
              threshold_conf: float = DEFAULT_CONF_THRESHOLD,
              threshold_iou: float = DEFAULT_IOU_THRESHOLD,
              frame: Frame = Frame(590, 1640),
              stroke_width: Optional[float] = None) -> DetectionResult:
    """
    Score predictions against ground truth.

    Predictions below threshold_conf are dropped; the rest are matched one to
    one, matched pairs with IoU > threshold_iou are true positives.
    """
    evaluator = F1Evaluator(predictions, gts, frame, stroke_width)
    return evaluator.evaluate(threshold_conf, threshold_iou)


def threshold_sweep(predictions: Sequence[tuple[LanePolyline, float]],
                    gts: Sequence[LanePolyline], thresholds: Iterable[float],
                    threshold_iou: float = DEFAULT_IOU_THRESHOLD,
                    frame: Frame = Frame(590, 1640),
                    stroke_width: Optional[float] = None) -> list[tuple[float, DetectionResult]]:
    """DetectionResult per confidence threshold, thresholds in ascending order."""
    evaluator = F1Evaluator(predictions, gts, frame, stroke_width)
    return [(float(t), evaluator.evaluate(float(t), threshold_iou)) for t in sorted(thresholds)]


def sweep_grid(n: int = 21) -> list[float]:
    return [float(t) for t in np.linspace(0.0, 1.0, n)]


# =============================================================================
# Row-grid accuracy
# =============================================================================

@dataclass(frozen=True)
class TuSimpleResult:
    """Point accuracy C / S with whole-lane false positive / negative counts."""
    accuracy: float
    fp_rate: float
    fn_rate: float
    correct_points: int = 0
    total_points: int = 0
    fp: int = 0
    fn: int = 0
    n_pred: int = 0
    n_gt: int = 0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "fp_rate": self.fp_rate,
            "fn_rate": self.fn_rate,
            "correct_points": self.correct_points,
            "total_points": self.total_points,
            "fp": self.fp,
            "fn": self.fn,
            "n_pred": self.n_pred,
            "n_gt": self.n_gt,
        }


def _check_grid(lanes: Sequence[LanePolyline]) -> None:
    if not lanes:
        return
    rows = lanes[0].points[:, 1]
    for lane in lanes[1:]:
        if lane.n_points != rows.size or not np.allclose(lane.points[:, 1], rows, atol=1e-9):
            raise InvalidArgumentError("lanes do not share a common row-sampling grid")


def _rates(correct: int, total: int, fp: int, fn: int, n_pred: int, n_gt: int) -> TuSimpleResult:
    return TuSimpleResult(
        accuracy=correct / total if total else 1.0,
        fp_rate=fp / n_pred if n_pred else 0.0,
        fn_rate=fn / n_gt if n_gt else 0.0,
        correct_points=correct,
        total_points=total,
        fp=fp,
        fn=fn,
        n_pred=n_pred,
        n_gt=n_gt,
    )


def tusimple_accuracy(predictions: Sequence[LanePolyline], gts: Sequence[LanePolyline],
                      frame: Frame = Frame(720, 1280),
                      point_tolerance: float = DEFAULT_POINT_TOLERANCE,
                      lane_threshold: float = DEFAULT_LANE_THRESHOLD) -> TuSimpleResult:
    """
    Row-grid point accuracy of one clip.

    A predicted point is correct when it lies within point_tolerance pixels
    horizontally of the ground-truth point on the same row. Each ground truth
    takes its best prediction; a lane counts as found when at least
    lane_threshold of its points are correct.

    Raises:
        InvalidArgumentError: lanes are not sampled on the same rows
    """
    _check_grid(list(predictions) + list(gts))
    total = sum(g.n_points for g in gts)
    correct = 0
    found = 0
    fn = 0
    for g in gts:
        best = 0
        for p in predictions:
            offsets = np.abs(p.points[:, 0] - g.points[:, 0]) * frame.width
            hits = int((offsets < point_tolerance).sum())
            best = max(best, hits)
        correct += best
        if best >= lane_threshold * g.n_points:
            found += 1
        else:
            fn += 1
    fp = max(len(predictions) - found, 0)
    return _rates(correct, total, fp, fn, len(predictions), len(gts))


def tusimple_benchmark(clips: Iterable[tuple[Sequence[LanePolyline], Sequence[LanePolyline]]],
                       frame: Frame = Frame(720, 1280),
                       point_tolerance: float = DEFAULT_POINT_TOLERANCE,
                       lane_threshold: float = DEFAULT_LANE_THRESHOLD) -> TuSimpleResult:
    """Pool clips: accuracy = sum C / sum S, FP / FN rates over all lanes."""
    correct = total = fp = fn = n_pred = n_gt = 0
    for predictions, gts in clips:
        r = tusimple_accuracy(predictions, gts, frame, point_tolerance, lane_threshold)
        correct += r.correct_points
        total += r.total_points
        fp += r.fp
        fn += r.fn
        n_pred += r.n_pred
        n_gt += r.n_gt
    return _rates(correct, total, fp, fn, n_pred, n_gt)
