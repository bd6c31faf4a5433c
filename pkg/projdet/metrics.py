"""Center-distance detection metrics: AP at BEV thresholds, translation and velocity errors."""

import csv
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .detector import Box3D
from .exceptions import ProjdetError

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
TP_THRESHOLD = 2.0
RECALL_POINTS = np.linspace(0.0, 1.0, 11)
# reported when nothing is matched
ATE_CAP = 2.0
AVE_CAP = 1.0


@dataclass
class EvalReport:
    """
    Evaluation summary.

    Attributes:
        ap_at_thresholds: Threshold (m) to AP in ``[0, 1]``
        mean_ate: Mean BEV center distance of true positives at 2 m
        mean_ave: Mean velocity error of the same true positives
        recall: True positives at 2 m over ground-truth count
        extras: Additional named measures (query recall, frame count, ...)
    """

    ap_at_thresholds: Dict[float, float]
    mean_ate: float
    mean_ave: float
    recall: float
    n_true_positives: int = 0
    n_gt: int = 0
    extras: Dict[str, float] = field(default_factory=dict)

    @property
    def mean_ap(self) -> float:
        return float(np.mean(list(self.ap_at_thresholds.values()))) if self.ap_at_thresholds else 0.0

    def ap(self, threshold: float) -> float:
        return self.ap_at_thresholds[float(threshold)]

    def to_row(self) -> Dict[str, float]:
        row = {f"ap@{t:g}": v for t, v in sorted(self.ap_at_thresholds.items())}
        row.update({"map": self.mean_ap, "ate": self.mean_ate, "ave": self.mean_ave, "recall": self.recall,
                    "tp": self.n_true_positives, "gt": self.n_gt})
        row.update(self.extras)
        return row


def _bev_distance(a: Box3D, b: Box3D) -> float:
    return float(np.hypot(*(a.center[:2] - b.center[:2])))


def match_greedy(preds: Sequence[Sequence[Box3D]], gts: Sequence[Sequence[Box3D]], threshold: float,
                 class_id: Optional[int] = None) -> Tuple[List[Tuple[float, bool, int, int, int]], int]:
    """
    Score-descending greedy matching to the nearest unmatched ground truth within ``threshold``.

    Returns:
        ``(decisions, n_gt)`` where each decision is
        ``(score, is_tp, frame, pred_index, gt_index or -1)`` in processing order
    """
    candidates = []
    n_gt = 0
    for frame, (frame_preds, frame_gt) in enumerate(zip(preds, gts)):
        n_gt += sum(1 for g in frame_gt if class_id is None or g.class_id == class_id)
        for index, box in enumerate(frame_preds):
            if class_id is None or box.class_id == class_id:
                candidates.append((-box.score, frame, index))
    candidates.sort()

    taken = [np.zeros(len(g), dtype=bool) for g in gts]
    decisions = []
    for neg_score, frame, index in candidates:
        box = preds[frame][index]
        best, best_distance = -1, threshold
        for j, gt in enumerate(gts[frame]):
            if taken[frame][j] or (class_id is not None and gt.class_id != class_id):
                continue
            distance = _bev_distance(box, gt)
            if distance <= best_distance:
                if best < 0 or distance < best_distance:
                    best, best_distance = j, distance
        if best >= 0:
            taken[frame][best] = True
        decisions.append((-neg_score, best >= 0, frame, index, best))
    return decisions, n_gt


def average_precision(is_tp: Sequence[bool], n_gt: int) -> float:
    """11-point interpolated AP of a score-ordered decision list."""
    if n_gt == 0:
        return 0.0
    hits = np.asarray(is_tp, dtype=np.float64)
    if hits.size == 0:
        return 0.0
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, hits.size + 1)
    recall = tp / n_gt
    total = 0.0
    for r in RECALL_POINTS:
        mask = recall >= r - 1e-12
        total += precision[mask].max() if mask.any() else 0.0
    return total / len(RECALL_POINTS)


def evaluate(preds: Sequence[Sequence[Box3D]], gts: Sequence[Sequence[Box3D]],
             thresholds: Sequence[float] = DEFAULT_THRESHOLDS, class_aware: bool = True) -> EvalReport:
    """
    Evaluate per-frame predictions against per-frame ground truth.

    AP is computed per class present in the ground truth and averaged
    (``class_aware``), or over all boxes as one class. ATE and AVE average
    over true positives at 2 m and fall back to 2.0 m and 1.0 m/s when there
    are none.

    Raises:
        ProjdetError: If the frame counts differ
    """
    if len(preds) != len(gts):
        raise ProjdetError(f"{len(preds)} prediction frames for {len(gts)} ground-truth frames")
    classes: List[Optional[int]] = [None]
    if class_aware:
        classes = sorted({g.class_id for frame in gts for g in frame})

    ap = {}
    for threshold in thresholds:
        values = []
        for class_id in classes:
            decisions, n_gt = match_greedy(preds, gts, threshold, class_id)
            if n_gt:
                values.append(average_precision([d[1] for d in decisions], n_gt))
        ap[float(threshold)] = float(np.mean(values)) if values else 0.0

    errors, velocity_errors = [], []
    n_gt_total = sum(len(g) for g in gts)
    for class_id in classes:
        decisions, _ = match_greedy(preds, gts, TP_THRESHOLD, class_id)
        for _, hit, frame, index, gt_index in decisions:
            if not hit:
                continue
            pred, gt = preds[frame][index], gts[frame][gt_index]
            errors.append(_bev_distance(pred, gt))
            velocity_errors.append(float(np.linalg.norm(pred.velocity - gt.velocity)))

    report = EvalReport(
        ap_at_thresholds=ap,
        mean_ate=float(np.mean(errors)) if errors else ATE_CAP,
        mean_ave=float(np.mean(velocity_errors)) if velocity_errors else AVE_CAP,
        recall=len(errors) / n_gt_total if n_gt_total else 0.0,
        n_true_positives=len(errors),
        n_gt=n_gt_total,
    )
    logger.debug("evaluated %d frames: %s", len(gts), report.to_row())
    return report


def write_report_csv(path: str, rows: Sequence[Dict[str, object]]) -> str:
    """
    Write report rows (dicts sharing keys) to a CSV file.

    Raises:
        ProjdetError: If the file cannot be written
    """
    rows = list(rows)
    fieldnames: List[str] = []
    for row in rows:
        for key in row:
            if key not in fieldnames:
                fieldnames.append(key)
    try:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fieldnames)
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
    except IOError as e:
        raise ProjdetError(f"Failed to write report {path}: {str(e)}")
    return path
