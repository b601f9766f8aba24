"""Pixel-level detection metrics: TPR/FPR, ROC sweep, AUC.

Only patch-covered pixels enter the counts. The ROC sweeps thresholds placed
at uniform quantiles of the pooled scores (plus infinite endpoints); rates at
each threshold are computed per video and then averaged across videos, so a
threshold means the same score level everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateGroundTruth, InvalidParameter, ShapeError

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def pixel_rates(mask: np.ndarray, gt: np.ndarray, coverage: np.ndarray):
    """(TPR, FPR) over covered pixels; a rate with zero denominator is None."""
    mask = np.asarray(mask).astype(bool)
    gt = np.asarray(gt).astype(bool)
    coverage = np.asarray(coverage).astype(bool)
    if mask.shape != gt.shape or mask.shape != coverage.shape:
        raise ShapeError(
            f"shape mismatch: mask {mask.shape}, gt {gt.shape}, coverage {coverage.shape}"
        )
    pred = mask[coverage]
    truth = gt[coverage]
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    tn = int(np.sum(~pred & ~truth))
    tpr = tp / (tp + fn) if tp + fn > 0 else None
    fpr = fp / (fp + tn) if fp + tn > 0 else None
    return tpr, fpr


@dataclass(frozen=True)
class RocCurve:
    """Threshold sweep, ordered by decreasing threshold from (0,0) to (1,1)."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("threshold,fpr,tpr\n")
            for tau, f, t in zip(self.thresholds, self.fpr, self.tpr):
                fh.write(f"{tau!r},{f!r},{t!r}\n")

    def summary(self) -> dict:
        return {"auc": self.auc, "n_points": int(len(self.thresholds))}

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), sort_keys=True, indent=1))


def collect_scores(heatmap, gt) -> tuple[np.ndarray, np.ndarray]:
    """Split one frame's covered heat-map scores into (forged, pristine)."""
    labels = np.asarray(getattr(gt, "labels", gt)).astype(bool)
    if labels.shape != heatmap.values.shape:
        raise ShapeError(
            f"mask {labels.shape} vs heat map {heatmap.values.shape}"
        )
    covered = heatmap.coverage
    pos = heatmap.values[covered & labels]
    neg = heatmap.values[covered & ~labels]
    return pos, neg


def _rates_above(sorted_scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Fraction of scores strictly above each threshold."""
    above = len(sorted_scores) - np.searchsorted(sorted_scores, thresholds, side="right")
    return above / len(sorted_scores)


def roc_from_scores(per_video, n_thresholds: int = 200) -> RocCurve:
    """ROC over pooled-score thresholds; per_video is [(pos, neg), ...].

    Rates at each threshold are averaged over the videos for which the rate
    is defined (a video with no forged pixels contributes no TPR).
    """
    if n_thresholds < 2:
        raise InvalidParameter(f"need at least 2 thresholds, got {n_thresholds}")
    per_video = [
        (np.asarray(p, dtype=np.float64).ravel(), np.asarray(n, dtype=np.float64).ravel())
        for p, n in per_video
    ]
    if not per_video:
        raise InvalidParameter("no videos supplied")
    all_scores = np.concatenate([np.concatenate([p, n]) for p, n in per_video])
    n_pos = sum(len(p) for p, _ in per_video)
    n_neg = sum(len(n) for _, n in per_video)
    if n_pos == 0 or n_neg == 0:
        raise DegenerateGroundTruth(
            f"need both classes among covered pixels, got {n_pos} forged / {n_neg} pristine"
        )

    inner = np.quantile(all_scores, np.linspace(0.0, 1.0, n_thresholds))
    thresholds = np.concatenate(([np.inf], inner[::-1], [-np.inf]))

    tpr_sum = np.zeros(len(thresholds))
    tpr_cnt = 0
    fpr_sum = np.zeros(len(thresholds))
    fpr_cnt = 0
    for pos, neg in per_video:
        if len(pos) > 0:
            tpr_sum += _rates_above(np.sort(pos), thresholds)
            tpr_cnt += 1
        if len(neg) > 0:
            fpr_sum += _rates_above(np.sort(neg), thresholds)
            fpr_cnt += 1
    tpr = tpr_sum / tpr_cnt
    fpr = fpr_sum / fpr_cnt
    area = auc_from_points(fpr, tpr)
    return RocCurve(thresholds, fpr, tpr, area)


def roc_curve(videos, n_thresholds: int = 200) -> RocCurve:
    """ROC from per-video lists of (HeatMap, GroundTruthMask) frame pairs."""
    per_video = []
    for frames in videos:
        pos_parts, neg_parts = [], []
        for heatmap, gt in frames:
            pos, neg = collect_scores(heatmap, gt)
            pos_parts.append(pos)
            neg_parts.append(neg)
        per_video.append((np.concatenate(pos_parts), np.concatenate(neg_parts)))
    return roc_from_scores(per_video, n_thresholds)


def auc_from_points(fpr, tpr) -> float:
    """Trapezoidal area under (fpr, tpr) points, clamped to [0, 1].

    Points may be given in either consistent order along the curve.
    """
    fpr = np.asarray(fpr, dtype=np.float64)
    tpr = np.asarray(tpr, dtype=np.float64)
    if fpr.shape != tpr.shape:
        raise ShapeError(f"fpr {fpr.shape} vs tpr {tpr.shape}")
    if fpr.size < 2:
        raise InvalidParameter("need at least 2 curve points")
    area = abs(float(_trapezoid(tpr, fpr)))
    return min(1.0, max(0.0, area))


def auc(curve: RocCurve) -> float:
    return auc_from_points(curve.fpr, curve.tpr)
