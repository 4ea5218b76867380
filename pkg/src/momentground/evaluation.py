"""Inference-time scoring and evaluation metrics.

Covers joint IoU-aware scoring with NMS, Recall@1, detection mAP, mean
top-1 IoU, per-query diversity diagnostics, and the score-vs-IoU
correlation fit used to judge how well ranking scores track localization
quality.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spans import MomentSpan, ScoredSpan, iou_1d, nms

logger = logging.getLogger(__name__)

MAP_AVG_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
R1_THRESHOLDS = (0.3, 0.5, 0.7)
MAP_REPORT_THRESHOLDS = (0.5, 0.75)
SCORING_MODES = ("product", "sum", "conf_only")


@dataclass
class RankedSpan:
    """One retained prediction with every score that produced its rank."""

    span: MomentSpan
    query_index: int
    conf: float
    iou_pred: float
    score: float


@dataclass
class SamplePrediction:
    sample_id: str
    entries: list[RankedSpan] = field(default_factory=list)

    @property
    def top1(self) -> RankedSpan | None:
        return self.entries[0] if self.entries else None


def joint_score(conf: float, iou_pred: float, scoring: str) -> float:
    if scoring == "product":
        return conf * iou_pred
    if scoring == "sum":
        return conf + iou_pred
    if scoring == "conf_only":
        return conf
    raise ValueError(f"unknown scoring mode '{scoring}'")


def score_and_rank(
    spans: list[MomentSpan],
    conf: list[float],
    iou_pred: list[float],
    scoring: str = "product",
    nms_threshold: float = 0.8,
    sample_id: str = "",
) -> SamplePrediction:
    """Score the K predicted spans, sort descending, and suppress overlaps.

    The joint score is conf * iou_pred by default; "sum" and "conf_only"
    are the ablation variants. Ties break toward the lower query index.
    """
    if not (len(spans) == len(conf) == len(iou_pred)):
        raise ValueError("spans, conf, and iou_pred must have equal length")
    scored = [
        ScoredSpan(span=s, score=joint_score(c, i, scoring), query_index=q)
        for q, (s, c, i) in enumerate(zip(spans, conf, iou_pred))
    ]
    kept = nms(scored, nms_threshold)
    entries = [
        RankedSpan(
            span=s.span,
            query_index=s.query_index,
            conf=float(conf[s.query_index]),
            iou_pred=float(iou_pred[s.query_index]),
            score=s.score,
        )
        for s in kept
    ]
    return SamplePrediction(sample_id=sample_id, entries=entries)


def _top1_iou(pred: SamplePrediction, gts: list[MomentSpan]) -> float:
    if pred.top1 is None:
        return 0.0
    return max(iou_1d(pred.top1.span, g) for g in gts)


def recall_at_1(
    predictions: list[SamplePrediction], gts: list[list[MomentSpan]], threshold: float
) -> float:
    """Fraction of samples whose top-ranked span reaches IoU >= threshold
    with at least one ground-truth moment."""
    if len(predictions) != len(gts):
        raise ValueError("predictions and ground truths must align one to one")
    hits = 0
    for pred, sample_gts in zip(predictions, gts):
        if pred.top1 is None:
            logger.warning("sample %s has no predictions; counted as miss", pred.sample_id)
            continue
        if _top1_iou(pred, sample_gts) >= threshold:
            hits += 1
    return hits / len(predictions) if predictions else 0.0


def _ap_from_pr(precision: np.ndarray, recall: np.ndarray) -> float:
    """Area under the all-points interpolated precision-recall curve."""
    mprec = np.hstack([[0.0], precision, [0.0]])
    mrec = np.hstack([[0.0], recall, [1.0]])
    for i in range(len(mprec) - 2, -1, -1):
        mprec[i] = max(mprec[i], mprec[i + 1])
    idx = np.where(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[idx] - mrec[idx - 1]) * mprec[idx]))


def average_precision(
    ranked: list[MomentSpan], gts: list[MomentSpan], threshold: float
) -> float:
    """Detection AP for a single sample at one IoU threshold.

    Walks predictions in rank order; each is greedily matched to the
    still-unmatched GT with the highest IoU, a true positive when that IoU
    reaches the threshold.
    """
    if not gts:
        return 0.0
    if not ranked:
        return 0.0
    matched = [False] * len(gts)
    tp = np.zeros(len(ranked))
    fp = np.zeros(len(ranked))
    for r, span in enumerate(ranked):
        best_iou, best_g = 0.0, -1
        for g, gt in enumerate(gts):
            if matched[g]:
                continue
            cur = iou_1d(span, gt)
            if cur > best_iou:
                best_iou, best_g = cur, g
        if best_g >= 0 and best_iou >= threshold:
            matched[best_g] = True
            tp[r] = 1.0
        else:
            fp[r] = 1.0
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(fp)
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1e-12)
    recall = cum_tp / len(gts)
    return _ap_from_pr(precision, recall)


def mean_average_precision(
    predictions: list[SamplePrediction],
    gts: list[list[MomentSpan]],
    thresholds: tuple[float, ...] = MAP_REPORT_THRESHOLDS,
) -> tuple[dict[float, float], float]:
    """Per-threshold mAP (mean of per-sample APs) plus the 10-threshold average."""
    if len(predictions) != len(gts):
        raise ValueError("predictions and ground truths must align one to one")
    all_thresholds = sorted(set(thresholds) | set(MAP_AVG_THRESHOLDS))
    per_threshold: dict[float, float] = {}
    for mu in all_thresholds:
        aps = [
            average_precision([e.span for e in pred.entries], sample_gts, mu)
            for pred, sample_gts in zip(predictions, gts)
        ]
        per_threshold[mu] = float(np.mean(aps)) if aps else 0.0
    map_avg = float(np.mean([per_threshold[mu] for mu in MAP_AVG_THRESHOLDS]))
    return {mu: per_threshold[mu] for mu in thresholds}, map_avg


def mean_iou(predictions: list[SamplePrediction], gts: list[list[MomentSpan]]) -> float:
    """Mean over samples of the top-1 span's best IoU against the GTs."""
    if len(predictions) != len(gts):
        raise ValueError("predictions and ground truths must align one to one")
    if not predictions:
        return 0.0
    return float(np.mean([_top1_iou(p, g) for p, g in zip(predictions, gts)]))


@dataclass
class QuerySpanRecord:
    """One query's predicted span on one sample (pre-NMS, final layer)."""

    sample_id: str
    query_index: int
    span: MomentSpan
    score: float


@dataclass
class QueryStats:
    mean_center: float
    mean_width: float
    center_std: float
    width_std: float
    count: int


@dataclass
class DiversityReport:
    per_query: dict[int, QueryStats]
    redundancy: float

    def to_dict(self) -> dict:
        return {
            "per_query": {
                str(q): {
                    "mean_center": s.mean_center,
                    "mean_width": s.mean_width,
                    "center_std": s.center_std,
                    "width_std": s.width_std,
                    "count": s.count,
                }
                for q, s in sorted(self.per_query.items())
            },
            "redundancy": self.redundancy,
        }


def diversity_report(records: list[QuerySpanRecord]) -> DiversityReport:
    """Per-query span statistics and cross-query redundancy.

    Redundancy is the mean over samples of the average pairwise IoU
    between different queries' spans on that sample; samples with fewer
    than two query spans contribute no pairs. With no pairs anywhere the
    redundancy is 0 by convention.
    """
    by_query: dict[int, list[MomentSpan]] = {}
    by_sample: dict[str, list[MomentSpan]] = {}
    for rec in records:
        by_query.setdefault(rec.query_index, []).append(rec.span)
        by_sample.setdefault(rec.sample_id, []).append(rec.span)

    per_query = {}
    for q, spans_q in by_query.items():
        centers = np.array([s.center for s in spans_q])
        widths = np.array([s.width for s in spans_q])
        per_query[q] = QueryStats(
            mean_center=float(centers.mean()),
            mean_width=float(widths.mean()),
            center_std=float(centers.std()),
            width_std=float(widths.std()),
            count=len(spans_q),
        )

    sample_means = []
    for spans_s in by_sample.values():
        n = len(spans_s)
        if n < 2:
            continue
        total = 0.0
        pairs = 0
        for i in range(n):
            for j in range(i + 1, n):
                total += iou_1d(spans_s[i], spans_s[j])
                pairs += 1
        sample_means.append(total / pairs)
    redundancy = float(np.mean(sample_means)) if sample_means else 0.0
    return DiversityReport(per_query=per_query, redundancy=redundancy)


def score_iou_correlation(scores: list[float], gt_ious: list[float]) -> tuple[float, float]:
    """Ordinary least-squares fit gt_iou = slope * score + intercept."""
    scores_arr = np.asarray(scores, dtype=np.float64)
    ious_arr = np.asarray(gt_ious, dtype=np.float64)
    if scores_arr.shape != ious_arr.shape or scores_arr.size < 2:
        raise ValueError("need >= 2 aligned (score, gt_iou) points")
    if np.ptp(scores_arr) == 0.0:
        raise ValueError("scores are constant; correlation slope is undefined")
    slope, intercept = np.polyfit(scores_arr, ious_arr, 1)
    return float(slope), float(intercept)


@dataclass
class EvalReport:
    r1: dict[float, float]
    map_at: dict[float, float]
    map_avg: float
    miou: float
    diversity: DiversityReport
    correlation_slope: float
    correlation_intercept: float

    def to_dict(self) -> dict:
        return {
            "r1": {f"{mu:g}": v for mu, v in sorted(self.r1.items())},
            "map_at": {f"{mu:g}": v for mu, v in sorted(self.map_at.items())},
            "map_avg": self.map_avg,
            "miou": self.miou,
            "diversity": self.diversity.to_dict(),
            "correlation": {
                "slope": self.correlation_slope,
                "intercept": self.correlation_intercept,
            },
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def build_report(
    predictions: list[SamplePrediction],
    gts: list[list[MomentSpan]],
    records: list[QuerySpanRecord],
    scores: list[float],
    gt_ious: list[float],
) -> EvalReport:
    map_at, map_avg = mean_average_precision(predictions, gts)
    try:
        slope, intercept = score_iou_correlation(scores, gt_ious)
    except ValueError:
        logger.warning("score-IoU correlation undefined; reporting slope 0")
        slope, intercept = 0.0, float(np.mean(gt_ious)) if gt_ious else 0.0
    return EvalReport(
        r1={mu: recall_at_1(predictions, gts, mu) for mu in R1_THRESHOLDS},
        map_at=map_at,
        map_avg=map_avg,
        miou=mean_iou(predictions, gts),
        diversity=diversity_report(records),
        correlation_slope=slope,
        correlation_intercept=intercept,
    )


def write_scatter_csv(records: list[QuerySpanRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_index", "center", "width", "score", "sample_id"])
        for rec in records:
            writer.writerow([rec.query_index, rec.span.center, rec.span.width, rec.score, rec.sample_id])


def write_correlation_csv(scores: list[float], gt_ious: list[float], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["score", "gt_iou"])
        for s, g in zip(scores, gt_ious):
            writer.writerow([s, g])
