"""Interval geometry on normalized 1-D moment spans.

A moment span is a ``(center, width)`` pair in normalized video time:
``center`` in [0, 1], ``width`` in (0, 1]. Geometry (IoU, gIoU, NMS) is
computed on the derived interval ``[center - width/2, center + width/2]``
clamped to [0, 1]; the stored pair is never altered by clamping.

Everything in this module is a pure function over immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Floor applied to widths on construction; keeps IoU denominators nonzero.
WIDTH_FLOOR = 1e-3


@dataclass(frozen=True)
class MomentSpan:
    """Normalized (center, width) representation of a temporal segment."""

    center: float
    width: float

    def __post_init__(self):
        if not 0.0 <= self.center <= 1.0:
            raise ValueError(f"span center {self.center} outside [0, 1]")
        if self.width <= 0.0 or self.width > 1.0:
            raise ValueError(f"span width {self.width} outside (0, 1]")
        if self.width < WIDTH_FLOOR:
            object.__setattr__(self, "width", WIDTH_FLOOR)

    def interval(self) -> tuple[float, float]:
        return to_interval(self)


@dataclass(frozen=True)
class ScoredSpan:
    """A span with its final ranking score and the query slot that produced it."""

    span: MomentSpan
    score: float
    query_index: int = 0


def to_interval(span: MomentSpan) -> tuple[float, float]:
    """(center, width) -> clamped (start, end) with start <= end."""
    start = max(0.0, span.center - span.width / 2.0)
    end = min(1.0, span.center + span.width / 2.0)
    return start, end


def iou_1d(a: MomentSpan, b: MomentSpan) -> float:
    """Intersection over union of the clamped intervals; 0 for a zero-length union."""
    a0, a1 = to_interval(a)
    b0, b1 = to_interval(b)
    inter = max(0.0, min(a1, b1) - max(a0, b0))
    union = (a1 - a0) + (b1 - b0) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou_1d(a: MomentSpan, b: MomentSpan) -> float:
    """Generalized IoU: IoU minus the hull fraction not covered by the union.

    Defined for disjoint intervals (negative values); equals IoU when the
    hull coincides with the union.
    """
    a0, a1 = to_interval(a)
    b0, b1 = to_interval(b)
    inter = max(0.0, min(a1, b1) - max(a0, b0))
    union = (a1 - a0) + (b1 - b0) - inter
    hull = max(a1, b1) - min(a0, b0)
    if hull <= 0.0:
        return 1.0 if union <= 0.0 else inter / union
    iou = inter / union if union > 0.0 else 0.0
    return iou - (hull - union) / hull


def nms(candidates: list[ScoredSpan], threshold: float) -> list[ScoredSpan]:
    """Greedy non-maximum suppression over scored spans.

    Candidates are visited in descending score order (ties broken by lower
    ``query_index``); a candidate is dropped iff its IoU with an already-kept
    span exceeds ``threshold``. Output preserves the visiting order.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"nms threshold {threshold} outside (0, 1]")
    ordered = sorted(candidates, key=lambda s: (-s.score, s.query_index))
    kept: list[ScoredSpan] = []
    for cand in ordered:
        if all(iou_1d(cand.span, k.span) <= threshold for k in kept):
            kept.append(cand)
    return kept


def spans_to_array(spans: list[MomentSpan]) -> np.ndarray:
    """Stack spans into a float64 (n, 2) array of (center, width) rows."""
    return np.array([[s.center, s.width] for s in spans], dtype=np.float64)


def array_to_spans(arr: np.ndarray) -> list[MomentSpan]:
    return [MomentSpan(float(c), float(w)) for c, w in np.asarray(arr).reshape(-1, 2)]


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; falls back to uniform choice when all distances vanish."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    for i in range(1, k):
        d2 = np.min(
            ((points[:, None, :] - centroids[None, :i, :]) ** 2).sum(-1), axis=1
        )
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centroids[i] = points[idx]
    return centroids


def _lloyd(
    points: np.ndarray, centroids: np.ndarray, max_iters: int
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Lloyd iterations; returns (centroids, assignment, per-iteration SSE).

    Empty clusters are re-seeded with the point farthest from its current
    centroid before the mean update.
    """
    k = centroids.shape[0]
    assignment = np.full(points.shape[0], -1, dtype=np.int64)
    sse_history: list[float] = []
    for _ in range(max_iters):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(-1)
        new_assignment = d2.argmin(axis=1)
        taken = np.zeros(points.shape[0], dtype=bool)
        for c in range(k):
            if not np.any(new_assignment == c):
                dist_to_own = d2[np.arange(points.shape[0]), new_assignment].copy()
                dist_to_own[taken] = -np.inf
                far = int(dist_to_own.argmax())
                new_assignment[far] = c
                taken[far] = True
        sse_history.append(float(d2[np.arange(points.shape[0]), new_assignment].sum()))
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for c in range(k):
            centroids[c] = points[assignment == c].mean(axis=0)
    return centroids, assignment, sse_history


def kmeans_spans(
    spans: list[MomentSpan], k: int, seed: int = 0, max_iters: int = 100
) -> list[MomentSpan]:
    """Cluster spans as (center, width) points in the unit square.

    Lloyd's algorithm with k-means++ seeding driven by ``seed``; stops when
    assignments stabilize or after ``max_iters``. Output is sorted by
    (center, width) ascending so a given input and seed always produce the
    same list.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(spans) < k:
        raise ValueError(f"need at least {k} spans to form {k} clusters, got {len(spans)}")
    points = spans_to_array(spans)
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(points, k, rng)
    centroids, _, _ = _lloyd(points, centroids, max_iters)
    order = np.lexsort((centroids[:, 1], centroids[:, 0]))
    return array_to_spans(centroids[order])


def uniform_grid_anchors(n_center: int, n_width: int) -> list[MomentSpan]:
    """Cartesian grid of spans, row-major over (center, width) cell midpoints."""
    if n_center < 1 or n_width < 1:
        raise ValueError("grid sizes must be >= 1")
    out = []
    for i in range(n_center):
        for j in range(n_width):
            center = (i + 0.5) / n_center
            width = min((j + 0.5) / n_width, 1.0)
            out.append(MomentSpan(center, width))
    return out


def random_anchors(k: int, seed: int = 0) -> list[MomentSpan]:
    """K spans with center ~ U[0,1] and width ~ U[width_floor, 1]."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=k)
    widths = rng.uniform(WIDTH_FLOOR, 1.0, size=k)
    return [MomentSpan(float(c), float(w)) for c, w in zip(centers, widths)]
