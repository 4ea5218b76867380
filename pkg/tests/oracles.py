"""Independent reference implementations used to cross-check the library.

Everything here is written directly from first principles (interval
arithmetic, exhaustive enumeration, closed-form algebra) without importing
the code under test, so agreement between the two routes is meaningful.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


# ---------------------------------------------------------------------------
# interval geometry


def span_to_interval_ref(center: float, width: float) -> tuple[float, float]:
    return max(0.0, center - width / 2.0), min(1.0, center + width / 2.0)


def iou_ref(a: tuple[float, float], b: tuple[float, float]) -> float:
    """IoU of two already-clamped intervals."""
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def giou_ref(a: tuple[float, float], b: tuple[float, float]) -> float:
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    iou = inter / union if union > 0 else 0.0
    hull = max(a[1], b[1]) - min(a[0], b[0])
    if hull <= 0:
        return iou
    return iou - (hull - union) / hull


def span_iou_ref(ca: float, wa: float, cb: float, wb: float) -> float:
    return iou_ref(span_to_interval_ref(ca, wa), span_to_interval_ref(cb, wb))


def span_giou_ref(ca: float, wa: float, cb: float, wb: float) -> float:
    return giou_ref(span_to_interval_ref(ca, wa), span_to_interval_ref(cb, wb))


# ---------------------------------------------------------------------------
# NMS


def nms_ref(
    candidates: list[tuple[float, float, float, int]], threshold: float
) -> list[tuple[float, float, float, int]]:
    """O(n^2) NMS over (center, width, score, query_index) tuples.

    Candidates are sorted by descending score (ties: lower query_index
    first); one is dropped iff its IoU with an already kept candidate
    strictly exceeds the threshold.
    """
    ordered = sorted(candidates, key=lambda c: (-c[2], c[3]))
    kept: list[tuple[float, float, float, int]] = []
    for cand in ordered:
        ok = True
        for k in kept:
            if span_iou_ref(cand[0], cand[1], k[0], k[1]) > threshold:
                ok = False
                break
        if ok:
            kept.append(cand)
    return kept


# ---------------------------------------------------------------------------
# assignment


def brute_force_assignment(cost: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Minimum-cost one-to-one assignment by enumerating permutations.

    cost: (n_rows, n_cols). Matches min(n_rows, n_cols) pairs. Returns the
    minimum total cost and one optimal pairing.
    """
    n_rows, n_cols = cost.shape
    best = math.inf
    best_pairs: list[tuple[int, int]] = []
    if n_rows <= n_cols:
        for perm in itertools.permutations(range(n_cols), n_rows):
            total = sum(cost[r, c] for r, c in enumerate(perm))
            if total < best:
                best = total
                best_pairs = list(enumerate(perm))
    else:
        for perm in itertools.permutations(range(n_rows), n_cols):
            total = sum(cost[r, c] for c, r in enumerate(perm))
            if total < best:
                best = total
                best_pairs = [(r, c) for c, r in enumerate(perm)]
    return float(best), best_pairs


# ---------------------------------------------------------------------------
# average precision


def ap_ref(
    ranked: list[tuple[float, float]], gts: list[tuple[float, float]], threshold: float
) -> float:
    """Reference detection AP for one sample at one IoU threshold.

    ranked: (center, width) in rank order; gts likewise. A prediction is a
    true positive when the greedy highest-IoU unmatched GT reaches the
    threshold. AP is computed point by point: for every recall step the
    interpolated precision is the max precision at any recall >= it.
    """
    if not gts or not ranked:
        return 0.0
    matched = [False] * len(gts)
    is_tp: list[bool] = []
    for c, w in ranked:
        ious = [
            0.0 if matched[g] else span_iou_ref(c, w, gc, gw)
            for g, (gc, gw) in enumerate(gts)
        ]
        best_g = max(range(len(gts)), key=lambda g: ious[g])
        if ious[best_g] >= threshold and ious[best_g] > 0.0:
            matched[best_g] = True
            is_tp.append(True)
        else:
            is_tp.append(False)
    precisions, recalls = [], []
    tp = 0
    for k, flag in enumerate(is_tp, start=1):
        tp += int(flag)
        precisions.append(tp / k)
        recalls.append(tp / len(gts))
    # all-points interpolation: integrate max-precision-to-the-right over
    # each recall increment
    ap = 0.0
    prev_recall = 0.0
    for k in range(len(recalls)):
        if recalls[k] == prev_recall:
            continue
        interp = max(precisions[j] for j in range(k, len(precisions)))
        ap += (recalls[k] - prev_recall) * interp
        prev_recall = recalls[k]
    return ap


# ---------------------------------------------------------------------------
# k-means


def partition_sse(points: np.ndarray, assignment: list[int], k: int) -> float:
    total = 0.0
    for cluster in range(k):
        members = points[[i for i, a in enumerate(assignment) if a == cluster]]
        if len(members) == 0:
            continue
        centroid = members.mean(axis=0)
        total += float(((members - centroid) ** 2).sum())
    return total


def brute_force_kmeans_sse(points: np.ndarray, k: int) -> float:
    """Global minimum within-cluster SSE over all assignments (small n only)."""
    n = len(points)
    best = math.inf
    for assignment in itertools.product(range(k), repeat=n):
        if len(set(assignment)) < k:
            continue
        best = min(best, partition_sse(points, list(assignment), k))
    return best


# ---------------------------------------------------------------------------
# regression / contrastive closed forms


def ols_ref(xs: list[float], ys: list[float]) -> tuple[float, float]:
    """Least squares via the normal equations."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    n = len(x)
    sx, sy = x.sum(), y.sum()
    sxx, sxy = (x * x).sum(), (x * y).sum()
    denom = n * sxx - sx * sx
    slope = (n * sxy - sx * sy) / denom
    intercept = (sy - slope * sx) / n
    return float(slope), float(intercept)


def alignment_loss_ref(gv: np.ndarray, gt: np.ndarray) -> float:
    """Double-loop form: -(1/B) sum_i log[exp(gv_i.gt_i) / sum_ij exp(gv_i.gt_j)]."""
    b = gv.shape[0]
    denom = 0.0
    for i in range(b):
        for j in range(b):
            denom += math.exp(float(gv[i] @ gt[j]))
    total = 0.0
    for i in range(b):
        total += math.log(math.exp(float(gv[i] @ gt[i])) / denom)
    return -total / b


# ---------------------------------------------------------------------------
# finite differences


def central_difference(fn, tensor, indices, h: float = 1e-6) -> list[float]:
    """Central finite-difference derivative of scalar fn at given flat indices.

    ``tensor`` is perturbed in place (double precision recommended) and
    restored; fn must re-evaluate the full computation each call.
    """
    grads = []
    flat = tensor.reshape(-1)
    for idx in indices:
        orig = float(flat[idx])
        flat[idx] = orig + h
        plus = float(fn())
        flat[idx] = orig - h
        minus = float(fn())
        flat[idx] = orig
        grads.append((plus - minus) / (2.0 * h))
    return grads


def max_relative_error(analytic: list[float], numeric: list[float], floor: float = 1e-6) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(abs(a), abs(n), floor)
        worst = max(worst, abs(a - n) / scale)
    return worst
