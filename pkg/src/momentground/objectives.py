"""Set-prediction objectives: shared prediction head, bipartite matching,
and the combined training loss.

One prediction head serves every decoder layer, so deep supervision trains
the same parameters at each refinement stage. Matching between the K
predicted spans and the ground-truth moments is solved per sample with the
Hungarian algorithm on a cost mixing span distance, generalized IoU, and
classification confidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn
from scipy.optimize import linear_sum_assignment

from . import spans as sg
from .layers import Mlp


@dataclass
class LossWeights:
    span_l1: float = 10.0
    span_giou: float = 1.0
    classification: float = 1.0
    iou_score: float = 1.0
    alignment: float = 0.3
    saliency: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0


@dataclass
class MatchResult:
    """Per-sample assignment: pred_idx[i] is matched to target_idx[i]."""

    pred_idx: list[torch.Tensor] = field(default_factory=list)
    target_idx: list[torch.Tensor] = field(default_factory=list)

    @property
    def num_matched(self) -> int:
        return sum(int(p.numel()) for p in self.pred_idx)


class PredictionHead(nn.Module):
    """Shared head producing span offsets, confidence, and an IoU estimate.

    The final offset layer is zero-initialized, so refinement starts from
    the anchors themselves. Confidence and IoU outputs are probabilities.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.offset_mlp = Mlp(dim, dim, 2, num_layers=3)
        nn.init.zeros_(self.offset_mlp.layers[-1].weight)
        nn.init.zeros_(self.offset_mlp.layers[-1].bias)
        self.conf_proj = nn.Linear(dim, 1)
        nn.init.zeros_(self.conf_proj.bias)
        self.iou_proj = nn.Linear(dim, 1)
        nn.init.zeros_(self.iou_proj.bias)

    def offsets(self, content: torch.Tensor) -> torch.Tensor:
        return self.offset_mlp(content)

    def confidence(self, content: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conf_proj(content).squeeze(-1))

    def iou_estimate(self, content: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.iou_proj(content).squeeze(-1))


def pairwise_iou(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """IoU between every (center, width) row of ``pred`` and of ``target``.

    pred: (P, 2), target: (T, 2) -> (P, T). Degenerate rows clamp to the
    unit interval the same way the scalar geometry does.
    """
    ps = (pred[:, 0] - pred[:, 1] / 2).clamp(0.0, 1.0)[:, None]
    pe = (pred[:, 0] + pred[:, 1] / 2).clamp(0.0, 1.0)[:, None]
    ts = (target[:, 0] - target[:, 1] / 2).clamp(0.0, 1.0)[None, :]
    te = (target[:, 0] + target[:, 1] / 2).clamp(0.0, 1.0)[None, :]
    inter = (torch.min(pe, te) - torch.max(ps, ts)).clamp(min=0.0)
    union = (pe - ps) + (te - ts) - inter
    return torch.where(union > 0, inter / union, torch.zeros_like(inter))


def pairwise_giou(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Generalized IoU, penalizing hull area not covered by either span."""
    ps = (pred[:, 0] - pred[:, 1] / 2).clamp(0.0, 1.0)[:, None]
    pe = (pred[:, 0] + pred[:, 1] / 2).clamp(0.0, 1.0)[:, None]
    ts = (target[:, 0] - target[:, 1] / 2).clamp(0.0, 1.0)[None, :]
    te = (target[:, 0] + target[:, 1] / 2).clamp(0.0, 1.0)[None, :]
    inter = (torch.min(pe, te) - torch.max(ps, ts)).clamp(min=0.0)
    union = (pe - ps) + (te - ts) - inter
    iou = torch.where(union > 0, inter / union, torch.zeros_like(inter))
    hull = torch.max(pe, te) - torch.min(ps, ts)
    penalty = torch.where(hull > 0, (hull - union) / hull, torch.zeros_like(hull))
    return iou - penalty


def targets_to_tensor(moments: list[sg.MomentSpan], device, dtype=torch.float32) -> torch.Tensor:
    if not moments:
        return torch.zeros(0, 2, device=device, dtype=dtype)
    return torch.tensor([[m.center, m.width] for m in moments], device=device, dtype=dtype)


@torch.no_grad()
def hungarian_match(
    pred_spans: torch.Tensor,
    pred_conf: torch.Tensor,
    targets: list[torch.Tensor],
    weights: LossWeights | None = None,
) -> MatchResult:
    """Optimal one-to-one assignment of predictions to ground-truth moments.

    Cost per pair: span_l1 * (|dc| + |dw|) + span_giou * (1 - gIoU)
    + classification * (1 - confidence), minimized sample by sample.
    """
    weights = weights or LossWeights()
    result = MatchResult()
    for b, tgt in enumerate(targets):
        if tgt.numel() == 0:
            empty = torch.zeros(0, dtype=torch.long, device=pred_spans.device)
            result.pred_idx.append(empty)
            result.target_idx.append(empty.clone())
            continue
        l1 = torch.cdist(pred_spans[b], tgt, p=1)
        giou = pairwise_giou(pred_spans[b], tgt)
        cost = (
            weights.span_l1 * l1
            + weights.span_giou * (1.0 - giou)
            + weights.classification * (1.0 - pred_conf[b])[:, None]
        )
        rows, cols = linear_sum_assignment(cost.cpu().numpy())
        result.pred_idx.append(torch.as_tensor(rows, dtype=torch.long, device=pred_spans.device))
        result.target_idx.append(torch.as_tensor(cols, dtype=torch.long, device=pred_spans.device))
    return result


def span_regression_loss(
    pred_spans: torch.Tensor, targets: list[torch.Tensor], match: MatchResult
) -> tuple[torch.Tensor, torch.Tensor]:
    """L1 and gIoU losses over matched pairs, normalized by match count."""
    device = pred_spans.device
    num = max(match.num_matched, 1)
    l1 = pred_spans.new_zeros(())
    giou = pred_spans.new_zeros(())
    for b, tgt in enumerate(targets):
        pi, ti = match.pred_idx[b], match.target_idx[b]
        if pi.numel() == 0:
            continue
        p = pred_spans[b, pi]
        t = tgt[ti].to(device)
        l1 = l1 + (p - t).abs().sum()
        giou = giou + (1.0 - pairwise_giou(p, t).diagonal()).sum()
    return l1 / num, giou / num


def focal_classification_loss(
    pred_conf: torch.Tensor,
    match: MatchResult,
    alpha: float = 0.25,
    gamma: float = 2.0,
) -> torch.Tensor:
    """Binary focal loss over all K queries; matched queries are positives.

    Normalized by the number of matched queries (min 1) rather than by K,
    so sparse targets still produce usable gradients.
    """
    p = pred_conf.clamp(1e-6, 1.0 - 1e-6)
    labels = torch.zeros_like(p)
    for b, pi in enumerate(match.pred_idx):
        if pi.numel():
            labels[b, pi] = 1.0
    pos = -alpha * (1.0 - p) ** gamma * torch.log(p)
    neg = -(1.0 - alpha) * p**gamma * torch.log(1.0 - p)
    loss = torch.where(labels > 0.5, pos, neg).sum()
    return loss / max(match.num_matched, 1)


@torch.no_grad()
def iou_targets(
    pred_spans: torch.Tensor, targets: list[torch.Tensor], match: MatchResult
) -> torch.Tensor:
    """Actual IoU of each query's span with its matched moment (0 unmatched)."""
    out = torch.zeros(pred_spans.shape[:2], device=pred_spans.device, dtype=pred_spans.dtype)
    for b, tgt in enumerate(targets):
        pi, ti = match.pred_idx[b], match.target_idx[b]
        if pi.numel() == 0:
            continue
        out[b, pi] = pairwise_iou(pred_spans[b, pi], tgt.to(pred_spans.device)[ti]).diagonal()
    return out


def iou_score_loss(
    pred_iou: torch.Tensor,
    target_iou: torch.Tensor,
    match: MatchResult,
    kind: str = "l2",
    include_background: bool = False,
) -> torch.Tensor:
    """Regression loss for the IoU estimate.

    Default supervises matched queries only with squared error; "l1" and
    "huber" are selectable. ``include_background`` additionally drives
    unmatched queries' estimates toward zero.
    """
    if kind == "l2":
        per = (pred_iou - target_iou) ** 2
    elif kind == "l1":
        per = (pred_iou - target_iou).abs()
    elif kind == "huber":
        per = nn.functional.huber_loss(pred_iou, target_iou, reduction="none", delta=1.0)
    else:
        raise ValueError(f"unknown iou loss kind '{kind}'")
    if include_background:
        return per.mean()
    mask = torch.zeros_like(per, dtype=torch.bool)
    for b, pi in enumerate(match.pred_idx):
        if pi.numel():
            mask[b, pi] = True
    if not mask.any():
        return per.new_zeros(())
    return per[mask].sum() / max(match.num_matched, 1)


def moment_loss(
    pred_spans: torch.Tensor,
    pred_conf: torch.Tensor,
    targets: list[torch.Tensor],
    match: MatchResult,
    weights: LossWeights | None = None,
) -> torch.Tensor:
    """Weighted moment loss for one layer: L1 + gIoU over matched pairs
    plus focal classification over all queries."""
    weights = weights or LossWeights()
    l1, giou = span_regression_loss(pred_spans, targets, match)
    focal = focal_classification_loss(pred_conf, match, weights.focal_alpha, weights.focal_gamma)
    return weights.span_l1 * l1 + weights.span_giou * giou + weights.classification * focal


@dataclass
class LayerPredictions:
    spans: torch.Tensor  # (B, K, 2)
    conf: torch.Tensor  # (B, K)
    iou: torch.Tensor  # (B, K)


def layer_predictions(head: PredictionHead, outputs) -> list[LayerPredictions]:
    """Apply the shared head to every decoder layer's content."""
    preds = []
    for layer_out in outputs:
        preds.append(
            LayerPredictions(
                spans=layer_out.anchors_out,
                conf=head.confidence(layer_out.content),
                iou=head.iou_estimate(layer_out.content),
            )
        )
    return preds


def moment_losses(
    preds: list[LayerPredictions],
    targets: list[torch.Tensor],
    weights: LossWeights | None = None,
    iou_loss_kind: str = "l2",
    iou_include_background: bool = False,
) -> dict[str, torch.Tensor]:
    """Deep-supervised matching losses summed over all decoder layers."""
    weights = weights or LossWeights()
    device = preds[0].spans.device
    totals = {
        "span_l1": torch.zeros((), device=device),
        "span_giou": torch.zeros((), device=device),
        "classification": torch.zeros((), device=device),
        "iou_score": torch.zeros((), device=device),
    }
    for layer in preds:
        match = hungarian_match(layer.spans.detach(), layer.conf.detach(), targets, weights)
        l1, giou = span_regression_loss(layer.spans, targets, match)
        totals["span_l1"] = totals["span_l1"] + l1
        totals["span_giou"] = totals["span_giou"] + giou
        totals["classification"] = totals["classification"] + focal_classification_loss(
            layer.conf, match, weights.focal_alpha, weights.focal_gamma
        )
        tgt_iou = iou_targets(layer.spans.detach(), targets, match)
        totals["iou_score"] = totals["iou_score"] + iou_score_loss(
            layer.iou, tgt_iou, match, kind=iou_loss_kind, include_background=iou_include_background
        )
    return totals


def overall_loss(
    moment_terms: dict[str, torch.Tensor],
    alignment: torch.Tensor,
    saliency: torch.Tensor,
    weights: LossWeights | None = None,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum of every objective; raises if any component is not finite."""
    weights = weights or LossWeights()
    components = {
        "span_l1": weights.span_l1 * moment_terms["span_l1"],
        "span_giou": weights.span_giou * moment_terms["span_giou"],
        "classification": weights.classification * moment_terms["classification"],
        "iou_score": weights.iou_score * moment_terms["iou_score"],
        "alignment": weights.alignment * alignment,
        "saliency": weights.saliency * saliency,
    }
    for name, value in components.items():
        if not torch.isfinite(value):
            raise FloatingPointError(f"loss component '{name}' is not finite: {value.item()}")
    total = sum(components.values())
    return total, {k: float(v.detach()) for k, v in components.items()}
