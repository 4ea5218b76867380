"""Cross-modal alignment encoder.

Projects video clips and text tokens to a shared embedding space, aligns the
modalities with a batch-contrastive loss on pooled global features, fuses
text into the video stream with a cross-attention stack, and refines the
fused sequence with masked self-attention. Emits the fused clip embeddings
plus a per-clip saliency score.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .layers import (
    CrossAttentionBlock,
    ProjectionBlock,
    SelfAttentionBlock,
    clip_position_encoding,
)


@dataclass
class EncoderConfig:
    d_v: int = 32
    d_t: int = 32
    dim: int = 256
    heads: int = 8
    num_cross_layers: int = 3
    num_self_layers: int = 3
    ffn_dim: int = 1024
    dropout: float = 0.1

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError("embedding dim must be divisible by the head count")
        if self.num_cross_layers < 1 or self.num_self_layers < 1:
            raise ValueError("encoder layer counts must be >= 1")


@dataclass
class EncoderOutput:
    fused: torch.Tensor  # (B, L_max, D)
    saliency_scores: torch.Tensor  # (B, L_max); padded positions are garbage, mask them
    global_video: torch.Tensor  # (B, D), unit norm
    global_text: torch.Tensor  # (B, D), unit norm


def global_pool(features: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Masked mean over valid positions, L2-normalized to unit norm."""
    counts = mask.sum(dim=1)
    if (counts == 0).any():
        raise ValueError("global_pool: a mask row has no valid positions")
    summed = (features * mask.unsqueeze(-1).to(features.dtype)).sum(dim=1)
    pooled = summed / counts.unsqueeze(-1).to(features.dtype)
    return pooled / pooled.norm(dim=-1, keepdim=True)


def alignment_loss(global_video: torch.Tensor, global_text: torch.Tensor) -> torch.Tensor:
    """Batch-contrastive alignment of pooled video/text features.

    loss = -(1/B) sum_i log[ exp(gv_i . gt_i) / sum_{i,j} exp(gv_i . gt_j) ],
    with the denominator shared across i and computed by log-sum-exp. No
    temperature. Exactly zero for B = 1.
    """
    scores = global_video @ global_text.transpose(0, 1)
    return -scores.diagonal().mean() + torch.logsumexp(scores.reshape(-1), dim=0)


def saliency_margin_term(
    scores: torch.Tensor,
    labels: torch.Tensor,
    mask: torch.Tensor,
    margin: float = 0.2,
    max_pairs: int = 32,
) -> torch.Tensor:
    """Hinge term over (positive clip, negative clip) pairs, averaged per sample.

    Pairs are enumerated row-major over (positives x negatives); when there
    are more than ``max_pairs`` a fixed-seed draw keeps the loss a
    deterministic function of its inputs. Samples lacking either class
    contribute zero.
    """
    total = scores.new_zeros(())
    for b in range(scores.shape[0]):
        valid = mask[b]
        pos = torch.nonzero(valid & (labels[b] > 0.5), as_tuple=False).flatten()
        neg = torch.nonzero(valid & (labels[b] <= 0.5), as_tuple=False).flatten()
        if len(pos) == 0 or len(neg) == 0:
            continue
        n_all = len(pos) * len(neg)
        if n_all <= max_pairs:
            pair_idx = torch.arange(n_all)
        else:
            gen = torch.Generator().manual_seed(0)
            pair_idx = torch.randperm(n_all, generator=gen)[:max_pairs]
        pi = pos[pair_idx // len(neg)]
        ni = neg[pair_idx % len(neg)]
        hinge = torch.clamp(margin + scores[b, ni] - scores[b, pi], min=0.0)
        total = total + hinge.mean()
    return total / scores.shape[0]


def saliency_contrastive_term(
    scores: torch.Tensor, labels: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    """Cross-entropy of the clip softmax against the normalized label distribution.

    Like the margin term, a sample contributes only when both label classes
    are present among its valid clips.
    """
    total = scores.new_zeros(())
    for b in range(scores.shape[0]):
        valid = mask[b]
        pos = valid & (labels[b] > 0.5)
        neg = valid & (labels[b] <= 0.5)
        if not bool(pos.any()) or not bool(neg.any()):
            continue
        label_sum = labels[b][valid].sum()
        target = labels[b][valid] / label_sum
        log_probs = torch.log_softmax(scores[b][valid], dim=0)
        total = total - (target * log_probs).sum()
    return total / scores.shape[0]


def saliency_loss(
    scores: torch.Tensor,
    labels: torch.Tensor,
    mask: torch.Tensor,
    margin: float = 0.2,
    max_pairs: int = 32,
) -> torch.Tensor:
    """Margin-ranking plus rank-contrastive supervision of per-clip saliency."""
    return saliency_margin_term(scores, labels, mask, margin, max_pairs) + saliency_contrastive_term(
        scores, labels, mask
    )


class AlignmentEncoder(nn.Module):
    """Project, align, fuse, and refine the two modalities.

    The pipeline is: per-modality two-layer projection; global pooling of the
    projected streams (for the alignment loss); text-to-video cross-attention
    stack; masked self-attention stack over clips with sinusoidal clip
    positions added to queries and keys; a linear saliency head on the fused
    output. ``self.refine`` is an optional hook applied to the projected
    video stream before cross-attention (signature ``(video, video_mask,
    text, text_mask) -> video``); it defaults to None, i.e. a no-op.
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.dim
        self.video_proj = nn.Sequential(
            ProjectionBlock(cfg.d_v, d, cfg.dropout, relu=True),
            ProjectionBlock(d, d, cfg.dropout, relu=False),
        )
        self.text_proj = nn.Sequential(
            ProjectionBlock(cfg.d_t, d, cfg.dropout, relu=True),
            ProjectionBlock(d, d, cfg.dropout, relu=False),
        )
        self.refine = None
        self.cross_blocks = nn.ModuleList(
            CrossAttentionBlock(d, cfg.heads, cfg.ffn_dim, cfg.dropout)
            for _ in range(cfg.num_cross_layers)
        )
        self.self_blocks = nn.ModuleList(
            SelfAttentionBlock(d, cfg.heads, cfg.ffn_dim, cfg.dropout)
            for _ in range(cfg.num_self_layers)
        )
        self.saliency_head = nn.Linear(d, 1)

    def project(self, video: torch.Tensor, text: torch.Tensor):
        if video.shape[-1] != self.cfg.d_v or text.shape[-1] != self.cfg.d_t:
            raise ValueError(
                f"feature dims ({video.shape[-1]}, {text.shape[-1]}) do not match "
                f"encoder config ({self.cfg.d_v}, {self.cfg.d_t})"
            )
        return self.video_proj(video), self.text_proj(text)

    def fuse(self, video: torch.Tensor, video_mask: torch.Tensor, text: torch.Tensor, text_mask: torch.Tensor):
        if (~text_mask).all(dim=1).any():
            raise ValueError("a text mask row has no valid tokens")
        x = video
        for block in self.cross_blocks:
            x = block(x, text, memory_mask=text_mask)
        pos = clip_position_encoding(video_mask, self.cfg.dim, x.dtype)
        for block in self.self_blocks:
            x = block(x, pos=pos, key_mask=video_mask)
        return x

    def forward(self, video, video_mask, text, text_mask) -> EncoderOutput:
        proj_v, proj_t = self.project(video, text)
        g_v = global_pool(proj_v, video_mask)
        g_t = global_pool(proj_t, text_mask)
        if self.refine is not None:
            proj_v = self.refine(proj_v, video_mask, proj_t, text_mask)
        fused = self.fuse(proj_v, video_mask, proj_t, text_mask)
        saliency = self.saliency_head(fused).squeeze(-1)
        return EncoderOutput(
            fused=fused, saliency_scores=saliency, global_video=g_v, global_text=g_t
        )
