"""Anchor-pair decoder.

Each of the K moment queries is an anchor pair: a static anchor that never
changes and keeps the query tied to its temporal region, and a dynamic
anchor that is refined layer by layer and becomes the predicted span. The
static anchor's positional embedding conditions decoder self-attention; the
dynamic anchor's embedding conditions cross-attention into the fused video
sequence. Both anchors start from the same clustering of training-set
ground-truth spans.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import spans as sg
from .layers import (
    Attention,
    FeedForward,
    Mlp,
    clip_position_encoding,
    inverse_sigmoid,
    span_sinusoidal_embedding,
)

ANCHOR_INIT_STRATEGIES = ("kmeans", "uniform_grid", "random")


@dataclass
class DecoderConfig:
    num_queries: int = 20
    num_layers: int = 3
    dim: int = 256
    heads: int = 8
    ffn_dim: int = 1024
    dropout: float = 0.1
    # "add": raw coordinate addition with clamping; "logit": sigmoid-space update.
    anchor_update: str = "add"

    def __post_init__(self):
        if self.num_queries < 1 or self.num_layers < 1:
            raise ValueError("decoder needs >= 1 query and >= 1 layer")
        if self.anchor_update not in ("add", "logit"):
            raise ValueError(f"unknown anchor_update '{self.anchor_update}'")


@dataclass
class DecoderLayerOutput:
    content: torch.Tensor  # (B, K, D)
    anchors_in: torch.Tensor  # (B, K, 2) dynamic anchors entering the layer
    anchors_out: torch.Tensor  # (B, K, 2) refined dynamic anchors (the layer's spans)


def init_anchors(
    train_spans: list[sg.MomentSpan], k: int, strategy: str, seed: int = 0
) -> np.ndarray:
    """Build the K initial anchor pairs from training-set span statistics."""
    if strategy == "kmeans":
        anchors = sg.kmeans_spans(train_spans, k, seed=seed)
    elif strategy == "uniform_grid":
        side = math.ceil(math.sqrt(k))
        anchors = sg.uniform_grid_anchors(side, side)[:k]
    elif strategy == "random":
        anchors = sg.random_anchors(k, seed=seed)
    else:
        raise ValueError(f"unknown anchor init strategy '{strategy}'")
    return sg.spans_to_array(anchors)


def save_anchor_file(anchors: np.ndarray, path: str | Path) -> None:
    """Anchor file format: JSON array of K [center, width] pairs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump([[float(c), float(w)] for c, w in anchors], fh, indent=2)


def load_anchor_file(path: str | Path) -> np.ndarray:
    with open(path) as fh:
        raw = json.load(fh)
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError):
        arr = np.zeros(0)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"anchor file {path} must hold an array of [center, width] pairs")
    return arr


def clamp_spans(anchors: torch.Tensor) -> torch.Tensor:
    """Clamp centers to [0, 1] and widths to [width_floor, 1]."""
    center = anchors[..., 0].clamp(0.0, 1.0)
    width = anchors[..., 1].clamp(sg.WIDTH_FLOOR, 1.0)
    return torch.stack([center, width], dim=-1)


def update_dynamic_anchors(anchors: torch.Tensor, delta: torch.Tensor, mode: str = "add") -> torch.Tensor:
    """Refine dynamic anchors by a predicted relative offset.

    Default is plain coordinate addition followed by clamping; the "logit"
    mode applies the offset in inverse-sigmoid space instead (the width
    floor still applies afterwards).
    """
    if mode == "add":
        return clamp_spans(anchors + delta)
    refined = torch.sigmoid(inverse_sigmoid(anchors) + delta)
    return clamp_spans(refined)


class AnchorEmbedding(nn.Module):
    """Map (center, width) anchors to D-dim positional embeddings.

    Sinusoidal encoding (D/2 dims per coordinate, temperature 10000) followed
    by a two-layer feed-forward network.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = Mlp(dim, dim, dim, num_layers=2)

    def forward(self, anchors: torch.Tensor) -> torch.Tensor:
        return self.mlp(span_sinusoidal_embedding(anchors, self.dim))


class AnchorDecoderLayer(nn.Module):
    """One decoder layer: anchor-conditioned self-attention, then
    anchor-conditioned cross-attention into the fused video sequence.

    Self-attention queries/keys add the static positional embedding to the
    content; values are content only. Cross-attention queries concatenate
    content with the dynamic positional embedding (2D channels) and keys
    concatenate clip features with their position encodings, while values
    stay D-dimensional.
    """

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        d = cfg.dim
        self.self_attn = Attention(d, d, d, cfg.heads, cfg.dropout)
        self.norm1 = nn.LayerNorm(d)
        self.cross_attn = Attention(2 * d, d, d, cfg.heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, cfg.ffn_dim, cfg.dropout)
        self.norm3 = nn.LayerNorm(d)
        self.dropout = nn.Dropout(cfg.dropout)

    def self_block(self, content: torch.Tensor, static_pos: torch.Tensor) -> torch.Tensor:
        qk = content + static_pos
        return self.norm1(content + self.dropout(self.self_attn(qk, qk, content)))

    def cross_block(
        self,
        content: torch.Tensor,
        dynamic_pos: torch.Tensor,
        memory: torch.Tensor,
        memory_pos: torch.Tensor,
        memory_mask: torch.Tensor,
    ) -> torch.Tensor:
        q = torch.cat([content, dynamic_pos], dim=-1)
        k = torch.cat([memory, memory_pos], dim=-1)
        x = self.norm2(content + self.dropout(self.cross_attn(q, k, memory, key_mask=memory_mask)))
        return self.norm3(x + self.dropout(self.ffn(x)))

    def forward(self, content, static_pos, dynamic_pos, memory, memory_pos, memory_mask):
        attended = self.self_block(content, static_pos)
        return self.cross_block(attended, dynamic_pos, memory, memory_pos, memory_mask)


class AnchorPairDecoder(nn.Module):
    """Stack of anchor-conditioned decoder layers with layer-wise refinement.

    Static anchors and their positional embeddings are registered as buffers
    at ``set_anchors`` time and never change afterwards; dynamic anchors are
    re-embedded each layer through the (trainable) anchor embedding. Refined
    anchor coordinates are detached before being carried into the next
    layer, so each layer's offsets are supervised independently.
    """

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        self.layers = nn.ModuleList(AnchorDecoderLayer(cfg) for _ in range(cfg.num_layers))
        self.anchor_embed = AnchorEmbedding(cfg.dim)
        self.register_buffer("static_anchors", torch.zeros(cfg.num_queries, 2))
        self.register_buffer("static_pos", torch.zeros(cfg.num_queries, cfg.dim))
        # Part of the state dict so loaded checkpoints stay ready to decode.
        self.register_buffer("anchors_ready", torch.zeros((), dtype=torch.bool))

    def set_anchors(self, anchors: np.ndarray | torch.Tensor) -> None:
        """Install the K initial anchors; freezes their positional embedding.

        The static positional embedding is computed once here with the
        anchor embedding's current weights and stored as a constant buffer.
        """
        anchors = torch.as_tensor(np.asarray(anchors), dtype=self.static_anchors.dtype)
        if anchors.shape != (self.cfg.num_queries, 2):
            raise ValueError(
                f"anchor array shape {tuple(anchors.shape)} does not match K={self.cfg.num_queries}"
            )
        with torch.no_grad():
            self.static_anchors.copy_(anchors)
            self.static_pos.copy_(self.anchor_embed(self.static_anchors))
            self.anchors_ready.fill_(True)

    def forward(self, memory: torch.Tensor, memory_mask: torch.Tensor, head) -> list[DecoderLayerOutput]:
        """Run all layers; ``head.offsets(content)`` supplies the refinements."""
        if not bool(self.anchors_ready):
            raise RuntimeError("decoder anchors not initialized; call set_anchors first")
        b = memory.shape[0]
        d = self.cfg.dim
        content = memory.new_zeros(b, self.cfg.num_queries, d)
        dynamic = self.static_anchors.to(memory.dtype).unsqueeze(0).expand(b, -1, -1)
        static_pos = self.static_pos.to(memory.dtype).unsqueeze(0)
        memory_pos = clip_position_encoding(memory_mask, d, memory.dtype)

        outputs: list[DecoderLayerOutput] = []
        for layer in self.layers:
            dynamic_pos = self.anchor_embed(dynamic)
            content = layer(content, static_pos, dynamic_pos, memory, memory_pos, memory_mask)
            delta = head.offsets(content)
            refined = update_dynamic_anchors(dynamic, delta, self.cfg.anchor_update)
            outputs.append(DecoderLayerOutput(content=content, anchors_in=dynamic, anchors_out=refined))
            dynamic = refined.detach()
        return outputs
