"""Shared neural building blocks: attention, MLPs, sinusoidal encodings."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def sinusoidal_encoding(positions: torch.Tensor, num_dims: int, temperature: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of normalized scalar positions.

    Output layout is a block of ``num_dims/2`` sines followed by
    ``num_dims/2`` cosines; positions are scaled by 2*pi so the base
    frequency covers one full period over [0, 1].
    """
    if num_dims % 2 != 0:
        raise ValueError("sinusoidal encoding dimension must be even")
    half = num_dims // 2
    freqs = temperature ** (torch.arange(half, dtype=positions.dtype, device=positions.device) / half)
    angles = positions.unsqueeze(-1) * (2.0 * math.pi) / freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


def span_sinusoidal_embedding(spans: torch.Tensor, num_dims: int) -> torch.Tensor:
    """Encode (..., 2) span tensors: num_dims/2 dims for center, num_dims/2 for width."""
    half = num_dims // 2
    center = sinusoidal_encoding(spans[..., 0], half)
    width = sinusoidal_encoding(spans[..., 1], half)
    return torch.cat([center, width], dim=-1)


def clip_position_encoding(video_mask: torch.Tensor, num_dims: int, dtype: torch.dtype) -> torch.Tensor:
    """Per-sample clip-midpoint encodings for a padded batch.

    Positions are (t + 0.5) / L_i using each sample's own valid length, so
    they line up with normalized span coordinates; padded rows get the
    encoding of an arbitrary position and are masked downstream.
    """
    b, l_max = video_mask.shape
    lengths = video_mask.sum(dim=1).clamp(min=1).to(dtype)
    t = torch.arange(l_max, dtype=dtype, device=video_mask.device)
    positions = (t.unsqueeze(0) + 0.5) / lengths.unsqueeze(1)
    return sinusoidal_encoding(positions, num_dims)


class Mlp(nn.Module):
    """Plain feed-forward stack with ReLU between layers (DETR-style)."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, num_layers: int):
        super().__init__()
        dims = [in_dim] + [hidden_dim] * (num_layers - 1) + [out_dim]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x


class ProjectionBlock(nn.Module):
    """LayerNorm -> Dropout -> Linear (-> ReLU), the input-projection unit."""

    def __init__(self, in_dim: int, out_dim: int, dropout: float = 0.1, relu: bool = True):
        super().__init__()
        self.norm = nn.LayerNorm(in_dim)
        self.dropout = nn.Dropout(dropout)
        self.linear = nn.Linear(in_dim, out_dim)
        self.relu = relu

    def forward(self, x):
        x = self.linear(self.dropout(self.norm(x)))
        return F.relu(x) if self.relu else x


class Attention(nn.Module):
    """Multi-head attention whose Q/K width may differ from the V width.

    Queries and keys are projected within ``qk_dim`` and split into heads of
    ``qk_dim / heads``; values are projected within ``v_dim`` with heads of
    ``v_dim / heads``. Scores use 1/sqrt(per-head qk dim) scaling. Keys at
    masked positions receive -inf scores, so their values never contribute.
    """

    def __init__(self, qk_dim: int, v_dim: int, out_dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if qk_dim % heads or v_dim % heads:
            raise ValueError("qk_dim and v_dim must be divisible by the head count")
        self.heads = heads
        self.qk_head = qk_dim // heads
        self.v_head = v_dim // heads
        self.q_proj = nn.Linear(qk_dim, qk_dim)
        self.k_proj = nn.Linear(qk_dim, qk_dim)
        self.v_proj = nn.Linear(v_dim, v_dim)
        self.out_proj = nn.Linear(v_dim, out_dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, query, key, value, key_mask: torch.Tensor | None = None):
        b, tq, _ = query.shape
        tk = key.shape[1]
        q = self.q_proj(query).view(b, tq, self.heads, self.qk_head).transpose(1, 2)
        k = self.k_proj(key).view(b, tk, self.heads, self.qk_head).transpose(1, 2)
        v = self.v_proj(value).view(b, tk, self.heads, self.v_head).transpose(1, 2)

        scores = q @ k.transpose(-2, -1) / math.sqrt(self.qk_head)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = self.dropout(scores.softmax(dim=-1))
        out = (weights @ v).transpose(1, 2).reshape(b, tq, self.heads * self.v_head)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, dim: int, hidden_dim: int, dropout: float = 0.0):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(dim, hidden_dim),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden_dim, dim),
        )

    def forward(self, x):
        return self.net(x)


class SelfAttentionBlock(nn.Module):
    """Post-norm self-attention block; positional terms are added to Q and K only."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float = 0.0):
        super().__init__()
        self.attn = Attention(dim, dim, dim, heads, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, pos=None, key_mask=None):
        qk = x if pos is None else x + pos
        x = self.norm1(x + self.dropout(self.attn(qk, qk, x, key_mask=key_mask)))
        x = self.norm2(x + self.dropout(self.ffn(x)))
        return x


class CrossAttentionBlock(nn.Module):
    """Post-norm cross-attention block: queries from x, keys/values from memory."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, dropout: float = 0.0):
        super().__init__()
        self.attn = Attention(dim, dim, dim, heads, dropout)
        self.norm1 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, memory, memory_mask=None):
        x = self.norm1(x + self.dropout(self.attn(x, memory, memory, key_mask=memory_mask)))
        x = self.norm2(x + self.dropout(self.ffn(x)))
        return x


def inverse_sigmoid(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    x = x.clamp(eps, 1.0 - eps)
    return torch.log(x / (1.0 - x))
