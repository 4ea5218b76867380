"""End-to-end grounding model: alignment encoder, anchor-pair decoder,
and the shared prediction head, plus the loss assembly used in training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import RunConfig
from .data import Batch
from .decoder import AnchorPairDecoder, DecoderConfig, DecoderLayerOutput
from .encoder import AlignmentEncoder, EncoderConfig, EncoderOutput, alignment_loss, saliency_loss
from .objectives import (
    LayerPredictions,
    LossWeights,
    PredictionHead,
    layer_predictions,
    moment_losses,
    overall_loss,
    targets_to_tensor,
)


@dataclass
class ModelOutput:
    encoder: EncoderOutput
    layers: list[DecoderLayerOutput]
    preds: list[LayerPredictions]

    @property
    def final(self) -> LayerPredictions:
        return self.preds[-1]


class GroundingModel(nn.Module):
    def __init__(self, encoder_cfg: EncoderConfig, decoder_cfg: DecoderConfig):
        super().__init__()
        if encoder_cfg.dim != decoder_cfg.dim:
            raise ValueError(
                f"encoder dim {encoder_cfg.dim} and decoder dim {decoder_cfg.dim} must match"
            )
        self.encoder = AlignmentEncoder(encoder_cfg)
        self.decoder = AnchorPairDecoder(decoder_cfg)
        self.head = PredictionHead(decoder_cfg.dim)

    @classmethod
    def from_config(cls, cfg: RunConfig, d_v: int, d_t: int) -> "GroundingModel":
        encoder_cfg = EncoderConfig(
            d_v=d_v,
            d_t=d_t,
            dim=cfg.model.dim,
            heads=cfg.model.heads,
            num_cross_layers=cfg.model.encoder_cross_layers,
            num_self_layers=cfg.model.encoder_self_layers,
            ffn_dim=cfg.model.ffn_dim,
            dropout=cfg.model.dropout,
        )
        decoder_cfg = DecoderConfig(
            num_queries=cfg.model.num_queries,
            num_layers=cfg.model.decoder_layers,
            dim=cfg.model.dim,
            heads=cfg.model.heads,
            ffn_dim=cfg.model.ffn_dim,
            dropout=cfg.model.dropout,
            anchor_update=cfg.model.anchor_update,
        )
        return cls(encoder_cfg, decoder_cfg)

    def set_anchors(self, anchors: np.ndarray) -> None:
        self.decoder.set_anchors(anchors)

    def forward(self, batch: Batch) -> ModelOutput:
        enc = self.encoder(batch.video, batch.video_mask, batch.text, batch.text_mask)
        layers = self.decoder(enc.fused, batch.video_mask, self.head)
        return ModelOutput(encoder=enc, layers=layers, preds=layer_predictions(self.head, layers))

    def compute_losses(
        self,
        batch: Batch,
        weights: LossWeights,
        iou_loss_kind: str = "l2",
        iou_include_background: bool = False,
    ) -> tuple[torch.Tensor, dict[str, float]]:
        out = self.forward(batch)
        targets = [targets_to_tensor(m, batch.video.device, batch.video.dtype) for m in batch.targets]
        terms = moment_losses(
            out.preds,
            targets,
            weights,
            iou_loss_kind=iou_loss_kind,
            iou_include_background=iou_include_background,
        )
        align = alignment_loss(out.encoder.global_video, out.encoder.global_text)
        sal = saliency_loss(out.encoder.saliency_scores, batch.saliency_labels, batch.video_mask)
        return overall_loss(terms, align, sal, weights)
