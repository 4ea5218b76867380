"""Anchor-pair moment grounding: localize text-described moments in videos
as (center, width) spans via region-guided set prediction."""

from .spans import MomentSpan, ScoredSpan, giou_1d, iou_1d, nms
from .data import GroundingSample, SynthConfig, generate_synthetic_dataset
from .config import RunConfig, load_config
from .model import GroundingModel

__all__ = [
    "MomentSpan",
    "ScoredSpan",
    "iou_1d",
    "giou_1d",
    "nms",
    "GroundingSample",
    "SynthConfig",
    "generate_synthetic_dataset",
    "RunConfig",
    "load_config",
    "GroundingModel",
]

__version__ = "0.1.0"
