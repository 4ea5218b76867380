"""Run configuration: nested dataclass sections, strict YAML loading,
dotted-path overrides, and environment seed override.

Unknown keys are rejected by name so typos fail fast instead of silently
training with defaults.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import SynthConfig

SEED_ENV_VAR = "RGTR_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    manifest: str | None = None  # JSONL path; when None the synth section is used
    val_manifest: str | None = None
    val_fraction: float = 0.2
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"data.val_fraction must lie in (0, 1), got {self.val_fraction}")


@dataclass
class ModelSection:
    dim: int = 256
    heads: int = 8
    encoder_cross_layers: int = 3
    encoder_self_layers: int = 3
    decoder_layers: int = 3
    ffn_dim: int = 1024
    dropout: float = 0.1
    num_queries: int = 20
    anchor_init: str = "kmeans"
    anchor_file: str | None = None
    anchor_update: str = "add"

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2:
            raise ConfigError(f"model.dim must be a positive even number, got {self.dim}")
        if self.num_queries < 1:
            raise ConfigError(f"model.num_queries must be >= 1, got {self.num_queries}")
        if self.anchor_init not in ("kmeans", "uniform_grid", "random"):
            raise ConfigError(f"model.anchor_init '{self.anchor_init}' is not a known strategy")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"model.dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class LossSection:
    span_l1: float = 10.0
    span_giou: float = 1.0
    classification: float = 1.0
    iou_score: float = 1.0
    alignment: float = 0.3
    saliency: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    iou_loss_type: str = "l2"
    iou_include_background: bool = False

    def __post_init__(self):
        if self.iou_loss_type not in ("l2", "l1", "huber"):
            raise ConfigError(f"loss.iou_loss_type '{self.iou_loss_type}' (want l2, l1, or huber)")
        if not 0.0 <= self.focal_alpha <= 1.0:
            raise ConfigError(f"loss.focal_alpha must lie in [0, 1], got {self.focal_alpha}")


@dataclass
class OptimSection:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 200
    grad_clip: float = 0.1
    seed: int = 0
    eval_every: int = 10
    schedule: str = "none"

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"optim.lr must be positive, got {self.lr}")
        if self.schedule not in ("none", "cosine"):
            raise ConfigError(f"optim.schedule '{self.schedule}' (want none or cosine)")
        if self.batch_size < 1:
            raise ConfigError(f"optim.batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"optim.epochs must be >= 1, got {self.epochs}")
        if self.eval_every < 1:
            raise ConfigError(f"optim.eval_every must be >= 1, got {self.eval_every}")


@dataclass
class EvalSection:
    nms_threshold: float = 0.8
    scoring: str = "product"

    def __post_init__(self):
        if not 0.0 <= self.nms_threshold <= 1.0:
            raise ConfigError(f"eval.nms_threshold must lie in [0, 1], got {self.nms_threshold}")
        if self.scoring not in ("product", "sum", "conf_only"):
            raise ConfigError(f"eval.scoring '{self.scoring}' (want product, sum, or conf_only)")


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    optim: OptimSection = field(default_factory=OptimSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output_dir: str = "runs/default"


def _build_section(cls, mapping: dict, prefix: str):
    """Instantiate a (possibly nested) dataclass, rejecting unknown keys."""
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"config section '{prefix or cls.__name__}' must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - set(known))
    if unknown:
        where = f"{prefix}." if prefix else ""
        raise ConfigError(f"unknown config key(s): {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for name, value in mapping.items():
        f = known[name]
        if dataclasses.is_dataclass(f.type) or (
            isinstance(f.default_factory, type) and dataclasses.is_dataclass(f.default_factory)
        ):
            sub_cls = f.default_factory if isinstance(f.default_factory, type) else f.type
            sub_prefix = f"{prefix}.{name}" if prefix else name
            kwargs[name] = _build_section(sub_cls, value, sub_prefix)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid values in config section '{prefix or 'root'}': {exc}") from exc


def config_from_dict(raw: dict) -> RunConfig:
    return _build_section(RunConfig, raw or {}, "")


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def apply_override(raw: dict, dotted: str) -> None:
    """Apply one `key.path=value` override in place; values parse as YAML."""
    if "=" not in dotted:
        raise ConfigError(f"override '{dotted}' must look like key.path=value")
    key, _, value = dotted.partition("=")
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override '{dotted}' has an empty key path")
    node = raw
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override path '{key}' crosses the non-section value at '{part}'")
        node = nxt
    parsed = yaml.safe_load(value)
    if isinstance(parsed, str):
        # YAML 1.1 reads exponent forms like 5e-4 as strings; accept them.
        try:
            parsed = float(parsed)
        except ValueError:
            pass
    node[parts[-1]] = parsed


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    """Load YAML config, apply --set overrides, then the seed env var."""
    raw: dict = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a mapping at top level")
        raw = loaded
    for dotted in overrides or []:
        apply_override(raw, dotted)
    cfg = config_from_dict(raw)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            cfg.optim.seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got '{env_seed}'") from exc
        cfg.data.synth = dataclasses.replace(cfg.data.synth, seed=cfg.optim.seed)
    return cfg
