"""Training loop, checkpointing, and whole-dataset inference.

Single-process, fully seeded: batch order comes from a per-epoch RNG
stream derived from (seed, epoch), so runs are reproducible and resuming
at epoch k sees the same batches a straight-through run would.
"""

from __future__ import annotations

import json
import logging
import os
import random
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, config_from_dict, config_to_dict
from .data import (
    Batch,
    GroundingSample,
    all_ground_truth_spans,
    collate,
    generate_synthetic_dataset,
    load_manifest,
    train_val_split,
)
from .decoder import init_anchors, load_anchor_file
from .evaluation import (
    EvalReport,
    QuerySpanRecord,
    SamplePrediction,
    build_report,
    joint_score,
    score_and_rank,
)
from .model import GroundingModel
from .objectives import LossWeights
from .spans import MomentSpan, iou_1d

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def loss_weights_from_config(cfg: RunConfig) -> LossWeights:
    return LossWeights(
        span_l1=cfg.loss.span_l1,
        span_giou=cfg.loss.span_giou,
        classification=cfg.loss.classification,
        iou_score=cfg.loss.iou_score,
        alignment=cfg.loss.alignment,
        saliency=cfg.loss.saliency,
        focal_alpha=cfg.loss.focal_alpha,
        focal_gamma=cfg.loss.focal_gamma,
    )


def load_datasets(cfg: RunConfig) -> tuple[list[GroundingSample], list[GroundingSample]]:
    """Resolve the config's data section into train/val sample lists."""
    if cfg.data.manifest:
        train = load_manifest(cfg.data.manifest)
        if cfg.data.val_manifest:
            return train, load_manifest(cfg.data.val_manifest)
        return train_val_split(train, cfg.data.val_fraction)
    samples = generate_synthetic_dataset(cfg.data.synth)
    return train_val_split(samples, cfg.data.val_fraction)


def resolve_anchors(cfg: RunConfig, train_samples: list[GroundingSample]) -> np.ndarray:
    if cfg.model.anchor_file:
        return load_anchor_file(cfg.model.anchor_file)
    spans = all_ground_truth_spans(train_samples)
    return init_anchors(spans, cfg.model.num_queries, cfg.model.anchor_init, seed=cfg.optim.seed)


def build_model(cfg: RunConfig, samples: list[GroundingSample]) -> GroundingModel:
    if not samples:
        raise ValueError("cannot size the model from an empty dataset")
    d_v = samples[0].video_features.shape[1]
    d_t = samples[0].text_features.shape[1]
    return GroundingModel.from_config(cfg, d_v, d_t)


def epoch_batches(
    num_samples: int, batch_size: int, seed: int, epoch: int
) -> list[np.ndarray]:
    order = np.random.default_rng([seed, epoch]).permutation(num_samples)
    return [order[i : i + batch_size] for i in range(0, num_samples, batch_size)]


@torch.no_grad()
def run_inference(
    model: GroundingModel,
    samples: list[GroundingSample],
    batch_size: int,
    scoring: str,
    nms_threshold: float,
) -> tuple[list[SamplePrediction], list[QuerySpanRecord], list[float], list[float]]:
    """Forward the whole dataset; collect ranked predictions plus the
    per-query diagnostic rows (pre-NMS, final decoder layer)."""
    was_training = model.training
    model.eval()
    predictions: list[SamplePrediction] = []
    records: list[QuerySpanRecord] = []
    scores: list[float] = []
    gt_ious: list[float] = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        out = model(collate(chunk))
        final = out.final
        for b, sample in enumerate(chunk):
            spans = [MomentSpan(float(c), float(w)) for c, w in final.spans[b].tolist()]
            conf = [float(x) for x in final.conf[b]]
            iou_est = [float(x) for x in final.iou[b]]
            predictions.append(
                score_and_rank(spans, conf, iou_est, scoring, nms_threshold, sample.id)
            )
            for q, span in enumerate(spans):
                s = joint_score(conf[q], iou_est[q], scoring)
                records.append(QuerySpanRecord(sample.id, q, span, s))
                scores.append(s)
                gt_ious.append(max((iou_1d(span, g) for g in sample.moments), default=0.0))
    if was_training:
        model.train()
    return predictions, records, scores, gt_ious


def evaluate_model(
    model: GroundingModel,
    samples: list[GroundingSample],
    batch_size: int,
    scoring: str,
    nms_threshold: float,
) -> tuple[EvalReport, list[QuerySpanRecord], list[float], list[float]]:
    predictions, records, scores, gt_ious = run_inference(
        model, samples, batch_size, scoring, nms_threshold
    )
    gts = [s.moments for s in samples]
    return build_report(predictions, gts, records, scores, gt_ious), records, scores, gt_ious


def save_checkpoint(
    path: str | Path,
    model: GroundingModel,
    optimizer: torch.optim.Optimizer,
    cfg: RunConfig,
    epoch: int,
    anchors: np.ndarray,
    best_map_avg: float,
) -> None:
    """Atomic save: write to a temp file in the target dir, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": config_to_dict(cfg),
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "epoch": epoch,
        "anchors": torch.as_tensor(np.asarray(anchors, dtype=np.float64)),
        "best_map_avg": best_map_avg,
        "torch_rng": torch.get_rng_state(),
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"checkpoint {path} has format version {version}, expected {CHECKPOINT_FORMAT_VERSION}")
    return payload


def model_for_eval(payload: dict, samples: list[GroundingSample]) -> tuple[GroundingModel, RunConfig]:
    """Rebuild a checkpointed model, sizing feature projections from data."""
    cfg = config_from_dict(payload["config"])
    model = build_model(cfg, samples)
    model.load_state_dict(payload["model"])
    return model, cfg


@dataclass
class TrainResult:
    final_report: EvalReport
    best_map_avg: float
    epoch_losses: list[float] = field(default_factory=list)
    last_checkpoint: Path | None = None
    best_checkpoint: Path | None = None
    log_path: Path | None = None


class JsonlLogger:
    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a")
        else:
            self._fh = None

    def write(self, record: dict) -> None:
        if self._fh:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()


def train(cfg: RunConfig, resume: str | Path | None = None) -> TrainResult:
    """Run the full seeded training loop and a final validation pass.

    Writes per-step component losses as JSON Lines, keeps the best-by-val
    average-mAP and last checkpoints, and aborts with the offending
    component named if any loss term stops being finite.
    """
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    start_epoch = 1
    payload = None
    if resume is not None:
        payload = load_checkpoint(resume)
        cfg_resumed = config_from_dict(payload["config"])
        cfg_resumed.optim.epochs = cfg.optim.epochs
        cfg_resumed.output_dir = cfg.output_dir
        cfg = cfg_resumed
        start_epoch = payload["epoch"] + 1

    seed_everything(cfg.optim.seed)
    train_samples, val_samples = load_datasets(cfg)
    if not train_samples or not val_samples:
        raise ValueError("train/val split produced an empty side; adjust val_fraction or data size")

    model = build_model(cfg, train_samples)
    anchors = resolve_anchors(cfg, train_samples)
    model.set_anchors(anchors)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay
    )
    if payload is not None:
        model.load_state_dict(payload["model"])
        optimizer.load_state_dict(payload["optimizer"])
        anchors = payload["anchors"].numpy()
        torch.set_rng_state(payload["torch_rng"])
        for group in optimizer.param_groups:  # scheduler replays decay from the base lr
            group["lr"] = cfg.optim.lr

    scheduler = None
    if cfg.optim.schedule == "cosine":
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=cfg.optim.epochs
        )
        with warnings.catch_warnings():
            # stepping before any optimizer.step() is intentional here
            warnings.simplefilter("ignore", UserWarning)
            for _ in range(start_epoch - 1):  # fast-forward past completed epochs
                scheduler.step()

    weights = loss_weights_from_config(cfg)
    log = JsonlLogger(out_dir / "train_log.jsonl")
    best_map_avg = payload["best_map_avg"] if payload is not None else float("-inf")
    epoch_losses: list[float] = []
    batches_per_epoch = -(-len(train_samples) // cfg.optim.batch_size)
    global_step = (start_epoch - 1) * batches_per_epoch
    last_path = out_dir / "last.pt"
    best_path = out_dir / "best.pt"

    model.train()
    final_report: EvalReport | None = None
    try:
        for epoch in range(start_epoch, cfg.optim.epochs + 1):
            totals = []
            for batch_idx in epoch_batches(
                len(train_samples), cfg.optim.batch_size, cfg.optim.seed, epoch
            ):
                batch: Batch = collate([train_samples[i] for i in batch_idx])
                try:
                    total, components = model.compute_losses(
                        batch,
                        weights,
                        iou_loss_kind=cfg.loss.iou_loss_type,
                        iou_include_background=cfg.loss.iou_include_background,
                    )
                except FloatingPointError as exc:
                    raise TrainingError(
                        f"aborted at epoch {epoch}, step {global_step}: {exc}"
                    ) from exc
                optimizer.zero_grad()
                total.backward()
                if cfg.optim.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.optim.grad_clip)
                optimizer.step()
                global_step += 1
                totals.append(float(total.detach()))
                log.write(
                    {"event": "step", "epoch": epoch, "step": global_step,
                     "total": totals[-1], **components}
                )
            epoch_mean = float(np.mean(totals)) if totals else 0.0
            epoch_losses.append(epoch_mean)
            log.write(
                {"event": "epoch", "epoch": epoch, "mean_total": epoch_mean,
                 "lr": optimizer.param_groups[0]["lr"]}
            )
            if scheduler is not None:
                scheduler.step()

            if epoch % cfg.optim.eval_every == 0 or epoch == cfg.optim.epochs:
                report, _, _, _ = evaluate_model(
                    model, val_samples, cfg.optim.batch_size,
                    cfg.eval.scoring, cfg.eval.nms_threshold,
                )
                final_report = report
                log.write(
                    {"event": "eval", "epoch": epoch, "map_avg": report.map_avg,
                     "r1": {f"{mu:g}": v for mu, v in report.r1.items()},
                     "miou": report.miou}
                )
                save_checkpoint(last_path, model, optimizer, cfg, epoch, anchors, best_map_avg)
                if report.map_avg > best_map_avg:
                    best_map_avg = report.map_avg
                    save_checkpoint(best_path, model, optimizer, cfg, epoch, anchors, best_map_avg)
    finally:
        log.close()

    assert final_report is not None  # epochs >= 1 guarantees at least the final eval
    final_report.save(out_dir / "report.json")
    return TrainResult(
        final_report=final_report,
        best_map_avg=best_map_avg,
        epoch_losses=epoch_losses,
        last_checkpoint=last_path,
        best_checkpoint=best_path,
        log_path=log.path,
    )
