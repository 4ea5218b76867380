"""Command-line harness.

Subcommands: synth-data, init-anchors, train, eval, sweep. Every command
takes --config <yaml> plus repeatable --set key.path=value overrides; the
RGTR_SEED environment variable overrides the configured seed. Exit codes:
0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, config_from_dict, config_to_dict, load_config
from .data import ManifestError, all_ground_truth_spans, load_manifest, save_manifest
from .decoder import ANCHOR_INIT_STRATEGIES, init_anchors, save_anchor_file
from .evaluation import write_correlation_csv, write_scatter_csv
from .figures import render_correlation, render_query_scatter, render_sweep
from .training import (
    evaluate_model,
    generate_synthetic_dataset,
    load_checkpoint,
    load_datasets,
    model_for_eval,
    train,
)

logger = logging.getLogger("momentground")

SWEEP_AXES = {
    "K": "model.num_queries",
    "init_strategy": "model.anchor_init",
    "scoring": "eval.scoring",
    "iou_loss_type": "loss.iou_loss_type",
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="YAML config path")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY.PATH=VALUE",
        help="override a config value (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="momentground",
        description="Train and evaluate an anchor-pair moment grounding model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic dataset manifest")
    _add_common(p)
    p.add_argument("--out", type=str, default=None, help="manifest path (JSONL)")
    p.add_argument("--binary", action="store_true", help="store features as binary sidecars")

    p = sub.add_parser("init-anchors", help="cluster training spans into anchors")
    _add_common(p)
    p.add_argument("--manifest", type=str, default=None, help="training manifest (JSONL)")
    p.add_argument("--k", type=int, default=None, help="number of anchors")
    p.add_argument("--strategy", type=str, default=None, choices=ANCHOR_INIT_STRATEGIES)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, default=None, help="anchor file path (JSON)")

    p = sub.add_parser("train", help="run the training loop")
    _add_common(p)
    p.add_argument("--resume", type=str, default=None, help="checkpoint to resume from")

    p = sub.add_parser("eval", help="evaluate a checkpoint and render diagnostics")
    _add_common(p)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--manifest", type=str, default=None, help="eval manifest (default: config val split)")
    p.add_argument("--scoring", type=str, default=None, choices=("product", "sum", "conf_only"))
    p.add_argument("--nms-threshold", type=float, default=None)
    p.add_argument("--out-dir", type=str, default=None)

    p = sub.add_parser("sweep", help="train/eval one run per value of one axis")
    _add_common(p)
    p.add_argument("--axis", type=str, required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", type=str, required=True, help="comma-separated values")
    p.add_argument("--out-dir", type=str, default=None)
    return parser


def cmd_synth_data(args) -> int:
    cfg = load_config(args.config, args.overrides)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "dataset.jsonl"
    samples = generate_synthetic_dataset(cfg.data.synth)
    save_manifest(samples, out, binary=args.binary)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_init_anchors(args) -> int:
    cfg = load_config(args.config, args.overrides)
    if args.manifest:
        samples = load_manifest(args.manifest)
    else:
        samples, _ = load_datasets(cfg)
    spans = all_ground_truth_spans(samples)
    k = args.k if args.k is not None else cfg.model.num_queries
    strategy = args.strategy or cfg.model.anchor_init
    seed = args.seed if args.seed is not None else cfg.optim.seed
    anchors = init_anchors(spans, k, strategy, seed=seed)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "anchors.json"
    save_anchor_file(anchors, out)
    print(f"wrote {len(anchors)} anchors ({strategy}) to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides)
    result = train(cfg, resume=args.resume)
    r1 = {f"{mu:g}": round(v, 4) for mu, v in result.final_report.r1.items()}
    print(f"finished: val R1 {r1}, mAP avg {result.final_report.map_avg:.4f}")
    print(f"checkpoints: {result.last_checkpoint} (last), {result.best_checkpoint} (best)")
    return 0


def _write_eval_artifacts(report, records, scores, gt_ious, out_dir: Path) -> None:
    report.save(out_dir / "report.json")
    write_scatter_csv(records, out_dir / "query_scatter.csv")
    write_correlation_csv(scores, gt_ious, out_dir / "score_iou.csv")
    render_query_scatter(records, out_dir / "query_scatter.png")
    render_correlation(
        scores, gt_ious, report.correlation_slope, report.correlation_intercept,
        out_dir / "score_iou.png",
    )


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.overrides)
    payload = load_checkpoint(args.checkpoint)
    if args.manifest:
        samples = load_manifest(args.manifest)
    else:
        ckpt_cfg = config_from_dict(payload["config"])
        ckpt_cfg.data = cfg.data if args.config else ckpt_cfg.data
        _, samples = load_datasets(ckpt_cfg)
    model, ckpt_cfg = model_for_eval(payload, samples)
    scoring = args.scoring or cfg.eval.scoring
    nms_threshold = args.nms_threshold if args.nms_threshold is not None else cfg.eval.nms_threshold
    report, records, scores, gt_ious = evaluate_model(
        model, samples, cfg.optim.batch_size, scoring, nms_threshold
    )
    out_dir = Path(args.out_dir) if args.out_dir else Path(cfg.output_dir) / "eval"
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_eval_artifacts(report, records, scores, gt_ious, out_dir)
    print(json.dumps(report.to_dict()["r1"]))
    print(f"report and diagnostics written to {out_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.overrides)
    base = config_to_dict(cfg)
    dotted = SWEEP_AXES[args.axis]
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one value")
    out_dir = Path(args.out_dir) if args.out_dir else Path(cfg.output_dir) / f"sweep_{args.axis}"
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    failed = 0
    for value in values:
        raw = copy.deepcopy(base)
        section, key = dotted.split(".")
        parsed = value.lower() if args.axis in ("iou_loss_type", "init_strategy", "scoring") else value
        raw[section][key] = int(parsed) if args.axis == "K" else parsed
        raw["output_dir"] = str(out_dir / f"run_{value}")
        try:
            run_cfg: RunConfig = config_from_dict(raw)
            result = train(run_cfg)
            report = result.final_report
            rows.append((value, report.r1[0.5], report.r1[0.7], report.map_avg))
            print(f"{args.axis}={value}: R1@0.5={report.r1[0.5]:.4f} "
                  f"R1@0.7={report.r1[0.7]:.4f} mAP_avg={report.map_avg:.4f}")
        except Exception as exc:  # keep sweeping; report the failure at the end
            logger.error("sweep run %s=%s failed: %s", args.axis, value, exc)
            rows.append((value, float("nan"), float("nan"), float("nan")))
            failed += 1

    csv_path = out_dir / "sweep.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "R1@0.5", "R1@0.7", "mAP_avg"])
        writer.writerows(rows)
    render_sweep(
        [r[0] for r in rows],
        {
            "R1@0.5": [r[1] for r in rows],
            "R1@0.7": [r[2] for r in rows],
            "mAP_avg": [r[3] for r in rows],
        },
        args.axis,
        out_dir / "sweep.png",
    )
    print(f"sweep table written to {csv_path}")
    return 2 if failed else 0


COMMANDS = {
    "synth-data": cmd_synth_data,
    "init-anchors": cmd_init_anchors,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ManifestError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
