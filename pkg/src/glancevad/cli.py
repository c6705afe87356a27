"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Set GLANCEVAD_LOG=debug|info|warning to control verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import ablate, dataio, metrics, trainer
from .core import ConfigError, DataError, GlanceVadError, NumericError
from .mining import MiningConfig, mine
from .scorer import ScorerModel, forward, load_checkpoint, save_checkpoint
from .splatting import init_kernels, render, update_kernels

log = logging.getLogger("glancevad")


def _configure_logging() -> None:
    level_name = os.environ.get("GLANCEVAD_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_json(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def _manifest_and_root(path: str) -> tuple[dataio.DatasetManifest, Path]:
    manifest_path = Path(path)
    return dataio.DatasetManifest.load(manifest_path), manifest_path.parent


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    config = dataio.SynthConfig.from_dict(_load_json(args.config))
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    out = Path(args.out)
    manifest = dataio.generate_synthetic(config, out)
    sets = dataio.sample_glances(manifest, seed=config.seed)
    records = dataio.glance_records_from_sets(sets)
    dataio.save_glances(out / "glances.json", records)

    train_videos = manifest.split("train")
    test_videos = manifest.split("test")
    abnormal_train = [v for v in train_videos if v.label == 1]
    glance_counts = [len(sets[v.video_id].frames) for v in abnormal_train if v.video_id in sets]
    mean_glances = sum(glance_counts) / len(glance_counts) if glance_counts else 0.0
    print(f"wrote {out / 'manifest.json'}")
    print(
        f"train: {len(train_videos)} videos "
        f"({len(abnormal_train)} abnormal, {len(train_videos) - len(abnormal_train)} normal)"
    )
    print(f"test: {len(test_videos)} videos")
    print(f"glances: {sum(glance_counts)} total, {mean_glances:.2f} per abnormal train video")
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    manifest, _root = _manifest_and_root(args.manifest)
    records = dataio.load_glances(args.glances, manifest)
    sets = dataio.glance_sets(records)
    scores_by_video: dict[str, list[float]] = {}
    if args.scores:
        with open(args.scores) as fh:
            scores_by_video = json.load(fh)

    out: dict[str, list[float]] = {}
    for video_id, gs in sorted(sets.items()):
        entry = manifest.by_id(video_id)
        track_len = entry.num_snippets
        snips = gs.snippets(entry.frames_per_snippet)
        track = init_kernels(snips, track_len, args.r_g, args.family)
        if video_id in scores_by_video:
            scores = np.asarray(scores_by_video[video_id], dtype=np.float64)
            mined = mine(scores, snips, MiningConfig(alpha=args.alpha))
            track = update_kernels(track, mined, snips)
        out[video_id] = [float(v) for v in render(track)]

    with open(args.out, "w") as fh:
        json.dump(out, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote pseudo-label tracks for {len(out)} videos to {args.out}")
    return 0


def _train_config_from_args(args: argparse.Namespace) -> trainer.TrainConfig:
    config = trainer.TrainConfig.from_dict(_load_json(args.config))
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.no_mining:
        config = replace(config, mining=False)
    if args.no_dynamic_threshold:
        config = replace(config, dynamic_threshold=False)
    if args.binary_labels:
        config = replace(config, gaussian_labels=False)
    if args.weak_only:
        config = replace(config, glance_supervision=False)
    return config


def cmd_train(args: argparse.Namespace) -> int:
    manifest, root = _manifest_and_root(args.manifest)
    config = _train_config_from_args(args)
    records = dataio.load_glances(args.glances, manifest) if args.glances else {}
    normals, abnormals = trainer.load_train_videos(manifest, root, records)
    model, history = trainer.train(normals, abnormals, config)
    save_checkpoint(args.out, model, extra={"train_config": config.to_dict()})
    log_path = args.log or f"{args.out}.log.jsonl"
    trainer.write_train_log(log_path, history)
    final = history[-1]
    print(f"wrote checkpoint {args.out} and log {log_path}")
    print(
        f"final epoch {final['epoch']}: l_total={final['l_total']:.4f} "
        f"(l_mil={final['l_mil']:.4f} l_abn={final['l_abn']:.4f} l_nor={final['l_nor']:.4f})"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    manifest, root = _manifest_and_root(args.manifest)
    model = load_checkpoint(args.checkpoint)
    eval_videos = dataio.load_eval_videos(manifest, root, split=args.split)
    report = metrics.evaluate(model, eval_videos, config_hash=model.config.hash())
    report.save(args.out)
    if args.scores_out:
        tracks = {
            v.features.video_id: [float(s) for s in forward(model, v.features)]
            for v in eval_videos
        }
        with open(args.scores_out, "w") as fh:
            json.dump(tracks, fh, sort_keys=True, indent=2)
            fh.write("\n")
    print(
        f"auc={report.auc:.4f} ap={report.ap:.4f} "
        f"auc_abnormal={report.auc_abnormal:.4f} ap_abnormal={report.ap_abnormal:.4f}"
    )
    print(f"wrote report {args.out}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else ablate.DEFAULT_SEEDS
    synth_config = None
    if args.synth_config:
        synth_config = dataio.SynthConfig.from_dict(_load_json(args.synth_config))
    train_config = None
    if args.train_config:
        train_config = trainer.TrainConfig.from_dict(_load_json(args.train_config))
    rows = ablate.run_study(
        args.study, args.out, seeds=seeds, synth_config=synth_config, train_config=train_config
    )
    for agg in ablate.aggregate(rows):
        print(
            f"{args.study}/{agg['setting']}: "
            f"auc={agg['auc_mean']:.4f}±{agg['auc_sd']:.4f} "
            f"ap={agg['ap_mean']:.4f}±{agg['ap_sd']:.4f} "
            f"auc_abnormal={agg['auc_abnormal_mean']:.4f} "
            f"ap_abnormal={agg['ap_abnormal_mean']:.4f}"
        )
    print(f"wrote {Path(args.out) / (args.study + '.csv')}")
    return 0


def cmd_annotate(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    manifest, _root = _manifest_and_root(args.manifest)
    app = create_app(
        manifest,
        glances_path=args.glances,
        videos_dir=args.videos,
        ui_dir=args.ui,
        annotator=args.annotator,
    )
    print(f"serving annotation UI on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glancevad",
        description="Glance-supervised video anomaly detection toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with glances")
    p.add_argument("--config", help="JSON synthetic-dataset config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="render pseudo-label tracks for inspection")
    p.add_argument("--manifest", required=True)
    p.add_argument("--glances", required=True)
    p.add_argument("--scores", help="JSON of per-video snippet scores; enables mining")
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--r-g", dest="r_g", type=float, default=0.1)
    p.add_argument("--family", default="normal", choices=["normal", "cauchy", "laplace"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train", help="train the snippet scorer")
    p.add_argument("--manifest", required=True)
    p.add_argument("--glances", help="glance annotation file")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="JSON-lines training log path")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--no-mining", action="store_true")
    p.add_argument("--no-dynamic-threshold", action="store_true")
    p.add_argument("--binary-labels", action="store_true")
    p.add_argument("--weak-only", action="store_true", help="video-level supervision only")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--scores-out", help="also dump per-video snippet scores as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run a synthetic-benchmark study")
    p.add_argument("--study", required=True, choices=list(ablate.STUDIES))
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seeds", help="comma-separated seeds (default 0,1,2)")
    p.add_argument("--synth-config", help="JSON synthetic-dataset config override")
    p.add_argument("--train-config", help="JSON training config override")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("annotate", help="serve the annotation API and UI")
    p.add_argument("--manifest", required=True)
    p.add_argument("--videos", help="directory with playable video files")
    p.add_argument("--glances", required=True, help="glance file to create or extend")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui", help="directory with built UI assets (default: bundled)")
    p.add_argument("--annotator", default="local")
    p.set_defaults(func=cmd_annotate)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except GlanceVadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
