"""Synthetic-benchmark studies: component ablations, hyperparameter sweeps,
glance-position perturbation, supervision-ratio trade-off, and kernel-family
comparison. Every study runs each arm on the same per-seed dataset so arms
differ only in the setting under test.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Sequence

from .core import ConfigError, GlanceSet
from .dataio import (
    DatasetManifest,
    SynthConfig,
    generate_synthetic,
    load_eval_videos,
    perturb_glances,
    sample_glances,
    split_supervision,
)
from .metrics import EvalReport, evaluate
from .trainer import TrainConfig, TrainVideo, load_train_videos, train

STUDIES = ("components", "alpha", "rg", "perturb", "ratio", "family")

DEFAULT_SEEDS = (0, 1, 2)


def default_benchmark_synth_config(seed: int = 0) -> SynthConfig:
    """The default desk-scale dataset: ~60 train videos, T around 256, D=16."""
    return SynthConfig(seed=seed)


def default_benchmark_train_config(seed: int = 0, **overrides: Any) -> TrainConfig:
    """Training knobs sized for minutes-scale CPU runs on the synthetic benchmark."""
    base = dict(
        seed=seed,
        resample_len=200,
        batch_pairs=4,
        lr=2e-3,
        weight_decay=5e-4,
        epochs=100,
        hidden_dims=(64, 32),
        temporal_width=3,
    )
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class BenchmarkData:
    """One generated dataset plus everything needed to train and evaluate on it."""

    manifest: DatasetManifest
    root: Path
    normals: list[TrainVideo]
    abnormals_base: list[TrainVideo]  # glance-free; arms attach their own glances
    eval_videos: list
    glances: dict[str, GlanceSet]


def prepare_benchmark(workdir: str | Path, synth_config: SynthConfig) -> BenchmarkData:
    root = Path(workdir)
    manifest_path = root / "manifest.json"
    if manifest_path.exists():
        manifest = DatasetManifest.load(manifest_path)
    else:
        manifest = generate_synthetic(synth_config, root)
    normals, abnormals = load_train_videos(manifest, root, glance_records=None)
    return BenchmarkData(
        manifest=manifest,
        root=root,
        normals=normals,
        abnormals_base=abnormals,
        eval_videos=load_eval_videos(manifest, root, split="test"),
        glances=sample_glances(manifest, seed=synth_config.seed),
    )


def attach_glances(
    data: BenchmarkData, sets: dict[str, GlanceSet] | None
) -> list[TrainVideo]:
    """Abnormal train videos with the given glance sets mapped to snippet indices."""
    out = []
    for video in data.abnormals_base:
        vid = video.features.video_id
        entry = data.manifest.by_id(vid)
        gs = (sets or {}).get(vid)
        if gs is None or not len(gs):
            out.append(replace(video, glance_snippets=()))
            continue
        gs.validate_against(entry.total_frames)
        out.append(replace(video, glance_snippets=gs.snippets(entry.frames_per_snippet)))
    return out


def run_arm(
    data: BenchmarkData,
    train_config: TrainConfig,
    sets: dict[str, GlanceSet] | None = None,
) -> EvalReport:
    glances = sets if sets is not None else data.glances
    abnormals = attach_glances(data, glances if train_config.glance_supervision else None)
    model, _ = train(data.normals, abnormals, train_config)
    return evaluate(model, data.eval_videos, config_hash=train_config.hash())


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------


def _component_arms(cfg: TrainConfig) -> dict[str, TrainConfig]:
    return {
        "baseline": replace(cfg, glance_supervision=False),
        "mining": replace(cfg, dynamic_threshold=False, gaussian_labels=False),
        "gaussian": replace(cfg, mining=False),
        "mining+dynamic": replace(cfg, gaussian_labels=False),
        "mining+gaussian": replace(cfg, dynamic_threshold=False),
        "full": cfg,
    }


def _study_rows(
    workdir: Path,
    seeds: Sequence[int],
    synth_for_seed: Callable[[int], SynthConfig],
    train_for_seed: Callable[[int], TrainConfig],
    arms_fn: Callable[[BenchmarkData, TrainConfig], dict[str, tuple[TrainConfig, dict | None]]],
) -> list[dict[str, Any]]:
    rows = []
    for seed in seeds:
        data = prepare_benchmark(workdir / f"seed{seed}", synth_for_seed(seed))
        base_cfg = train_for_seed(seed)
        for setting, (cfg, sets) in arms_fn(data, base_cfg).items():
            report = run_arm(data, cfg, sets)
            rows.append(
                {
                    "setting": setting,
                    "seed": seed,
                    "auc": report.auc,
                    "ap": report.ap,
                    "auc_abnormal": report.auc_abnormal,
                    "ap_abnormal": report.ap_abnormal,
                }
            )
    return rows


def run_study(
    study: str,
    out_dir: str | Path,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    synth_config: SynthConfig | None = None,
    train_config: TrainConfig | None = None,
) -> list[dict[str, Any]]:
    """Run one named study, write <study>.csv and <study>.json, return raw rows."""
    if study not in STUDIES:
        raise ConfigError(f"unknown study {study!r}; expected one of {STUDIES}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workdir = out_dir / "data"

    def synth_for_seed(seed: int) -> SynthConfig:
        base = synth_config or default_benchmark_synth_config()
        return replace(base, seed=seed)

    def train_for_seed(seed: int) -> TrainConfig:
        base = train_config or default_benchmark_train_config()
        return replace(base, seed=seed)

    def arms(data: BenchmarkData, cfg: TrainConfig):
        if study == "components":
            return {name: (c, None) for name, c in _component_arms(cfg).items()}
        if study == "alpha":
            return {
                f"{a:g}": (replace(cfg, alpha=a), None)
                for a in (0.5, 0.7, 0.8, 0.9, 0.95, 1.0)
            }
        if study == "rg":
            return {
                f"{r:g}": (replace(cfg, r_g=r), None) for r in (0.02, 0.05, 0.1, 0.2, 0.4)
            }
        if study == "family":
            return {
                fam: (replace(cfg, kernel_family=fam), None)
                for fam in ("normal", "cauchy", "laplace")
            }
        if study == "perturb":
            out = {}
            for shift_snippets in (0, 5, 25):
                sets = perturbed_glances(data, shift_snippets, cfg.seed)
                out[f"{shift_snippets}"] = (cfg, sets)
            return out
        # ratio: fraction of abnormal videos carrying glances, the rest weak-only
        out = {}
        for fraction in (0.25, 0.5, 0.75, 1.0):
            glance_ids, _ = split_supervision(data.manifest, fraction, cfg.seed)
            sets = {vid: gs for vid, gs in data.glances.items() if vid in glance_ids}
            out[f"{int(fraction * 100)}%"] = (cfg, sets)
        return out

    rows = _study_rows(workdir, seeds, synth_for_seed, train_for_seed, arms)
    for row in rows:
        row["study"] = study
    write_rows(out_dir, study, rows)
    return rows


def perturbed_glances(
    data: BenchmarkData, shift_snippets: int, seed: int
) -> dict[str, GlanceSet]:
    """Jitter every glance by up to shift_snippets snippets (in frames)."""
    out = {}
    for i, (vid, gs) in enumerate(sorted(data.glances.items())):
        entry = data.manifest.by_id(vid)
        max_shift = shift_snippets * entry.frames_per_snippet
        out[vid] = perturb_glances(gs, max_shift, entry.total_frames, seed * 100003 + i)
    return out


def aggregate(rows: list[dict[str, Any]]) -> list[dict[str, Any]]:
    """Mean and sd of each metric per setting, in first-seen setting order."""
    settings: dict[str, list[dict[str, Any]]] = {}
    for row in rows:
        settings.setdefault(row["setting"], []).append(row)
    out = []
    for setting, group in settings.items():
        agg: dict[str, Any] = {"setting": setting, "num_seeds": len(group)}
        for metric in ("auc", "ap", "auc_abnormal", "ap_abnormal"):
            values = [r[metric] for r in group]
            mean = sum(values) / len(values)
            var = sum((v - mean) ** 2 for v in values) / len(values)
            agg[f"{metric}_mean"] = mean
            agg[f"{metric}_sd"] = var**0.5
        out.append(agg)
    return out


def write_rows(out_dir: Path, study: str, rows: list[dict[str, Any]]) -> None:
    fields = ["study", "setting", "seed", "auc", "ap", "auc_abnormal", "ap_abnormal"]
    with open(out_dir / f"{study}.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})
    payload = {"study": study, "rows": rows, "aggregate": aggregate(rows)}
    with open(out_dir / f"{study}.json", "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
