"""Training loop: normal/abnormal pairing, fixed-length resampling,
per-iteration pseudo-label refresh (mine, update, render), and Adam.
"""

from __future__ import annotations

import hashlib
import json
import time
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import ConfigError, DataError, FeatureSequence, NumericError, make_rng
from .dataio import DatasetManifest, GlanceRecord, glance_sets, load_video
from .mining import MiningConfig, mine
from .scorer import (
    LossBreakdown,
    ScorerConfig,
    ScorerModel,
    _backward_from_cache,
    _forward_cache,
    _grad_abn_wrt_scores,
    _grad_mil_wrt_scores,
    topk_count,
)
from .splatting import KernelFamily, init_kernels, render, update_kernels

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# rng stream tags, so each consumer draws from its own keyed stream
_RNG_PAIRING = 23
_RNG_RESAMPLE = 29


@dataclass(frozen=True)
class TrainConfig:
    resample_len: int = 200
    batch_pairs: int = 8
    lr: float = 1e-4
    weight_decay: float = 5e-4
    epochs: int = 50
    alpha: float = 0.9
    r_g: float = 0.1
    mined_radius_scale: float = 0.2  # mined-kernel radius as a fraction of r_g
    kernel_family: str = "normal"
    seed: int = 0
    hidden_dims: tuple[int, int] = (512, 128)
    temporal_width: int = 1
    activation: str = "tanh"
    topk_divisor: int = 16
    # ablation switches
    glance_supervision: bool = True  # False: video-level MIL only
    mining: bool = True
    dynamic_threshold: bool = True
    gaussian_labels: bool = True  # False: hard 0/1 targets on glance ∪ mined

    def __post_init__(self) -> None:
        if self.resample_len < 1 or self.batch_pairs < 1 or self.epochs < 1:
            raise ConfigError("resample_len, batch_pairs and epochs must be >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be >= 0")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.r_g <= 0:
            raise ConfigError(f"r_g must be > 0, got {self.r_g}")
        if self.mined_radius_scale <= 0:
            raise ConfigError(f"mined_radius_scale must be > 0, got {self.mined_radius_scale}")
        try:
            KernelFamily.parse(self.kernel_family)
        except DataError as exc:
            raise ConfigError(str(exc)) from None
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    def to_dict(self) -> dict[str, Any]:
        return {
            "resample_len": self.resample_len,
            "batch_pairs": self.batch_pairs,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "epochs": self.epochs,
            "alpha": self.alpha,
            "r_g": self.r_g,
            "mined_radius_scale": self.mined_radius_scale,
            "kernel_family": self.kernel_family,
            "seed": self.seed,
            "hidden_dims": list(self.hidden_dims),
            "temporal_width": self.temporal_width,
            "activation": self.activation,
            "topk_divisor": self.topk_divisor,
            "glance_supervision": self.glance_supervision,
            "mining": self.mining,
            "dynamic_threshold": self.dynamic_threshold,
            "gaussian_labels": self.gaussian_labels,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        known = set(cls().to_dict())
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training-config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "hidden_dims" in kwargs:
            kwargs["hidden_dims"] = tuple(kwargs["hidden_dims"])
        return cls(**kwargs)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def scorer_config(self, feature_dim: int) -> ScorerConfig:
        return ScorerConfig(
            feature_dim=feature_dim,
            hidden_dims=self.hidden_dims,
            temporal_width=self.temporal_width,
            activation=self.activation,
            topk_divisor=self.topk_divisor,
        )


@dataclass(frozen=True)
class TrainVideo:
    features: FeatureSequence
    label: int
    glance_snippets: tuple[int, ...] = ()


def load_train_videos(
    manifest: DatasetManifest,
    root: str | Path,
    glance_records: dict[str, list[GlanceRecord]] | None = None,
) -> tuple[list[TrainVideo], list[TrainVideo]]:
    """Training views of the train split: (normal videos, abnormal videos).

    Abnormal videos missing from the glance file are kept with an empty
    glance tuple and train under video-level supervision only.
    """
    sets = glance_sets(glance_records or {})
    normals: list[TrainVideo] = []
    abnormals: list[TrainVideo] = []
    for entry in manifest.split("train"):
        feats = load_video(entry, root)
        if entry.label == 0:
            normals.append(TrainVideo(feats, 0))
        else:
            snips: tuple[int, ...] = ()
            gs = sets.get(entry.video_id)
            if gs is not None:
                gs.validate_against(entry.total_frames)
                snips = gs.snippets(entry.frames_per_snippet)
            abnormals.append(TrainVideo(feats, 1, snips))
    return normals, abnormals


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def resample(
    features: FeatureSequence,
    glance_snippets: Sequence[int],
    n: int,
    rng: np.random.Generator,
) -> tuple[FeatureSequence, tuple[int, ...]]:
    """Fixed-length view of a video: n snippets plus re-indexed glance positions.

    With T >= n, [0, T) is split into n contiguous bins and one snippet is
    drawn per bin; a bin holding a glance is forced to that glance snippet so
    supervision always survives. With T < n, snippets repeat in order. The
    random draws do not depend on the glances, so perturbing annotations
    leaves the sampled features unchanged.
    """
    t = features.num_snippets
    if n < 1:
        raise ConfigError(f"resample length must be >= 1, got {n}")
    for g in glance_snippets:
        if not 0 <= g < t:
            raise ConfigError(f"glance snippet {g} out of range for video of {t} snippets")

    if t >= n:
        starts = [(i * t) // n for i in range(n + 1)]
        lows = np.asarray(starts[:-1], dtype=np.int64)
        highs = np.asarray(starts[1:], dtype=np.int64)
        indices = rng.integers(lows, highs)
        new_glances = []
        for g in sorted(set(int(g) for g in glance_snippets)):
            b = bisect_right(starts, g) - 1
            indices[b] = g
            new_glances.append(b)
    else:
        indices = np.asarray([(j * t) // n for j in range(n)], dtype=np.int64)
        new_glances = sorted({-((-g * n) // t) for g in glance_snippets})

    resampled = FeatureSequence(
        video_id=features.video_id,
        features=features.features[indices],
        frames_per_snippet=features.frames_per_snippet,
        total_frames=n * features.frames_per_snippet,
    )
    return resampled, tuple(sorted(set(new_glances)))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float,
) -> None:
    """Classical Adam with bias correction; weight decay is added to the gradient."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1**state.t
    bc2 = 1.0 - ADAM_BETA2**state.t
    for key, p in params.items():
        g = grads[key] + weight_decay * p
        state.m[key] = ADAM_BETA1 * state.m[key] + (1.0 - ADAM_BETA1) * g
        state.v[key] = ADAM_BETA2 * state.v[key] + (1.0 - ADAM_BETA2) * g * g
        m_hat = state.m[key] / bc1
        v_hat = state.v[key] / bc2
        p -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if not np.all(np.isfinite(p)):
            raise NumericError(f"non-finite parameter after Adam step in {key!r}")


# ---------------------------------------------------------------------------
# pseudo-labels and the epoch loop
# ---------------------------------------------------------------------------


def pseudo_label_track(
    scores: np.ndarray, glance_snippets: Sequence[int], config: TrainConfig
) -> np.ndarray:
    """Per-snippet targets for an abnormal video from its current scores."""
    track_len = scores.shape[0]
    mined: set[int] = set()
    if config.mining:
        mined = mine(
            scores,
            glance_snippets,
            MiningConfig(alpha=config.alpha, dynamic=config.dynamic_threshold),
        )
    track = init_kernels(glance_snippets, track_len, config.r_g, config.kernel_family)
    track = update_kernels(
        track, mined, glance_snippets, mined_radius=config.mined_radius_scale * config.r_g
    )
    if config.gaussian_labels:
        return render(track)
    return track.severities.copy()


def _pair_order(count: int, length: int, rng: np.random.Generator) -> list[int]:
    """`count` indices into a list of `length`, reshuffling whenever exhausted."""
    order: list[int] = []
    while len(order) < count:
        order.extend(int(i) for i in rng.permutation(length))
    return order[:count]


def _video_loss_and_grads(
    model: ScorerModel, video: TrainVideo, feats: FeatureSequence,
    glance_snips: tuple[int, ...], config: TrainConfig,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    cache = _forward_cache(model, feats)
    scores = cache.scores
    k = topk_count(scores.size, config.topk_divisor)
    dscores = np.zeros_like(scores)
    l_mil = l_abn = l_nor = 0.0
    if video.label == 1:
        l_mil, ds = _grad_mil_wrt_scores(scores, 1, k)
        dscores += ds
        if config.glance_supervision and glance_snips:
            rendered = pseudo_label_track(scores, glance_snips, config)
            l_abn, ds = _grad_abn_wrt_scores(scores, rendered)
            dscores += ds
    else:
        l_nor, ds = _grad_mil_wrt_scores(scores, 0, k)
        dscores += ds
    grads = _backward_from_cache(model, cache, dscores)
    return LossBreakdown(l_mil=l_mil, l_abn=l_abn, l_nor=l_nor), grads


def train_epoch(
    model: ScorerModel,
    adam: AdamState,
    normals: list[TrainVideo],
    abnormals: list[TrainVideo],
    config: TrainConfig,
    epoch: int,
) -> LossBreakdown:
    """One pass of paired batches; returns per-pair average losses."""
    if not normals or not abnormals:
        raise ConfigError("training needs at least one normal and one abnormal video")
    n_pairs = max(len(normals), len(abnormals))
    rng_pairs = make_rng(config.seed, _RNG_PAIRING, epoch)
    order_n = _pair_order(n_pairs, len(normals), rng_pairs)
    order_a = _pair_order(n_pairs, len(abnormals), rng_pairs)

    breakdowns: list[LossBreakdown] = []
    for start in range(0, n_pairs, config.batch_pairs):
        batch = range(start, min(start + config.batch_pairs, n_pairs))
        grad_sum = model.zeros_like_params()
        for i in batch:
            vid_a = abnormals[order_a[i]]
            vid_n = normals[order_n[i]]
            rng_a = make_rng(config.seed, _RNG_RESAMPLE, epoch, i, 1)
            rng_n = make_rng(config.seed, _RNG_RESAMPLE, epoch, i, 0)
            feats_a, gsnips = resample(
                vid_a.features, vid_a.glance_snippets, config.resample_len, rng_a
            )
            feats_n, _ = resample(vid_n.features, (), config.resample_len, rng_n)
            bd_a, g_a = _video_loss_and_grads(model, vid_a, feats_a, gsnips, config)
            bd_n, g_n = _video_loss_and_grads(model, vid_n, feats_n, (), config)
            breakdowns.append(bd_a + bd_n)
            for key in grad_sum:
                grad_sum[key] += g_a[key] + g_n[key]
        scale = 1.0 / len(batch)
        grads = {k: v * scale for k, v in grad_sum.items()}
        adam_step(model.params, grads, adam, config.lr, config.weight_decay)
    return LossBreakdown.mean(breakdowns)


def train(
    normals: list[TrainVideo],
    abnormals: list[TrainVideo],
    config: TrainConfig,
    model: ScorerModel | None = None,
) -> tuple[ScorerModel, list[dict[str, Any]]]:
    """Full training run; returns the model and one log record per epoch."""
    if not normals or not abnormals:
        raise ConfigError("training needs at least one normal and one abnormal video")
    feature_dim = (normals + abnormals)[0].features.feature_dim
    if model is None:
        model = ScorerModel.initialize(config.scorer_config(feature_dim), seed=config.seed)
    adam = AdamState.init_like(model.params)
    history: list[dict[str, Any]] = []
    for epoch in range(config.epochs):
        tic = time.monotonic()
        losses = train_epoch(model, adam, normals, abnormals, config, epoch)
        record = {"epoch": epoch, **losses.to_dict(), "wall_ms": (time.monotonic() - tic) * 1e3}
        history.append(record)
    return model, history


def write_train_log(path: str | Path, history: list[dict[str, Any]]) -> None:
    with open(path, "w") as fh:
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
