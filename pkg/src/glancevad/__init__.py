"""Glance-supervised video anomaly detection toolkit."""

from .core import (
    ConfigError,
    DataError,
    FeatureSequence,
    GaussianKernel,
    GlanceSet,
    GlanceVadError,
    MetricError,
    NumericError,
    ShapeError,
    frame_to_snippet,
    snippet_to_frame_scores,
)
from .mining import MiningConfig, mine
from .scorer import LossBreakdown, ScorerConfig, ScorerModel, abn_loss, forward, mil_loss, topk_pool
from .splatting import KernelFamily, KernelTrack, init_kernels, kernel_value, render, update_kernels
from .trainer import AdamState, TrainConfig, adam_step, resample, train

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ConfigError",
    "DataError",
    "FeatureSequence",
    "GaussianKernel",
    "GlanceSet",
    "GlanceVadError",
    "KernelFamily",
    "KernelTrack",
    "LossBreakdown",
    "MetricError",
    "MiningConfig",
    "NumericError",
    "ScorerConfig",
    "ScorerModel",
    "ShapeError",
    "TrainConfig",
    "abn_loss",
    "adam_step",
    "forward",
    "frame_to_snippet",
    "init_kernels",
    "kernel_value",
    "mil_loss",
    "mine",
    "render",
    "resample",
    "snippet_to_frame_scores",
    "topk_pool",
    "train",
    "update_kernels",
]
