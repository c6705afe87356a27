"""Shared domain types, frame/snippet index arithmetic, and seeded RNG helpers."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_FRAMES_PER_SNIPPET = 16


class GlanceVadError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GlanceVadError):
    """Invalid or inconsistent configuration."""


class DataError(GlanceVadError):
    """Malformed files, out-of-range annotations, or broken dataset invariants."""


class ShapeError(DataError):
    """Array shape or length mismatch."""


class MetricError(DataError):
    """Metric is undefined for the given inputs (e.g. single-class labels)."""


class NumericError(GlanceVadError):
    """Non-finite value produced where a finite one is required."""


def make_rng(*keys: int) -> np.random.Generator:
    """Deterministic generator keyed by one or more non-negative integers.

    The same key tuple always yields the same draw sequence, which is what
    makes whole training runs byte-reproducible.
    """
    if not keys:
        raise ConfigError("make_rng requires at least one seed key")
    return np.random.default_rng([int(k) for k in keys])


def frame_to_snippet(frame: int, frames_per_snippet: int) -> int:
    """Map a frame index to the index of the snippet that contains it."""
    if frames_per_snippet < 1:
        raise ConfigError(f"frames_per_snippet must be >= 1, got {frames_per_snippet}")
    if frame < 0:
        raise DataError(f"frame index must be >= 0, got {frame}")
    return frame // frames_per_snippet


def validate_score_track(scores: np.ndarray, length: int | None = None) -> np.ndarray:
    """Check a per-snippet score vector: 1-D, finite, every entry in [0, 1]."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ShapeError(f"score track must be a non-empty 1-D vector, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ShapeError(f"score track has length {arr.shape[0]}, expected {length}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("score track contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError("score track entries must lie in [0, 1]")
    return arr


def snippet_to_frame_scores(
    scores: np.ndarray, frames_per_snippet: int, total_frames: int
) -> np.ndarray:
    """Expand snippet scores to frame scores by repetition, truncated to total_frames."""
    arr = validate_score_track(scores)
    t = arr.shape[0]
    if frames_per_snippet < 1:
        raise ConfigError(f"frames_per_snippet must be >= 1, got {frames_per_snippet}")
    if not (t - 1) * frames_per_snippet < total_frames <= t * frames_per_snippet:
        raise DataError(
            f"total_frames={total_frames} inconsistent with {t} snippets of "
            f"{frames_per_snippet} frames"
        )
    return np.repeat(arr, frames_per_snippet)[:total_frames]


@dataclass(frozen=True)
class FeatureSequence:
    """Per-video matrix of T snippet feature vectors plus frame bookkeeping."""

    video_id: str
    features: np.ndarray  # (T, D) float64
    frames_per_snippet: int = DEFAULT_FRAMES_PER_SNIPPET
    total_frames: int = 0

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ShapeError(f"features must be a (T, D) matrix with T,D >= 1, got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise NumericError(f"features for {self.video_id!r} contain non-finite values")
        if self.frames_per_snippet < 1:
            raise ConfigError(f"frames_per_snippet must be >= 1, got {self.frames_per_snippet}")
        t = feats.shape[0]
        if not (t - 1) * self.frames_per_snippet < self.total_frames <= t * self.frames_per_snippet:
            raise DataError(
                f"total_frames={self.total_frames} outside "
                f"(({t}-1)*{self.frames_per_snippet}, {t}*{self.frames_per_snippet}] "
                f"for video {self.video_id!r}"
            )
        object.__setattr__(self, "features", feats)

    @property
    def num_snippets(self) -> int:
        return int(self.features.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])


@dataclass(frozen=True)
class GlanceSet:
    """Single-frame annotations for one video, stored as sorted frame indices.

    Frames are kept as annotated; conversion to snippet indices happens when
    pseudo-labels are built, so the stored form is independent of
    frames_per_snippet.
    """

    video_id: str
    frames: tuple[int, ...]

    def __post_init__(self) -> None:
        for f in self.frames:
            if f < 0:
                raise DataError(f"glance frame must be >= 0, got {f} for {self.video_id!r}")
        if any(b <= a for a, b in zip(self.frames, self.frames[1:])):
            raise DataError(f"glance frames for {self.video_id!r} must be strictly increasing")

    @classmethod
    def from_frames(cls, video_id: str, frames: Iterable[int]) -> "GlanceSet":
        """Build from arbitrary frame order; frame-level duplicates collapse silently."""
        return cls(video_id, tuple(sorted({int(f) for f in frames})))

    def snippets(self, frames_per_snippet: int) -> tuple[int, ...]:
        """Glance positions as deduplicated sorted snippet indices."""
        snips = [frame_to_snippet(f, frames_per_snippet) for f in self.frames]
        unique = sorted(set(snips))
        if len(unique) < len(snips):
            warnings.warn(
                f"{len(snips) - len(unique)} duplicate glance(s) collapsed at snippet level "
                f"for video {self.video_id!r}",
                stacklevel=2,
            )
        return tuple(unique)

    def validate_against(self, total_frames: int) -> None:
        for f in self.frames:
            if f >= total_frames:
                raise DataError(
                    f"glance frame {f} out of range for video {self.video_id!r} "
                    f"with {total_frames} frames"
                )

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class GaussianKernel:
    """One temporal anomaly kernel: snippet position, severity in [0,1], context radius."""

    mu: int
    severity: float
    radius: float

    def __post_init__(self) -> None:
        if self.mu < 0:
            raise DataError(f"kernel position must be >= 0, got {self.mu}")
        if not 0.0 <= self.severity <= 1.0:
            raise DataError(f"kernel severity must be in [0, 1], got {self.severity}")
        if not self.radius > 0.0:
            raise DataError(f"kernel radius must be > 0, got {self.radius}")


def as_snippet_indices(values: Sequence[int], t: int) -> tuple[int, ...]:
    """Sorted unique snippet indices, validated against a track of length t."""
    out = sorted({int(v) for v in values})
    for v in out:
        if not 0 <= v < t:
            raise DataError(f"snippet index {v} out of range for track of length {t}")
    return tuple(out)
