"""Frame-level evaluation: ROC AUC, average precision, and their restrictions
to frames of abnormal videos.

Ties get half credit in the AUC (rank-sum convention) and share one threshold
in the PR curve, matching the usual exact definitions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Protocol

import numpy as np

from .core import MetricError, ShapeError, snippet_to_frame_scores
from .scorer import ScorerModel, forward


def _check_inputs(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or y.ndim != 1 or s.shape != y.shape or s.size == 0:
        raise ShapeError(f"scores shape {s.shape} and labels shape {y.shape} must match, 1-D")
    if not np.all((y == 0) | (y == 1)):
        raise MetricError("labels must be binary 0/1")
    return s, y.astype(np.int64)


def _grouped_counts(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Positive/negative counts per distinct score value, descending score order."""
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    boundaries = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [s.size]))
    pos = np.add.reduceat(y, starts)
    totals = ends - starts
    return pos, totals - pos


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability that a random positive outranks a random negative; ties count half."""
    s, y = _check_inputs(scores, labels)
    num_pos = int(y.sum())
    num_neg = y.size - num_pos
    if num_pos == 0 or num_neg == 0:
        raise MetricError("ROC AUC undefined: both classes must be present")
    pos, neg = _grouped_counts(s, y)
    # groups are in descending score order; negatives strictly below a group
    # are those in all later groups
    neg_below = neg.sum() - np.cumsum(neg)
    wins = int(np.sum(pos * neg_below))
    ties = int(np.sum(pos * neg))
    return (wins + 0.5 * ties) / (num_pos * num_neg)


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Step-wise AP over descending-score thresholds; equal scores share a threshold."""
    s, y = _check_inputs(scores, labels)
    num_pos = int(y.sum())
    if num_pos == 0:
        raise MetricError("average precision undefined: no positive labels")
    pos, neg = _grouped_counts(s, y)
    tp = np.cumsum(pos)
    fp = np.cumsum(neg)
    ap = 0.0
    recall_prev = 0.0
    for k in range(pos.size):
        recall = tp[k] / num_pos
        precision = tp[k] / (tp[k] + fp[k])
        ap += (recall - recall_prev) * precision
        recall_prev = recall
    return float(ap)


@dataclass(frozen=True)
class EvalReport:
    auc: float
    ap: float
    auc_abnormal: float
    ap_abnormal: float
    num_frames: dict[str, int] = field(default_factory=dict)
    config_hash: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": 1,
            "auc": self.auc,
            "ap": self.ap,
            "auc_abnormal": self.auc_abnormal,
            "ap_abnormal": self.ap_abnormal,
            "num_frames": dict(self.num_frames),
            "config_hash": self.config_hash,
        }

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "EvalReport":
        with open(path) as fh:
            data = json.load(fh)
        return cls(
            auc=data["auc"],
            ap=data["ap"],
            auc_abnormal=data["auc_abnormal"],
            ap_abnormal=data["ap_abnormal"],
            num_frames={k: int(v) for k, v in data.get("num_frames", {}).items()},
            config_hash=data.get("config_hash", ""),
        )


class LabeledVideo(Protocol):
    """Anything carrying features plus frame-level ground truth for evaluation."""

    @property
    def features(self) -> Any: ...

    @property
    def frame_labels(self) -> np.ndarray: ...

    @property
    def label(self) -> int: ...


def score_video_frames(model: ScorerModel, features: Any) -> np.ndarray:
    """Snippet scores expanded to frame scores by repetition."""
    scores = forward(model, features)
    return snippet_to_frame_scores(scores, features.frames_per_snippet, features.total_frames)


def evaluate_frames(
    frame_scores: Iterable[np.ndarray],
    frame_labels: Iterable[np.ndarray],
    is_abnormal: Iterable[bool],
    config_hash: str = "",
) -> EvalReport:
    """Pool frames across videos (micro-average) and compute all four metrics."""
    all_scores: list[np.ndarray] = []
    all_labels: list[np.ndarray] = []
    abn_scores: list[np.ndarray] = []
    abn_labels: list[np.ndarray] = []
    for s, y, abn in zip(frame_scores, frame_labels, is_abnormal):
        s = np.asarray(s, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if s.shape != y.shape:
            raise ShapeError(f"frame scores {s.shape} and labels {y.shape} differ")
        all_scores.append(s)
        all_labels.append(y)
        if abn:
            abn_scores.append(s)
            abn_labels.append(y)
    if not all_scores:
        raise MetricError("empty test set")
    scores = np.concatenate(all_scores)
    labels = np.concatenate(all_labels)
    if not abn_scores:
        raise MetricError("no abnormal videos in the test set")
    a_scores = np.concatenate(abn_scores)
    a_labels = np.concatenate(abn_labels)
    return EvalReport(
        auc=roc_auc(scores, labels),
        ap=average_precision(scores, labels),
        auc_abnormal=roc_auc(a_scores, a_labels),
        ap_abnormal=average_precision(a_scores, a_labels),
        num_frames={
            "total": int(labels.size),
            "positive": int(labels.sum()),
            "abnormal_videos": int(a_labels.size),
            "abnormal_videos_positive": int(a_labels.sum()),
        },
        config_hash=config_hash,
    )


def evaluate(
    model: ScorerModel, videos: Iterable[LabeledVideo], config_hash: str = ""
) -> EvalReport:
    """Score every test video with the model and pool frame-level metrics."""
    items = list(videos)
    return evaluate_frames(
        (score_video_frames(model, v.features) for v in items),
        (v.frame_labels for v in items),
        (v.label == 1 for v in items),
        config_hash=config_hash,
    )
