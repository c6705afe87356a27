"""Kernel mining: expand pseudo anomaly snippets outward from each glance.

Each glance walks left and right while the current model score stays above
a fraction of the glance snippet's own score, stopping at the first failure
and never crossing a neighboring glance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ConfigError, as_snippet_indices, validate_score_track


@dataclass(frozen=True)
class MiningConfig:
    """alpha scales the per-glance threshold; dynamic=False uses alpha itself
    as an absolute threshold instead of alpha times the glance score."""

    alpha: float = 0.9
    dynamic: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"mining alpha must be in (0, 1], got {self.alpha}")


def _run_length(passing: np.ndarray) -> int:
    """Length of the leading all-True prefix (break at first failure)."""
    failures = np.flatnonzero(~passing)
    return int(failures[0]) if failures.size else int(passing.size)


def mine(
    scores: np.ndarray,
    glance_snippets: Sequence[int],
    config: MiningConfig,
) -> set[int]:
    """Pseudo anomaly snippets mined around each glance.

    The walk from glance g covers at most [prev_glance+1, next_glance-1]
    (video start/end for the outermost glances) and keeps snippet t while
    scores[t] > threshold, strictly; ties break toward exclusion.
    """
    arr = validate_score_track(scores)
    t = arr.shape[0]
    glances = as_snippet_indices(glance_snippets, t)
    if not glances:
        return set()

    mined: set[int] = set()
    for i, g in enumerate(glances):
        lo = glances[i - 1] + 1 if i > 0 else 0
        hi = glances[i + 1] - 1 if i + 1 < len(glances) else t - 1
        threshold = config.alpha * arr[g] if config.dynamic else config.alpha
        right = _run_length(arr[g : hi + 1] > threshold)
        mined.update(range(g, g + right))
        left = _run_length(arr[lo : g + 1][::-1] > threshold)
        mined.update(range(g - left + 1, g + 1))
    return mined
