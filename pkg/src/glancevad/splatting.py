"""Temporal kernel splatting: build per-snippet anomaly kernels from glances and
mined snippets, and render them into a soft pseudo-label track.

Positions are normalized by the track length (video duration = 1.0), so a
radius of 0.1 spans a tenth of the video regardless of snippet count.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import (
    DataError,
    GaussianKernel,
    NumericError,
    ShapeError,
    as_snippet_indices,
)


class KernelFamily(str, enum.Enum):
    NORMAL = "normal"
    CAUCHY = "cauchy"
    LAPLACE = "laplace"

    @classmethod
    def parse(cls, name: "KernelFamily | str") -> "KernelFamily":
        if isinstance(name, KernelFamily):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise DataError(
                f"unknown kernel family {name!r}; expected one of "
                f"{[f.value for f in cls]}"
            ) from None


def kernel_value(
    kernel: GaussianKernel, t: int, track_len: int, family: KernelFamily | str
) -> float:
    """Contribution of one kernel at snippet t, positions normalized by track length."""
    if not 0 <= t < track_len:
        raise DataError(f"snippet index {t} out of range for track of length {track_len}")
    fam = KernelFamily.parse(family)
    d = abs(t - kernel.mu) / track_len
    r = kernel.radius
    if fam is KernelFamily.NORMAL:
        value = kernel.severity * math.exp(-(d * d) / (2.0 * r * r))
    elif fam is KernelFamily.CAUCHY:
        value = kernel.severity * r * r / (d * d + r * r)
    else:
        value = kernel.severity * math.exp(-d / r)
    if not math.isfinite(value):
        raise NumericError(f"kernel value non-finite at t={t} (mu={kernel.mu}, r={r})")
    return value


@dataclass(frozen=True)
class KernelTrack:
    """One kernel per snippet; kernel i sits at position i.

    After initialization or update the severities are exactly 0 or 1; the
    soft shape of the pseudo-label comes from rendering, not the severities.
    """

    severities: np.ndarray  # (T,) float64, entries in {0, 1}
    radii: np.ndarray  # (T,) float64, entries > 0
    family: KernelFamily = KernelFamily.NORMAL

    def __post_init__(self) -> None:
        sev = np.asarray(self.severities, dtype=np.float64)
        rad = np.asarray(self.radii, dtype=np.float64)
        if sev.ndim != 1 or sev.size == 0:
            raise ShapeError(f"severities must be a non-empty vector, got shape {sev.shape}")
        if rad.shape != sev.shape:
            raise ShapeError(f"radii shape {rad.shape} != severities shape {sev.shape}")
        if not np.all((sev == 0.0) | (sev == 1.0)):
            raise DataError("kernel severities must be exactly 0 or 1")
        if not np.all(rad > 0.0):
            raise DataError("kernel radii must be > 0")
        object.__setattr__(self, "severities", sev)
        object.__setattr__(self, "radii", rad)
        object.__setattr__(self, "family", KernelFamily.parse(self.family))

    def __len__(self) -> int:
        return int(self.severities.shape[0])

    @property
    def kernels(self) -> tuple[GaussianKernel, ...]:
        return tuple(
            GaussianKernel(mu=i, severity=float(s), radius=float(r))
            for i, (s, r) in enumerate(zip(self.severities, self.radii))
        )


def init_kernels(
    glance_snippets: Sequence[int],
    track_len: int,
    radius: float,
    family: KernelFamily | str = KernelFamily.NORMAL,
) -> KernelTrack:
    """Severity 1 exactly at glance snippets, 0 elsewhere; one shared radius."""
    if track_len < 1:
        raise ShapeError(f"track length must be >= 1, got {track_len}")
    if not radius > 0.0:
        raise DataError(f"kernel radius must be > 0, got {radius}")
    snips = as_snippet_indices(glance_snippets, track_len)
    severities = np.zeros(track_len, dtype=np.float64)
    if snips:
        severities[list(snips)] = 1.0
    radii = np.full(track_len, float(radius), dtype=np.float64)
    return KernelTrack(severities, radii, KernelFamily.parse(family))


def update_kernels(
    track: KernelTrack,
    mined: Iterable[int],
    glance_snippets: Sequence[int],
    mined_radius: float | None = None,
) -> KernelTrack:
    """Reset severities to the indicator of glance ∪ mined snippets.

    Radii stay unchanged by default. When mined_radius is given, kernels that
    are mined but not glances take that radius instead: mined snippets are
    point evidence about themselves, while a glance marks an event whose
    influence extends into its context. Without this, a long mined run of
    wide kernels saturates far past the event once the contributions sum.
    """
    t = len(track)
    glances = set(as_snippet_indices(glance_snippets, t))
    mined_only = set(as_snippet_indices(list(mined), t)) - glances
    active = glances | mined_only
    severities = np.zeros(t, dtype=np.float64)
    if active:
        severities[sorted(active)] = 1.0
    radii = track.radii.copy()
    if mined_radius is not None:
        if not mined_radius > 0.0:
            raise DataError(f"mined kernel radius must be > 0, got {mined_radius}")
        if mined_only:
            radii[sorted(mined_only)] = float(mined_radius)
    return KernelTrack(severities, radii, track.family)


def render(track: KernelTrack) -> np.ndarray:
    """Sum every kernel's contribution at each snippet and clamp to [0, 1]."""
    t = len(track)
    idx = np.arange(t)
    d = np.abs(idx[None, :] - idx[:, None]) / t  # d[i, j] = |j - i| / T
    r = track.radii[:, None]
    fam = track.family
    if fam is KernelFamily.NORMAL:
        contrib = np.exp(-(d * d) / (2.0 * r * r))
    elif fam is KernelFamily.CAUCHY:
        contrib = (r * r) / (d * d + r * r)
    else:
        contrib = np.exp(-d / r)
    raw = track.severities @ contrib
    if not np.all(np.isfinite(raw)):
        raise NumericError("rendered pseudo-label track contains non-finite values")
    return np.minimum(raw, 1.0)
