"""On-disk formats and dataset plumbing: binary feature files, the dataset
manifest, glance annotation files, synthetic dataset generation, glance
sampling/perturbation, and supervision splits.

The synthetic features are a desk-scale stand-in for precomputed video
features: abnormal intervals carry a mean shift, and every abnormal video
additionally carries a shared per-video context drift so that purely
video-level supervision can latch onto context instead of the anomaly.
"""

from __future__ import annotations

import contextlib
import json
import os
import struct
import tempfile
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .core import (
    ConfigError,
    DataError,
    DEFAULT_FRAMES_PER_SNIPPET,
    FeatureSequence,
    GlanceSet,
    make_rng,
)

SCHEMA_VERSION = 1
FEATURE_MAGIC = b"GVF1"
FEATURE_SUFFIX = ".gvf"


# ---------------------------------------------------------------------------
# ground-truth access audit
# ---------------------------------------------------------------------------

# Training must never see ground-truth intervals; tests wrap training in
# audit_gt_reads() and assert the counter stayed at zero.


class _GtAudit:
    def __init__(self) -> None:
        self.active = False
        self.reads = 0


_AUDIT = _GtAudit()


@contextlib.contextmanager
def audit_gt_reads() -> Iterator[_GtAudit]:
    _AUDIT.active = True
    _AUDIT.reads = 0
    try:
        yield _AUDIT
    finally:
        _AUDIT.active = False


# ---------------------------------------------------------------------------
# atomic file writes
# ---------------------------------------------------------------------------


def _atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _atomic_write_json(path: str | Path, obj: Any) -> None:
    _atomic_write_bytes(path, (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode())


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------


def store_features(path: str | Path, matrix: np.ndarray) -> None:
    """Binary layout: magic "GVF1", T and D as uint64 LE, then T*D float32 LE row-major."""
    arr = np.asarray(matrix)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"feature matrix must be (T, D) with T,D >= 1, got shape {arr.shape}")
    payload = FEATURE_MAGIC + struct.pack("<QQ", *arr.shape)
    payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    _atomic_write_bytes(path, payload)


def load_features(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != FEATURE_MAGIC:
        raise DataError(f"{path}: bad magic, not a feature file")
    if len(raw) < 20:
        raise DataError(f"{path}: truncated header")
    t, d = struct.unpack("<QQ", raw[4:20])
    if t < 1 or d < 1:
        raise DataError(f"{path}: invalid dimensions T={t}, D={d}")
    expected = 20 + t * d * 4
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", count=t * d, offset=20).reshape(t, d).astype(np.float64)


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


@dataclass
class VideoEntry:
    video_id: str
    feature_path: str
    label: int
    total_frames: int
    frames_per_snippet: int = DEFAULT_FRAMES_PER_SNIPPET
    split: str = "train"
    fps: float = 30.0
    gt_intervals: tuple[tuple[int, int], ...] | None = None  # frame ranges [s, e)

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1 for video {self.video_id!r}")
        if self.split not in ("train", "test"):
            raise DataError(f"split must be train or test, got {self.split!r}")
        if self.total_frames < 1:
            raise DataError(f"total_frames must be >= 1 for video {self.video_id!r}")
        if self.fps <= 0:
            raise DataError(f"fps must be > 0 for video {self.video_id!r}")
        if self.gt_intervals is not None:
            if self.label != 1 and self.gt_intervals:
                raise DataError(
                    f"ground-truth intervals present for normal video {self.video_id!r}"
                )
            prev_end = 0
            for s, e in self.gt_intervals:
                if not (0 <= s < e <= self.total_frames):
                    raise DataError(
                        f"interval [{s}, {e}) out of range for video {self.video_id!r}"
                    )
                if s < prev_end:
                    raise DataError(f"overlapping intervals for video {self.video_id!r}")
                prev_end = e

    @property
    def num_snippets(self) -> int:
        return -(-self.total_frames // self.frames_per_snippet)

    @property
    def ground_truth_intervals(self) -> tuple[tuple[int, int], ...]:
        """Audited accessor; training code paths must never call this."""
        if _AUDIT.active:
            _AUDIT.reads += 1
        if self.gt_intervals is None:
            return ()
        return self.gt_intervals

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "video_id": self.video_id,
            "feature_path": self.feature_path,
            "label": self.label,
            "total_frames": self.total_frames,
            "frames_per_snippet": self.frames_per_snippet,
            "split": self.split,
            "fps": self.fps,
        }
        if self.gt_intervals is not None:
            out["ground_truth_intervals"] = [list(iv) for iv in self.gt_intervals]
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "VideoEntry":
        gt = data.get("ground_truth_intervals")
        return cls(
            video_id=str(data["video_id"]),
            feature_path=str(data["feature_path"]),
            label=int(data["label"]),
            total_frames=int(data["total_frames"]),
            frames_per_snippet=int(data.get("frames_per_snippet", DEFAULT_FRAMES_PER_SNIPPET)),
            split=str(data.get("split", "train")),
            fps=float(data.get("fps", 30.0)),
            gt_intervals=tuple((int(s), int(e)) for s, e in gt) if gt is not None else None,
        )


@dataclass
class DatasetManifest:
    videos: list[VideoEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        ids = [v.video_id for v in self.videos]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate video ids in manifest")

    def by_id(self, video_id: str) -> VideoEntry:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise DataError(f"unknown video id {video_id!r}")

    def split(self, name: str) -> list[VideoEntry]:
        return [v for v in self.videos if v.split == name]

    def save(self, path: str | Path) -> None:
        _atomic_write_json(
            path,
            {"schema_version": SCHEMA_VERSION, "videos": [v.to_dict() for v in self.videos]},
        )

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        if "videos" not in data:
            raise DataError(f"manifest {path} has no video list")
        return cls(videos=[VideoEntry.from_dict(v) for v in data["videos"]])


def load_video(entry: VideoEntry, root: str | Path) -> FeatureSequence:
    feats = load_features(Path(root) / entry.feature_path)
    if feats.shape[0] != entry.num_snippets:
        raise DataError(
            f"feature file for {entry.video_id!r} has {feats.shape[0]} snippets, "
            f"manifest implies {entry.num_snippets}"
        )
    return FeatureSequence(
        video_id=entry.video_id,
        features=feats,
        frames_per_snippet=entry.frames_per_snippet,
        total_frames=entry.total_frames,
    )


@dataclass(frozen=True)
class EvalVideo:
    """Test-time view of a video: features plus expanded frame-level labels."""

    features: FeatureSequence
    frame_labels: np.ndarray
    label: int


def load_eval_videos(
    manifest: DatasetManifest, root: str | Path, split: str = "test"
) -> list[EvalVideo]:
    out = []
    for entry in manifest.split(split):
        labels = np.zeros(entry.total_frames, dtype=np.int64)
        for s, e in entry.ground_truth_intervals:
            labels[s:e] = 1
        out.append(EvalVideo(load_video(entry, root), labels, entry.label))
    return out


# ---------------------------------------------------------------------------
# glance files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GlanceRecord:
    frame: int
    wall_clock_annotated_at: str | None = None
    annotator: str = "unknown"

    def to_dict(self) -> dict[str, Any]:
        return {
            "frame": self.frame,
            "wall_clock_annotated_at": self.wall_clock_annotated_at,
            "annotator": self.annotator,
        }


def save_glances(path: str | Path, records: dict[str, list[GlanceRecord]]) -> None:
    """One JSON record per video: {video_id, glances: [...], schema_version}."""
    payload = [
        {
            "video_id": vid,
            "glances": [r.to_dict() for r in sorted(recs, key=lambda r: r.frame)],
            "schema_version": SCHEMA_VERSION,
        }
        for vid, recs in sorted(records.items())
    ]
    _atomic_write_json(path, payload)


def load_glances(
    path: str | Path, manifest: DatasetManifest | None = None
) -> dict[str, list[GlanceRecord]]:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read glance file {path}: {exc}") from exc
    if not isinstance(data, list):
        raise DataError(f"glance file {path} must be a list of per-video records")
    out: dict[str, list[GlanceRecord]] = {}
    for rec in data:
        vid = str(rec["video_id"])
        if vid in out:
            raise DataError(f"duplicate glance record for video {vid!r}")
        glances = []
        seen: set[int] = set()
        for g in rec.get("glances", []):
            frame = int(g["frame"])
            if frame < 0:
                raise DataError(f"negative glance frame {frame} for video {vid!r}")
            if frame in seen:
                continue
            seen.add(frame)
            glances.append(
                GlanceRecord(
                    frame=frame,
                    wall_clock_annotated_at=g.get("wall_clock_annotated_at"),
                    annotator=str(g.get("annotator", "unknown")),
                )
            )
        glances.sort(key=lambda r: r.frame)
        if manifest is not None:
            entry = manifest.by_id(vid)
            for g in glances:
                if g.frame >= entry.total_frames:
                    raise DataError(
                        f"glance frame {g.frame} out of range for video {vid!r} "
                        f"with {entry.total_frames} frames"
                    )
            if entry.label == 0 and glances:
                raise DataError(f"glances present for normal video {vid!r}")
        out[vid] = glances
    return out


def glance_sets(records: dict[str, list[GlanceRecord]]) -> dict[str, GlanceSet]:
    return {
        vid: GlanceSet.from_frames(vid, [r.frame for r in recs])
        for vid, recs in records.items()
        if recs
    }


# ---------------------------------------------------------------------------
# glance sampling and perturbation
# ---------------------------------------------------------------------------


def sample_glances(manifest: DatasetManifest, seed: int) -> dict[str, GlanceSet]:
    """One uniformly random frame strictly inside each ground-truth interval."""
    out: dict[str, GlanceSet] = {}
    for idx, entry in enumerate(manifest.videos):
        if entry.label != 1:
            continue
        intervals = entry.ground_truth_intervals
        if not intervals:
            continue
        rng = make_rng(seed, 11, idx)
        frames = []
        for s, e in intervals:
            if e <= s:
                raise DataError(f"empty interval [{s}, {e}) for video {entry.video_id!r}")
            frames.append(int(rng.integers(s, e)))
        out[entry.video_id] = GlanceSet.from_frames(entry.video_id, frames)
    return out


def perturb_glances(
    glances: GlanceSet, max_shift: int, total_frames: int, seed: int
) -> GlanceSet:
    """Shift each glance by a uniform integer in [-max_shift, +max_shift], clamped."""
    if max_shift < 0:
        raise ConfigError(f"max_shift must be >= 0, got {max_shift}")
    rng = make_rng(seed, 13)
    shifts = rng.integers(-max_shift, max_shift + 1, size=len(glances.frames))
    moved = np.clip(np.asarray(glances.frames) + shifts, 0, total_frames - 1)
    return GlanceSet.from_frames(glances.video_id, moved.tolist())


def glance_records_from_sets(
    sets: dict[str, GlanceSet], annotator: str = "synthetic"
) -> dict[str, list[GlanceRecord]]:
    return {
        vid: [GlanceRecord(frame=f, annotator=annotator) for f in gs.frames]
        for vid, gs in sets.items()
    }


# ---------------------------------------------------------------------------
# synthetic dataset generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    num_normal: int = 30
    num_abnormal: int = 30
    num_normal_test: int = 10
    num_abnormal_test: int = 10
    snippets_range: tuple[int, int] = (224, 288)  # inclusive bounds on T
    feature_dim: int = 16
    intervals_range: tuple[int, int] = (1, 2)  # anomaly events per abnormal video
    interval_len_range: tuple[int, int] = (48, 88)  # event length in snippets
    anomaly_shift: float = 2.5  # mean-shift magnitude on anomalous snippets
    context_drift: float = 2.0  # shared shift on all snippets of abnormal videos
    num_anomaly_modes: int = 3  # distinct anomaly signatures events draw from
    frames_per_snippet: int = DEFAULT_FRAMES_PER_SNIPPET
    fps: float = 30.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_normal < 0 or self.num_abnormal < 0:
            raise ConfigError("video counts must be >= 0")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        for name in ("snippets_range", "intervals_range", "interval_len_range"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ConfigError(f"{name} must satisfy 1 <= lo <= hi, got ({lo}, {hi})")
        if self.anomaly_shift < 0 or self.context_drift < 0:
            raise ConfigError("shift magnitudes must be >= 0")
        if not 1 <= self.num_anomaly_modes <= self.feature_dim - 1:
            raise ConfigError(
                f"num_anomaly_modes must be in [1, feature_dim-1], got {self.num_anomaly_modes}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "num_normal": self.num_normal,
            "num_abnormal": self.num_abnormal,
            "num_normal_test": self.num_normal_test,
            "num_abnormal_test": self.num_abnormal_test,
            "snippets_range": list(self.snippets_range),
            "feature_dim": self.feature_dim,
            "intervals_range": list(self.intervals_range),
            "interval_len_range": list(self.interval_len_range),
            "anomaly_shift": self.anomaly_shift,
            "context_drift": self.context_drift,
            "num_anomaly_modes": self.num_anomaly_modes,
            "frames_per_snippet": self.frames_per_snippet,
            "fps": self.fps,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SynthConfig":
        known = {
            "num_normal",
            "num_abnormal",
            "num_normal_test",
            "num_abnormal_test",
            "snippets_range",
            "feature_dim",
            "intervals_range",
            "interval_len_range",
            "anomaly_shift",
            "context_drift",
            "num_anomaly_modes",
            "frames_per_snippet",
            "fps",
            "seed",
        }
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synthetic-config keys: {sorted(unknown)}")
        kwargs = dict(data)
        for key in ("snippets_range", "intervals_range", "interval_len_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


def _unit_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    while norm < 1e-12:
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
    return v / norm


def _signal_directions(
    rng: np.random.Generator, dim: int, num_modes: int
) -> tuple[np.ndarray, np.ndarray]:
    """Dataset-wide context direction plus a bank of anomaly mode directions.

    All directions are orthonormal. The context signature sits on every
    snippet of an abnormal video, so video-level supervision can satisfy
    itself with context alone; each anomaly event expresses one of several
    shared mode signatures, so sparse bag-level evidence learns them slowly.
    """
    raw = rng.standard_normal((dim, num_modes + 1))
    q, _ = np.linalg.qr(raw)
    context = q[:, 0].copy()
    modes = q[:, 1:].T.copy()
    return context, modes


def _place_intervals(
    rng: np.random.Generator, t: int, count_range: tuple[int, int], len_range: tuple[int, int]
) -> list[tuple[int, int]]:
    """Non-overlapping snippet intervals with at least one snippet between events."""
    k = int(rng.integers(count_range[0], count_range[1] + 1))
    lengths = rng.integers(len_range[0], len_range[1] + 1, size=k)
    free = t - int(lengths.sum()) - (k - 1)
    if free < 0:
        raise DataError(
            f"cannot place {k} intervals of total length {int(lengths.sum())} "
            f"in a video of {t} snippets"
        )
    picks = np.sort(rng.choice(free + k, size=k, replace=False))
    starts = []
    offset = 0
    for i in range(k):
        gap = int(picks[i]) - i  # slack before interval i, in [0, free]
        starts.append(gap + offset)
        offset += int(lengths[i]) + 1
    return [(s, s + int(l)) for s, l in zip(starts, lengths)]


def _event_profile(length: int) -> np.ndarray:
    """Per-snippet anomaly intensity across one event: ramp up, plateau, ramp down.

    Real anomalies build up and fade out rather than switching on; the soft
    edges are what graded pseudo-labels can represent and hard 0/1 ones cannot.
    The floor keeps every event snippet clearly anomalous.
    """
    ramp = max(1, length // 4)
    profile = np.ones(length)
    rise = 0.5 + 0.5 * np.arange(1, ramp + 1) / ramp
    profile[:ramp] = rise
    profile[length - ramp :] = rise[::-1]
    return profile


def generate_synthetic(config: SynthConfig, out_dir: str | Path) -> DatasetManifest:
    """Write feature files plus manifest.json under out_dir; deterministic per seed."""
    out_dir = Path(out_dir)
    feature_dir = out_dir / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)

    context_dir, anomaly_modes = _signal_directions(
        make_rng(config.seed, 16), config.feature_dim, config.num_anomaly_modes
    )
    groups = [
        ("train", 0, config.num_normal),
        ("train", 1, config.num_abnormal),
        ("test", 0, config.num_normal_test),
        ("test", 1, config.num_abnormal_test),
    ]
    entries: list[VideoEntry] = []
    video_idx = 0
    for split, label, count in groups:
        for _ in range(count):
            rng = make_rng(config.seed, 17, video_idx)
            t = int(rng.integers(config.snippets_range[0], config.snippets_range[1] + 1))
            feats = rng.standard_normal((t, config.feature_dim))
            total_frames = t * config.frames_per_snippet - int(
                rng.integers(0, config.frames_per_snippet)
            )
            gt_frames: tuple[tuple[int, int], ...] | None = None
            if label == 1:
                # per-video intensity variation on the shared signal directions
                drift = config.context_drift * float(rng.uniform(0.7, 1.3)) * context_dir
                feats += drift[None, :]
                intervals = _place_intervals(
                    rng, t, config.intervals_range, config.interval_len_range
                )
                for s, e in intervals:
                    mode = anomaly_modes[int(rng.integers(len(anomaly_modes)))]
                    shift = config.anomaly_shift * float(rng.uniform(0.7, 1.3)) * mode
                    feats[s:e] += _event_profile(e - s)[:, None] * shift[None, :]
                gt_frames = tuple(
                    (
                        s * config.frames_per_snippet,
                        min(e * config.frames_per_snippet, total_frames),
                    )
                    for s, e in intervals
                )
            kind = "abn" if label else "nor"
            video_id = f"{split}_{kind}_{video_idx:04d}"
            rel_path = f"features/{video_id}{FEATURE_SUFFIX}"
            store_features(out_dir / rel_path, feats)
            entries.append(
                VideoEntry(
                    video_id=video_id,
                    feature_path=rel_path,
                    label=label,
                    total_frames=total_frames,
                    frames_per_snippet=config.frames_per_snippet,
                    split=split,
                    fps=config.fps,
                    gt_intervals=gt_frames,
                )
            )
            video_idx += 1

    manifest = DatasetManifest(videos=entries)
    manifest.save(out_dir / "manifest.json")
    return manifest


# ---------------------------------------------------------------------------
# supervision splits
# ---------------------------------------------------------------------------


def split_supervision(
    manifest: DatasetManifest, glance_fraction: float, seed: int
) -> tuple[set[str], set[str]]:
    """Partition abnormal training videos into glance-supervised and weak-only ids."""
    if not 0.0 <= glance_fraction <= 1.0:
        raise ConfigError(f"glance_fraction must be in [0, 1], got {glance_fraction}")
    abnormal = sorted(v.video_id for v in manifest.split("train") if v.label == 1)
    rng = make_rng(seed, 19)
    order = list(rng.permutation(len(abnormal)))
    n_glance = round(glance_fraction * len(abnormal))
    glance_ids = {abnormal[i] for i in order[:n_glance]}
    weak_ids = set(abnormal) - glance_ids
    return glance_ids, weak_ids
