"""Snippet-level anomaly scorer: a small temporal-convolution network with a
logistic score head, its losses, and exact reverse-mode gradients.

The whole model runs in float64 numpy so analytic gradients can be verified
against central finite differences.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core import (
    ConfigError,
    DataError,
    FeatureSequence,
    NumericError,
    ShapeError,
    make_rng,
)

EPS = 1e-7  # clamp for every log argument; keeps BCE finite on hard 0/1 targets
CHECKPOINT_MAGIC = b"GVCK"

_ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class ScorerConfig:
    feature_dim: int
    hidden_dims: tuple[int, int] = (512, 128)
    temporal_width: int = 1  # receptive field of the encoder convolutions, 1 or 3
    activation: str = "tanh"
    topk_divisor: int = 16  # K = max(1, T // topk_divisor + 1)

    def __post_init__(self) -> None:
        if self.feature_dim < 1:
            raise ConfigError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if len(self.hidden_dims) != 2 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden_dims must be two positive widths, got {self.hidden_dims}")
        if self.temporal_width not in (1, 3):
            raise ConfigError(f"temporal_width must be 1 or 3, got {self.temporal_width}")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}")
        if self.topk_divisor < 1:
            raise ConfigError(f"topk_divisor must be >= 1, got {self.topk_divisor}")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    def to_dict(self) -> dict[str, Any]:
        return {
            "feature_dim": self.feature_dim,
            "hidden_dims": list(self.hidden_dims),
            "temporal_width": self.temporal_width,
            "activation": self.activation,
            "topk_divisor": self.topk_divisor,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScorerConfig":
        try:
            return cls(
                feature_dim=int(data["feature_dim"]),
                hidden_dims=tuple(data["hidden_dims"]),
                temporal_width=int(data.get("temporal_width", 1)),
                activation=str(data.get("activation", "tanh")),
                topk_divisor=int(data.get("topk_divisor", 16)),
            )
        except KeyError as exc:
            raise ConfigError(f"scorer config missing key {exc}") from None

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ScorerModel:
    """Parameter container; gradients live in per-call dicts, not on the model."""

    config: ScorerConfig
    params: dict[str, np.ndarray]
    seed: int = 0

    @classmethod
    def initialize(cls, config: ScorerConfig, seed: int = 0) -> "ScorerModel":
        rng = make_rng(seed, 101)
        w = config.temporal_width
        d = config.feature_dim
        h1, h2 = config.hidden_dims

        def draw(shape: tuple[int, ...], fan_in: int) -> np.ndarray:
            return rng.standard_normal(shape) / np.sqrt(fan_in)

        params = {
            "w1": draw((w, d, h1), w * d),
            "b1": np.zeros(h1),
            "w2": draw((w, h1, h2), w * h1),
            "b2": np.zeros(h2),
            "w3": draw((h2,), h2),
            "b3": np.zeros(()),
        }
        return cls(config=config, params=params, seed=int(seed))

    def zeros_like_params(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


@dataclass(frozen=True)
class LossBreakdown:
    l_mil: float = 0.0
    l_abn: float = 0.0
    l_nor: float = 0.0

    @property
    def l_total(self) -> float:
        return self.l_mil + self.l_abn + self.l_nor

    def __add__(self, other: "LossBreakdown") -> "LossBreakdown":
        return LossBreakdown(
            self.l_mil + other.l_mil,
            self.l_abn + other.l_abn,
            self.l_nor + other.l_nor,
        )

    def scaled(self, factor: float) -> "LossBreakdown":
        return LossBreakdown(self.l_mil * factor, self.l_abn * factor, self.l_nor * factor)

    @staticmethod
    def mean(items: "list[LossBreakdown]") -> "LossBreakdown":
        if not items:
            return LossBreakdown()
        total = LossBreakdown()
        for item in items:
            total = total + item
        return total.scaled(1.0 / len(items))

    def to_dict(self) -> dict[str, float]:
        return {
            "l_mil": self.l_mil,
            "l_abn": self.l_abn,
            "l_nor": self.l_nor,
            "l_total": self.l_total,
        }


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def _as_matrix(features: FeatureSequence | np.ndarray) -> np.ndarray:
    x = features.features if isinstance(features, FeatureSequence) else np.asarray(features)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"features must be a (T, D) matrix, got shape {x.shape}")
    return x


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    out = np.zeros((x.shape[0] + 2 * pad, x.shape[1]))
    out[pad:-pad] = x
    return out


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Temporal convolution with zero padding; w has shape (width, Din, Dout)."""
    width = w.shape[0]
    t = x.shape[0]
    xp = _pad(x, (width - 1) // 2)
    out = np.tile(b, (t, 1))
    for k in range(width):
        out += xp[k : k + t] @ w[k]
    return out


def _conv_backward(
    x: np.ndarray, w: np.ndarray, dout: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    width = w.shape[0]
    pad = (width - 1) // 2
    t = x.shape[0]
    xp = _pad(x, pad)
    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp)
    for k in range(width):
        dw[k] = xp[k : k + t].T @ dout
        dxp[k : k + t] += dout @ w[k].T
    db = dout.sum(axis=0)
    dx = dxp[pad : pad + t] if pad else dxp
    return dx, dw, db


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _activate_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    return 1.0 - a * a if kind == "tanh" else (z > 0.0).astype(np.float64)


@dataclass
class _ForwardCache:
    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    logits: np.ndarray
    scores: np.ndarray


def _forward_cache(model: ScorerModel, features: FeatureSequence | np.ndarray) -> _ForwardCache:
    x = _as_matrix(features)
    if x.shape[1] != model.config.feature_dim:
        raise ShapeError(
            f"feature dim {x.shape[1]} does not match model input width "
            f"{model.config.feature_dim}"
        )
    p = model.params
    act = model.config.activation
    z1 = _conv_forward(x, p["w1"], p["b1"])
    a1 = _activate(z1, act)
    z2 = _conv_forward(a1, p["w2"], p["b2"])
    a2 = _activate(z2, act)
    logits = a2 @ p["w3"] + p["b3"]
    scores = 1.0 / (1.0 + np.exp(-logits))
    if not np.all(np.isfinite(scores)):
        raise NumericError("scorer forward produced non-finite scores")
    return _ForwardCache(x, z1, a1, z2, a2, logits, scores)


def forward(model: ScorerModel, features: FeatureSequence | np.ndarray) -> np.ndarray:
    """Per-snippet anomaly scores in (0, 1)."""
    return _forward_cache(model, features).scores


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def topk_count(track_len: int, divisor: int = 16) -> int:
    return max(1, track_len // divisor + 1)


def _topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    # stable sort on negated scores: ties resolve toward the lower index
    return np.argsort(-scores, kind="stable")[:k]


def topk_pool(scores: np.ndarray, k: int) -> float:
    """Mean of the K largest snippet scores (the video-level prediction)."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ShapeError(f"expected a non-empty score vector, got shape {arr.shape}")
    if not 1 <= k <= arr.size:
        raise ConfigError(f"top-k size {k} out of range for track of length {arr.size}")
    return float(arr[_topk_indices(arr, k)].mean())


def mil_loss(y_hat: float, y: int) -> float:
    """Video-level binary cross-entropy on the pooled prediction."""
    if y not in (0, 1):
        raise DataError(f"video label must be 0 or 1, got {y}")
    p = min(max(float(y_hat), EPS), 1.0 - EPS)
    return float(-(y * np.log(p) + (1 - y) * np.log(1.0 - p)))


def abn_loss(predicted: np.ndarray, rendered: np.ndarray) -> float:
    """Mean per-snippet BCE of predicted scores against (possibly soft) targets."""
    pred = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(rendered, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1:
        raise ShapeError(f"predicted shape {pred.shape} != rendered shape {target.shape}")
    if target.size == 0:
        raise ShapeError("empty score tracks")
    if target.min() < 0.0 or target.max() > 1.0:
        raise DataError("rendered targets must lie in [0, 1]")
    p = np.clip(pred, EPS, 1.0 - EPS)
    return float(np.mean(-(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _grad_mil_wrt_scores(scores: np.ndarray, y: int, k: int) -> tuple[float, np.ndarray]:
    """MIL BCE value and its gradient w.r.t. the score vector.

    Only the selected top-K entries receive gradient (subgradient choice at
    pooling ties); the clamp zeroes the gradient when it binds.
    """
    idx = _topk_indices(scores, k)
    y_hat = float(scores[idx].mean())
    loss = mil_loss(y_hat, y)
    ds = np.zeros_like(scores)
    if EPS < y_hat < 1.0 - EPS:
        p = y_hat
        dl_dp = -(y / p) + (1 - y) / (1.0 - p)
        ds[idx] = dl_dp / k
    return loss, ds


def _grad_abn_wrt_scores(scores: np.ndarray, rendered: np.ndarray) -> tuple[float, np.ndarray]:
    loss = abn_loss(scores, rendered)
    p = np.clip(scores, EPS, 1.0 - EPS)
    inside = (scores > EPS) & (scores < 1.0 - EPS)
    ds = (-(rendered / p) + (1.0 - rendered) / (1.0 - p)) / scores.size
    ds[~inside] = 0.0
    return loss, ds


def _backward_from_cache(
    model: ScorerModel, cache: _ForwardCache, dscores: np.ndarray
) -> dict[str, np.ndarray]:
    p = model.params
    act = model.config.activation
    s = cache.scores
    dlogits = dscores * s * (1.0 - s)
    grads: dict[str, np.ndarray] = {}
    grads["w3"] = cache.a2.T @ dlogits
    grads["b3"] = np.asarray(dlogits.sum())
    da2 = np.outer(dlogits, p["w3"])
    dz2 = da2 * _activate_grad(cache.z2, cache.a2, act)
    da1, grads["w2"], grads["b2"] = _conv_backward(cache.a1, p["w2"], dz2)
    dz1 = da1 * _activate_grad(cache.z1, cache.a1, act)
    _, grads["w1"], grads["b1"] = _conv_backward(cache.x, p["w1"], dz1)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
    return grads


def backward(
    model: ScorerModel,
    features: FeatureSequence | np.ndarray,
    y: int,
    rendered: np.ndarray | None = None,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Loss components and exact gradients for one video.

    Abnormal videos (y=1) contribute the video-level MIL term plus, when a
    pseudo-label track is supplied, the snippet-level BCE term. Normal videos
    contribute only the video-level term, reported as l_nor. The pseudo-label
    track is treated as a constant target.
    """
    cache = _forward_cache(model, features)
    scores = cache.scores
    k = topk_count(scores.size, model.config.topk_divisor)
    dscores = np.zeros_like(scores)

    l_mil = l_abn = l_nor = 0.0
    if y == 1:
        l_mil, ds = _grad_mil_wrt_scores(scores, 1, k)
        dscores += ds
        if rendered is not None:
            target = np.asarray(rendered, dtype=np.float64)
            l_abn, ds = _grad_abn_wrt_scores(scores, target)
            dscores += ds
    elif y == 0:
        l_nor, ds = _grad_mil_wrt_scores(scores, 0, k)
        dscores += ds
    else:
        raise DataError(f"video label must be 0 or 1, got {y}")

    grads = _backward_from_cache(model, cache, dscores)
    return LossBreakdown(l_mil=l_mil, l_abn=l_abn, l_nor=l_nor), grads


def loss_components(
    model: ScorerModel,
    features: FeatureSequence | np.ndarray,
    y: int,
    rendered: np.ndarray | None = None,
) -> LossBreakdown:
    """Forward-only loss evaluation (used by the finite-difference checks)."""
    scores = forward(model, features)
    k = topk_count(scores.size, model.config.topk_divisor)
    l_mil = l_abn = l_nor = 0.0
    if y == 1:
        l_mil = mil_loss(topk_pool(scores, k), 1)
        if rendered is not None:
            l_abn = abn_loss(scores, np.asarray(rendered, dtype=np.float64))
    else:
        l_nor = mil_loss(topk_pool(scores, k), 0)
    return LossBreakdown(l_mil=l_mil, l_abn=l_abn, l_nor=l_nor)


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------


def save_checkpoint(path: str, model: ScorerModel, extra: dict[str, Any] | None = None) -> None:
    """Write a checkpoint: magic, length-framed JSON header, float64 LE blocks."""
    names = sorted(model.params)
    header = {
        "schema_version": 1,
        "seed": model.seed,
        "config": model.config.to_dict(),
        "config_hash": model.config.hash(),
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes())


def load_checkpoint(path: str) -> ScorerModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a scorer checkpoint (bad magic)")
    if len(raw) < 12:
        raise DataError(f"{path}: truncated checkpoint header")
    (hlen,) = struct.unpack("<Q", raw[4:12])
    if len(raw) < 12 + hlen:
        raise DataError(f"{path}: truncated checkpoint header")
    header = json.loads(raw[12 : 12 + hlen].decode())
    config = ScorerConfig.from_dict(header["config"])
    params: dict[str, np.ndarray] = {}
    offset = 12 + hlen
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if len(raw) < offset + nbytes:
            raise DataError(f"{path}: truncated parameter block for {spec['name']!r}")
        params[spec["name"]] = np.frombuffer(
            raw, dtype="<f8", count=count, offset=offset
        ).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise DataError(f"{path}: trailing bytes after parameter blocks")
    return ScorerModel(config=config, params=params, seed=int(header.get("seed", 0)))
