"""Convolutional view-scoring network and the weighted subshot descriptor.

A candidate NFOV enters as a 7x7x2048 spatial feature map and leaves as a
key-objectness score in (0, 1): three 2x2 valid convolutions (channels
2048 -> 2048 -> 1024 -> 512, each with batchnorm and ReLU), global average
pooling, a linear projection to one unit, and a sigmoid. Scores across the
81 candidates are L1-normalized into weights for the subshot descriptor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .errors import DimensionError, NumericError
from .registry import ParamRegistry
from .tensor import BatchNorm, Tensor

MAP_SHAPE = (7, 7, 2048)
CONV_CHANNELS = (2048, 2048, 1024, 512)  # input followed by the three stages
HARD_TOP_K = 12


@dataclass
class RankPair:
    """A photo-image positive and a random-crop negative, as feature maps."""

    pos: np.ndarray  # (7, 7, 2048)
    neg: np.ndarray

    def __post_init__(self):
        for arr in (self.pos, self.neg):
            if arr.shape != MAP_SHAPE:
                raise DimensionError(f"rank pair maps must be {MAP_SHAPE}, "
                                     f"got {arr.shape}")


@dataclass
class RankerParams:
    conv_w: list[Tensor]
    bn: list[BatchNorm]
    proj_w: Tensor  # (1, 512)
    proj_b: Tensor  # (1,)

    @classmethod
    def create(cls, registry: ParamRegistry, rng: np.random.Generator | int,
               prefix: str = "ranker") -> "RankerParams":
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(int(rng))
        conv_w, bns = [], []
        for i in range(3):
            cin, cout = CONV_CHANNELS[i], CONV_CHANNELS[i + 1]
            w = tz.he_init((2, 2, cin, cout), rng, fan_in=2 * 2 * cin)
            registry.register(f"{prefix}/conv{i + 1}/w", w)
            conv_w.append(w)
            bn = BatchNorm(cout)
            registry.register(f"{prefix}/bn{i + 1}/gamma", bn.gamma)
            registry.register(f"{prefix}/bn{i + 1}/beta", bn.beta)
            registry.register(f"{prefix}/bn{i + 1}/running_mean", bn.running_mean,
                              trainable=False)
            registry.register(f"{prefix}/bn{i + 1}/running_var", bn.running_var,
                              trainable=False)
            bns.append(bn)
        proj_w = registry.register(f"{prefix}/proj/w",
                                   tz.he_init((1, CONV_CHANNELS[-1]), rng,
                                              fan_in=CONV_CHANNELS[-1]))
        proj_b = registry.register(f"{prefix}/proj/b",
                                   tz.he_init((1,), rng, fan_in=CONV_CHANNELS[-1]))
        return cls(conv_w=conv_w, bn=bns, proj_w=proj_w, proj_b=proj_b)


def _check_maps(maps: Tensor) -> bool:
    """Validate 7x7x2048 input; returns True when a batch axis is present."""
    if maps.data.ndim == 3 and maps.shape == MAP_SHAPE:
        return False
    if maps.data.ndim == 4 and maps.shape[1:] == MAP_SHAPE:
        return True
    raise DimensionError(f"expected {MAP_SHAPE} feature map(s), got {maps.shape}")


def feature_stack(maps: Tensor | np.ndarray, params: RankerParams,
                  training: bool = False) -> list[Tensor]:
    """Post-activation maps of the three conv stages (for shape audits)."""
    x = maps if isinstance(maps, Tensor) else Tensor(maps)
    _check_maps(x)
    stages = []
    for w, bn in zip(params.conv_w, params.bn):
        x = tz.relu(bn(tz.conv2d(x, w), training=training))
        stages.append(x)
    return stages


def score_view(maps: Tensor | np.ndarray, params: RankerParams,
               training: bool = False) -> Tensor:
    """Key-objectness score(s) in (0, 1); scalar for one map, (B,) for a batch."""
    x = maps if isinstance(maps, Tensor) else Tensor(maps)
    batched = _check_maps(x)
    x = feature_stack(x, params, training=training)[-1]
    pooled = tz.global_avg_pool(x)
    logit = tz.affine(pooled, params.proj_w, params.proj_b)
    score = tz.sigmoid(logit)
    if batched:
        return tz.reshape(score, (score.shape[0],))
    return tz.reshape(score, ())


def rank_loss(pos_score: Tensor, neg_score: Tensor) -> Tensor:
    """Max-margin hinge max(0, f(n) - f(p) + 1), elementwise over pairs."""
    margin = tz.add_scalar(tz.sub(neg_score, pos_score), 1.0)
    return tz.relu(margin)


def l2_penalty(registry: ParamRegistry, prefix: str = "ranker") -> Tensor:
    """Squared Frobenius norm of all trainable parameters under ``prefix``."""
    acc: Tensor | None = None
    for name, t in registry.trainable_items():
        if not name.startswith(prefix + "/"):
            continue
        term = tz.total(tz.mul(t, t))
        acc = term if acc is None else tz.add(acc, term)
    if acc is None:
        raise DimensionError(f"no trainable parameters under {prefix!r}")
    return acc


def normalize_scores(raw: Tensor | np.ndarray) -> Tensor:
    """L1-normalize positive raw scores into weights summing to one."""
    r = raw if isinstance(raw, Tensor) else Tensor(raw)
    if r.data.ndim != 1 or r.data.size == 0:
        raise DimensionError(f"raw scores must be a nonempty vector, got {r.shape}")
    if np.any(r.data < 0):
        raise NumericError("raw scores must be nonnegative")
    s = float(r.data.sum(dtype=np.float64))
    if s <= 0:
        raise NumericError("cannot normalize all-zero scores")
    return tz.scale_by(r, tz.reciprocal(tz.total(r)))


def hard_select(raw: Tensor | np.ndarray, k: int = HARD_TOP_K) -> Tensor:
    """Keep the top-k raw scores (lowest index on ties), renormalized to 1."""
    r = raw if isinstance(raw, Tensor) else Tensor(raw)
    if r.data.ndim != 1 or r.data.size == 0:
        raise DimensionError(f"raw scores must be a nonempty vector, got {r.shape}")
    k = min(k, r.data.size)
    order = np.argsort(-r.data, kind="stable")[:k]
    mask = np.zeros(r.data.shape, dtype=r.dtype)
    mask[order] = 1.0
    return normalize_scores(tz.mul(r, Tensor(mask)))


def subshot_descriptor(candidate_vectors: Tensor | np.ndarray,
                       weights: Tensor | np.ndarray) -> Tensor:
    """Convex combination of per-candidate pool vectors: sum_j w_j v_j."""
    v = (candidate_vectors if isinstance(candidate_vectors, Tensor)
         else Tensor(candidate_vectors))
    w = weights if isinstance(weights, Tensor) else Tensor(weights)
    if v.data.ndim != 2 or w.data.ndim != 1 or v.shape[0] != w.shape[0]:
        raise DimensionError(
            f"misaligned candidates {v.shape} and weights {w.shape}")
    return tz.vecmat(w, v)
