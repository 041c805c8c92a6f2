"""Kernel temporal segmentation of frame-feature sequences into subshots.

Frames are compared with a linear kernel on l2-normalized features; the
dynamic program places change points that minimize total within-segment
scatter, and the segment count is chosen by a penalized objective
g(k) = obj(k) + penalty * k * (log(T/k) + 1). When no penalty is given it is
tuned by bisection so the mean subshot length lands near 30 frames
(about 6 seconds at 5 fps).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

DEFAULT_FPS = 5.0
# target mean subshot length in frames for auto penalty tuning
TARGET_LEN_RANGE = (25, 36)


@dataclass(frozen=True)
class Segmentation:
    """Subshot boundaries over ``num_frames`` frames.

    ``boundaries`` are strictly increasing frame indices in [1, T-1]; segment
    i is the half-open range [b_{i-1}, b_i) with implicit 0 and T endpoints.
    """

    num_frames: int
    boundaries: tuple[int, ...] = field(default_factory=tuple)
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        t = self.num_frames
        bs = self.boundaries
        if t < 1:
            raise ConfigError(f"segmentation needs at least one frame, got {t}")
        if any(not (1 <= b <= t - 1) for b in bs):
            raise ConfigError(f"boundaries {bs} out of range for {t} frames")
        if any(b2 <= b1 for b1, b2 in zip(bs, bs[1:])):
            raise ConfigError(f"boundaries must be strictly increasing: {bs}")

    @property
    def num_segments(self) -> int:
        return len(self.boundaries) + 1

    def segments(self) -> list[tuple[int, int]]:
        edges = (0, *self.boundaries, self.num_frames)
        return [(a, b) for a, b in zip(edges, edges[1:])]

    def segment_lengths(self) -> list[int]:
        return [b - a for a, b in self.segments()]

    def frame_to_segment(self, frame: int) -> int:
        for i, (a, b) in enumerate(self.segments()):
            if a <= frame < b:
                return i
        raise ConfigError(f"frame {frame} outside [0, {self.num_frames})")

    def to_json(self) -> str:
        return json.dumps({"boundaries": list(self.boundaries),
                           "num_frames": self.num_frames, "fps": self.fps})

    @classmethod
    def from_json(cls, text: str) -> "Segmentation":
        try:
            obj = json.loads(text)
            return cls(num_frames=int(obj["num_frames"]),
                       boundaries=tuple(int(b) for b in obj["boundaries"]),
                       fps=float(obj.get("fps", DEFAULT_FPS)))
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad segmentation JSON: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "Segmentation":
        return cls.from_json(Path(path).read_text())


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return x / norms


def _scatter_matrix(gram: np.ndarray) -> np.ndarray:
    """scatter[i, j] = within-segment scatter of frames i..j inclusive."""
    t = gram.shape[0]
    k1 = np.concatenate(([0.0], np.cumsum(np.diag(gram))))
    k2 = np.zeros((t + 1, t + 1))
    k2[1:, 1:] = np.cumsum(np.cumsum(gram, axis=0), axis=1)
    i = np.arange(t)[:, None]
    j = np.arange(t)[None, :]
    length = (j - i + 1).astype(np.float64)
    length[length <= 0] = 1.0
    # sum of gram entries over the [i..j] x [i..j] block via 2-D prefix sums
    block = (np.diag(k2)[1:][None, :] + np.diag(k2)[:-1][:, None]
             - k2[1:, :-1].T - k2[:-1, 1:])
    scatter = (k1[1:][None, :] - k1[:-1][:, None]) - block / length
    scatter[j < i] = 0.0
    return scatter


def _dp_tables(scatter: np.ndarray, max_segments: int):
    """Minimal scatter of the first t frames using s segments, with backtrack."""
    t = scatter.shape[0]
    kmax = min(max_segments, t)
    inf = np.inf
    cost = np.full((kmax + 1, t + 1), inf)
    prev = np.zeros((kmax + 1, t + 1), dtype=np.int64)
    cost[1, 1:] = scatter[0, :t]
    for s in range(2, kmax + 1):
        for end in range(s, t + 1):
            cands = cost[s - 1, s - 1:end] + scatter[s - 1:end, end - 1]
            best = int(np.argmin(cands))  # lowest index on ties
            cost[s, end] = cands[best]
            prev[s, end] = best + s - 1
    return cost, prev, kmax


def _backtrack(prev: np.ndarray, segments: int, t: int) -> tuple[int, ...]:
    bounds = []
    cur = t
    for s in range(segments, 1, -1):
        cur = int(prev[s, cur])
        bounds.append(cur)
    return tuple(reversed(bounds))


def _model_cost(obj: np.ndarray, penalty: float, t: int) -> int:
    """Best segment count for a penalty; lowest count wins ties."""
    best_k, best_g = 1, math.inf
    for k in range(1, obj.shape[0]):
        if not np.isfinite(obj[k]):
            continue
        g = obj[k] + penalty * k * (math.log(t / k) + 1.0)
        if g < best_g - 1e-12:
            best_g = g
            best_k = k
    return best_k


def _auto_penalty(obj: np.ndarray, t: int, kmax: int) -> float:
    """Bisect the penalty until the mean segment length enters the target band."""
    lo_k = max(1, math.ceil(t / TARGET_LEN_RANGE[1]))
    hi_k = max(1, t // TARGET_LEN_RANGE[0])
    lo_k = min(lo_k, kmax)
    hi_k = min(max(hi_k, lo_k), kmax)
    lo, hi = 1e-9, 1e9  # penalty up => fewer segments
    best = hi
    for _ in range(80):
        mid = math.sqrt(lo * hi)
        k = _model_cost(obj, mid, t)
        if lo_k <= k <= hi_k:
            return mid
        if k > hi_k:
            lo = mid
        else:
            hi = mid
        best = mid
    return best


def kts_segment(frame_features: np.ndarray, max_segments: int,
                penalty: float | None = None, fps: float = DEFAULT_FPS) -> Segmentation:
    """Segment a (T, d) feature sequence into visually coherent subshots."""
    feats = np.asarray(frame_features)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ConfigError(f"need a (T >= 2, d) feature matrix, got {feats.shape}")
    t = feats.shape[0]
    if max_segments < 1:
        raise ConfigError(f"max_segments must be >= 1, got {max_segments}")
    if max_segments > t:
        raise ConfigError(f"max_segments {max_segments} exceeds frame count {t}")
    if penalty is not None and penalty < 0:
        raise ConfigError(f"penalty must be nonnegative, got {penalty}")

    x = _normalize_rows(feats)
    scatter = _scatter_matrix(x @ x.T)
    cost, prev, kmax = _dp_tables(scatter, max_segments)
    obj = cost[:, t]
    pen = _auto_penalty(obj, t, kmax) if penalty is None else penalty
    k = _model_cost(obj, pen, t)
    return Segmentation(num_frames=t, boundaries=_backtrack(prev, k, t), fps=fps)


def segment_objectives(frame_features: np.ndarray, max_segments: int) -> np.ndarray:
    """obj[k] = minimal total scatter with k segments (index 0 unused, inf)."""
    feats = np.asarray(frame_features)
    x = _normalize_rows(feats)
    scatter = _scatter_matrix(x @ x.T)
    cost, _, _ = _dp_tables(scatter, max_segments)
    return cost[:, feats.shape[0]]


def subshot_middle_frames(seg: Segmentation) -> list[int]:
    """Representative middle frame of each subshot: floor((start+end-1)/2)."""
    return [(a + b - 1) // 2 for a, b in seg.segments()]
