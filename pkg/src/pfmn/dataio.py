"""Binary feature files, dataset manifests, ground-truth summaries,
evaluation metrics, sampling baselines, and the synthetic storyline corpus.

Feature file layout (little-endian): magic ``PFMNFEAT``, version u32,
kind u8, one u32 extent per axis (the rank is fixed by the kind), then the
payload as float32. Kind 0 holds (n, 2048) pool vectors, kind 1 holds
(n, 81, 7, 7, 2048) per-candidate spatial maps, kind 2 holds (n, 81)
candidate scores.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, FormatError
from .kts import Segmentation

FEAT_MAGIC = b"PFMNFEAT"
FEAT_VERSION = 1

KIND_POOL = 0
KIND_SPATIAL = 1
KIND_SCORES = 2

_KIND_RANK = {KIND_POOL: 2, KIND_SPATIAL: 5, KIND_SCORES: 2}
_KIND_TAIL = {KIND_POOL: (2048,), KIND_SPATIAL: (81, 7, 7, 2048),
              KIND_SCORES: (81,)}

GT_BUDGET_RATIO = 0.15


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------

def write_features(array: np.ndarray, path: str | Path, kind: int = KIND_POOL) -> None:
    if kind not in _KIND_RANK:
        raise FormatError(f"unknown feature kind {kind}")
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != _KIND_RANK[kind] or arr.shape[1:] != _KIND_TAIL[kind]:
        raise DimensionError(
            f"kind {kind} expects shape (n, {', '.join(map(str, _KIND_TAIL[kind]))}), "
            f"got {arr.shape}")
    if arr.shape[0] < 1:
        raise DimensionError("feature file needs at least one row")
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC)
        fh.write(struct.pack("<IB", FEAT_VERSION, kind))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_features(path: str | Path) -> tuple[int, np.ndarray]:
    """Read a feature file; returns (kind, float32 array)."""
    blob = Path(path).read_bytes()
    off = 0

    def need(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(
                f"truncated feature file {path}: needed {n} bytes for {what} at "
                f"offset {off}, file has {len(blob)}")
        chunk = blob[off:off + n]
        off += n
        return chunk

    if need(8, "magic") != FEAT_MAGIC:
        raise FormatError(f"bad feature magic in {path}")
    version, kind = struct.unpack("<IB", need(5, "header"))
    if version != FEAT_VERSION:
        raise FormatError(f"unsupported feature version {version} in {path}")
    if kind not in _KIND_RANK:
        raise FormatError(f"unknown feature kind {kind} in {path}")
    rank = _KIND_RANK[kind]
    shape = struct.unpack(f"<{rank}I", need(4 * rank, "extents"))
    if shape[1:] != _KIND_TAIL[kind]:
        raise FormatError(
            f"kind {kind} extents {shape} do not match the contracted tail "
            f"{_KIND_TAIL[kind]}")
    nbytes = 4 * int(np.prod(shape, dtype=np.int64))
    payload = need(nbytes, "payload")
    if off != len(blob):
        raise FormatError(
            f"trailing {len(blob) - off} bytes in feature file {path}")
    return kind, np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    video_id: str
    features: Path
    segmentation: Path | None = None
    gt: list[Path] = field(default_factory=list)
    topic: str = ""


def write_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    """Write a manifest; paths are stored relative to it when possible."""
    base = Path(path).resolve().parent

    def rel(p: Path | None):
        if p is None:
            return None
        p = Path(p).resolve()
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    recs = []
    for e in entries:
        recs.append({
            "id": e.video_id,
            "features": rel(e.features),
            "segmentation": rel(e.segmentation),
            "gt": [rel(g) for g in e.gt],
            "topic": e.topic,
        })
    Path(path).write_text(json.dumps({"videos": recs}, indent=2))


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse and validate a manifest; every referenced file must exist."""
    base = Path(path).parent
    try:
        obj = json.loads(Path(path).read_text())
        videos = obj["videos"]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad manifest {path}: {exc}") from exc

    def resolve(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else base / q

    entries = []
    for rec in videos:
        try:
            entry = ManifestEntry(
                video_id=str(rec["id"]),
                features=resolve(rec["features"]),
                segmentation=(resolve(rec["segmentation"])
                              if rec.get("segmentation") else None),
                gt=[resolve(g) for g in rec.get("gt", [])],
                topic=str(rec.get("topic", "")),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad manifest record in {path}: {exc}") from exc
        for p in [entry.features, entry.segmentation, *entry.gt]:
            if p is not None and not p.exists():
                raise FormatError(f"manifest {path} references missing file {p}")
        entries.append(entry)
    return entries


# ---------------------------------------------------------------------------
# ground-truth summaries and metrics
# ---------------------------------------------------------------------------

@dataclass
class GtSummary:
    """Subshots an annotator marked important, under the duration budget."""

    annotator: str
    indices: tuple[int, ...]          # 1-based subshot ids, ascending
    ratios: tuple[float, ...]         # marked fraction per subshot
    budget_frames: float

    def to_json(self) -> str:
        return json.dumps({"annotator": self.annotator,
                           "indices": list(self.indices),
                           "ratios": list(self.ratios),
                           "budget_frames": self.budget_frames})

    @classmethod
    def from_json(cls, text: str) -> "GtSummary":
        try:
            obj = json.loads(text)
            return cls(annotator=str(obj["annotator"]),
                       indices=tuple(int(i) for i in obj["indices"]),
                       ratios=tuple(float(r) for r in obj["ratios"]),
                       budget_frames=float(obj["budget_frames"]))
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad GT JSON: {exc}") from exc


def build_gt(frame_marks: np.ndarray, seg: Segmentation,
             annotator: str = "0",
             budget_ratio: float = GT_BUDGET_RATIO) -> GtSummary:
    """Rank subshots by marked-frame fraction and take them into the budget.

    Subshots are ranked by f_is/f_i descending (ties to the earlier subshot)
    and taken greedily until adding the next would exceed
    budget_ratio * num_frames total duration.
    """
    marks = np.asarray(frame_marks, dtype=bool)
    if marks.shape != (seg.num_frames,):
        raise DimensionError(
            f"marks length {marks.shape} != frame count {seg.num_frames}")
    spans = seg.segments()
    ratios = [float(marks[a:b].sum()) / (b - a) for a, b in spans]
    order = sorted(range(len(spans)), key=lambda i: (-ratios[i], i))
    budget = budget_ratio * seg.num_frames
    chosen: list[int] = []
    total = 0
    for i in order:
        length = spans[i][1] - spans[i][0]
        if total + length > budget:
            break
        chosen.append(i + 1)
        total += length
    return GtSummary(annotator=annotator, indices=tuple(sorted(chosen)),
                     ratios=tuple(ratios), budget_frames=budget)


def _frames_of(indices, seg: Segmentation) -> set[int]:
    spans = seg.segments()
    out: set[int] = set()
    for z in indices:
        if not 1 <= z <= len(spans):
            raise DimensionError(f"subshot index {z} outside 1..{len(spans)}")
        a, b = spans[z - 1]
        out.update(range(a, b))
    return out


def f1_per_gt(pred_indices, gts: list[GtSummary], seg: Segmentation) -> list[float]:
    """Frame-level F1 of the prediction against each annotator."""
    pred = _frames_of(pred_indices, seg)
    if not pred:
        warnings.warn("empty prediction scores F1 = 0", stacklevel=2)
        return [0.0 for _ in gts]
    scores = []
    for gt in gts:
        ref = _frames_of(gt.indices, seg)
        overlap = len(pred & ref)
        precision = overlap / len(pred)
        recall = overlap / len(ref) if ref else 0.0
        if precision + recall == 0:
            scores.append(0.0)
        else:
            scores.append(2 * precision * recall / (precision + recall))
    return scores


def f1_summary(pred_indices, gts: list[GtSummary], seg: Segmentation) -> float:
    """Mean pairwise frame-level F1 against one or more annotators."""
    if not gts:
        raise ConfigError("need at least one ground-truth summary")
    return float(np.mean(f1_per_gt(pred_indices, gts, seg)))


def precision_recall(pred_indices, gt_sets) -> tuple[float, float]:
    """Set precision/recall of item indices against the union of GT sets."""
    pred = set(pred_indices)
    union: set = set()
    for g in gt_sets:
        union.update(g)
    if not pred:
        return 0.0, 0.0
    hit = len(pred & union)
    recall = hit / len(union) if union else 0.0
    return hit / len(pred), recall


def unit_segmentation(n: int) -> Segmentation:
    """One subshot per frame; item-level metrics (e.g. photostreams)."""
    return Segmentation(num_frames=n, boundaries=tuple(range(1, n)))


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def baseline_select(kind: str, n: int, m: int, seed: int = 0) -> tuple[int, ...]:
    """random: m distinct sorted indices; uniform: middles of m equal spans."""
    if not 1 <= m <= n:
        raise ConfigError(f"need 1 <= m <= n, got m={m}, n={n}")
    if kind == "random":
        rng = np.random.default_rng(seed)
        picks = rng.choice(n, size=m, replace=False) + 1
        return tuple(int(z) for z in np.sort(picks))
    if kind == "uniform":
        edges = [round(i * n / m) for i in range(m + 1)]
        return tuple((a + 1 + b) // 2 for a, b in zip(edges, edges[1:]))
    raise ConfigError(f"unknown baseline kind {kind!r}")


# ---------------------------------------------------------------------------
# synthetic storyline corpus
# ---------------------------------------------------------------------------

@dataclass
class SynthSequence:
    features: np.ndarray               # (n, 2048) float32
    storyline_positions: tuple[int, ...]  # 1-based, strictly increasing

    @property
    def length(self) -> int:
        return self.features.shape[0]


@dataclass
class SynthCorpus:
    storyline_centroids: np.ndarray    # (K, 2048)
    distractor_centroids: np.ndarray   # (D, 2048)
    sequences: list[SynthSequence]
    noise_sigma: float
    seed: int


def synth_corpus(k: int, num_sequences: int, length_range: tuple[int, int],
                 noise_sigma: float, distractor_clusters: int, seed: int,
                 feat_dim: int = 2048, storyline_scale: float = 2.0,
                 distractor_scale: float = 1.0) -> SynthCorpus:
    """Sequences sharing K ordered storyline exemplars among cluster distractors.

    Centroids are mutually orthogonal directions; storyline exemplars are the
    K storyline centroids plus Gaussian noise, planted at sorted random
    positions, with the remaining slots drawn from the distractor clusters.
    """
    if k < 2:
        raise ConfigError(f"need at least 2 storyline centroids, got {k}")
    if distractor_clusters < 1:
        raise ConfigError("need at least one distractor cluster")
    lo, hi = length_range
    if lo > hi:
        raise ConfigError(f"bad length range {length_range}")
    min_len = int(np.ceil(k / GT_BUDGET_RATIO))
    if lo < min_len:
        raise ConfigError(
            f"minimum length {lo} cannot fit {k} storyline subshots in a "
            f"{GT_BUDGET_RATIO:.0%} budget; need >= {min_len}")
    if k + distractor_clusters > feat_dim:
        raise ConfigError("more centroids than feature dimensions")

    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((feat_dim, k + distractor_clusters)))
    centroids = basis.T.astype(np.float32)
    story = centroids[:k] * storyline_scale
    distract = centroids[k:] * distractor_scale

    sequences = []
    for _ in range(num_sequences):
        n = int(rng.integers(lo, hi + 1))
        feats = np.empty((n, feat_dim), dtype=np.float32)
        positions = np.sort(rng.choice(n, size=k, replace=False))
        cluster_ids = rng.integers(0, distractor_clusters, size=n)
        feats[:] = distract[cluster_ids]
        feats[positions] = story
        feats += rng.normal(0.0, noise_sigma, size=feats.shape).astype(np.float32)
        sequences.append(SynthSequence(
            features=feats,
            storyline_positions=tuple(int(p) + 1 for p in positions)))
    return SynthCorpus(storyline_centroids=story, distractor_centroids=distract,
                       sequences=sequences, noise_sigma=noise_sigma, seed=seed)
