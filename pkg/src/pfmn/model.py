"""Past/future memory network: embeddings, attention, read convolution,
selection prior, and the greedy summary decode loop.

Subshot indices on all public surfaces are 1-based (z in [1, n], strictly
increasing); internal arrays are 0-based. At step t the candidate window is
always (z_{t-1}, n]; the window policy only changes which rows the two
memories hold. Argmax ties break to the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from . import tensor as tz
from .errors import (ConfigError, ContractError, DecodeExhausted,
                     DecodeInfeasible, DimensionError)
from .registry import ParamRegistry
from .tensor import Tensor

FEAT_DIM = 2048
MEM_DIM = 1024
READ_KERNEL_ROWS = 20
READ_STRIDE = 10
LOG_FLOOR = 1e-12

WindowPolicy = Literal["full", "ff", "fa", "pa"]
WINDOW_POLICIES = ("full", "ff", "fa", "pa")


@dataclass
class MemoryParams:
    """All learnable tensors of the memory network, registered by name."""

    past_w_in: Tensor
    past_b_in: Tensor
    past_w_out: Tensor
    past_b_out: Tensor
    future_w_in: Tensor
    future_b_in: Tensor
    future_w_out: Tensor
    future_b_out: Tensor
    query_w: Tensor
    query_b: Tensor
    read_w: Tensor   # (READ_KERNEL_ROWS, MEM_DIM, 1, MEM_DIM) conv kernel
    read_b: Tensor
    out_w: Tensor    # (FEAT_DIM, MEM_DIM)
    out_b: Tensor

    @classmethod
    def create(cls, registry: ParamRegistry, rng: np.random.Generator | int,
               prefix: str = "mem") -> "MemoryParams":
        if isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(int(rng))

        def reg(name, shape, fan_in):
            return registry.register(f"{prefix}/{name}",
                                     tz.he_init(shape, rng, fan_in=fan_in))

        read_fan = READ_KERNEL_ROWS * MEM_DIM
        return cls(
            past_w_in=reg("past/w_in", (MEM_DIM, FEAT_DIM), FEAT_DIM),
            past_b_in=reg("past/b_in", (MEM_DIM,), FEAT_DIM),
            past_w_out=reg("past/w_out", (MEM_DIM, FEAT_DIM), FEAT_DIM),
            past_b_out=reg("past/b_out", (MEM_DIM,), FEAT_DIM),
            future_w_in=reg("future/w_in", (MEM_DIM, FEAT_DIM), FEAT_DIM),
            future_b_in=reg("future/b_in", (MEM_DIM,), FEAT_DIM),
            future_w_out=reg("future/w_out", (MEM_DIM, FEAT_DIM), FEAT_DIM),
            future_b_out=reg("future/b_out", (MEM_DIM,), FEAT_DIM),
            query_w=reg("query/w", (MEM_DIM, FEAT_DIM), FEAT_DIM),
            query_b=reg("query/b", (MEM_DIM,), FEAT_DIM),
            read_w=reg("read/w", (READ_KERNEL_ROWS, MEM_DIM, 1, MEM_DIM), read_fan),
            read_b=reg("read/b", (MEM_DIM,), read_fan),
            out_w=reg("out/w", (FEAT_DIM, MEM_DIM), MEM_DIM),
            out_b=reg("out/b", (FEAT_DIM,), MEM_DIM),
        )


@dataclass
class MemoryBank:
    """Row-stacked input/output embeddings with a slot -> subshot id map."""

    input_embed: Tensor   # (R, MEM_DIM)
    output_embed: Tensor  # (R, MEM_DIM)
    slot_to_subshot: tuple[int, ...]  # 1-based, strictly increasing

    def __post_init__(self):
        r = self.input_embed.shape[0]
        if self.output_embed.shape[0] != r or len(self.slot_to_subshot) != r:
            raise DimensionError("memory bank rows and slot map disagree")
        if any(b <= a for a, b in zip(self.slot_to_subshot, self.slot_to_subshot[1:])):
            raise ContractError("slot map must be strictly increasing")

    @property
    def rows(self) -> int:
        return self.input_embed.shape[0]


def embed_memory(descriptors: Tensor | np.ndarray, which: Literal["past", "future"],
                 params: MemoryParams,
                 slots: Sequence[int] | None = None) -> MemoryBank:
    """ReLU input/output embeddings of (R, 2048) descriptors."""
    desc = descriptors if isinstance(descriptors, Tensor) else Tensor(descriptors)
    if desc.data.ndim != 2 or desc.shape[1] != FEAT_DIM:
        raise DimensionError(f"descriptors must be (R, {FEAT_DIM}), got {desc.shape}")
    if which == "past":
        w_in, b_in, w_out, b_out = (params.past_w_in, params.past_b_in,
                                    params.past_w_out, params.past_b_out)
    elif which == "future":
        w_in, b_in, w_out, b_out = (params.future_w_in, params.future_b_in,
                                    params.future_w_out, params.future_b_out)
    else:
        raise ConfigError(f"unknown memory kind {which!r}")
    r = desc.shape[0]
    slot_map = tuple(slots) if slots is not None else tuple(range(1, r + 1))
    if r == 0:
        dt = desc.dtype
        empty = Tensor(np.zeros((0, MEM_DIM), dtype=dt))
        return MemoryBank(empty, empty, ())
    return MemoryBank(
        input_embed=tz.relu(tz.affine(desc, w_in, b_in)),
        output_embed=tz.relu(tz.affine(desc, w_out, b_out)),
        slot_to_subshot=slot_map,
    )


def compute_query(selected_descriptors: Tensor | np.ndarray,
                  params: MemoryParams) -> Tensor:
    """Query from the mean of already-selected descriptors (zero when none)."""
    sel = (selected_descriptors if isinstance(selected_descriptors, Tensor)
           else Tensor(selected_descriptors))
    if sel.data.ndim != 2 or sel.shape[1] != FEAT_DIM:
        raise DimensionError(f"selected descriptors must be (t-1, {FEAT_DIM})")
    if sel.shape[0] == 0:
        v_avg = Tensor(np.zeros(FEAT_DIM, dtype=sel.dtype))
    else:
        v_avg = tz.mean_rows(sel)
    return tz.relu(tz.affine(v_avg, params.query_w, params.query_b))


def future_attend(bank: MemoryBank, query: Tensor) -> tuple[Tensor, Tensor]:
    """Soft attention over the future memory; rescales each input-embedding row."""
    if bank.rows == 0:
        raise DecodeExhausted("future memory is empty")
    p_f = tz.softmax(tz.matvec(bank.input_embed, query))
    return tz.row_scale(bank.input_embed, p_f), p_f


def read_key(attended: Tensor, params: MemoryParams) -> Tensor:
    """Convolve the attended future memory over time and average-pool.

    The kernel spans the full embedding width with READ_KERNEL_ROWS rows and
    READ_STRIDE vertical stride; banks shorter than the kernel are zero-padded
    at the bottom.
    """
    r = attended.shape[0]
    if r == 0:
        raise DecodeExhausted("cannot read an empty memory")
    pad_rows = max(0, READ_KERNEL_ROWS - r)
    padding = ((0, pad_rows), (0, 0)) if pad_rows else None
    planes = tz.reshape(attended, (r, MEM_DIM, 1))
    conv = tz.conv2d(planes, params.read_w, stride=(READ_STRIDE, 1), padding=padding)
    steps = conv.shape[0]
    windows = tz.add_rowvec(tz.reshape(conv, (steps, MEM_DIM)), params.read_b)
    return tz.mean_rows(windows)


def past_read(bank: MemoryBank, key: Tensor) -> Tensor:
    """Attention over past input embeddings, mixing past output embeddings."""
    if bank.rows == 0:
        raise ContractError("past memory is empty; caller must bypass at t=1")
    p_p = tz.softmax(tz.matvec(bank.input_embed, key))
    return tz.vecmat(p_p, bank.output_embed)


def compatibility(memory_out: Tensor, future_descriptors: Tensor | np.ndarray,
                  params: MemoryParams) -> Tensor:
    """Softmax over candidates of <o_t, v_j> with o_t a linear 2048-d lift."""
    cand = (future_descriptors if isinstance(future_descriptors, Tensor)
            else Tensor(future_descriptors))
    if cand.data.ndim != 2 or cand.shape[1] != FEAT_DIM or cand.shape[0] == 0:
        raise DimensionError(f"need >= 1 candidate of width {FEAT_DIM}")
    o_t = tz.affine(memory_out, params.out_w, params.out_b)
    return tz.softmax(tz.matvec(cand, o_t))


def selection_prior(n: int, m: int, t: int, z_prev: int) -> np.ndarray:
    """Ordered sampling-without-replacement prior over candidates z_prev+1..n.

    Each feasible position takes the base rate r = (m-t+1)/(n-t+1) of the
    probability surviving past earlier positions, so u decays geometrically
    on its support and is exactly zero beyond j = n-m+t (selecting later
    would leave too few subshots to finish the summary).
    """
    if not (1 <= t <= m <= n):
        raise ConfigError(f"need 1 <= t <= m <= n, got t={t}, m={m}, n={n}")
    if not (0 <= z_prev <= n):
        raise ConfigError(f"z_prev={z_prev} out of range")
    support_hi = n - m + t
    if z_prev >= support_hi:
        raise DecodeInfeasible(
            f"no feasible candidate: z_prev={z_prev} >= n-m+t={support_hi}")
    r = (m - t + 1) / (n - t + 1)
    u = np.zeros(n - z_prev, dtype=np.float64)
    survive = 1.0
    for j in range(z_prev + 1, support_hi + 1):
        u[j - z_prev - 1] = survive * r
        survive *= (1.0 - r)
    return u


def select_next(c: np.ndarray, u: np.ndarray,
                first_candidate: int) -> tuple[int, np.ndarray, bool]:
    """Greedy pick: argmax of s = c * u, lowest index on ties.

    Returns the absolute 1-based subshot id, the score vector, and a flag set
    when every score underflowed to zero (pick falls back to the first
    feasible position).
    """
    c = np.asarray(c, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if c.shape != u.shape:
        raise DimensionError(f"scores {c.shape} vs prior {u.shape}")
    s = c * u
    if np.all(s == 0.0):
        feasible = np.nonzero(u > 0)[0]
        if feasible.size == 0:
            raise DecodeInfeasible("prior has empty support")
        return first_candidate + int(feasible[0]), s, True
    return first_candidate + int(np.argmax(s)), s, False


@dataclass
class StepTrace:
    """Audit record of one decode iteration (arrays are detached copies)."""

    t: int
    z: int
    first_candidate: int
    compat: np.ndarray
    prior: np.ndarray
    scores: np.ndarray
    underflow: bool = False
    log_floored: bool = False

    def top_scores(self, k: int = 5) -> list[tuple[int, float]]:
        order = np.argsort(-self.scores, kind="stable")[:k]
        return [(self.first_candidate + int(i), float(self.scores[i])) for i in order]


@dataclass
class DecodeResult:
    indices: tuple[int, ...]       # selected subshots, 1-based, increasing
    traces: list[StepTrace]
    loss: Tensor | None = None     # sum of -log c_{z_t} when requested
    step_losses: list[float] = field(default_factory=list)


def _policy_future_window(policy: str, z_prev: int, n: int) -> tuple[int, int]:
    if policy in ("full", "pa"):
        return z_prev, n
    if policy == "ff":
        width = math.ceil(0.05 * (n - z_prev))
        return z_prev, z_prev + max(1, width)
    if policy == "fa":
        return 0, n
    raise ConfigError(f"unknown window policy {policy!r}")


def decode(features: np.ndarray | Tensor, m: int, params: MemoryParams,
           window_policy: WindowPolicy = "full",
           with_loss: bool = False,
           forced_indices: Sequence[int] | None = None) -> DecodeResult:
    """Greedily select m subshot indices from an (n, 2048) feature sequence.

    When ``with_loss`` is set, the result carries the taped sum of
    -log c_{z_t}; the picked indices act as fixed targets (the argmax itself
    contributes no gradient). ``forced_indices`` replaces the greedy pick with
    given targets (teacher forcing), e.g. for smooth loss evaluation.
    """
    feats = features if isinstance(features, Tensor) else Tensor(features)
    if feats.data.ndim != 2 or feats.shape[1] != FEAT_DIM:
        raise DimensionError(f"features must be (n, {FEAT_DIM}), got {feats.shape}")
    n = feats.shape[0]
    if not 1 <= m <= n:
        raise ConfigError(f"summary length m={m} must satisfy 1 <= m <= n={n}")
    if window_policy not in WINDOW_POLICIES:
        raise ConfigError(f"unknown window policy {window_policy!r}")
    if forced_indices is not None:
        forced_indices = tuple(int(z) for z in forced_indices)
        if len(forced_indices) != m:
            raise ConfigError(f"forced indices must have length m={m}")
        if any(b <= a for a, b in zip((0,) + forced_indices, forced_indices)):
            raise ConfigError("forced indices must be strictly increasing")
        if any(forced_indices[t - 1] > n - m + t for t in range(1, m + 1)):
            raise ConfigError("forced indices violate the feasibility bound")

    # embeddings do not depend on the step, so compute them once and slice
    future_in = tz.relu(tz.affine(feats, params.future_w_in, params.future_b_in))
    future_out = tz.relu(tz.affine(feats, params.future_w_out, params.future_b_out))
    past_in = tz.relu(tz.affine(feats, params.past_w_in, params.past_b_in))
    past_out = tz.relu(tz.affine(feats, params.past_w_out, params.past_b_out))

    selected: list[int] = []
    traces: list[StepTrace] = []
    loss: Tensor | None = None
    step_losses: list[float] = []

    for t in range(1, m + 1):
        z_prev = selected[-1] if selected else 0

        if selected:
            query = compute_query(tz.take_rows(feats, [z - 1 for z in selected]), params)
        else:
            query = compute_query(Tensor(np.zeros((0, FEAT_DIM), dtype=feats.dtype)), params)

        flo, fhi = _policy_future_window(window_policy, z_prev, n)
        future_bank = MemoryBank(
            input_embed=tz.rows(future_in, flo, fhi),
            output_embed=tz.rows(future_out, flo, fhi),
            slot_to_subshot=tuple(range(flo + 1, fhi + 1)),
        )
        attended, _ = future_attend(future_bank, query)
        key = read_key(attended, params)

        past_ids = list(range(1, z_prev + 1)) if window_policy == "pa" else selected
        if past_ids:
            past_bank = MemoryBank(
                input_embed=tz.take_rows(past_in, [z - 1 for z in past_ids]),
                output_embed=tz.take_rows(past_out, [z - 1 for z in past_ids]),
                slot_to_subshot=tuple(past_ids),
            )
            mem_out = past_read(past_bank, key)
        else:
            mem_out = key  # no past yet; feed the future key straight through

        cand = tz.rows(feats, z_prev, n)
        c = compatibility(mem_out, cand, params)
        u = selection_prior(n, m, t, z_prev)
        if forced_indices is not None:
            z = forced_indices[t - 1]
            s = np.asarray(c.data, dtype=np.float64) * u
            underflow = False
        else:
            z, s, underflow = select_next(c.data, u, z_prev + 1)

        trace = StepTrace(t=t, z=z, first_candidate=z_prev + 1,
                          compat=np.array(c.data, dtype=np.float64),
                          prior=u.copy(), scores=s, underflow=underflow)
        if with_loss:
            prob = tz.pick(c, z - (z_prev + 1))
            if float(prob.data) < LOG_FLOOR:
                trace.log_floored = True
            step_loss = tz.neg(tz.log(tz.clamp_min(prob, LOG_FLOOR)))
            step_losses.append(float(step_loss.data))
            loss = step_loss if loss is None else tz.add(loss, step_loss)
        traces.append(trace)
        selected.append(z)

    return DecodeResult(indices=tuple(selected), traces=traces,
                        loss=loss, step_losses=step_losses)


def _np_relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def _np_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return (e / e.sum(dtype=np.float64)).astype(x.dtype)


def decode_batch(features_list, m_list, params: MemoryParams,
                 window_policy: WindowPolicy = "full") -> list[tuple[int, ...]]:
    """Greedy decode of many sequences in lockstep (inference only).

    Matches ``decode`` step for step while sharing each weight-matrix read
    across the whole batch; heavy parameters are touched once per step
    instead of once per sequence.
    """
    if window_policy not in WINDOW_POLICIES:
        raise ConfigError(f"unknown window policy {window_policy!r}")
    feats = [np.asarray(f, dtype=np.float32) for f in features_list]
    if len(feats) != len(m_list):
        raise DimensionError("features and summary lengths disagree")
    ns = []
    for f, m in zip(feats, m_list):
        if f.ndim != 2 or f.shape[1] != FEAT_DIM:
            raise DimensionError(f"features must be (n, {FEAT_DIM}), got {f.shape}")
        if not 1 <= m <= f.shape[0]:
            raise ConfigError(f"summary length {m} infeasible for n={f.shape[0]}")
        ns.append(f.shape[0])
    if not feats:
        return []

    cat = np.concatenate(feats)
    offs = np.concatenate([[0], np.cumsum(ns)])
    fut_in = _np_relu(cat @ params.future_w_in.data.T + params.future_b_in.data)
    past_in = _np_relu(cat @ params.past_w_in.data.T + params.past_b_in.data)
    past_out = _np_relu(cat @ params.past_w_out.data.T + params.past_b_out.data)
    kflat = params.read_w.data.reshape(READ_KERNEL_ROWS * MEM_DIM, MEM_DIM)

    selected: list[list[int]] = [[] for _ in feats]
    for t in range(1, max(m_list) + 1):
        active = [s for s in range(len(feats)) if t <= m_list[s]]
        if not active:
            break
        vavg = np.zeros((len(active), FEAT_DIM), dtype=np.float32)
        for row, s in enumerate(active):
            if selected[s]:
                picked = cat[offs[s] + np.array(selected[s]) - 1]
                vavg[row] = (picked.sum(axis=0, dtype=np.float64)
                             / len(selected[s])).astype(np.float32)
        queries = _np_relu(vavg @ params.query_w.data.T + params.query_b.data)

        folded = np.zeros((len(active), READ_KERNEL_ROWS * MEM_DIM), dtype=np.float32)
        for row, s in enumerate(active):
            z_prev = selected[s][-1] if selected[s] else 0
            flo, fhi = _policy_future_window(window_policy, z_prev, ns[s])
            mi = fut_in[offs[s] + flo:offs[s] + fhi]
            p_f = _np_softmax(mi @ queries[row])
            attended = p_f[:, None] * mi
            steps = tz.window_count(attended.shape[0], READ_KERNEL_ROWS, READ_STRIDE)
            g = np.zeros((READ_KERNEL_ROWS, MEM_DIM), dtype=np.float32)
            for w in range(steps):
                chunk = attended[w * READ_STRIDE:w * READ_STRIDE + READ_KERNEL_ROWS]
                g[:chunk.shape[0]] += chunk
            folded[row] = (g / steps).reshape(-1)
        keys = folded @ kflat + params.read_b.data

        mem_out = np.empty((len(active), MEM_DIM), dtype=np.float32)
        for row, s in enumerate(active):
            z_prev = selected[s][-1] if selected[s] else 0
            past_ids = (list(range(1, z_prev + 1)) if window_policy == "pa"
                        else selected[s])
            if past_ids:
                rows_idx = offs[s] + np.array(past_ids) - 1
                p_p = _np_softmax(past_in[rows_idx] @ keys[row])
                mem_out[row] = p_p @ past_out[rows_idx]
            else:
                mem_out[row] = keys[row]
        outs = mem_out @ params.out_w.data.T + params.out_b.data

        for row, s in enumerate(active):
            z_prev = selected[s][-1] if selected[s] else 0
            c = _np_softmax(feats[s][z_prev:] @ outs[row])
            u = selection_prior(ns[s], m_list[s], t, z_prev)
            z, _, _ = select_next(c, u, z_prev + 1)
            selected[s].append(z)
    return [tuple(z) for z in selected]


def summary_to_json_dict(video_id: str, m: int, result: DecodeResult,
                         frame_ranges: Sequence[tuple[int, int]] | None = None) -> dict:
    """Assemble the summary record written by the CLI."""
    per_step = [{"t": tr.t, "z": tr.z, "top5_s": tr.top_scores(5)}
                for tr in result.traces]
    rec = {"video_id": video_id, "m": m, "indices": list(result.indices),
           "per_step": per_step}
    if frame_ranges is not None:
        rec["subshot_frame_ranges"] = [list(frame_ranges[z - 1]) for z in result.indices]
    return rec
