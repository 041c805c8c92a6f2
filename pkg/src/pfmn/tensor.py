"""Dense tensor engine with reverse-mode differentiation.

Tensors wrap numpy arrays (float32 storage by default, float64 supported for
shadow evaluations in tests). Every differentiable op records its parents and
a backward closure; ``backward`` replays the recorded graph in reverse
topological order. Reductions accumulate in float64 regardless of storage
dtype. Argmax-style consumers elsewhere in the package break ties by lowest
index; nothing here depends on tie order.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, ContractError

Array = np.ndarray


def _as_array(data, dtype=None) -> Array:
    a = np.asarray(data)
    if dtype is not None:
        a = a.astype(dtype, copy=False)
    elif a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float32)
    return a


class Tensor:
    """A node in the computation graph.

    ``data`` is a numpy array; ``grad`` (same shape) is populated by
    ``backward``. Leaf tensors with ``requires_grad=True`` are parameters.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple = (), _backward: Callable[[], None] | None = None,
                 name: str | None = None):
        self.data = _as_array(data, dtype)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: Array) -> None:
        if g.shape != self.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != value shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g.astype(self.data.dtype, copy=False)

    def accumulate_grad_region(self, index, g: Array) -> None:
        """Add into a sub-region of the gradient without materializing zeros."""
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        if isinstance(index, np.ndarray):
            np.add.at(self.grad, index, g)
        else:
            self.grad[index] += g

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


class Tape:
    """Reverse topological record of the graph reaching a root node.

    Built by depth-first traversal; ``nodes`` lists every reachable tensor
    with parents before children, so one reverse sweep visits each exactly
    once.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from the scalar ``loss``."""
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = Tape.from_root(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward()


def _make(data: Array, parents: Sequence[Tensor], bwd: Callable[[], None] | None) -> Tensor:
    needs = any(p.requires_grad or p._parents for p in parents)
    return Tensor(data, requires_grad=False,
                  _parents=tuple(parents) if needs else (),
                  _backward=bwd if needs else None)


def _wants_grad(t: Tensor) -> bool:
    """Whether a backward closure must propagate into this parent at all."""
    return t.requires_grad or bool(t._parents)


# ---------------------------------------------------------------------------
# elementwise and arithmetic primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: {a.shape} vs {b.shape}")
    out = _make(a.data + b.data, (a, b), None)

    def bwd():
        a.accumulate_grad(out.grad)
        b.accumulate_grad(out.grad)
    out._backward = bwd
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub: {a.shape} vs {b.shape}")
    out = _make(a.data - b.data, (a, b), None)

    def bwd():
        a.accumulate_grad(out.grad)
        b.accumulate_grad(-out.grad)
    out._backward = bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul: {a.shape} vs {b.shape}")
    out = _make(a.data * b.data, (a, b), None)

    def bwd():
        a.accumulate_grad(out.grad * b.data)
        b.accumulate_grad(out.grad * a.data)
    out._backward = bwd
    return out


def neg(a: Tensor) -> Tensor:
    out = _make(-a.data, (a,), None)

    def bwd():
        a.accumulate_grad(-out.grad)
    out._backward = bwd
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = _make(a.data * a.dtype.type(c), (a,), None)

    def bwd():
        a.accumulate_grad(out.grad * a.dtype.type(c))
    out._backward = bwd
    return out


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = _make(a.data + a.dtype.type(c), (a,), None)

    def bwd():
        a.accumulate_grad(out.grad)
    out._backward = bwd
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive input")
    out = _make(np.log(a.data), (a,), None)

    def bwd():
        a.accumulate_grad(out.grad / a.data)
    out._backward = bwd
    return out


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(x, floor); gradient passes only where x > floor."""
    out = _make(np.maximum(a.data, a.dtype.type(floor)), (a,), None)

    def bwd():
        a.accumulate_grad(out.grad * (a.data > floor))
    out._backward = bwd
    return out


def reciprocal(a: Tensor) -> Tensor:
    if np.any(a.data == 0):
        raise DomainError("reciprocal of zero")
    out = _make(1.0 / a.data, (a,), None)

    def bwd():
        a.accumulate_grad(-out.grad / (a.data * a.data))
    out._backward = bwd
    return out


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a scalar-valued tensor."""
    if s.data.ndim != 0 and s.data.size != 1:
        raise DimensionError(f"scale_by needs a scalar tensor, got {s.shape}")
    sval = s.data.reshape(())
    out = _make(a.data * sval, (a, s), None)

    def bwd():
        a.accumulate_grad(out.grad * sval)
        g = np.sum(out.grad.astype(np.float64) * a.data)
        s.accumulate_grad(np.asarray(g, dtype=s.dtype).reshape(s.data.shape))
    out._backward = bwd
    return out


def relu(a: Tensor) -> Tensor:
    out = _make(np.maximum(a.data, 0), (a,), None)

    def bwd():
        a.accumulate_grad(out.grad * (a.data > 0))
    out._backward = bwd
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # stable in both tails
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)
    out = _make(s, (a,), None)

    def bwd():
        a.accumulate_grad(out.grad * s * (1.0 - s))
    out._backward = bwd
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax of a 1-D vector with max-subtraction."""
    if a.data.ndim != 1 or a.data.size == 0:
        raise DomainError("softmax expects a nonempty 1-D vector")
    if not np.all(np.isfinite(a.data)):
        raise DomainError("softmax input must be finite")
    shifted = a.data - a.data.max()
    e = np.exp(shifted)
    denom = e.sum(dtype=np.float64)
    p = (e / denom).astype(a.dtype)
    out = _make(p, (a,), None)

    def bwd():
        g = out.grad
        inner = np.sum(g.astype(np.float64) * p, dtype=np.float64)
        a.accumulate_grad((p * (g - inner)).astype(a.dtype))
    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matvec(m: Tensor, v: Tensor) -> Tensor:
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec: {m.shape} @ {v.shape}")
    out = _make(m.data @ v.data, (m, v), None)

    def bwd():
        if _wants_grad(m):
            m.accumulate_grad(np.outer(out.grad, v.data))
        if _wants_grad(v):
            v.accumulate_grad(m.data.T @ out.grad)
    out._backward = bwd
    return out


def vecmat(v: Tensor, m: Tensor) -> Tensor:
    if v.data.ndim != 1 or m.data.ndim != 2 or v.shape[0] != m.shape[0]:
        raise DimensionError(f"vecmat: {v.shape} @ {m.shape}")
    out = _make(v.data @ m.data, (v, m), None)

    def bwd():
        if _wants_grad(v):
            v.accumulate_grad(m.data @ out.grad)
        if _wants_grad(m):
            m.accumulate_grad(np.outer(v.data, out.grad))
    out._backward = bwd
    return out


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"dot: {a.shape} vs {b.shape}")
    val = np.sum(a.data.astype(np.float64) * b.data.astype(np.float64))
    out = _make(np.asarray(val, dtype=a.dtype), (a, b), None)

    def bwd():
        a.accumulate_grad(out.grad * b.data)
        b.accumulate_grad(out.grad * a.data)
    out._backward = bwd
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """w @ x + b for a vector x, or x @ w.T + b row-wise for a matrix x.

    ``w`` is (out_dim, in_dim), ``b`` is (out_dim,).
    """
    if w.data.ndim != 2 or b.data.ndim != 1 or w.shape[0] != b.shape[0]:
        raise DimensionError(f"affine: w {w.shape}, b {b.shape}")
    if x.data.ndim == 1:
        if x.shape[0] != w.shape[1]:
            raise DimensionError(f"affine: x {x.shape} vs w {w.shape}")
        out = _make(w.data @ x.data + b.data, (x, w, b), None)

        def bwd():
            x.accumulate_grad(w.data.T @ out.grad)
            w.accumulate_grad(np.outer(out.grad, x.data))
            b.accumulate_grad(out.grad)
        out._backward = bwd
        return out
    if x.data.ndim == 2:
        if x.shape[1] != w.shape[1]:
            raise DimensionError(f"affine: x {x.shape} vs w {w.shape}")
        out = _make(x.data @ w.data.T + b.data, (x, w, b), None)

        def bwd():
            if _wants_grad(x):
                x.accumulate_grad(out.grad @ w.data)
            if _wants_grad(w):
                w.accumulate_grad(out.grad.T @ x.data)
            if _wants_grad(b):
                b.accumulate_grad(out.grad.sum(axis=0, dtype=np.float64).astype(b.dtype))
        out._backward = bwd
        return out
    raise DimensionError(f"affine: x must be 1-D or 2-D, got {x.shape}")


def matmul2d(a: Tensor, b: Tensor) -> Tensor:
    """Plain (N, K) @ (K, M) product; backward keeps GEMM operands contiguous."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul2d: {a.shape} @ {b.shape}")
    out = _make(a.data @ b.data, (a, b), None)

    def bwd():
        g = out.grad
        if _wants_grad(a):
            a.accumulate_grad(np.ascontiguousarray((b.data @ g.T).T))
        if _wants_grad(b):
            b.accumulate_grad(a.data.T @ g)
    out._backward = bwd
    return out


def index_axis0(a: Tensor, i: int) -> Tensor:
    """Differentiable a[i] along axis 0 (one row/plane)."""
    if not 0 <= i < a.shape[0]:
        raise DimensionError(f"index {i} out of range for {a.shape}")
    out = _make(a.data[i].copy(), (a,), None)

    def bwd():
        a.accumulate_grad_region(i, out.grad)
    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# reductions and reshaping
# ---------------------------------------------------------------------------

def total(a: Tensor) -> Tensor:
    """Sum of all elements to a scalar (float64 accumulation)."""
    val = a.data.sum(dtype=np.float64)
    out = _make(np.asarray(val, dtype=a.dtype), (a,), None)

    def bwd():
        a.accumulate_grad(np.broadcast_to(out.grad, a.shape).copy())
    out._backward = bwd
    return out


def mean_rows(a: Tensor) -> Tensor:
    """Mean over axis 0 of a (R, D) matrix, yielding (D,)."""
    if a.data.ndim != 2 or a.shape[0] == 0:
        raise DimensionError(f"mean_rows expects a nonempty 2-D matrix, got {a.shape}")
    r = a.shape[0]
    val = (a.data.sum(axis=0, dtype=np.float64) / r).astype(a.dtype)
    out = _make(val, (a,), None)

    def bwd():
        a.accumulate_grad(np.repeat(out.grad[None, :] / a.dtype.type(r), r, axis=0))
    out._backward = bwd
    return out


def global_avg_pool(a: Tensor) -> Tensor:
    """Mean over spatial dims of (H, W, C) -> (C,) or (B, H, W, C) -> (B, C)."""
    if a.data.ndim == 3:
        h, w, _ = a.shape
        val = (a.data.sum(axis=(0, 1), dtype=np.float64) / (h * w)).astype(a.dtype)
        out = _make(val, (a,), None)

        def bwd():
            g = out.grad / a.dtype.type(h * w)
            a.accumulate_grad(np.broadcast_to(g, a.shape).copy())
        out._backward = bwd
        return out
    if a.data.ndim == 4:
        _, h, w, _ = a.shape
        val = (a.data.sum(axis=(1, 2), dtype=np.float64) / (h * w)).astype(a.dtype)
        out = _make(val, (a,), None)

        def bwd():
            g = (out.grad / a.dtype.type(h * w))[:, None, None, :]
            a.accumulate_grad(np.broadcast_to(g, a.shape).copy())
        out._backward = bwd
        return out
    raise DimensionError(f"global_avg_pool expects 3-D or 4-D input, got {a.shape}")


def rows(a: Tensor, lo: int, hi: int) -> Tensor:
    """Differentiable slice a[lo:hi] along axis 0."""
    if not (0 <= lo <= hi <= a.shape[0]):
        raise DimensionError(f"rows: [{lo}, {hi}) out of range for {a.shape}")
    out = _make(a.data[lo:hi].copy(), (a,), None)

    def bwd():
        a.accumulate_grad_region(slice(lo, hi), out.grad)
    out._backward = bwd
    return out


def take_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    """Differentiable gather of rows by index list."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= a.shape[0])):
        raise DimensionError(f"take_rows: bad indices for {a.shape}")
    out = _make(a.data[idx].copy(), (a,), None)

    def bwd():
        a.accumulate_grad_region(idx, out.grad)
    out._backward = bwd
    return out


def fold_rows(a: Tensor, kv: int, sv: int) -> Tensor:
    """Sum strided row windows of a (R, D) matrix into a (kv, D) block.

    Rows are zero-padded at the bottom to ``kv`` when R < kv; windows start
    every ``sv`` rows while they fit. Summing windows before a kernel product
    is equivalent to convolving each window and summing the outputs.
    """
    if a.data.ndim != 2 or a.shape[0] == 0:
        raise DimensionError(f"fold_rows expects a nonempty matrix, got {a.shape}")
    r, d = a.shape
    steps = max(0, (r - kv) // sv) + 1
    g = np.zeros((kv, d), dtype=a.dtype)
    for w in range(steps):
        chunk = a.data[w * sv:w * sv + kv]
        g[:chunk.shape[0]] += chunk
    out = _make(g, (a,), None)

    def bwd():
        da = np.zeros_like(a.data)
        for w in range(steps):
            hi = min(w * sv + kv, r)
            da[w * sv:hi] += out.grad[:hi - w * sv]
        a.accumulate_grad(da)
    out._backward = bwd
    return out


def window_count(rows_: int, kv: int, sv: int) -> int:
    """Number of valid windows after bottom zero-padding to at least kv rows."""
    return max(0, (max(rows_, kv) - kv) // sv) + 1


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack same-shape vectors into a matrix (inverse of row slicing)."""
    if not parts:
        raise DimensionError("stack_rows needs at least one vector")
    if any(p.data.shape != parts[0].data.shape or p.data.ndim != 1 for p in parts):
        raise DimensionError("stack_rows requires equal-length 1-D vectors")
    out = _make(np.stack([p.data for p in parts]), tuple(parts), None)

    def bwd():
        for i, p in enumerate(parts):
            p.accumulate_grad(out.grad[i])
    out._backward = bwd
    return out


def pick(a: Tensor, index: int) -> Tensor:
    """Scalar element a[index] of a 1-D vector."""
    if a.data.ndim != 1 or not (0 <= index < a.shape[0]):
        raise DimensionError(f"pick: index {index} for {a.shape}")
    out = _make(np.asarray(a.data[index]), (a,), None)

    def bwd():
        a.accumulate_grad_region(slice(index, index + 1),
                                 out.grad.reshape(1, *out.grad.shape))
    out._backward = bwd
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    out = _make(a.data.reshape(shape), (a,), None)

    def bwd():
        a.accumulate_grad(out.grad.reshape(a.shape))
    out._backward = bwd
    return out


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add vector v to every row of matrix m."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"add_rowvec: {m.shape} + {v.shape}")
    out = _make(m.data + v.data[None, :], (m, v), None)

    def bwd():
        m.accumulate_grad(out.grad)
        v.accumulate_grad(out.grad.sum(axis=0, dtype=np.float64).astype(v.dtype))
    out._backward = bwd
    return out


def row_scale(m: Tensor, v: Tensor) -> Tensor:
    """Scale row i of matrix m by v[i]."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[0] != v.shape[0]:
        raise DimensionError(f"row_scale: {m.shape} rows vs {v.shape}")
    out = _make(m.data * v.data[:, None], (m, v), None)

    def bwd():
        m.accumulate_grad(out.grad * v.data[:, None])
        v.accumulate_grad(np.sum(out.grad.astype(np.float64) * m.data, axis=1).astype(v.dtype))
    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# convolution and batch normalization
# ---------------------------------------------------------------------------

def _pad_input(x: Array, padding) -> Array:
    if padding is None or padding == "valid":
        return x
    (pt, pb), (pl, pr) = padding
    return np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))


def conv2d(x: Tensor, kernel: Tensor, stride: tuple[int, int] = (1, 1),
           padding=None) -> Tensor:
    """Valid 2-D convolution (cross-correlation), channels last.

    ``x`` is (H, W, Cin) or (B, H, W, Cin); ``kernel`` is (kh, kw, Cin, Cout).
    ``padding`` is None/"valid" or ((top, bottom), (left, right)) explicit
    zeros. Output spatial size is floor((H + pad - kh)/sv) + 1.
    """
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError(f"conv2d: input {x.shape}, kernel {kernel.shape}")
    if xd.shape[3] != kernel.shape[2]:
        raise DimensionError(
            f"conv2d: input channels {xd.shape[3]} != kernel Cin {kernel.shape[2]}")
    sv, sh = stride
    if sv < 1 or sh < 1:
        raise ConfigError(f"conv2d: stride must be >= 1, got {stride}")
    kh, kw, cin, cout = kernel.shape
    xp = _pad_input(xd, padding)
    b, hp, wp, _ = xp.shape
    if kh > hp or kw > wp:
        raise DimensionError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // sv + 1
    wo = (wp - kw) // sh + 1

    sb, s0, s1, s2 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(b, ho, wo, kh, kw, cin),
        strides=(sb, s0 * sv, s1 * sh, s0, s1, s2), writeable=False)
    # overlapping windows can reshape to a strided view, which BLAS handles
    # through a slow fallback; force a contiguous copy before the GEMM
    cols = np.ascontiguousarray(windows.reshape(b * ho * wo, kh * kw * cin))
    kflat = kernel.data.reshape(kh * kw * cin, cout)
    y = (cols @ kflat).reshape(b, ho, wo, cout)
    out_data = y[0] if squeeze else y
    out = _make(out_data, (x, kernel), None)

    def bwd():
        g = out.grad[None] if squeeze else out.grad
        gflat = np.ascontiguousarray(g.reshape(b * ho * wo, cout))
        if _wants_grad(kernel):
            kernel.accumulate_grad((cols.T @ gflat).reshape(kernel.shape))
        if not _wants_grad(x):
            return
        # transposed product keeps both GEMM operands contiguous
        dcols = np.ascontiguousarray((kflat @ gflat.T).T).reshape(
            b, ho, wo, kh, kw, cin)
        dxp = np.zeros_like(xp)
        # fold windows back; loop over whichever index set is smaller
        if kh * kw <= ho * wo:
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + ho * sv:sv, j:j + wo * sh:sh, :] += dcols[:, :, :, i, j, :]
        else:
            for oi in range(ho):
                for oj in range(wo):
                    dxp[:, oi * sv:oi * sv + kh, oj * sh:oj * sh + kw, :] += dcols[:, oi, oj]
        if padding is None or padding == "valid":
            dx = dxp
        else:
            (pt, pb), (pl, pr) = padding
            dx = dxp[:, pt:hp - pb, pl:wp - pr, :]
        x.accumulate_grad(dx[0] if squeeze else dx)
    out._backward = bwd
    return out


class BatchNorm:
    """Per-channel batch normalization over all axes except the last.

    Running statistics use momentum 0.9 and eps 1e-5. Training mode requires
    more than one element per channel; inference mode normalizes with the
    running statistics and is deterministic.
    """

    MOMENTUM = 0.9
    EPS = 1e-5

    def __init__(self, channels: int, dtype=np.float32):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = Tensor(np.zeros(channels, dtype=dtype))
        self.running_var = Tensor(np.ones(channels, dtype=dtype))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return batchnorm(x, self.gamma, self.beta,
                         self.running_mean, self.running_var, training)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor,
              running_mean: Tensor, running_var: Tensor,
              training: bool) -> Tensor:
    if x.data.ndim < 2:
        raise DimensionError(f"batchnorm expects >= 2-D input, got {x.shape}")
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError("batchnorm: gamma/beta must match channel count")
    axes = tuple(range(x.data.ndim - 1))
    n = int(np.prod([x.shape[i] for i in axes]))
    eps = BatchNorm.EPS

    if training:
        if n <= 1:
            raise ContractError("batchnorm training mode requires batch > 1")
        mu = (x.data.sum(axis=axes, dtype=np.float64) / n).astype(x.dtype)
        var = (((x.data - mu) ** 2).sum(axis=axes, dtype=np.float64) / n).astype(x.dtype)
        m = BatchNorm.MOMENTUM
        running_mean.data[:] = m * running_mean.data + (1 - m) * mu
        running_var.data[:] = m * running_var.data + (1 - m) * var
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv
        out = _make(gamma.data * xhat + beta.data, (x, gamma, beta), None)

        def bwd():
            g = out.grad
            dbeta = g.sum(axis=axes, dtype=np.float64).astype(beta.dtype)
            dgamma = (g * xhat).sum(axis=axes, dtype=np.float64).astype(gamma.dtype)
            gh = g * gamma.data
            mean_gh = gh.sum(axis=axes, dtype=np.float64) / n
            mean_ghx = (gh * xhat).sum(axis=axes, dtype=np.float64) / n
            dx = (inv * (gh - mean_gh - xhat * mean_ghx)).astype(x.dtype)
            x.accumulate_grad(dx)
            gamma.accumulate_grad(dgamma)
            beta.accumulate_grad(dbeta)
        out._backward = bwd
        return out

    inv = 1.0 / np.sqrt(running_var.data + eps)
    xhat = (x.data - running_mean.data) * inv
    out = _make(gamma.data * xhat + beta.data, (x, gamma, beta), None)

    def bwd():
        g = out.grad
        x.accumulate_grad(g * gamma.data * inv)
        gamma.accumulate_grad((g * xhat).sum(axis=axes, dtype=np.float64).astype(gamma.dtype))
        beta.accumulate_grad(g.sum(axis=axes, dtype=np.float64).astype(beta.dtype))
    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def he_init(shape: Sequence[int], rng: np.random.Generator | int,
            fan_in: int | None = None) -> Tensor:
    """Gaussian init with standard deviation sqrt(2 / fan_in).

    ``fan_in`` defaults to the input-side extent: the last axis for a 2-D
    (out, in) weight, the product of all but the last axis for a 4-D
    (kh, kw, cin, cout) kernel, and the single extent for a 1-D tensor.
    """
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ConfigError(f"he_init: nonpositive extent in {shape}")
    if fan_in is None:
        if len(shape) == 2:
            fan_in = shape[1]
        elif len(shape) == 4:
            fan_in = shape[0] * shape[1] * shape[2]
        else:
            fan_in = shape[-1]
    if fan_in <= 0:
        raise ConfigError(f"he_init: fan_in must be positive, got {fan_in}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    std = math.sqrt(2.0 / fan_in)
    data = rng.standard_normal(shape, dtype=np.float32) * np.float32(std)
    return Tensor(data, requires_grad=True)


def constant(value, shape: Sequence[int] | None = None, dtype=np.float32,
             requires_grad: bool = False) -> Tensor:
    if shape is None:
        return Tensor(np.asarray(value, dtype=dtype), requires_grad=requires_grad)
    return Tensor(np.full(shape, value, dtype=dtype), requires_grad=requires_grad)


def primitive_forward(op: str, *inputs, **kwargs) -> Tensor:
    """Dispatch a named primitive; mirrors the op vocabulary used by models."""
    table: dict[str, Callable[..., Tensor]] = {
        "relu": relu,
        "sigmoid": sigmoid,
        "softmax": softmax,
        "affine": affine,
        "batchnorm": batchnorm,
        "global_avg_pool": global_avg_pool,
        "mean_rows": mean_rows,
    }
    if op not in table:
        raise ConfigError(f"unknown primitive {op!r}")
    return table[op](*inputs, **kwargs)
