"""Named parameter registry and binary checkpoint format.

Checkpoint layout (little-endian): magic ``PFMNCKPT``, version u32, entry
count u32, then per entry: name length u16, UTF-8 name, rank u8, one u32
extent per axis, payload as float32. Entries are written in registry
insertion order, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, FormatError
from .tensor import Tensor

CKPT_MAGIC = b"PFMNCKPT"
CKPT_VERSION = 1


class ParamRegistry:
    """Unique-name map of model tensors plus per-parameter optimizer slots.

    Non-trainable entries (e.g. batchnorm running statistics) are stored and
    checkpointed but skipped by optimizers.
    """

    def __init__(self):
        self._entries: OrderedDict[str, Tensor] = OrderedDict()
        self._trainable: dict[str, bool] = {}
        self.slots: dict[str, dict[str, np.ndarray]] = {}

    def register(self, name: str, tensor: Tensor, trainable: bool = True) -> Tensor:
        if name in self._entries:
            raise ConfigError(f"parameter {name!r} registered twice")
        tensor.name = name
        tensor.requires_grad = trainable
        self._entries[name] = tensor
        self._trainable[name] = trainable
        return tensor

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def trainable_items(self):
        return ((n, t) for n, t in self._entries.items() if self._trainable[n])

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def zero_grads(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        """Per-parameter gradients after a backward pass; zeros when unreached."""
        return {n: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for n, t in self._entries.items()}

    def slot(self, optimizer: str, name: str, init) -> np.ndarray:
        """Fetch (creating on first use) the optimizer state array for a parameter."""
        store = self.slots.setdefault(optimizer, {})
        if name not in store:
            store[name] = np.asarray(init())
        return store[name]

    def num_scalars(self) -> int:
        return sum(t.data.size for t in self._entries.values())

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((n, t.data.copy()) for n, t in self._entries.items())

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for name, tensor in self._entries.items():
            if name not in state:
                if strict:
                    raise FormatError(f"checkpoint missing parameter {name!r}")
                continue
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != tensor.data.shape:
                raise DimensionError(
                    f"checkpoint entry {name!r} has shape {arr.shape}, "
                    f"expected {tensor.data.shape}")
            tensor.data = arr.copy()
        if strict:
            extra = set(state) - set(self._entries)
            if extra:
                raise FormatError(f"checkpoint has unknown parameters {sorted(extra)}")


def write_checkpoint(entries, path: str | Path) -> None:
    """Serialize (name, array) pairs or a ParamRegistry to ``path``."""
    if isinstance(entries, ParamRegistry):
        entries = entries.state_dict()
    items = list(entries.items())
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(items)))
        for name, arr in items:
            arr = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ConfigError(f"parameter name too long: {name!r}")
            if arr.ndim > 0xFF:
                raise ConfigError(f"parameter rank too large: {arr.ndim}")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_checkpoint(path: str | Path) -> OrderedDict[str, np.ndarray]:
    """Read a checkpoint into an insertion-ordered name -> float32 array map."""
    blob = Path(path).read_bytes()
    off = 0

    def need(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise FormatError(
                f"truncated checkpoint: needed {n} bytes for {what} at offset {off}, "
                f"file has {len(blob)}")
        chunk = blob[off:off + n]
        off += n
        return chunk

    if need(8, "magic") != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic in {path}")
    version, count = struct.unpack("<II", need(8, "header"))
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", need(2, "name length"))
        name = need(nlen, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", need(1, "rank"))
        shape = struct.unpack(f"<{rank}I", need(4 * rank, "extents"))
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        payload = need(nbytes, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    if off != len(blob):
        raise FormatError(
            f"trailing bytes in checkpoint: {len(blob) - off} after offset {off}")
    return out
