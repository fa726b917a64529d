"""Ordered parameter container and its binary wire format.

Layout (all integers little-endian):
    magic  b"STSN"
    u32    format version (currently 1)
    u32    tensor count
    per tensor:
        u16    name length, then that many UTF-8 bytes
        u8     rank
        u32[]  one dim per rank
        f32[]  values, C order
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import Tensor

MAGIC = b"STSN"
VERSION = 1


class StoreFormatError(ValueError):
    """Raised for truncated or structurally invalid parameter blobs."""


class StoreVersionError(ValueError):
    """Raised when the blob's format version is not the supported one."""


class StoreShapeError(ValueError):
    """Raised when loaded tensors do not match the target store's shapes."""


class ParamStore:
    """Ordered name -> Tensor map of trainable parameters."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = data if isinstance(data, Tensor) else Tensor(np.asarray(data))
        t.requires_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self):
        return iter(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def subset(self, prefix: str) -> dict[str, Tensor]:
        """Live view (same Tensor objects) of parameters under a dotted prefix."""
        dot = prefix if prefix.endswith(".") else prefix + "."
        return {k: v for k, v in self._params.items() if k.startswith(dot)}

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for k, v in self._params.items():
            out.add(k, v.data.astype(dtype))
        return out

    # -- serialization ------------------------------------------------------

    def to_bytes(self) -> bytes:
        chunks = [MAGIC, struct.pack("<II", VERSION, len(self._params))]
        for name, t in self._params.items():
            raw = name.encode("utf-8")
            chunks.append(struct.pack("<H", len(raw)))
            chunks.append(raw)
            chunks.append(struct.pack("<B", t.ndim))
            chunks.append(struct.pack(f"<{t.ndim}I", *t.shape))
            chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
        return b"".join(chunks)

    @staticmethod
    def parse_bytes(blob: bytes) -> dict[str, np.ndarray]:
        """Decode a blob into name -> float32 array, validating the framing."""
        view = memoryview(blob)
        pos = 0

        def take(n: int, what: str) -> memoryview:
            nonlocal pos
            if pos + n > len(view):
                raise StoreFormatError(f"corrupt parameter blob: truncated while reading {what}")
            out = view[pos : pos + n]
            pos += n
            return out

        if bytes(take(4, "magic")) != MAGIC:
            raise StoreFormatError(f"corrupt parameter blob: bad magic (expected {MAGIC!r})")
        version, count = struct.unpack("<II", take(8, "header"))
        if version != VERSION:
            raise StoreVersionError(f"unsupported format version {version}, this build reads version {VERSION}")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", take(2, "name length"))
            name = bytes(take(name_len, "name")).decode("utf-8")
            (rank,) = struct.unpack("<B", take(1, "rank"))
            dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(take(4 * n, f"values of {name!r}"), dtype="<f4").reshape(dims)
            if name in tensors:
                raise StoreFormatError(f"corrupt parameter blob: duplicate tensor {name!r}")
            tensors[name] = data.astype(np.float32)
        if pos != len(view):
            raise StoreFormatError(f"corrupt parameter blob: {len(view) - pos} trailing bytes")
        return tensors

    def load_bytes(self, blob: bytes) -> None:
        """Overwrite this store's values from a blob; names and shapes must match."""
        tensors = ParamStore.parse_bytes(blob)
        missing = [k for k in self._params if k not in tensors]
        extra = [k for k in tensors if k not in self._params]
        if missing or extra:
            raise StoreShapeError(f"parameter names do not match: missing {missing[:3]}, unexpected {extra[:3]}")
        for name, arr in tensors.items():
            t = self._params[name]
            if tuple(arr.shape) != tuple(t.shape):
                raise StoreShapeError(f"tensor {name!r} has shape {arr.shape}, model expects {tuple(t.shape)}")
            t.data = arr.astype(t.dtype)
            t.grad = None
