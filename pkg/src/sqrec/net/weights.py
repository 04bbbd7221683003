"""Binary weight checkpoints (SQWT).

Layout, little-endian throughout:

    magic    4 bytes  b"SQWT"
    version  u16
    digest   32 bytes (SHA-256 of the architecture description)
    nblocks  u32
    per block:
        name_len u16, name (utf-8)
        ndim     u8,  dims (u32 each)
        data     float32, C order

Block order is preserved, values round-trip bit-exactly, and readers reject
wrong magic, wrong version, or a digest that does not match the architecture
they were asked to load for.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..rendering import FormatError

WEIGHTS_MAGIC = b"SQWT"
WEIGHTS_VERSION = 1


@dataclass
class ModelWeights:
    """Named float32 arrays plus the digest of the producing architecture."""

    arch_digest: bytes
    blocks: dict

    def __post_init__(self):
        if len(self.arch_digest) != 32:
            raise ValueError(f"architecture digest must be 32 bytes, "
                             f"got {len(self.arch_digest)}")
        for name, arr in self.blocks.items():
            arr = np.asarray(arr)
            if arr.dtype != np.float32:
                raise ValueError(f"block {name!r} is {arr.dtype}, expected float32")
            if name.endswith(".running_var") and not np.all(arr > 0.0):
                raise ValueError(f"block {name!r} must be strictly positive")

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.arch_digest,
                            {k: v.copy() for k, v in self.blocks.items()})

    def allclose(self, other: "ModelWeights", **kw) -> bool:
        if self.arch_digest != other.arch_digest or set(self.blocks) != set(other.blocks):
            return False
        return all(np.allclose(self.blocks[k], other.blocks[k], **kw) for k in self.blocks)


def write_weights(weights: ModelWeights, path) -> None:
    path = Path(path)
    parts = [struct.pack("<4sH", WEIGHTS_MAGIC, WEIGHTS_VERSION),
             weights.arch_digest,
             struct.pack("<I", len(weights.blocks))]
    for name, arr in weights.blocks.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    path.write_bytes(b"".join(parts))


def read_weights(path, expected_digest: bytes = None) -> ModelWeights:
    path = Path(path)
    data = path.read_bytes()
    view = memoryview(data)
    off = 0

    def take(n: int) -> memoryview:
        nonlocal off
        if off + n > len(view):
            raise FormatError(f"{path}: truncated weight file")
        chunk = view[off : off + n]
        off += n
        return chunk

    magic, version = struct.unpack("<4sH", take(6))
    if magic != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{path}: unsupported weight version {version}")
    digest = bytes(take(32))
    if expected_digest is not None and digest != expected_digest:
        raise FormatError(f"{path}: weights were produced for a different "
                          f"architecture (digest {digest.hex()[:12]}..., "
                          f"expected {expected_digest.hex()[:12]}...)")
    (nblocks,) = struct.unpack("<I", take(4))
    blocks = {}
    for _ in range(nblocks):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).copy()
        blocks[name] = arr
    if off != len(view):
        raise FormatError(f"{path}: {len(view) - off} trailing bytes after last block")
    return ModelWeights(digest, blocks)
