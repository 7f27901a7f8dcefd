"""Uniform quantization and the self-describing bitstream container.

Levels are produced by round-half-away-from-zero division by a per-group
step size, entropy coded per tensor (fresh contexts each tensor), and laid
out in a byte-exact little-endian container:

    magic "FSFL" | u16 version | u32 tensor count
    per tensor: u16 name length | name | u8 rank | u32 * rank dims
                | f64 step_size | u64 payload length | payload

The container length is the transmitted-data measurement; nothing here is
an estimate.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .coder import decode_levels, encode_levels

MAGIC = b"FSFL"
VERSION = 1

# step sizes for the two quantization groups
WEIGHT_STEP_UNIDIRECTIONAL = 4.88e-4
WEIGHT_STEP_BIDIRECTIONAL = 2.44e-4
FINE_STEP = 2.38e-6  # scaling factors, biases, batch-norm parameters


class BitstreamError(ValueError):
    """Raised when a container cannot be parsed."""


@dataclass
class QuantizedTensor:
    name: str
    shape: tuple
    step_size: float
    levels: np.ndarray  # int64, flattened row-major

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


def quantize(values: np.ndarray, step_size: float) -> np.ndarray:
    """Signed levels via round-half-away-from-zero; exact zeros stay zero."""
    if step_size <= 0:
        raise ValueError("step_size must be positive")
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot quantize non-finite values")
    return (np.sign(values) * np.floor(np.abs(values) / step_size + 0.5)).astype(np.int64)


def dequantize(levels: np.ndarray, step_size: float) -> np.ndarray:
    return np.asarray(levels, dtype=np.float64) * step_size


def quantize_tensor(name: str, values: np.ndarray, step_size: float) -> QuantizedTensor:
    arr = np.asarray(values, dtype=np.float64)
    return QuantizedTensor(
        name=name,
        shape=tuple(arr.shape),
        step_size=step_size,
        levels=quantize(arr, step_size).ravel(),
    )


def quantize_delta(delta: dict, step_for) -> list[QuantizedTensor]:
    """Quantize a named delta; ``step_for(name)`` supplies the group step."""
    return [quantize_tensor(name, arr, step_for(name)) for name, arr in delta.items()]


def dequantize_tensors(tensors: list[QuantizedTensor]) -> dict:
    return {
        qt.name: dequantize(qt.levels, qt.step_size).reshape(qt.shape)
        for qt in tensors
    }


# ---------------------------------------------------------------------------
# container
# ---------------------------------------------------------------------------

def encode(tensors: list[QuantizedTensor]) -> bytes:
    """Entropy-code tensors into a container; contexts reset per tensor."""
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for qt in tensors:
        payload = encode_levels(np.ascontiguousarray(qt.levels, dtype=np.int64))
        name = qt.name.encode("utf-8")
        parts.append(struct.pack("<H", len(name)))
        parts.append(name)
        parts.append(struct.pack("<B", len(qt.shape)))
        parts.append(struct.pack(f"<{len(qt.shape)}I", *qt.shape))
        parts.append(struct.pack("<dQ", qt.step_size, payload.size))
        parts.append(payload.tobytes())
    return b"".join(parts)


def _need(blob: bytes, pos: int, count: int, what: str) -> int:
    if pos + count > len(blob):
        raise BitstreamError(f"truncated bitstream while reading {what}")
    return pos + count


def decode(blob: bytes) -> list[QuantizedTensor]:
    """Exact inverse of :func:`encode`."""
    pos = _need(blob, 0, 10, "header")
    if blob[:4] != MAGIC:
        raise BitstreamError("bad magic; not an update bitstream")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise BitstreamError(f"unsupported bitstream version {version}")
    tensors = []
    for _ in range(count):
        start = pos
        pos = _need(blob, pos, 2, "name length")
        (name_len,) = struct.unpack_from("<H", blob, start)
        pos = _need(blob, pos, name_len, "name")
        name = blob[pos - name_len:pos].decode("utf-8")
        pos = _need(blob, pos, 1, "rank")
        rank = blob[pos - 1]
        pos = _need(blob, pos, 4 * rank, "dims")
        shape = struct.unpack_from(f"<{rank}I", blob, pos - 4 * rank)
        pos = _need(blob, pos, 16, "step size and payload length")
        step_size, payload_len = struct.unpack_from("<dQ", blob, pos - 16)
        pos = _need(blob, pos, payload_len, "payload")
        payload = np.frombuffer(blob, dtype=np.uint8, count=payload_len,
                                offset=pos - payload_len)
        n = int(np.prod(shape)) if rank else 1
        try:
            levels = decode_levels(payload, n)
        except ValueError as exc:
            raise BitstreamError(str(exc)) from None
        tensors.append(QuantizedTensor(name, tuple(shape), step_size, levels))
    if pos != len(blob):
        raise BitstreamError(f"{len(blob) - pos} trailing bytes after last tensor")
    return tensors


def inspect(blob: bytes) -> list[dict]:
    """Per-tensor byte accounting without decoding payloads."""
    pos = _need(blob, 0, 10, "header")
    if blob[:4] != MAGIC:
        raise BitstreamError("bad magic; not an update bitstream")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise BitstreamError(f"unsupported bitstream version {version}")
    rows = []
    for _ in range(count):
        start = pos
        pos = _need(blob, pos, 2, "name length")
        (name_len,) = struct.unpack_from("<H", blob, start)
        pos = _need(blob, pos, name_len, "name")
        name = blob[pos - name_len:pos].decode("utf-8")
        pos = _need(blob, pos, 1, "rank")
        rank = blob[pos - 1]
        pos = _need(blob, pos, 4 * rank, "dims")
        shape = struct.unpack_from(f"<{rank}I", blob, pos - 4 * rank)
        pos = _need(blob, pos, 16, "step size and payload length")
        step_size, payload_len = struct.unpack_from("<dQ", blob, pos - 16)
        pos = _need(blob, pos, payload_len, "payload")
        n = int(np.prod(shape)) if rank else 1
        rows.append({
            "name": name,
            "shape": tuple(shape),
            "elements": n,
            "step_size": step_size,
            "payload_bytes": int(payload_len),
            "record_bytes": pos - start,
        })
    if pos != len(blob):
        raise BitstreamError(f"{len(blob) - pos} trailing bytes after last tensor")
    return rows
