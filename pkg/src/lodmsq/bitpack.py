"""Fixed-width bit packing (LSB-first) for code arrays."""

from __future__ import annotations

import numpy as np


def packed_size(count: int, bits: int) -> int:
    return (count * bits + 7) // 8


def pack_bits(values, bits: int) -> bytes:
    """Pack non-negative integers, ``bits`` each, least significant bit first."""
    v = np.asarray(values, dtype=np.uint64).ravel()
    if bits < 1 or bits > 32:
        raise ValueError(f"bits must be in [1, 32], got {bits}")
    if v.size and int(v.max()) >= (1 << bits):
        raise ValueError(f"value {int(v.max())} does not fit in {bits} bits")
    planes = (v[:, None] >> np.arange(bits, dtype=np.uint64)[None, :]) & np.uint64(1)
    return np.packbits(planes.astype(np.uint8).ravel(), bitorder="little").tobytes()


def unpack_bits(buf, bits: int, count: int) -> np.ndarray:
    raw = np.frombuffer(buf, dtype=np.uint8)
    if raw.size < packed_size(count, bits):
        raise ValueError("packed buffer too short")
    flat = np.unpackbits(raw, bitorder="little")[: count * bits].reshape(count, bits)
    weights = np.uint64(1) << np.arange(bits, dtype=np.uint64)
    return (flat.astype(np.uint64) * weights[None, :]).sum(axis=1, dtype=np.uint64)


def pack_signed(values, bits: int) -> bytes:
    """Two's-complement packing of signed codes in ``[-2**(bits-1), 2**(bits-1) - 1]``."""
    v = np.asarray(values, dtype=np.int64).ravel()
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if v.size and (v.min() < lo or v.max() > hi):
        raise ValueError(f"signed codes out of the {bits}-bit range")
    return pack_bits(np.where(v < 0, v + (1 << bits), v), bits)


def unpack_signed(buf, bits: int, count: int) -> np.ndarray:
    u = unpack_bits(buf, bits, count).astype(np.int64)
    return np.where(u >= (1 << (bits - 1)), u - (1 << bits), u)
