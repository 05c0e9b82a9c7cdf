"""Index containers shared by every pipeline, bitrate accounting, and the
binary index container (see ``docs/index_format.md``)."""

from __future__ import annotations

import enum
import math
import os
import struct
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .bitpack import pack_bits, pack_signed, packed_size, unpack_bits, unpack_signed
from .quantizers import PQCodebook, UQParams

__all__ = [
    "FORMAT_VERSION",
    "IndexConfig",
    "IndexFormatError",
    "Kind",
    "Partition",
    "PartitionEntry",
    "QuantizedIndex",
    "bits_per_entry",
    "deserialize_index",
    "serialize_index",
]

MAGIC = b"LODMSQIX"
FORMAT_VERSION = 1


class Kind(str, enum.Enum):
    MIPS_PQ = "mips_pq"
    MIPS_OPQ = "mips_opq"
    L2_OPQ = "l2_opq"
    MIPS_MSQ = "mips_msq"
    MIPS_LOD_OPQ = "mips_lod_opq"
    MIPS_LOD_MSQ = "mips_lod_msq"

    @classmethod
    def parse(cls, value) -> "Kind":
        """Accept enum members, values (``mips_lod_msq``) or short names (``LOD_MSQ``)."""
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        for kind in cls:
            if key in (kind.value, kind.value.removeprefix("mips_")):
                return kind
        raise ValueError(f"unknown index kind {value!r}; choose from {[k.value for k in cls]}")

    @property
    def tag(self) -> int:
        return list(Kind).index(self) + 1

    @property
    def uses_lod(self) -> bool:
        return self in (Kind.MIPS_LOD_OPQ, Kind.MIPS_LOD_MSQ)

    @property
    def uses_scales(self) -> bool:
        return self in (Kind.MIPS_MSQ, Kind.MIPS_LOD_MSQ)


@dataclass(frozen=True)
class IndexConfig:
    """Table-1 style parameters: ``n_partitions`` (m), ``n_subspaces`` (n_B),
    ``n_codewords`` (n_W), ``uq_bits`` (l_UQ), ``sq_bits`` (l_SQ)."""

    n_partitions: int
    n_subspaces: int
    n_codewords: int = 16
    uq_bits: int = 8
    sq_bits: int = 4

    def __post_init__(self):
        for name in ("n_partitions", "n_subspaces", "uq_bits", "sq_bits"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 2 <= self.n_codewords <= 256:
            raise ValueError("n_codewords must be in [2, 256]")
        if self.uq_bits > 16 or self.sq_bits > 8:
            raise ValueError("uq_bits <= 16 and sq_bits <= 8 are supported")

    @property
    def code_bits(self) -> int:
        return math.ceil(math.log2(self.n_codewords))


def bits_per_entry(config: IndexConfig, kind) -> int:
    """Stored payload bits per vector under the parity rules (SQ scale codes excluded)."""
    kind = Kind.parse(kind)
    bits = config.n_subspaces * config.code_bits
    if kind.uses_lod:
        bits += config.uq_bits
    return bits


class IndexFormatError(ValueError):
    pass


class PartitionEntry(NamedTuple):
    row_id: int
    pq_codes: np.ndarray
    sq_code: int | None
    uq_code: int | None


@dataclass
class Partition:
    center: np.ndarray
    ids: np.ndarray
    pq_codes: np.ndarray
    direction: np.ndarray | None = None
    uq: UQParams | None = None
    uq_codes: np.ndarray | None = None
    sq_levels: np.ndarray | None = None
    sq_codes: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def entry(self, j: int) -> PartitionEntry:
        return PartitionEntry(
            int(self.ids[j]),
            self.pq_codes[j],
            None if self.sq_codes is None else int(self.sq_codes[j]),
            None if self.uq_codes is None else int(self.uq_codes[j]),
        )

    def scales(self) -> np.ndarray | None:
        """Decoded per-entry scales, or ``None`` when the pipeline has none."""
        if self.sq_codes is None:
            return None
        return self.sq_levels[self.sq_codes]


@dataclass
class QuantizedIndex:
    """A built IVF index.

    ``rotation`` maps rotated space to data space: a residual is approximated
    by ``rotation @ reconstruct_pq(codebook, codes)``. For ``L2_OPQ`` indexes
    the partitions live in the augmented ``input_dim + 1`` space and
    ``l2_scale`` holds the max norm used by the transform (``None`` when the
    transform was skipped for normalized data).
    """

    kind: Kind
    config: IndexConfig
    rotation: np.ndarray
    codebook: PQCodebook
    partitions: list[Partition]
    input_dim: int
    l2_scale: float | None = None
    diagnostics: dict = field(default=None, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.rotation.shape[0]

    @property
    def n_entries(self) -> int:
        return sum(len(p) for p in self.partitions)

    @cached_property
    def centers(self) -> np.ndarray:
        return np.stack([p.center for p in self.partitions])

    @cached_property
    def directions(self) -> np.ndarray | None:
        if self.partitions[0].direction is None:
            return None
        return np.stack([p.direction for p in self.partitions])

    @cached_property
    def rotated_centers(self) -> np.ndarray:
        return self.centers @ self.rotation

    def bits_per_entry(self) -> int:
        return bits_per_entry(self.config, self.kind)


# --------------------------------------------------------------------------
# binary container

_HEADER = struct.Struct("<8sHBBIIIIIIIQd")


def serialize_index(index: QuantizedIndex, path) -> None:
    """Write ``index`` to ``path``; :func:`deserialize_index` restores it bit-exactly."""
    with open(os.fspath(path), "wb") as fh:
        fh.write(index_to_bytes(index))


def index_to_bytes(index: QuantizedIndex) -> bytes:
    cfg = index.config
    cb = index.codebook
    code_bits = cfg.code_bits
    parts = [
        _HEADER.pack(
            MAGIC, FORMAT_VERSION, index.kind.tag, 1 if index.l2_scale is not None else 0,
            index.input_dim, index.dim, cfg.n_partitions, cfg.n_subspaces, cfg.n_codewords,
            cfg.uq_bits, cfg.sq_bits, index.n_entries,
            0.0 if index.l2_scale is None else float(index.l2_scale),
        ),
        np.ascontiguousarray(index.rotation, dtype="<f4").tobytes(),
        np.array([s.stop - s.start for s in cb.slices], dtype="<u4").tobytes(),
    ]
    parts += [np.ascontiguousarray(book, dtype="<f4").tobytes() for book in cb.codebooks]
    for p in index.partitions:
        parts.append(np.asarray(p.center, dtype="<f4").tobytes())
        if p.direction is None:
            parts.append(b"\x00")
        else:
            parts.append(b"\x01" + np.asarray(p.direction, dtype="<f8").tobytes())
        if p.uq is None:
            parts.append(b"\x00")
        else:
            parts.append(b"\x01" + struct.pack("<dd", p.uq.step, p.uq.offset))
        if p.sq_levels is None:
            parts.append(struct.pack("<I", 0xFFFFFFFF))
        else:
            parts.append(struct.pack("<I", p.sq_levels.size))
            parts.append(np.asarray(p.sq_levels, dtype="<f8").tobytes())
        n = len(p)
        parts.append(struct.pack("<I", n))
        parts.append(np.asarray(p.ids, dtype="<u4").tobytes())
        parts.append(pack_bits(p.pq_codes, code_bits))
        if p.sq_codes is not None:
            parts.append(pack_bits(p.sq_codes, cfg.sq_bits))
        if p.uq_codes is not None:
            parts.append(pack_signed(p.uq_codes, cfg.uq_bits))
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise IndexFormatError("index file is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def array(self, dtype, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def deserialize_index(path) -> QuantizedIndex:
    with open(os.fspath(path), "rb") as fh:
        return index_from_bytes(fh.read())


def index_from_bytes(buf: bytes) -> QuantizedIndex:
    if len(buf) < _HEADER.size + 4:
        raise IndexFormatError("index file is truncated")
    if buf[:8] != MAGIC:
        raise IndexFormatError("bad magic: not an index file or unsupported format version")
    (magic, version, tag, flags, input_dim, dim, m, n_b, n_w, l_uq, l_sq, n_total,
     l2_scale) = _HEADER.unpack_from(buf)
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"unsupported index format version {version}")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise IndexFormatError("checksum mismatch: index file is corrupt or truncated")
    try:
        kind = list(Kind)[tag - 1]
        config = IndexConfig(m, n_b, n_w, l_uq, l_sq)
    except (IndexError, ValueError) as exc:
        raise IndexFormatError(f"invalid header: {exc}") from exc
    r = _Reader(body)
    r.pos = _HEADER.size
    rotation = r.array("<f4", dim * dim).reshape(dim, dim).astype(np.float64)
    widths = r.array("<u4", n_b)
    books = [r.array("<f4", n_w * int(w)).reshape(n_w, int(w)) for w in widths]
    codebook = PQCodebook(books)
    code_bits = config.code_bits
    partitions = []
    for _ in range(m):
        center = r.array("<f4", dim).astype(np.float64)
        direction = r.array("<f8", dim) if r.take(1) == b"\x01" else None
        uq = UQParams(*r.unpack("<dd"), l_uq) if r.take(1) == b"\x01" else None
        (n_levels,) = r.unpack("<I")
        levels = None if n_levels == 0xFFFFFFFF else r.array("<f8", n_levels)
        (n,) = r.unpack("<I")
        ids = r.array("<u4", n).astype(np.int64)
        pq_codes = unpack_bits(r.take(packed_size(n * n_b, code_bits)), code_bits, n * n_b)
        pq_codes = pq_codes.astype(np.uint8 if n_w <= 256 else np.uint16).reshape(n, n_b)
        sq_codes = uq_codes = None
        if levels is not None:
            sq_codes = unpack_bits(r.take(packed_size(n, l_sq)), l_sq, n).astype(np.uint8)
        if uq is not None:
            uq_codes = unpack_signed(r.take(packed_size(n, l_uq)), l_uq, n).astype(np.int32)
        partitions.append(Partition(center, ids, pq_codes, direction, uq, uq_codes, levels,
                                    sq_codes))
    if r.pos != len(body):
        raise IndexFormatError("trailing bytes after the last partition")
    index = QuantizedIndex(kind, config, rotation, codebook, partitions, input_dim,
                           l2_scale if flags & 1 else None)
    if index.n_entries != n_total:
        raise IndexFormatError("entry count does not match header")
    return index
