"""Comparison pipelines sharing the IVF + ADC machinery.

* ``MIPS_PQ``: PQ on residuals.
* ``MIPS_OPQ``: global rotation + PQ on residuals.
* ``L2_OPQ``: one-dimension MIPS->l2 augmentation, then l2 IVF + OPQ.
* ``MIPS_MSQ``: norm-preserving scale + OPQ on the whole residual, no LOD.
* ``MIPS_LOD_OPQ``: LOD, OPQ on the (unnormalized) orthogonal part, UQ on
  the leak-corrected projected part; no scales.
* ``MIPS_LOD_MSQ``: :func:`lodmsq.lod.build_index`.
"""

from __future__ import annotations

import numpy as np

from ._validation import check_data, check_vector
from .index import IndexConfig, Kind, Partition, QuantizedIndex
from .lod import (
    TrainingOptions,
    _directions,
    _lod_split,
    _partition_members,
    build_index,
    train_ivf,
    train_rotation_codebook,
)
from .quantizers import encode_pq, encode_uq, quantize_sq, reconstruct_pq, train_sq, train_uq
from .search import SearchResult, search

__all__ = ["build_baseline", "mips_to_l2_transform", "search_baseline", "transform_query_l2"]

# Rows whose norms all lie within this of 1 are treated as already normalized.
_UNIT_TOL = 1e-5


def mips_to_l2_transform(data) -> tuple[np.ndarray, float]:
    """Append ``sqrt(1 - (||x|| / U)**2)`` after scaling by ``U = max ||x||``.

    Returns the ``(N, d + 1)`` augmented data and ``U``.
    """
    X = check_data(data, name="data")
    norms = np.sqrt(np.einsum("ij,ij->i", X, X))
    U = float(norms.max())
    if U == 0:
        return np.hstack([X, np.ones((X.shape[0], 1))]), 1.0
    extra = np.sqrt(np.maximum(1.0 - (norms / U) ** 2, 0.0))
    return np.hstack([X / U, extra[:, None]]), U


def transform_query_l2(q) -> np.ndarray:
    q = check_vector(q, name="query")
    norm = np.linalg.norm(q)
    if norm == 0:
        raise ValueError("zero-norm query cannot be mapped to the l2 space")
    return np.concatenate([q / norm, [0.0]])


def _plain_partitions(X, centers, members, rotation, codebook):
    parts = []
    for i, rows in enumerate(members):
        res = X[rows] - centers[i]
        parts.append(Partition(center=centers[i], ids=rows.astype(np.int64),
                               pq_codes=encode_pq(codebook, res @ rotation)))
    return parts


def _build_plain(X, config, options, seed, rotate):
    centers, labels = train_ivf(X, config.n_partitions, options, seed)
    members = _partition_members(labels, config.n_partitions)
    residuals = X - centers[labels]
    rotation, codebook, _ = train_rotation_codebook(residuals, config, options, seed, rotate)
    return centers, members, rotation, codebook


def _build_msq(X, config, options, seed):
    centers, labels = train_ivf(X, config.n_partitions, options, seed)
    members = _partition_members(labels, config.n_partitions)
    res_all = X - centers[labels]
    norms = np.sqrt(np.einsum("ij,ij->i", res_all, res_all))
    unit = np.zeros_like(res_all)
    ok = norms > 0
    unit[ok] = res_all[ok] / norms[ok, None]
    train = unit[ok] if ok.sum() >= config.n_codewords else unit
    rotation, codebook, _ = train_rotation_codebook(train, config, options, seed)
    parts, scales = [], []
    for i, rows in enumerate(members):
        codes = encode_pq(codebook, unit[rows] @ rotation)
        codes[~ok[rows]] = 0
        recon = reconstruct_pq(codebook, codes) @ rotation.T
        den = np.sqrt(np.einsum("ij,ij->i", recon, recon))
        lam = np.where(ok[rows] & (den > 0), norms[rows] / np.where(den > 0, den, 1.0), 0.0)
        levels = train_sq(lam, config.sq_bits) if rows.size else np.zeros(0)
        sq_codes = quantize_sq(levels, lam)[0] if rows.size else np.zeros(0)
        parts.append(Partition(center=centers[i], ids=rows.astype(np.int64), pq_codes=codes,
                               sq_levels=levels, sq_codes=np.asarray(sq_codes, dtype=np.uint8)))
        scales.append(lam)
    return QuantizedIndex(Kind.MIPS_MSQ, config, rotation, codebook, parts, X.shape[1],
                          diagnostics={"scales": scales})


def _build_lod_opq(X, config, options, seed, proj_dir_mode, queries):
    centers, labels = train_ivf(X, config.n_partitions, options, seed)
    members = _partition_members(labels, config.n_partitions)
    dirs = _directions(centers, members, proj_dir_mode, queries)
    split = [_lod_split(X[rows] - centers[i], dirs[i]) for i, rows in enumerate(members)]
    o_all = np.concatenate([s[1] for s in split])
    rotation, codebook, _ = train_rotation_codebook(o_all, config, options, seed)
    parts = []
    for i, rows in enumerate(members):
        par, o = split[i][0], split[i][1]
        codes = encode_pq(codebook, o @ rotation)
        recon_par = (reconstruct_pq(codebook, codes) @ rotation.T) @ dirs[i]
        z = par - recon_par
        if rows.size:
            uq = train_uq(z, config.uq_bits, options.clip_quantiles)
            uq_codes = encode_uq(uq, z)
        else:
            uq, uq_codes = train_uq([0.0], config.uq_bits), np.zeros(0)
        parts.append(Partition(center=centers[i], ids=rows.astype(np.int64), pq_codes=codes,
                               direction=dirs[i], uq=uq,
                               uq_codes=np.asarray(uq_codes, dtype=np.int32).reshape(-1)))
    return QuantizedIndex(Kind.MIPS_LOD_OPQ, config, rotation, codebook, parts, X.shape[1])


def build_baseline(
    kind,
    data,
    config: IndexConfig,
    seed: int = 0,
    options: TrainingOptions | None = None,
    proj_dir_mode: str = "center",
    queries=None,
) -> QuantizedIndex:
    """Train and encode an index of the given ``kind`` (see module docstring)."""
    kind = Kind.parse(kind)
    options = options or TrainingOptions()
    X = check_data(data, name="data")
    if kind is Kind.MIPS_LOD_MSQ:
        return build_index(X, config, proj_dir_mode, queries, seed, options)
    if kind is Kind.MIPS_LOD_OPQ:
        return _build_lod_opq(X, config, options, seed, proj_dir_mode, queries)
    if kind is Kind.MIPS_MSQ:
        return _build_msq(X, config, options, seed)
    l2_scale = None
    if kind is Kind.L2_OPQ:
        norms = np.sqrt(np.einsum("ij,ij->i", X, X))
        if np.all(np.abs(norms - 1.0) <= _UNIT_TOL):
            # Unit-norm data: l2 neighbors already coincide with MIPS.
            pass
        else:
            X, l2_scale = mips_to_l2_transform(X)
    centers, members, rotation, codebook = _build_plain(
        X, config, options, seed, rotate=kind is not Kind.MIPS_PQ
    )
    parts = _plain_partitions(X, centers, members, rotation, codebook)
    input_dim = X.shape[1] - (1 if l2_scale is not None else 0)
    return QuantizedIndex(kind, config, rotation, codebook, parts, input_dim, l2_scale)


def search_baseline(kind, index: QuantizedIndex, q, k: int, m_adc: int | None = None
                    ) -> SearchResult:
    """Search entry point shared by all kinds; checks that ``index`` matches ``kind``."""
    kind = Kind.parse(kind)
    if index.kind is not kind:
        raise ValueError(f"index was built as {index.kind.value}, not {kind.value}")
    return search(q, k, index, m_adc)
