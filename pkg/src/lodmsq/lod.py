"""Local orthogonal decomposition with multiscale quantization (LOD+MSQ).

Each residual ``r = x - c`` is split along a per-partition unit direction
``v`` into ``(r . v) v`` and the orthogonal part ``o``. The orthogonal part is
normalized, product quantized under a global rotation and rescaled by a
per-vector scale that restores ``||o||``; the scale is scalar quantized per
partition. The component along ``v``, corrected for what the quantized
orthogonal part leaks onto ``v``, is uniformly quantized per partition.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import check_data, check_positive_int, check_vector
from .index import IndexConfig, Kind, Partition, QuantizedIndex
from .quantizers import (
    PQCodebook,
    UQParams,
    _assign,
    _lloyd,
    _opq,
    encode_pq,
    encode_uq,
    quantize_sq,
    reconstruct_pq,
    train_sq,
    train_uq,
)

logger = logging.getLogger(__name__)

__all__ = [
    "TrainingOptions",
    "build_index",
    "compute_scale",
    "compute_z",
    "index_from_components",
    "msq_reconstruct",
    "proj_dir_center",
    "proj_dir_query_pca",
    "proj_orth",
    "proj_parallel",
    "train_ivf",
]

# An orthogonal component this small relative to its residual is treated as zero.
_ZERO_ORTH = 1e-12


def proj_parallel(v, x) -> np.ndarray:
    """``(x . v) v``; ``x`` may be a vector or a matrix of row vectors."""
    v = np.asarray(v, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return np.multiply.outer(x @ v, v)


def proj_orth(v, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x - proj_parallel(v, x)


def proj_dir_center(c) -> np.ndarray:
    c = check_vector(c, name="center")
    norm = np.linalg.norm(c)
    if norm == 0:
        raise ValueError("cannot derive a direction from a zero-norm center")
    return c / norm


def _fix_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(v != 0)
    if nz.size and v[nz[0]] < 0:
        v = -v
    return v


def proj_dir_query_pca(queries) -> np.ndarray:
    """Top eigenvector of the uncentered second moment ``E[q q^T]``.

    The sign is fixed so that the first nonzero coordinate is positive.
    """
    Q = check_data(queries, name="queries")
    if Q.shape[0] < 2:
        raise ValueError("need at least 2 queries to estimate a principal direction")
    moment = Q.T @ Q / Q.shape[0]
    if not np.any(moment):
        raise ValueError("query second-moment matrix is zero")
    _, vecs = np.linalg.eigh(moment)
    return _fix_sign(vecs[:, -1].copy())


def compute_scale(o, reconstruction, v) -> float:
    """Scale restoring ``||o||`` on the part of ``reconstruction`` orthogonal to ``v``.

    ``reconstruction`` is the rotated-back PQ reconstruction ``R phi(o_hat)``.
    Returns 0.0 when that orthogonal part vanishes.
    """
    den = np.linalg.norm(proj_orth(v, reconstruction))
    if den == 0:
        return 0.0
    return float(np.linalg.norm(np.asarray(o, dtype=np.float64)) / den)


def msq_reconstruct(entry, partition: Partition, index: QuantizedIndex) -> np.ndarray:
    """``scale_level * R @ reconstruct_pq(codes)`` for one stored entry."""
    recon = index.rotation @ reconstruct_pq(index.codebook, entry.pq_codes)
    if entry.sq_code is None:
        return recon
    return partition.sq_levels[entry.sq_code] * recon


def compute_z(r, msq_recon, v) -> float:
    """Projected value corrected for the parallel leak of the quantized orthogonal part."""
    return float((np.asarray(r, dtype=np.float64) - np.asarray(msq_recon, dtype=np.float64))
                 @ np.asarray(v, dtype=np.float64))


# --------------------------------------------------------------------------
# training helpers shared with the baselines


@dataclass(frozen=True)
class TrainingOptions:
    """Iteration counts and sampling for the trainers.

    ``train_size`` caps the number of vectors used to train the coarse
    quantizer and the rotation/codebooks; all vectors are always encoded.
    """

    ivf_iters: int = 25
    pq_iters: int = 10
    opq_iters: int = 20
    train_size: int | None = None
    clip_quantiles: tuple[float, float] = (0.01, 0.99)


def _as_f32(a: np.ndarray) -> np.ndarray:
    # Trained parameters are stored as float32; encode with exactly those values.
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _subsample(n: int, size: int | None, seed: int) -> np.ndarray | None:
    if size is None or size >= n:
        return None
    rng = np.random.default_rng([seed, 0x5EED])
    return np.sort(rng.choice(n, size=size, replace=False))


def train_ivf(X: np.ndarray, m: int, options: TrainingOptions, seed: int):
    """Coarse k-means. Returns float32-valued centers and the labels of all rows."""
    m = check_positive_int(m, "n_partitions")
    if m > X.shape[0]:
        raise ValueError(f"n_partitions={m} exceeds the number of vectors {X.shape[0]}")
    sel = _subsample(X.shape[0], options.train_size, seed)
    train = X if sel is None or sel.size < m else X[sel]
    centers, _, _ = _lloyd(train, m, options.ivf_iters, seed)
    centers = _as_f32(centers)
    labels, _ = _assign(X, centers)
    return centers, labels


def train_rotation_codebook(Y: np.ndarray, config: IndexConfig, options: TrainingOptions,
                            seed: int, rotate: bool = True):
    """Global rotation + PQ codebook on rows of ``Y`` (float32-valued output)."""
    sel = _subsample(Y.shape[0], options.train_size, seed + 1)
    train = Y if sel is None else Y[sel]
    if train.shape[0] < config.n_codewords:
        raise ValueError(
            f"need at least n_codewords={config.n_codewords} training vectors, "
            f"got {train.shape[0]}"
        )
    R, cb, history = _opq(train, config.n_subspaces, config.n_codewords,
                          options.opq_iters if rotate else 0, options.pq_iters, seed + 1)
    return _as_f32(R), cb.astype(np.float32), history


def _partition_members(labels: np.ndarray, m: int) -> list[np.ndarray]:
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(m + 1))
    return [order[bounds[i] : bounds[i + 1]] for i in range(m)]


def _directions(centers, labels_members, mode, queries):
    m = centers.shape[0]
    dirs = np.empty_like(centers)
    for i in range(m):
        norm = np.linalg.norm(centers[i])
        if norm == 0:
            raise ValueError(f"partition {i} has a zero-norm center; no direction")
        dirs[i] = centers[i] / norm
    if mode == "center":
        return dirs
    if mode != "query_pca":
        raise ValueError(f"unknown projection direction mode {mode!r}")
    if queries is None:
        raise ValueError("proj_dir='query_pca' needs training queries")
    Q = check_data(queries, name="queries")
    top = np.argmax(Q @ centers.T, axis=1)
    fallback = 0
    for i in range(m):
        mine = Q[top == i]
        try:
            dirs[i] = proj_dir_query_pca(mine)
        except ValueError:
            fallback += 1
    if fallback:
        warnings.warn(f"{fallback} partitions had fewer than 2 queries; "
                      "used the center direction for them")
    return dirs


# --------------------------------------------------------------------------
# index construction


def _lod_split(R_res: np.ndarray, v: np.ndarray):
    par = R_res @ v
    o = R_res - np.outer(par, v)
    o_norm = np.sqrt(np.einsum("ij,ij->i", o, o))
    r_norm = np.sqrt(np.einsum("ij,ij->i", R_res, R_res))
    zero = o_norm <= _ZERO_ORTH * r_norm
    o_hat = np.zeros_like(o)
    ok = ~zero
    o_hat[ok] = o[ok] / o_norm[ok, None]
    return par, o, o_norm, o_hat, zero


def _encode_lod_msq(centers, members, dirs, rotation, codebook, config, clip, lod_split):
    partitions = []
    exact_scales = []
    for i, rows in enumerate(members):
        v = dirs[i]
        par, o, o_norm, o_hat, zero = lod_split[i]
        codes = encode_pq(codebook, o_hat @ rotation)
        codes[zero] = 0
        recon = reconstruct_pq(codebook, codes) @ rotation.T
        recon_par = recon @ v
        orth = recon - np.outer(recon_par, v)
        den = np.sqrt(np.einsum("ij,ij->i", orth, orth))
        lam = np.zeros(rows.size)
        ok = (~zero) & (den > 0)
        lam[ok] = o_norm[ok] / den[ok]
        if rows.size:
            levels = train_sq(lam, config.sq_bits)
            sq_codes, lam_q = quantize_sq(levels, lam)
            z = par - lam_q * recon_par
            uq = train_uq(z, config.uq_bits, clip)
            uq_codes = encode_uq(uq, z)
        else:
            levels, sq_codes = np.zeros(0), np.zeros(0, dtype=np.int64)
            uq, uq_codes = UQParams(1.0, 0.0, config.uq_bits), np.zeros(0, dtype=np.int32)
        partitions.append(Partition(
            center=centers[i], ids=rows.astype(np.int64), pq_codes=codes, direction=v,
            uq=uq, uq_codes=np.asarray(uq_codes, dtype=np.int32).reshape(-1),
            sq_levels=levels, sq_codes=np.asarray(sq_codes, dtype=np.uint8).reshape(-1),
        ))
        exact_scales.append(lam)
    return partitions, exact_scales


def index_from_components(
    data,
    centers,
    rotation,
    codebook: PQCodebook,
    config: IndexConfig,
    directions=None,
    clip_quantiles: tuple[float, float] = (0.01, 0.99),
) -> QuantizedIndex:
    """Encode ``data`` with given coarse centers, rotation and PQ codebook.

    Runs the encoding half of the build (assignment, decomposition, scales,
    per-partition SQ and UQ training) without training the global parts.
    ``directions`` defaults to the normalized centers.
    """
    X = check_data(data, name="data")
    centers = check_data(centers, name="centers")
    rotation = np.asarray(rotation, dtype=np.float64)
    if centers.shape[1] != X.shape[1] or rotation.shape != (X.shape[1],) * 2:
        raise ValueError("centers/rotation do not match the data dimension")
    if codebook.dim != X.shape[1] or codebook.n_subspaces != config.n_subspaces:
        raise ValueError("codebook does not match the data dimension or config")
    if config.n_partitions != centers.shape[0]:
        raise ValueError("config.n_partitions does not match the number of centers")
    labels, _ = _assign(X, centers)
    members = _partition_members(labels, centers.shape[0])
    if directions is None:
        dirs = _directions(centers, members, "center", None)
    else:
        dirs = check_data(directions, name="directions")
    split = [_lod_split(X[rows] - centers[i], dirs[i]) for i, rows in enumerate(members)]
    parts, lam = _encode_lod_msq(centers, members, dirs, rotation, codebook, config,
                                 clip_quantiles, split)
    return QuantizedIndex(Kind.MIPS_LOD_MSQ, config, rotation, codebook, parts, X.shape[1],
                          diagnostics={"scales": lam})


def build_index(
    data,
    config: IndexConfig,
    proj_dir_mode: str = "center",
    queries=None,
    seed: int = 0,
    options: TrainingOptions | None = None,
) -> QuantizedIndex:
    """Train and encode a LOD+MSQ index.

    Steps: coarse k-means; one direction per partition; orthogonal components
    normalized; one global rotation + PQ trained on all of them; then per
    partition the norm-restoring scales (SQ) and the leak-corrected projected
    values (UQ). ``index.diagnostics["scales"]`` keeps the unquantized scales.
    """
    options = options or TrainingOptions()
    X = check_data(data, name="data")
    centers, labels = train_ivf(X, config.n_partitions, options, seed)
    members = _partition_members(labels, config.n_partitions)
    dirs = _directions(centers, members, proj_dir_mode, queries)
    split = [_lod_split(X[rows] - centers[i], dirs[i]) for i, rows in enumerate(members)]
    o_hat_all = np.concatenate([s[3][~s[4]] for s in split])
    if o_hat_all.shape[0] < config.n_codewords:
        # Almost every residual is parallel to its direction; the zero rows
        # stand in so the codebook can still be trained.
        o_hat_all = np.concatenate([s[3] for s in split])
    rotation, codebook, history = train_rotation_codebook(o_hat_all, config, options, seed)
    parts, lam = _encode_lod_msq(centers, members, dirs, rotation, codebook, config,
                                 options.clip_quantiles, split)
    logger.info("built LOD+MSQ index: %d vectors, %d partitions", X.shape[0], len(parts))
    return QuantizedIndex(Kind.MIPS_LOD_MSQ, config, rotation, codebook, parts, X.shape[1],
                          diagnostics={"scales": lam, "opq_objective": history})
