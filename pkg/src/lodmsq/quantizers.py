"""Trainable quantizers: k-means VQ, PQ, OPQ, non-uniform SQ and clipped UQ.

Every trainer is available as a plain function and wrapped by a small
scikit-learn style estimator (``fit`` / ``transform`` / ``inverse_transform``).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_data, check_positive_int, check_vector

logger = logging.getLogger(__name__)

__all__ = [
    "OptimizedProductQuantizer",
    "PQCodebook",
    "ProductQuantizer",
    "ScalarQuantizer",
    "UQParams",
    "UniformQuantizer",
    "VectorQuantizer",
    "assign_vq",
    "decode_uq",
    "encode_pq",
    "encode_uq",
    "quantize_sq",
    "reconstruct_pq",
    "round_half_away",
    "subspace_slices",
    "train_opq",
    "train_pq",
    "train_sq",
    "train_uq",
    "train_vq",
]

_CHUNK = 8192


# --------------------------------------------------------------------------
# vector quantization (Lloyd k-means)


def _assign(X: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest center per row (ties -> smaller index) and squared distance."""
    c_sq = np.einsum("ij,ij->i", C, C)
    labels = np.empty(X.shape[0], dtype=np.int64)
    dist = np.empty(X.shape[0], dtype=np.float64)
    for s in range(0, X.shape[0], _CHUNK):
        blk = X[s : s + _CHUNK]
        partial = c_sq[None, :] - 2.0 * (blk @ C.T)
        lab = np.argmin(partial, axis=1)
        labels[s : s + _CHUNK] = lab
        x_sq = np.einsum("ij,ij->i", blk, blk)
        dist[s : s + _CHUNK] = np.maximum(partial[np.arange(blk.shape[0]), lab] + x_sq, 0.0)
    return labels, dist


def _kmeans_pp(X: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, m):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[chosen].copy()


def _update_centers(X, labels, centers, dist):
    m, d = centers.shape
    counts = np.bincount(labels, minlength=m)
    # Per-column bincount sums in row order, like np.add.at but much faster.
    sums = np.stack([np.bincount(labels, weights=X[:, j], minlength=m) for j in range(d)], axis=1)
    new = centers.copy()
    nz = counts > 0
    new[nz] = sums[nz] / counts[nz, None]
    for empty in np.flatnonzero(counts == 0):
        # Re-seed from the farthest point of the currently largest cluster.
        big = int(np.argmax(counts))
        members = np.flatnonzero(labels == big)
        far = members[int(np.argmax(dist[members]))]
        new[empty] = X[far]
        labels[far] = empty
        dist[far] = 0.0
        counts[big] -= 1
        counts[empty] = 1
    return new


def _lloyd(X, m, max_iters, seed, init=None):
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(X, m, rng) if init is None else np.array(init, dtype=np.float64)
    labels, dist = _assign(X, centers)
    history = [float(dist.sum())]
    for _ in range(max_iters):
        centers = _update_centers(X, labels, centers, dist)
        new_labels, dist = _assign(X, centers)
        history.append(float(dist.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centers, labels, history


def train_vq(data, m: int, max_iters: int = 25, seed: int = 0) -> np.ndarray:
    """Lloyd k-means from k-means++ seeding; returns the ``(m, d)`` centers."""
    X = check_data(data, name="data")
    m = check_positive_int(m, "m")
    if m > X.shape[0]:
        raise ValueError(f"m={m} exceeds the number of points {X.shape[0]}")
    centers, _, _ = _lloyd(X, m, max_iters, seed)
    return centers


def assign_vq(centers, x) -> np.ndarray | int:
    """Index of the nearest center (l2), ties to the smaller index.

    ``x`` may be one vector (returns an int) or a matrix (returns an array).
    """
    C = check_data(centers, name="centers")
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        check_vector(arr, C.shape[1])
        return int(_assign(arr[None, :], C)[0][0])
    X = check_data(arr)
    if X.shape[1] != C.shape[1]:
        raise ValueError(f"dimension {X.shape[1]} does not match centers {C.shape[1]}")
    return _assign(X, C)[0]


class VectorQuantizer(TransformerMixin, BaseEstimator):
    """k-means codebook. ``predict`` gives codes, ``transform`` the nearest center."""

    def __init__(self, n_clusters: int = 8, max_iter: int = 25, random_state: int = 0):
        self.n_clusters = n_clusters
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_data(X)
        m = check_positive_int(self.n_clusters, "n_clusters")
        if m > X.shape[0]:
            raise ValueError(f"n_clusters={m} exceeds the number of points {X.shape[0]}")
        self.cluster_centers_, self.labels_, self.inertia_history_ = _lloyd(
            X, m, self.max_iter, self.random_state
        )
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        return assign_vq(self.cluster_centers_, check_data(X))

    def transform(self, X):
        return self.cluster_centers_[self.predict(X)]


# --------------------------------------------------------------------------
# product quantization


def subspace_slices(d: int, n_subspaces: int) -> list[slice]:
    """Contiguous slices; the last subspace absorbs ``d % n_subspaces``."""
    if n_subspaces < 1 or n_subspaces > d:
        raise ValueError(f"n_subspaces={n_subspaces} must be in [1, d={d}]")
    width = d // n_subspaces
    bounds = [i * width for i in range(n_subspaces)] + [d]
    return [slice(bounds[i], bounds[i + 1]) for i in range(n_subspaces)]


@dataclass
class PQCodebook:
    """Per-subspace codebooks; ``codebooks[b]`` has shape ``(n_codewords, width_b)``."""

    codebooks: list[np.ndarray]
    slices: list[slice] = field(default=None)

    def __post_init__(self):
        self.codebooks = [np.asarray(c, dtype=np.float64) for c in self.codebooks]
        if not self.codebooks:
            raise ValueError("empty codebook")
        n_w = {c.shape[0] for c in self.codebooks}
        if len(n_w) != 1:
            raise ValueError("all subspaces need the same number of codewords")
        if self.codebooks[0].shape[0] < 2:
            raise ValueError("need at least 2 codewords per subspace")
        if self.slices is None:
            d = sum(c.shape[1] for c in self.codebooks)
            self.slices = subspace_slices(d, len(self.codebooks))
        for c, s in zip(self.codebooks, self.slices):
            if c.shape[1] != s.stop - s.start:
                raise ValueError("codebook width does not match its subspace")

    @property
    def n_subspaces(self) -> int:
        return len(self.codebooks)

    @property
    def n_codewords(self) -> int:
        return self.codebooks[0].shape[0]

    @property
    def dim(self) -> int:
        return self.slices[-1].stop

    @property
    def code_bits(self) -> int:
        return int(np.ceil(np.log2(self.n_codewords)))

    def astype(self, dtype) -> "PQCodebook":
        """Copy with codewords rounded through ``dtype`` (kept as float64)."""
        return PQCodebook([c.astype(dtype).astype(np.float64) for c in self.codebooks])


def _code_dtype(n_codewords):
    return np.uint8 if n_codewords <= 256 else np.uint16


def train_pq(
    data, n_subspaces: int, n_codewords: int, max_iters: int = 10, seed: int = 0, init=None
) -> PQCodebook:
    """Independent k-means per contiguous subspace (same seed in every subspace).

    ``init`` warm-starts Lloyd from an existing :class:`PQCodebook`.
    """
    X = check_data(data, name="data")
    n_codewords = check_positive_int(n_codewords, "n_codewords", minimum=2)
    if n_codewords > X.shape[0]:
        raise ValueError(f"n_codewords={n_codewords} exceeds the number of points {X.shape[0]}")
    slices = subspace_slices(X.shape[1], n_subspaces)
    books = []
    for b, s in enumerate(slices):
        sub = np.ascontiguousarray(X[:, s])
        start = None if init is None else init.codebooks[b]
        centers, _, _ = _lloyd(sub, n_codewords, max_iters, seed, init=start)
        books.append(centers)
    return PQCodebook(books, slices)


def encode_pq(cb: PQCodebook, x) -> np.ndarray:
    """Nearest codeword per subspace. 1-d input gives ``(n_B,)``, 2-d ``(n, n_B)``."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    X = arr[None, :] if single else arr
    if X.shape[1] != cb.dim:
        raise ValueError(f"dimension {X.shape[1]} does not match codebook {cb.dim}")
    codes = np.empty((X.shape[0], cb.n_subspaces), dtype=_code_dtype(cb.n_codewords))
    for b, (book, s) in enumerate(zip(cb.codebooks, cb.slices)):
        codes[:, b] = _assign(np.ascontiguousarray(X[:, s]), book)[0]
    return codes[0] if single else codes


def reconstruct_pq(cb: PQCodebook, codes) -> np.ndarray:
    codes = np.asarray(codes)
    single = codes.ndim == 1
    C = codes[None, :] if single else codes
    if C.shape[1] != cb.n_subspaces:
        raise ValueError(f"expected {cb.n_subspaces} codes per vector, got {C.shape[1]}")
    out = np.empty((C.shape[0], cb.dim), dtype=np.float64)
    for b, (book, s) in enumerate(zip(cb.codebooks, cb.slices)):
        out[:, s] = book[C[:, b]]
    return out[0] if single else out


def _procrustes(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Orthonormal ``R`` minimizing ``||X - Y R^T||_F`` (rows: x ~ R y)."""
    U, _, Vt = np.linalg.svd(X.T @ Y)
    return U @ Vt


def _opq(X, n_subspaces, n_codewords, outer_iters, inner_iters, seed):
    d = X.shape[1]
    R = np.eye(d)
    cb = train_pq(X, n_subspaces, n_codewords, inner_iters, seed)
    codes = encode_pq(cb, X)
    history = [float(np.sum((X - reconstruct_pq(cb, codes)) ** 2))]
    for _ in range(outer_iters):
        recon = reconstruct_pq(cb, codes)
        try:
            R_new = _procrustes(X, recon)
        except np.linalg.LinAlgError as exc:
            warnings.warn(f"OPQ rotation update failed ({exc}); keeping identity rotation")
            R = np.eye(d)
            cb = train_pq(X, n_subspaces, n_codewords, inner_iters, seed)
            codes = encode_pq(cb, X)
            history.append(float(np.sum((X - reconstruct_pq(cb, codes)) ** 2)))
            break
        R = R_new
        Y = X @ R
        cb = train_pq(Y, n_subspaces, n_codewords, inner_iters, seed, init=cb)
        codes = encode_pq(cb, Y)
        history.append(float(np.sum((Y - reconstruct_pq(cb, codes)) ** 2)))
    return R, cb, history


def train_opq(
    data,
    n_subspaces: int,
    n_codewords: int,
    outer_iters: int = 20,
    seed: int = 0,
    inner_iters: int = 10,
) -> tuple[np.ndarray, PQCodebook]:
    """Rotation ``R`` and codebook with ``x ~ R @ reconstruct_pq(encode_pq(R.T @ x))``.

    Alternates Procrustes rotation updates with Lloyd refinement of the PQ
    codebooks warm-started from the previous round, which keeps the
    distortion non-increasing.
    """
    X = check_data(data, name="data")
    if X.shape[1] < n_subspaces:
        raise ValueError(f"d={X.shape[1]} is smaller than n_subspaces={n_subspaces}")
    R, cb, _ = _opq(X, n_subspaces, n_codewords, outer_iters, inner_iters, seed)
    return R, cb


class ProductQuantizer(TransformerMixin, BaseEstimator):
    def __init__(self, n_subspaces: int = 8, n_codewords: int = 16, max_iter: int = 10,
                 random_state: int = 0):
        self.n_subspaces = n_subspaces
        self.n_codewords = n_codewords
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        self.codebook_ = train_pq(X, self.n_subspaces, self.n_codewords, self.max_iter,
                                  self.random_state)
        return self

    def transform(self, X):
        check_is_fitted(self, "codebook_")
        return encode_pq(self.codebook_, check_data(X))

    def inverse_transform(self, codes):
        check_is_fitted(self, "codebook_")
        return reconstruct_pq(self.codebook_, codes)


class OptimizedProductQuantizer(ProductQuantizer):
    """PQ preceded by a learned rotation (``rotation_``)."""

    def __init__(self, n_subspaces: int = 8, n_codewords: int = 16, max_iter: int = 10,
                 n_outer_iter: int = 20, random_state: int = 0):
        super().__init__(n_subspaces, n_codewords, max_iter, random_state)
        self.n_outer_iter = n_outer_iter

    def fit(self, X, y=None):
        X = check_data(X)
        self.rotation_, self.codebook_, self.objective_history_ = _opq(
            X, self.n_subspaces, self.n_codewords, self.n_outer_iter, self.max_iter,
            self.random_state,
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "codebook_")
        return encode_pq(self.codebook_, check_data(X) @ self.rotation_)

    def inverse_transform(self, codes):
        check_is_fitted(self, "codebook_")
        return reconstruct_pq(self.codebook_, codes) @ self.rotation_.T


# --------------------------------------------------------------------------
# scalar quantizers


def round_half_away(t):
    t = np.asarray(t, dtype=np.float64)
    return np.sign(t) * np.floor(np.abs(t) + 0.5)


@dataclass(frozen=True)
class UQParams:
    """Uniform grid ``step * code + offset`` with signed ``bits``-bit codes."""

    step: float
    offset: float
    bits: int

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.bits < 1:
            raise ValueError("bits must be >= 1")

    @property
    def code_range(self) -> tuple[int, int]:
        return -(2 ** (self.bits - 1)), 2 ** (self.bits - 1) - 1


def train_uq(values, bits: int, clip_quantiles: tuple[float, float] = (0.01, 0.99)) -> UQParams:
    """Fit step/offset so the clipped range maps onto the signed code range.

    ``clip_quantiles=(0.0, 1.0)`` uses the exact min and max.
    """
    z = np.asarray(values, dtype=np.float64).ravel()
    if z.size == 0:
        raise ValueError("train_uq needs at least one value")
    if not np.all(np.isfinite(z)):
        raise ValueError("train_uq input contains non-finite values")
    bits = check_positive_int(bits, "bits")
    lo_q, hi_q = clip_quantiles
    if not 0.0 <= lo_q <= hi_q <= 1.0:
        raise ValueError(f"invalid clip quantiles {clip_quantiles}")
    z_min = float(np.quantile(z, lo_q)) if lo_q > 0 else float(z.min())
    z_max = float(np.quantile(z, hi_q)) if hi_q < 1 else float(z.max())
    if z_max == z_min:
        return UQParams(step=1.0, offset=z_min, bits=bits)
    step = (z_max - z_min) / (2**bits - 1)
    return UQParams(step=step, offset=(z_max + z_min + step) / 2.0, bits=bits)


def encode_uq(p: UQParams, z):
    lo, hi = p.code_range
    codes = np.clip(round_half_away((np.asarray(z, dtype=np.float64) - p.offset) / p.step), lo, hi)
    codes = codes.astype(np.int32)
    return int(codes) if codes.ndim == 0 else codes


def decode_uq(p: UQParams, code):
    out = p.step * np.asarray(code, dtype=np.float64) + p.offset
    return float(out) if out.ndim == 0 else out


def train_sq(values, bits: int, max_iters: int = 100) -> np.ndarray:
    """1-d Lloyd codebook with ``2**bits`` levels seeded at evenly spaced quantiles.

    Returns strictly ascending levels; coincident levels collapse, so the
    codebook may be shorter than ``2**bits``.
    """
    z = np.asarray(values, dtype=np.float64).ravel()
    if z.size == 0:
        raise ValueError("train_sq needs at least one value")
    if not np.all(np.isfinite(z)):
        raise ValueError("train_sq input contains non-finite values")
    n_levels = 2 ** check_positive_int(bits, "bits")
    distinct = np.unique(z)
    if distinct.size <= n_levels:
        return distinct
    z = np.sort(z)
    levels = np.unique(np.quantile(z, (np.arange(n_levels) + 0.5) / n_levels))
    for _ in range(max_iters):
        codes = _sq_codes(levels, z)
        counts = np.bincount(codes, minlength=levels.size)
        sums = np.bincount(codes, weights=z, minlength=levels.size)
        new = levels.copy()
        nz = counts > 0
        new[nz] = sums[nz] / counts[nz]
        new = np.unique(new)
        if new.size == levels.size and np.array_equal(new, levels):
            break
        levels = new
    return levels


def _sq_codes(levels: np.ndarray, z: np.ndarray) -> np.ndarray:
    # A value exactly on a midpoint goes to the lower level.
    mids = (levels[:-1] + levels[1:]) / 2.0
    return np.searchsorted(mids, z, side="left")


def quantize_sq(levels, z):
    """Nearest level: ``(code, level)`` (arrays for array input)."""
    levels = np.asarray(levels, dtype=np.float64)
    arr = np.asarray(z, dtype=np.float64)
    codes = _sq_codes(levels, arr)
    if arr.ndim == 0:
        return int(codes), float(levels[codes])
    return codes, levels[codes]


class UniformQuantizer(TransformerMixin, BaseEstimator):
    def __init__(self, bits: int = 8, clip_quantiles: tuple[float, float] = (0.01, 0.99)):
        self.bits = bits
        self.clip_quantiles = clip_quantiles

    def fit(self, X, y=None):
        self.params_ = train_uq(X, self.bits, self.clip_quantiles)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        return encode_uq(self.params_, X)

    def inverse_transform(self, codes):
        check_is_fitted(self, "params_")
        return decode_uq(self.params_, codes)


class ScalarQuantizer(TransformerMixin, BaseEstimator):
    def __init__(self, bits: int = 4, max_iter: int = 100):
        self.bits = bits
        self.max_iter = max_iter

    def fit(self, X, y=None):
        self.levels_ = train_sq(X, self.bits, self.max_iter)
        return self

    def transform(self, X):
        check_is_fitted(self, "levels_")
        return quantize_sq(self.levels_, X)[0]

    def inverse_transform(self, codes):
        check_is_fitted(self, "levels_")
        return self.levels_[np.asarray(codes)]
