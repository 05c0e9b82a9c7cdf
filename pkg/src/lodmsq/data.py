"""Dataset I/O (fvecs / ivecs), normalization and the exact MIPS oracle."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ._validation import check_data, check_positive_int, check_queries, check_vector

__all__ = [
    "GroundTruth",
    "brute_force_gt",
    "brute_force_topk",
    "dot_ltr",
    "l2_normalize",
    "load_ivecs",
    "load_vecs",
    "save_ivecs",
    "save_vecs",
    "topk_order",
]


def _read_records(path, payload_dtype) -> np.ndarray:
    raw = np.fromfile(os.fspath(path), dtype=np.uint8)
    if raw.size == 0:
        raise ValueError(f"{path}: no records")
    if raw.size < 4:
        raise ValueError(f"{path}: truncated header")
    d = int(raw[:4].view("<i4")[0])
    if d <= 0:
        raise ValueError(f"{path}: invalid dimension {d} in first record")
    rec = 4 * (d + 1)
    if raw.size % rec != 0:
        # Either truncated or a later record declares a different dimension.
        n_full = raw.size // rec
        words = raw[: n_full * rec].view("<i4").reshape(n_full, d + 1)
        bad = np.flatnonzero(words[:, 0] != d)
        if bad.size:
            raise ValueError(
                f"{path}: dimension mismatch in record {bad[0]} "
                f"({words[bad[0], 0]} != {d})"
            )
        if n_full * rec + 4 <= raw.size:
            other = int(raw[n_full * rec : n_full * rec + 4].view("<i4")[0])
            if other != d:
                raise ValueError(
                    f"{path}: dimension mismatch in record {n_full} ({other} != {d})"
                )
        raise ValueError(f"{path}: truncated record after {n_full} records")
    words = raw.view("<i4").reshape(-1, d + 1)
    bad = np.flatnonzero(words[:, 0] != d)
    if bad.size:
        raise ValueError(
            f"{path}: dimension mismatch in record {bad[0]} ({words[bad[0], 0]} != {d})"
        )
    return np.ascontiguousarray(words[:, 1:]).view(payload_dtype)


def load_vecs(path) -> np.ndarray:
    """Read an ``.fvecs`` file into an ``(N, d)`` float32 array."""
    data = _read_records(path, "<f4").astype(np.float32, copy=False)
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite values")
    return data


def load_ivecs(path) -> np.ndarray:
    """Read an ``.ivecs`` file into an ``(N, d)`` int32 array."""
    return _read_records(path, "<i4").astype(np.int32, copy=False)


def _write_records(data: np.ndarray, path, payload_dtype) -> None:
    n, d = data.shape
    out = np.empty((n, d + 1), dtype="<i4")
    out[:, 0] = d
    out[:, 1:] = data.astype(payload_dtype, copy=False).view("<i4")
    out.tofile(os.fspath(path))


def save_vecs(data, path) -> None:
    """Write ``data`` as float32 ``.fvecs``; round trip with :func:`load_vecs` is bit-exact."""
    arr = np.asarray(data)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"cannot save dataset of shape {arr.shape}")
    arr = arr.astype(np.float32, copy=False)
    if not np.all(np.isfinite(arr)):
        raise ValueError("dataset contains non-finite values")
    _write_records(arr, path, "<f4")


def save_ivecs(data, path) -> None:
    arr = np.asarray(data)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"cannot save ids of shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise TypeError("ivecs payload must be integer")
    if arr.size and (arr.min() < np.iinfo(np.int32).min or arr.max() > np.iinfo(np.int32).max):
        raise ValueError("ivecs payload does not fit int32")
    _write_records(arr.astype(np.int32), path, "<i4")


def l2_normalize(X) -> np.ndarray:
    """Scale every row to unit l2 norm. Output keeps the input float dtype."""
    arr = np.asarray(X)
    data = check_data(arr)
    norms = np.sqrt(np.einsum("ij,ij->i", data, data))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"row {zero[0]} has zero norm")
    out = data / norms[:, None]
    if arr.dtype == np.float32:
        out = out.astype(np.float32)
    return out


def dot_ltr(X: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Inner products of every row of ``X`` with ``q``.

    Accumulated in float64 strictly left-to-right over dimensions, so the
    result is reproducible bit-for-bit independent of BLAS or vectorization.
    """
    X = np.asarray(X, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    acc = np.zeros(X.shape[0], dtype=np.float64)
    for j in range(X.shape[1]):
        acc += X[:, j] * q[j]
    return acc


def topk_order(scores: np.ndarray, k: int, ids: np.ndarray | None = None) -> np.ndarray:
    """Positions of the ``k`` largest scores, descending, ties to smaller id.

    ``ids`` defaults to the positions themselves.
    """
    scores = np.asarray(scores)
    n = scores.shape[0]
    if ids is None:
        ids = np.arange(n)
    k = min(k, n)
    if k <= 0:
        return np.empty(0, dtype=np.intp)
    if k < n:
        kth = np.partition(scores, n - k)[n - k]
        cand = np.flatnonzero(scores >= kth)
    else:
        cand = np.arange(n)
    order = np.lexsort((ids[cand], -scores[cand]))
    return cand[order[:k]]


@dataclass(frozen=True)
class GroundTruth:
    """Exact top-k per query: ``ids`` and float64 ``scores``, each ``(n_queries, k)``."""

    ids: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        if self.ids.shape != self.scores.shape or self.ids.ndim != 2:
            raise ValueError("ids and scores must be 2-d arrays of equal shape")

    @property
    def depth(self) -> int:
        return self.ids.shape[1]

    def __len__(self) -> int:
        return self.ids.shape[0]


def brute_force_topk(X, q, k: int) -> list[tuple[int, float]]:
    """Exact MIPS over all rows of ``X``: ``[(row_id, q . x), ...]`` descending."""
    data = check_data(X)
    q = check_vector(q, data.shape[1], name="query")
    k = check_positive_int(k, "k")
    if k > data.shape[0]:
        raise ValueError(f"k={k} exceeds dataset size {data.shape[0]}")
    scores = dot_ltr(data, q)
    top = topk_order(scores, k)
    return [(int(i), float(scores[i])) for i in top]


def brute_force_gt(X, Q, k: int, *, n_jobs: int = 1) -> GroundTruth:
    """Ground truth for a batch of queries; row order follows ``Q``."""
    data = check_data(X)
    queries = check_queries(Q, data.shape[1])
    k = check_positive_int(k, "k")
    if k > data.shape[0]:
        raise ValueError(f"k={k} exceeds dataset size {data.shape[0]}")
    cols = np.ascontiguousarray(data.T)
    ids = np.empty((queries.shape[0], k), dtype=np.int64)
    scores = np.empty((queries.shape[0], k), dtype=np.float64)

    def one(i):
        q = queries[i]
        acc = np.zeros(data.shape[0], dtype=np.float64)
        for j in range(data.shape[1]):
            acc += cols[j] * q[j]
        top = topk_order(acc, k)
        ids[i] = top
        scores[i] = acc[top]

    if n_jobs == 1:
        for i in range(queries.shape[0]):
            one(i)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(one, range(queries.shape[0])))
    return GroundTruth(ids=ids, scores=scores)
