"""Non-exhaustive search over a :class:`~lodmsq.index.QuantizedIndex`.

Partitions are ranked by ``q . c``; inside each selected partition residual
inner products come from per-query ADC lookup tables, scaled by the decoded
scale (MSQ pipelines) and completed by the uniformly quantized projected
component (LOD pipelines). ``L2_OPQ`` indexes instead rank by approximate
squared distance in the augmented space and report ``-distance**2``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._validation import check_positive_int, check_queries, check_vector
from .data import topk_order
from .index import Kind, Partition, PartitionEntry, QuantizedIndex
from .quantizers import PQCodebook

__all__ = [
    "SearchCost",
    "SearchResult",
    "adc_ip",
    "build_adc_tables",
    "default_n_probe",
    "score_entry",
    "score_partition",
    "search",
    "search_batch",
    "search_cost_bits",
    "select_partitions",
    "transform_query",
]


@dataclass(frozen=True)
class SearchResult:
    """Row ids and scores, best first."""

    ids: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    def __iter__(self):
        return iter(zip(self.ids.tolist(), self.scores.tolist()))


def default_n_probe(n_partitions: int) -> int:
    """Search 10% of the partitions (at least one)."""
    return max(1, round(n_partitions / 10))


def transform_query(index: QuantizedIndex, q: np.ndarray) -> np.ndarray:
    """Map a query into the index space (only ``L2_OPQ`` changes it)."""
    if index.kind is not Kind.L2_OPQ or index.l2_scale is None:
        return q
    norm = np.linalg.norm(q)
    if norm == 0:
        raise ValueError("zero-norm query cannot be mapped to the l2 space")
    return np.concatenate([q / norm, [0.0]])


def select_partitions(q, index: QuantizedIndex, m_adc: int) -> list[tuple[float, int]]:
    """Top ``m_adc`` partitions by ``q . c_i`` as ``(q . c_i, i)``, ties to smaller ``i``.

    ``L2_OPQ`` indexes rank by smallest ``||q - c_i||`` and report ``-||q - c_i||**2``.
    """
    m = len(index.partitions)
    m_adc = check_positive_int(m_adc, "m_adc")
    if m_adc > m:
        raise ValueError(f"m_adc={m_adc} exceeds the number of partitions {m}")
    q = np.asarray(q, dtype=np.float64)
    if index.kind is Kind.L2_OPQ:
        diff = index.centers - q
        p = -np.einsum("ij,ij->i", diff, diff)
    else:
        p = index.centers @ q
    top = topk_order(p, m_adc)
    return [(float(p[i]), int(i)) for i in top]


def build_adc_tables(q_rotated, pq: PQCodebook) -> np.ndarray:
    """``tables[b, j] = q_rotated[subspace b] . codeword_j``, shape ``(n_B, n_W)``."""
    q_rotated = check_vector(q_rotated, pq.dim, name="q_rotated")
    tables = np.empty((pq.n_subspaces, pq.n_codewords), dtype=np.float64)
    for b, (book, s) in enumerate(zip(pq.codebooks, pq.slices)):
        tables[b] = book @ q_rotated[s]
    return tables


def _l2_tables(y, pq: PQCodebook) -> np.ndarray:
    tables = np.empty((pq.n_subspaces, pq.n_codewords), dtype=np.float64)
    for b, (book, s) in enumerate(zip(pq.codebooks, pq.slices)):
        diff = book - y[s]
        tables[b] = np.einsum("ij,ij->i", diff, diff)
    return tables


def adc_ip(tables: np.ndarray, codes) -> float | np.ndarray:
    """Sum of per-subspace lookups; ``codes`` is ``(n_B,)`` or ``(n, n_B)``."""
    codes = np.asarray(codes)
    cols = np.arange(tables.shape[0])
    if codes.ndim == 1:
        return float(tables[cols, codes].sum())
    return tables[cols[None, :], codes].sum(axis=1)


def score_entry(q, partition: Partition, entry: PartitionEntry, tables: np.ndarray) -> float:
    """Approximate residual inner product of ``q`` with one stored entry."""
    score = adc_ip(tables, entry.pq_codes)
    if entry.sq_code is not None:
        score *= partition.sq_levels[entry.sq_code]
    if entry.uq_code is not None:
        qv = float(np.asarray(q, dtype=np.float64) @ partition.direction)
        score += qv * (partition.uq.step * entry.uq_code + partition.uq.offset)
    return float(score)


def score_partition(q, partition: Partition, tables: np.ndarray) -> np.ndarray:
    """Vectorized :func:`score_entry` over a whole partition."""
    scores = adc_ip(tables, partition.pq_codes) if len(partition) else np.zeros(0)
    if partition.sq_codes is not None:
        scores = scores * partition.sq_levels[partition.sq_codes]
    if partition.uq_codes is not None:
        qv = float(q @ partition.direction)
        # (q.v) * step folded once per partition; offset term is a constant.
        scores = scores + (qv * partition.uq.step) * partition.uq_codes + qv * partition.uq.offset
    return scores


def _search_one(q, k, index: QuantizedIndex, m_adc) -> SearchResult:
    qi = transform_query(index, q)
    selected = select_partitions(qi, index, m_adc)
    all_ids, all_scores = [], []
    if index.kind is Kind.L2_OPQ:
        y = qi @ index.rotation
        for _, i in selected:
            part = index.partitions[i]
            if not len(part):
                continue
            tables = _l2_tables(y - index.rotated_centers[i], index.codebook)
            all_scores.append(-adc_ip(tables, part.pq_codes))
            all_ids.append(part.ids)
    else:
        tables = build_adc_tables(qi @ index.rotation, index.codebook)
        for p_i, i in selected:
            part = index.partitions[i]
            if not len(part):
                continue
            all_scores.append(score_partition(qi, part, tables) + p_i)
            all_ids.append(part.ids)
    if not all_ids:
        return SearchResult(np.zeros(0, dtype=np.int64), np.zeros(0))
    ids = np.concatenate(all_ids)
    scores = np.concatenate(all_scores)
    top = topk_order(scores, k, ids)
    return SearchResult(ids[top], scores[top])


def search(q, k: int, index: QuantizedIndex, m_adc: int | None = None) -> SearchResult:
    """Approximate top-``k`` inner products; ties broken by smaller row id.

    Returns fewer than ``k`` results when the selected partitions hold fewer
    entries.
    """
    q = check_vector(q, index.input_dim, name="query")
    k = check_positive_int(k, "k")
    if m_adc is None:
        m_adc = default_n_probe(len(index.partitions))
    return _search_one(q, k, index, m_adc)


def search_batch(Q, k: int, index: QuantizedIndex, m_adc: int | None = None,
                 n_jobs: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Search every row of ``Q``.

    Returns ``(ids, scores)`` of shape ``(n_queries, k)``, padded with ``-1`` and
    ``-inf`` where fewer than ``k`` candidates were scored. Output does not
    depend on ``n_jobs``.
    """
    queries = check_queries(Q, index.input_dim)
    k = check_positive_int(k, "k")
    if m_adc is None:
        m_adc = default_n_probe(len(index.partitions))
    ids = np.full((queries.shape[0], k), -1, dtype=np.int64)
    scores = np.full((queries.shape[0], k), -np.inf)

    def run(i):
        res = _search_one(queries[i], k, index, m_adc)
        ids[i, : len(res)] = res.ids
        scores[i, : len(res)] = res.scores

    if n_jobs == 1:
        for i in range(queries.shape[0]):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            list(pool.map(run, range(queries.shape[0])))
    return ids, scores


class SearchCost(NamedTuple):
    entries: int
    bits: int
    bits_with_sq: int


def search_cost_bits(index: QuantizedIndex, partitions) -> SearchCost:
    """Bits read when scanning ``partitions`` (indices), with and without scale codes."""
    cfg = index.config
    per_entry = index.bits_per_entry()
    sq = cfg.sq_bits if index.kind.uses_scales else 0
    n = sum(len(index.partitions[int(i)]) for i in partitions)
    return SearchCost(n, n * per_entry, n * (per_entry + sq))
