"""Recall, bitrate accounting, ground-truth caching and the experiment grid."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._validation import check_data, check_positive_int
from .baselines import build_baseline
from .data import GroundTruth, brute_force_gt, load_ivecs, load_vecs, save_ivecs, save_vecs
from .index import IndexConfig, Kind, bits_per_entry
from .lod import TrainingOptions
from .search import default_n_probe, search_batch

logger = logging.getLogger(__name__)

__all__ = [
    "CSV_FIELDS",
    "BitBudgetError",
    "GridRow",
    "bitrate_per_entry",
    "check_bit_parity",
    "config_for_budget",
    "ground_truth_cached",
    "recall_n_at_k",
    "rows_to_csv",
    "run_grid",
]

CSV_FIELDS = ("dataset", "kind", "bits", "m", "m_ADC", "n_B", "n_W", "l_UQ", "l_SQ", "seed",
              "n", "k", "recall")


class BitBudgetError(ValueError):
    """Raised when configurations compared side by side spend different bits per vector."""


def recall_n_at_k(retrieved, gt, n: int = 1, k: int | None = None) -> float:
    """Mean over queries of ``|true top-n  &  retrieved top-k| / n``.

    ``retrieved`` is an ``(n_queries, >=k)`` id array (``-1`` padding allowed);
    ``gt`` a :class:`GroundTruth` or an id array sorted best first.
    """
    ids = np.asarray(retrieved)
    gt_ids = gt.ids if isinstance(gt, GroundTruth) else np.asarray(gt)
    if ids.ndim != 2 or gt_ids.ndim != 2:
        raise ValueError("retrieved and ground truth must be 2-d id arrays")
    if ids.shape[0] != gt_ids.shape[0]:
        raise ValueError("retrieved and ground truth cover different numbers of queries")
    k = ids.shape[1] if k is None else check_positive_int(k, "k")
    n = check_positive_int(n, "n")
    if n > k:
        raise ValueError(f"n={n} must not exceed k={k}")
    if k > ids.shape[1]:
        raise ValueError(f"only {ids.shape[1]} results per query, cannot evaluate k={k}")
    if gt_ids.shape[1] < n:
        raise ValueError(f"ground truth depth {gt_ids.shape[1]} is smaller than n={n}")
    if ids.shape[0] == 0:
        return 0.0
    true = gt_ids[:, :n]
    got = ids[:, :k]
    hits = (true[:, :, None] == got[:, None, :]).any(axis=2).sum(axis=1)
    return float(np.mean(hits / n))


def bitrate_per_entry(config: IndexConfig, kind) -> int:
    """Per-vector stored bits excluding SQ scale codes (see :func:`scale_bits`)."""
    return bits_per_entry(config, kind)


def scale_bits(config: IndexConfig, kind) -> int:
    return config.sq_bits if Kind.parse(kind).uses_scales else 0


def config_for_budget(kind, bits: int, n_partitions: int, uq_bits: int = 8,
                      n_codewords: int = 16, sq_bits: int = 4) -> IndexConfig:
    """Smallest-step configuration of ``kind`` spending exactly ``bits`` per vector.

    LOD kinds spend ``uq_bits`` on the projected component and the rest on PQ
    codes; all other kinds spend everything on PQ codes.
    """
    kind = Kind.parse(kind)
    code_bits = int(np.ceil(np.log2(n_codewords)))
    pq_bits = bits - (uq_bits if kind.uses_lod else 0)
    if pq_bits <= 0 or pq_bits % code_bits:
        raise BitBudgetError(
            f"{kind.value}: {bits} bits cannot be split into {code_bits}-bit PQ codes"
            + (f" plus {uq_bits} UQ bits" if kind.uses_lod else "")
        )
    return IndexConfig(n_partitions, pq_bits // code_bits, n_codewords, uq_bits, sq_bits)


def check_bit_parity(entries: Iterable[tuple[object, IndexConfig]]) -> int:
    """Return the common per-vector bitrate or raise :class:`BitBudgetError`."""
    rates = {}
    for kind, cfg in entries:
        rates[Kind.parse(kind).value + f"/n_B={cfg.n_subspaces}"] = bitrate_per_entry(cfg, kind)
    if not rates:
        raise ValueError("no configurations given")
    if len(set(rates.values())) != 1:
        detail = ", ".join(f"{k}: {v}" for k, v in rates.items())
        raise BitBudgetError(f"configurations spend different bits per vector ({detail})")
    return next(iter(rates.values()))


def _digest(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.float32)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def ground_truth_cached(data, queries, depth: int, cache_dir=None, stem: str = "gt",
                        n_jobs: int = 1) -> tuple[GroundTruth, Path | None, bool]:
    """Exact top-``depth`` ground truth, cached as ``.ivecs`` (ids) + ``.fvecs`` (scores).

    The cache key is a hash of the float32 data and queries. Returns the
    ground truth, the ``.ivecs`` path (``None`` without a cache dir) and whether
    the cache was hit. Cached scores are float32.
    """
    X = check_data(data, name="data")
    Q = check_data(queries, name="queries")
    depth = check_positive_int(depth, "depth")
    if depth > X.shape[0]:
        raise ValueError(f"depth={depth} exceeds dataset size {X.shape[0]}")
    if cache_dir is None:
        return brute_force_gt(X, Q, depth, n_jobs=n_jobs), None, False
    key = _digest(X, Q)[:16]
    base = Path(cache_dir) / f"{stem}.gt{depth}.{key}"
    ids_path, sc_path = Path(f"{base}.ivecs"), Path(f"{base}.fvecs")
    if ids_path.exists() and sc_path.exists():
        ids = load_ivecs(ids_path).astype(np.int64)
        scores = load_vecs(sc_path).astype(np.float64)
        if ids.shape == (Q.shape[0], depth):
            logger.info("ground truth cache hit: %s", ids_path)
            return GroundTruth(ids, scores), ids_path, True
    gt = brute_force_gt(X, Q, depth, n_jobs=n_jobs)
    os.makedirs(base.parent, exist_ok=True)
    save_ivecs(gt.ids, ids_path)
    save_vecs(gt.scores.astype(np.float32), sc_path)
    return gt, ids_path, False


@dataclass(frozen=True)
class GridRow:
    dataset: str
    kind: str
    bits: int
    m: int
    m_ADC: int
    n_B: int
    n_W: int
    l_UQ: int
    l_SQ: int
    seed: int
    n: int
    k: int
    recall: float

    def as_csv(self) -> list[str]:
        vals = [getattr(self, f) for f in CSV_FIELDS]
        vals[-1] = f"{self.recall:.6f}"
        return [str(v) for v in vals]


def rows_to_csv(rows: Sequence[GridRow], out=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow(r.as_csv())
    text = buf.getvalue()
    if out is not None:
        Path(out).write_text(text)
    return text


def run_grid(
    data,
    queries,
    kinds: Sequence,
    budgets: Sequence[int],
    ks: Sequence[int],
    seeds: Sequence[int],
    n_partitions: int,
    n_probe: int | None = None,
    uq_bits: int = 8,
    sq_bits: int = 4,
    n_codewords: int = 16,
    n: int = 1,
    gt: GroundTruth | None = None,
    dataset: str = "dataset",
    options: TrainingOptions | None = None,
    n_jobs: int = 1,
) -> list[GridRow]:
    """Build each ``(budget, kind, seed)`` index once and score every ``k``.

    Rows come out in grid order (budget, kind, seed, k). Every budget is
    checked for bit parity across ``kinds`` before anything is built.
    """
    X = check_data(data, name="data")
    Q = check_data(queries, name="queries")
    kinds = [Kind.parse(k) for k in kinds]
    ks = sorted(check_positive_int(k, "k") for k in ks)
    m_adc = default_n_probe(n_partitions) if n_probe is None else n_probe
    if not 1 <= m_adc <= n_partitions:
        raise ValueError(f"m_ADC={m_adc} must be in [1, m={n_partitions}]")
    avg = X.shape[0] / n_partitions
    if not 500 <= avg <= 2000:
        logger.warning("average partition size %.0f is far from the usual ~1,000", avg)
    plan = {}
    for bits in budgets:
        cfgs = [(kind, config_for_budget(kind, bits, n_partitions, uq_bits, n_codewords,
                                         sq_bits)) for kind in kinds]
        check_bit_parity(cfgs)
        plan[bits] = cfgs
    if gt is None:
        gt = brute_force_gt(X, Q, max(n, 1), n_jobs=n_jobs)
    rows = []
    for bits in budgets:
        for kind, cfg in plan[bits]:
            for seed in seeds:
                index = build_baseline(kind, X, cfg, seed, options)
                ids, _ = search_batch(Q, ks[-1], index, m_adc, n_jobs)
                for k in ks:
                    if k < n:
                        continue
                    rows.append(GridRow(dataset, kind.value, bits, n_partitions, m_adc,
                                        cfg.n_subspaces, cfg.n_codewords,
                                        cfg.uq_bits if kind.uses_lod else 0,
                                        cfg.sq_bits if kind.uses_scales else 0, seed, n, k,
                                        recall_n_at_k(ids, gt, n, k)))
                logger.info("grid cell done: %s %d bits seed %d", kind.value, bits, seed)
    return rows
