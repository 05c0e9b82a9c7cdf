"""scikit-learn style wrappers around the index builders.

>>> index = LodMsqIndex(n_partitions=20, n_subspaces=23).fit(X)     # doctest: +SKIP
>>> ids, scores = index.search(Q, k=10)                             # doctest: +SKIP
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_data
from .baselines import build_baseline
from .index import IndexConfig, Kind, bits_per_entry, deserialize_index, serialize_index
from .lod import TrainingOptions
from .search import default_n_probe, search_batch

__all__ = ["LodMsqIndex", "MipsIndex"]


class MipsIndex(BaseEstimator):
    """IVF index for maximum inner product search.

    Parameters
    ----------
    kind : str
        One of ``mips_pq``, ``mips_opq``, ``l2_opq``, ``mips_msq``,
        ``mips_lod_opq``, ``mips_lod_msq`` (short forms like ``lod_msq`` work).
    n_partitions : int
        Number of coarse partitions (m).
    n_subspaces : int
        PQ codebooks per vector (n_B).
    n_codewords : int
        Codewords per PQ codebook (n_W).
    uq_bits, sq_bits : int
        Bits for the projected component (l_UQ) and for the scale (l_SQ).
    n_probe : int or None
        Partitions scanned per query (m_ADC); ``None`` means 10% of ``n_partitions``.
    proj_dir : {"center", "query_pca"}
        Per-partition projection direction for LOD kinds.
    train_size : int or None
        Subsample size for training the coarse quantizer and codebooks.
    """

    def __init__(
        self,
        kind: str = "mips_lod_msq",
        n_partitions: int = 100,
        n_subspaces: int = 23,
        n_codewords: int = 16,
        uq_bits: int = 8,
        sq_bits: int = 4,
        n_probe: int | None = None,
        proj_dir: str = "center",
        clip_quantiles: tuple[float, float] = (0.01, 0.99),
        ivf_iter: int = 25,
        pq_iter: int = 10,
        opq_iter: int = 20,
        train_size: int | None = None,
        random_state: int = 0,
    ):
        self.kind = kind
        self.n_partitions = n_partitions
        self.n_subspaces = n_subspaces
        self.n_codewords = n_codewords
        self.uq_bits = uq_bits
        self.sq_bits = sq_bits
        self.n_probe = n_probe
        self.proj_dir = proj_dir
        self.clip_quantiles = clip_quantiles
        self.ivf_iter = ivf_iter
        self.pq_iter = pq_iter
        self.opq_iter = opq_iter
        self.train_size = train_size
        self.random_state = random_state

    def _kind(self) -> Kind:
        return Kind.parse(self.kind)

    def _config(self) -> IndexConfig:
        return IndexConfig(self.n_partitions, self.n_subspaces, self.n_codewords,
                           self.uq_bits, self.sq_bits)

    def _options(self) -> TrainingOptions:
        return TrainingOptions(self.ivf_iter, self.pq_iter, self.opq_iter, self.train_size,
                               tuple(self.clip_quantiles))

    def fit(self, X, y=None, queries=None):
        """Build the index over the rows of ``X``.

        ``queries`` (training queries) are only used with ``proj_dir="query_pca"``.
        """
        X = check_data(X)
        self.index_ = build_baseline(self._kind(), X, self._config(), self.random_state,
                                     self._options(), self.proj_dir, queries)
        self.n_features_in_ = X.shape[1]
        return self

    def _n_probe(self) -> int:
        return default_n_probe(self.n_partitions) if self.n_probe is None else self.n_probe

    def search(self, Q, k: int = 10, n_probe: int | None = None, n_jobs: int = 1):
        """``(ids, scores)`` arrays of shape ``(n_queries, k)``, best first."""
        check_is_fitted(self, "index_")
        return search_batch(Q, k, self.index_, n_probe or self._n_probe(), n_jobs)

    def predict(self, Q):
        """Approximate argmax row id per query."""
        return self.search(Q, k=1)[0][:, 0]

    def bits_per_entry(self) -> int:
        return bits_per_entry(self._config(), self._kind())

    def save(self, path) -> None:
        check_is_fitted(self, "index_")
        serialize_index(self.index_, path)

    @classmethod
    def load(cls, path, **params) -> "MipsIndex":
        """Estimator wrapping a serialized index; its config overrides ``params``."""
        index = deserialize_index(path)
        cfg = index.config
        est = cls(**params)
        est.set_params(n_partitions=cfg.n_partitions, n_subspaces=cfg.n_subspaces,
                       n_codewords=cfg.n_codewords, uq_bits=cfg.uq_bits, sq_bits=cfg.sq_bits)
        if "kind" in est.get_params():
            est.set_params(kind=index.kind.value)
        elif index.kind is not est._kind():
            raise ValueError(f"{path} holds a {index.kind.value} index")
        est.index_ = index
        est.n_features_in_ = index.input_dim
        return est


class LodMsqIndex(MipsIndex):
    """:class:`MipsIndex` fixed to local orthogonal decomposition + multiscale quantization."""

    def __init__(
        self,
        n_partitions: int = 100,
        n_subspaces: int = 23,
        n_codewords: int = 16,
        uq_bits: int = 8,
        sq_bits: int = 4,
        n_probe: int | None = None,
        proj_dir: str = "center",
        clip_quantiles: tuple[float, float] = (0.01, 0.99),
        ivf_iter: int = 25,
        pq_iter: int = 10,
        opq_iter: int = 20,
        train_size: int | None = None,
        random_state: int = 0,
    ):
        super().__init__("mips_lod_msq", n_partitions, n_subspaces, n_codewords, uq_bits,
                         sq_bits, n_probe, proj_dir, clip_quantiles, ivf_iter, pq_iter,
                         opq_iter, train_size, random_state)
        del self.kind

    def _kind(self) -> Kind:
        return Kind.MIPS_LOD_MSQ

    @property
    def scales_(self) -> list[np.ndarray]:
        """Unquantized per-entry scales kept from the build, per partition."""
        check_is_fitted(self, "index_")
        return self.index_.diagnostics["scales"]
