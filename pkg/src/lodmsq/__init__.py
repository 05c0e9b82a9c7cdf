"""IVF indexes for maximum inner product search with local orthogonal
decomposition (LOD) and multiscale quantization (MSQ), plus PQ/OPQ baselines,
an evaluation harness and numerical checks of the supporting analysis."""

from .baselines import build_baseline, search_baseline
from .data import GroundTruth, brute_force_gt, brute_force_topk, load_ivecs, load_vecs
from .estimator import LodMsqIndex, MipsIndex
from .evaluation import bitrate_per_entry, check_bit_parity, recall_n_at_k, run_grid
from .index import IndexConfig, Kind, QuantizedIndex, deserialize_index, serialize_index
from .lod import TrainingOptions, build_index, index_from_components
from .search import SearchResult, search, search_batch

__version__ = "0.1.0"

__all__ = [
    "GroundTruth",
    "IndexConfig",
    "Kind",
    "LodMsqIndex",
    "MipsIndex",
    "QuantizedIndex",
    "SearchResult",
    "TrainingOptions",
    "bitrate_per_entry",
    "brute_force_gt",
    "brute_force_topk",
    "build_baseline",
    "build_index",
    "check_bit_parity",
    "deserialize_index",
    "index_from_components",
    "load_ivecs",
    "load_vecs",
    "recall_n_at_k",
    "run_grid",
    "search",
    "search_baseline",
    "search_batch",
    "serialize_index",
]
