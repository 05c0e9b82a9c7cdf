"""Tiny fixed index used by the golden-file test (``data/golden_lod_msq.idx``)."""

import numpy as np

from lodmsq.index import IndexConfig
from lodmsq.lod import index_from_components
from lodmsq.quantizers import PQCodebook

GOLDEN_NAME = "golden_lod_msq.idx"


def golden_index():
    X = np.array([
        [4.0, 0.5, 0.25, -1.0],
        [3.5, -0.5, 1.0, 0.0],
        [4.5, 1.0, -0.75, 0.5],
        [4.0, 0.0, 0.0, 0.0],
        [3.0, 0.25, 0.5, 1.5],
        [5.0, -1.0, 0.0, -0.5],
        [0.5, 4.0, 1.0, 0.0],
        [-0.5, 3.5, 0.0, 1.0],
        [0.0, 4.5, -1.0, -1.0],
        [1.0, 4.0, 0.5, 0.5],
        [0.0, 3.0, 0.25, 0.75],
    ])
    centers = np.array([[4.0, 0.0, 0.0, 0.0], [0.0, 4.0, 0.0, 0.0]])
    rotation = np.array([[0.0, 1.0, 0.0, 0.0],
                         [1.0, 0.0, 0.0, 0.0],
                         [0.0, 0.0, 0.0, -1.0],
                         [0.0, 0.0, 1.0, 0.0]])
    codebook = PQCodebook([
        np.array([[0.0, 0.0], [0.5, 0.5], [-0.5, 0.5], [0.0, -1.0]]),
        np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]),
    ])
    config = IndexConfig(2, 2, 4, 4, 2)
    return index_from_components(X, centers, rotation, codebook, config,
                                 clip_quantiles=(0.0, 1.0))


if __name__ == "__main__":
    from pathlib import Path

    from lodmsq.index import serialize_index

    serialize_index(golden_index(), Path(__file__).parent / "data" / GOLDEN_NAME)
