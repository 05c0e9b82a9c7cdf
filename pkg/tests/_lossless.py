"""Constructive dataset that the LOD+MSQ encoder represents without loss.

Centers live in the first PQ subspace, whose codewords are all zero, so each
partition direction ``v`` is orthogonal to every rotated codeword
concatenation. Residuals are ``lam * R @ phi + g * v`` with ``phi`` a codeword
concatenation of unit norm, ``lam`` one of four scale values (fewer than the
SQ levels) and ``g`` on a uniform grid whose extremes occur in every
partition, so PQ, SQ and UQ all reproduce the residual exactly.
"""

import itertools

import numpy as np
from scipy.stats import ortho_group

from lodmsq.index import IndexConfig
from lodmsq.quantizers import PQCodebook

D = 32
N_B = 8
N_W = 16
WIDTH = D // N_B
UQ_BITS = 8
GRID_HALF = 0.3
SCALES = (0.5, 0.75, 1.0, 1.25)


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def make_lossless(n=10_000, n_queries=1_000, seed=0):
    rng = np.random.default_rng(seed)
    # 3**4 = 81 lattice centers, spacing 2, away from the origin.
    lattice = np.array(list(itertools.product((1.0, 3.0, 5.0), repeat=WIDTH)))
    m = lattice.shape[0]
    centers = np.zeros((m, D))
    centers[:, :WIDTH] = lattice
    centers = _f32(centers)

    books = [np.zeros((N_W, WIDTH))]
    for _ in range(N_B - 1):
        w = rng.standard_normal((N_W, WIDTH))
        books.append(w / np.linalg.norm(w, axis=1, keepdims=True) / np.sqrt(N_B - 1))
    codebook = PQCodebook([_f32(b) for b in books])

    rotation = np.eye(D)
    rotation[WIDTH:, WIDTH:] = ortho_group.rvs(D - WIDTH, random_state=seed)
    rotation = _f32(rotation)

    labels = np.arange(n) % m
    codes = rng.integers(0, N_W, (n, N_B))
    codes[:, 0] = 0
    phi = np.hstack([codebook.codebooks[b][codes[:, b]] for b in range(N_B)])
    lam = np.array(SCALES)[rng.integers(0, len(SCALES), n)]
    step = 2 * GRID_HALF / (2**UQ_BITS - 1)
    k = rng.integers(-(2 ** (UQ_BITS - 1)), 2 ** (UQ_BITS - 1), n)
    k[:m] = -(2 ** (UQ_BITS - 1))
    k[m : 2 * m] = 2 ** (UQ_BITS - 1) - 1
    g = step * k + step / 2
    v = centers[labels] / np.linalg.norm(centers[labels], axis=1, keepdims=True)
    X = centers[labels] + lam[:, None] * (phi @ rotation.T) + g[:, None] * v
    Q = rng.standard_normal((n_queries, D))
    config = IndexConfig(m, N_B, N_W, UQ_BITS, 4)
    return dict(X=X, Q=Q, centers=centers, rotation=rotation, codebook=codebook,
                config=config, labels=labels, codes=codes, lam=lam, g=g)


def same_topk(ids, scores, gt_ids, gt_scores, rtol=1e-5):
    """Rankings agree: identical ids, or identical scores where ids differ (near ties)."""
    if len(ids) != len(gt_ids):
        return False
    tol = rtol * np.maximum(np.abs(gt_scores), 1e-12)
    if not np.all(np.abs(np.asarray(scores) - gt_scores) <= tol):
        return False
    diff = np.asarray(ids) != np.asarray(gt_ids)
    return bool(np.all(~diff | (np.abs(np.asarray(scores) - gt_scores) <= tol)))
