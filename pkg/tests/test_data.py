import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lodmsq.data import (
    GroundTruth,
    brute_force_gt,
    brute_force_topk,
    dot_ltr,
    l2_normalize,
    load_ivecs,
    load_vecs,
    save_ivecs,
    save_vecs,
    topk_order,
)


def _write_raw(path, records, fmt="f"):
    with open(path, "wb") as f:
        for rec in records:
            f.write(struct.pack("<i", len(rec)))
            f.write(struct.pack(f"<{len(rec)}{fmt}", *rec))


def test_load_two_records(tmp_path):
    p = tmp_path / "a.fvecs"
    _write_raw(p, [[1, 0], [0, 1]])
    X = load_vecs(p)
    assert X.shape == (2, 2)
    np.testing.assert_array_equal(X, [[1, 0], [0, 1]])


def test_load_empty_file(tmp_path):
    p = tmp_path / "e.fvecs"
    p.write_bytes(b"")
    with pytest.raises(ValueError, match="no records"):
        load_vecs(p)


def test_load_dimension_mismatch(tmp_path):
    p = tmp_path / "m.fvecs"
    _write_raw(p, [[1, 0], [0, 1, 2]])
    with pytest.raises(ValueError, match="dimension"):
        load_vecs(p)


def test_load_truncated(tmp_path):
    p = tmp_path / "t.fvecs"
    _write_raw(p, [[1, 0, 3]])
    p.write_bytes(p.read_bytes()[:-2])
    with pytest.raises(ValueError):
        load_vecs(p)


def test_load_non_finite(tmp_path):
    p = tmp_path / "n.fvecs"
    _write_raw(p, [[1.0, float("nan")]])
    with pytest.raises(ValueError):
        load_vecs(p)


def test_load_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_vecs(tmp_path / "nope.fvecs")


def test_save_roundtrip_small(tmp_path):
    p = tmp_path / "s.fvecs"
    save_vecs(np.array([[1.0, 2.0]]), p)
    np.testing.assert_array_equal(load_vecs(p), [[1.0, 2.0]])


def test_save_empty_rejected(tmp_path):
    with pytest.raises(ValueError):
        save_vecs(np.zeros((0, 3)), tmp_path / "z.fvecs")


def test_save_byte_length(tmp_path, rng):
    d = 7
    p = tmp_path / "r.fvecs"
    save_vecs(rng.standard_normal((1000, d)).astype(np.float32), p)
    assert p.stat().st_size == 1000 * (4 + 4 * d)


def test_ivecs_roundtrip(tmp_path, rng):
    ids = rng.integers(-5, 10**6, (13, 4))
    p = tmp_path / "i.ivecs"
    save_ivecs(ids, p)
    np.testing.assert_array_equal(load_ivecs(p), ids)
    assert p.stat().st_size == 13 * (4 + 4 * 4)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 20), st.integers(1, 9)),
              elements=st.floats(allow_nan=False, allow_infinity=False, width=32)))
def test_roundtrip_bit_exact(tmp_path_factory, X):
    p = tmp_path_factory.mktemp("rt") / "x.fvecs"
    save_vecs(X, p)
    Y = load_vecs(p)
    assert Y.dtype == np.float32
    assert Y.tobytes() == X.tobytes()


def test_l2_normalize_examples():
    np.testing.assert_allclose(l2_normalize([[3.0, 4.0]]), [[0.6, 0.8]])
    np.testing.assert_array_equal(l2_normalize([[1.0, 0.0]]), [[1.0, 0.0]])
    with pytest.raises(ValueError, match="zero norm"):
        l2_normalize([[1.0, 1.0], [0.0, 0.0]])


def test_l2_normalize_random(rng):
    X = rng.standard_normal((50, 6))
    Y = l2_normalize(X)
    np.testing.assert_allclose(np.linalg.norm(Y, axis=1), 1.0, atol=1e-12)
    # direction preserved
    np.testing.assert_allclose(Y * np.linalg.norm(X, axis=1, keepdims=True), X, atol=1e-12)


def test_brute_force_examples():
    X = [[1, 0], [0, 1], [2, 0]]
    assert brute_force_topk(X, [1, 0], 2) == [(2, 2.0), (0, 1.0)]
    assert brute_force_topk(X, [0, 0], 1) == [(0, 0.0)]


def test_brute_force_errors():
    X = [[1, 0], [0, 1]]
    with pytest.raises(ValueError):
        brute_force_topk(X, [1, 0], 3)
    with pytest.raises(ValueError):
        brute_force_topk(X, [1, 0, 0], 1)


def test_brute_force_matches_independent_scan(rng):
    X = rng.standard_normal((100, 8))
    q = rng.standard_normal(8)
    got = brute_force_topk(X, q, 10)
    # Independent oracle: python loop with math.fsum-free left-to-right sums.
    scores = []
    for i, row in enumerate(X):
        s = 0.0
        for a, b in zip(row, q):
            s += a * b
        scores.append((-s, i))
    want = [(i, -s) for s, i in sorted(scores)[:10]]
    assert [g[0] for g in got] == [w[0] for w in want]
    assert [g[1] for g in got] == [w[1] for w in want]  # exact equality


def test_brute_force_full_permutation(rng):
    X = rng.standard_normal((40, 5))
    q = rng.standard_normal(5)
    got = brute_force_topk(X, q, 40)
    assert sorted(i for i, _ in got) == list(range(40))
    s = [v for _, v in got]
    assert s == sorted(s, reverse=True)


def test_brute_force_ties_by_id():
    X = np.ones((5, 3))
    assert [i for i, _ in brute_force_topk(X, [1, 1, 1], 5)] == [0, 1, 2, 3, 4]


def test_gt_batch_matches_single_and_threads(rng):
    X = rng.standard_normal((300, 12))
    Q = rng.standard_normal((17, 12))
    gt = brute_force_gt(X, Q, 5)
    gt4 = brute_force_gt(X, Q, 5, n_jobs=4)
    assert isinstance(gt, GroundTruth) and gt.depth == 5 and len(gt) == 17
    np.testing.assert_array_equal(gt.ids, gt4.ids)
    assert gt.scores.tobytes() == gt4.scores.tobytes()
    for i, q in enumerate(Q):
        row = brute_force_topk(X, q, 5)
        assert [r[0] for r in row] == gt.ids[i].tolist()
        assert [r[1] for r in row] == gt.scores[i].tolist()
    for row in gt.ids:
        assert len(set(row.tolist())) == 5


def test_dot_ltr_exact(rng):
    X = rng.standard_normal((4, 6))
    q = rng.standard_normal(6)
    for i in range(4):
        s = 0.0
        for j in range(6):
            s += X[i, j] * q[j]
        assert dot_ltr(X, q)[i] == s


def test_topk_order_ties_and_ids():
    s = np.array([1.0, 3.0, 3.0, 2.0])
    assert topk_order(s, 2).tolist() == [1, 2]
    ids = np.array([9, 7, 5, 3])
    assert topk_order(s, 2, ids).tolist() == [2, 1]
    assert topk_order(s, 10).tolist() == [1, 2, 3, 0]
    assert topk_order(s, 0).size == 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=1, max_size=30), st.integers(1, 35))
def test_topk_order_matches_sort(vals, k):
    s = np.array(vals, dtype=float)
    want = sorted(range(len(vals)), key=lambda i: (-vals[i], i))[:k]
    assert topk_order(s, k).tolist() == want
