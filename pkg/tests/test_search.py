import numpy as np
import pytest

from _lossless import make_lossless, same_topk
from lodmsq.data import brute_force_gt, brute_force_topk
from lodmsq.index import IndexConfig, Kind, Partition, QuantizedIndex
from lodmsq.lod import TrainingOptions, build_index, index_from_components, msq_reconstruct
from lodmsq.quantizers import PQCodebook, UQParams, reconstruct_pq
from lodmsq.search import (
    adc_ip,
    build_adc_tables,
    default_n_probe,
    score_entry,
    score_partition,
    search,
    search_batch,
    search_cost_bits,
    select_partitions,
)


@pytest.fixture(scope="module")
def lossless():
    L = make_lossless(n=3000, n_queries=100, seed=3)
    L["index"] = index_from_components(L["X"], L["centers"], L["rotation"], L["codebook"],
                                       L["config"], clip_quantiles=(0.0, 1.0))
    return L


@pytest.fixture(scope="module")
def trained(small_clustered):
    X, Q = small_clustered
    return X, Q, build_index(X, IndexConfig(10, 6), seed=2, options=TrainingOptions(opq_iters=4))


def _index_with_centers(centers):
    cb = PQCodebook([np.eye(2)])
    parts = [Partition(center=np.asarray(c, float), ids=np.zeros(0, np.int64),
                       pq_codes=np.zeros((0, 1), np.uint8)) for c in centers]
    return QuantizedIndex(Kind.MIPS_PQ, IndexConfig(len(centers), 1, 2), np.eye(2), cb, parts, 2)


def test_select_partitions_examples(rng):
    index = _index_with_centers([[3.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    sel = select_partitions(np.array([1.0, 0.0]), index, 2)
    assert [i for _, i in sel] == [0, 2]
    assert [p for p, _ in sel] == [3.0, 2.0]
    assert sorted(i for _, i in select_partitions(np.array([1.0, 0.0]), index, 3)) == [0, 1, 2]
    tie = _index_with_centers([[1.0, 0.0], [1.0, 5.0], [1.0, -1.0]])
    assert [i for _, i in select_partitions(np.array([1.0, 0.0]), tie, 2)] == [0, 1]
    with pytest.raises(ValueError):
        select_partitions(np.array([1.0, 0.0]), index, 4)


def test_select_partitions_matches_scan(rng):
    C = rng.standard_normal((50, 2))
    index = _index_with_centers(C)
    for _ in range(10):
        q = rng.standard_normal(2)
        want = np.argsort(-(C @ q), kind="stable")[:7]
        assert [i for _, i in select_partitions(q, index, 7)] == want.tolist()


def test_adc_tables_examples(rng):
    cb = PQCodebook([np.eye(2)])
    np.testing.assert_array_equal(build_adc_tables([2.0, 3.0], cb), [[2.0, 3.0]])
    np.testing.assert_array_equal(build_adc_tables([0.0, 0.0], cb), [[0.0, 0.0]])
    assert adc_ip(np.array([[2.0, 3.0]]), [1]) == 3.0
    z = PQCodebook([np.zeros((4, 2)), np.zeros((4, 3))])
    assert adc_ip(build_adc_tables(rng.standard_normal(5), z), [1, 2]) == 0.0


def test_adc_matches_reconstruction(rng):
    cb = PQCodebook([rng.standard_normal((16, 3)) for _ in range(5)])
    q = rng.standard_normal(15)
    tables = build_adc_tables(q, cb)
    codes = rng.integers(0, 16, (200, 5))
    want = reconstruct_pq(cb, codes) @ q
    np.testing.assert_allclose(adc_ip(tables, codes), want, rtol=1e-5, atol=1e-12)
    assert adc_ip(tables, codes[0]) == pytest.approx(want[0], rel=1e-12)


def test_score_entry_zero_residual():
    cb = PQCodebook([np.eye(2)])
    part = Partition(center=np.array([1.0, 0.0]), ids=np.array([0]),
                     pq_codes=np.zeros((1, 1), np.uint8), direction=np.array([1.0, 0.0]),
                     uq=UQParams(1.0, 0.0, 8), uq_codes=np.array([0], np.int32),
                     sq_levels=np.array([0.0]), sq_codes=np.array([0], np.uint8))
    tables = build_adc_tables([3.0, 4.0], cb)
    assert score_entry(np.array([3.0, 4.0]), part, part.entry(0), tables) == 0.0


def test_score_entry_matches_reconstruction(trained, rng):
    X, Q, index = trained
    for q in Q[:10]:
        tables = build_adc_tables(index.rotation.T @ q, index.codebook)
        for p in index.partitions:
            vec = score_partition(q, p, tables)
            for j in range(0, len(p), 17):
                e = p.entry(j)
                recon = msq_reconstruct(e, p, index)
                zq = p.uq.step * e.uq_code + p.uq.offset
                want = q @ recon + (q @ p.direction) * zq
                got = score_entry(q, p, e, tables)
                assert got == pytest.approx(want, rel=1e-5, abs=1e-9)
                assert vec[j] == pytest.approx(got, rel=1e-9, abs=1e-12)


def test_lossless_entries_exact(lossless):
    index, X = lossless["index"], lossless["X"]
    for q in lossless["Q"][:5]:
        tables = build_adc_tables(index.rotation.T @ q, index.codebook)
        for p in index.partitions[:10]:
            for j in range(len(p)):
                e = p.entry(j)
                want = q @ (X[e.row_id] - p.center)
                assert score_entry(q, p, e, tables) == pytest.approx(want, rel=1e-5, abs=1e-9)


def test_lossless_search_equals_brute_force(lossless):
    index, X, Q = lossless["index"], lossless["X"], lossless["Q"]
    gt = brute_force_gt(X, Q, 10)
    ids, scores = search_batch(Q, 10, index, index.config.n_partitions)
    for i in range(Q.shape[0]):
        assert same_topk(ids[i], scores[i], gt.ids[i], gt.scores[i])


def test_search_single_entry_partition():
    cb = PQCodebook([np.zeros((2, 2))])
    parts = [
        Partition(center=np.array([5.0, 0.0]), ids=np.array([7]),
                  pq_codes=np.zeros((1, 1), np.uint8)),
        Partition(center=np.array([0.0, 1.0]), ids=np.array([3, 4]),
                  pq_codes=np.zeros((2, 1), np.uint8)),
    ]
    index = QuantizedIndex(Kind.MIPS_PQ, IndexConfig(2, 1, 2), np.eye(2), cb, parts, 2)
    res = search(np.array([1.0, 0.0]), 1, index, 1)
    assert list(res) == [(7, 5.0)]
    # k larger than the candidates: everything scored is returned
    assert len(search(np.array([1.0, 0.0]), 10, index, 1)) == 1
    ids, scores = search_batch(np.array([[1.0, 0.0]]), 3, index, 1)
    assert ids.tolist() == [[7, -1, -1]] and np.isneginf(scores[0, 1:]).all()


def test_search_candidates_nested(trained):
    X, Q, index = trained
    for q in Q[:10]:
        prev = set()
        for m_adc in (1, 3, 6, 10):
            got = set(search(q, X.shape[0], index, m_adc).ids.tolist())
            assert prev <= got
            allowed = {int(i) for _, p in select_partitions(q, index, m_adc)
                       for i in index.partitions[p].ids}
            assert got == allowed
            prev = got


def test_search_sorted_unique_and_ties(trained):
    X, Q, index = trained
    res = search(Q[0], 50, index)
    assert len(set(res.ids.tolist())) == len(res)
    s = res.scores
    assert np.all(s[:-1] >= s[1:])
    for a, b, sa, sb in zip(res.ids[:-1], res.ids[1:], s[:-1], s[1:]):
        if sa == sb:
            assert a < b


def test_scores_invariant_to_storage_order(trained, rng):
    X, Q, index = trained
    import copy
    shuffled = copy.deepcopy(index)
    for p in shuffled.partitions:
        perm = rng.permutation(len(p))
        p.ids, p.pq_codes = p.ids[perm], p.pq_codes[perm]
        p.uq_codes, p.sq_codes = p.uq_codes[perm], p.sq_codes[perm]
    a = search_batch(Q, 20, index, 4)
    b = search_batch(Q, 20, shuffled, 4)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_search_batch_thread_invariant(trained):
    X, Q, index = trained
    a = search_batch(Q, 10, index, 3, n_jobs=1)
    b = search_batch(Q, 10, index, 3, n_jobs=4)
    np.testing.assert_array_equal(a[0], b[0])
    assert a[1].tobytes() == b[1].tobytes()


def test_search_validation(trained):
    X, Q, index = trained
    with pytest.raises(ValueError):
        search(Q[0], 0, index)
    with pytest.raises(ValueError):
        search(Q[0][:3], 5, index)
    with pytest.raises(ValueError):
        search(Q[0], 5, index, 11)


def test_default_n_probe():
    assert default_n_probe(20) == 2
    assert default_n_probe(1000) == 100
    assert default_n_probe(3) == 1


def test_search_cost_bits(trained):
    X, Q, index = trained
    assert search_cost_bits(index, []) == (0, 0, 0)
    sel = [i for _, i in select_partitions(Q[0], index, 2)]
    n = sum(len(index.partitions[i]) for i in sel)
    cost = search_cost_bits(index, sel)
    assert cost.entries == n
    assert cost.bits == n * (6 * 4 + 8)
    assert cost.bits_with_sq == n * (6 * 4 + 8 + 4)


@pytest.mark.parametrize("n_b,bits", [(23, 100), (48, 200)])
def test_search_cost_per_entry_reference_configs(n_b, bits):
    from lodmsq.index import bits_per_entry
    assert bits_per_entry(IndexConfig(20, n_b, 16, 8, 4), Kind.MIPS_LOD_MSQ) == bits
