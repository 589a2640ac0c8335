import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from pmmf.blocked import BlockedSparseMatrix, BlockedVector, Partition
from pmmf.rotations import rotation_from_gram

from conftest import random_symmetric


def mirrored(entries):
    out = list(entries)
    out += [(j, i, v) for i, j, v in entries if i != j]
    return out


def givens(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


# ---------------------------------------------------------------- partition


def test_partition_lookup_inverts_membership():
    p = Partition([[4, 1], [0, 3, 2]])
    for u, c in enumerate(p.clusters):
        for a, i in enumerate(c.tolist()):
            assert p.lookup(i) == (u, a)
    assert p.sizes == [2, 3]


def test_partition_rejects_overlap():
    with pytest.raises(ValueError):
        Partition([[0, 1], [1, 2]])


# ---------------------------------------------------------------- construction / access


def test_identity_single_block():
    m = BlockedSparseMatrix.from_triplets(2, [(0, 0, 1.0), (1, 1, 1.0)])
    assert len(m.partition) == 1
    assert np.array_equal(m.block(0, 0).toarray(), np.eye(2))


def test_duplicates_summed():
    m = BlockedSparseMatrix.from_triplets(2, mirrored([(0, 1, 2.0), (0, 1, 3.0)]))
    assert m.get(0, 1) == 5.0
    assert m.get(1, 0) == 5.0


def test_routing_to_block():
    p = Partition([[0, 1], [2, 3]])
    m = BlockedSparseMatrix.from_triplets(4, mirrored([(1, 2, 7.0)]), p)
    assert m.locate(1, 2) == (0, 1, 1, 0)
    assert m.block(0, 1).toarray()[1, 0] == 7.0


@pytest.mark.parametrize("entry", [(2, 0, 1.0), (0, -1, 1.0)])
def test_out_of_range(entry):
    with pytest.raises(IndexError):
        BlockedSparseMatrix.from_triplets(2, [entry])


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        BlockedSparseMatrix.from_triplets(2, [(0, 0, np.nan)])


def test_get_set_and_reblock():
    m = BlockedSparseMatrix(4, Partition.trivial(4))
    assert m.get(1, 2) == 0.0
    m.set(1, 2, 7.0)
    m.set(2, 1, 7.0)
    assert m.get(1, 2) == 7.0
    r = m.reblock(Partition([[0, 2], [1, 3]]))
    assert r.get(1, 2) == 7.0
    with pytest.raises(IndexError):
        m.get(4, 0)


# ---------------------------------------------------------------- column products


def test_column_products():
    eye = BlockedSparseMatrix.from_scipy(sp.eye(3))
    assert eye.column_dot(0, 1) == 0.0
    # columns (1,0) and (1,1)
    m = BlockedSparseMatrix.from_triplets(2, [(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0)])
    assert m.column_dot(0, 1) == 1.0
    c = BlockedSparseMatrix.from_triplets(2, [(0, 0, 3.0), (1, 0, 4.0)])
    assert c.column_norm_sq(0) == 25.0


def test_gram_small_cases():
    eye = BlockedSparseMatrix.from_scipy(sp.eye(4), Partition([[0, 1], [2, 3]]))
    assert np.array_equal(eye.gram_of_cluster(1), np.eye(2))
    m = BlockedSparseMatrix.from_triplets(2, [(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0)])
    assert np.array_equal(m.gram_of_cluster(0), [[1.0, 1.0], [1.0, 2.0]])


def test_gram_matches_dense_oracle():
    a = random_symmetric(48, 0.2, 3)
    clusters = [np.arange(0, 48, 3), np.arange(1, 48, 3), np.arange(2, 48, 3)]
    m = BlockedSparseMatrix.from_scipy(sp.csr_matrix(a), Partition(clusters))
    for u, c in enumerate(clusters):
        ref = a[:, c].T @ a[:, c]
        g = m.gram_of_cluster(u)
        assert np.max(np.abs(g - ref)) <= 1e-12 * np.max(np.abs(ref))
        assert np.linalg.eigvalsh(g).min() >= -1e-10


# ---------------------------------------------------------------- rotations


def test_identity_rotation_is_noop():
    a = random_symmetric(8, 0.4, 0)
    m = BlockedSparseMatrix.from_scipy(sp.csr_matrix(a))
    m.apply_rotation_symmetric([2, 5], np.eye(2))
    assert np.array_equal(m.to_dense(), a)


def test_quarter_turn_swaps_diagonal():
    m = BlockedSparseMatrix.from_triplets(2, [(0, 0, 2.0), (1, 1, 5.0)])
    m.apply_rotation_symmetric([0, 1], givens(np.pi / 2))
    assert np.allclose(m.to_dense(), np.diag([5.0, 2.0]), atol=1e-15)


def test_rotation_matches_dense_and_preserves_invariants():
    a = random_symmetric(20, 0.3, 7)
    p = Partition([np.arange(0, 20, 2), np.arange(1, 20, 2)])
    m = BlockedSparseMatrix.from_scipy(sp.csr_matrix(a), p)
    idx = [3, 9, 15]
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    m.apply_rotation_symmetric(idx, q)
    full = np.eye(20)
    full[np.ix_(idx, idx)] = q
    ref = full @ a @ full.T
    got = m.to_dense()
    assert np.max(np.abs(got - ref)) <= 1e-12
    assert abs(np.linalg.norm(got) - np.linalg.norm(a)) <= 1e-10 * np.linalg.norm(a)
    assert np.max(np.abs(got - got.T)) <= 1e-12
    rest = np.setdiff1d(np.arange(20), idx)
    assert np.array_equal(got[np.ix_(rest, rest)], a[np.ix_(rest, rest)])


def test_rotation_spanning_clusters_rejected():
    m = BlockedSparseMatrix.from_scipy(sp.eye(4), Partition([[0, 1], [2, 3]]))
    with pytest.raises(ValueError):
        m.apply_rotation_symmetric([1, 2], np.eye(2))


def test_gram_recursion_matches_recompute():
    a = random_symmetric(24, 0.3, 11)
    p = Partition([np.arange(12), np.arange(12, 24)])
    m = BlockedSparseMatrix.from_scipy(sp.csr_matrix(a), p)
    g = m.gram_of_cluster(1)
    loc = [2, 7]
    q = rotation_from_gram(g[np.ix_(loc, loc)])
    g[loc, :] = q @ g[loc, :]
    g[:, loc] = g[:, loc] @ q.T
    m.apply_rotation_symmetric([12 + t for t in loc], q)
    fresh = m.gram_of_cluster(1)
    assert np.max(np.abs(g - fresh)) <= 1e-10 * np.max(np.abs(fresh))


# ---------------------------------------------------------------- reblock


def test_reblock_identical_partition():
    a = random_symmetric(10, 0.3, 1)
    p = Partition([[0, 1, 2, 3], [4, 5, 6, 7, 8, 9]])
    m = BlockedSparseMatrix.from_scipy(sp.csr_matrix(a), p)
    assert m.reblock(p).triplets() == m.triplets()


def test_reblock_index_arithmetic():
    entries = mirrored([(1, 2, 7.0), (0, 0, 1.0), (3, 3, 2.0)])
    m = BlockedSparseMatrix.from_triplets(4, entries, Partition([[0, 1], [2, 3]]))
    r = m.reblock(Partition([[0, 2], [1, 3]]))
    assert r.locate(1, 2) == (1, 0, 0, 1)
    assert r.block(1, 0).toarray()[0, 1] == 7.0


def test_reblock_drops_indices():
    a = random_symmetric(4, 1.0, 2)
    m = BlockedSparseMatrix.from_scipy(sp.csr_matrix(a), Partition([[0, 1], [2, 3]]))
    r = m.reblock(Partition([[0, 2], [1]]))
    for i in range(4):
        assert r.get(3, i) == 0.0 and r.get(i, 3) == 0.0
    for i in range(3):
        for j in range(3):
            assert r.get(i, j) == a[i, j]


def test_reblock_unknown_index():
    m = BlockedSparseMatrix.from_scipy(sp.eye(4)).reblock(Partition([[0, 1, 2]]))
    with pytest.raises(IndexError):
        m.reblock(Partition([[0, 3]]))


def test_reblock_threads_identical():
    a = random_symmetric(40, 0.2, 5)
    m = BlockedSparseMatrix.from_scipy(sp.csr_matrix(a), Partition([np.arange(20), np.arange(20, 40)]))
    p = Partition([np.arange(0, 40, 4), np.arange(1, 40, 4), np.arange(2, 40, 4), np.arange(3, 40, 4)])
    assert m.reblock(p, threads=1).triplets() == m.reblock(p, threads=4).triplets()


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000), st.integers(1, 4))
def test_reblock_round_trip(n, seed, m):
    a = random_symmetric(n, 0.5, seed)
    t0 = BlockedSparseMatrix.from_scipy(sp.csr_matrix(a)).triplets()
    labels = np.random.default_rng(seed).integers(0, m, size=n)
    clusters = [np.flatnonzero(labels == u) for u in range(m) if np.any(labels == u)]
    r = BlockedSparseMatrix.from_scipy(sp.csr_matrix(a)).reblock(Partition(clusters))
    assert r.triplets() == t0


# ---------------------------------------------------------------- vectors


def test_multiply_vector():
    eye = BlockedSparseMatrix.from_scipy(sp.eye(3))
    v = BlockedVector.from_dense(np.array([1.0, 2.0, 3.0]), eye.partition)
    assert np.array_equal(eye.multiply_vector(v).to_dense(3), [1.0, 2.0, 3.0])
    d = BlockedSparseMatrix.from_triplets(2, [(0, 0, 2.0), (1, 1, 3.0)])
    ones = BlockedVector.from_dense(np.ones(2), d.partition)
    assert np.array_equal(d.multiply_vector(ones).to_dense(2), [2.0, 3.0])


def test_multiply_vector_dense_oracle():
    a = random_symmetric(30, 0.2, 9)
    p = Partition([np.arange(0, 30, 2), np.arange(1, 30, 2)])
    m = BlockedSparseMatrix.from_scipy(sp.csr_matrix(a), p)
    x = np.random.default_rng(0).standard_normal(30)
    y = m.multiply_vector(BlockedVector.from_dense(x, p)).to_dense(30)
    assert np.max(np.abs(y - a @ x)) <= 1e-12 * np.max(np.abs(a @ x))


def test_blocked_vector_round_trip():
    p = Partition([[3, 0], [1, 2]])
    x = np.array([1.0, 2.0, 3.0, 4.0])
    v = BlockedVector.from_dense(x, p)
    assert np.array_equal(v.to_dense(4), x)
    assert np.array_equal(v.reblock(Partition([[0, 1, 2, 3]])).to_dense(4), x)
