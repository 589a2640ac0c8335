import math
import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from pmmf.blocked import BlockedSparseMatrix, Partition
from pmmf.clustering import ClusterParams
from pmmf.factorize import (FactorizationError, FactorizeParams, Rotation, Stage, factorize,
                            find_rotations_in_cluster, stage_apply_all_blocks)
from pmmf.rotations import off_diag_norm_sq
from pmmf.transform import reconstruct_dense, residual_frobenius, rotation_matrix

from conftest import random_symmetric


def params(**kw):
    cluster = kw.pop("cluster", None) or ClusterParams(m_target=kw.pop("m", 2), c_min=kw.pop("c_min", 4))
    return FactorizeParams(cluster=cluster, **kw)


def embed(q, idx, n):
    full = np.eye(n)
    full[np.ix_(idx, idx)] = q
    return full


def oracle_givens(g2):
    """Smallest-angle rotation with ``q g2 q^T`` diagonal, computed from the angle."""
    a, b, c = g2[0, 0], g2[0, 1], g2[1, 1]
    if b == 0:
        return np.eye(2)
    theta = 0.5 * math.atan(2 * b / (a - c)) if a != c else math.copysign(math.pi / 4, b)
    for t in (theta, -theta):
        q = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        if abs((q @ g2 @ q.T)[0, 1]) <= 1e-12 * max(1.0, abs(a) + abs(c)):
            return q
    raise AssertionError("no diagonalizing angle")


# ---------------------------------------------------------------- off-diagonal norm


@pytest.mark.parametrize("norm_sq,diag,expected", [(5.0, 2.0, 1.0), (4.0, 2.0, 0.0), (3.0, 2.0, 0.0)])
def test_off_diag_norm_examples(norm_sq, diag, expected):
    assert off_diag_norm_sq(norm_sq, diag) == expected


# ---------------------------------------------------------------- cluster search


def test_identity_columns_need_no_rotation():
    a = BlockedSparseMatrix.from_scipy(sp.identity(6, format="csr"))
    rots, elims = find_rotations_in_cluster(a, 0, params(eta=0.5), np.random.default_rng(0))
    assert len(elims) == 3
    assert all(e.mass == 0.0 and e.diag == 1.0 for e in elims)
    for r in rots:
        assert np.allclose(r.matrix, np.eye(2))


def test_parallel_columns_are_absorbed():
    a = np.ones((2, 2))
    f = factorize(a, params(core_min=1, m=1, c_min=1))
    assert f.core_dim == 1
    assert f.residual_sq <= 1e-24
    assert f.h.core[0, 0] == pytest.approx(2.0)
    assert f.h.diag_values[0] == pytest.approx(0.0, abs=1e-15)


def test_search_matches_dense_straight_line_oracle():
    n, c = 20, 8
    a = random_symmetric(n, 0.6, 11)
    part = Partition([np.arange(c), np.arange(c, n)])
    m = BlockedSparseMatrix.from_scipy(sp.csr_matrix(a), part)
    p = params(eta=0.5)
    rots, elims = find_rotations_in_cluster(m, 0, p, np.random.default_rng(3))

    # replay the greedy search on dense copies with the same random stream
    rng = np.random.default_rng(3)
    g = a[:, :c].T @ a[:, :c]
    d = a[:c, :c].copy()
    full = a.copy()
    active = list(range(c))
    expected_rots, expected_elims = [], []
    for _ in range(4):
        i = active[rng.integers(len(active))]
        cand = [j for j in active if j != i]
        score = [abs(g[i, j]) / math.sqrt(g[j, j]) for j in cand]
        j = cand[int(np.argmax(score))]
        q = oracle_givens(g[np.ix_([i, j], [i, j])])
        big = embed(q, [i, j], c)
        g, d = big @ g @ big.T, big @ d @ big.T
        qn = embed(q, [i, j], n)
        full = qn @ full @ qn.T
        off = [g[t, t] - d[t, t] ** 2 for t in (i, j)]
        e = i if off[0] < off[1] else j
        active.remove(e)
        expected_rots.append(((i, j), q))
        expected_elims.append(e)

    assert [r.indices for r in rots] == [ij for ij, _ in expected_rots]
    for r, (_, q) in zip(rots, expected_rots):
        assert np.allclose(r.matrix, q, atol=1e-12)
    assert [e.index for e in elims] == expected_elims
    # mass: row e against everything not yet eliminated, in the final rotated matrix
    gone = []
    for e in elims:
        gone.append(e.index)
        keep = [t for t in range(n) if t not in gone]
        assert e.mass == pytest.approx(np.sum(full[e.index, keep] ** 2), rel=1e-10, abs=1e-12)
        assert e.diag == pytest.approx(full[e.index, e.index], rel=1e-12, abs=1e-12)


def test_search_respects_budget():
    a = BlockedSparseMatrix.from_scipy(sp.csr_matrix(random_symmetric(10, 0.5, 2)))
    rots, elims = find_rotations_in_cluster(a, 0, params(eta=0.5), np.random.default_rng(0), budget=2)
    assert len(elims) == 2 and len(rots) == 2


# ---------------------------------------------------------------- whole factorization


def test_diagonal_input_is_exact():
    d = np.arange(1.0, 41.0)
    f = factorize(np.diag(d), params(core_min=8))
    assert f.residual_sq == 0.0
    assert np.allclose(reconstruct_dense(f), np.diag(d), atol=1e-14)
    assert sorted(f.h.diagonal.values()) == sorted(d[f.h.diag_indices].tolist())


def test_identity_is_exact():
    f = factorize(np.eye(30), params(core_min=4))
    assert np.allclose(reconstruct_dense(f), np.eye(30), atol=1e-14)
    assert residual_frobenius(f) == 0.0


def test_accumulated_residual_matches_dense():
    a = random_symmetric(32, 0.25, 5)
    f = factorize(a, params(core_min=6, m=2, c_min=4, seed=5))
    dense = residual_frobenius(f, a, method="dense")
    assert residual_frobenius(f) == pytest.approx(dense, rel=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_energy_accounting_against_rotated_matrix(seed):
    n = 48
    a = random_symmetric(n, 0.2, seed)
    f = factorize(a, params(core_min=8, m=3, c_min=4, seed=seed))
    u = rotation_matrix(f)
    al = u @ a @ u.T
    order = f.elimination_order()
    masses = [e.mass for s in f.stages for e in s.eliminated]
    diags = [e.diag for s in f.stages for e in s.eliminated]
    for t, i in enumerate(order):
        later = order[t + 1:] + f.h.core_indices.tolist()
        assert masses[t] == pytest.approx(np.sum(al[i, later] ** 2), rel=1e-9, abs=1e-12)
        assert diags[t] == pytest.approx(al[i, i], rel=1e-12, abs=1e-12)
    core = f.h.core_indices
    assert np.allclose(f.h.core, al[np.ix_(core, core)], atol=1e-12)


def test_active_sizes_and_one_elimination_per_rotation():
    a = random_symmetric(120, 0.1, 9)
    f = factorize(a, params(core_min=10, m=3, c_min=5))
    sizes = f.active_sizes
    assert all(x >= y for x, y in zip(sizes, sizes[1:]))
    assert sizes[-1] == f.core_dim >= 10
    for s in f.stages:
        assert len(s.rotations) == len(s.eliminated)
    assert len(set(f.elimination_order())) == len(f.elimination_order())


def test_thread_count_does_not_change_result():
    a = random_symmetric(150, 0.08, 4)
    p = params(core_min=12, m=4, c_min=5, seed=4)
    f1 = factorize(a, p, threads=1)
    f4 = factorize(a, p, threads=4)
    assert [r.indices for r in f1.rotations] == [r.indices for r in f4.rotations]
    assert all(np.array_equal(x.matrix, y.matrix) for x, y in zip(f1.rotations, f4.rotations))
    assert np.array_equal(f1.h.core, f4.h.core)
    assert f1.residual_sq == f4.residual_sq


def test_frobenius_norm_is_conserved():
    a = random_symmetric(64, 0.15, 2)
    f = factorize(a, params(core_min=8))
    h = f.h.to_dense(64)
    total = np.linalg.norm(h) ** 2 + f.residual_sq
    assert total == pytest.approx(np.linalg.norm(a) ** 2, rel=1e-10)


def test_rotations_are_orthogonal():
    a = random_symmetric(40, 0.2, 6)
    f = factorize(a, params(core_min=5, k=3))
    u = rotation_matrix(f)
    assert np.allclose(u @ u.T, np.eye(40), atol=1e-12)
    for r in f.rotations:
        assert r.k == 3


def test_compression_respects_core_min():
    a = random_symmetric(60, 0.2, 8)
    f = factorize(a, params(core_min=25, n_stages=50))
    assert f.core_dim == 25


# ---------------------------------------------------------------- stage application


def stage_fixture(seed):
    rng = np.random.default_rng(seed)
    n = 18
    a = random_symmetric(n, 0.3, seed)
    perm = rng.permutation(n)
    part = Partition([np.sort(perm[:7]), np.sort(perm[7:13]), np.sort(perm[13:])])
    rots = []
    for u, cl in enumerate(part.clusters[:2]):
        for _ in range(5):
            idx = tuple(int(x) for x in rng.choice(cl, size=2, replace=False))
            theta = rng.uniform(-np.pi, np.pi)
            q = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
            rots.append(Rotation(idx, q, 0, u))
    return a, Stage(Partition(part.clusters[:2]), rots, [], part.clusters[2]), part


@pytest.mark.parametrize("seed", range(5))
def test_stage_apply_matches_dense(seed):
    a, stage, part = stage_fixture(seed)
    m = BlockedSparseMatrix.from_scipy(sp.csr_matrix(a), part)
    stage_apply_all_blocks(m, stage)
    expected = a.copy()
    for r in stage.rotations:
        q = embed(r.matrix, list(r.indices), a.shape[0])
        expected = q @ expected @ q.T
    assert np.allclose(m.to_dense(), expected, atol=1e-12)


def test_stage_apply_empty_stage_is_noop():
    a, stage, part = stage_fixture(0)
    m = BlockedSparseMatrix.from_scipy(sp.csr_matrix(a), part)
    stage_apply_all_blocks(m, Stage(stage.partition, [], [], stage.bypassed))
    assert np.array_equal(m.to_dense(), a)


# ---------------------------------------------------------------- errors and warnings


def test_small_input_warns_and_keeps_matrix():
    a = random_symmetric(5, 0.5, 1)
    with pytest.warns(UserWarning):
        f = factorize(a, params(core_min=10))
    assert f.core_dim == 5
    assert np.allclose(reconstruct_dense(f), a, atol=1e-14)


def test_core_above_cap_raises():
    with pytest.raises(FactorizationError):
        factorize(random_symmetric(40, 0.2, 0), params(core_min=4, n_stages=0, max_core=20))


def test_nonsymmetric_input_raises():
    a = np.arange(16.0).reshape(4, 4)
    with pytest.raises(ValueError):
        factorize(a, params(core_min=1))


def test_params_validation():
    with pytest.raises(ValueError):
        FactorizeParams(k=1)
    with pytest.raises(ValueError):
        FactorizeParams(eta=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        FactorizeParams.from_dict(FactorizeParams().to_dict())
