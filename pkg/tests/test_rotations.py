import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmmf.rotations import jacobi_angle, off_diag_norm_sq, rotation_from_gram


def off_max(m):
    return np.max(np.abs(m - np.diag(np.diag(m))))


@pytest.mark.parametrize("args,expected", [((25, 3), 16.0), ((4, 2), 0.0), ((4, 2.0000001), 0.0)])
def test_off_diag_norm_sq(args, expected):
    assert off_diag_norm_sq(*args) == expected


def test_closed_form_two_by_two():
    q = rotation_from_gram(np.array([[2.0, 1.0], [1.0, 2.0]]))
    r = q @ np.array([[2.0, 1.0], [1.0, 2.0]]) @ q.T
    assert np.allclose(r, np.diag([1.0, 3.0]), atol=1e-15)
    assert np.isclose(abs(q[0, 0]), np.cos(np.pi / 4))


def test_diagonal_gives_identity():
    for k in (2, 3, 5):
        g = np.diag(np.arange(1.0, k + 1))
        assert np.array_equal(rotation_from_gram(g), np.eye(k))


def test_jacobi_angle_zero_coupling():
    assert jacobi_angle(1.0, 0.0, 5.0) == (1.0, 0.0)


def test_rejects_asymmetric():
    with pytest.raises(ValueError):
        rotation_from_gram(np.array([[1.0, 0.5], [0.4, 1.0]]))


def test_sign_convention():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.standard_normal((4, 4))
        q = rotation_from_gram(x + x.T)
        lead = q[np.arange(4), np.argmax(np.abs(q), axis=1)]
        assert np.all(lead > 0)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from([2, 3, 4, 8]), st.integers(0, 2**32 - 1))
def test_diagonalizes_random_symmetric(k, seed):
    x = np.random.default_rng(seed).standard_normal((k, k))
    g = x + x.T
    q = rotation_from_gram(g)
    assert off_max(q @ g @ q.T) <= 1e-12 * np.linalg.norm(g)
    assert np.max(np.abs(q @ q.T - np.eye(k))) <= 1e-12


def test_eigenvalues_match_dense_solver():
    x = np.random.default_rng(5).standard_normal((6, 6))
    g = x + x.T
    q = rotation_from_gram(g)
    assert np.allclose(np.sort(np.diag(q @ g @ q.T)), np.linalg.eigvalsh(g), atol=1e-12)
