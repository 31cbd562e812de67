import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from qmi_info import matkit


def _sym_from(seed, n, rank=None):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, rank or n))
    w = rng.standard_normal(rank or n)
    return (G * w) @ G.T


def test_as_mat_shapes():
    assert matkit.as_mat(2.0).shape == (1, 1)
    assert matkit.as_mat([1, 2]).shape == (2, 1)
    with pytest.raises(ValueError):
        matkit.as_mat([np.nan])
    with pytest.raises(ValueError):
        matkit.as_mat(np.zeros((2, 2, 2)))


def test_sym_rejects_asymmetric():
    with pytest.raises(ValueError):
        matkit.sym([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        matkit.sym(np.zeros((2, 3)))


def test_pinv_examples():
    assert np.allclose(matkit.pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))
    assert np.allclose(matkit.pinv(np.zeros((3, 3))), 0.0)


def test_psd_sqrt_examples():
    assert np.allclose(matkit.psd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))
    with pytest.raises(ValueError):
        matkit.psd_sqrt(np.diag([1.0, -1.0]))
    # tiny negative eigenvalues from round-off are clipped
    assert np.allclose(matkit.psd_sqrt(np.diag([1.0, -1e-12])), np.diag([1.0, 0.0]))


def test_psd_sqrt_random():
    rng = np.random.default_rng(0)
    G = rng.standard_normal((5, 5))
    A = G @ G.T
    B = matkit.psd_sqrt(A)
    assert np.linalg.norm(B @ B - A) <= 1e-10 * np.linalg.norm(A)


def test_schur_examples():
    assert np.allclose(matkit.schur_complement(np.array([[2.0, 1.0], [1.0, 1.0]]), 1), [[1.0]])
    A = np.diag([3.0, 4.0])
    assert np.allclose(matkit.schur_complement(matkit.block_diag(A, np.eye(2)), 2), A)


def test_schur_matches_dense_inverse():
    rng = np.random.default_rng(1)
    G = rng.standard_normal((6, 6))
    M = G @ G.T + np.eye(6)
    A, B, C, D = matkit.partition(M, 3)
    ref = A - B @ np.linalg.inv(D) @ C
    assert np.allclose(matkit.schur_complement(M, 3), ref, atol=1e-12)


def test_range_basis_examples():
    V = matkit.range_basis(np.diag([1.0, 0.0]))
    assert V.shape == (2, 1) and np.allclose(np.abs(V[:, 0]), [1.0, 0.0])
    assert matkit.range_basis(np.zeros((3, 3))).shape == (3, 0)
    A = _sym_from(2, 4, rank=2)
    V = matkit.range_basis(A)
    assert V.shape[1] == 2
    assert np.allclose(V @ V.T @ A, A, atol=1e-9)


def test_kernel_contains_examples():
    assert matkit.kernel_contains(np.eye(2), np.ones((3, 2)))
    assert not matkit.kernel_contains(np.diag([1.0, 0.0]), np.array([[0.0, 1.0]]))
    assert matkit.kernel_contains(np.diag([1.0, 0.0]), np.array([[1.0, 0.0]]))


def test_spectral_radius():
    assert matkit.spectral_radius(np.array([[0.0, 2.0], [-2.0, 0.0]])) == pytest.approx(2.0)


@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(0, 6))
def test_penrose_conditions(seed, n, rank):
    A = _sym_from(seed, n, rank=min(rank, n) or None) if rank else np.zeros((n, n))
    X = matkit.pinv(A)
    s = max(1.0, np.linalg.norm(A)) * max(1.0, np.linalg.norm(X))
    for lhs, rhs in ((A @ X @ A, A), (X @ A @ X, X), ((A @ X).T, A @ X), ((X @ A).T, X @ A)):
        assert np.linalg.norm(lhs - rhs) <= 1e-9 * s * max(1.0, np.linalg.norm(rhs))


@given(arrays(np.float64, (4, 4), elements=st.floats(-3, 3)))
def test_psd_sqrt_property(G):
    # the shift keeps the condition number below 1e8
    A = G @ G.T + 1e-7 * (1.0 + np.linalg.norm(G) ** 2) * np.eye(4)
    B = matkit.psd_sqrt(A)
    assert np.linalg.norm(B @ B - A) <= 1e-9 * max(1.0, np.linalg.norm(A))
    assert matkit.min_eig(B) >= -1e-12


@given(st.integers(0, 2**31 - 1), st.integers(1, 5))
def test_range_basis_property(seed, n):
    A = _sym_from(seed, n + 1, rank=n)
    V = matkit.range_basis(A)
    assert np.allclose(V.T @ V, np.eye(V.shape[1]), atol=1e-9)
    assert np.linalg.norm(V @ V.T @ A - A) <= 1e-9 * max(1.0, np.linalg.norm(A))
