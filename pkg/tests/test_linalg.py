import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from maskbeam.linalg import SingularMatrixError, cho_solve, cholesky, eigh_jacobi, fix_phase, \
    generalized_eigh_max


def rand_herm(rng, shape, M, pd=True):
    A = rng.standard_normal(shape + (M, M)) + 1j * rng.standard_normal(shape + (M, M))
    H = A @ np.conj(np.swapaxes(A, -1, -2))
    return H + (0.1 * np.eye(M) if pd else 0)


def test_jacobi_matches_numpy():
    rng = np.random.default_rng(0)
    A = rand_herm(rng, (200,), 6)
    w, V = eigh_jacobi(A)
    w_ref = np.linalg.eigvalsh(A)
    assert np.max(np.abs(w - w_ref) / np.abs(w_ref).max(axis=-1, keepdims=True)) < 1e-12
    recon = V @ (w[..., None] * np.conj(np.swapaxes(V, -1, -2)))
    assert np.max(np.abs(recon - A)) < 1e-10 * np.max(np.abs(A))
    eye = np.conj(np.swapaxes(V, -1, -2)) @ V
    assert np.allclose(eye, np.eye(6), atol=1e-12)


def test_jacobi_diagonal_and_zero():
    w, V = eigh_jacobi(np.diag([3.0, 1.0]))
    assert np.allclose(w, [1, 3])
    assert np.allclose(np.abs(V[:, 1]), [1, 0])
    w, V = eigh_jacobi(np.zeros((3, 3)))
    assert np.all(w == 0) and np.allclose(V, np.eye(3))


def test_fix_phase():
    v = np.array([0, 1j, 1.0])
    out = fix_phase(v)
    assert out[1] == pytest.approx(1.0) and np.isclose(out[2], -1j)


def test_cholesky_and_solve():
    rng = np.random.default_rng(1)
    A = rand_herm(rng, (5,), 4)
    L = cholesky(A)
    assert np.allclose(L @ np.conj(np.swapaxes(L, -1, -2)), A)
    assert np.allclose(np.triu(L[0], 1), 0)
    b = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
    x = cho_solve(L, b)
    assert np.allclose(np.einsum("kij,kj->ki", A, x), b)


def test_cholesky_rejects_indefinite():
    with pytest.raises(SingularMatrixError):
        cholesky(np.diag([1.0, -1.0]))
    with pytest.raises(SingularMatrixError):
        cholesky(np.zeros((2, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_generalized_matches_scipy(seed, M):
    rng = np.random.default_rng(seed)
    a = rand_herm(rng, (), M, pd=False)
    b = rand_herm(rng, (), M)
    xi, w = generalized_eigh_max(a, b)
    ref = scipy.linalg.eigh(a, b, eigvals_only=True)[-1]
    assert xi == pytest.approx(ref, rel=1e-8)
    assert np.linalg.norm(a @ w - xi * (b @ w)) < 1e-8 * np.linalg.norm(a) * np.linalg.norm(w)
