"""Small dense Hermitian linear algebra, batched over leading axes.

Matrices are tiny (M <= 8 microphones) but there is one per time-frequency bin,
so every routine operates on stacks ``(..., M, M)`` and loops only over the
matrix dimension.
"""
from __future__ import annotations

import numba
import numpy as np


class SingularMatrixError(np.linalg.LinAlgError):
    pass


def hermitize(a):
    a = np.asarray(a)
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def eigh_jacobi(a, tol: float = 1e-15, max_sweeps: int = 50):
    """Cyclic Jacobi eigendecomposition of Hermitian matrices.

    Returns ``(w, v)`` with eigenvalues ascending along the last axis and
    eigenvectors in the columns of ``v``, like ``numpy.linalg.eigh``.
    """
    A = hermitize(np.asarray(a, dtype=np.complex128))
    batch = A.shape[:-2]
    M = A.shape[-1]
    A = np.ascontiguousarray(A.reshape(-1, M, M))
    w, V = _jacobi_batch(A, tol, max_sweeps)
    return w.reshape(batch + (M,)), V.reshape(batch + (M, M))


@numba.njit(cache=True)
def _jacobi_batch(A_in, tol, max_sweeps):
    B, M, _ = A_in.shape
    W = np.empty((B, M))
    V_out = np.empty((B, M, M), dtype=np.complex128)
    for b in range(B):
        A = A_in[b].copy()
        V = np.eye(M, dtype=np.complex128)
        scale = 0.0
        for i in range(M):
            for j in range(M):
                scale += abs(A[i, j]) ** 2
        scale = np.sqrt(scale)
        for _ in range(max_sweeps):
            off = 0.0
            for i in range(M):
                for j in range(M):
                    if i != j:
                        off += abs(A[i, j]) ** 2
            if np.sqrt(off) <= tol * scale:
                break
            for p in range(M - 1):
                for q in range(p + 1, M):
                    bpq = A[p, q]
                    r = abs(bpq)
                    if r <= 1e-3 * tol * scale:
                        continue
                    e = np.conj(bpq / r)
                    theta = (A[q, q].real - A[p, p].real) / (2.0 * r)
                    sgn = 1.0 if theta >= 0 else -1.0
                    t = sgn / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    c = 1.0 / np.sqrt(t * t + 1.0)
                    s = t * c
                    # G = diag(1, e) @ [[c, s], [-s, c]] on rows/cols p, q
                    gpp = c + 0j
                    gpq = s + 0j
                    gqp = -s * e
                    gqq = c * e
                    for k in range(M):
                        akp = A[k, p]
                        akq = A[k, q]
                        A[k, p] = akp * gpp + akq * gqp
                        A[k, q] = akp * gpq + akq * gqq
                    for k in range(M):
                        apk = A[p, k]
                        aqk = A[q, k]
                        A[p, k] = np.conj(gpp) * apk + np.conj(gqp) * aqk
                        A[q, k] = np.conj(gpq) * apk + np.conj(gqq) * aqk
                    A[p, q] = 0.0
                    A[q, p] = 0.0
                    A[p, p] = A[p, p].real
                    A[q, q] = A[q, q].real
                    for k in range(M):
                        vkp = V[k, p]
                        vkq = V[k, q]
                        V[k, p] = vkp * gpp + vkq * gqp
                        V[k, q] = vkp * gpq + vkq * gqq
        d = np.empty(M)
        for i in range(M):
            d[i] = A[i, i].real
        order = np.argsort(d, kind="mergesort")
        for i in range(M):
            W[b, i] = d[order[i]]
            for k in range(M):
                V_out[b, k, i] = V[k, order[i]]
    return W, V_out


def fix_phase(v, tol: float = 1e-300):
    """Rotate vectors (last axis) so the first nonzero entry is real positive."""
    v = np.asarray(v, dtype=np.complex128)
    mag = np.abs(v)
    first = np.argmax(mag > tol, axis=-1)
    ref = np.take_along_axis(v, first[..., None], axis=-1)
    refmag = np.abs(ref)
    ph = np.where(refmag > 0, ref / np.where(refmag > 0, refmag, 1.0), 1.0)
    return v * np.conj(ph)


def cholesky(a):
    """Lower Cholesky factor L with L L^H = a; raises on non-PD input."""
    A = np.asarray(a, dtype=np.complex128)
    M = A.shape[-1]
    L = np.zeros_like(A)
    for j in range(M):
        diag = A[..., j, j].real - np.sum(np.abs(L[..., j, :j]) ** 2, axis=-1)
        if np.any(~(diag > 0)):
            raise SingularMatrixError("matrix is not positive definite")
        ljj = np.sqrt(diag)
        L[..., j, j] = ljj
        if j + 1 < M:
            acc = A[..., j + 1:, j] - np.einsum(
                "...ik,...k->...i", L[..., j + 1:, :j], np.conj(L[..., j, :j]))
            L[..., j + 1:, j] = acc / ljj[..., None]
    return L


def solve_lower(L, b):
    """Solve L x = b for lower-triangular L; b is (..., M) or (..., M, N)."""
    vec = np.asarray(b).ndim == L.ndim - 1
    B = np.asarray(b, dtype=np.complex128)
    if vec:
        B = B[..., None]
    M = L.shape[-1]
    X = np.zeros(np.broadcast_shapes(L.shape[:-2], B.shape[:-2]) + B.shape[-2:],
                 dtype=np.complex128)
    for i in range(M):
        acc = B[..., i, :] - np.einsum("...k,...kn->...n", L[..., i, :i], X[..., :i, :])
        X[..., i, :] = acc / L[..., i, i][..., None]
    return X[..., 0] if vec else X


def solve_upper_h(L, b):
    """Solve L^H x = b given the lower factor L."""
    vec = np.asarray(b).ndim == L.ndim - 1
    B = np.asarray(b, dtype=np.complex128)
    if vec:
        B = B[..., None]
    M = L.shape[-1]
    U = np.conj(np.swapaxes(L, -1, -2))
    X = np.zeros(np.broadcast_shapes(L.shape[:-2], B.shape[:-2]) + B.shape[-2:],
                 dtype=np.complex128)
    for i in range(M - 1, -1, -1):
        acc = B[..., i, :] - np.einsum("...k,...kn->...n", U[..., i, i + 1:], X[..., i + 1:, :])
        X[..., i, :] = acc / U[..., i, i][..., None]
    return X[..., 0] if vec else X


def cho_solve(L, b):
    return solve_upper_h(L, solve_lower(L, b))


def generalized_eigh_max(a, b):
    """Dominant generalized eigenpair of a w = xi b w (b Hermitian PD).

    Uses Cholesky whitening: with b = L L^H the problem becomes the ordinary
    Hermitian problem for L^-1 a L^-H. Returns ``(xi, w)`` with unit-norm w.
    """
    L = cholesky(b)
    Y = solve_lower(L, a)                                  # L^-1 a
    C = solve_lower(L, np.conj(np.swapaxes(Y, -1, -2)))    # L^-1 a^H L^-H
    w, V = eigh_jacobi(hermitize(C))
    u = V[..., :, -1]
    x = solve_upper_h(L, u)
    x = x / np.linalg.norm(x, axis=-1, keepdims=True)
    return w[..., -1], x
