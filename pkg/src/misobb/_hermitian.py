"""Real parametrization of Hermitian matrices.

An ``N x N`` Hermitian matrix is ``sum_p x_p E_p`` over ``N**2`` real
coordinates: ``N`` diagonal entries followed by (real, imaginary) pairs
for each upper-triangular entry.
"""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def basis(N: int) -> np.ndarray:
    """Basis ``E`` of shape ``(N**2, N, N)``, complex, read only."""
    E = np.zeros((N * N, N, N), complex)
    p = 0
    for i in range(N):
        E[p, i, i] = 1.0
        p += 1
    for i in range(N):
        for j in range(i + 1, N):
            E[p, i, j] = E[p, j, i] = 1.0
            E[p + 1, i, j] = 1j
            E[p + 1, j, i] = -1j
            p += 2
    E.setflags(write=False)
    return E


@lru_cache(maxsize=None)
def realified_basis(N: int) -> np.ndarray:
    """``[[Re E, -Im E], [Im E, Re E]]`` for each basis element."""
    return realify(basis(N))


def realify(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M)
    re, im = M.real, M.imag
    top = np.concatenate([re, -im], axis=-1)
    bot = np.concatenate([im, re], axis=-1)
    out = np.concatenate([top, bot], axis=-2)
    return np.ascontiguousarray(out)


def coeffs(M: np.ndarray) -> np.ndarray:
    """Coefficients ``c`` with ``Re Tr(M X) = c @ x`` for Hermitian ``X``."""
    M = np.asarray(M, complex)
    N = M.shape[-1]
    return np.einsum("ij,pji->p", M, basis(N)).real


def to_matrix(x: np.ndarray, N: int) -> np.ndarray:
    return np.tensordot(np.asarray(x, float), basis(N), axes=1)


def from_matrix(Q: np.ndarray) -> np.ndarray:
    Q = np.asarray(Q, complex)
    N = Q.shape[0]
    x = np.empty(N * N)
    x[:N] = np.diag(Q).real
    iu = np.triu_indices(N, 1)
    up = Q[iu]
    x[N::2] = up.real
    x[N + 1 :: 2] = up.imag
    return x
