"""Matrix operators used throughout the estimation code.

All vectorization is column-major, so that ``vec(X @ Z @ Y) ==
kron(Y.T, X) @ vec(Z)`` holds for conformable arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# commutation and diagonal-stacking matrices are materialized only up to this size
DENSE_LIMIT = 64


class ShapeError(ValueError):
    """Raised when operands do not have the block structure an operator needs."""


def vec(M: np.ndarray) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M))
    return M.reshape(-1, order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    v = np.asarray(v).ravel()
    if v.size != rows * cols:
        raise ShapeError(f"cannot unvec length {v.size} into {rows}x{cols}")
    return v.reshape(rows, cols, order="F")


def kron(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.kron(np.atleast_2d(A), np.atleast_2d(B))


def hadamard(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    if A.shape != B.shape:
        raise ShapeError(f"hadamard shapes differ: {A.shape} vs {B.shape}")
    return A * B


def commutation_indices(n: int, m: int) -> np.ndarray:
    """Permutation ``idx`` with ``vec(X.T) == vec(X)[idx]`` for ``n x m`` X."""
    return np.arange(n * m).reshape(n, m, order="F").T.reshape(-1, order="F")


def commutation_matrix(n: int, m: int) -> np.ndarray:
    """Dense ``nm x nm`` matrix mapping ``vec(X)`` to ``vec(X.T)`` for ``n x m`` X."""
    if n < 1 or m < 1:
        raise ShapeError("commutation matrix needs n, m >= 1")
    if n * m > DENSE_LIMIT:
        raise ShapeError(
            f"refusing to materialize a {n * m}x{n * m} commutation matrix; "
            "use commute() or commutation_indices()"
        )
    K = np.zeros((n * m, n * m))
    K[np.arange(n * m), commutation_indices(n, m)] = 1.0
    return K


def commute(M: np.ndarray, n: int, m: int) -> np.ndarray:
    """Return ``K_nm @ M @ K_nm.T`` without forming ``K_nm``.

    Accepts a stack of matrices in the leading axes.
    """
    idx = commutation_indices(n, m)
    return M[..., idx, :][..., :, idx]


def star(A: np.ndarray, B: np.ndarray, p: int | None = None, q: int | None = None) -> np.ndarray:
    """Block-weighted sum ``sum_ij a_ij B_ij`` over the ``p x q`` blocks of B."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    m, n = A.shape
    if p is None:
        p = B.shape[0] // m
    if q is None:
        q = B.shape[1] // n
    if B.shape != (m * p, n * q):
        raise ShapeError(f"star: B of shape {B.shape} is not ({m}*{p}, {n}*{q})")
    blocks = B.reshape(m, p, n, q)
    return np.einsum("ij,iajb->ab", A, blocks)


def special_partition(A: np.ndarray, i: int, j: int, m: int, n: int, p: int, q: int) -> np.ndarray:
    """The ``m x n`` matrix of entries ``A[r*p - p + i, s*q - q + j]`` (1-based i, j)."""
    A = np.atleast_2d(A)
    if A.shape != (m * p, n * q):
        raise ShapeError(f"special_partition: A of shape {A.shape} is not ({m * p}, {n * q})")
    if not (1 <= i <= p and 1 <= j <= q):
        raise IndexError(f"partition index ({i}, {j}) outside 1..{p} x 1..{q}")
    return A[i - 1 :: p, j - 1 :: q]


def basis_matrix(i: int, j: int, m: int, n: int) -> np.ndarray:
    """Standard basis ``m x n`` matrix with a one at (i, j), 1-based."""
    E = np.zeros((m, n))
    E[i - 1, j - 1] = 1.0
    return E


def diag_stack(W: np.ndarray) -> np.ndarray:
    W = np.atleast_2d(W)
    if W.size > DENSE_LIMIT:
        raise ShapeError(f"refusing to materialize a {W.size}x{W.size} diagonal; use vec(W) * x")
    return np.diag(vec(W).astype(float))


@dataclass(frozen=True)
class SymEigPair:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _fix_signs(V: np.ndarray) -> np.ndarray:
    V = V.copy()
    for c in range(V.shape[1]):
        r = int(np.argmax(np.abs(V[:, c])))
        if V[r, c] < 0:
            V[:, c] = -V[:, c]
    return V


def eig_sym_topk(M: np.ndarray, k: int, tol: float = 1e-10) -> SymEigPair:
    """Leading ``k`` eigenpairs of a symmetric matrix, largest first.

    Each eigenvector is signed so that its largest-magnitude entry is positive.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    d = M.shape[0]
    if M.shape != (d, d):
        raise ShapeError("eig_sym_topk needs a square matrix")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > tol * scale:
        raise ValueError("eig_sym_topk: matrix is not symmetric")
    if not 1 <= k <= d:
        raise ValueError(f"k={k} outside 1..{d}")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    order = np.argsort(w)[::-1][:k]
    return SymEigPair(w[order], _fix_signs(V[:, order]))


def sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0
