"""Projected-estimator pre-estimates used to start the EM iterations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import eig_sym_topk, sym
from .series import MatrixSeries

VAR_FLOOR = 1e-8
RIDGE = 1e-8
EIGEN_GAP = 1e-12


@dataclass
class PeInit:
    R0: np.ndarray
    C0: np.ndarray
    Ftilde: np.ndarray
    H0diag: np.ndarray
    K0diag: np.ndarray
    BA0: np.ndarray
    QP0: np.ndarray
    flags: list[str] = field(default_factory=list)

    @property
    def signal(self) -> np.ndarray:
        return self.R0 @ self.Ftilde @ self.C0.T


def _require_complete(Y: MatrixSeries | np.ndarray) -> np.ndarray:
    if isinstance(Y, MatrixSeries):
        if Y.has_missing:
            raise ValueError("data contain missing entries; impute or extract a subpanel first")
        return Y.Y
    return np.asarray(Y, dtype=float)


def second_moment_matrices(Y) -> tuple[np.ndarray, np.ndarray]:
    Y = _require_complete(Y)
    T, p1, p2 = Y.shape
    M1 = np.einsum("tij,tkj->ik", Y, Y) / (p1 * p2 * T)
    M2 = np.einsum("tji,tjk->ik", Y, Y) / (p1 * p2 * T)
    return sym(M1), sym(M2)


def _leading(M: np.ndarray, k: int, flags: list[str], name: str) -> np.ndarray:
    pair = eig_sym_topk(M, min(k + 1, M.shape[0]))
    lam = pair.eigenvalues
    if len(lam) > k and lam[k - 1] - lam[k] < EIGEN_GAP:
        flags.append(f"{name}: eigen-gap below {EIGEN_GAP:g}, rotation ill-determined")
    return np.sqrt(M.shape[0]) * pair.eigenvectors[:, :k]


def projected_loadings(Y, k1: int, k2: int, flags: list[str] | None = None):
    """Return ``(R0, C0)`` scaled so that ``R0'R0 = p1 I`` and ``C0'C0 = p2 I``."""
    flags = [] if flags is None else flags
    Y = _require_complete(Y)
    T, p1, p2 = Y.shape
    M1, M2 = second_moment_matrices(Y)
    R_bar = _leading(M1, k1, flags, "M1")
    C_bar = _leading(M2, k2, flags, "M2")
    X = Y @ C_bar / p2
    Z = np.swapaxes(Y, 1, 2) @ R_bar / p1
    M1_bar = np.einsum("tia,tja->ij", X, X) / (p1 * p2 * T)
    M2_bar = np.einsum("tja,tka->jk", Z, Z) / (p1 * p2 * T)
    return _leading(sym(M1_bar), k1, flags, "projected M1"), _leading(sym(M2_bar), k2, flags, "projected M2")


def project_factors(Y, R0: np.ndarray, C0: np.ndarray) -> np.ndarray:
    Y = _require_complete(Y)
    p1, p2 = R0.shape[0], C0.shape[0]
    return R0.T @ Y @ C0 / (p1 * p2)


def normalize_variances(Hdiag: np.ndarray, Kdiag: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rescale so that ``mean(Hdiag) == 1`` while keeping ``outer(Kdiag, Hdiag)``."""
    c = float(np.mean(Hdiag))
    return Hdiag / c, Kdiag * c


def init_idio_variances(Y, R0, C0, Ftilde) -> tuple[np.ndarray, np.ndarray]:
    Y = _require_complete(Y)
    T, p1, p2 = Y.shape
    E = Y - R0 @ Ftilde @ C0.T
    H0 = np.maximum(np.einsum("tij,tij->i", E, E) / (T * p2), VAR_FLOOR)
    K0 = np.maximum(np.einsum("tij,tij->j", E, E / H0[None, :, None]) / (T * p1), VAR_FLOOR)
    return H0, K0


def init_dynamics(Ftilde: np.ndarray, flags: list[str] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """OLS VAR(1) on ``vec(Ftilde_t)``: transition and residual covariance."""
    flags = [] if flags is None else flags
    T = Ftilde.shape[0]
    f = np.swapaxes(Ftilde, 1, 2).reshape(T, -1)
    k = f.shape[1]
    if T < 2:
        raise ValueError("need at least two periods to fit the factor dynamics")
    S10 = f[1:].T @ f[:-1]
    S00 = f[:-1].T @ f[:-1]
    if np.linalg.cond(S00) > 1e12:
        flags.append("init_dynamics: singular Gram matrix, ridge added")
        S00 = S00 + RIDGE * np.eye(k)
    BA = np.linalg.solve(S00.T, S10.T).T
    resid = f[1:] - f[:-1] @ BA.T
    QP = sym(resid.T @ resid / (T - 1))
    return BA, QP


def pe_init(Y, k1: int, k2: int) -> PeInit:
    flags: list[str] = []
    Yc = _require_complete(Y)
    R0, C0 = projected_loadings(Yc, k1, k2, flags)
    F = project_factors(Yc, R0, C0)
    H0, K0 = normalize_variances(*init_idio_variances(Yc, R0, C0, F))
    BA, QP = init_dynamics(F, flags)
    return PeInit(R0, C0, F, H0, K0, BA, QP, flags)


def imputed_pe(Y: MatrixSeries, k1: int, k2: int, n_iter: int = 30, tol: float = 1e-7) -> tuple[PeInit, np.ndarray]:
    """PE on data whose masked cells are filled iteratively by the PE signal.

    Starts from zero fill; returns the final estimate and the completed panel.
    """
    if not Y.has_missing:
        return pe_init(Y, k1, k2), Y.Y
    W = Y.mask
    Z = Y.filled(0.0)
    prev = None
    for _ in range(n_iter):
        est = pe_init(Z, k1, k2)
        S = est.signal
        Z = np.where(W, Y.Y, S)
        if prev is not None and np.linalg.norm(S - prev) <= tol * max(1.0, np.linalg.norm(S)):
            break
        prev = S
    return est, Z


def eigenvalue_ratio_k(Y, kmax: int) -> tuple[int, int]:
    """Factor counts maximizing the ratio of consecutive eigenvalues of M1, M2."""
    Y = _require_complete(Y)
    if kmax < 1 or kmax >= min(Y.shape[1], Y.shape[2]):
        raise ValueError("kmax must satisfy 1 <= kmax < min(p1, p2)")
    out = []
    for M in second_moment_matrices(Y):
        lam = np.sort(np.linalg.eigvalsh(M))[::-1][: kmax + 1]
        lam = np.maximum(lam, np.finfo(float).tiny)
        out.append(int(np.argmax(lam[:-1] / lam[1:])) + 1)
    return out[0], out[1]


def subpanel_selection(mask: np.ndarray, min_rows: int = 1, min_cols: int = 1):
    """Greedy row/column deletion down to a fully observed block.

    Repeatedly drops the row or column carrying the most missing cells over
    all periods (columns win ties). Returns boolean row and column selectors,
    or ``None`` when the block would be smaller than ``min_rows x min_cols``.
    """
    missing = ~mask
    rows = np.ones(mask.shape[1], dtype=bool)
    cols = np.ones(mask.shape[2], dtype=bool)
    while True:
        sub = missing[:, rows][:, :, cols]
        if not sub.any():
            break
        row_counts = sub.sum(axis=(0, 2))
        col_counts = sub.sum(axis=(0, 1))
        if col_counts.max() >= row_counts.max():
            cols[np.flatnonzero(cols)[np.argmax(col_counts)]] = False
        else:
            rows[np.flatnonzero(rows)[np.argmax(row_counts)]] = False
        if rows.sum() < min_rows or cols.sum() < min_cols:
            return None
    return rows, cols


def extend_loadings(Y: MatrixSeries, R_sub, C_sub, F, rows, cols):
    """Fill loadings of dropped rows/columns by least squares on given factors."""
    p1, p2 = Y.p1, Y.p2
    k1, k2 = F.shape[1], F.shape[2]
    W = Y.weights()
    Yz = Y.filled(0.0)
    C = np.zeros((p2, k2))
    C[cols] = C_sub
    # columns first, using the kept rows: y_tij ~ (R_sub F_t)_i . c_j
    RF = R_sub @ F  # (T, |rows|, k2)
    for j in np.flatnonzero(~cols):
        w = W[:, rows, j].ravel()
        X = RF.reshape(-1, k2)[w > 0]
        y = Yz[:, rows, j].ravel()[w > 0]
        C[j] = np.linalg.lstsq(X, y, rcond=None)[0] if len(y) else 0.0
    R = np.zeros((p1, k1))
    R[rows] = R_sub
    FC = F @ C.T  # (T, k1, p2)
    for i in np.flatnonzero(~rows):
        w = W[:, i, :].ravel()
        X = np.swapaxes(FC, 1, 2).reshape(-1, k1)[w > 0]
        y = Yz[:, i, :].ravel()[w > 0]
        R[i] = np.linalg.lstsq(X, y, rcond=None)[0] if len(y) else 0.0
    return R, C


def masked_idio_variances(Y: MatrixSeries, R, C, F):
    """Diagonal variance pre-estimates from observed residuals only."""
    W = Y.weights()
    E = (Y.filled(0.0) - R @ F @ C.T) * W
    nr = np.maximum(W.sum(axis=(0, 2)), 1.0)
    H0 = np.maximum(np.einsum("tij,tij->i", E, E) / nr, VAR_FLOOR)
    nc = np.maximum(W.sum(axis=(0, 1)), 1.0)
    K0 = np.maximum(np.einsum("tij,tij->j", E, E / H0[None, :, None]) / nc, VAR_FLOOR)
    return normalize_variances(H0, K0)
