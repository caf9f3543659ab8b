"""Accuracy measures for estimated loadings and signals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MetricSet:
    d_R: float
    d_C: float
    mse_S: float
    mse_Y0: float | None = None

    def ratio(self, base: "MetricSet") -> "MetricSet":
        """Elementwise ``self / base``."""
        y0 = None
        if self.mse_Y0 is not None and base.mse_Y0 is not None:
            y0 = self.mse_Y0 / base.mse_Y0
        return MetricSet(self.d_R / base.d_R, self.d_C / base.d_C, self.mse_S / base.mse_S, y0)


def _orth_basis(A: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] < A.shape[1]:
        raise ValueError("loading matrix has more columns than rows")
    Q, Rf = np.linalg.qr(A)
    d = np.abs(np.diag(Rf))
    if d.min(initial=np.inf) <= 1e-12 * max(1.0, d.max(initial=0.0)):
        raise ValueError("loading matrix is rank deficient")
    return Q


def col_space_distance(A: np.ndarray, Ahat: np.ndarray) -> float:
    """Spectral norm of the difference between the two column-space projectors."""
    Qa, Qb = _orth_basis(A), _orth_basis(Ahat)
    if Qa.shape != Qb.shape:
        raise ValueError(f"shape mismatch {np.shape(A)} vs {np.shape(Ahat)}")
    D = Qb @ Qb.T - Qa @ Qa.T
    return float(np.linalg.norm(D, 2))


def mse_signal(S: np.ndarray, S_hat: np.ndarray) -> float:
    S, S_hat = np.asarray(S, float), np.asarray(S_hat, float)
    if S.shape != S_hat.shape:
        raise ValueError(f"shape mismatch {S.shape} vs {S_hat.shape}")
    return float(np.mean((S_hat - S) ** 2))


def mse_missing(Y: np.ndarray, S_hat: np.ndarray, W: np.ndarray) -> float:
    """Squared error on masked cells, averaged over all ``T p1 p2`` cells."""
    Y, S_hat = np.asarray(Y, float), np.asarray(S_hat, float)
    miss = ~np.asarray(W, dtype=bool)
    if Y.shape != S_hat.shape or miss.shape != Y.shape:
        raise ValueError("Y, S_hat and W must share a shape")
    err = np.where(miss, S_hat - Y, 0.0)
    return float(np.sum(err**2) / Y.size)


def evaluate(R, C, S, R_hat, C_hat, S_hat, Y=None, W=None) -> MetricSet:
    y0 = None if W is None else mse_missing(Y, S_hat, W)
    return MetricSet(col_space_distance(R, R_hat), col_space_distance(C, C_hat), mse_signal(S, S_hat), y0)
