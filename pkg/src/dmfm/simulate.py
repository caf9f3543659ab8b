"""Synthetic matrix-factor panels for Monte Carlo work.

Factors follow ``F_t = A F_{t-1} B' + U_t`` and idiosyncratic terms
``E_t = D E_{t-1} G' + V_t``; observations are ``Y_t = R F_t C' + E_t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import spectral_radius
from .series import MatrixSeries

BURN_IN = 200
FAMILIES = ("normal", "skewt")
MISSING_KINDS = ("none", "random", "block")


@dataclass(frozen=True)
class DgpConfig:
    T: int = 100
    p1: int = 20
    p2: int = 20
    k1: int = 2
    k2: int = 2
    mu: float = 0.7
    delta: float = 0.0
    tau: float = 0.0
    family: str = "normal"
    missing: str = "none"
    pi: float = 0.0
    seed: int = 1

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be at least 2")
        if not (1 <= self.k1 <= self.p1 and 1 <= self.k2 <= self.p2):
            raise ValueError("need 1 <= k1 <= p1 and 1 <= k2 <= p2")
        if not 0.0 < self.mu <= 1.0:
            raise ValueError("mu must lie in (0, 1]")
        if not (0.0 <= self.delta < 1.0 and 0.0 <= self.tau < 1.0):
            raise ValueError("delta and tau must lie in [0, 1)")
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.missing not in MISSING_KINDS:
            raise ValueError(f"missing must be one of {MISSING_KINDS}")
        if self.missing != "none" and not 0.0 < self.pi < 1.0:
            raise ValueError("pi must lie in (0, 1) when data are missing")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def nonstationary(self) -> bool:
        return self.mu >= 1.0

    def with_seed(self, seed: int) -> "DgpConfig":
        return replace(self, seed=seed)


@dataclass
class SimTruth:
    Y: MatrixSeries
    F: np.ndarray
    S: np.ndarray
    E: np.ndarray
    params: dict = field(default_factory=dict)


def gen_loadings(p: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=(p, k))


def _mar_block(k: int, rng: np.random.Generator) -> np.ndarray:
    M = rng.uniform(0.0, 0.5, size=(k, k))
    M[np.diag_indices(k)] = rng.uniform(0.7, 0.9, size=k)
    return M


def gen_mar_coeffs(k1: int, k2: int, mu: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(A, B)`` so that the spectral radius of ``kron(B, A)`` equals ``mu``."""
    A = _mar_block(k1, rng)
    B_star = _mar_block(k2, rng)
    # the spectrum of a Kronecker product is the set of pairwise products
    rho = spectral_radius(B_star) * spectral_radius(A)
    return A, mu * B_star / rho


def banded_cov(p: int, tau: float, rng: np.random.Generator) -> np.ndarray:
    idx = np.arange(p)
    M = tau ** np.abs(idx[:, None] - idx[None, :]).astype(float)
    M[np.diag_indices(p)] = rng.uniform(0.7, 1.2, size=p)
    return M


def gen_idio_coeffs(p1: int, p2: int, delta: float, tau: float, rng: np.random.Generator):
    """Return ``(D, G, H, K)`` for the idiosyncratic MAR(1)."""
    D = np.diag(rng.uniform(0.0, delta, size=p1)) if delta > 0 else np.zeros((p1, p1))
    G = np.diag(rng.uniform(0.0, delta, size=p2)) if delta > 0 else np.zeros((p2, p2))
    H = banded_cov(p1, tau, rng)
    K = banded_cov(p2, tau, rng)
    return D, G, H, K


def _chol(S: np.ndarray, name: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} is not symmetric positive definite") from None


def sample_matrix_normal(m, n, Sr, Sc, rng, size=None) -> np.ndarray:
    """Zero-mean matrix normal draw(s) with ``Cov(vec X) = kron(Sc, Sr)``."""
    Lr = _chol(np.atleast_2d(Sr), "row covariance")
    Lc = _chol(np.atleast_2d(Sc), "column covariance")
    shape = (m, n) if size is None else (size, m, n)
    Z = rng.standard_normal(shape)
    return Lr @ Z @ Lc.T


# slant of the hidden-truncation skew applied to every entry
SKEW_SLANT = 1.0


def _skew_t_moments(df: float) -> tuple[float, float]:
    d = SKEW_SLANT / np.sqrt(1.0 + SKEW_SLANT**2)
    sn_mean = d * np.sqrt(2.0 / np.pi)
    sn_sd = np.sqrt(1.0 - sn_mean**2)
    # E[w^2] for the mixing scale w = sqrt(df / chi2_df)
    w2 = df / (df - 2.0)
    return sn_mean, sn_sd * np.sqrt(w2)


def standard_skew_t(shape, df: float, rng: np.random.Generator) -> np.ndarray:
    """Standardized entries: zero mean, unit variance, pairwise uncorrelated.

    One chi-square mixing scale is shared by all entries of a matrix, so the
    draw is matrix-variate t, with an entrywise skew-normal kernel.
    """
    if df <= 2:
        raise ValueError("skew-t needs df > 2 for a finite variance")
    shape = tuple(np.atleast_1d(shape))
    d = SKEW_SLANT / np.sqrt(1.0 + SKEW_SLANT**2)
    z0 = np.abs(rng.standard_normal(shape))
    z1 = rng.standard_normal(shape)
    sn = d * z0 + np.sqrt(1.0 - d * d) * z1
    lead = shape[:-2] if len(shape) >= 2 else shape[:0]
    w = np.sqrt(df / rng.chisquare(df, size=lead))
    w = np.reshape(w, lead + (1,) * min(2, len(shape)))
    mean, scale = _skew_t_moments(df)
    return w * (sn - mean) / scale


def sample_matrix_skew_t(m, n, Sr, Sc, rng, df: float = 4.0, size=None) -> np.ndarray:
    """Skewed, heavy-tailed draw(s) with mean zero and ``Cov(vec X) = kron(Sc, Sr)``."""
    Lr = _chol(np.atleast_2d(Sr), "row covariance")
    Lc = _chol(np.atleast_2d(Sc), "column covariance")
    shape = (m, n) if size is None else (size, m, n)
    return Lr @ standard_skew_t(shape, df, rng) @ Lc.T


def _innovations(family, m, n, Sr, Sc, rng, size):
    if family == "normal":
        return sample_matrix_normal(m, n, Sr, Sc, rng, size=size)
    return sample_matrix_skew_t(m, n, Sr, Sc, rng, size=size)


def _remove_unit_root(f: np.ndarray, trans: np.ndarray) -> np.ndarray:
    """Zero the component of ``f`` along the unit eigenvalue of ``trans``."""
    w, V = np.linalg.eig(trans)
    wl, U = np.linalg.eig(trans.T)
    r = V[:, np.argmax(np.abs(w))].real
    u = U[:, np.argmax(np.abs(wl))].real
    return f - r * (u @ f) / (u @ r)


def apply_missing(Y: np.ndarray, kind: str, pi: float, rng: np.random.Generator) -> np.ndarray:
    """Observation mask (True = observed) for the given missing pattern."""
    T, p1, p2 = Y.shape
    mask = np.ones((T, p1, p2), dtype=bool)
    if kind == "none" or pi == 0:
        return mask
    if kind == "random":
        return rng.random((T, p1, p2)) >= pi
    if kind == "block":
        half = T // 2
        if np.isclose(pi, 0.25):
            mask[:half, p1 // 2 :, p2 // 2 :] = False
        elif np.isclose(pi, 0.5):
            mask[:half, :, p2 // 2 :] = False
        else:
            raise ValueError("block pattern is defined for pi = 0.25 or 0.5 only")
        return mask
    raise ValueError(f"unknown missing pattern {kind!r}")


def simulate(cfg: DgpConfig) -> SimTruth:
    rng = np.random.default_rng(cfg.seed)
    T, p1, p2, k1, k2 = cfg.T, cfg.p1, cfg.p2, cfg.k1, cfg.k2
    R = gen_loadings(p1, k1, rng)
    C = gen_loadings(p2, k2, rng)
    A, B = gen_mar_coeffs(k1, k2, cfg.mu, rng)
    D, G, H, K = gen_idio_coeffs(p1, p2, cfg.delta, cfg.tau, rng)

    n_total = BURN_IN + T
    U = _innovations(cfg.family, k1, k2, np.eye(k1), np.eye(k2), rng, n_total)
    V = _innovations(cfg.family, p1, p2, H, K, rng, n_total)

    F = np.zeros((n_total, k1, k2))
    E = np.zeros((n_total, p1, p2))
    F[0], E[0] = U[0], V[0]
    for t in range(1, n_total):
        F[t] = A @ F[t - 1] @ B.T + U[t]
        E[t] = D @ E[t - 1] @ G.T + V[t]
        if cfg.nonstationary and t == BURN_IN - 1:
            # restart the common trend at zero; stationary directions keep their burn-in
            f = _remove_unit_root(F[t].reshape(-1, order="F"), np.kron(B, A))
            F[t] = f.reshape(k1, k2, order="F")
    F, E = F[BURN_IN:], E[BURN_IN:]
    S = R @ F @ C.T
    Y = S + E
    mask = apply_missing(Y, cfg.missing, cfg.pi, rng)
    params = dict(R=R, C=C, A=A, B=B, D=D, G=G, H=H, K=K)
    return SimTruth(MatrixSeries(Y, mask), F, S, E, params)
