"""EM estimation of the dynamic matrix factor model.

Each iteration runs the smoother at the current parameters (E-step) and then
updates R, C, H, K and the factor dynamics in closed form, every block
conditioning on the freshest values of the others (M-step).

The prior state ``f_0 ~ N(f0, I)`` is part of the model: its mean is
re-estimated each step and the transition sums run over ``t = 1..T``. With
this bookkeeping every update is an exact coordinate maximization of the
expected complete-data log-likelihood, so the likelihood path cannot fall.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kalman import FilterDivergence, SmootherOutput, build_state_space, smooth
from .linalg import commute, spectral_radius, star, sym
from .pe import (
    PeInit,
    VAR_FLOOR,
    extend_loadings,
    imputed_pe,
    masked_idio_variances,
    normalize_variances,
    pe_init,
    subpanel_selection,
)
from .series import MatrixSeries, to_vec_series

RIDGE = 1e-10
QP_FLOOR = 1e-10
STATIONARY_CAP = 0.999
LEVELS_CAP = 1.0 + 1e-6
MODES = ("stationary", "levels")
SUBPANEL_EM_STEPS = 5


class EmFailure(RuntimeError):
    def __init__(self, iteration: int, block: str, cause: Exception):
        super().__init__(f"iteration {iteration}, {block}: {cause}")
        self.iteration = iteration
        self.block = block


@dataclass
class DmfmParams:
    R: np.ndarray
    C: np.ndarray
    Hdiag: np.ndarray
    Kdiag: np.ndarray
    BA: np.ndarray
    QP: np.ndarray
    f0: np.ndarray | None = None
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    P: np.ndarray | None = None
    Q: np.ndarray | None = None

    @property
    def k1(self) -> int:
        return self.R.shape[1]

    @property
    def k2(self) -> int:
        return self.C.shape[1]

    def state_space(self):
        return build_state_space(self.R, self.C, self.Hdiag, self.Kdiag, self.BA, self.QP, f0=self.f0)

    def copy(self) -> "DmfmParams":
        return DmfmParams(**{k: None if v is None else np.array(v, copy=True) for k, v in self.__dict__.items()})


@dataclass(frozen=True)
class EmConfig:
    k1: int = 2
    k2: int = 2
    eps: float = 1e-4
    n_max: int = 100
    mode: str = "stationary"
    missing_aware: bool = False
    separate_mar: bool = False

    def __post_init__(self):
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError("k1 and k2 must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @property
    def rho_cap(self) -> float:
        return STATIONARY_CAP if self.mode == "stationary" else LEVELS_CAP


@dataclass
class EmReport:
    loglik_path: list[float]
    delta_path: list[float]
    n_star: int
    converged: bool
    theta_hat: DmfmParams
    F_hat: np.ndarray
    S_hat: np.ndarray
    init: PeInit | None = None
    warnings: list[str] = field(default_factory=list)


# ----------------------------------------------------------------------------
# sufficient statistics


@dataclass
class Moments:
    """Smoothed first and second moments of the factors."""

    F: np.ndarray  # (T, k1, k2): E[F_t]
    Sff: np.ndarray  # (T, k, k): E[f_t f_t']
    S11: np.ndarray  # sum_{t=1..T} E[f_t f_t']
    S00: np.ndarray  # sum_{t=1..T} E[f_{t-1} f_{t-1}'], f_0 included
    S10: np.ndarray  # sum_{t=1..T} E[f_t f_{t-1}']
    f0: np.ndarray
    T: int


def moments(smo: SmootherOutput, k1: int, k2: int) -> Moments:
    f = smo.f_sm
    T = f.shape[0]
    Sff = np.einsum("ti,tj->tij", f, f) + smo.Pi_sm
    S0 = np.outer(smo.f0_sm, smo.f0_sm) + smo.Pi0_sm
    f_lag = np.vstack([smo.f0_sm[None, :], f[:-1]])
    S10 = f.T @ f_lag + smo.Delta_sm.sum(axis=0)
    S11 = Sff.sum(axis=0)
    S00 = S0 + S11 - Sff[-1]
    F = np.swapaxes(f.reshape(T, k2, k1), 1, 2)
    return Moments(F, Sff, sym(S11), sym(S00), S10, smo.f0_sm.copy(), T)


def _solve_gram(N: np.ndarray, G: np.ndarray, flags: list[str], name: str) -> np.ndarray:
    """Return ``N G^-1`` for symmetric ``G``, adding a ridge when it is singular."""
    G = sym(G)
    if np.linalg.cond(G) > 1e12:
        flags.append(f"{name}: near-singular normal matrix, ridge added")
        G = G + RIDGE * max(1.0, np.trace(G) / len(G)) * np.eye(len(G))
    return np.linalg.solve(G, N.T).T


# ----------------------------------------------------------------------------
# complete-data updates


def mstep_R(Y: np.ndarray, Kdiag: np.ndarray, C: np.ndarray, mom: Moments, flags: list[str] | None = None):
    flags = [] if flags is None else flags
    k1 = mom.F.shape[1]
    Ck = C / Kdiag[:, None]
    N = np.einsum("tij,jb,tab->ia", Y, Ck, mom.F)
    G = star(C.T @ Ck, mom.S11, k1, k1)
    return _solve_gram(N, G, flags, "R")


def mstep_C(Y: np.ndarray, Hdiag: np.ndarray, R: np.ndarray, mom: Moments, flags: list[str] | None = None):
    flags = [] if flags is None else flags
    k1, k2 = mom.F.shape[1:]
    Rh = R / Hdiag[:, None]
    N = np.einsum("tij,ia,tab->jb", Y, Rh, mom.F)
    G = star(R.T @ Rh, commute(mom.S11, k1, k2), k2, k2)
    return _solve_gram(N, G, flags, "C")


def mstep_H(Y: np.ndarray, Kdiag: np.ndarray, R: np.ndarray, C: np.ndarray, mom: Moments) -> np.ndarray:
    T, p1, p2 = Y.shape
    k1 = R.shape[1]
    Ck = C / Kdiag[:, None]
    yy = np.einsum("tij,tij->i", Y, Y / Kdiag)
    N = np.einsum("tij,jb,tab->ia", Y, Ck, mom.F)
    G = star(C.T @ Ck, mom.S11, k1, k1)
    h = yy - 2.0 * np.einsum("ia,ia->i", N, R) + np.einsum("ia,ab,ib->i", R, G, R)
    return np.maximum(h / (T * p2), VAR_FLOOR)


def mstep_K(Y: np.ndarray, Hdiag: np.ndarray, R: np.ndarray, C: np.ndarray, mom: Moments) -> np.ndarray:
    T, p1, p2 = Y.shape
    k1, k2 = R.shape[1], C.shape[1]
    Rh = R / Hdiag[:, None]
    yy = np.einsum("tij,tij->j", Y, Y / Hdiag[:, None])
    N = np.einsum("tij,ia,tab->jb", Y, Rh, mom.F)
    G = star(R.T @ Rh, commute(mom.S11, k1, k2), k2, k2)
    k = yy - 2.0 * np.einsum("jb,jb->j", N, C) + np.einsum("ja,ab,jb->j", C, G, C)
    return np.maximum(k / (T * p1), VAR_FLOOR)


# ----------------------------------------------------------------------------
# masked updates


def _sff_blocks(Sff: np.ndarray, k1: int, k2: int) -> np.ndarray:
    """``E[f f']`` as blocks ``[t, b, a, c, d] = E[F_ab F_dc]``."""
    return Sff.reshape(-1, k2, k1, k2, k1)


def mstep_R_missing(Y, W, Kdiag, C, mom: Moments, flags: list[str] | None = None):
    """Row-by-row solution of the masked normal equations for R.

    With diagonal H the system for ``vec(R)`` is block diagonal across rows,
    so each row is a ``k1 x k1`` solve.
    """
    flags = [] if flags is None else flags
    k1, k2 = mom.F.shape[1:]
    Wk = W / Kdiag
    Yz = np.where(W > 0, Y, 0.0)
    N = np.einsum("tij,jb,tab->ia", Yz * Wk, C, mom.F)
    M = np.einsum("jb,tij,jc->tibc", C, Wk, C)
    G = np.einsum("tibc,tbacd->iad", M, _sff_blocks(mom.Sff, k1, k2))
    R = np.empty_like(N)
    for i in range(len(R)):
        R[i] = _solve_gram(N[i : i + 1], G[i], flags, f"R row {i + 1}")[0]
    return R


def mstep_C_missing(Y, W, Hdiag, R, mom: Moments, flags: list[str] | None = None):
    flags = [] if flags is None else flags
    k1, k2 = mom.F.shape[1:]
    Wh = W / Hdiag[:, None]
    Yz = np.where(W > 0, Y, 0.0)
    N = np.einsum("tij,ia,tab->jb", Yz * Wh, R, mom.F)
    M = np.einsum("ia,tij,ic->tjac", R, Wh, R)
    # E[F' r' r F]_{bd} = sum_{ac} r_a r_c E[F_ab F_cd]
    G = np.einsum("tjac,tbadc->jbd", M, _sff_blocks(mom.Sff, k1, k2))
    C = np.empty_like(N)
    for j in range(len(C)):
        C[j] = _solve_gram(N[j : j + 1], G[j], flags, f"C row {j + 1}")[0]
    return C


def expected_sq_resid(Y, R, C, mom: Moments) -> np.ndarray:
    """``E[(y_tij - r_i F_t c_j')^2 | data]`` for every cell."""
    S = R @ mom.F @ C.T
    L = np.kron(C, R)
    T, p1, p2 = Y.shape
    s2 = np.einsum("nk,tkl,nl->tn", L, mom.Sff, L, optimize=True)
    s2 = np.swapaxes(s2.reshape(T, p2, p1), 1, 2)
    return Y * Y - 2.0 * Y * S + s2


def mstep_HK_missing(Y, W, Hdiag, Kdiag, R, C, mom: Moments):
    """Masked H then K update; missing cells contribute the previous ``h_i k_j``."""
    T, p1, p2 = Y.shape
    Yz = np.where(W > 0, Y, 0.0)
    e2 = expected_sq_resid(Yz, R, C, mom)
    V = W * e2 + (1.0 - W) * np.outer(Hdiag, Kdiag)
    H = np.maximum(np.einsum("tij,j->i", V, 1.0 / Kdiag) / (T * p2), VAR_FLOOR)
    K = np.maximum(np.einsum("tij,i->j", V, 1.0 / H) / (T * p1), VAR_FLOOR)
    return H, K


# ----------------------------------------------------------------------------
# factor dynamics


def qp_given(BA: np.ndarray, mom: Moments) -> np.ndarray:
    X = BA @ mom.S10.T
    QP = sym(mom.S11 - X - X.T + BA @ mom.S00 @ BA.T) / mom.T
    return floor_psd(QP)


def floor_psd(M: np.ndarray, floor: float = QP_FLOOR) -> np.ndarray:
    w, V = np.linalg.eigh(sym(M))
    if w.min() >= floor:
        return sym(M)
    return sym((V * np.maximum(w, floor)) @ V.T)


def mstep_dynamics(mom: Moments, flags: list[str] | None = None):
    flags = [] if flags is None else flags
    BA = _solve_gram(mom.S10, mom.S00, flags, "dynamics")
    return BA, qp_given(BA, mom)


def _shrink_toward(prev: np.ndarray, new: np.ndarray, radius, cap: float) -> tuple[np.ndarray, float]:
    """Largest step ``s`` in [0, 1] along ``prev -> new`` with ``radius <= cap``."""
    if radius(new) <= cap:
        return new, 1.0
    lo, hi = 0.0, 1.0
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if radius(prev + mid * (new - prev)) <= cap:
            lo = mid
        else:
            hi = mid
    return prev + lo * (new - prev), lo


def cap_transition(BA_prev, BA_new, cap: float, flags: list[str]):
    """Pull an explosive transition back toward the previous one.

    The expected log-likelihood is concave in the transition, so any point on
    the segment to the maximizer is at least as good as the start.
    """
    BA, s = _shrink_toward(BA_prev, BA_new, spectral_radius, cap)
    if s < 1.0:
        flags.append(f"dynamics: spectral radius above {cap:g}, step shortened to {s:.3g}")
    return BA


def mstep_separate_mar(mom: Moments, A, B, P, Q, cap: float = np.inf, flags: list[str] | None = None):
    """Sequential A, B, P, Q updates; ``||A||_F = sqrt(k1)`` and ``tr(P) = k1`` fix the scales."""
    flags = [] if flags is None else flags
    k1, k2 = A.shape[0], B.shape[0]
    cS11, cS00, cS10 = (commute(M, k1, k2) for M in (mom.S11, mom.S00, mom.S10))
    T = mom.T

    Qi = np.linalg.inv(Q)
    A_new = _solve_gram(star(Qi @ B, mom.S10, k1, k1), star(B.T @ Qi @ B, mom.S00, k1, k1), flags, "A")
    rho_B = spectral_radius(B)
    A, s = _shrink_toward(A, A_new, lambda M: spectral_radius(M) * rho_B, cap)
    if s < 1.0:
        flags.append(f"A: spectral radius cap, step shortened to {s:.3g}")

    Pi = np.linalg.inv(P)
    B_new = _solve_gram(star(Pi @ A, cS10, k2, k2), star(A.T @ Pi @ A, cS00, k2, k2), flags, "B")
    rho_A = spectral_radius(A)
    B, s = _shrink_toward(B, B_new, lambda M: spectral_radius(M) * rho_A, cap)
    if s < 1.0:
        flags.append(f"B: spectral radius cap, step shortened to {s:.3g}")

    X = star(Qi @ B, mom.S10, k1, k1) @ A.T
    P = star(Qi, mom.S11, k1, k1) - X - X.T + A @ star(B.T @ Qi @ B, mom.S00, k1, k1) @ A.T
    P = floor_psd(P / (T * k2))
    Pi = np.linalg.inv(P)
    X = star(Pi @ A, cS10, k2, k2) @ B.T
    Q = star(Pi, cS11, k2, k2) - X - X.T + B @ star(A.T @ Pi @ A, cS00, k2, k2) @ B.T
    Q = floor_psd(Q / (T * k1))
    return normalize_mar(A, B, P, Q)


def normalize_mar(A, B, P, Q):
    c = np.linalg.norm(A) / np.sqrt(A.shape[0])
    d = np.trace(P) / P.shape[0]
    return A / c, B * c, P / d, Q * d


def split_kron(M: np.ndarray, k1: int, k2: int) -> tuple[np.ndarray, np.ndarray]:
    """Nearest ``kron(X2, X1)`` to ``M`` (rank-one rearrangement), X2 is k2 x k2."""
    blocks = M.reshape(k2, k1, k2, k1).transpose(0, 2, 1, 3).reshape(k2 * k2, k1 * k1)
    U, s, Vt = np.linalg.svd(blocks)
    X2 = np.sqrt(s[0]) * U[:, 0].reshape(k2, k2)
    X1 = np.sqrt(s[0]) * Vt[0].reshape(k1, k1)
    if np.trace(X1) < 0:
        X1, X2 = -X1, -X2
    return X1, X2


# ----------------------------------------------------------------------------
# driver


def convergence_check(L_prev: float, L_next: float, eps: float) -> bool:
    return relative_change(L_prev, L_next) < eps


def relative_change(L_prev: float, L_next: float) -> float:
    denom = max(1.0, 0.5 * abs(L_next + L_prev))
    return abs(L_next - L_prev) / denom


def mstep(Y: MatrixSeries, theta: DmfmParams, mom: Moments, cfg: EmConfig, flags: list[str]) -> DmfmParams:
    H, K = theta.Hdiag, theta.Kdiag
    if Y.has_missing:
        W = Y.weights()
        R = mstep_R_missing(Y.Y, W, K, theta.C, mom, flags)
        C = mstep_C_missing(Y.Y, W, H, R, mom, flags)
        H, K = mstep_HK_missing(Y.Y, W, H, K, R, C, mom)
    else:
        R = mstep_R(Y.Y, K, theta.C, mom, flags)
        C = mstep_C(Y.Y, H, R, mom, flags)
        H = mstep_H(Y.Y, K, R, C, mom)
        K = mstep_K(Y.Y, H, R, C, mom)
    H, K = normalize_variances(H, K)
    new = DmfmParams(R, C, H, K, theta.BA, theta.QP, f0=mom.f0)
    if cfg.separate_mar:
        A, B, P, Q = mstep_separate_mar(mom, theta.A, theta.B, theta.P, theta.Q, cfg.rho_cap, flags)
        new.A, new.B, new.P, new.Q = A, B, P, Q
        new.BA, new.QP = np.kron(B, A), sym(np.kron(Q, P))
    else:
        BA, _ = mstep_dynamics(mom, flags)
        new.BA = cap_transition(theta.BA, BA, cfg.rho_cap, flags)
        new.QP = qp_given(new.BA, mom)
    return new


def params_from_init(init: PeInit, cfg: EmConfig, flags: list[str]) -> DmfmParams:
    BA = init.BA0
    rho = spectral_radius(BA)
    if rho > cfg.rho_cap:
        flags.append(f"init: transition spectral radius {rho:.4f} rescaled to {cfg.rho_cap:g}")
        BA = BA * (cfg.rho_cap / rho)
    theta = DmfmParams(init.R0.copy(), init.C0.copy(), init.H0diag.copy(), init.K0diag.copy(), BA, floor_psd(init.QP0))
    if cfg.separate_mar:
        A, B = split_kron(theta.BA, cfg.k1, cfg.k2)
        P, Q = split_kron(theta.QP, cfg.k1, cfg.k2)
        P, Q = floor_psd(sym(P)), floor_psd(sym(Q))
        A, B, P, Q = normalize_mar(A, B, P, Q)
        r = spectral_radius(A) * spectral_radius(B)
        if r > cfg.rho_cap:
            B = B * (cfg.rho_cap / r)
        theta.A, theta.B, theta.P, theta.Q = A, B, P, Q
        theta.BA, theta.QP = np.kron(B, A), sym(np.kron(Q, P))
    return theta


def run_smoother(Y: MatrixSeries, theta: DmfmParams) -> SmootherOutput:
    W = None if not Y.has_missing else to_vec_series(Y.mask)
    return smooth(to_vec_series(Y.filled(0.0)), theta.state_space(), W)


def balanced_subpanel_init(Y: MatrixSeries, k1: int, k2: int, mode: str = "stationary") -> tuple[PeInit, list[str]]:
    """Initializer for masked panels built on a fully observed sub-block.

    PE plus a few EM steps on the sub-block, then loadings of the dropped rows
    and columns by least squares on the smoothed factors. Falls back to PE on
    an iteratively imputed panel when no usable sub-block exists.
    """
    flags: list[str] = []
    if not Y.has_missing:
        return pe_init(Y, k1, k2), flags
    sel = subpanel_selection(Y.mask, k1 + 1, k2 + 1)
    if sel is None:
        flags.append("no fully observed subpanel; initialized from imputed PE")
        init, _ = imputed_pe(Y, k1, k2)
        return init, flags
    rows, cols = sel
    sub = Y.subpanel(rows, cols)
    cfg = EmConfig(k1, k2, eps=1e-12, n_max=SUBPANEL_EM_STEPS, mode=mode)
    rep = run_em(sub, cfg)
    th = rep.theta_hat
    R, C = extend_loadings(Y, th.R, th.C, rep.F_hat, rows, cols)
    H, K = masked_idio_variances(Y, R, C, rep.F_hat)
    init = PeInit(R, C, rep.F_hat, H, K, th.BA, th.QP, rep.warnings)
    return init, flags


def run_em(Y: MatrixSeries, cfg: EmConfig, init: PeInit | None = None) -> EmReport:
    flags: list[str] = []
    if not isinstance(Y, MatrixSeries):
        Y = MatrixSeries(Y)
    if init is None:
        if Y.has_missing:
            if not cfg.missing_aware:
                raise ValueError("panel has missing entries; enable the missing-aware path")
            init, f = balanced_subpanel_init(Y, cfg.k1, cfg.k2, cfg.mode)
            flags.extend(f)
        else:
            init = pe_init(Y, cfg.k1, cfg.k2)
    flags.extend(init.flags)
    theta = params_from_init(init, cfg, flags)

    def e_step(th, n):
        try:
            return run_smoother(Y, th)
        except (FilterDivergence, np.linalg.LinAlgError) as exc:
            raise EmFailure(n, "E-step", exc) from exc

    smo = e_step(theta, 0)
    path, deltas = [smo.loglik], []
    converged = False
    n = 0
    while n < cfg.n_max:
        mom = moments(smo, cfg.k1, cfg.k2)
        try:
            theta = mstep(Y, theta, mom, cfg, flags)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise EmFailure(n + 1, "M-step", exc) from exc
        n += 1
        smo = e_step(theta, n)
        path.append(smo.loglik)
        deltas.append(relative_change(path[-2], path[-1]))
        if path[-1] < path[-2] - 1e-8 * max(1.0, abs(path[-2])):
            flags.append(f"log-likelihood fell at iteration {n}")
        if deltas[-1] < cfg.eps:
            converged = True
            break
    F_hat = moments(smo, cfg.k1, cfg.k2).F
    S_hat = theta.R @ F_hat @ theta.C.T
    return EmReport(path, deltas, n, converged, theta, F_hat, S_hat, init, list(dict.fromkeys(flags)))
