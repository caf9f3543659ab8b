"""Kalman filter and fixed-interval smoother for the vectorized model.

The state is ``f_t = vec(F_t)`` with ``f_t = Trans f_{t-1} + u_t`` and the
observation ``y_t = Lambda f_t + e_t``, ``Cov(e_t)`` diagonal. A prior
``f_0 ~ N(f0, Pi0)`` sits one period before the first observation.

Because the observation noise is diagonal, the measurement update can be
written entirely in the ``k x k`` state space: with ``J = Lambda' D^-1 Lambda``
restricted to observed coordinates,

    Pi_{t|t} = Pi_{t|t-1} (I + J Pi_{t|t-1})^-1

and the prediction-error likelihood follows from the determinant lemma.
Nothing of size ``p1 p2 x p1 p2`` is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import kron, sym

LOG2PI = np.log(2.0 * np.pi)


class FilterDivergence(FloatingPointError):
    def __init__(self, t: int, what: str = "non-finite innovation"):
        super().__init__(f"{what} at t={t}")
        self.t = t


@dataclass(frozen=True)
class StateSpace:
    Lambda: np.ndarray
    obs_noise: np.ndarray
    Trans: np.ndarray
    StateCov: np.ndarray
    f0: np.ndarray
    Pi0: np.ndarray

    def __post_init__(self):
        if np.any(~(self.obs_noise > 0)):
            raise ValueError("observation noise variances must be positive")
        n, k = self.Lambda.shape
        if self.obs_noise.shape != (n,):
            raise ValueError("obs_noise must have one entry per observation coordinate")
        for name in ("Trans", "StateCov", "Pi0"):
            if getattr(self, name).shape != (k, k):
                raise ValueError(f"{name} must be {k}x{k}")
        for name in ("StateCov", "Pi0"):
            M = getattr(self, name)
            if np.max(np.abs(M - M.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(M))):
                raise ValueError(f"{name} must be symmetric")

    @property
    def k(self) -> int:
        return self.Lambda.shape[1]


def build_state_space(R, C, Hdiag, Kdiag, BA, QP, f0=None, Pi0=None) -> StateSpace:
    k = R.shape[1] * C.shape[1]
    noise = np.outer(np.asarray(Kdiag, float), np.asarray(Hdiag, float)).ravel()
    if np.any(~(noise > 0)):
        raise ValueError("idiosyncratic variances must be positive")
    return StateSpace(
        Lambda=kron(C, R),
        obs_noise=noise,
        Trans=np.asarray(BA, float),
        StateCov=sym(np.asarray(QP, float)),
        f0=np.zeros(k) if f0 is None else np.asarray(f0, float),
        Pi0=np.eye(k) if Pi0 is None else np.asarray(Pi0, float),
    )


@dataclass
class FilterOutput:
    f_pred: np.ndarray  # (T, k): f_{t|t-1}
    P_pred: np.ndarray  # (T, k, k)
    f_filt: np.ndarray  # (T, k): f_{t|t}
    P_filt: np.ndarray
    loglik: float
    loglik_t: np.ndarray


@dataclass
class SmootherOutput:
    f_sm: np.ndarray  # (T, k): f_{t|T}
    Pi_sm: np.ndarray  # (T, k, k)
    Delta_sm: np.ndarray  # (T, k, k): Cov(f_t, f_{t-1} | Y), t = 1..T (t-1 = 0 is the prior state)
    f0_sm: np.ndarray  # f_{0|T}
    Pi0_sm: np.ndarray
    f_filt_last: np.ndarray
    loglik: float


def _prepare(Yv: np.ndarray, W: np.ndarray | None, ss: StateSpace):
    dinv = 1.0 / ss.obs_noise
    if W is None:
        w = np.broadcast_to(dinv, Yv.shape)
        Yz = Yv
        nobs = np.full(Yv.shape[0], Yv.shape[1])
        logdet = np.full(Yv.shape[0], np.sum(np.log(ss.obs_noise)))
    else:
        W = np.asarray(W, dtype=bool)
        w = W * dinv
        Yz = np.where(W, Yv, 0.0)
        nobs = W.sum(axis=1)
        logdet = W.astype(float) @ np.log(ss.obs_noise)
    L = ss.Lambda
    if W is None:
        J = np.broadcast_to((L.T * dinv) @ L, (Yv.shape[0], ss.k, ss.k))
    else:
        J = np.einsum("ni,tn,nj->tij", L, w, L, optimize=True)
    wy = w * Yz
    c = wy @ L
    q = np.einsum("tn,tn->t", wy, Yz)
    return J, c, q, nobs, logdet


def kalman_filter(Yv: np.ndarray, ss: StateSpace, W: np.ndarray | None = None) -> FilterOutput:
    """Forward pass over ``Yv`` of shape ``(T, p1*p2)``; ``W`` marks observed entries."""
    T = Yv.shape[0]
    k = ss.k
    J, c, q, nobs, logdet = _prepare(Yv, W, ss)
    Tr, Q = ss.Trans, ss.StateCov
    I = np.eye(k)
    f_pred = np.empty((T, k))
    P_pred = np.empty((T, k, k))
    f_filt = np.empty((T, k))
    P_filt = np.empty((T, k, k))
    ll_t = np.empty(T)
    f, P = ss.f0, ss.Pi0
    for t in range(T):
        fp = Tr @ f
        Pp = sym(Tr @ P @ Tr.T + Q)
        Jt = J[t]
        M = I + Jt @ Pp
        b = c[t] - Jt @ fp
        sol = np.linalg.solve(M, np.column_stack([b, I]))
        x, Minv = sol[:, 0], sol[:, 1:]
        f = fp + Pp @ x
        P = sym(Pp @ Minv)
        with np.errstate(invalid="ignore", over="ignore"):
            quad = q[t] - 2.0 * fp @ c[t] + fp @ Jt @ fp - b @ Pp @ x
        sign, ldM = np.linalg.slogdet(M)
        with np.errstate(invalid="ignore", over="ignore"):
            ll = -0.5 * (nobs[t] * LOG2PI + logdet[t] + ldM + quad)
        if not (np.isfinite(ll) and sign > 0):
            raise FilterDivergence(t + 1)
        f_pred[t], P_pred[t], f_filt[t], P_filt[t], ll_t[t] = fp, Pp, f, P, ll
    return FilterOutput(f_pred, P_pred, f_filt, P_filt, float(ll_t.sum()), ll_t)


def kalman_filter_univariate(Yv: np.ndarray, ss: StateSpace, W: np.ndarray | None = None) -> FilterOutput:
    """Reference filter that absorbs one scalar observation at a time.

    Exact under diagonal observation noise; slower, used as a cross-check.
    """
    T, n = Yv.shape
    k = ss.k
    L, d = ss.Lambda, ss.obs_noise
    out = FilterOutput(np.empty((T, k)), np.empty((T, k, k)), np.empty((T, k)), np.empty((T, k, k)), 0.0, np.zeros(T))
    f, P = ss.f0.copy(), ss.Pi0.copy()
    for t in range(T):
        f = ss.Trans @ f
        P = sym(ss.Trans @ P @ ss.Trans.T + ss.StateCov)
        out.f_pred[t], out.P_pred[t] = f, P
        for i in range(n):
            if W is not None and not W[t, i]:
                continue
            lam = L[i]
            Pl = P @ lam
            s = lam @ Pl + d[i]
            v = Yv[t, i] - lam @ f
            gain = Pl / s
            f = f + gain * v
            P = P - np.outer(gain, Pl)
            out.loglik_t[t] += -0.5 * (LOG2PI + np.log(s) + v * v / s)
        P = sym(P)
        out.f_filt[t], out.P_filt[t] = f, P
    out.loglik = float(out.loglik_t.sum())
    return out


def rts_smoother(fo: FilterOutput, ss: StateSpace) -> SmootherOutput:
    """Fixed-interval smoother with lag-one cross-covariances."""
    T, k = fo.f_filt.shape
    Tr = ss.Trans
    f_sm = np.empty((T, k))
    Pi_sm = np.empty((T, k, k))
    Delta = np.empty((T, k, k))
    f_sm[-1], Pi_sm[-1] = fo.f_filt[-1], fo.P_filt[-1]
    f_next, P_next = f_sm[-1], Pi_sm[-1]
    for t in range(T - 2, -2, -1):
        # t == -1 is the prior state f_0
        f_f, P_f = (ss.f0, ss.Pi0) if t < 0 else (fo.f_filt[t], fo.P_filt[t])
        Pp = fo.P_pred[t + 1]
        G = np.linalg.solve(Pp, Tr @ P_f).T
        f_s = f_f + G @ (f_next - fo.f_pred[t + 1])
        P_s = sym(P_f + G @ (P_next - Pp) @ G.T)
        Delta[t + 1] = P_next @ G.T
        if t >= 0:
            f_sm[t], Pi_sm[t] = f_s, P_s
        f_next, P_next = f_s, P_s
    return SmootherOutput(f_sm, Pi_sm, Delta, f_next, P_next, fo.f_filt[-1].copy(), fo.loglik)


def smooth(Yv: np.ndarray, ss: StateSpace, W: np.ndarray | None = None) -> SmootherOutput:
    return rts_smoother(kalman_filter(Yv, ss, W), ss)


def forecast_one_step(ss: StateSpace, f_filt_last: np.ndarray, p1: int, p2: int):
    """Return ``(f_{T+1|T}, S_{T+1|T})``."""
    f_next = ss.Trans @ f_filt_last
    S_next = (ss.Lambda @ f_next).reshape(p1, p2, order="F")
    return f_next, S_next
