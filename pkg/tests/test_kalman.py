import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmfm.kalman import (
    FilterDivergence,
    StateSpace,
    build_state_space,
    forecast_one_step,
    kalman_filter,
    kalman_filter_univariate,
    smooth,
)
from dmfm.series import from_vec_series, to_vec_series


def random_ss(rng, n=3, k=2):
    L = rng.standard_normal((n, k))
    X = rng.standard_normal((k, k))
    Trans = 0.5 * X / max(1.0, np.max(np.abs(np.linalg.eigvals(X))))
    Q = rng.standard_normal((k, k))
    Q = Q @ Q.T + 0.5 * np.eye(k)
    P0 = rng.standard_normal((k, k))
    P0 = P0 @ P0.T + np.eye(k)
    return StateSpace(L, rng.uniform(0.5, 2.0, n), Trans, Q, rng.standard_normal(k), P0)


def batch_oracle(Yv, ss, W=None):
    """Condition the joint Gaussian of (f_0..f_T, observed y) directly."""
    T, n = Yv.shape
    k = ss.k
    W = np.ones((T, n), bool) if W is None else np.asarray(W, bool)
    m = np.zeros((T + 1) * k)
    m[:k] = ss.f0
    # state covariance, blocks Cov(f_s, f_t)
    V = [ss.Pi0]
    means = [ss.f0]
    for t in range(T):
        means.append(ss.Trans @ means[-1])
        V.append(ss.Trans @ V[-1] @ ss.Trans.T + ss.StateCov)
    m = np.concatenate(means)
    S = np.zeros(((T + 1) * k, (T + 1) * k))
    for s in range(T + 1):
        for t in range(s, T + 1):
            blk = np.linalg.matrix_power(ss.Trans, t - s) @ V[s]
            S[t * k : (t + 1) * k, s * k : (s + 1) * k] = blk
            S[s * k : (s + 1) * k, t * k : (t + 1) * k] = blk.T
    # observation map from x to observed y
    rows, ys, noise = [], [], []
    for t in range(T):
        for i in range(n):
            if W[t, i]:
                r = np.zeros((T + 1) * k)
                r[(t + 1) * k : (t + 2) * k] = ss.Lambda[i]
                rows.append(r)
                ys.append(Yv[t, i])
                noise.append(ss.obs_noise[i])
    G = np.array(rows).reshape(-1, (T + 1) * k)
    y = np.array(ys)
    Syy = G @ S @ G.T + np.diag(noise)
    Sxy = S @ G.T
    resid = y - G @ m
    gain = np.linalg.solve(Syy, Sxy.T).T
    mx = m + gain @ resid
    Sx = S - gain @ Sxy.T
    _, logdet = np.linalg.slogdet(Syy)
    ll = -0.5 * (len(y) * np.log(2 * np.pi) + logdet + resid @ np.linalg.solve(Syy, resid))
    return mx.reshape(T + 1, k), Sx, ll


def check_against_oracle(Yv, ss, W=None, tol=1e-10):
    mx, Sx, ll = batch_oracle(Yv, ss, W)
    smo = smooth(Yv, ss, W)
    T, k = Yv.shape[0], ss.k
    assert np.max(np.abs(smo.f0_sm - mx[0])) <= tol
    assert np.max(np.abs(smo.f_sm - mx[1:])) <= tol
    assert np.max(np.abs(smo.Pi0_sm - Sx[:k, :k])) <= tol
    for t in range(T):
        a, b = (t + 1) * k, (t + 2) * k
        assert np.max(np.abs(smo.Pi_sm[t] - Sx[a:b, a:b])) <= tol
        assert np.max(np.abs(smo.Delta_sm[t] - Sx[a:b, a - k : a])) <= tol
    assert abs(smo.loglik - ll) <= tol * max(1.0, abs(ll))


def test_batch_oracle_complete():
    rng = np.random.default_rng(1)
    ss = random_ss(rng, n=3, k=2)
    Yv = rng.standard_normal((4, 3))
    check_against_oracle(Yv, ss)


def test_batch_oracle_masked():
    rng = np.random.default_rng(2)
    ss = random_ss(rng, n=3, k=2)
    Yv = rng.standard_normal((4, 3))
    W = np.array([[1, 0, 1], [0, 0, 0], [1, 1, 1], [0, 1, 0]], bool)
    check_against_oracle(Yv, ss, W)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31))
def test_batch_oracle_property(T, n, k, seed):
    rng = np.random.default_rng(seed)
    ss = random_ss(rng, n=n, k=k)
    Yv = rng.standard_normal((T, n))
    W = rng.random((T, n)) > 0.3
    check_against_oracle(Yv, ss, W, tol=1e-8)


def test_scalar_hand_oracle():
    ss = StateSpace(np.array([[1.0]]), np.array([1.0]), np.array([[0.5]]), np.array([[1.0]]), np.zeros(1), np.eye(1))
    fo = kalman_filter(np.array([[2.0]]), ss)
    # prior var 0.25 + 1 = 1.25, gain 1.25 / 2.25
    assert fo.P_pred[0, 0, 0] == pytest.approx(1.25, abs=1e-14)
    assert fo.f_filt[0, 0] == pytest.approx(2.0 * 1.25 / 2.25, abs=1e-14)
    assert fo.P_filt[0, 0, 0] == pytest.approx(1.25 / 2.25, abs=1e-14)
    assert fo.loglik == pytest.approx(-0.5 * (np.log(2 * np.pi * 2.25) + 4.0 / 2.25), abs=1e-14)


def test_univariate_matches_information_form():
    rng = np.random.default_rng(3)
    ss = random_ss(rng, n=5, k=3)
    Yv = rng.standard_normal((6, 5))
    W = rng.random((6, 5)) > 0.4
    for mask in (None, W):
        a = kalman_filter(Yv, ss, mask)
        b = kalman_filter_univariate(Yv, ss, mask)
        assert np.max(np.abs(a.f_filt - b.f_filt)) <= 1e-10
        assert np.max(np.abs(a.P_filt - b.P_filt)) <= 1e-10
        assert abs(a.loglik - b.loglik) <= 1e-10 * max(1.0, abs(a.loglik))


def test_observation_reorder_invariance():
    rng = np.random.default_rng(4)
    ss = random_ss(rng, n=4, k=2)
    Yv = rng.standard_normal((5, 4))
    perm = rng.permutation(4)
    ss2 = StateSpace(ss.Lambda[perm], ss.obs_noise[perm], ss.Trans, ss.StateCov, ss.f0, ss.Pi0)
    a, b = smooth(Yv, ss), smooth(Yv[:, perm], ss2)
    assert np.max(np.abs(a.f_sm - b.f_sm)) <= 1e-10
    assert abs(a.loglik - b.loglik) <= 1e-10 * max(1.0, abs(a.loglik))


def test_more_observations_shrink_variance():
    rng = np.random.default_rng(5)
    ss = random_ss(rng, n=4, k=2)
    Yv = rng.standard_normal((5, 4))
    W = np.ones((5, 4), bool)
    W[2, 1:] = False
    full, part = smooth(Yv, ss), smooth(Yv, ss, W)
    for t in range(5):
        assert np.linalg.eigvalsh(part.Pi_sm[t] - full.Pi_sm[t]).min() >= -1e-12


def test_all_missing_period_is_pure_prediction():
    rng = np.random.default_rng(6)
    ss = random_ss(rng, n=3, k=2)
    Yv = rng.standard_normal((3, 3))
    W = np.ones((3, 3), bool)
    W[1] = False
    fo = kalman_filter(Yv, ss, W)
    assert np.allclose(fo.f_filt[1], fo.f_pred[1], atol=1e-14)
    assert np.allclose(fo.P_filt[1], fo.P_pred[1], atol=1e-14)
    assert fo.loglik_t[1] == 0.0


def test_single_period():
    rng = np.random.default_rng(7)
    ss = random_ss(rng, n=3, k=2)
    check_against_oracle(rng.standard_normal((1, 3)), ss)


def test_build_state_space_layout():
    rng = np.random.default_rng(8)
    R, C = rng.standard_normal((3, 2)), rng.standard_normal((4, 1))
    H, K = rng.uniform(1, 2, 3), rng.uniform(1, 2, 4)
    ss = build_state_space(R, C, H, K, 0.5 * np.eye(2), np.eye(2))
    F = rng.standard_normal((2, 1))
    Y = R @ F @ C.T
    assert np.allclose(ss.Lambda @ F.ravel(order="F"), Y.ravel(order="F"), atol=1e-12)
    assert np.allclose(ss.obs_noise.reshape(4, 3).T, np.outer(H, K), atol=0)
    with pytest.raises(ValueError):
        build_state_space(R, C, -H, K, np.eye(2), np.eye(2))


def test_vec_series_roundtrip():
    Y = np.arange(24.0).reshape(2, 3, 4)
    v = to_vec_series(Y)
    assert v[0].tolist() == Y[0].ravel(order="F").tolist()
    assert np.array_equal(from_vec_series(v, 3, 4), Y)


def test_divergence_raises():
    rng = np.random.default_rng(9)
    ss = random_ss(rng, n=2, k=1)
    Yv = np.array([[1.0, np.inf]])
    with pytest.raises(FilterDivergence):
        kalman_filter(Yv, ss)


def test_forecast_one_step():
    R, C = np.ones((2, 1)), np.ones((3, 1))
    ss = build_state_space(R, C, np.ones(2), np.ones(3), 0.5 * np.eye(1), np.eye(1))
    f_next, S_next = forecast_one_step(ss, np.array([2.0]), 2, 3)
    assert f_next.tolist() == [1.0]
    assert np.array_equal(S_next, np.ones((2, 3)))
