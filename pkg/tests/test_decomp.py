import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlmdist.channel import (ChannelModel, NoiseModel, build_window_matrices, sample_symbol_windows,
                             window_covariance)
from mlmdist.decomp import (block_g, build_alpha, compute_q_lambda, compute_trial_terms,
                            isolated_count, realization_terms, sst_eigenpairs)
from mlmdist.selectors import build_selectors, compute_mu_nu

CHANNELS = [(1, 1), (1, -1), (1, 2, 1), (1, 0, -1)]


def setup(taps, m, instants, noise, seed, size=None):
    ch = ChannelModel(taps)
    mats = build_window_matrices(ch, m)
    sel = build_selectors(m, ch.memory)
    K = window_covariance(noise, instants, m, ch.memory)
    win = sample_symbol_windows(np.random.default_rng(seed), instants, m, ch, size=size)
    return ch, mats, sel, K, win.windows.astype(float)


def test_alpha_m1():
    w, V = sst_eigenpairs(1)
    np.testing.assert_allclose(sorted(w), [1, 3])
    alpha = build_alpha(1, 1)
    np.testing.assert_allclose(np.abs(alpha[:, 0]), np.abs([1, -1]) / np.sqrt(2))
    np.testing.assert_allclose(alpha[:, 1], [1 / np.sqrt(6), 1 / np.sqrt(6)])


@pytest.mark.parametrize("m", [1, 2, 3, 5])
def test_alpha_whitens(m):
    sel = build_selectors(m, 1)
    alpha = build_alpha(m, 2)
    np.testing.assert_allclose(alpha.T @ np.kron(np.eye(2), sel.SST) @ alpha, np.eye(4 * m),
                               atol=1e-12)


def test_zero_covariance():
    ch, mats, sel, K, A = setup((1, 1), 2, [0], NoiseModel.iid(1.0), 0)
    ql = compute_q_lambda(A, np.zeros_like(K), sel, mats)
    assert ql.rank == 0 and np.all(ql.lam == 0)


def check_def9(A, K, sel, mats):
    ql = compute_q_lambda(A, K, sel, mats)
    Gam = block_g(A, mats, sel)
    target = Gam.T @ K @ Gam
    n = A.shape[-2]
    recon = (ql.Q * ql.lam ** 2) @ ql.Q.T
    white = ql.Q.T @ np.kron(np.eye(n), sel.SST) @ ql.Q
    return (np.linalg.norm(recon - target) / np.linalg.norm(target),
            np.linalg.norm(white - np.eye(white.shape[0])))


@settings(max_examples=40, deadline=None)
@given(taps=st.sampled_from(CHANNELS), m=st.integers(1, 4), lag=st.integers(1, 9),
       rho=st.floats(-0.5, 0.5), seed=st.integers(0, 2 ** 31))
def test_whitening_and_reconstruction_identities(taps, m, lag, rho, seed):
    ch, mats, sel, K, A = setup(taps, m, [0, lag], NoiseModel.lag1(0.8, rho), seed)
    rel, white = check_def9(A, K, sel, mats)
    assert rel <= 1e-8 and white <= 1e-8


@settings(max_examples=30, deadline=None)
@given(taps=st.sampled_from(CHANNELS), m=st.integers(1, 3), seed=st.integers(0, 2 ** 31))
def test_single_instant_rank_one(taps, m, seed):
    ch, mats, sel, K, A = setup(taps, m, [0], NoiseModel.iid(1.0), seed)
    ql = compute_q_lambda(A, K, sel, mats)
    terms = realization_terms(ql, A, K, sel, mats)
    ev = np.linalg.eigvalsh(terms.K_V)
    assert np.sum(ev > 1e-8 * max(np.trace(terms.K_V), 1e-300)) <= 1
    assert ev.min() >= -1e-10 * max(np.trace(terms.K_V), 1e-300)


@pytest.mark.parametrize("lag", [1, 2])
def test_close_instants_give_zero_kv(lag):
    ch, mats, sel, K, A = setup((1, 2, 1), 2, [0, lag], NoiseModel.iid(1.0), lag)
    ql = compute_q_lambda(A, K, sel, mats)
    terms = realization_terms(ql, A, K, sel, mats)
    assert np.abs(terms.K_V).max() <= 1e-8 * np.abs(K).max()


@pytest.mark.parametrize("instants,expected", [((0, 1, 2), 0), ((0, 1, 9), 1), ((0, 9, 18), 3),
                                               ((0, 9), 2), ((0, 2), 0)])
def test_rank_bound(instants, expected):
    m = 2
    assert isolated_count(instants, m) == expected
    ch, mats, sel, K, A = setup((1, 1), m, list(instants), NoiseModel.lag1(1.0, 0.4), 3, size=20)
    ql = compute_q_lambda(A, K, sel, mats)
    terms = realization_terms(ql, A, K, sel, mats)
    for KV in terms.K_V:
        ev = np.linalg.eigvalsh(KV)
        tr = max(np.trace(KV), 1e-300)
        assert np.sum(ev > 1e-8 * tr) <= expected


@pytest.mark.parametrize("taps", CHANNELS)
@pytest.mark.parametrize("m", [1, 2, 3])
def test_delta_matches_brute_force(taps, m):
    ch, mats, sel, K, A = setup(taps, m, [0, 1], NoiseModel.iid(0.9), 10 * m, size=30)
    ql = compute_q_lambda(A, K, sel, mats)
    U = np.random.default_rng(m).standard_normal((30, 4 * m))
    tt = compute_trial_terms(ql, A, K, sel, mats, U)
    c = np.einsum("bij,bj->bi", ql.Q * ql.lam[:, None, :], U).reshape(30, 2, 2 * m)
    for b in range(30):
        for i in range(2):
            mu, nu = compute_mu_nu(A[b, i], mats, sel)
            proj = c[b, i] @ sel.S
            want = np.max(proj + mu) - np.max(proj + nu)
            assert tt.delta[b, i] == pytest.approx(want, abs=1e-9)


def test_transformed_noise_covariance():
    ch, mats, sel, K, A = setup((1, 2, 1), 2, [0, 3], NoiseModel.lag1(1.0, 0.3), 4)
    ql = compute_q_lambda(A, K, sel, mats)
    U = np.random.default_rng(0).standard_normal((100_000, ql.Q.shape[0]))
    S2 = np.kron(np.eye(2), sel.S)
    Y = U @ (ql.Q * ql.lam).T @ S2
    Gam = block_g(A, mats, sel)
    target = S2.T @ Gam.T @ K @ Gam @ S2
    emp = np.cov(Y[:, ::7].T, bias=True)
    tgt = target[::7, ::7]
    se = np.sqrt((np.outer(np.diag(tgt), np.diag(tgt)) + tgt ** 2) / Y.shape[0])
    assert np.all(np.abs(emp - tgt) <= 5 * se + 1e-12)
