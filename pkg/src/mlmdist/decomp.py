"""Per-realization linear algebra of the closed form.

For a realization of the symbol windows at instants ``t_1..t_n`` this module
builds the pair ``(Q, Lambda)`` that whitens ``I_n (x) SS^T`` while
diagonalizing ``Gamma^T K_W Gamma`` (``Gamma`` is the block-diagonal of the
``G(A_{t_i})``), and from it the conditional-Gaussian terms ``F``, ``eta``,
``K_V`` and the max-gap ``delta``.  Everything is batched over leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import WindowMatrices
from .constraints import get_constraint
from .dp import DpInstance, admissible_selectors, dp_max, dp_max_constrained, exhaustive_max
from .selectors import SelectorMatrices, build_g, linear_terms

RANK_EPS = 2.0 ** -46
KV_TOL = 1e-10


def sst_eigenpairs(m: int):
    """Closed-form eigenvalues and orthonormal eigenvectors of ``SS^T``.

    Columns ``0..2m-2`` are ``(i+i^2)^(-1/2) [1,..,1 (i times), -i, 0..]``
    with eigenvalue ``2^(2(m-1))``; the last column is ``1/sqrt(2m)`` with
    eigenvalue ``2^(2(m-1)) (2m+1)``.
    """
    d = 2 * m
    V = np.zeros((d, d))
    for i in range(1, d):
        V[:i, i - 1] = 1.0
        V[i, i - 1] = -float(i)
        V[:, i - 1] /= np.sqrt(i + i * i)
    V[:, d - 1] = 1.0 / np.sqrt(d)
    c = 2.0 ** (2 * (m - 1))
    w = np.full(d, c)
    w[-1] = c * (d + 1)
    return w, V


def build_alpha(m: int, n: int) -> np.ndarray:
    """``I_n (x) V diag(w^{-1/2})`` so that ``alpha^T (I_n (x) SS^T) alpha = I``."""
    w, V = sst_eigenpairs(m)
    return np.kron(np.eye(n), V / np.sqrt(w))


def block_g(A_windows, matrices: WindowMatrices, selectors: SelectorMatrices) -> np.ndarray:
    """Block-diagonal ``Gamma`` of shape ``(..., n*rows, 2mn)`` from ``(..., n, W)`` windows."""
    G = build_g(A_windows, matrices, selectors)  # (..., n, rows, 2m)
    n, rows, d = G.shape[-3:]
    out = np.zeros(G.shape[:-3] + (n * rows, n * d))
    for i in range(n):
        out[..., i * rows:(i + 1) * rows, i * d:(i + 1) * d] = G[..., i, :, :]
    return out


@dataclass(frozen=True)
class QLambda:
    """``Q`` (``(..., 2mn, 2mn)``), diagonal ``lam`` (``(..., 2mn)``) and rank.

    ``lam`` holds the diagonal of Lambda (not Lambda^2); entries treated as
    zero are exactly zero.
    """

    Q: np.ndarray
    lam: np.ndarray
    rank: np.ndarray

    @property
    def lam_pinv(self) -> np.ndarray:
        safe = np.where(self.lam > 0, self.lam, 1.0)
        return np.where(self.lam > 0, 1.0 / safe, 0.0)

    def block(self, i: int, m: int) -> np.ndarray:
        return self.Q[..., 2 * m * i:2 * m * (i + 1), :]


def compute_q_lambda(A_windows, K_W, selectors: SelectorMatrices,
                     matrices: WindowMatrices) -> QLambda:
    A = np.asarray(A_windows, dtype=float)
    K_W = np.asarray(K_W, dtype=float)
    m = selectors.m
    n = A.shape[-2]
    d = 2 * m * n
    if K_W.shape[-1] != n * matrices.rows:
        raise ValueError("noise covariance does not match the windows")
    alpha = build_alpha(m, n)
    sst = np.kron(np.eye(n), selectors.SST)
    Gam = block_g(A, matrices, selectors)
    P = Gam @ (sst @ alpha)  # (..., n*rows, d)
    M = np.swapaxes(P, -1, -2) @ K_W @ P
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    try:
        w, beta = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("symmetric eigensolver did not converge") from exc
    top = np.max(np.abs(w), axis=-1, keepdims=True)
    w = np.where(w > top * d * RANK_EPS, w, 0.0)
    lam = np.sqrt(w)
    rank = np.count_nonzero(lam, axis=-1)
    return QLambda(Q=alpha @ beta, lam=lam, rank=rank)


@dataclass(frozen=True)
class RealizationTerms:
    """The U-independent parts of the closed form for one realization."""

    QL: np.ndarray  # Q Lambda, (..., 2mn, 2mn)
    F: np.ndarray  # (..., n, 2mn)
    theta: np.ndarray  # (..., n)
    K_V: np.ndarray  # (..., n, n)
    lin_mu: np.ndarray  # (..., n, 2m)
    lin_nu: np.ndarray  # (..., n, 2m)


@dataclass(frozen=True)
class TrialTerms:
    F: np.ndarray
    eta: np.ndarray
    K_V: np.ndarray
    delta: np.ndarray


def theta_terms(A_windows, matrices: WindowMatrices) -> np.ndarray:
    """``A_t [T(1-A_t)]^T h_0 - |h_0|^2`` for every instant."""
    A = np.asarray(A_windows, dtype=float)
    off = (1.0 - A) @ matrices.T.T
    h0 = matrices.h0
    return A[..., matrices.center] * (off @ h0) - h0 @ h0


def center_loading(A_windows, matrices: WindowMatrices) -> np.ndarray:
    """``diag(A_t1..A_tn) (x) h_0^T``: shape ``(..., n, n*rows)``."""
    A = np.asarray(A_windows, dtype=float)
    n = A.shape[-2]
    rows = matrices.rows
    out = np.zeros(A.shape[:-2] + (n, n * rows))
    for i in range(n):
        out[..., i, i * rows:(i + 1) * rows] = A[..., i, matrices.center, None] * matrices.h0
    return out


def realization_terms(ql: QLambda, A_windows, K_W, selectors: SelectorMatrices,
                      matrices: WindowMatrices) -> RealizationTerms:
    A = np.asarray(A_windows, dtype=float)
    K_W = np.asarray(K_W, dtype=float)
    n = A.shape[-2]
    sst = np.kron(np.eye(n), selectors.SST)
    Gam = block_g(A, matrices, selectors)
    D = center_loading(A, matrices)
    DK = D @ K_W
    F = DK @ Gam @ sst @ ql.Q * ql.lam_pinv[..., None, :]
    prior = DK @ np.swapaxes(D, -1, -2)
    K_V = _clamp_psd(prior - F @ np.swapaxes(F, -1, -2), np.trace(prior, axis1=-2, axis2=-1))
    lin_mu, lin_nu = linear_terms(A, matrices, selectors)
    return RealizationTerms(QL=ql.Q * ql.lam[..., None, :], F=F, theta=theta_terms(A, matrices),
                            K_V=K_V, lin_mu=lin_mu, lin_nu=lin_nu)


def _clamp_psd(K, scale):
    """Zero eigenvalues below ``KV_TOL * scale`` (round-off from the subtraction)."""
    K = 0.5 * (K + np.swapaxes(K, -1, -2))
    w, V = np.linalg.eigh(K)
    w = np.where(w > KV_TOL * np.asarray(scale)[..., None], w, 0.0)
    return (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)


def selector_maxima(C_mu, C_nu, A_windows, matrices: WindowMatrices, constraint=None):
    """``max(S^T c + mu)`` and ``max(S^T c + nu)`` per instant via the DP.

    ``C_mu``/``C_nu`` are the full linear weights (shape ``(..., n, 2m)``);
    ``A_windows`` must broadcast against them with shape ``(..., n, W)``.
    """
    constraint = get_constraint(constraint)
    A = np.asarray(A_windows, dtype=float)
    taps = matrices.h0[matrices.m:matrices.m + matrices.memory + 1]
    inst_mu = DpInstance.from_window(A, taps, C_mu)
    inst_nu = DpInstance.from_window(A, taps, C_nu)
    if constraint.trivial:
        return dp_max(inst_mu), dp_max(inst_nu)
    if constraint.is_local:
        return (dp_max_constrained(inst_mu, A, constraint, False),
                dp_max_constrained(inst_nu, A, constraint, True))
    G = inst_mu.dense_g()
    m = matrices.m
    ok_mu = admissible_selectors(A, m, matrices.memory, constraint, False)
    ok_nu = admissible_selectors(A, m, matrices.memory, constraint, True)
    return exhaustive_max(C_mu, G, ok_mu), exhaustive_max(C_nu, G, ok_nu)


def deltas(terms: RealizationTerms, U, A_windows, matrices: WindowMatrices, constraint=None):
    """``delta`` and the U-dependent part of ``eta`` for draws ``U``.

    ``U`` has shape ``batch + extra + (2mn,)`` where ``batch`` is the batch of
    ``terms``; the results have shape ``batch + extra + (n,)``.
    """
    U = np.asarray(U, dtype=float)
    A = np.asarray(A_windows, dtype=float)
    n = terms.theta.shape[-1]
    extra = U.ndim - terms.QL.ndim + 1
    expand = (slice(None),) * (terms.QL.ndim - 2) + (None,) * extra
    c = np.einsum("...ij,...j->...i", terms.QL[expand], U)
    c = c.reshape(c.shape[:-1] + (n, -1))
    C_mu = c + terms.lin_mu[expand]
    C_nu = c + terms.lin_nu[expand]
    Ab = np.broadcast_to(A[expand], C_mu.shape[:-1] + A.shape[-1:])
    ymax, xmax = selector_maxima(C_mu, C_nu, Ab, matrices, constraint)
    fu = np.einsum("...ij,...j->...i", terms.F[expand], U)
    return ymax - xmax, terms.theta[expand] + fu


def compute_trial_terms(ql: QLambda, A_windows, K_W, selectors: SelectorMatrices,
                        matrices: WindowMatrices, U, constraint=None) -> TrialTerms:
    terms = realization_terms(ql, A_windows, K_W, selectors, matrices)
    delta, eta = deltas(terms, U, A_windows, matrices, constraint)
    return TrialTerms(F=terms.F, eta=eta, K_V=terms.K_V, delta=delta)


def isolated_count(instants, m: int) -> int:
    """Instants whose distance to every other instant exceeds ``m``."""
    t = np.asarray(instants, dtype=np.int64)
    if t.size == 1:
        return 1
    gaps = np.abs(t[:, None] - t[None, :]) + np.eye(t.size, dtype=np.int64) * (m + 1)
    return int(np.sum(np.all(gaps > m, axis=1)))
