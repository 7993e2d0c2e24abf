"""Zero-mean multivariate Gaussian distribution function, rank deficient allowed.

Dispatch by the numerical rank ``k`` of the covariance:

* ``k = 0``: the point mass at 0, an indicator.
* ``n = 1`` or ``k = 1``: exact, along the single direction.
* ``n = 2``, ``k = 2``: exact bivariate formula by Gauss-Legendre quadrature
  of the correlation integral.
* otherwise: separation of variables over a pivoted Cholesky factor with a
  fixed scrambled Sobol rule (8 replicates of 512 nodes).

Coordinates equal to ``+inf`` are marginalized.  ``mvn_cdf_batch`` evaluates
many points for many covariances at once, which is what the estimator needs.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

RANK_TOL = 1e-12
PSD_TOL = 1e-10
QMC_REPLICATES = 8
QMC_NODES = 512
QMC_SEED = 20240607
MAX_DIM = 16


def sym_eig(M, sym_tol: float = 1e-10):
    """Eigenvalues (descending) and orthonormal eigenvectors of a symmetric matrix."""
    M = np.asarray(M, dtype=float)
    scale = max(1.0, float(np.abs(M).max())) if M.size else 1.0
    if not np.allclose(M, np.swapaxes(M, -1, -2), atol=sym_tol * scale, rtol=0.0):
        raise ValueError("matrix is not symmetric")
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    try:
        w, V = np.linalg.eigh(M)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("symmetric eigensolver did not converge") from exc
    return w[..., ::-1], V[..., ::-1]


@dataclass(frozen=True)
class GaussianCdfProblem:
    K: np.ndarray
    x: np.ndarray
    tol: float = 1e-4


@dataclass(frozen=True)
class CdfValue:
    value: float
    error: float


def _clamp(K):
    """Symmetrize, reject indefinite input, zero eigenvalues below the rank cutoff."""
    K = 0.5 * (K + np.swapaxes(K, -1, -2))
    w, V = np.linalg.eigh(K)
    tr = np.maximum(np.trace(K, axis1=-2, axis2=-1), np.finfo(float).tiny)
    if np.any(w.min(axis=-1) < -PSD_TOL * tr):
        raise ValueError("covariance is not positive semidefinite")
    w = np.where(w > RANK_TOL * tr[..., None], w, 0.0)
    rank = np.count_nonzero(w, axis=-1)
    return w, V, rank


def _phi2(h, k, rho):
    """P(X <= h, Y <= k) for standard normals with correlation ``rho``.

    Uses Phi(h)Phi(k) + 1/(2 pi) int_0^asin(rho) exp(-(h^2 - 2hk sin t + k^2)
    / (2 cos^2 t)) dt, whose integrand is smooth on the whole range.
    """
    nodes, weights = _gauss_legendre()
    h, k, rho = np.broadcast_arrays(np.asarray(h, float), np.asarray(k, float),
                                    np.asarray(rho, float))
    fin = np.isfinite(h) & np.isfinite(k)
    hf = np.where(fin, h, 0.0)
    kf = np.where(fin, k, 0.0)
    top = np.arcsin(np.clip(rho, -1.0, 1.0))
    t = 0.5 * top[..., None] * (nodes + 1.0)
    s = np.sin(t)
    c2 = np.maximum(np.cos(t) ** 2, 1e-300)
    hh = hf[..., None]
    kk = kf[..., None]
    f = np.exp(-(hh * hh - 2.0 * hh * kk * s + kk * kk) / (2.0 * c2))
    integral = 0.5 * top * (f @ weights) / (2.0 * np.pi)
    out = ndtr(hf) * ndtr(kf) + integral
    # infinite arguments: +inf marginalizes, -inf gives 0
    out = np.where(fin, out, ndtr(h) * ndtr(k))
    out = np.where(np.isposinf(h) & np.isfinite(k), ndtr(k), out)
    out = np.where(np.isposinf(k) & np.isfinite(h), ndtr(h), out)
    return np.clip(out, 0.0, 1.0)


@lru_cache(maxsize=None)
def _gauss_legendre(order: int = 48):
    return np.polynomial.legendre.leggauss(order)


@lru_cache(maxsize=None)
def _sobol_nodes(dim: int) -> np.ndarray:
    """Fixed scrambled Sobol replicates, shape ``(R, N, dim)``."""
    if dim == 0:
        return np.full((QMC_REPLICATES, QMC_NODES, 0), 0.5)
    reps = []
    for r in range(QMC_REPLICATES):
        eng = qmc.Sobol(d=dim, scramble=True, seed=QMC_SEED + r)
        reps.append(eng.random(QMC_NODES))
    out = np.stack(reps)
    out.setflags(write=False)
    return out


def _ordered_cholesky(K, x, rank, tol):
    """Pivoted Cholesky with the Genz-Bretz ordering for upper limits ``x``.

    At each step the remaining coordinate with the smallest expected
    probability is factored next, which concentrates the integrand's
    variation in the first variables.  Coordinates whose residual variance
    falls below ``tol`` become dependent rows of the earlier columns.
    Returns ``L`` (rows in the chosen order) and the row permutation.
    """
    n = K.shape[0]
    perm = np.arange(n)
    A = K.copy()
    L = np.zeros((n, rank))
    y = np.zeros(rank)
    for j in range(rank):
        idx = perm[j:]
        d = np.diag(A)[idx]
        ok = d > tol
        if not ok.any():
            return L[:, :j], perm
        shift = L[j:, :j] @ y[:j]
        with np.errstate(divide="ignore", invalid="ignore"):
            prob = np.where(ok, ndtr((x[idx] - shift) / np.sqrt(np.where(ok, d, 1.0))), np.inf)
        i = j + int(np.argmin(prob))
        if i != j:
            perm[[j, i]] = perm[[i, j]]
            L[[j, i]] = L[[i, j]]
        piv = perm[j]
        dj = A[piv, piv]
        col = A[perm[j:], piv] / np.sqrt(dj)
        L[j:, j] = col
        A[np.ix_(perm[j:], perm[j:])] -= np.outer(col, col)
        ub = (x[piv] - L[j, :j] @ y[:j]) / col[0]
        pu = ndtr(ub)
        y[j] = -np.exp(-0.5 * ub * ub) / np.sqrt(2 * np.pi) / pu if pu > 1e-300 and np.isfinite(ub) else (
            0.0 if not np.isfinite(ub) else ub)
    return L, perm


def _sov(L, x, nodes):
    """Separation of variables for P(L xi <= x), x shape (P, n) already permuted.

    Returns (mean, stderr) over the replicate rules.
    """
    n, k = L.shape
    tiny = 1e-14 * max(1.0, float(np.abs(L).max()))
    nz = np.abs(L) > tiny
    last = np.where(nz.any(axis=1), k - 1 - np.argmax(nz[:, ::-1], axis=1), -1)
    P = x.shape[0]
    free = last < 0
    base = np.all(x[:, free] >= 0, axis=1) if free.any() else np.ones(P, dtype=bool)
    R, N, _ = nodes.shape
    xx = x[:, None, None, :]
    w = np.ones((P, R, N))
    xi = np.zeros((P, R, N, k))
    for j in range(k):
        rows = np.nonzero(last == j)[0]
        shift = xi[..., :j] @ L[rows, :j].T if j else np.zeros((P, R, N, rows.size))
        bound = (xx[..., rows] - shift) / L[rows, j]
        pos = L[rows, j] > 0
        ub = np.min(np.where(pos, bound, np.inf), axis=-1, initial=np.inf)
        lb = np.max(np.where(pos, -np.inf, bound), axis=-1, initial=-np.inf)
        plo, phi = ndtr(lb), ndtr(ub)
        width = np.clip(phi - plo, 0.0, 1.0)
        w *= width
        if j < k - 1:
            u = plo + nodes[None, :, :, j] * width
            xi[..., j] = ndtri(np.clip(u, 1e-300, 1 - 1e-16))
    est = w.mean(axis=2)  # (P, R)
    est = np.where(base[:, None], est, 0.0)
    mean = est.mean(axis=1)
    err = est.std(axis=1, ddof=1) / np.sqrt(R) if R > 1 else np.zeros(P)
    return mean, err


def _cdf_one_cov(K, x, w, V, rank):
    """All points ``x`` (shape (P, n)) for one covariance; returns (value, error)."""
    n = K.shape[0]
    P = x.shape[0]
    err = np.zeros(P)
    if rank == 0:
        return np.all(x >= 0, axis=1).astype(float), err
    if rank == 1:
        v = V[:, np.argmax(w)] * np.sqrt(w.max())
        tiny = 1e-14 * np.abs(v).max()
        pos, neg, zero = v > tiny, v < -tiny, np.abs(v) <= tiny
        ub = np.min(np.where(pos, x / np.where(pos, v, 1.0), np.inf), axis=1)
        lb = np.max(np.where(neg, x / np.where(neg, v, 1.0), -np.inf), axis=1)
        ok = np.all(np.where(zero, x >= 0, True), axis=1)
        return np.where(ok, np.clip(ndtr(ub) - ndtr(lb), 0.0, 1.0), 0.0), err
    if n == 2:
        sd = np.sqrt(np.diag(K))
        rho = K[0, 1] / (sd[0] * sd[1])
        return _phi2(x[:, 0] / sd[0], x[:, 1] / sd[1], rho), err
    tol = RANK_TOL * np.trace(K)
    mean = np.empty(P)
    for p in range(P):
        L, perm = _ordered_cholesky(K, x[p], rank, tol)
        mean[p], err[p] = (v[0] for v in _sov(L, x[p:p + 1, perm], _sobol_nodes(max(L.shape[1] - 1, 0))))
    return np.clip(mean, 0.0, 1.0), err


def _blocks(K) -> list[np.ndarray]:
    """Connected components of the nonzero pattern of K."""
    n = K.shape[0]
    adj = np.abs(K) > 0
    seen = np.zeros(n, dtype=bool)
    comps = []
    for s in range(n):
        if seen[s]:
            continue
        stack, comp = [s], []
        seen[s] = True
        while stack:
            i = stack.pop()
            comp.append(i)
            for j in np.nonzero(adj[i] & ~seen)[0]:
                seen[j] = True
                stack.append(j)
        comps.append(np.array(sorted(comp)))
    return comps


def _cdf_points(K, x):
    """Value and error at points ``x`` (P, n) for one covariance ``K``.

    ``+inf`` coordinates are marginalized exactly by dropping them.
    """
    inf = np.isposinf(x)
    if not inf.any():
        return _cdf_finite(K, x)
    val = np.ones(x.shape[0])
    err = np.zeros(x.shape[0])
    patterns, inv = np.unique(inf, axis=0, return_inverse=True)
    for k, pat in enumerate(patterns):
        keep = ~pat
        if not keep.any():
            continue
        rows = inv.ravel() == k
        val[rows], err[rows] = _cdf_finite(K[np.ix_(keep, keep)], x[rows][:, keep])
    return val, err


def _cdf_finite(K, x):
    n = K.shape[0]
    if n == 1:
        s2 = max(float(K[0, 0]), 0.0)
        if s2 <= 0:
            return (x[:, 0] >= 0).astype(float), np.zeros(x.shape[0])
        return ndtr(x[:, 0] / np.sqrt(s2)), np.zeros(x.shape[0])
    w, V, rank = _clamp(K)
    Kc = (V * w) @ V.T
    comps = _blocks(np.where(np.abs(Kc) > RANK_TOL * max(np.trace(Kc), 1e-300), Kc, 0.0))
    if len(comps) > 1:
        val = np.ones(x.shape[0])
        var = np.zeros(x.shape[0])
        for c in comps:
            v, e = _cdf_points(Kc[np.ix_(c, c)], x[:, c])
            var = var * v ** 2 + e ** 2 * val ** 2
            val = val * v
        return val, np.sqrt(var)
    return _cdf_one_cov(Kc, x, w, V, int(rank))


def mvn_cdf(problem: GaussianCdfProblem, return_error: bool = False):
    """Phi_K(x) for a zero-mean Gaussian with (possibly singular) covariance K."""
    K = np.atleast_2d(np.asarray(problem.K, dtype=float))
    x = np.atleast_1d(np.asarray(problem.x, dtype=float))
    n = K.shape[0]
    if K.shape != (n, n) or x.shape != (n,):
        raise ValueError("K must be n x n and x of length n")
    if n > MAX_DIM:
        raise ValueError(f"dimension {n} exceeds {MAX_DIM}")
    if np.any(np.isnan(x)):
        raise ValueError("evaluation point contains NaN")
    if n == 1:
        if K[0, 0] < -PSD_TOL * abs(K[0, 0]):
            raise ValueError("negative variance")
    val, err = _cdf_points(K, x[None, :])
    out = float(np.clip(val[0], 0.0, 1.0))
    return CdfValue(out, float(err[0])) if return_error else out


def mvn_cdf_batch(K, x) -> np.ndarray:
    """Phi_{K_b}(x_{b,p}) for covariances ``K`` (B, n, n) and points ``x`` (B, P, n).

    Fast paths are vectorized across the whole batch; only the general case
    loops over covariances.
    """
    K = np.asarray(K, dtype=float)
    x = np.asarray(x, dtype=float)
    B, P, n = x.shape
    if n == 1:
        s = np.sqrt(np.clip(K[:, 0, 0], 0.0, None))[:, None]
        det = s > 0
        return np.where(det, ndtr(x[..., 0] / np.where(det, s, 1.0)), x[..., 0] >= 0).astype(float)
    K = 0.5 * (K + np.swapaxes(K, -1, -2))
    w, V = np.linalg.eigh(K)
    tr = np.maximum(np.trace(K, axis1=-2, axis2=-1), np.finfo(float).tiny)
    if np.any(w.min(axis=-1) < -PSD_TOL * tr):
        raise ValueError("covariance is not positive semidefinite")
    w = np.where(w > RANK_TOL * tr[:, None], w, 0.0)
    rank = np.count_nonzero(w, axis=-1)
    out = np.empty((B, P))

    r0 = rank == 0
    if r0.any():
        out[r0] = np.all(x[r0] >= 0, axis=-1)

    r1 = rank == 1
    if r1.any():
        v = V[r1, :, -1] * np.sqrt(w[r1, -1])[:, None]  # (b, n)
        tiny = 1e-14 * np.abs(v).max(axis=-1, keepdims=True)
        pos, neg = v > tiny, v < -tiny
        zero = ~(pos | neg)
        xv = x[r1]
        safe = np.where(zero, 1.0, v)[:, None, :]
        ratio = xv / safe
        ub = np.min(np.where(pos[:, None, :], ratio, np.inf), axis=-1)
        lb = np.max(np.where(neg[:, None, :], ratio, -np.inf), axis=-1)
        ok = np.all(np.where(zero[:, None, :], xv >= 0, True), axis=-1)
        out[r1] = np.where(ok, np.clip(ndtr(ub) - ndtr(lb), 0.0, 1.0), 0.0)

    full2 = (rank == 2) & (n == 2)
    if full2.any():
        Kf = K[full2]
        sd = np.sqrt(np.stack([Kf[:, 0, 0], Kf[:, 1, 1]], axis=-1))
        rho = Kf[:, 0, 1] / (sd[:, 0] * sd[:, 1])
        xf = x[full2]
        out[full2] = _phi2(xf[..., 0] / sd[:, 0, None], xf[..., 1] / sd[:, 1, None],
                           rho[:, None])

    rest = np.nonzero(~(r0 | r1 | full2))[0]
    for b in rest:
        out[b] = _cdf_points(K[b], x[b])[0]
    return np.clip(out, 0.0, 1.0)
