"""Monte-Carlo evaluation of the closed-form distribution of X - Y.

Every estimate is a mean over independent symbol realizations of a per-trial
conditional probability in [0, 1]: for a realization ``A`` and draw ``U``,
``Phi_{K_V}(r + delta - eta)``.  Derived quantities (reliability CDF, joint
error probabilities, conditional distributions) are signed combinations of
such terms evaluated on the same trials, so each combination is itself a
per-trial probability and gets a Hoeffding half-width.

Trials are processed in fixed-size blocks; block ``b`` draws from
``default_rng([seed, b])`` and block sums are added in block order, so results
do not depend on the number of worker processes.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import (ChannelModel, NoiseModel, build_window_matrices, sample_symbol_windows,
                      window_covariance, _check_instants)
from .constraints import Constraint, get_constraint
from .decomp import compute_q_lambda, deltas, realization_terms
from .mvncdf import mvn_cdf_batch
from .selectors import MAX_DENSE_M, build_selectors

BLOCK = 1024
DEFAULT_DELTA = 0.05
PROB_SLACK = 1e-3


def hoeffding_halfwidth(trials: int, delta: float = DEFAULT_DELTA) -> float:
    return math.sqrt(math.log(2.0 / delta) / (2.0 * trials))


def trials_for_halfwidth(target: float, delta: float = DEFAULT_DELTA) -> int:
    """Smallest trial count whose Hoeffding half-width is at most ``target``."""
    if target <= 0:
        raise ValueError("target half-width must be positive")
    return math.ceil(math.log(2.0 / delta) / (2.0 * target ** 2))


def bernstein_halfwidth(variance, trials: int, delta: float = DEFAULT_DELTA):
    """Empirical-Bernstein half-width for means of [0,1] values (two-sided).

    Much tighter than Hoeffding when the sample variance is small, e.g. for
    rare conditioning events.
    """
    if trials < 2:
        return np.full(np.shape(variance), 1.0)
    lg = math.log(4.0 / delta)
    v = np.maximum(np.asarray(variance, dtype=float), 0.0)
    return np.sqrt(2.0 * v * lg / trials) + 7.0 * lg / (3.0 * (trials - 1))


@dataclass
class DetectorConfig:
    """Truncation length, instants, candidate constraint and an r-grid."""

    m: int
    instants: Sequence[int] = (0,)
    constraint: object = None
    grid: object = None

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("m must be a positive integer")
        self.m = int(self.m)
        self.instants = tuple(int(t) for t in _check_instants(self.instants))
        self.constraint = get_constraint(self.constraint)
        if self.grid is not None:
            g = self.grid_array()
            if not np.all(np.isfinite(g)):
                raise ValueError("grid points must be finite")

    @property
    def n(self) -> int:
        return len(self.instants)

    def grid_array(self) -> np.ndarray:
        """Grid as a ``(P, n)`` array; a 1-D grid is read as points when n = 1."""
        if self.grid is None:
            raise ValueError("no grid configured")
        g = np.asarray(self.grid, dtype=float)
        if g.ndim == 1:
            g = g[:, None] if self.n == 1 else g[None, :]
        if g.shape[-1] != self.n:
            raise ValueError(f"grid points must have {self.n} coordinates")
        return g


@dataclass
class CdfEstimate:
    """Estimated probabilities on a list of grid points."""

    grid: np.ndarray
    mean: np.ndarray
    trials: int
    ci_halfwidth: np.ndarray
    stderr: np.ndarray
    delta: float = DEFAULT_DELTA

    def at(self, point) -> float:
        point = np.atleast_1d(np.asarray(point, dtype=float))
        hit = np.nonzero(np.all(np.isclose(self.grid, point), axis=1))[0]
        if hit.size == 0:
            raise KeyError(f"no grid point {point}")
        return float(self.mean[hit[0]])


def empirical_cdf(samples, grid, delta: float = DEFAULT_DELTA) -> CdfEstimate:
    """Fraction of sample vectors lying componentwise below each grid point."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    g = np.asarray(grid, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    N = x.shape[0]
    below = np.all(x[:, None, :] <= g[None, :, :], axis=-1)
    p = below.mean(axis=0)
    se = np.sqrt(p * (1 - p) / N)
    hw = np.full(p.shape, hoeffding_halfwidth(N, delta))
    return CdfEstimate(grid=g, mean=p, trials=N, ci_halfwidth=hw, stderr=se, delta=delta)


@dataclass(frozen=True)
class ClosedFormModel:
    """Everything fixed across trials for one (channel, noise, config)."""

    channel: ChannelModel
    noise: NoiseModel
    m: int
    instants: tuple
    constraint: Constraint
    K_W: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, config: DetectorConfig, channel: ChannelModel, noise: NoiseModel):
        K = window_covariance(noise, config.instants, config.m, channel.memory)
        if not config.constraint.trivial and not config.constraint.is_local and config.m > MAX_DENSE_M:
            raise ValueError("non-local constraints need m <= 8 for exhaustive search")
        return cls(channel=channel, noise=noise, m=config.m, instants=config.instants,
                   constraint=config.constraint, K_W=K)


def _conditional_terms(model: ClosedFormModel, rng, count: int, reuse: int):
    """Sample realizations and return ``(K_V, b)`` with ``b = delta - eta``.

    ``b`` has shape ``(count, reuse, n)``; the per-trial conditional CDF at
    ``r`` is ``Phi_{K_V}(r + b)``.
    """
    mats = build_window_matrices(model.channel, model.m)
    sel = build_selectors(model.m, model.channel.memory)
    win = sample_symbol_windows(rng, model.instants, model.m, model.channel,
                                model.constraint, size=count).windows.astype(float)
    ql = compute_q_lambda(win, model.K_W, sel, mats)
    terms = realization_terms(ql, win, model.K_W, sel, mats)
    U = rng.standard_normal((count, reuse, ql.Q.shape[-1]))
    delta, eta = deltas(terms, U, win, mats, model.constraint)
    return terms.K_V, delta - eta


def _block_sums(model: ClosedFormModel, points, coeffs, seed: int, block: int,
                count: int, reuse: int):
    rng = np.random.default_rng([seed, block])
    K_V, b = _conditional_terms(model, rng, count, reuse)
    J, n = points.shape
    x = points[None, None, :, :] + b[:, :, None, :]  # (count, reuse, J, n)
    phi = mvn_cdf_batch(K_V, x.reshape(count, reuse * J, n)).reshape(count, reuse, J)
    phi = phi.mean(axis=1)
    vals = phi @ coeffs.T  # (count, Q)
    if vals.size and (vals.min() < -PROB_SLACK or vals.max() > 1 + PROB_SLACK):
        raise FloatingPointError("per-trial contribution left [0, 1]")
    return vals.sum(axis=0), (vals ** 2).sum(axis=0), count


def _run_blocks(model, points, coeffs, trials, seed, reuse, workers):
    sizes = [BLOCK] * (trials // BLOCK)
    if trials % BLOCK:
        sizes.append(trials % BLOCK)
    jobs = [(model, points, coeffs, seed, b, c, reuse) for b, c in enumerate(sizes)]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_block_sums, *zip(*jobs)))
    else:
        results = [_block_sums(*j) for j in jobs]
    Q = coeffs.shape[0]
    s, s2, total = np.zeros(Q), np.zeros(Q), 0
    for a, b, c in results:  # fixed order keeps sums reproducible
        s += a
        s2 += b
        total += c
    return s, s2, total


def _seed_from(rng) -> int:
    if rng is None:
        return 0
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2 ** 63 - 1))
    return int(rng)


def estimate_queries(config: DetectorConfig, channel: ChannelModel, noise: NoiseModel,
                     trials: int, rng, points, coeffs=None, reuse: int = 1,
                     workers: int = 1, delta: float = DEFAULT_DELTA,
                     target_halfwidth: float | None = None) -> CdfEstimate:
    """Mean over trials of ``sum_j coeffs[q, j] * Phi_{K_V}(points[j] + delta - eta)``.

    ``points`` has shape ``(J, n)`` (``+inf`` marginalizes a coordinate);
    ``coeffs`` defaults to the identity, i.e. plain CDF values at the points.
    The returned estimate's ``grid`` is ``points`` when ``coeffs`` is None and
    the query index otherwise. With ``target_halfwidth`` set, sampling stops
    once the half-width reaches the target, or at ``trials`` if that comes first.
    """
    if target_halfwidth is not None:
        trials = min(trials, trials_for_halfwidth(target_halfwidth, delta))
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if reuse < 1:
        raise ValueError("reuse must be >= 1")
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[-1] != config.n:
        raise ValueError(f"points need {config.n} coordinates")
    ident = coeffs is None
    coeffs = np.eye(points.shape[0]) if ident else np.atleast_2d(np.asarray(coeffs, dtype=float))
    model = ClosedFormModel.build(config, channel, noise)
    s, s2, N = _run_blocks(model, points, coeffs, trials, _seed_from(rng), reuse, workers)
    mean = s / N
    var = np.maximum(s2 / N - mean ** 2, 0.0)
    se = np.sqrt(var / max(N - 1, 1))
    hw = np.full(mean.shape, hoeffding_halfwidth(N, delta))
    grid = points if ident else np.arange(coeffs.shape[0], dtype=float)[:, None]
    return CdfEstimate(grid=grid, mean=np.clip(mean, 0.0, 1.0), trials=N,
                       ci_halfwidth=hw, stderr=se, delta=delta)


def estimate_f_xmy(config: DetectorConfig, channel: ChannelModel, noise: NoiseModel,
                   trials: int, rng, grid=None, **kw) -> CdfEstimate:
    """Closed-form estimate of the joint CDF of ``X - Y`` on a grid."""
    pts = config.grid_array() if grid is None else np.asarray(grid, dtype=float)
    return estimate_queries(config, channel, noise, trials, rng, pts, **kw)


def sample_xmy(config: DetectorConfig, channel: ChannelModel, noise: NoiseModel,
               trials: int, rng) -> np.ndarray:
    """Draws of ``X - Y`` from the closed form: ``eta - delta + N(0, K_V)``."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    model = ClosedFormModel.build(config, channel, noise)
    K_V, b = _conditional_terms(model, rng, trials, 1)
    w, V = np.linalg.eigh(K_V)
    fac = V * np.sqrt(np.clip(w, 0.0, None))[:, None, :]
    xi = rng.standard_normal((trials, config.n))
    return np.einsum("bij,bj->bi", fac, xi) - b[:, 0, :]


# ---- signed combinations -------------------------------------------------

def reliability_terms(r_grid, sigma2: float):
    """Points and coefficients of ``F_R(r) = P(|X_i - Y_i| <= sigma^2 r_i / 2)``.

    Rectangle probability by inclusion-exclusion over sign flips: every subset
    of coordinates set to ``-sigma^2 r_i / 2`` enters with sign ``(-1)^|subset|``.
    """
    r = np.asarray(r_grid, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    P, n = r.shape
    signs = np.array(list(itertools.product((1.0, -1.0), repeat=n)))  # (2^n, n)
    weight = np.prod(signs, axis=1)  # (-1)^(number of flips)
    pts = (sigma2 / 2.0) * r[:, None, :] * signs[None, :, :]
    coeffs = np.zeros((P, P * signs.shape[0]))
    for p in range(P):
        coeffs[p, p * signs.shape[0]:(p + 1) * signs.shape[0]] = weight
    return pts.reshape(-1, n), coeffs


def reliability_cdf(f_xmy: dict, r_grid, sigma2: float) -> np.ndarray:
    """Combine supplied ``F_{X-Y}`` values (keyed by point tuples) into ``F_R``."""
    pts, coeffs = reliability_terms(r_grid, sigma2)
    vals = np.empty(pts.shape[0])
    for j, p in enumerate(pts):
        key = tuple(float(v) for v in p)
        if key not in f_xmy:
            raise KeyError(f"missing F_X-Y evaluation at {key}")
        vals[j] = f_xmy[key]
    return np.clip(coeffs @ vals, 0.0, 1.0)


def estimate_reliability_cdf(config, channel, noise, trials, rng, r_grid=None,
                             sigma2=None, **kw) -> CdfEstimate:
    r = config.grid_array() if r_grid is None else np.asarray(r_grid, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    sigma2 = noise.sigma2 if sigma2 is None else sigma2
    pts, coeffs = reliability_terms(r, sigma2)
    est = estimate_queries(config, channel, noise, trials, rng, pts, coeffs, **kw)
    est.grid = r
    return est


def subset_terms(n: int):
    """Points/coefficients for ``P(X_i >= Y_i for all i)``.

    ``1 + sum_{nonempty J} (-1)^|J| F_J(0)`` with ``F_J`` the marginal over
    ``J`` (other coordinates at ``+inf``).
    """
    pts = [np.full(n, np.inf)]  # F at all-inf is the constant 1
    coef = [1.0]
    for size in range(1, n + 1):
        for J in itertools.combinations(range(n), size):
            p = np.full(n, np.inf)
            p[list(J)] = 0.0
            pts.append(p)
            coef.append((-1.0) ** size)
    return np.array(pts), np.array([coef])


def joint_error_prob(f_at_zero: dict, n: int | None = None) -> float:
    """Combine ``F_J(0)`` values keyed by index tuples ``J`` into the joint error probability."""
    if n is None:
        n = max(len(k) for k in f_at_zero)
    total = 1.0
    for size in range(1, n + 1):
        for J in itertools.combinations(range(n), size):
            if J not in f_at_zero:
                raise KeyError(f"missing marginal F at 0 for subset {J}")
            total += (-1.0) ** size * f_at_zero[J]
    return float(min(max(total, 0.0), 1.0))


def estimate_joint_error(config, channel, noise, trials, rng, **kw) -> CdfEstimate:
    pts, coeffs = subset_terms(config.n)
    return estimate_queries(config, channel, noise, trials, rng, pts, coeffs, **kw)


def conditional_terms(kind: str, r_grid):
    """Numerator and normalizer terms for a center instant given its two neighbors.

    Coordinates are ``(t-1, t, t+1)``.  ``neighbors_correct`` conditions on
    both neighbors decided correctly, ``neighbors_wrong`` on both in error.
    Returns ``(points, coeffs)`` where the first ``P`` rows of ``coeffs`` are
    numerators and the last row is the normalizer.
    """
    r = np.asarray(r_grid, dtype=float).ravel()
    inf = np.inf
    if kind == "neighbors_correct":
        num = [[(1.0, (0.0, None, 0.0))]]
        norm = [(1.0, (0.0, inf, 0.0))]
    elif kind == "neighbors_wrong":
        num = [[(1.0, (inf, None, inf)), (-1.0, (inf, None, 0.0)),
                (-1.0, (0.0, None, inf)), (1.0, (0.0, None, 0.0))]]
        norm = [(1.0, (inf, inf, inf)), (-1.0, (0.0, inf, inf)),
                (-1.0, (inf, inf, 0.0)), (1.0, (0.0, inf, 0.0))]
    else:
        raise ValueError(f"unknown conditioning kind {kind!r}")
    pts, rows = [], []
    index = {}

    def slot(p):
        key = tuple(p)
        if key not in index:
            index[key] = len(pts)
            pts.append(p)
        return index[key]

    for rv in r:
        row = {}
        for c, p in num[0]:
            j = slot((p[0], rv, p[2]))
            row[j] = row.get(j, 0.0) + c
        rows.append(row)
    nrow = {}
    for c, p in norm:
        j = slot(p)
        nrow[j] = nrow.get(j, 0.0) + c
    rows.append(nrow)
    coeffs = np.zeros((len(rows), len(pts)))
    for i, row in enumerate(rows):
        for j, c in row.items():
            coeffs[i, j] = c
    return np.array(pts, dtype=float), coeffs


@dataclass
class ConditionalEstimate:
    r: np.ndarray
    cdf: np.ndarray
    ci_halfwidth: np.ndarray
    normalizer: float
    normalizer_ci: float
    usable: bool


def conditional_cdf(kind: str, numerators, normalizer: float, num_ci=0.0, norm_ci=0.0,
                    r=None) -> ConditionalEstimate:
    """Divide numerator estimates by the conditioning probability.

    The half-width propagates the numerator and normalizer intervals
    conservatively; a normalizer below 10 half-widths is flagged unusable.
    """
    if kind not in ("neighbors_correct", "neighbors_wrong"):
        raise ValueError(f"unknown conditioning kind {kind!r}")
    num = np.asarray(numerators, dtype=float)
    num_ci = np.broadcast_to(np.asarray(num_ci, dtype=float), num.shape)
    usable = normalizer > 10.0 * norm_ci and normalizer > 0
    if not usable:
        nan = np.full(num.shape, np.nan)
        return ConditionalEstimate(r=r, cdf=nan, ci_halfwidth=nan, normalizer=normalizer,
                                   normalizer_ci=norm_ci, usable=False)
    ratio = np.clip(num / normalizer, 0.0, 1.0)
    hi = (num + num_ci) / max(normalizer - norm_ci, 1e-300)
    lo = np.maximum(num - num_ci, 0.0) / (normalizer + norm_ci)
    hw = np.maximum(hi - ratio, ratio - lo)
    return ConditionalEstimate(r=r, cdf=ratio, ci_halfwidth=hw, normalizer=normalizer,
                               normalizer_ci=norm_ci, usable=True)


def estimate_conditional(kind: str, m: int, center: int, channel, noise, trials, rng,
                         r_grid, constraint=None, **kw) -> ConditionalEstimate:
    config = DetectorConfig(m=m, instants=(center - 1, center, center + 1), constraint=constraint)
    pts, coeffs = conditional_terms(kind, r_grid)
    est = estimate_queries(config, channel, noise, trials, rng, pts, coeffs, **kw)
    P = len(np.ravel(r_grid))
    # per-trial numerator and normalizer values are probabilities, so the
    # variance-aware bound applies and keeps rare events usable
    var = est.stderr ** 2 * max(est.trials - 1, 1)
    hw = np.minimum(bernstein_halfwidth(var, est.trials, est.delta), est.ci_halfwidth)
    return conditional_cdf(kind, est.mean[:P], float(est.mean[P]), hw[:P], float(hw[P]),
                           r=np.ravel(r_grid))
