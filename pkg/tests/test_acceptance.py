"""Acceptance checks; each test records one PASS/FAIL line shown in the terminal summary.

The Monte-Carlo checks use fixed seeds, so reruns reproduce the same numbers.
"""
import math

import numpy as np
import pytest

from mlmdist.channel import (ChannelModel, NoiseModel, build_window_matrices, sample_symbol_windows,
                             window_covariance)
from mlmdist.cli import PRESETS, RLL_M
from mlmdist.constraints import rll_d1
from mlmdist.decomp import block_g, compute_q_lambda, isolated_count, realization_terms
from mlmdist.detector import simulate_detector, simulate_empirical_cdf
from mlmdist.dp import DpInstance, admissible_selectors, dp_max, dp_max_constrained, exhaustive_max
from mlmdist.estimator import (DetectorConfig, estimate_conditional, estimate_f_xmy,
                               estimate_joint_error, estimate_queries, sample_xmy)
from mlmdist.selectors import build_selectors

SCALAR_TRIALS = 200_000


def channel(name):
    return ChannelModel(PRESETS[name])


def iid_at(ch, snr):
    return NoiseModel.iid(ch.sigma2_for_snr(snr))


# 1 ---------------------------------------------------------------------------

def test_oracle_equivalence(record):
    trials = 100_000
    details, ok = [], True
    for name in ("dicode", "pr1"):
        ch = channel(name)
        noise = iid_at(ch, 5)
        for m in (1, 2):
            base = DetectorConfig(m=m, instants=(0,))
            pilot = sample_xmy(base, ch, noise, 1000, np.random.default_rng([m, 1]))
            mu, sd = pilot.mean(), pilot.std()
            grid = np.linspace(mu - 3 * sd, mu + 3 * sd, 21)[:, None]
            cfg = DetectorConfig(m=m, instants=(0,), grid=grid)
            cf = estimate_f_xmy(cfg, ch, noise, trials, 100 + m, delta=0.01)
            emp, _, _ = simulate_empirical_cdf(cfg, ch, noise, trials,
                                               np.random.default_rng(200 + m), delta_conf=0.01)
            band = cf.ci_halfwidth + emp.ci_halfwidth
            diff = np.abs(cf.mean - emp.mean)
            good = bool(np.all(diff <= band))
            ok &= good
            details.append(f"{name} m={m}: max |closed - oracle| = {diff.max():.4f}, "
                           f"band {band[0]:.4f} over 21 points -> {'ok' if good else 'OUTSIDE'}")
    record("1 oracle equivalence (dicode/PR1, m=1,2, 5 dB)", ok, details)
    assert ok


# 2 ---------------------------------------------------------------------------

def test_reliability_identity(record):
    ch = channel("pr2")
    noise = iid_at(ch, 5)
    sim = simulate_detector(3, [0], ch, noise, 100_000, np.random.default_rng(2))
    dev = np.abs(sim.R - 2.0 / sim.sigma2 * np.abs(sim.X - sim.Y)) / (1 + sim.R)
    ok = bool(dev.max() <= 1e-9)
    record("2 R = (2/sigma^2)|X - Y| (PR2, m=3, 1e5 trials)", ok,
           [f"max |R - 2/s2 |X-Y|| / (1+R) = {dev.max():.2e}"])
    assert ok


# 3 ---------------------------------------------------------------------------

def test_dp_exactness(record):
    rng = np.random.default_rng(3)
    taps = {1: [(1, 1), (1, -1)], 2: [(1, 2, 1), (1, 0, -1)]}
    worst, details = 0.0, []
    for m in range(1, 5):
        for ell in (1, 2):
            h = np.array(taps[ell][m % 2], float)
            a = rng.choice([-1.0, 1.0], size=(1000, 2 * (m + ell) + 1))
            C = rng.normal(scale=3.0, size=(1000, 2 * m))
            inst = DpInstance.from_window(a, h, C)
            G = inst.dense_g()
            err = np.abs(dp_max(inst) - exhaustive_max(C, G)).max()
            for flip in (False, True):
                ok_sel = admissible_selectors(a, m, ell, rll_d1(), flip)
                err = max(err, np.abs(dp_max_constrained(inst, a, rll_d1(), flip)
                                      - exhaustive_max(C, G, ok_sel)).max())
            worst = max(worst, err)
            details.append(f"m={m} l={ell}: max error {err:.1e}")
    ok = worst <= 1e-9
    record("3 DP equals exhaustive search (1000 instances per (m, l), plain and RLL)", ok,
           [", ".join(details[:4]), ", ".join(details[4:])])
    assert ok


# 4 ---------------------------------------------------------------------------

def test_decomposition_identities(record):
    rng = np.random.default_rng(4)
    worst_rel, worst_white = 0.0, 0.0
    for _ in range(100):
        ell = int(rng.integers(1, 3))
        ch = ChannelModel(rng.normal(size=ell + 1))
        m = int(rng.integers(1, 5))
        n = int(rng.integers(1, 4))
        instants = np.cumsum(rng.integers(1, 10, size=n)) - 1
        kind = rng.integers(3)
        s2 = float(rng.uniform(0.2, 3))
        if kind == 0:
            noise = NoiseModel.iid(s2)
        elif kind == 1:
            noise = NoiseModel.lag1(s2, float(rng.uniform(-0.5, 0.5)))
        else:
            noise = NoiseModel.custom(s2 * 0.6 ** np.arange(4))
        mats = build_window_matrices(ch, m)
        sel = build_selectors(m, ell)
        K = window_covariance(noise, instants, m, ell)
        A = sample_symbol_windows(rng, instants, m, ch).windows.astype(float)
        ql = compute_q_lambda(A, K, sel, mats)
        Gam = block_g(A, mats, sel)
        target = Gam.T @ K @ Gam
        recon = (ql.Q * ql.lam ** 2) @ ql.Q.T
        worst_rel = max(worst_rel, np.linalg.norm(recon - target) / np.linalg.norm(target))
        white = ql.Q.T @ np.kron(np.eye(n), sel.SST) @ ql.Q
        worst_white = max(worst_white, np.linalg.norm(white - np.eye(white.shape[0])))
    ok = worst_rel <= 1e-8 and worst_white <= 1e-8
    record("4 Q/Lambda identities (100 random draws)", ok,
           [f"max relative reconstruction residual {worst_rel:.1e}",
            f"max whitening residual {worst_white:.1e}"])
    assert ok


# 5 ---------------------------------------------------------------------------

def test_rank_bound(record):
    rng = np.random.default_rng(5)
    cases = [((0,), 2), ((0, 1), 2), ((0, 2), 2), ((0, 7), 2), ((0, 1, 8), 2), ((0, 8, 16), 2),
             ((0, 1, 2), 1), ((0, 4), 3), ((0, 3, 9), 2)]
    violations, details, zero_ok = 0, [], True
    for name in ("pr1", "pr2", "pr4"):
        ch = channel(name)
        for noise in (NoiseModel.iid(1.0), NoiseModel.lag1(1.0, 0.4)):
            for instants, m in cases:
                bound = isolated_count(instants, m)
                mats = build_window_matrices(ch, m)
                sel = build_selectors(m, ch.memory)
                K = window_covariance(noise, instants, m, ch.memory)
                A = sample_symbol_windows(rng, instants, m, ch, size=50).windows.astype(float)
                terms = realization_terms(compute_q_lambda(A, K, sel, mats), A, K, sel, mats)
                for KV in terms.K_V:
                    ev = np.linalg.eigvalsh(KV)
                    tr = max(np.trace(KV), 1e-300)
                    if np.sum(ev > 1e-8 * tr) > bound:
                        violations += 1
                if len(instants) == 2 and instants[1] - instants[0] <= m:
                    zero_ok &= bool(np.abs(terms.K_V).max() <= 1e-8 * np.abs(K).max())
    details.append(f"{violations} realizations exceed the isolated-instant count")
    details.append(f"|t1 - t2| <= m gives K_V = 0: {zero_ok}")
    ok = violations == 0 and zero_ok
    record("5 K_V rank <= isolated instants (0, 1, 2, 3 isolated)", ok, details)
    assert ok


# 6 ---------------------------------------------------------------------------

def closed_error(name, snr, m, instants=(0,), noise=None, constraint=None, seed=0):
    ch = channel(name)
    noise = iid_at(ch, snr) if noise is None else noise
    cfg = DetectorConfig(m=m, instants=instants, constraint=constraint)
    est = estimate_joint_error(cfg, ch, noise, SCALAR_TRIALS, seed)
    return float(est.mean[0]), float(est.ci_halfwidth[0])


def test_quoted_error_probabilities(record):
    checks = []

    def check(label, value, target, tol):
        good = abs(value - target) <= tol
        checks.append((good, f"{label}: {value:.4f} vs {target} +/- {tol} -> "
                             f"{'ok' if good else 'OUTSIDE'}"))
        return value

    for m in range(2, 6):
        check(f"PR1 3 dB m={m}", closed_error("pr1", 3, m, seed=60 + m)[0], 0.14, 0.01)
    check("PR1 10 dB m=1", closed_error("pr1", 10, 1, seed=61)[0], 0.11, 0.01)
    check("PR1 10 dB m=5", closed_error("pr1", 10, 5, seed=65)[0], 0.01, 0.005)
    for name, m, targets in (("pr1", 2, (0.06, 0.02)), ("pr2", 5, (0.03, 0.01))):
        for lag, target in zip((1, 7), targets):
            tol = 0.007 if (name, lag) == ("pr2", 7) else 0.01
            check(f"{name.upper()} joint 5 dB m={m} lag {lag}",
                  closed_error(name, 5, m, (0, lag), seed=70 + lag)[0], target, tol)
    pr2 = channel("pr2")
    s2 = pr2.sigma2_for_snr(5)
    corr = []
    for rho, target in ((-0.5, 0.08), (0.0, 0.13), (0.5, 0.16)):
        noise = NoiseModel.iid(s2) if rho == 0 else NoiseModel.lag1(s2, rho)
        corr.append(check(f"PR2 5 dB m=5 rho={rho:+.1f}",
                          closed_error("pr2", 5, 5, noise=noise, seed=80)[0], target, 0.01))
    ordered = corr[0] < corr[1] < corr[2]
    checks.append((ordered, f"ordering rho=-0.5 < iid < rho=+0.5: {ordered}"))
    for name, (plain, coded) in (("pr4", (0.095, 0.04)), ("dicode", (0.088, 0.135))):
        m = RLL_M[name]
        check(f"{name.upper()} 5 dB m={m} unconstrained", closed_error(name, 5, m, seed=90)[0],
              plain, 0.01)
        check(f"{name.upper()} 5 dB m={m} RLL d=1",
              closed_error(name, 5, m, constraint=rll_d1(), seed=91)[0], coded, 0.01)
    ok = all(g for g, _ in checks)
    passed = sum(g for g, _ in checks)
    record(f"6 quoted error probabilities ({passed}/{len(checks)} sub-checks, "
           f"{SCALAR_TRIALS} trials each)", ok, [d for _, d in checks])
    assert ok, "\n".join(d for g, d in checks if not g)


# 7 ---------------------------------------------------------------------------

def test_independence_large_lag(record):
    ch = channel("pr1")
    noise = iid_at(ch, 5)
    cfg = DetectorConfig(m=2, instants=(0, 7))
    axis = np.linspace(-3, 1, 5)
    grid = np.array([(a, b) for a in axis for b in axis])
    marg = np.concatenate([np.column_stack([axis, np.full(5, np.inf)]),
                           np.column_stack([np.full(5, np.inf), axis])])
    est = estimate_queries(cfg, ch, noise, 100_000, 7, np.vstack([grid, marg]))
    joint = est.mean[:25].reshape(5, 5)
    f1, f2 = est.mean[25:30], est.mean[30:]
    gap = np.abs(joint - np.outer(f1, f2))
    band = 3 * est.ci_halfwidth[0]
    ok = bool(np.all(gap <= band))
    record("7 independence at lag 7 (PR1, m=2, 5x5 grid)", ok,
           [f"max |F_joint - F1 F2| = {gap.max():.4f}, combined band {band:.4f}"])
    assert ok


# 8 ---------------------------------------------------------------------------

def conditional_case(name, snr, m, trials, seed):
    ch = channel(name)
    noise = iid_at(ch, snr)
    pilot = sample_xmy(DetectorConfig(m=m, instants=(0,)), ch, noise, 1000,
                       np.random.default_rng([seed, 1]))
    r = np.append(np.linspace(pilot.mean() - 3 * pilot.std(), pilot.mean() + 3 * pilot.std(), 21), 0.0)
    base = estimate_f_xmy(DetectorConfig(m=m, instants=(0,)), ch, noise, trials, seed,
                          grid=r[:, None])
    a = estimate_conditional("neighbors_correct", m, 0, ch, noise, trials, seed + 1, r)
    b = estimate_conditional("neighbors_wrong", m, 0, ch, noise, trials, seed + 1, r)
    return r, base, a, b


def test_conditional_distributions(record):
    checks = []
    for snr in (3, 10):
        r, base, a, b = conditional_case("pr4", snr, 5, 100_000, 800 + snr)
        for tag, c in (("a", a), ("b", b)):
            good = c.usable and bool(np.all(np.abs(c.cdf - base.mean)
                                            <= c.ci_halfwidth + base.ci_halfwidth))
            dev = np.abs(c.cdf - base.mean).max() if c.usable else math.nan
            checks.append((good, f"PR4 {snr} dB m=5 ({tag}) vs unconditioned: max gap {dev:.4f}, "
                                 f"C={c.normalizer:.4f} -> {'ok' if good else 'OUTSIDE'}"))
    r, base, a, b = conditional_case("pr1", 10, 2, 100_000, 810)
    err_b, err_u = 1 - b.cdf[-1], 1 - base.mean[-1]
    good = b.usable and err_b < err_u
    checks.append((good, f"PR1 10 dB m=2: error | neighbors wrong {err_b:.4f} < unconditioned "
                         f"{err_u:.4f} (C={b.normalizer:.4f}) -> {'ok' if good else 'NO'}"))
    for snr, trials in ((3, 100_000), (10, 400_000)):
        r, base, a, b = conditional_case("pr2", snr, 5, trials, 820 + snr)
        if not b.usable:
            checks.append((False, f"PR2 {snr} dB: conditioning event too rare (C={b.normalizer:.4f})"))
            continue
        # mass to the right: conditional CDF below the unconditioned one, and a
        # strictly larger error probability beyond both bands
        below = bool(np.all(b.cdf <= base.mean + b.ci_halfwidth + base.ci_halfwidth))
        err_b, err_u = 1 - b.cdf[-1], 1 - base.mean[-1]
        sep = err_b - b.ci_halfwidth[-1] > err_u + base.ci_halfwidth[-1]
        good = below and sep
        checks.append((good, f"PR2 {snr} dB m=5: (b) CDF below unconditioned {below}, error "
                             f"{err_b:.3f} vs {err_u:.3f} -> {'ok' if good else 'NO'}"))
    ok = all(g for g, _ in checks)
    record("8 conditional distributions (PR4 unchanged, PR1 sparse errors, PR2 shifted right)", ok,
           [d for _, d in checks])
    assert ok, "\n".join(d for g, d in checks if not g)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
