import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlmdist.channel import ChannelModel, NoiseModel
from mlmdist.detector import simulate_empirical_cdf
from mlmdist.estimator import (DetectorConfig, bernstein_halfwidth, conditional_cdf,
                               conditional_terms, estimate_f_xmy, estimate_joint_error,
                               estimate_queries, estimate_reliability_cdf, hoeffding_halfwidth,
                               joint_error_prob, reliability_cdf, reliability_terms, subset_terms,
                               trials_for_halfwidth)

DICODE = ChannelModel([1, -1])
PR1 = ChannelModel([1, 1])


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(m=2, instants=(1, 0))
    with pytest.raises(ValueError):
        DetectorConfig(m=2, instants=(0,), grid=[[np.nan]])
    assert DetectorConfig(m=2, instants=(0, 3)).n == 2


def test_hoeffding():
    assert hoeffding_halfwidth(10_000, 0.05) == pytest.approx(np.sqrt(np.log(40) / 20_000))


@settings(max_examples=50, deadline=None)
@given(v=st.floats(0, 0.25), n=st.integers(100, 10 ** 7))
def test_bernstein_tighter_for_small_variance(v, n):
    b = bernstein_halfwidth(v, n)
    assert b > 0
    if v < 1e-3 and n > 10 ** 4:
        assert b < hoeffding_halfwidth(n)


def test_infinite_point_is_one():
    cfg = DetectorConfig(m=1, instants=(0, 4))
    est = estimate_queries(cfg, PR1, NoiseModel.iid(1.0), 500, 0, [[np.inf, np.inf]])
    assert est.mean[0] == pytest.approx(1.0)


def test_ci_halfwidth_and_bounds():
    cfg = DetectorConfig(m=1, instants=(0,))
    grid = np.linspace(-4, 4, 9)[:, None]
    est = estimate_f_xmy(cfg, DICODE, NoiseModel.iid(0.6), 3000, 1, grid=grid)
    assert np.all((est.mean >= 0) & (est.mean <= 1))
    np.testing.assert_allclose(est.ci_halfwidth, hoeffding_halfwidth(3000))
    assert np.all(np.diff(est.mean) >= -2 * est.ci_halfwidth[0])
    assert est.at([4.0]) == est.mean[-1]


def test_worker_count_invariant():
    cfg = DetectorConfig(m=2, instants=(0, 1))
    pts, co = subset_terms(2)
    a = estimate_queries(cfg, PR1, NoiseModel.iid(0.8), 2500, 42, pts, co, workers=1)
    b = estimate_queries(cfg, PR1, NoiseModel.iid(0.8), 2500, 42, pts, co, workers=2)
    assert a.mean.tobytes() == b.mean.tobytes()


def test_reuse_statistically_equivalent():
    cfg = DetectorConfig(m=2, instants=(0,))
    grid = np.array([[-2.0], [-1.0], [0.0], [1.0]])
    noise = NoiseModel.iid(PR1.sigma2_for_snr(3))
    a = estimate_f_xmy(cfg, PR1, noise, 20_000, 3, grid=grid)
    b = estimate_f_xmy(cfg, PR1, noise, 20_000, 4, grid=grid, reuse=16)
    assert np.all(np.abs(a.mean - b.mean) <= a.ci_halfwidth + b.ci_halfwidth)


def test_oracle_agreement_small():
    cfg = DetectorConfig(m=1, instants=(0,), grid=np.linspace(-3, 2, 11)[:, None])
    noise = NoiseModel.iid(DICODE.sigma2_for_snr(5))
    cf = estimate_f_xmy(cfg, DICODE, noise, 20_000, 5)
    emp, _, _ = simulate_empirical_cdf(cfg, DICODE, noise, 20_000, np.random.default_rng(6))
    assert np.all(np.abs(cf.mean - emp.mean) <= cf.ci_halfwidth + emp.ci_halfwidth)


def test_reliability_terms_n1():
    pts, co = reliability_terms([[2.0]], 0.5)
    np.testing.assert_allclose(pts[:, 0], [0.5, -0.5])
    np.testing.assert_allclose(co, [[1, -1]])


def test_reliability_cdf_combination():
    vals = {(0.5,): 0.9, (-0.5,): 0.2, (0.0,): 0.4}
    np.testing.assert_allclose(reliability_cdf(vals, [[2.0]], 0.5), [0.7])
    np.testing.assert_allclose(reliability_cdf(vals, [[0.0]], 0.5), [0.0])
    with pytest.raises(KeyError):
        reliability_cdf(vals, [[3.0]], 0.5)


def test_reliability_at_zero_is_zero():
    cfg = DetectorConfig(m=1, instants=(0,))
    est = estimate_reliability_cdf(cfg, DICODE, NoiseModel.iid(0.6), 2000, 0, r_grid=[[0.0], [5.0]])
    assert est.mean[0] == pytest.approx(0.0, abs=1e-12)
    assert est.mean[1] > 0


def test_joint_error_prob_combination():
    assert joint_error_prob({(0,): 0.85}) == pytest.approx(0.15)
    f = {(0,): 0.9, (1,): 0.8, (0, 1): 0.75}
    assert joint_error_prob(f) == pytest.approx(1 - 0.9 - 0.8 + 0.75)
    with pytest.raises(KeyError):
        joint_error_prob({(0,): 0.9}, n=2)


def test_joint_error_n1_matches_cdf_at_zero():
    cfg = DetectorConfig(m=2, instants=(0,))
    noise = NoiseModel.iid(1.0)
    je = estimate_joint_error(cfg, PR1, noise, 3000, 9)
    f0 = estimate_f_xmy(cfg, PR1, noise, 3000, 9, grid=[[0.0]])
    assert je.mean[0] == pytest.approx(1 - f0.mean[0], abs=1e-12)


def test_conditional_terms_normalizer():
    pts, co = conditional_terms("neighbors_correct", [0.5])
    norm = dict(zip(map(tuple, pts), co[-1]))
    assert {k: v for k, v in norm.items() if v} == {(0.0, np.inf, 0.0): 1.0}
    pts, co = conditional_terms("neighbors_wrong", [0.5])
    assert co.shape == (2, len(pts))
    assert co[-1].sum() == 0  # 1 - F - F + F with unit weights
    with pytest.raises(ValueError):
        conditional_terms("sideways", [0.0])


def test_conditional_guard():
    c = conditional_cdf("neighbors_wrong", [0.001], 0.002, 0.001, 0.001)
    assert not c.usable and np.isnan(c.cdf).all()
    c = conditional_cdf("neighbors_correct", [0.4], 0.8, 0.01, 0.01)
    assert c.usable and c.cdf[0] == pytest.approx(0.5)
    assert c.ci_halfwidth[0] > 0


def test_target_halfwidth_stops_early():
    assert trials_for_halfwidth(0.005) == 73_778
    assert hoeffding_halfwidth(trials_for_halfwidth(0.005)) <= 0.005 < hoeffding_halfwidth(73_777)
    cfg = DetectorConfig(m=1, instants=(0,))
    noise = NoiseModel.iid(1.0)
    est = estimate_f_xmy(cfg, PR1, noise, 10_000, 0, grid=[[0.0]], target_halfwidth=0.05)
    assert est.trials == trials_for_halfwidth(0.05) and est.ci_halfwidth[0] <= 0.05
    est = estimate_f_xmy(cfg, PR1, noise, 300, 0, grid=[[0.0]], target_halfwidth=0.05)
    assert est.trials == 300
