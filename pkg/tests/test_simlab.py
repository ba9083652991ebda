import numpy as np
import pytest

from seqsynth.simlab import (RatioStudyConfig, SrsSimConfig, StratSimConfig, run_ratio_study, run_srs_simulation,
                             run_stratified_simulation, write_report, write_table)
from seqsynth.simlab.report import POSITIVE_TM, paired_variance_difference, summarize_arm
from seqsynth.simlab.srs import make_population, population_coefficients
from seqsynth.simlab.stratified import config, srs_variance, stratified_mean


def test_census_stratum_has_zero_variance():
    _, v = stratified_mean([np.array([1.0, 2.0, 5.0])], [3])
    assert v == 0


def test_two_strata_direct_substitution():
    est, v = stratified_mean([np.array([1.0, 3.0]), np.array([1.0, 3.0])], [4, 4])
    assert est == 2 and v == pytest.approx(0.25)


def test_constant_values():
    _, v = stratified_mean([np.full(5, 2.0), np.full(3, 7.0)], [50, 30])
    assert v == 0


def test_srs_variance_formula():
    y = [np.array([1.0, 2.0]), np.array([3.0, 4.0])]
    assert srs_variance(y, 40) == pytest.approx((1 - 4 / 40) * np.var([1, 2, 3, 4], ddof=1) / 4)


def test_stratified_mean_input_checks():
    with pytest.raises(ValueError):
        stratified_mean([np.array([1.0])], [3])
    with pytest.raises(ValueError):
        stratified_mean([np.array([1.0, 2.0])], [3, 4])


def test_summarize_arm_coverage_and_negative_TM():
    qbar = np.array([[0.0], [1.0], [3.0], [0.5]])
    T = {"Ts": np.full((4, 1), 1.0), "TM": np.array([[1.0], [-1.0], [1.0], [4.0]])}
    s = summarize_arm(qbar, T, np.array([0.0]))
    assert s.coverage["Ts"][0] == 75.0
    assert np.isnan(s.coverage["TM"][0])
    assert s.negative_fraction[0] == 0.25
    assert s.coverage[POSITIVE_TM][0] == pytest.approx(200 / 3)
    assert s.estimator_mean[POSITIVE_TM][0] == pytest.approx(2.0)


def test_paired_difference_matches_variances():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(500, 2))
    b = 0.9 * a + 0.1 * rng.normal(size=(500, 2))
    d, se = paired_variance_difference(a, b)
    np.testing.assert_allclose(d, a.var(axis=0, ddof=1) - b.var(axis=0, ddof=1))
    assert np.all(se > 0)


def test_population_coefficients_exchangeable():
    cfg = SrsSimConfig(N=20000, n_sims=2)
    beta = population_coefficients(make_population(cfg))
    # equicorrelated unit-variance predictors: each slope is rho / (1 + (d-2) rho) = 0.2
    np.testing.assert_allclose(beta[1:], 0.2, atol=0.02)


def test_srs_small_run_deterministic(tmp_path):
    cfg = SrsSimConfig(N=5000, n=100, k=200, M=3, n_sims=20, seed=5)
    a, b = run_srs_simulation(cfg), run_srs_simulation(cfg, threads=3)
    for arm in a.arms:
        np.testing.assert_array_equal(a.qbar[arm], b.qbar[arm])
    pa, pb = write_report(a, tmp_path / "a.csv"), write_report(b, tmp_path / "b.csv")
    assert pa.read_bytes() == pb.read_bytes()
    write_table(a, tmp_path / "cov.csv", "coverage")
    assert set(a.arms["proper"].estimator_mean) >= {"TsPPD", "Tp", "TM", "TMadj", POSITIVE_TM}


def test_stratified_unbiased_small():
    rep = run_stratified_simulation(StratSimConfig(M=5, n_sims=200, seed=1))
    for s in rep.arms.values():
        assert abs(s.mean_estimate[0] - rep.truth[0]) < 4 * s.bias_se[0]
    assert rep.extra["srs_to_stratified_ratio"] > 22


def test_stratified_config_table():
    assert config(1).M == 100 and config(1).n_sims == 300
    assert config(2).M == 10 and config(2).n_h == (20,) * 10
    assert config(3).n == 200 and config(3).n_h[0] == 11 and config(3).n_h[-1] == 29
    with pytest.raises(ValueError):
        config(4)
    with pytest.raises(ValueError):
        StratSimConfig(n_h=(1,) * 10)


def test_ratio_study_tiny():
    res = run_ratio_study(RatioStudyConfig(n=1500, M=3, n_reps=2, seed=3))
    assert set(res.ratios) == {"Ts", "TsPPD", "Tp", "TM"}
    rows = res.rows()
    assert len(rows) == 7 and "TM_negative" in rows[0]
    assert np.all(res.ratios["Ts"] > 0)
