import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from seqsynth.fitgen import (CartControls, FitError, MethodSpec, SeparationWarning, apply_tree, cart_generate,
                             coef_se, draw_posterior, empirical_sample, fit, fit_cart, fit_empirical, fit_logit,
                             fit_ols, fit_polyreg, generate, generate_categorical, generate_norm, generate_normrank,
                             predict_proba, tree_depth)
from seqsynth.fitgen import kernels
from seqsynth.tabular import DataTable, Schema, encode_design


def design(x):
    x = np.asarray(x, dtype=float)
    return np.column_stack([np.ones(x.size), x])


def cont_design(*cols):
    s = Schema.from_dicts([{"name": f"x{j}", "kind": "continuous"} for j in range(len(cols))])
    t = DataTable.from_columns(s, {f"x{j}": c for j, c in enumerate(cols)})
    return encode_design(t, s.names)


def test_ols_exact_fit():
    x = np.arange(10.0)
    f = fit_ols(2 * x, design(x))
    np.testing.assert_allclose(f.params["beta"], [0, 2], atol=1e-12)
    assert f.params["sigma2"] == pytest.approx(0, abs=1e-20)


def test_ols_constant():
    x = np.arange(10.0)
    f = fit_ols(np.full(10, 3.5), design(x))
    np.testing.assert_allclose(f.params["beta"], [3.5, 0], atol=1e-12)


def test_ols_slope_monte_carlo():
    rng = np.random.default_rng(7)
    x = rng.normal(size=10000)
    f = fit_ols(1 + 3 * x + rng.normal(size=10000), design(x))
    assert abs(f.params["beta"][1] - 3) < 0.05


def test_ols_rank_deficient_names_column():
    x = np.arange(10.0)
    with pytest.raises(FitError, match="x1"):
        fit_ols(x, np.column_stack([np.ones(10), x, 2 * x]))


def test_posterior_draws_centre_and_spread():
    rng = np.random.default_rng(3)
    x = rng.normal(size=200)
    y = 1 + 0.5 * x + rng.normal(size=200)
    f = fit_ols(y, design(x), MethodSpec("norm", proper=True))
    draws = np.array([draw_posterior(f, rng).posterior_draw["beta"] for _ in range(10000)])
    cov = f.params["sigma2"] * f.params["xtx_inv"]
    se = np.sqrt(np.diag(cov))
    mc = se / np.sqrt(10000)
    assert np.all(np.abs(draws.mean(axis=0) - f.params["beta"]) < 4 * mc)
    # t-distributed draws: variance df/(df-2) times the plug-in value
    df = f.params["df"]
    ratio = draws.var(axis=0) / (np.diag(cov) * df / (df - 2))
    assert np.all(np.abs(ratio - 1) < 0.1)


def test_generate_norm_zero_noise_and_clt():
    x = np.linspace(-1, 1, 50)
    f = fit_ols(1 + x, design(x))
    out = generate_norm(f, design(x), np.random.default_rng(0))
    np.testing.assert_allclose(out, 1 + x, atol=1e-10)
    rng = np.random.default_rng(1)
    x = rng.normal(size=500)
    f = fit_ols(2 + x + rng.normal(size=500), design(x))
    Xn = design(rng.normal(size=100000))
    out = generate_norm(f, Xn, np.random.default_rng(2))
    mu = (Xn @ f.params["beta"]).mean()
    assert abs(out.mean() - mu) < 4 * np.sqrt(f.params["sigma2"]) / np.sqrt(100000)
    np.testing.assert_array_equal(generate_norm(f, Xn, np.random.default_rng(5)),
                                  generate_norm(f, Xn, np.random.default_rng(5)))


def test_normrank_multiset_constant_and_ks():
    rng = np.random.default_rng(4)
    x = rng.normal(size=300)
    y = np.exp(x + rng.normal(size=300))
    f = fit_ols(y, design(x), MethodSpec("normrank"))
    out = generate_normrank(f, design(x), y, rng)
    np.testing.assert_array_equal(np.sort(out), np.sort(y))
    out = generate_normrank(f, design(x), np.full(300, 2.5), rng)
    assert np.all(out == 2.5)
    x = rng.normal(size=5000)
    y = x ** 3 + rng.normal(size=5000)
    f = fit_ols(y, design(x), MethodSpec("normrank"))
    donors = rng.gamma(2.0, size=5000)
    out = generate_normrank(f, design(rng.normal(size=5000)), donors, rng, smoothing=True)
    assert stats.ks_2samp(out, donors).statistic < 0.05


def test_logit_balanced_intercept_zero():
    y = np.array([0, 1] * 50)
    f = fit_logit(y, np.ones((100, 1)))
    assert abs(f.params["B"][0, 0]) < 1e-8


def test_logit_recovers_truth():
    rng = np.random.default_rng(11)
    x = rng.normal(size=20000)
    y = (rng.random(20000) < 1 / (1 + np.exp(1 - 2 * x))).astype(int)
    f = fit_logit(y, design(x))
    se = coef_se(f)
    assert np.all(np.abs(f.params["B"][:, 0] - [-1, 2]) < 4 * se)


def test_logit_matches_scipy_mle():
    rng = np.random.default_rng(12)
    x = rng.normal(size=400)
    y = (rng.random(400) < 1 / (1 + np.exp(-0.3 - x))).astype(int)
    X = design(x)

    def nll(b):
        eta = X @ b
        return np.sum(np.logaddexp(0, eta) - y * eta)

    from scipy.optimize import minimize
    ref = minimize(nll, np.zeros(2), method="BFGS", options={"gtol": 1e-10}).x
    np.testing.assert_allclose(fit_logit(y, X).params["B"][:, 0], ref, atol=1e-5)


def test_separation_warning():
    # level 2 only ever occurs when x = 1: a zero cell given the predictor
    x = np.r_[np.zeros(50), np.ones(50)]
    y = np.r_[np.arange(50) % 2, np.r_[np.zeros(20, int), np.ones(20, int), np.full(10, 2)]]
    with pytest.warns(SeparationWarning):
        f = fit_polyreg(y, design(x))
    assert f.warnings


def test_categorical_generation():
    rng = np.random.default_rng(0)
    y = np.r_[np.zeros(70, int), np.ones(30, int)]
    f = fit_logit(y, np.ones((100, 1)))
    out = generate_categorical(f, np.ones((100000, 1)), rng)
    assert abs((out == 0).mean() - 0.7) < 0.006
    P = predict_proba(f, np.ones((5, 1)))
    np.testing.assert_allclose(P.sum(axis=1), 1)


def test_categorical_degenerate_is_deterministic():
    x = np.r_[np.zeros(50), np.ones(50)]
    y = np.r_[np.zeros(50, int), np.ones(50, int)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        f = fit_logit(y, design(x))
    out = generate_categorical(f, design(x), np.random.default_rng(0))
    np.testing.assert_array_equal(out, y)


def test_cart_separable_split():
    x = np.r_[np.linspace(-2, -0.1, 20), np.linspace(0, 2, 20)]
    y = (x >= 0).astype(int)
    f = fit_cart(y, cont_design(x), categorical=True)
    assert tree_depth(f.params) == 1
    root = 0
    assert -0.1 <= f.params["threshold"][root] < 0
    leaf = apply_tree(f.params, cont_design(x))
    for lf in np.unique(leaf):
        assert len(set(y[leaf == lf])) == 1


def test_cart_constant_root_only():
    f = fit_cart(np.full(30, 4.0), cont_design(np.arange(30.0)))
    assert tree_depth(f.params) == 0


def test_cart_xor():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(-1, 1, 2000), rng.uniform(-1, 1, 2000)
    y = ((a > 0) ^ (b > 0)).astype(int)
    D = cont_design(a, b)
    f = fit_cart(y, D, CartControls(min_leaf_size=5), categorical=True)
    leaf = apply_tree(f.params, D)
    pred = np.empty_like(y)
    for lf in np.unique(leaf):
        pred[leaf == lf] = np.bincount(y[leaf == lf]).argmax()
    assert (pred == y).mean() > 0.95
    assert tree_depth(f.params) >= 2


def test_cart_root_donor_frequencies():
    f = fit_cart(np.array([1.0, 2.0, 3.0]), cont_design(np.zeros(3)))
    out = cart_generate(f, cont_design(np.zeros(30000)), np.random.default_rng(0))
    for v in (1, 2, 3):
        assert abs((out == v).mean() - 1 / 3) < 0.01


def test_cart_donor_closure_and_determinism():
    rng = np.random.default_rng(6)
    x = rng.normal(size=500)
    y = np.round(x * 3 + rng.normal(size=500), 2)
    D = cont_design(x)
    f = fit_cart(y, D)
    Dn = cont_design(rng.normal(size=2000))
    out = cart_generate(f, Dn, np.random.default_rng(1))
    assert set(out) <= set(y)
    np.testing.assert_array_equal(out, cart_generate(f, Dn, np.random.default_rng(1)))


def test_cart_bootstrap_reproducible():
    rng = np.random.default_rng(6)
    x = rng.normal(size=100)
    D = cont_design(x)
    f = fit(MethodSpec("cart", proper=True), x + rng.normal(size=100), D, categorical=False)
    a = draw_posterior(f, np.random.default_rng(9)).posterior_draw["bootstrap"]
    b = draw_posterior(f, np.random.default_rng(9)).posterior_draw["bootstrap"]
    np.testing.assert_array_equal(a, b)


def test_empirical_sample():
    out = empirical_sample(np.array(["A"]), 5, np.random.default_rng(0))
    assert list(out) == ["A"] * 5
    donors = np.array([0] * 60 + [1] * 30 + [2] * 10)
    k = 50000
    out = empirical_sample(donors, k, np.random.default_rng(1))
    for v, p in ((0, 0.6), (1, 0.3), (2, 0.1)):
        assert abs((out == v).mean() - p) < 4 * np.sqrt(p * (1 - p) / k)
    assert set(out) <= set(donors)
    with pytest.raises(FitError):
        empirical_sample(np.array([]), 3, np.random.default_rng(0))


def test_generate_dispatch_empirical():
    f = fit_empirical(np.array([1.0, 2.0]))
    assert generate(f, None, np.random.default_rng(0), k=7).size == 7


def test_method_target_checks():
    with pytest.raises(ValueError):
        MethodSpec("bogus")
    with pytest.raises(ValueError):
        MethodSpec("norm").check_target(categorical=True, n_levels=2)
    with pytest.raises(ValueError):
        MethodSpec("logit").check_target(categorical=True, n_levels=3)


@settings(max_examples=25, deadline=None)
@given(st.integers(10, 80), st.integers(1, 6), st.integers(0, 2 ** 31))
def test_split_kernels_agree(n, min_leaf, seed):
    rng = np.random.default_rng(seed)
    xs = np.sort(np.round(rng.normal(size=n), 1))
    ys = rng.normal(size=n)
    a = kernels.best_split_reg_numpy(xs, ys, min_leaf)
    b = kernels.best_split_reg(xs, ys, min_leaf)
    np.testing.assert_allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-9, atol=1e-9)
    yc = rng.integers(0, 3, n)
    a = kernels.best_split_cls_numpy(xs, yc, 3, min_leaf)
    b = kernels.best_split_cls(xs, yc, 3, min_leaf)
    np.testing.assert_allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-9, atol=1e-9)


def test_route_kernels_agree():
    rng = np.random.default_rng(0)
    a, g = rng.normal(size=400), rng.integers(0, 4, 400)
    s = Schema.from_dicts([{"name": "a", "kind": "continuous"},
                           {"name": "g", "kind": "categorical", "levels": list("pqrs")}])
    D = encode_design(DataTable.from_columns(s, {"a": a, "g": g}), ["a", "g"])
    f = fit_cart(a * (g + 1) + rng.normal(size=400), D)
    p = f.params
    F = np.ascontiguousarray(D.features)
    args = (F, p["feature"], p["threshold"], p["left"], p["right"], p["catmask"], p["is_cat"])
    np.testing.assert_array_equal(kernels.route_numpy(*args), kernels.route(*args))
