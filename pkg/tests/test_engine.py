import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqsynth.engine import PlanError, SynthesisPlan, synthesize, synthesize_stratified
from seqsynth.fitgen import MethodSpec
from seqsynth.rules import Rule, RuleError
from seqsynth.simlab.standin import STANDIN_SCHEMA, UNDER16_RULE, make_standin, standin_plan
from seqsynth.tabular import DataTable, Schema


def standin(n=1500, seed=0):
    return make_standin(n, np.random.default_rng(seed))


def test_single_variable_empirical_is_bootstrap():
    s = Schema.from_dicts([{"name": "g", "kind": "categorical", "levels": ["a", "b", "c"]}])
    t = DataTable.from_columns(s, {"g": np.r_[np.zeros(500, int), np.ones(300, int), np.full(200, 2)]})
    plan = SynthesisPlan.default(s, seed=3)
    out = synthesize(t, plan).replicates[0]
    assert out.n_rows == 1000
    props = np.bincount(out.values("g"), minlength=3) / 1000
    for p, target in zip(props, (0.5, 0.3, 0.2)):
        assert abs(p - target) < 4 * np.sqrt(target * (1 - target) / 1000)


@pytest.mark.parametrize("method", ["cart", "parametric"])
def test_rule_has_no_violations(method):
    obs = standin()
    plan = standin_plan(False, M=3, seed=1, method=method)
    for rep in synthesize(obs, plan).replicates:
        young = rep.values("AGE9") < 16
        assert young.any()
        assert np.all(rep.labels("MSTAT9")[young] == "Single")


def test_rule_removed_lets_violations_through():
    obs = standin()
    plan = SynthesisPlan.default(STANDIN_SCHEMA, method="parametric", M=2, seed=1)
    bad = sum(int(np.sum((r.values("AGE9") < 16) & (r.labels("MSTAT9") != "Single")))
              for r in synthesize(obs, plan).replicates)
    assert bad > 0


def test_seed_determinism():
    obs = standin()
    plan = standin_plan(True, M=2, seed=9, method="cart")
    a, b = synthesize(obs, plan), synthesize(obs, plan)
    assert all(x.equals(y) for x, y in zip(a.replicates, b.replicates))
    assert a.manifest == b.manifest
    c = synthesize(obs, standin_plan(True, M=2, seed=10, method="cart"))
    assert not c.replicates[0].equals(a.replicates[0])


def test_threads_do_not_change_output():
    obs = standin()
    plan = standin_plan(False, M=4, seed=2)
    a = synthesize(obs, plan, threads=1)
    b = synthesize(obs, plan, threads=4)
    assert all(x.equals(y) for x, y in zip(a.replicates, b.replicates))


def test_lower_triangular_probe():
    # altering the observed values of the last variable cannot affect earlier synthetic columns
    obs = standin()
    ill = obs.values("ILL9")
    flipped = DataTable.from_columns(obs.schema, {
        "SEX9": obs.values("SEX9"), "AGE9": obs.values("AGE9"), "MSTAT9": obs.values("MSTAT9"),
        "ILL9": 1 - ill})
    plan = standin_plan(False, M=2, seed=4, method="cart")
    a, b = synthesize(obs, plan), synthesize(flipped, plan)
    for x, y in zip(a.replicates, b.replicates):
        for v in ("SEX9", "AGE9", "MSTAT9"):
            np.testing.assert_array_equal(x.values(v), y.values(v))
        assert not np.array_equal(x.values("ILL9"), y.values("ILL9"))


def test_forward_reference_rejected():
    obs = standin(200)
    plan = SynthesisPlan.default(STANDIN_SCHEMA, rules=(Rule("ILL9 == 'Yes'", "AGE9", 50),))
    with pytest.raises(PlanError, match="before"):
        synthesize(obs, plan)
    plan = SynthesisPlan.default(STANDIN_SCHEMA, visit_sequence=["SEX9", "AGE9", "ILL9"])
    with pytest.raises(PlanError):
        synthesize(obs, plan)


def test_bad_rule_syntax():
    with pytest.raises(RuleError):
        Rule("AGE9 <", "MSTAT9", "Single")
    with pytest.raises(RuleError):
        Rule("__import__('os')", "MSTAT9", "Single")


def test_proper_manifest_records_draw_mode():
    obs = standin(400)
    m = synthesize(obs, standin_plan(True, M=1, seed=0, method="parametric")).manifest
    assert m["proper"] is True
    assert {e["posterior_draw"] for e in m["methods"].values()} <= {"normal-approximation", "bootstrap"}
    assert m["rules"] == [UNDER16_RULE.describe()]


def _with_missing(n, frac, seed):
    rng = np.random.default_rng(seed)
    s = Schema.from_dicts([{"name": "x", "kind": "continuous"},
                           {"name": "inc", "kind": "continuous", "missing_codes": [-999]},
                           {"name": "y", "kind": "continuous"}])
    x = rng.normal(size=n)
    inc = 10 + x + rng.normal(size=n)
    inc[rng.random(n) < frac] = -999
    return DataTable.from_columns(s, {"x": x, "inc": inc, "y": x + rng.normal(size=n)})


def test_missing_fraction_reproduced():
    obs = _with_missing(40000, 0.0015, 0)
    p_obs = obs.missing("inc").mean()
    out = synthesize(obs, SynthesisPlan.default(obs.schema, method="parametric", seed=1)).replicates[0]
    p = out.missing("inc").mean()
    assert abs(p - p_obs) < 4 * np.sqrt(p_obs * (1 - p_obs) / obs.n_rows)
    assert np.all(np.isfinite(out.values("inc")[~out.missing("inc")]))


def test_no_missing_gives_no_markers():
    obs = _with_missing(500, 0.0, 1)
    out = synthesize(obs, SynthesisPlan.default(obs.schema, seed=1)).replicates[0]
    assert not out.missing("inc").any()


def test_later_variable_sees_synthetic_indicator():
    # y is a deterministic copy of the missingness of inc; CART must carry it through
    rng = np.random.default_rng(5)
    s = Schema.from_dicts([{"name": "inc", "kind": "continuous", "missing_codes": [-999]},
                           {"name": "flag", "kind": "categorical", "levels": ["obs", "miss"]}])
    inc = rng.normal(size=600)
    miss = rng.random(600) < 0.3
    inc[miss] = -999
    t = DataTable.from_columns(s, {"inc": inc, "flag": miss.astype(int)})
    out = synthesize(t, SynthesisPlan.default(s, M=3, seed=2)).replicates
    for r in out:
        np.testing.assert_array_equal(r.values("flag") == 1, r.missing("inc"))


def _strata(n_h=(40, 40), seed=0):
    rng = np.random.default_rng(seed)
    s = Schema.from_dicts([{"name": "h", "kind": "categorical", "levels": ["lo", "hi"], "role": "stratum"},
                           {"name": "x", "kind": "continuous"}, {"name": "y", "kind": "continuous"}])
    h = np.repeat([0, 1], n_h)
    x = rng.normal(size=h.size) + 100 * h
    return DataTable.from_columns(s, {"h": h, "x": x, "y": x + rng.normal(size=h.size)})


def test_stratified_donor_closure_per_stratum():
    t = _strata()
    out = synthesize_stratified(t, SynthesisPlan.default(t.schema, M=2, seed=3))
    for r in out.replicates:
        for h in (0, 1):
            rows = r.values("h") == h
            src = t.values("h") == h
            assert set(r.values("x")[rows]) <= set(t.values("x")[src])
            assert rows.sum() == src.sum()


def test_stratified_custom_sizes():
    t = _strata()
    out = synthesize_stratified(t, SynthesisPlan.default(t.schema, seed=3), sizes={"lo": 25, "hi": 60})
    r = out.replicates[0]
    assert (r.values("h") == 0).sum() == 25 and (r.values("h") == 1).sum() == 60
    with pytest.raises(PlanError):
        synthesize_stratified(t, SynthesisPlan.default(t.schema, seed=3), sizes={"nope": 3})


def test_stratified_normal_means():
    rng = np.random.default_rng(8)
    s = Schema.from_dicts([{"name": "h", "kind": "categorical", "levels": [str(h) for h in range(1, 11)],
                            "role": "stratum"}, {"name": "y", "kind": "continuous"}])
    h = np.repeat(np.arange(10), 20)
    y = rng.normal(10 * (h + 1), h + 1)
    t = DataTable.from_columns(s, {"h": h, "y": y})
    plan = SynthesisPlan(("y",), {"y": MethodSpec("norm")}, {"y": ("h",)}, M=50, seed=1)
    reps = synthesize_stratified(t, plan).replicates
    for j in range(10):
        fitted = y[h == j].mean()
        means = np.array([r.values("y")[r.values("h") == j].mean() for r in reps])
        assert np.all(np.abs(means - fitted) < 4 * (j + 1) / np.sqrt(20))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(["cart", "parametric"]))
def test_rule_property(seed, method):
    obs = make_standin(300, np.random.default_rng(seed))
    out = synthesize(obs, standin_plan(seed % 2 == 0, M=1, seed=seed, method=method)).replicates[0]
    young = out.values("AGE9") < 16
    assert np.all(out.labels("MSTAT9")[young] == "Single")


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_cart_closure_property(seed):
    obs = make_standin(300, np.random.default_rng(seed))
    out = synthesize(obs, standin_plan(False, M=1, seed=seed, method="cart")).replicates[0]
    assert set(out.values("AGE9")) <= set(obs.values("AGE9"))
