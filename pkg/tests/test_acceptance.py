"""Acceptance gate: each test checks one criterion at its stated tolerance."""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqsynth.combine import PooledStats, var_TM, var_Tp, var_Ts, var_TsDE, var_TsPPD
from seqsynth.engine import SynthesisOutput, SynthesisPlan, synthesize
from seqsynth.fitgen import MethodSpec, fit_ols, generate_normrank
from seqsynth.sdc import SdcPolicy, apply_sdc, remove_replicated_uniques, write_output
from seqsynth.simlab import (RatioStudyConfig, SrsSimConfig, interaction_shrinkage, run_ratio_study,
                             run_srs_simulation, run_stratified_simulation)
from seqsynth.simlab.report import paired_variance_difference
from seqsynth.simlab.standin import make_standin, standin_plan
from seqsynth.simlab.stratified import config
from seqsynth.tabular import DataTable, Schema, write_csv

SEED = 2024


def fmt(a):
    return "[" + ", ".join(f"{x:.3f}" for x in np.ravel(a)) + "]"


# ---------------------------------------------------------------- 1


def test_estimator_arithmetic(criterion):
    rng = np.random.default_rng(SEED)
    N = 1000
    b = rng.uniform(0, 5, N)
    vbar = rng.uniform(0.01, 5, N)
    M = rng.integers(2, 200, N)
    k = rng.integers(10, 10 ** 5, N)
    n = rng.integers(10, 10 ** 5, N)
    DE = rng.uniform(0.5, 30, N)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(N):
        p = PooledStats(np.zeros(1), np.array([vbar[i]]), np.array([b[i]]), int(M[i]))
        Mi, ki, ni, Bi, Vi = int(M[i]), int(k[i]), int(n[i]), float(b[i]), float(vbar[i])
        # direct substitution, written independently of the library
        oracle = {
            "TM": Bi + Bi / Mi - Vi,
            "Ts": Vi * ki / ni + Vi / Mi,
            "TsPPD": Vi * ki / ni + Vi / Mi + Vi * ki / (ni * Mi),
            "Tp": Vi * ki / ni + Bi / Mi,
            "TsDE": DE[i] * Vi * ki / ni + Vi / Mi,
        }
        got = {
            "TM": var_TM(p)[0], "Ts": var_Ts(p, ki, ni)[0], "TsPPD": var_TsPPD(p, ki, ni)[0],
            "Tp": var_Tp(p, ki, ni)[0], "TsDE": var_TsDE(p, ki, ni, DE=float(DE[i]))[0],
        }
        for e, o in oracle.items():
            worst = max(worst, abs(got[e] - o) / max(abs(o), 1e-300))
    elapsed = time.perf_counter() - t0
    criterion("1 estimator arithmetic", worst < 1e-12 and elapsed < 1.0,
              f"max relative error {worst:.2e}, {elapsed:.3f} s")


# ---------------------------------------------------------------- 2


@pytest.fixture(scope="module")
def srs():
    return run_srs_simulation(SrsSimConfig(seed=SEED, n_sims=2000))


def test_srs_negative_TM_fraction(srs, criterion):
    f = srs.arms["proper"].negative_fraction
    criterion("2a negative T_M fraction in [0.08, 0.14]", bool(np.all((f >= 0.08) & (f <= 0.14))), fmt(f))


def test_srs_coverage(srs, criterion):
    cells = {"plug-in Ts": srs.arms["plug-in"].coverage["Ts"],
             "plug-in Tp": srs.arms["plug-in"].coverage["Tp"],
             "proper TsPPD": srs.arms["proper"].coverage["TsPPD"],
             "proper Tp": srs.arms["proper"].coverage["Tp"]}
    ok = all(np.all((c >= 93.5) & (c <= 96.5)) for c in cells.values())
    criterion("2b coverage of Ts, Tp, TsPPD in [93.5, 96.5]", ok,
              "; ".join(f"{k} {fmt(v)}" for k, v in cells.items()))


def test_srs_adjusted_TM_coverage(srs, criterion):
    c = srs.arms["proper"].coverage["TMadj"]
    criterion("2c adjusted T_M coverage in [84, 89]", bool(np.all((c >= 84) & (c <= 89))), fmt(c))


def test_srs_TM_variance_ratio(srs, criterion):
    r = srs.variance_ratio("proper", "TM", "TsPPD")[1:]
    criterion("2d var(T_M)/var(TsPPD) for slopes > 20", bool(np.all(r > 20)), fmt(r))


def test_srs_Tp_ratios(srs, criterion):
    plug = srs.variance_ratio("plug-in", "Tp", "Ts")
    prop = srs.variance_ratio("proper", "Tp", "TsPPD")
    ok = bool(np.all((plug >= 1.2) & (plug <= 1.9)) and np.all((prop >= 2.5) & (prop <= 6.5)))
    criterion("2e Tp/Ts in [1.2, 1.9] plug-in, Tp/TsPPD in [2.5, 6.5] proper (all coefficients)", ok,
              f"plug-in {fmt(plug)}; proper {fmt(prop)}")


# ---------------------------------------------------------------- 3


def test_stratified_config1(criterion):
    rep = run_stratified_simulation(config(1, seed=SEED))
    plug, prop = rep.arms["plug-in"], rep.arms["proper"]
    ev = np.r_[plug.empirical_variance, prop.empirical_variance]
    ts = plug.estimator_mean["Ts"][0]
    cov = np.r_[plug.coverage["Ts"], prop.coverage["TsPPD"]]
    tm = prop.estimator_mean["TM"][0]
    ok = (np.all((ev >= 0.17) & (ev <= 0.23)) and 0.17 <= ts <= 0.21 and np.all((cov >= 92) & (cov <= 97))
          and tm > prop.empirical_variance[0])
    criterion("3 stratified config 1", bool(ok),
              f"empirical variance {fmt(ev)}, mean Ts {ts:.3f}, coverage Ts/TsPPD {fmt(cov)}, "
              f"mean TM {tm:.3f} vs {prop.empirical_variance[0]:.3f}")


# ---------------------------------------------------------------- 4


@pytest.fixture(scope="module")
def strat23():
    return run_stratified_simulation(config(2, seed=SEED)), run_stratified_simulation(config(3, seed=SEED))


def test_stratified_negative_TM(strat23, criterion):
    f = np.r_[[r.arms["proper"].negative_fraction[0] for r in strat23]]
    criterion("4a negative T_M fraction in [0.04, 0.09], configs 2 and 3",
              bool(np.all((f >= 0.04) & (f <= 0.09))), fmt(f))


def test_stratified_config3_variance_lower(strat23, criterion):
    c2, c3 = strat23
    parts, ok = [], True
    for arm in ("plug-in", "proper"):
        d, se = paired_variance_difference(c2.qbar[arm], c3.qbar[arm])
        ok &= bool(d[0] - 4 * se[0] > 0)
        parts.append(f"{arm}: {c2.arms[arm].empirical_variance[0]:.3f} vs "
                     f"{c3.arms[arm].empirical_variance[0]:.3f}, diff {d[0]:.4f} (4 SE {4 * se[0]:.4f})")
    criterion("4b config 3 variance below config 2 at 4 MC SE", ok, "; ".join(parts))


def test_stratified_adjusted_coverage(strat23, criterion):
    c = np.r_[[r.arms["proper"].coverage["TMadj"][0] for r in strat23]]
    criterion("4c adjusted T_M coverage in [86, 93], configs 2 and 3",
              bool(np.all((c >= 86) & (c <= 93))), fmt(c))


# ---------------------------------------------------------------- 5


def test_ratio_study(criterion):
    res = run_ratio_study(RatioStudyConfig(seed=SEED, n_reps=200))
    ts, ppd = res.grand_mean("Ts"), res.grand_mean("TsPPD")
    ok = abs(ts - 1.049) <= 0.03 and abs(ppd - 1.095) <= 0.04
    criterion("5 ratio study", ok, f"sqrt(Ts)/SE_obs {ts:.4f} (1.049 +/- 0.03), "
                                   f"sqrt(TsPPD)/SE_obs {ppd:.4f} (1.095 +/- 0.04)")


# ---------------------------------------------------------------- 6

_INVARIANTS = {}


def _note(name, ok):
    _INVARIANTS[name] = _INVARIANTS.get(name, True) and ok
    assert ok, name


@settings(max_examples=20, deadline=None, derandomize=True)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from(["cart", "parametric"]), st.booleans())
def test_invariant_rules_closure_triangular(seed, method, proper):
    obs = make_standin(400, np.random.default_rng(seed))
    plan = standin_plan(proper, M=1, seed=seed, method=method)
    rep = synthesize(obs, plan).replicates[0]
    young = rep.values("AGE9") < 16
    _note("rule violations", int(np.sum(rep.labels("MSTAT9")[young] != "Single")) == 0)
    if method == "cart":
        _note("donor closure", set(rep.values("AGE9")) <= set(obs.values("AGE9")))
    flipped = DataTable.from_columns(obs.schema, {v: obs.values(v) for v in ("SEX9", "AGE9", "MSTAT9")}
                                     | {"ILL9": 1 - obs.values("ILL9")})
    rep2 = synthesize(flipped, plan).replicates[0]
    _note("lower-triangular probe",
          all(np.array_equal(rep.values(v), rep2.values(v)) for v in ("SEX9", "AGE9", "MSTAT9")))


@settings(max_examples=20, deadline=None, derandomize=True)
@given(st.integers(0, 2 ** 31 - 1), st.integers(5, 400))
def test_invariant_normrank_multiset(seed, m):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=m)
    y = rng.gamma(1.5, size=m)
    f = fit_ols(y, np.column_stack([np.ones(m), x]), MethodSpec("normrank"))
    out = generate_normrank(f, np.column_stack([np.ones(m), x]), y, rng, smoothing=False)
    _note("normrank multiset", np.array_equal(np.sort(out), np.sort(y)))


@settings(max_examples=10, deadline=None, derandomize=True)
@given(st.integers(0, 2 ** 31 - 1))
def test_invariant_empirical_closure_and_determinism(tmp_path_factory, seed):
    s = Schema.from_dicts([{"name": "v", "kind": "continuous"}])
    donors = np.round(np.random.default_rng(seed).normal(size=50), 3)
    t = DataTable.from_columns(s, {"v": donors})
    plan = SynthesisPlan.default(s, seed=seed, M=2)
    a, b = synthesize(t, plan), synthesize(t, plan)
    _note("donor closure", all(set(r.values("v")) <= set(donors) for r in a.replicates))
    d = tmp_path_factory.mktemp("det")
    for tag, out in (("a", a), ("b", b)):
        for l, r in enumerate(out.replicates):
            write_csv(r, d / f"{tag}{l}.csv")
    _note("seed determinism", all((d / f"a{l}.csv").read_bytes() == (d / f"b{l}.csv").read_bytes()
                                  for l in range(2)))


def test_synthesis_invariants_summary(criterion):
    expected = {"rule violations", "donor closure", "lower-triangular probe", "normrank multiset",
                "seed determinism"}
    ok = set(_INVARIANTS) == expected and all(_INVARIANTS.values())
    criterion("6 synthesis invariants", ok,
              ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in sorted(_INVARIANTS.items()))
              or "property tests did not run")


# ---------------------------------------------------------------- 7


def test_sdc_suite(criterion, tmp_path):
    s = Schema.from_dicts([{"name": "a", "kind": "categorical", "levels": list("ABCD")},
                           {"name": "b", "kind": "categorical", "levels": list("xyz")}])
    matches = idem = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        no, ns = rng.integers(4, 30, 2)
        obs = DataTable.from_columns(s, {"a": rng.integers(0, 4, no), "b": rng.integers(0, 3, no)})
        syn = DataTable.from_columns(s, {"a": rng.integers(0, 4, ns), "b": rng.integers(0, 3, ns)})
        ok_keys = list(zip(obs.labels("a"), obs.labels("b")))
        sy_keys = list(zip(syn.labels("a"), syn.labels("b")))
        brute = [t for t in sy_keys
                 if not (sum(1 for u in ok_keys if u == t) == 1 and sum(1 for u in sy_keys if u == t) == 1)]
        out, _ = remove_replicated_uniques(obs, syn, ["a", "b"])
        matches += list(zip(out.labels("a"), out.labels("b"))) == brute
        idem += remove_replicated_uniques(obs, out, ["a", "b"])[0].equals(out)
    output = apply_sdc(obs, SynthesisOutput((syn, obs)), SdcPolicy(key_variables=("a", "b")))
    paths = write_output(output, tmp_path)
    labelled = sum("FALSE DATA" in p.read_text().splitlines()[0] for p in paths)
    criterion("7 SDC suite", matches == 10 and idem == 10 and labelled == len(paths),
              f"brute-force agreement {matches}/10, idempotent {idem}/10, labelled files {labelled}/{len(paths)}")


# ---------------------------------------------------------------- 8


def test_interaction_shrinkage(criterion):
    hits = total = 0
    for seed in range(SEED, SEED + 50):
        shrink = interaction_shrinkage(seed)
        hits += int(shrink.sum())
        total += shrink.size
    rate = hits / total
    criterion("8 interaction coefficients shrink toward 0 over 50 seeds (>= 80%)", rate >= 0.8,
              f"{hits}/{total} = {rate:.3f}")
