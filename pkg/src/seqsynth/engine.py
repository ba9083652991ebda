"""Sequential conditional synthesis of whole tables."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg

from . import fitgen
from .fitgen import FitError, FittedGenerator, MethodSpec
from .rules import Rule
from .tabular import (
    KEEP,
    STRATUM,
    SYNTHESIZE,
    WEIGHT,
    Column,
    DataTable,
    DesignMatrix,
    Schema,
    encode_design,
)


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class SynthesisPlan:
    """What to synthesize and how.

    ``predictors`` maps each synthesized variable to the variables that predict
    it (its row of the predictor matrix). ``proper`` overrides the per-method
    flag. ``k=None`` means k = n. ``x_policy`` is ``"copy"`` (unchanged
    variables copied, requires k = n) or ``"resample"``.
    """

    visit_sequence: tuple
    methods: Mapping[str, MethodSpec]
    predictors: Mapping[str, tuple]
    rules: tuple = ()
    proper: bool = False
    M: int = 1
    k: int | None = None
    seed: int = 0
    x_policy: str = "copy"

    def __post_init__(self):
        object.__setattr__(self, "visit_sequence", tuple(self.visit_sequence))
        object.__setattr__(self, "rules", tuple(self.rules))
        object.__setattr__(self, "predictors", {v: tuple(p) for v, p in self.predictors.items()})
        object.__setattr__(self, "methods", dict(self.methods))
        if self.M < 1:
            raise PlanError("M must be at least 1")
        if self.k is not None and self.k < 1:
            raise PlanError("k must be positive")
        if self.x_policy not in ("copy", "resample"):
            raise PlanError(f"unknown x_policy {self.x_policy!r}")

    @classmethod
    def default(cls, schema: Schema, method: str = "cart", visit_sequence: Sequence[str] | None = None,
                **kw) -> "SynthesisPlan":
        """Every earlier variable and every unchanged variable predicts each variable."""
        seq = tuple(visit_sequence or schema.by_role(SYNTHESIZE))
        fixed = tuple(unchanged_variables(schema, seq))
        preds = {v: fixed + seq[:i] for i, v in enumerate(seq)}
        methods = {}
        for v in seq:
            var = schema[v]
            if method == "parametric":
                if var.is_categorical:
                    methods[v] = MethodSpec("logit" if var.n_levels == 2 else "polyreg")
                else:
                    methods[v] = MethodSpec("normrank")
            else:
                methods[v] = MethodSpec(method)
        return cls(seq, methods, preds, **kw)

    def method_for(self, var: str) -> MethodSpec:
        m = self.methods.get(var, MethodSpec("cart"))
        if not self.predictors.get(var):
            m = replace(m, kind="empirical")
        return replace(m, proper=self.proper)

    def predictor_matrix(self, schema: Schema):
        """Boolean matrix (rows: visit sequence, columns: unchanged + visit sequence)."""
        cols = list(unchanged_variables(schema, self.visit_sequence)) + list(self.visit_sequence)
        mat = np.zeros((len(self.visit_sequence), len(cols)), dtype=bool)
        for i, v in enumerate(self.visit_sequence):
            for p in self.predictors.get(v, ()):
                mat[i, cols.index(p)] = True
        return mat, cols

    def validate(self, schema: Schema):
        seq = self.visit_sequence
        if len(set(seq)) != len(seq):
            raise PlanError("visit sequence repeats a variable")
        for v in seq:
            if v not in schema:
                raise PlanError(f"visit sequence names unknown variable {v!r}")
            if schema[v].role != SYNTHESIZE:
                raise PlanError(f"{v!r} has role {schema[v].role}, not synthesize")
        unsynth = set(schema.by_role(SYNTHESIZE)) - set(seq)
        if unsynth:
            raise PlanError(f"variables with role=synthesize missing from visit sequence: {sorted(unsynth)}")
        fixed = set(unchanged_variables(schema, seq))
        for v, preds in self.predictors.items():
            if v not in seq:
                raise PlanError(f"predictor row for {v!r}, which is not synthesized")
            earlier = set(seq[:seq.index(v)])
            for p in preds:
                if p not in schema:
                    raise PlanError(f"{v!r}: unknown predictor {p!r}")
                if p not in earlier and p not in fixed:
                    raise PlanError(f"{v!r}: predictor {p!r} is not earlier in the visit sequence")
        for v, m in self.methods.items():
            if v not in seq:
                raise PlanError(f"method given for {v!r}, which is not synthesized")
        for v in seq:
            var = schema[v]
            m = self.method_for(v)
            try:
                m.check_target(var.is_categorical, var.n_levels if var.is_categorical else 0)
            except ValueError as e:
                raise PlanError(f"{v!r}: {e}") from None
        for r in self.rules:
            if r.target not in seq:
                raise PlanError(f"rule target {r.target!r} is not synthesized")
            pos = seq.index(r.target)
            for name in r.variables:
                if name not in schema:
                    raise PlanError(f"rule {r.describe()!r}: unknown variable {name!r}")
                if name in fixed:
                    continue
                if name not in seq or seq.index(name) >= pos:
                    raise PlanError(
                        f"rule {r.describe()!r}: {name!r} must be synthesized before {r.target!r}")
            coerce_value(schema[r.target], r.value)


@dataclass(frozen=True)
class SynthesisOutput:
    replicates: tuple
    manifest: dict = field(default_factory=dict)


def unchanged_variables(schema: Schema, seq=()) -> list:
    return [v.name for v in schema.variables if v.role in (KEEP, STRATUM, WEIGHT) and v.name not in seq]


def coerce_value(var, value):
    """(value, miss) for forcing ``var`` to ``value``."""
    text = str(value)
    if var.is_categorical:
        if text not in var.all_levels:
            raise PlanError(f"forced value {value!r} is not a level of {var.name!r}")
        code = var.all_levels.index(text)
        return code, (code - len(var.levels) if code >= len(var.levels) else -1)
    if text in var.code_labels:
        return np.nan, var.code_labels.index(text)
    try:
        return float(value), -1
    except (TypeError, ValueError):
        raise PlanError(f"forced value {value!r} is not numeric for {var.name!r}") from None


def _replicate_seeds(seed: int, l: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(l)])


X_STREAM = 2 ** 32 - 1  # stream index reserved for resampling unchanged variables


def _stream(seed: int, l: int, j: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(l), int(j)]))


def _partial(schema: Schema, cols: Mapping[str, Column], names) -> DataTable:
    return DataTable(Schema(tuple(schema[n] for n in names)), {n: cols[n] for n in names})


def _usable_columns(D: DesignMatrix):
    """Indices of design columns kept for fitting: drop constants, then collinear ones."""
    A = D.matrix
    if A.shape[0] == 0:
        return np.arange(1)
    keep = [0] + [j for j in range(1, A.shape[1]) if np.ptp(A[:, j]) > 0]
    sub = A[:, keep]
    if sub.shape[1] > 1:
        _, R, piv = linalg.qr(sub, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        tol = max(sub.shape) * np.finfo(float).eps * d[0]
        rank = int((d > tol).sum())
        keep = sorted(keep[j] for j in piv[:rank])
        if 0 not in keep:
            keep = [0] + keep[:-1]
    return np.asarray(keep)


def _subset(D: DesignMatrix, cols) -> DesignMatrix:
    return DesignMatrix(D.matrix[:, cols], tuple(D.column_names[j] for j in cols),
                        D.features, D.feature_names, D.feature_levels)


@dataclass
class _Model:
    fit: FittedGenerator
    cols: np.ndarray | None
    categorical: bool


def _fit_model(method: MethodSpec, y, D: DesignMatrix, categorical: bool, notes: list, label: str) -> _Model:
    cols = None
    if method.kind in fitgen.PARAMETRIC:
        cols = _usable_columns(D)
        if len(cols) < D.n_columns:
            dropped = [D.column_names[j] for j in range(D.n_columns) if j not in set(cols)]
            notes.append(f"{label}: dropped constant/collinear design columns {dropped}")
        D = _subset(D, cols)
        if method.kind in ("norm", "normrank") and D.rows <= D.n_columns:
            raise FitError(f"{label}: {D.rows} fitting rows for {D.n_columns} columns")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        f = fitgen.fit(method, y, D, categorical)
    for w in caught:
        notes.append(f"{label}: {w.message}")
    return _Model(f, cols, categorical)


def _generate(model: _Model, D: DesignMatrix, rng, k: int):
    if model.cols is not None:
        D = _subset(D, model.cols)
    return fitgen.generate(model.fit, D, rng, k=k)


def _draw(model: _Model, rng, notes, label) -> _Model:
    if not model.fit.method.proper:
        return model
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        f = fitgen.draw_posterior(model.fit, rng)
    for w in caught:
        notes.append(f"{label}: {w.message}")
    return _Model(f, model.cols, model.categorical)


def _indicator_method(method: MethodSpec, n_states: int) -> MethodSpec:
    if method.kind == "cart":
        kind = "cart"
    elif method.kind == "empirical":
        kind = "empirical"
    else:
        kind = "logit" if n_states == 2 else "polyreg"
    return replace(method, kind=kind, smoothing=False)


@dataclass
class _VariablePlan:
    name: str
    predictors: tuple
    method: MethodSpec
    value: _Model | None
    indicator: _Model | None  # missingness model (continuous with missing codes)
    n_missing: int
    constant: tuple | None = None  # every fitting row excluded by rules


def fit_variable(observed: DataTable, var: str, predictors, method: MethodSpec, rules, notes) -> _VariablePlan:
    """Fit the models that generate ``var``, on observed data only."""
    schema = observed.schema
    vdef = schema[var]
    rows = np.ones(observed.n_rows, dtype=bool)
    for r in rules:
        if r.target == var:
            rows &= ~r.holds(observed)
    if not rows.any():
        notes.append(f"{var}: every row is fixed by rules; nothing to fit")
        return _VariablePlan(var, tuple(predictors), method, None, None, 0, constant=(0, -1))
    D = encode_design(_partial(schema, observed.columns, predictors), predictors,
                      n_rows=observed.n_rows).take(np.flatnonzero(rows))
    col = observed.column(var)
    y_all = col.values[rows]
    miss = col.miss[rows]
    if vdef.is_categorical:
        m = _fit_model(method, y_all, D, True, notes, var)
        return _VariablePlan(var, tuple(predictors), method, m, None, 0)
    indicator = None
    n_missing = int((miss >= 0).sum())
    if vdef.missing_codes and n_missing:
        if n_missing == miss.size:
            raise FitError(f"{var}: all observed values are missing")
        states = miss.astype(np.int64) + 1  # 0 observed, j+1 missing code j
        imeth = _indicator_method(method, len(vdef.missing_codes) + 1)
        indicator = _fit_model(imeth, states, D, True, notes, f"{var}[missing]")
        obs = miss < 0
        D = D.take(np.flatnonzero(obs))
        y_all = y_all[obs]
    m = _fit_model(method, y_all, D, False, notes, var)
    return _VariablePlan(var, tuple(predictors), method, m, indicator, n_missing)


def synthesize_missingness(vp: _VariablePlan, D: DesignMatrix, rng, k: int):
    """(indicator, values column) for a continuous variable with missing codes.

    The missingness state is generated first; values come from the model fitted
    to observed-nonmissing rows and fill only rows whose synthetic state is
    'observed'.
    """
    if vp.indicator is None:
        state = np.zeros(k, dtype=np.int64)
    else:
        state = np.asarray(_generate(vp.indicator, D, rng, k), dtype=np.int64)
    miss = (state - 1).astype(np.int16)
    values = np.full(k, np.nan)
    obs = np.flatnonzero(state == 0)
    if obs.size:
        values[obs] = _generate(vp.value, D.take(obs), rng, obs.size)
    return (state > 0).astype(np.int8), Column(values, miss)


def _generate_variable(vp: _VariablePlan, schema: Schema, cols, rng, k: int) -> Column:
    vdef = schema[vp.name]
    if vp.constant is not None:
        if vdef.is_categorical:
            return Column(np.zeros(k, dtype=np.int64), np.full(k, -1, dtype=np.int16))
        return Column(np.zeros(k), np.full(k, -1, dtype=np.int16))
    D = encode_design(_partial(schema, cols, vp.predictors), vp.predictors, n_rows=k)
    if vdef.is_categorical:
        codes = np.asarray(_generate(vp.value, D, rng, k), dtype=np.int64)
        nl = len(vdef.levels)
        return Column(codes, np.where(codes >= nl, codes - nl, -1).astype(np.int16))
    if vdef.missing_codes:
        return synthesize_missingness(vp, D, rng, k)[1]
    vals = np.asarray(_generate(vp.value, D, rng, k), dtype=np.float64)
    return Column(vals, np.full(k, -1, dtype=np.int16))


def _apply_rules(rules, target: str, schema: Schema, cols, col: Column) -> Column:
    vals, miss = col.values.copy(), col.miss.copy()
    names = list(cols)
    for r in rules:
        if r.target != target:
            continue
        cur = dict(cols)
        cur[target] = Column(vals, miss)
        hit = r.holds(_partial(schema, cur, names + [target] if target not in names else names))
        v, m = coerce_value(schema[target], r.value)
        vals[hit] = v
        miss[hit] = m
    return Column(vals, miss)


class Synthesizer:
    """Holds models fitted once to the observed table and generates replicates."""

    def __init__(self, observed: DataTable, plan: SynthesisPlan):
        plan.validate(observed.schema)
        self.observed = observed
        self.plan = plan
        self.schema = observed.schema
        self.n = observed.n_rows
        self.k = plan.k or self.n
        self.fixed = unchanged_variables(self.schema, plan.visit_sequence)
        if self.fixed and self.k != self.n and plan.x_policy != "resample":
            raise PlanError(
                f"k={self.k} differs from n={self.n} with unchanged variables {self.fixed}; "
                "set x_policy='resample'")
        widest = max((len(plan.predictors.get(v, ())) for v in plan.visit_sequence), default=0)
        if self.n < 2 * widest:
            raise PlanError(f"n={self.n} rows is too few for {widest} predictors")
        self.notes = []
        self.models = []
        for v in plan.visit_sequence:
            m = plan.method_for(v)
            self.models.append(
                fit_variable(observed, v, plan.predictors.get(v, ()), m, plan.rules, self.notes))

    def replicate(self, l: int) -> tuple:
        plan, schema, k = self.plan, self.schema, self.k
        notes = []
        cols = {}
        if self.fixed:
            if k == self.n:
                for v in self.fixed:
                    cols[v] = self.observed.column(v)
            else:
                idx = _stream(plan.seed, l, X_STREAM).integers(0, self.n, size=k)
                for v in self.fixed:
                    c = self.observed.column(v)
                    cols[v] = Column(c.values[idx], c.miss[idx])
        for j, vp in enumerate(self.models):
            rng = _stream(plan.seed, l, j)
            if plan.proper and vp.value is not None:
                vp = replace(
                    vp,
                    value=_draw(vp.value, rng, notes, vp.name),
                    indicator=_draw(vp.indicator, rng, notes, f"{vp.name}[missing]") if vp.indicator else None,
                )
            col = _generate_variable(vp, schema, cols, rng, k)
            cols[vp.name] = _apply_rules(plan.rules, vp.name, schema, cols, col)
        table = DataTable(schema, {n: cols[n] for n in schema.names})
        return table, notes

    def run(self, threads: int = 1) -> SynthesisOutput:
        ls = range(1, self.plan.M + 1)
        if threads > 1 and self.plan.M > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                results = list(ex.map(self.replicate, ls))
        else:
            results = [self.replicate(l) for l in ls]
        reps = tuple(r[0] for r in results)
        notes = list(self.notes)
        for l, (_, ns) in zip(ls, results):
            notes.extend(f"replicate {l}: {s}" for s in ns)
        return SynthesisOutput(reps, self.manifest(notes))

    def manifest(self, notes) -> dict:
        plan = self.plan
        methods = {}
        for vp in self.models:
            m = vp.method
            entry = {"method": m.kind, "predictors": list(vp.predictors)}
            if m.smoothing:
                entry["smoothing"] = True
            if vp.n_missing:
                entry["missingness_model"] = _indicator_method(m, 2).kind
            if plan.proper:
                entry["posterior_draw"] = (
                    "bootstrap" if m.kind in ("cart", "empirical") else "normal-approximation")
            methods[vp.name] = entry
        return {
            "n": self.n,
            "k": self.k,
            "M": plan.M,
            "proper": plan.proper,
            "master_seed": plan.seed,
            "replicate_seeds": {str(l): [plan.seed, l] for l in range(1, plan.M + 1)},
            "visit_sequence": list(plan.visit_sequence),
            "methods": methods,
            "rules": [r.describe() for r in plan.rules],
            "x_policy": plan.x_policy,
            "warnings": notes,
            "faux_label": None,
        }


def synthesize(table: DataTable, plan: SynthesisPlan, threads: int = 1) -> SynthesisOutput:
    """Generate ``plan.M`` synthetic replicates of ``table``.

    Models are fitted to observed data; each variable is then generated from
    the synthetic values of earlier variables. Replicate ``l`` and variable
    ``j`` draw from the stream seeded by ``(plan.seed, l, j)``.
    """
    return Synthesizer(table, plan).run(threads)


def concat_tables(tables: Sequence[DataTable]) -> DataTable:
    schema = tables[0].schema
    return DataTable(schema, {
        n: Column(np.concatenate([t.column(n).values for t in tables]),
                  np.concatenate([t.column(n).miss for t in tables]))
        for n in schema.names
    })


def synthesize_stratified(table: DataTable, plan: SynthesisPlan, stratum_var: str | None = None,
                          sizes: Mapping | None = None, threads: int = 1) -> SynthesisOutput:
    """Run ``plan`` independently within each stratum and stack the results.

    ``sizes`` maps stratum label to synthetic size k_h (default: observed n_h).
    """
    schema = table.schema
    stratum_var = stratum_var or schema.stratum
    if stratum_var is None or schema[stratum_var].role != STRATUM:
        raise PlanError("stratified synthesis needs a variable with role=stratum")
    svar = schema[stratum_var]
    keys = table.labels(stratum_var) if svar.is_categorical else table.values(stratum_var)
    keys = np.asarray([str(x) if svar.is_categorical else x for x in keys], dtype=object)
    strata = list(dict.fromkeys(svar.all_levels)) if svar.is_categorical else sorted(set(keys))
    present = [h for h in strata if (keys == h).any()]
    sizes = {str(h) if svar.is_categorical else h: v for h, v in (sizes or {}).items()}
    unknown = set(sizes) - set(present)
    if unknown:
        raise PlanError(f"sizes given for unknown or empty strata {sorted(map(str, unknown))}")
    if svar.is_categorical and len(present) < len(strata):
        empty = [h for h in strata[:len(svar.levels)] if h not in present]
        if empty:
            raise PlanError(f"empty strata: {empty}")
    min_rows = 2 * max((plan.method_for(v).cart_controls.min_leaf_size for v in plan.visit_sequence), default=1)
    outputs = []
    for i, h in enumerate(present):
        rows = np.flatnonzero(keys == h)
        if rows.size < min_rows:
            raise PlanError(f"stratum {h!r} has {rows.size} rows; need at least {min_rows}")
        k_h = int(sizes.get(h, rows.size))
        seed_h = int(np.random.SeedSequence([int(plan.seed), 1_000_003, i]).generate_state(1)[0])
        plan_h = replace(plan, k=k_h, seed=seed_h,
                         x_policy="resample" if k_h != rows.size else plan.x_policy)
        outputs.append((h, synthesize(table.take(rows), plan_h, threads)))
    reps = tuple(concat_tables([o.replicates[l] for _, o in outputs]) for l in range(plan.M))
    manifest = dict(outputs[0][1].manifest)
    manifest["strata"] = {
        str(h): {"n_h": int((keys == h).sum()), "k_h": o.manifest["k"], "seed": o.manifest["master_seed"],
                 "warnings": o.manifest["warnings"]}
        for h, o in outputs
    }
    manifest["k"] = sum(o.manifest["k"] for _, o in outputs)
    manifest["n"] = table.n_rows
    manifest["master_seed"] = plan.seed
    manifest["replicate_seeds"] = {str(l): [plan.seed, l] for l in range(1, plan.M + 1)}
    manifest["warnings"] = [w for _, o in outputs for w in o.manifest["warnings"]]
    manifest["stratum_variable"] = stratum_var
    return SynthesisOutput(reps, manifest)
