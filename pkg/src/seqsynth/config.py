"""Run configuration: a YAML file with one block per command.

Top-level keys::

    data:       observed CSV (synth, sdc, compare)
    schema:     list of variables (name, kind, levels, missing_codes, role)
    plan:       synthesis plan (synth)
    sdc:        disclosure control policy (synth, sdc)
    analysis:   replicate files, model and estimator (analyze)
    compare:    replicate files, variables and models (compare)
    simulation: study name and its settings (simulate)

Relative paths are resolved against the directory of the config file. Every
validation error names the config line it refers to.
"""

from __future__ import annotations

import glob
import re
from dataclasses import dataclass, field
from pathlib import Path
import yaml

from .combine import ESTIMATORS, AnalysisSpec, ModelError
from .engine import PlanError, SynthesisPlan
from .fitgen import CartControls, MethodSpec
from .rules import Rule, RuleError
from .sdc import DEFAULT_LABEL, SdcPolicy
from .tabular import Schema, SchemaError


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        where = f"{path or 'config'}:{line}: " if line else f"{path or 'config'}: "
        super().__init__(where + message)


TOP_KEYS = ("data", "schema", "plan", "sdc", "analysis", "compare", "simulation")
PLAN_KEYS = ("visit_sequence", "default_method", "methods", "predictor_matrix", "rules", "proper", "M", "k",
             "seed", "x_policy", "stratified", "strata_sizes", "cart")
METHOD_KEYS = ("kind", "smoothing")
RULE_KEYS = ("if", "then")
SDC_KEYS = ("label", "keys", "topcode", "replicates")
TOPCODE_KEYS = ("lower", "upper")
MODEL_KEYS = ("formula", "family", "positive")
ANALYSIS_KEYS = ("replicates", "estimator", "ci_level", "n", "DE") + MODEL_KEYS
COMPARE_KEYS = ("replicates", "variables", "bins", "width", "models")
SIM_STUDIES = {
    "srs": ("N", "n", "k", "M", "n_sims", "rho", "dim", "seed", "ci_level"),
    "stratified": ("configuration", "H", "N_h", "n_h", "M", "n_sims", "seed", "ci_level"),
    "ratio": ("n", "M", "n_reps", "seed", "method"),
    "interaction": ("n_seeds", "seed", "n", "M"),
}
CART_KEYS = ("min_leaf_size", "max_depth", "min_split_improvement")
COMMAND_BLOCKS = {
    "synth": ("data", "schema", "plan"),
    "analyze": ("schema", "analysis"),
    "compare": ("data", "schema", "compare"),
    "simulate": ("simulation",),
    "sdc": ("data", "schema", "sdc"),
}


class _Doc:
    """Plain values plus the source line of every node, keyed by path."""

    def __init__(self, text: str, source: str):
        self.source = source
        self.lines: dict = {}
        loader = yaml.SafeLoader(text)
        try:
            node = loader.get_single_node()
            self.root = {} if node is None else loader.construct_document(node)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise ConfigError(f"invalid YAML: {getattr(e, 'problem', None) or e}",
                              mark.line + 1 if mark else None, source) from None
        finally:
            loader.dispose()
        if node is not None:
            self._walk(node, self.root, ())

    def _walk(self, node, value, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode) and isinstance(value, dict):
            seen = set()
            for k, v in node.value:
                key = k.value
                key = next((kk for kk in value if str(kk) == key), key)
                if key in seen:
                    raise ConfigError(f"duplicate key {key!r}", k.start_mark.line + 1, self.source)
                seen.add(key)
                if key in value:
                    self._walk(v, value[key], path + (key,))
                    self.lines[path + (key,)] = k.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode) and isinstance(value, list):
            for i, (v, x) in enumerate(zip(node.value, value)):
                self._walk(v, x, path + (i,))

    def line(self, path) -> int | None:
        path = tuple(path)
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path)

    def error(self, path, message: str):
        return ConfigError(message, self.line(path), self.source)


def _get(doc: _Doc, path, types, required=False, default=None):
    cur = doc.root
    for p in path:
        if not isinstance(cur, (dict, list)) or (isinstance(cur, dict) and p not in cur):
            if required:
                raise doc.error(path[:-1], f"missing required key {'.'.join(map(str, path))!r}")
            return default
        cur = cur[p]
    ts = _tuple(types) if types is not None else None
    if ts is not None and (not isinstance(cur, ts) or isinstance(cur, bool) and bool not in ts):
        names = "/".join(t.__name__ for t in ts)
        raise doc.error(path, f"{'.'.join(map(str, path))} must be {names}, got {type(cur).__name__}")
    return cur


def _tuple(t):
    return t if isinstance(t, tuple) else (t,)


def _keys(doc: _Doc, path, allowed):
    block = _get(doc, path, dict, default={})
    for k in block:
        if k not in allowed:
            raise doc.error(tuple(path) + (k,), f"unknown key {k!r} in {'.'.join(map(str, path)) or 'top level'}"
                            f" (allowed: {', '.join(allowed)})")
    return block


def _path(doc: _Doc, base: Path, value, path):
    if not isinstance(value, str):
        raise doc.error(path, "expected a file path")
    p = Path(value)
    return p if p.is_absolute() else base / p


def _files(doc: _Doc, base: Path, value, path) -> list:
    """A list of paths or a glob pattern, sorted naturally by trailing number."""
    if isinstance(value, str):
        pat = value if Path(value).is_absolute() else str(base / value)
        found = sorted(glob.glob(pat), key=_natural)
        if not found:
            raise doc.error(path, f"no files match {value!r}")
        return [Path(f) for f in found]
    if isinstance(value, list) and value:
        return [_path(doc, base, v, tuple(path) + (i,)) for i, v in enumerate(value)]
    raise doc.error(path, "expected a glob pattern or a non-empty list of files")


def _natural(s: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s)]


@dataclass
class RunConfig:
    source: str
    base: Path
    data: Path | None = None
    schema: Schema | None = None
    plan: SynthesisPlan | None = None
    stratified: bool = False
    strata_sizes: dict | None = None
    sdc: SdcPolicy = field(default_factory=SdcPolicy)
    sdc_replicates: list | None = None
    analysis: dict | None = None
    compare: dict | None = None
    simulation: dict | None = None


def _schema(doc: _Doc) -> Schema:
    entries = _get(doc, ("schema",), list, required=True)
    for i, e in enumerate(entries):
        if not isinstance(e, dict):
            raise doc.error(("schema", i), "schema entries must be mappings")
        for k in e:
            if k not in ("name", "kind", "levels", "missing_codes", "role"):
                raise doc.error(("schema", i, k), f"unknown schema key {k!r}")
    try:
        return Schema.from_dicts(entries)
    except (SchemaError, ValueError, TypeError) as e:
        # locate the offending entry when the message names a variable
        for i, entry in enumerate(entries):
            if isinstance(entry, dict) and repr(entry.get("name")) in str(e):
                raise doc.error(("schema", i), str(e)) from None
        raise doc.error(("schema",), str(e)) from None


def _method(doc: _Doc, value, path, cart: CartControls) -> MethodSpec:
    if isinstance(value, str):
        value = {"kind": value}
    if not isinstance(value, dict):
        raise doc.error(path, "method must be a name or a mapping")
    for k in value:
        if k not in METHOD_KEYS:
            raise doc.error(tuple(path) + (k,), f"unknown method key {k!r}")
    try:
        return MethodSpec(value.get("kind", "cart"), smoothing=bool(value.get("smoothing", False)),
                          cart_controls=cart)
    except ValueError as e:
        raise doc.error(path, str(e)) from None


def _plan(doc: _Doc, schema: Schema, seed_override: int | None):
    block = _keys(doc, ("plan",), PLAN_KEYS)
    cart_block = _keys(doc, ("plan", "cart"), CART_KEYS)
    try:
        cart = CartControls(**cart_block)
    except (TypeError, ValueError) as e:
        raise doc.error(("plan", "cart"), str(e)) from None
    default = _get(doc, ("plan", "default_method"), str, default="cart")
    seq = _get(doc, ("plan", "visit_sequence"), list, default=None)
    kw = {}
    for key, types in (("proper", bool), ("M", int), ("k", (int, type(None))), ("seed", int), ("x_policy", str)):
        if key in block:
            kw[key] = _get(doc, ("plan", key), types)
    if seed_override is not None:
        kw["seed"] = seed_override
    rules = []
    for i, r in enumerate(_get(doc, ("plan", "rules"), list, default=[])):
        path = ("plan", "rules", i)
        if not isinstance(r, dict):
            raise doc.error(path, "a rule is a mapping with 'if' and 'then'")
        for k in r:
            if k not in RULE_KEYS:
                raise doc.error(path + (k,), f"unknown rule key {k!r}")
        cond = r.get("if")
        then = r.get("then")
        if not isinstance(cond, str) or not isinstance(then, dict) or len(then) != 1:
            raise doc.error(path, "rule needs 'if: <condition>' and 'then: {VARIABLE: value}'")
        (target, value), = then.items()
        try:
            rules.append(Rule(cond, str(target), value))
        except RuleError as e:
            raise doc.error(path + ("if",), str(e)) from None
    try:
        plan = SynthesisPlan.default(schema, method=default, visit_sequence=seq, rules=tuple(rules), **kw)
    except (PlanError, ValueError) as e:
        raise doc.error(("plan",), str(e)) from None
    methods = dict(plan.methods)
    for v, m in _get(doc, ("plan", "methods"), dict, default={}).items():
        methods[v] = _method(doc, m, ("plan", "methods", v), cart)
    for v, m in methods.items():
        if m.cart_controls != cart:
            methods[v] = MethodSpec(m.kind, m.proper, m.smoothing, cart)
    preds = dict(plan.predictors)
    for v, p in _get(doc, ("plan", "predictor_matrix"), dict, default={}).items():
        if not isinstance(p, list):
            raise doc.error(("plan", "predictor_matrix", v), "predictors must be a list of variable names")
        preds[v] = tuple(p)
    try:
        plan = SynthesisPlan(plan.visit_sequence, methods, preds, plan.rules, plan.proper, plan.M, plan.k,
                             plan.seed, plan.x_policy)
    except PlanError as e:
        raise doc.error(("plan",), str(e)) from None
    try:
        plan.validate(schema)
    except PlanError as e:
        msg = str(e)
        where = ("plan",)
        if "rule" in msg:
            where = ("plan", "rules")
            for i, r in enumerate(plan.rules):
                if r.describe() in msg:
                    where = ("plan", "rules", i)
        elif "predictor" in msg:
            where = ("plan", "predictor_matrix")
        elif "visit sequence" in msg:
            where = ("plan", "visit_sequence")
        elif "method" in msg:
            where = ("plan", "methods")
        raise doc.error(where, msg) from None
    stratified = _get(doc, ("plan", "stratified"), bool, default=False)
    sizes = _get(doc, ("plan", "strata_sizes"), dict, default=None)
    return plan, stratified, sizes


def _sdc(doc: _Doc, schema: Schema | None, base: Path):
    _keys(doc, ("sdc",), SDC_KEYS)
    label = _get(doc, ("sdc", "label"), str, default=DEFAULT_LABEL)
    if not label.strip():
        raise doc.error(("sdc", "label"), "label text cannot be empty")
    keys = _get(doc, ("sdc", "keys"), list, default=[])
    top = {}
    for v, b in _get(doc, ("sdc", "topcode"), dict, default={}).items():
        path = ("sdc", "topcode", v)
        if not isinstance(b, dict):
            raise doc.error(path, "topcode entries need 'lower' and/or 'upper'")
        for k in b:
            if k not in TOPCODE_KEYS:
                raise doc.error(path + (k,), f"unknown topcode key {k!r}")
        top[v] = (b.get("lower"), b.get("upper"))
    policy = SdcPolicy(label, tuple(keys), top)
    if schema is not None:
        try:
            policy.validate(schema)
        except ValueError as e:
            raise doc.error(("sdc",), str(e)) from None
    reps = None
    if "replicates" in doc.root.get("sdc", {}):
        reps = _files(doc, base, doc.root["sdc"]["replicates"], ("sdc", "replicates"))
    return policy, reps


def _model(doc: _Doc, block: dict, path) -> AnalysisSpec:
    for k in ("formula",):
        if k not in block:
            raise doc.error(path, f"missing required key {k!r}")
    try:
        return AnalysisSpec(block["formula"], block.get("family", "linear"), block.get("positive"))
    except ModelError as e:
        raise doc.error(tuple(path) + ("formula",), str(e)) from None


def _check_model_vars(doc, schema, spec, path):
    for v in spec.variables:
        if v not in schema:
            raise doc.error(tuple(path) + ("formula",), f"model variable {v!r} not in schema")


def _analysis(doc: _Doc, schema: Schema, base: Path):
    block = _keys(doc, ("analysis",), ANALYSIS_KEYS)
    if "replicates" not in block:
        raise doc.error(("analysis",), "missing required key 'replicates'")
    spec = _model(doc, block, ("analysis",))
    _check_model_vars(doc, schema, spec, ("analysis",))
    est = _get(doc, ("analysis", "estimator"), str, default="Ts")
    if est not in ESTIMATORS:
        raise doc.error(("analysis", "estimator"), f"unknown estimator {est!r}; choose from {', '.join(ESTIMATORS)}")
    ci = _get(doc, ("analysis", "ci_level"), (int, float), default=0.95)
    if not 0 < ci < 1:
        raise doc.error(("analysis", "ci_level"), "ci_level must lie in (0, 1)")
    n = _get(doc, ("analysis", "n"), (int, type(None)), default=None)
    DE = _get(doc, ("analysis", "DE"), (int, float), default=1.0)
    if DE <= 0:
        raise doc.error(("analysis", "DE"), "DE must be positive")
    files = _files(doc, base, block["replicates"], ("analysis", "replicates"))
    return {"replicates": files, "model": spec, "estimator": est, "ci_level": float(ci), "n": n, "DE": float(DE)}


def _compare(doc: _Doc, schema: Schema, base: Path):
    block = _keys(doc, ("compare",), COMPARE_KEYS)
    if "replicates" not in block:
        raise doc.error(("compare",), "missing required key 'replicates'")
    files = _files(doc, base, block["replicates"], ("compare", "replicates"))
    variables = _get(doc, ("compare", "variables"), list, default=None)
    names = [n for n in schema.names]
    for i, v in enumerate(variables or []):
        if v not in schema:
            raise doc.error(("compare", "variables", i), f"unknown variable {v!r}")
    bins = _get(doc, ("compare", "bins"), int, default=20)
    if bins < 1:
        raise doc.error(("compare", "bins"), "bins must be positive")
    width = _get(doc, ("compare", "width"), dict, default={})
    for v, w in width.items():
        if v not in schema or not isinstance(w, (int, float)) or w <= 0:
            raise doc.error(("compare", "width", v), "width entries map a continuous variable to a positive number")
    models = []
    for i, m in enumerate(_get(doc, ("compare", "models"), list, default=[])):
        path = ("compare", "models", i)
        if not isinstance(m, dict):
            raise doc.error(path, "a model is a mapping with 'formula'")
        for k in m:
            if k not in MODEL_KEYS:
                raise doc.error(path + (k,), f"unknown model key {k!r}")
        spec = _model(doc, m, path)
        _check_model_vars(doc, schema, spec, path)
        models.append(spec)
    return {"replicates": files, "variables": variables or names, "bins": bins, "width": width, "models": models}


def _simulation(doc: _Doc, seed_override: int | None):
    block = _get(doc, ("simulation",), dict, required=True)
    study = block.get("study")
    if study not in SIM_STUDIES:
        raise doc.error(("simulation", "study") if "study" in block else ("simulation",),
                        f"simulation.study must be one of {', '.join(SIM_STUDIES)}")
    allowed = ("study",) + SIM_STUDIES[study]
    _keys(doc, ("simulation",), allowed)
    settings = {k: v for k, v in block.items() if k != "study"}
    for k, v in settings.items():
        if k not in ("rho", "ci_level", "n_h", "method") and (not isinstance(v, int) or isinstance(v, bool)):
            raise doc.error(("simulation", k), f"simulation.{k} must be an integer")
    if seed_override is not None:
        settings["seed"] = seed_override
    if study == "stratified" and "configuration" in settings and settings["configuration"] not in (1, 2, 3):
        raise doc.error(("simulation", "configuration"), "configuration must be 1, 2 or 3")
    return {"study": study, "settings": settings}


def load_config(path, command: str, seed: int | None = None) -> RunConfig:
    """Parse and validate ``path`` for ``command``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", None, str(path)) from None
    return parse_config(text, command, source=str(path), base=path.parent, seed=seed)


def parse_config(text: str, command: str, source: str = "config", base: Path | None = None,
                 seed: int | None = None) -> RunConfig:
    if command not in COMMAND_BLOCKS:
        raise ConfigError(f"unknown command {command!r}", None, source)
    doc = _Doc(text, source)
    if not isinstance(doc.root, dict):
        raise ConfigError("config must be a mapping of blocks", 1, source)
    _keys(doc, (), TOP_KEYS)
    for b in COMMAND_BLOCKS[command]:
        if b not in doc.root:
            raise ConfigError(f"command {command!r} requires a {b!r} block", None, source)
    base = Path(base) if base is not None else Path(".")
    cfg = RunConfig(source, base)
    if "data" in doc.root and command in ("synth", "sdc", "compare"):
        cfg.data = _path(doc, base, doc.root["data"], ("data",))
    if command != "simulate":
        cfg.schema = _schema(doc)
    if command == "synth":
        cfg.plan, cfg.stratified, cfg.strata_sizes = _plan(doc, cfg.schema, seed)
    if command in ("synth", "sdc") and "sdc" in doc.root:
        cfg.sdc, cfg.sdc_replicates = _sdc(doc, cfg.schema, base)
    if command == "sdc" and not cfg.sdc_replicates:
        raise doc.error(("sdc",), "sdc command needs 'replicates' (the synthetic files to clean)")
    if command == "analyze":
        cfg.analysis = _analysis(doc, cfg.schema, base)
    if command == "compare":
        cfg.compare = _compare(doc, cfg.schema, base)
    if command == "simulate":
        cfg.simulation = _simulation(doc, seed)
    return cfg
