"""Typed columnar tables, schema validation, CSV I/O and design-matrix encoding.

Missing values are carried as an explicit per-cell marker (``Column.miss``), never
as sentinel numbers. Continuous cells that are missing hold ``nan`` in
``Column.values`` so a leaked marker poisons arithmetic instead of biasing it.
Categorical missing codes behave as extra levels appended after the declared
levels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"
KINDS = (CATEGORICAL, CONTINUOUS)

SYNTHESIZE = "synthesize"
KEEP = "keep-unchanged"
STRATUM = "stratum"
WEIGHT = "weight"
ROLES = (SYNTHESIZE, KEEP, STRATUM, WEIGHT)

# Reserved column appended by faux-data labelling; skipped on ingestion.
LABEL_COLUMN = "faux_label"


class SchemaError(ValueError):
    pass


class CSVFormatError(ValueError):
    pass


def _code_text(code) -> str:
    if isinstance(code, float) and code.is_integer():
        return str(int(code))
    return str(code)


@dataclass(frozen=True)
class VariableDef:
    name: str
    kind: str
    levels: tuple = ()
    missing_codes: tuple = ()
    role: str = SYNTHESIZE

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        object.__setattr__(self, "missing_codes", tuple(self.missing_codes))
        if self.kind not in KINDS:
            raise SchemaError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"variable {self.name!r}: unknown role {self.role!r}")
        if self.kind == CATEGORICAL:
            if not self.levels:
                raise SchemaError(f"categorical variable {self.name!r} needs levels")
            if len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"variable {self.name!r}: duplicate levels")
            clash = set(self.levels) & {_code_text(c) for c in self.missing_codes}
            if clash:
                raise SchemaError(f"variable {self.name!r}: missing codes overlap levels {sorted(clash)}")
        elif self.levels:
            raise SchemaError(f"continuous variable {self.name!r} cannot declare levels")
        else:
            for c in self.missing_codes:
                try:
                    float(c)
                except (TypeError, ValueError):
                    raise SchemaError(f"variable {self.name!r}: non-numeric missing code {c!r}") from None
        if len({_code_text(c) for c in self.missing_codes}) != len(self.missing_codes):
            raise SchemaError(f"variable {self.name!r}: duplicate missing codes")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    @property
    def code_labels(self) -> tuple:
        return tuple(_code_text(c) for c in self.missing_codes)

    @property
    def all_levels(self) -> tuple:
        """Declared levels followed by missing codes (missing-as-category)."""
        return self.levels + self.code_labels

    @property
    def n_levels(self) -> int:
        return len(self.all_levels)


@dataclass(frozen=True)
class Schema:
    variables: tuple

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        names = [v.name for v in self.variables]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise SchemaError(f"duplicate variable names: {sorted(dup)}")
        for role in (STRATUM, WEIGHT):
            if sum(v.role == role for v in self.variables) > 1:
                raise SchemaError(f"at most one variable may have role={role}")
        for v in self.variables:
            if v.role == WEIGHT and v.kind != CONTINUOUS:
                raise SchemaError(f"weight variable {v.name!r} must be continuous")

    @classmethod
    def from_dicts(cls, entries: Iterable[Mapping]) -> "Schema":
        out = []
        for e in entries:
            e = dict(e)
            out.append(
                VariableDef(
                    name=str(e.pop("name")),
                    kind=e.pop("kind"),
                    levels=tuple(e.pop("levels", ()) or ()),
                    missing_codes=tuple(e.pop("missing_codes", ()) or ()),
                    role=e.pop("role", SYNTHESIZE),
                )
            )
            if e:
                raise SchemaError(f"variable {out[-1].name!r}: unknown keys {sorted(e)}")
        return cls(tuple(out))

    @property
    def names(self) -> list:
        return [v.name for v in self.variables]

    def __getitem__(self, name: str) -> VariableDef:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def __contains__(self, name) -> bool:
        return any(v.name == name for v in self.variables)

    def with_roles(self, roles: Mapping[str, str]) -> "Schema":
        return Schema(tuple(
            VariableDef(v.name, v.kind, v.levels, v.missing_codes, roles.get(v.name, v.role))
            for v in self.variables
        ))

    def by_role(self, role: str) -> list:
        return [v.name for v in self.variables if v.role == role]

    @property
    def stratum(self):
        s = self.by_role(STRATUM)
        return s[0] if s else None

    @property
    def weight(self):
        w = self.by_role(WEIGHT)
        return w[0] if w else None


def _frozen(a: np.ndarray) -> np.ndarray:
    if a.flags.writeable or not a.flags.c_contiguous:
        a = np.array(a, order="C")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Column:
    """values: float64 (continuous, nan where missing) or int64 codes into
    ``VariableDef.all_levels``; miss: index into missing_codes, -1 if observed."""

    values: np.ndarray
    miss: np.ndarray

    @property
    def missing(self) -> np.ndarray:
        return self.miss >= 0


@dataclass(frozen=True)
class DataTable:
    schema: Schema
    columns: Mapping[str, Column] = field(repr=False)

    def __post_init__(self):
        cols = {}
        lengths = set()
        for var in self.schema.variables:
            if var.name not in self.columns:
                raise SchemaError(f"column {var.name!r} missing from table")
            col = self.columns[var.name]
            miss = np.asarray(col.miss, dtype=np.int16)
            if var.is_categorical:
                vals = np.asarray(col.values, dtype=np.int64)
                nl = len(var.levels)
                if vals.size and (vals.min() < 0 or vals.max() >= var.n_levels):
                    raise SchemaError(f"column {var.name!r}: level index out of range")
                expect = np.where(vals >= nl, vals - nl, -1)
                if not np.array_equal(expect, miss):
                    raise SchemaError(f"column {var.name!r}: missing markers inconsistent with codes")
            else:
                vals = np.asarray(col.values, dtype=np.float64)
                obs = miss < 0
                if miss.size and miss.max() >= len(var.missing_codes):
                    raise SchemaError(f"column {var.name!r}: undeclared missing code")
                if not np.all(np.isfinite(vals[obs])):
                    raise SchemaError(f"column {var.name!r}: non-finite value")
                vals = np.where(obs, vals, np.nan)
            lengths.add(len(vals))
            if len(miss) != len(vals):
                raise SchemaError(f"column {var.name!r}: marker length mismatch")
            cols[var.name] = Column(_frozen(vals), _frozen(miss))
        extra = set(self.columns) - set(self.schema.names)
        if extra:
            raise SchemaError(f"columns not in schema: {sorted(extra)}")
        if len(lengths) > 1:
            raise SchemaError("columns differ in length")
        object.__setattr__(self, "columns", cols)

    @property
    def n_rows(self) -> int:
        if not self.columns:
            return 0
        return len(next(iter(self.columns.values())).values)

    def __len__(self):
        return self.n_rows

    def column(self, name: str) -> Column:
        return self.columns[name]

    def values(self, name: str) -> np.ndarray:
        return self.columns[name].values

    def missing(self, name: str) -> np.ndarray:
        return self.columns[name].missing

    def labels(self, name: str) -> np.ndarray:
        """Categorical column as an object array of level / missing-code labels."""
        var = self.schema[name]
        if not var.is_categorical:
            raise TypeError(f"{name!r} is not categorical")
        return np.asarray(var.all_levels, dtype=object)[self.values(name)]

    def take(self, rows) -> "DataTable":
        rows = np.asarray(rows)
        return DataTable(self.schema, {
            n: Column(c.values[rows], c.miss[rows]) for n, c in self.columns.items()
        })

    def replace(self, **cols: Column) -> "DataTable":
        new = dict(self.columns)
        new.update(cols)
        return DataTable(self.schema, new)

    def select(self, names: Sequence[str]) -> "DataTable":
        sub = Schema(tuple(self.schema[n] for n in names))
        return DataTable(sub, {n: self.columns[n] for n in names})

    def equals(self, other: "DataTable") -> bool:
        if self.schema != other.schema or self.n_rows != other.n_rows:
            return False
        for n in self.schema.names:
            a, b = self.columns[n], other.columns[n]
            if not np.array_equal(a.miss, b.miss):
                return False
            if not np.array_equal(a.values, b.values, equal_nan=True):
                return False
        return True

    @classmethod
    def from_columns(cls, schema: Schema, data: Mapping[str, Sequence]) -> "DataTable":
        """Build a table from raw per-variable values.

        Continuous columns take numbers; any value equal to a declared missing
        code becomes a marker. Categorical columns take labels (level names or
        missing-code text) or, if given as an integer array, codes into
        ``all_levels``.
        """
        cols = {}
        for var in schema.variables:
            raw = data[var.name]
            if var.is_categorical:
                arr = np.asarray(raw)
                if arr.dtype.kind in "iu":
                    codes = arr.astype(np.int64)
                else:
                    index = {lab: i for i, lab in enumerate(var.all_levels)}
                    try:
                        codes = np.array([index[_code_text(x)] for x in raw], dtype=np.int64)
                    except KeyError as e:
                        raise SchemaError(f"column {var.name!r}: unknown level {e.args[0]!r}") from None
                nl = len(var.levels)
                miss = np.where(codes >= nl, codes - nl, -1)
                cols[var.name] = Column(codes, miss)
            else:
                vals = np.asarray(raw, dtype=np.float64)
                miss = np.full(len(vals), -1, dtype=np.int16)
                for j, c in enumerate(var.missing_codes):
                    miss[vals == float(c)] = j
                cols[var.name] = Column(vals, miss)
        return cls(schema, cols)


# ---------------------------------------------------------------- CSV


def _parse_cell(var: VariableDef, text: str, row: int):
    """Return (value, miss_index) for one cell; raise CSVFormatError otherwise."""
    t = text.strip()
    labels = var.code_labels
    if t in labels:
        j = labels.index(t)
        return (len(var.levels) + j if var.is_categorical else math.nan), j
    if var.is_categorical:
        try:
            return var.levels.index(t), -1
        except ValueError:
            raise CSVFormatError(
                f"row {row}, column {var.name!r}: value {t!r} is not a declared level or missing code"
            ) from None
    try:
        x = float(t)
    except ValueError:
        raise CSVFormatError(f"row {row}, column {var.name!r}: cannot parse {t!r} as a number") from None
    for j, c in enumerate(var.missing_codes):
        if x == float(c):
            return math.nan, j
    if not math.isfinite(x):
        raise CSVFormatError(f"row {row}, column {var.name!r}: non-finite value {t!r}")
    return x, -1


def parse_csv(path, schema: Schema, ignore_columns=(LABEL_COLUMN,)) -> DataTable:
    """Read a comma-separated UTF-8 file with a header row into a validated table.

    Lines starting with ``#`` (faux-data labels) are skipped. Header order need
    not match the schema. Row numbers in errors count data rows from 1.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.reader(lines)
        header = next(reader, None)
        if header is None:
            raise CSVFormatError(f"{path}: empty file")
        header = [h.strip() for h in header]
        unknown = [h for h in header if h not in schema and h not in ignore_columns]
        if unknown:
            raise CSVFormatError(f"{path}: unknown column(s) {unknown}")
        absent = [n for n in schema.names if n not in header]
        if absent:
            raise CSVFormatError(f"{path}: missing column(s) {absent}")
        pos = {n: header.index(n) for n in schema.names}
        vals = {n: [] for n in schema.names}
        miss = {n: [] for n in schema.names}
        for r, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise CSVFormatError(f"{path}: row {r} has {len(rec)} fields, expected {len(header)}")
            for var in schema.variables:
                v, m = _parse_cell(var, rec[pos[var.name]], r)
                vals[var.name].append(v)
                miss[var.name].append(m)
    cols = {n: Column(np.asarray(vals[n]), np.asarray(miss[n], dtype=np.int16)) for n in schema.names}
    return DataTable(schema, cols)


def format_number(x: float) -> str:
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def table_rows(table: DataTable) -> list:
    """Cells of ``table`` as text, in schema order."""
    out = []
    cols = []
    for var in table.schema.variables:
        c = table.column(var.name)
        if var.is_categorical:
            lab = np.asarray(var.all_levels, dtype=object)
            cols.append(list(lab[c.values]))
        else:
            codes = var.code_labels
            cols.append([codes[m] if m >= 0 else format_number(v) for v, m in zip(c.values, c.miss)])
    for i in range(table.n_rows):
        out.append([col[i] for col in cols])
    return out


def write_csv(table: DataTable, path, comment: str | None = None, extra: Mapping[str, str] | None = None):
    """Write ``table``; ``comment`` becomes a leading ``# ...`` line and each
    ``extra`` entry a constant trailing column."""
    path = Path(path)
    extra = dict(extra or {})
    with path.open("w", newline="", encoding="utf-8") as fh:
        if comment is not None:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.schema.names + list(extra))
        tail = list(extra.values())
        for row in table_rows(table):
            w.writerow(row + tail)


# ---------------------------------------------------------------- design matrices


@dataclass(frozen=True)
class DesignMatrix:
    """Dummy-coded regression design plus raw per-predictor features for trees.

    ``features`` holds one column per continuous value, one per missingness
    indicator and one (level code) per categorical predictor; ``feature_levels``
    is the level count for categorical features and 0 otherwise.
    """

    matrix: np.ndarray
    column_names: tuple
    features: np.ndarray
    feature_names: tuple
    feature_levels: tuple

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_columns(self) -> int:
        return self.matrix.shape[1]

    def take(self, rows) -> "DesignMatrix":
        return DesignMatrix(
            _frozen(self.matrix[rows]), self.column_names, _frozen(self.features[rows]),
            self.feature_names, self.feature_levels,
        )


def design_width(schema: Schema, predictors: Sequence[str]) -> int:
    p = 1
    for name in predictors:
        var = schema[name]
        if var.is_categorical:
            p += var.n_levels - 1
        else:
            p += 1 + (1 if var.missing_codes else 0)
    return p


def encode_design(table: DataTable, predictors: Sequence[str], n_rows: int | None = None) -> DesignMatrix:
    """Intercept, then per predictor: value (+ missingness indicator) for
    continuous, reference-dropped dummies for categorical. ``n_rows`` sizes the
    intercept-only design when ``table`` has no columns."""
    n = table.n_rows if n_rows is None or table.columns else n_rows
    cols = [np.ones(n)]
    names = ["(Intercept)"]
    feats, fnames, flev = [], [], []
    for name in predictors:
        var = table.schema[name]
        c = table.column(name)
        if var.is_categorical:
            for j, lab in enumerate(var.all_levels[1:], start=1):
                cols.append((c.values == j).astype(np.float64))
                names.append(f"{name}[{lab}]")
            feats.append(c.values.astype(np.float64))
            fnames.append(name)
            flev.append(var.n_levels)
        else:
            miss = c.missing
            obs = c.values[~miss]
            fill = obs.mean() if obs.size else 0.0
            val = np.where(miss, fill, c.values)
            cols.append(val)
            names.append(name)
            feats.append(val)
            fnames.append(name)
            flev.append(0)
            if var.missing_codes:
                ind = miss.astype(np.float64)
                cols.append(ind)
                names.append(f"{name}[missing]")
                feats.append(ind)
                fnames.append(f"{name}[missing]")
                flev.append(0)
    X = np.column_stack(cols)
    F = np.column_stack(feats) if feats else np.empty((n, 0))
    return DesignMatrix(_frozen(X), tuple(names), _frozen(F), tuple(fnames), tuple(flev))


def split_missingness(table: DataTable, var: str):
    """Return (0/1 indicator of missing markers in ``var``, table of observed rows)."""
    vdef = table.schema[var]
    if not vdef.missing_codes:
        raise SchemaError(f"variable {var!r} declares no missing codes")
    ind = table.missing(var).astype(np.int8)
    return ind, table.take(np.flatnonzero(ind == 0))
