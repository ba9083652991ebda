"""Disclosure control applied to synthetic tables after generation."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml

from .engine import SynthesisOutput
from .tabular import KEEP, LABEL_COLUMN, Column, DataTable, Schema, VariableDef, write_csv

DEFAULT_LABEL = "FALSE DATA"


class SdcError(ValueError):
    pass


@dataclass(frozen=True)
class SdcPolicy:
    label_text: str = DEFAULT_LABEL
    key_variables: tuple = ()
    topcode: Mapping[str, tuple] = field(default_factory=dict)  # name -> (lower, upper), None = open

    def validate(self, schema: Schema):
        for k in self.key_variables:
            if k not in schema:
                raise SdcError(f"key variable {k!r} not in schema")
        for name, (lo, hi) in self.topcode.items():
            if name not in schema:
                raise SdcError(f"top-coded variable {name!r} not in schema")
            if schema[name].is_categorical:
                raise SdcError(f"cannot top-code categorical variable {name!r}")
            for b in (lo, hi):
                if b is not None and not np.isfinite(b):
                    raise SdcError(f"{name!r}: bounds must be finite")
            if lo is not None and hi is not None and lo > hi:
                raise SdcError(f"{name!r}: lower bound above upper bound")


def _key_tuples(table: DataTable, keys):
    parts = []
    for k in keys:
        c = table.column(k)
        vals = np.where(c.missing, 0, c.values) if not table.schema[k].is_categorical else c.values
        parts.append(list(zip(c.miss.tolist(), vals.tolist())))
    return list(zip(*parts))


def remove_replicated_uniques(observed: DataTable, synthetic: DataTable, keys):
    """Drop synthetic rows whose key tuple is unique in both tables.

    Returns the cleaned table and a report holding only the count removed.
    """
    keys = list(keys)
    if not keys:
        raise SdcError("at least one key variable is required")
    obs = Counter(_key_tuples(observed, keys))
    syn_keys = _key_tuples(synthetic, keys)
    syn = Counter(syn_keys)
    drop = np.array([obs.get(t) == 1 and syn[t] == 1 for t in syn_keys], dtype=bool)
    return synthetic.take(np.flatnonzero(~drop)), {"uniques_removed": int(drop.sum())}


def top_bottom_code(table: DataTable, policy: SdcPolicy):
    """Clamp continuous variables to their bounds; report per-variable counts."""
    policy.validate(table.schema)
    cols = {}
    counts = {}
    for name, (lo, hi) in policy.topcode.items():
        c = table.column(name)
        v = c.values.copy()
        obs = ~c.missing
        n = 0
        if hi is not None:
            hit = obs & (v > hi)
            v[hit] = hi
            n += int(hit.sum())
        if lo is not None:
            hit = obs & (v < lo)
            v[hit] = lo
            n += int(hit.sum())
        cols[name] = Column(v, c.miss)
        counts[name] = n
    return table.replace(**cols), counts


def _with_label(table: DataTable, text: str) -> DataTable:
    if LABEL_COLUMN in table.schema:
        return table
    var = VariableDef(LABEL_COLUMN, "categorical", levels=(text,), role=KEEP)
    schema = Schema(table.schema.variables + (var,))
    cols = dict(table.columns)
    cols[LABEL_COLUMN] = Column(np.zeros(table.n_rows, dtype=np.int64), np.full(table.n_rows, -1, np.int16))
    return DataTable(schema, cols)


def strip_label(table: DataTable) -> DataTable:
    if LABEL_COLUMN not in table.schema:
        return table
    return table.select([n for n in table.schema.names if n != LABEL_COLUMN])


def label_faux(output: SynthesisOutput, text: str = DEFAULT_LABEL) -> SynthesisOutput:
    """Mark every replicate as false data (constant label column + manifest entry)."""
    reps = tuple(_with_label(r, text) for r in output.replicates)
    manifest = dict(output.manifest)
    manifest["faux_label"] = text
    return replace(output, replicates=reps, manifest=manifest)


def apply_sdc(observed: DataTable, output: SynthesisOutput, policy: SdcPolicy) -> SynthesisOutput:
    """Top-code, remove replicated uniques (when keys are given), then label."""
    policy.validate(observed.schema)
    reps = []
    report = {}
    for l, rep in enumerate(output.replicates, start=1):
        rep = strip_label(rep)
        entry = {}
        if policy.topcode:
            rep, entry["topcoded"] = top_bottom_code(rep, policy)
        if policy.key_variables:
            rep, r = remove_replicated_uniques(observed, rep, policy.key_variables)
            entry.update(r)
        report[str(l)] = entry
        reps.append(rep)
    manifest = dict(output.manifest)
    manifest["sdc"] = {
        "key_variables": list(policy.key_variables),
        "unique_removal": "applied" if policy.key_variables else "skipped (no keys)",
        "topcode": {k: list(v) for k, v in policy.topcode.items()},
        "replicates": report,
    }
    return label_faux(replace(output, replicates=tuple(reps), manifest=manifest), policy.label_text)


def write_manifest(manifest: dict, path, label: str | None):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        if label:
            fh.write(f"# {label}\n")
        yaml.safe_dump(_plain(manifest), fh, sort_keys=False, default_flow_style=False)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def write_output(output: SynthesisOutput, out_dir, stem: str = "synthetic") -> list:
    """Write labelled replicates ``{stem}_{l}.csv`` plus ``{stem}_manifest.yaml``."""
    label = output.manifest.get("faux_label")
    if not label:
        raise SdcError("synthetic output must be labelled before it is written")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for l, rep in enumerate(output.replicates, start=1):
        p = out_dir / f"{stem}_{l}.csv"
        write_csv(rep, p, comment=label)
        paths.append(p)
    m = out_dir / f"{stem}_manifest.yaml"
    manifest = dict(output.manifest)
    manifest["files"] = [p.name for p in paths]
    write_manifest(manifest, m, label)
    return paths + [m]
