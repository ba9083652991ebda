"""Command-line front end: ``seqsynth {synth,analyze,compare,simulate,sdc} --config FILE``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .combine import EstimatorError, ModelError, analyze_synthetic
from .config import ConfigError, RunConfig, load_config
from .engine import PlanError, SynthesisOutput, synthesize, synthesize_stratified
from .fitgen import FitError
from .rules import RuleError
from .sdc import SdcError, apply_sdc, label_faux, write_manifest, write_output
from .simlab import (RatioStudyConfig, SrsSimConfig, StratSimConfig, interaction_shrinkage, run_ratio_study,
                     run_srs_simulation, run_stratified_simulation, write_report, write_table)
from .simlab.stratified import config as strat_config
from .tabular import CSVFormatError, SchemaError, parse_csv
from .utility import ComparisonError, compare_coefficients, compare_marginals, write_rows

OUT_ENV = "SEQSYNTH_OUT_DIR"
DEFAULT_OUT = "seqsynth_out"


def _out_dir(args) -> Path:
    d = Path(args.out_dir or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _read_replicates(cfg: RunConfig, files) -> list:
    return [parse_csv(f, cfg.schema) for f in files]


def cmd_synth(cfg: RunConfig, out: Path, threads: int) -> list:
    observed = parse_csv(cfg.data, cfg.schema)
    if cfg.stratified:
        output = synthesize_stratified(observed, cfg.plan, sizes=cfg.strata_sizes, threads=threads)
    else:
        output = synthesize(observed, cfg.plan, threads=threads)
    if cfg.sdc.key_variables or cfg.sdc.topcode:
        output = apply_sdc(observed, output, cfg.sdc)
    else:
        output = label_faux(output, cfg.sdc.label_text)
    return write_output(output, out, "synthetic")


def cmd_sdc(cfg: RunConfig, out: Path, threads: int) -> list:
    observed = parse_csv(cfg.data, cfg.schema)
    reps = _read_replicates(cfg, cfg.sdc_replicates)
    manifest = {"inputs": [Path(f).name for f in cfg.sdc_replicates]}
    output = apply_sdc(observed, SynthesisOutput(tuple(reps), manifest), cfg.sdc)
    return write_output(output, out, "sdc")


def cmd_analyze(cfg: RunConfig, out: Path, threads: int) -> list:
    a = cfg.analysis
    reps = _read_replicates(cfg, a["replicates"])
    k = reps[0].n_rows
    n = a["n"] if a["n"] is not None else k
    res = analyze_synthetic(reps, a["model"], a["estimator"], k=k, n=n, ci_level=a["ci_level"], DE=a["DE"])
    p = write_rows(res.rows(), out / "analysis.csv")
    warnings = list(res.notes)
    for r in res.rows():
        if r["flags"]:
            warnings.append(f"{r['coefficient']}: {r['flags']}")
    manifest = {
        "command": "analyze",
        "replicates": [Path(f).name for f in a["replicates"]],
        "formula": a["model"].formula,
        "family": a["model"].family,
        "estimator": a["estimator"],
        "ci_level": a["ci_level"],
        "M": len(reps),
        "k": k,
        "n": n,
        "DE": a["DE"],
        "warnings": warnings,
    }
    m = out / "analysis_manifest.yaml"
    write_manifest(manifest, m, None)
    return [p, m]


def _slug(text: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in text).strip("_")


def cmd_compare(cfg: RunConfig, out: Path, threads: int) -> list:
    c = cfg.compare
    observed = parse_csv(cfg.data, cfg.schema)
    reps = _read_replicates(cfg, c["replicates"])
    paths = []
    for v in c["variables"]:
        mc = compare_marginals(observed, reps, v, bins=c["bins"], width=c["width"].get(v))
        paths.append(write_rows(mc.rows(), out / f"marginal_{_slug(v)}.csv"))
    for i, model in enumerate(c["models"], start=1):
        cc = compare_coefficients(observed, reps, model)
        paths.append(write_rows(cc.rows(), out / f"coefficients_{i}.csv",
                                comment=f"{model.formula}; bias test is a z-test on scale SE_obs*sqrt(1/M+1)"))
    return paths


def cmd_simulate(cfg: RunConfig, out: Path, threads: int) -> list:
    study = cfg.simulation["study"]
    s = dict(cfg.simulation["settings"])
    paths = []
    manifest = {"command": "simulate", "study": study}
    if study in ("srs", "stratified"):
        if study == "srs":
            rep = run_srs_simulation(SrsSimConfig(**s), threads=threads)
        else:
            number = s.pop("configuration", None)
            if "n_h" in s:
                s["n_h"] = tuple(s["n_h"])
            sc = strat_config(number, **s) if number else StratSimConfig(**s)
            rep = run_stratified_simulation(sc)
        paths.append(write_report(rep, out / f"{study}_report.csv"))
        for q in ("mean", "coverage", "variance"):
            paths.append(write_table(rep, out / f"{study}_{q}.csv", q))
        manifest.update(config=dict(rep.config), truth=rep.truth.tolist(), extra=dict(rep.extra))
        neg = {a: s_.negative_fraction.tolist() for a, s_ in rep.arms.items() if s_.negative_fraction is not None}
        manifest["negative_TM_fraction"] = neg
    elif study == "ratio":
        res = run_ratio_study(RatioStudyConfig(**s))
        paths.append(write_rows(res.rows(), out / "ratio_study.csv", comment="NA: negative variance estimate"))
        manifest.update(config=res.config, grand_mean={e: res.grand_mean(e) for e in res.ratios})
    else:
        n_seeds = int(s.pop("n_seeds", 50))
        base = int(s.pop("seed", 0))
        rows = []
        for seed in range(base, base + n_seeds):
            shrink = interaction_shrinkage(seed, **s)
            rows.append({"seed": seed, "coefficients": int(shrink.size), "shrunk": int(shrink.sum())})
        paths.append(write_rows(rows, out / "interaction_study.csv"))
        total = sum(r["coefficients"] for r in rows)
        manifest.update(config={"n_seeds": n_seeds, "seed": base, **s},
                        shrinkage_rate=sum(r["shrunk"] for r in rows) / total if total else float("nan"))
    m = out / f"{study}_manifest.yaml"
    write_manifest(manifest, m, None)
    return paths + [m]


COMMANDS = {
    "synth": cmd_synth,
    "analyze": cmd_analyze,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
    "sdc": cmd_sdc,
}

_EXPECTED = (ConfigError, CSVFormatError, SchemaError, PlanError, RuleError, FitError, ModelError, EstimatorError,
             SdcError, ComparisonError, OSError, ValueError)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqsynth", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, metavar="PATH", help="YAML run configuration")
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("--out-dir", default=None, metavar="PATH",
                   help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--threads", type=int, default=1, help="worker cap for parallel steps")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("seqsynth: error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, args.command, seed=args.seed)
        paths = COMMANDS[args.command](cfg, _out_dir(args), args.threads)
    except _EXPECTED as e:
        print(f"seqsynth {args.command}: error: {e}", file=sys.stderr)
        return 1
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
