"""Command-line front end: ``svfield <experiment> --config PATH``."""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .clusters import RULES
from .clusters_limits import LimitTestSpec, collect_counts, halves, poisson_limit_test, rule_agreement
from .config import EXPERIMENTS, ConfigError, ExperimentConfig
from .estimators import estimate_all, empirical_spectral_measure, run_plan
from .geometry import approximation_ratio
from .lattice_sim import simulate_garch, simulate_ma, simulate_y
from .theory import (breiman_constant, garch_eta, garch_tail_index, ma_eta_report, ma_extremal_index)

EXIT_OK, EXIT_CONFIG, EXIT_STRICT = 0, 2, 3


def _clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def write_csv(path: str, rows: list, columns=None) -> None:
    columns = columns or list(dict.fromkeys(k for row in rows for k in row))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(_clean(rows))


# experiments; each returns (outputs, csv tables, passed or None)

def _theory_eta(cfg: ExperimentConfig):
    """Reference eta for the configured model (closed form for moving averages)."""
    kernel, ymodel = cfg.kernel(), cfg.ymodel()
    p = cfg.plan_section
    if "eta" in p:
        return float(p["eta"])
    if kernel is not None:
        tail = cfg.tail()
        return ma_extremal_index(kernel, ymodel, tail.alpha, tail.p_xi, int(p.get("samples", 100_000)),
                                 cfg.seed).eta
    m = cfg.ms((50,))[-1]
    est = garch_eta(cfg.garch(), ymodel, cfg.K, m, int(p.get("samples", 200_000)), cfg.seed,
                    literal_exponent=bool(p.get("literal_exponent", False)))
    return {k: v.value for k, v in est.items()} if isinstance(est, dict) else est.value


def run_simulate(cfg: ExperimentConfig, out: str):
    plan = cfg.replication_plan()
    geom, w = plan.geometry, plan.window
    rows, summary = [], []
    for r in range(int(cfg.plan_section.get("export_replications", 1))):
        if plan.kernel is not None:
            z = simulate_ma(plan.kernel, plan.tail, w, plan.seed, r)
        else:
            z = simulate_garch(plan.garch, w.size, plan.burn_in, plan.seed, r, start=w.lo[0])
        y = simulate_y(plan.ymodel, w, plan.seed, r)
        x = y.values * z.values
        inner = x[w.slices(geom.bbox)][geom.mask]
        summary.append({"replication": r, "regime": y.regime, "max": float(inner.max()),
                        "mean_abs": float(np.abs(inner).mean())})
        sites = w.sites()
        for site, yv, zv, xv in zip(sites.tolist(), y.values.ravel(), z.values.ravel(), x.ravel()):
            row = {"replication": r}
            row.update({f"v{i}": c for i, c in enumerate(site)})
            row.update(y=float(yv), z=float(zv), x=float(xv))
            rows.append(row)
    outputs = {"window": {"lo": list(w.lo), "hi": list(w.hi)}, "n_sites": geom.size, "rows": summary}
    return outputs, {"field": rows}, None


def run_eta_theory(cfg: ExperimentConfig, out: str):
    p = cfg.plan_section
    ymodel = cfg.ymodel()
    samples = int(p.get("samples", 100_000))
    kernel = cfg.kernel()
    if kernel is not None:
        tail = cfg.tail()
        report = ma_eta_report(kernel, ymodel, tail.alpha, tail.p_xi, cfg.ms(), samples, cfg.seed)
        outputs = report.to_dict()
        outputs["rows"] = report.sweep
        return outputs, {"sweep": report.sweep}, None
    params = cfg.garch()
    index = garch_tail_index(params)
    literal = bool(p.get("literal_exponent", False))
    kappa = index.alpha_hat if literal else index.rv_index
    rows = []
    for m in cfg.ms((1, 2, 5, 10, 20, 50)):
        est = garch_eta(params, ymodel, cfg.K, m, samples, cfg.seed, index.alpha_hat, literal)
        items = est.items() if isinstance(est, dict) else [(None, est)]
        rows.extend({"m": m, "regime": k, "eta": e.value, "se": e.se} for k, e in items)
    last = [r for r in rows if r["m"] == rows[-1]["m"]]
    breiman = breiman_constant(ymodel, kappa, 1.0).value
    outputs = {"alpha_hat": index.alpha_hat, "kappa": kappa, "breiman_const": breiman,
               "eta": {str(r["regime"]): r["eta"] for r in last} if ymodel.kind == "regime" else last[0]["eta"],
               "rows": rows}
    if ymodel.kind != "regime":
        outputs["theta"] = last[0]["eta"] / breiman
    return outputs, {"sweep": rows}, None


def _agree(a: dict, b: dict) -> bool:
    return abs(a["estimate"] - b["estimate"]) <= 3 * math.hypot(a["se"], b["se"])


def run_eta_estimate(cfg: ExperimentConfig, out: str):
    plan = cfg.replication_plan()
    run = run_plan(plan)
    table = estimate_all(run)
    checks = []
    for row in table.rows:
        if row["estimator"] != "blocks":
            continue
        runs = table.get("runs", row["x"], row["regime"])
        checks.append({"x": row["x"], "regime": row["regime"], "blocks": row["estimate"],
                       "runs": runs["estimate"], "agree": _agree(row, runs)})
    outputs = {"a_n": run.a_n, "norming": run.norming.to_dict(), "rows": table.rows,
               "theory_eta": _theory_eta(cfg), "checks": checks}
    return outputs, {"estimates": table.rows}, all(c["agree"] for c in checks)


def run_spectral(cfg: ExperimentConfig, out: str):
    plan = cfg.replication_plan()
    p = cfg.plan_section
    m = cfg.ms((1,))[0]
    fit = empirical_spectral_measure(plan, m, float(p.get("quantile", 0.999)))
    rows = [{"atom": i, "vector": " ".join(f"{v:.6g}" for v in vec), "theoretical": w, "empirical": e}
            for i, (vec, w, e) in enumerate(zip(fit.atoms.vectors, fit.atoms.weights, fit.empirical))]
    outputs = fit.to_dict()
    outputs["rows"] = rows
    return outputs, {"atoms": rows}, fit.tv < 0.05


def _regions(cfg: ExperimentConfig, geom):
    kind = cfg.plan_section.get("regions", "both")
    whole = [geom.shape]
    if kind == "whole":
        return whole
    if geom.shape.kind != "box" or len(geom.shape.boxes) != 1 or geom.shape.volume != 1.0:
        raise ConfigError("plan.regions 'halves' needs the unit box as C")
    if kind == "halves":
        return halves(geom.d)
    if kind == "both":
        return whole + halves(geom.d)
    raise ConfigError(f"plan.regions must be whole, halves or both; got {kind!r}")


def run_clusters(cfg: ExperimentConfig, out: str):
    plan = cfg.replication_plan()
    regions = _regions(cfg, plan.geometry)
    if len(regions) == 2:
        regions = [plan.geometry.shape] + regions
    x = float(cfg.plan_section.get("x", 1.0))
    sample = collect_counts(plan, regions, x)
    dump = []
    for r in range(plan.replications):
        for rule in RULES:
            c = sample.counts[rule][r]
            row = {"replication": r, "rule": rule, "gamma": int(c[0])}
            row.update({f"region{g}": int(v) for g, v in enumerate(c)})
            dump.append(row)
    spec = LimitTestSpec(plan, regions, 1.0, x=x)
    agreement = rule_agreement(spec, sample)
    outputs = {"a_n": sample.a_n, "agreement": agreement.to_dict(),
               "mean_counts": {rule: sample.counts[rule].mean(axis=0).tolist() for rule in RULES},
               "rows": [{"rule": rule, "region": g, "mean": float(v)} for rule in RULES
                        for g, v in enumerate(sample.counts[rule].mean(axis=0))]}
    return outputs, {"clusters": dump}, not agreement.violations


def run_limit_test(cfg: ExperimentConfig, out: str):
    plan = cfg.replication_plan()
    p = cfg.plan_section
    regions = _regions(cfg, plan.geometry)
    x = float(p.get("x", 1.0))
    alpha = cfg.tail().alpha if plan.kernel is not None else plan_index(cfg)
    eta = _theory_eta(cfg)
    spec = LimitTestSpec(plan, regions, alpha, eta, x=x)
    rules = tuple(p.get("rules", list(RULES)))
    sample = collect_counts(plan, regions, x, rules)
    reports = [rep for rule in rules for rep in poisson_limit_test(spec, rule, sample)]
    rows = [{"rule": rep.rule, "stratum": rep.stratum, **{k: v for k, v in reg.to_dict().items() if k != "gof"},
             "dispersion": reg.gof.dispersion if reg.gof else None,
             "p_value": reg.gof.p_value if reg.gof else None}
            for rep in reports for reg in rep.regions]
    outputs = {"eta": eta, "alpha": alpha, "a_n": sample.a_n, "reports": [r.to_dict() for r in reports],
               "rows": rows}
    return outputs, {"limit_test": rows}, all(r.passed for r in reports)


def plan_index(cfg: ExperimentConfig) -> float:
    return garch_tail_index(cfg.garch()).rv_index


def run_garch_index(cfg: ExperimentConfig, out: str):
    mc = cfg.plan_section.get("mc_samples")
    idx = garch_tail_index(cfg.garch(), samples=mc, seed=cfg.seed)
    outputs = idx.to_dict()
    ok = idx.residual < 1e-6
    if mc:
        ok = ok and abs(idx.mc_alpha - idx.alpha_hat) <= 3 * idx.mc_se
    outputs["rows"] = [{"alpha_hat": idx.alpha_hat, "residual": idx.residual, "mc_alpha": idx.mc_alpha,
                        "mc_se": idx.mc_se}]
    return outputs, {}, ok


def run_geometry_check(cfg: ExperimentConfig, out: str):
    g = cfg.section("geometry")
    schedule = g.get("schedule") or [g.get("t_n")]
    if schedule == [None]:
        raise ConfigError("[geometry] needs t_n or schedule")
    shape = cfg.shape()
    rows = []
    for t in schedule:
        geom = cfg.geometry(t_n=t)
        row = geom.diagnostics_row()
        row.pop("n")
        row.update(t_n=list(geom.t_n), ratio=approximation_ratio(geom),
                   count_over_volume=geom.size / (shape.volume * math.prod(geom.c_n)))
        rows.append(row)
    return {"rows": rows}, {"geometry": rows}, None


RUNNERS = {"simulate": run_simulate, "eta-theory": run_eta_theory, "eta-estimate": run_eta_estimate,
           "spectral": run_spectral, "clusters": run_clusters, "limit-test": run_limit_test,
           "garch-index": run_garch_index, "geometry-check": run_geometry_check}


def execute(cfg: ExperimentConfig, out: str | None = None) -> dict:
    """Run ``cfg`` and return its result record; tables are written under ``out``."""
    out = out or cfg.out
    os.makedirs(out, exist_ok=True)
    start = time.perf_counter()
    outputs, tables, passed = RUNNERS[cfg.experiment](cfg, out)
    files = []
    for name, rows in tables.items():
        if rows:
            path = os.path.join(out, f"{cfg.experiment}-{name}.csv")
            write_csv(path, rows)
            files.append(os.path.basename(path))
    return _clean({"experiment": cfg.experiment, "version": __version__, "config": cfg.to_dict(),
                   "threads": cfg.threads, "outputs": outputs, "passed": passed, "tables": files,
                   "wall_clock_s": time.perf_counter() - start})


def report_merge(records: list) -> list:
    """One table of ``outputs.rows`` across records that share an experiment kind."""
    if not records:
        raise ValueError("no result records to merge")
    kinds = {r["experiment"] for r in records}
    if len(kinds) > 1:
        raise ValueError(f"cannot merge mixed experiment kinds: {sorted(kinds)}")
    merged = []
    for i, rec in enumerate(records):
        for row in rec["outputs"].get("rows", []):
            merged.append({"record": i, "seed": rec["config"].get("seed", 0), **row})
    return merged


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svfield", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--reps", type=int, help="override plan.replications")
        p.add_argument("--threads", type=int)
        p.add_argument("--out", help="output directory (default: config 'out' or ./results)")
        p.add_argument("--strict", action="store_true", help="exit 3 when a statistical check fails")
    p = sub.add_parser("report-merge", help="merge result records into one table")
    p.add_argument("records", nargs="*")
    p.add_argument("--out", default=".")
    return parser


def _load(args) -> ExperimentConfig:
    with open(args.config, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{args.config}: {exc}") from exc
    kind = data.setdefault("experiment", args.command)
    if kind != args.command:
        raise ConfigError(f"config experiment '{kind}' does not match subcommand '{args.command}'")
    cfg = ExperimentConfig(data)
    return cfg.with_overrides(args.seed, args.reps, args.threads, args.out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report-merge":
        try:
            records = []
            for path in args.records:
                with open(path, encoding="utf-8") as fh:
                    records.append(json.load(fh))
            rows = report_merge(records)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        os.makedirs(args.out, exist_ok=True)
        if rows:
            write_csv(os.path.join(args.out, "merged.csv"), rows)
        with open(os.path.join(args.out, "merged.json"), "w") as fh:
            json.dump(_clean({"experiment": records[0]["experiment"], "rows": rows}), fh, indent=2)
        print(f"merged {len(records)} records, {len(rows)} rows")
        return EXIT_OK
    try:
        cfg = _load(args)
        record = execute(cfg)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    path = os.path.join(cfg.out, f"{cfg.experiment}.json")
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2)
    status = {True: "pass", False: "FAIL", None: "n/a"}[record["passed"]]
    print(f"{cfg.experiment}: checks {status}; record written to {path}")
    if args.strict and record["passed"] is False:
        return EXIT_STRICT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
