"""Command-line pipeline with file-based handoff between stages.

Each subcommand reads the declared inputs, writes its outputs with fixed
names under --output-dir, and drops a machine-readable run manifest next to
them (input hashes, resolved config, row counts, wall time). Data outputs
are byte-identical across re-runs on the same inputs and config; the
manifest itself carries the wall time and is not.

Exit codes: 0 success, 1 data error, 2 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import complexity, gravity, ingest, oracle, relatedness
from .errors import TradeDataError

log = logging.getLogger(__name__)

DEFAULT_PERIODS = gravity.DEFAULT_PERIODS


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, command, inputs, config, outputs, row_counts, started):
    config_json = json.dumps(config, sort_keys=True)
    manifest = {
        "command": command,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "config": config,
        "config_hash": hashlib.sha256(config_json.encode()).hexdigest(),
        "outputs": {str(p): _sha256(p) for p in outputs},
        "row_counts": row_counts,
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    path = Path(out_dir) / f"{command}_manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _parse_period(text):
    try:
        start, end = text.split("-")
        return int(start), int(end)
    except ValueError:
        raise argparse.ArgumentTypeError(f"period must look like 2000-2006, got {text!r}")


def _parse_periods(text):
    return tuple(_parse_period(part) for part in text.split(","))


def _load_config_file(args):
    """Overlay config-file values onto parser defaults; explicit flags win."""
    if not getattr(args, "config", None):
        return args
    with open(args.config, encoding="utf-8") as fh:
        values = json.load(fh)
    for key, value in values.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise TradeDataError(f"unknown config key {key!r}")
        if attr in args._explicit:
            continue
        if attr in ("period", "window", "years") and isinstance(value, str):
            value = _parse_period(value)
        elif attr == "periods" and isinstance(value, str):
            value = _parse_periods(value)
        setattr(args, attr, value)
    return args


class _TrackingParser(argparse.ArgumentParser):
    """Remembers which destinations were set explicitly on the command line."""

    def parse_args(self, argv=None, namespace=None):
        ns = super().parse_args(argv, namespace)
        sentinel = argparse.Namespace()
        for action in self._get_all_actions():
            setattr(sentinel, action.dest, None)
        explicit = set()
        seen = super().parse_known_args(argv, argparse.Namespace(**vars(sentinel)))[0]
        for key, value in vars(seen).items():
            if value is not None:
                explicit.add(key)
        ns._explicit = explicit
        return ns

    def _get_all_actions(self):
        actions = list(self._actions)
        for action in self._actions:
            if isinstance(action, argparse._SubParsersAction):
                for sub in action.choices.values():
                    actions.extend(sub._actions)
        return actions


def _tensor_and_dyads(args):
    tensor = ingest.read_tensor_csv(args.trade)
    dyads = ingest.DyadMeta.from_csv(args.dyad_csv)
    return tensor, dyads


def cmd_ingest(args):
    started = time.perf_counter()
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    records, rejects = ingest.load_trade_csv(args.trade)
    tensor, audit = ingest.reconcile(records, policy=args.policy)
    removed = {}
    inputs = [args.trade]
    if args.filter:
        if not args.country_csv:
            raise TradeDataError("--filter needs --country-csv for population data")
        meta = ingest.CountryMeta.from_csv(args.country_csv)
        inputs.append(args.country_csv)
        rules = ingest.FilterConfig(
            min_population=args.min_population,
            min_trade_value=args.min_trade,
            trade_year=args.trade_year,
            population_year=args.population_year,
            exclude=tuple(args.exclude.split(",")) if args.exclude else ())
        tensor, removed = ingest.filter_countries(tensor, meta, rules)
    reconciled = out / "reconciled.csv"
    rejects_path = out / "rejects.csv"
    ingest.write_tensor_csv(tensor, reconciled)
    ingest.write_rejects_report(rejects, rejects_path)
    config = {
        "policy": str(args.policy), "filter": bool(args.filter),
        "min_population": args.min_population, "min_trade": args.min_trade,
        "trade_year": args.trade_year, "population_year": args.population_year,
        "exclude": args.exclude,
    }
    counts = {
        "records": len(records), "rejects": len(rejects),
        "cells": sum(tensor.n_cells(y) for y in tensor.years),
        "countries": tensor.n_countries, "products": tensor.n_products,
        "removed_countries": len(removed),
        "audit": {"exporter_only": audit.exporter_only,
                  "importer_only": audit.importer_only,
                  "both_agree": audit.both_agree,
                  "both_discrepant": audit.both_discrepant},
    }
    _write_manifest(out, "ingest", inputs, config, [reconciled, rejects_path],
                    counts, started)
    return 0


def cmd_rca(args):
    started = time.perf_counter()
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensor = ingest.read_tensor_csv(args.trade)
    window = args.window if args.window else (tensor.years[0], tensor.years[-1])
    rca = complexity.compute_rca(tensor, window)
    path = out / "rca.csv"
    complexity.write_rca_csv(rca, path)
    _write_manifest(out, "rca", [args.trade],
                    {"window": list(window)},
                    [path], {"countries": len(rca.countries),
                             "products": len(rca.products)}, started)
    return 0


def cmd_proximity(args):
    started = time.perf_counter()
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensor = ingest.read_tensor_csv(args.trade)
    window = args.window if args.window else (tensor.years[0], tensor.years[-1])
    rca = complexity.compute_rca(tensor, window)
    prox = complexity.compute_proximity(complexity.binarize(rca, args.rca_threshold))
    edges = out / "proximity.csv"
    hist = out / "proximity_histogram.csv"
    n_edges, n_pairs = complexity.export_product_space(prox, args.cutoff, edges, hist,
                                                       bins=args.bins)
    config = {"window": list(window), "rca_threshold": args.rca_threshold,
              "cutoff": args.cutoff, "bins": args.bins}
    _write_manifest(out, "proximity", [args.trade], config, [edges, hist],
                    {"edges": n_edges, "pairs": n_pairs}, started)
    return 0


def cmd_relatedness(args):
    started = time.perf_counter()
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensor, dyads = _tensor_and_dyads(args)
    prox = complexity.read_proximity_csv(args.proximity, tensor.products)
    weights = relatedness.DistanceWeights.from_dyads(tensor.countries, dyads)
    years = range(args.years[0], args.years[1] + 1) if args.years else tensor.years
    values = []
    rows = 0
    for year in years:
        if not tensor.has_year(year):
            continue
        rel = relatedness.compute_relatedness(tensor, prox, weights, year,
                                              threads=args.threads)
        values.append(rel)
        rows += rel.n
    path = out / "relatedness.csv"
    dropped = relatedness.write_relatedness_csv(values, path)
    config = {"years": list(args.years) if args.years else None, "threads": args.threads}
    _write_manifest(out, "relatedness", [args.trade, args.proximity, args.dyad_csv],
                    config, [path], {"cells": rows, "dropped_undefined": dropped},
                    started)
    return 0


def _build_period_dataset(tensor, rel_by_year, meta, dyads, period, args):
    return gravity.build_dataset(tensor, rel_by_year, meta, dyads, period,
                                 horizon=args.horizon, zeros=args.zeros)


def cmd_gravity(args):
    started = time.perf_counter()
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensor, dyads = _tensor_and_dyads(args)
    meta = ingest.CountryMeta.from_csv(args.country_csv)
    rel_by_year = relatedness.read_relatedness_csv(args.relatedness, tensor.countries,
                                                   tensor.products)
    inputs = [args.trade, args.relatedness, args.country_csv, args.dyad_csv]

    outputs = []
    if args.split == "period":
        periods = args.periods or DEFAULT_PERIODS
        results = {}
        for period in periods:
            ds = _build_period_dataset(tensor, rel_by_year, meta, dyads, period, args)
            cell = gravity.run_split_regressions(
                ds, "none", standardize_response=args.standardize_response,
                threads=args.threads)
            if "all" in cell:
                results[f"{period[0]}-{period[1]}"] = cell["all"]
        config_periods = [list(p) for p in periods]
    else:
        period = args.period or (tensor.years[0], tensor.years[-1])
        ds = _build_period_dataset(tensor, rel_by_year, meta, dyads, period, args)
        config_periods = [list(period)]
        if args.split == "none":
            results = gravity.run_split_regressions(
                ds, "none", standardize_response=args.standardize_response,
                threads=args.threads)
        elif args.split == "exporter":
            rca = complexity.compute_rca(tensor, (args.rca_year or period[0],
                                                  args.rca_year or period[0]))
            results = gravity.run_split_regressions(
                ds, "exporter", rca=rca,
                new_threshold=args.rca_new, experienced_threshold=args.rca_experienced,
                standardize_response=args.standardize_response, threads=args.threads)
        elif args.split == "lall":
            if not args.concordance:
                raise TradeDataError("--split lall needs --concordance")
            concordance = gravity.LallConcordance.from_csv(args.concordance)
            inputs.append(args.concordance)
            results = gravity.run_split_regressions(
                ds, "lall", concordance=concordance,
                standardize_response=args.standardize_response, threads=args.threads)
        else:
            raise TradeDataError(f"unknown split {args.split!r}")

    if not results:
        raise TradeDataError("no split cell was large enough to fit")
    json_path = out / f"gravity_{args.split}.json"
    csv_path = out / f"gravity_{args.split}.csv"
    gravity.write_results_json(results, json_path)
    gravity.write_results_csv(results, csv_path)
    outputs += [json_path, csv_path]
    if args.split == "lall" and len(results) == 5:
        trends = gravity.trend_over_lall(results)
        trend_path = out / "trend_lall.csv"
        gravity.write_trend_csv(trends, trend_path)
        outputs.append(trend_path)
    config = {
        "split": args.split, "periods": config_periods, "horizon": args.horizon,
        "zeros": args.zeros, "standardize_response": args.standardize_response,
        "rca_year": args.rca_year, "rca_new": args.rca_new,
        "rca_experienced": args.rca_experienced, "threads": args.threads,
    }
    counts = {key: res.n for key, res in sorted(results.items())}
    _write_manifest(out, "gravity", inputs, config, outputs, counts, started)
    return 0


def cmd_summary(args):
    started = time.perf_counter()
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensor, dyads = _tensor_and_dyads(args)
    meta = ingest.CountryMeta.from_csv(args.country_csv)
    rel_by_year = relatedness.read_relatedness_csv(args.relatedness, tensor.countries,
                                                   tensor.products)
    period = args.period or (tensor.years[0], tensor.years[-1])
    ds = _build_period_dataset(tensor, rel_by_year, meta, dyads, period, args)
    z, _ = gravity.standardize(ds, standardize_response=args.standardize_response)
    stats_path = out / "summary_stats.csv"
    corr_path = out / "correlation_matrix.csv"
    gravity.write_summary_csv(gravity.summary_stats(z), stats_path)
    names, corr = gravity.correlation_matrix(z)
    gravity.write_correlation_csv(names, corr, corr_path)
    config = {"period": list(period), "horizon": args.horizon, "zeros": args.zeros,
              "standardize_response": args.standardize_response}
    _write_manifest(out, "summary",
                    [args.trade, args.relatedness, args.country_csv, args.dyad_csv],
                    config, [stats_path, corr_path], {"rows": ds.n}, started)
    return 0


def cmd_trend(args):
    started = time.perf_counter()
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = gravity.read_results_json(args.input)
    trends = gravity.trend_over_lall(results)
    path = out / "trend.csv"
    gravity.write_trend_csv(trends, path)
    _write_manifest(out, "trend", [args.input], {}, [path],
                    {"variables": len(trends)}, started)
    return 0


def cmd_synth(args):
    started = time.perf_counter()
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    planted = None
    if args.planted_beta:
        planted = np.array([float(v) for v in args.planted_beta.split(",")])
    config = oracle.SyntheticWorldConfig(
        n_countries=args.countries, n_products=args.products, n_years=args.years,
        start_year=args.start_year, planted_beta=planted,
        noise_sigma=args.noise_sigma, sparsity=args.sparsity, seed=args.seed,
        forward_mode=args.forward_mode)
    world = oracle.generate_world(config)
    trade_path = out / "trade.csv"
    country_path = out / "country.csv"
    dyad_path = out / "dyad.csv"
    _write_raw_trade_csv(world.tensor, trade_path)
    world.country_meta.write_csv(country_path)
    world.dyad_meta.write_csv(dyad_path)
    manifest_cfg = {
        "countries": args.countries, "products": args.products, "years": args.years,
        "start_year": args.start_year, "sparsity": args.sparsity, "seed": args.seed,
        "noise_sigma": args.noise_sigma, "forward_mode": args.forward_mode,
        "planted_beta": list(map(float, planted)) if planted is not None else None,
        "proximity_window": list(world.proximity_window),
    }
    counts = {"cells": sum(world.tensor.n_cells(y) for y in world.tensor.years)}
    _write_manifest(out, "synth", [], manifest_cfg,
                    [trade_path, country_path, dyad_path], counts, started)
    return 0


def _write_raw_trade_csv(tensor, path):
    """Emit the raw single-reporter trade CSV that the ingest stage expects."""
    import csv as _csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = _csv.writer(fh)
        w.writerow(list(ingest.TRADE_COLUMNS))
        for year in tensor.years:
            o, p, d, v = tensor.flows(year)
            for i in range(o.size):
                w.writerow([year, tensor.countries[o[i]], tensor.countries[d[i]],
                            tensor.products[p[i]], repr(float(v[i])), "exporter"])


def build_parser():
    parser = _TrackingParser(prog="tradegravity",
                             description="Trade relatedness and gravity pipeline")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--output-dir", "-o", default=".")
        p.add_argument("--config", help="JSON config file; explicit flags override it")

    p = sub.add_parser("ingest", help="parse, reconcile, and filter raw trade flows")
    common(p)
    p.add_argument("--trade", required=True, help="raw trade CSV")
    p.add_argument("--country-csv", help="code,year,population,gdp_per_capita CSV")
    p.add_argument("--policy", default="importer",
                   choices=[po.value for po in ingest.ReconcilePolicy])
    p.add_argument("--filter", action="store_true",
                   help="apply the population/trade/exclusion country filters")
    p.add_argument("--min-population", type=float, default=1.2e6)
    p.add_argument("--min-trade", type=float, default=1e9)
    p.add_argument("--trade-year", type=int, default=2008)
    p.add_argument("--population-year", type=int, default=None)
    p.add_argument("--exclude", default="IRQ,TCD,MAC")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("rca", help="revealed comparative advantage over a window")
    common(p)
    p.add_argument("--trade", required=True, help="reconciled trade CSV")
    p.add_argument("--window", type=_parse_period, default=None,
                   help="inclusive year window, e.g. 2000-2015 (default: all years)")
    p.set_defaults(func=cmd_rca)

    p = sub.add_parser("proximity", help="product-space proximity matrix")
    common(p)
    p.add_argument("--trade", required=True, help="reconciled trade CSV")
    p.add_argument("--window", type=_parse_period, default=None)
    p.add_argument("--rca-threshold", type=float, default=1.0)
    p.add_argument("--cutoff", type=float, default=0.0)
    p.add_argument("--bins", type=int, default=50)
    p.set_defaults(func=cmd_proximity)

    p = sub.add_parser("relatedness", help="the three relatedness measures per cell")
    common(p)
    p.add_argument("--trade", required=True, help="reconciled trade CSV")
    p.add_argument("--proximity", required=True, help="proximity edge CSV")
    p.add_argument("--dyad-csv", required=True)
    p.add_argument("--years", type=_parse_period, default=None,
                   help="inclusive year range (default: all years)")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_relatedness)

    def gravity_common(p):
        common(p)
        p.add_argument("--trade", required=True, help="reconciled trade CSV")
        p.add_argument("--relatedness", required=True)
        p.add_argument("--country-csv", required=True)
        p.add_argument("--dyad-csv", required=True)
        p.add_argument("--period", type=_parse_period, default=None)
        p.add_argument("--horizon", type=int, default=2)
        p.add_argument("--zeros", default="drop", choices=["drop", "log1p"])
        p.add_argument("--standardize-response", action="store_true")
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("gravity", help="fit the pooled two-year-ahead model")
    gravity_common(p)
    p.add_argument("--split", default="none",
                   choices=["none", "period", "exporter", "lall"])
    p.add_argument("--periods", type=_parse_periods, default=None,
                   help='comma list for --split period, e.g. "2000-2006,2007-2012"')
    p.add_argument("--concordance", help="hs4,sitc3,category CSV for --split lall")
    p.add_argument("--rca-year", type=int, default=None,
                   help="classification RCA year (default: period start)")
    p.add_argument("--rca-new", type=float, default=0.2)
    p.add_argument("--rca-experienced", type=float, default=1.0)
    p.set_defaults(func=cmd_gravity)

    p = sub.add_parser("summary", help="summary statistics and correlation matrix")
    gravity_common(p)
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("trend", help="sophistication trend test over lall results")
    common(p)
    p.add_argument("--input", required=True, help="gravity_lall.json")
    p.set_defaults(func=cmd_trend)

    p = sub.add_parser("synth", help="generate a synthetic world in ingest formats")
    common(p)
    p.add_argument("--countries", type=int, default=8)
    p.add_argument("--products", type=int, default=12)
    p.add_argument("--years", type=int, default=3)
    p.add_argument("--start-year", type=int, default=2000)
    p.add_argument("--sparsity", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--forward-mode", default="planted", choices=["planted", "persist"])
    p.add_argument("--planted-beta", default=None,
                   help="16 comma-separated values, intercept first")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level))
    try:
        args = _load_config_file(args)
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return 1
    except TradeDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
