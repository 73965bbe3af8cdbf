"""Command-line entry point.

Subcommands: validate, nulls, bayes, pcselect, diagnose, experiment,
generate.  Every flag has a config-file equivalent (INI, section name =
subcommand, plus an optional [global] section); flags override config.
All randomness flows from --seed; results are independent of --threads.
Logs go to stderr, data to files or stdout.  Exit codes: 0 success,
2 partial failures (some cells/blocks failed but a report was written),
1 fatal error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys

import numpy as np

from . import __version__, bayes, diagnostics, experiments, pcselect, solvers
from .data import DataError, load_matrix, load_series, write_matrix
from .pseudoproxy import Ar1Params, gen_noise_matrix
from .seeding import Seed
from .validation import (MethodConfig, NullSpec, make_scheme, null_band,
                         null_distribution, rmse_profile, significance)

log = logging.getLogger("proxyrecon")

SUBCOMMANDS = ("validate", "nulls", "bayes", "pcselect", "diagnose",
               "experiment", "generate")


def _add_common(p):
    p.add_argument("--config", help="INI config file; flags override it")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--threads", type=int, default=1,
                   help="worker pool size (0 = auto); never changes results")
    p.add_argument("--output-dir",
                   default=os.environ.get("PROXYRECON_OUTPUT", "."),
                   help="bundle/report destination")
    p.add_argument("--log-level", default="INFO")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="proxyrecon",
        description="Stress-testing harness for proxy-based temperature "
                    "reconstruction methods")
    ap.add_argument("--version", action="version",
                    version=f"proxyrecon {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("validate", help="holdout RMSE profile of one method")
    _add_common(p)
    p.add_argument("--proxies", required=True)
    p.add_argument("--meta")
    p.add_argument("--target", required=True)
    p.add_argument("--method", default="lasso")
    p.add_argument("--lam", default="cv",
                   help="penalty: number, 'cv', or 'tingley'")
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--calibration", help="START:END (defaults to overlap)")
    p.add_argument("--block-length", type=int, default=30)
    p.add_argument("--mode", default="all",
                   choices=("all", "interpolated", "extrapolated"))
    p.add_argument("--output", help="report JSON path (default stdout)")

    p = sub.add_parser("nulls", help="null-benchmark bands and significance")
    _add_common(p)
    p.add_argument("--proxies", required=True)
    p.add_argument("--meta")
    p.add_argument("--target", required=True)
    p.add_argument("--method", default="lasso")
    p.add_argument("--lam", default="tingley")
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--null-kind", default="ar1",
                   choices=("white", "ar1", "ar1_empirical", "brownian"))
    p.add_argument("--phi", type=float, default=0.25)
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--calibration")
    p.add_argument("--block-length", type=int, default=30)
    p.add_argument("--mode", default="all",
                   choices=("all", "interpolated", "extrapolated"))
    p.add_argument("--output", help="report JSON path (default stdout)")

    p = sub.add_parser("bayes", help="Bayesian AR+PC backcast bundle")
    _add_common(p)
    p.add_argument("--target")
    p.add_argument("--proxies")
    p.add_argument("--meta")
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--ar-order", type=int, default=2)
    p.add_argument("--iterations", type=int, default=5000)
    p.add_argument("--burn-in", type=int, default=2500)
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--backcast-start", type=int, default=998)
    p.add_argument("--calibration-start", type=int, default=1850)
    p.add_argument("--calibration-end", type=int, default=1998)

    p = sub.add_parser("pcselect", help="PC retention criteria table")
    _add_common(p)
    p.add_argument("--eigenvalues", help="comma-separated, decreasing")
    p.add_argument("--matrix", help="proxy CSV to decompose instead")
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--output", help="table CSV path (default stdout)")

    p = sub.add_parser("diagnose", help="per-series summary statistics")
    _add_common(p)
    p.add_argument("--proxies", required=True)
    p.add_argument("--target")
    p.add_argument("--stat", default="lag1_autocorr",
                   choices=diagnostics.STAT_NAMES)
    p.add_argument("--block-length", type=int, default=10)
    p.add_argument("--n-boot", type=int, default=0,
                   help="bootstrap replicates (0 = skip)")
    p.add_argument("--output", help="table CSV path (default stdout)")

    p = sub.add_parser("experiment", help="run a packaged recipe")
    _add_common(p)
    p.add_argument("--recipe", required=True, choices=experiments.RECIPES)
    p.add_argument("--param", action="append", default=[],
                   metavar="KEY=VALUE", help="recipe parameter override")
    p.add_argument("--input", action="append", default=[],
                   metavar="NAME=PATH", help="named input CSV")

    p = sub.add_parser("generate", help="draw a pseudoproxy noise matrix")
    _add_common(p)
    p.add_argument("--kind", required=True,
                   choices=("white", "ar1", "brownian"))
    p.add_argument("--years", type=int, required=True)
    p.add_argument("--series", type=int, required=True)
    p.add_argument("--phi", type=float, default=0.25)
    p.add_argument("--start-year", type=int, default=1000)
    p.add_argument("--output", help="CSV path (default stdout)")
    return ap


def apply_config(args):
    """Fill defaults from the INI file for flags left at their defaults."""
    if not getattr(args, "config", None):
        return args
    cp = configparser.ConfigParser()
    read = cp.read(args.config)
    if not read:
        raise DataError(f"config file not found: {args.config}")
    parser = build_parser()
    # defaults of the active subparser, so we can tell "left at default"
    sub_actions = next(a for a in parser._actions
                       if isinstance(a, argparse._SubParsersAction))
    sp = sub_actions.choices[args.subcommand]
    defaults = {a.dest: a.default for a in sp._actions}
    for section in ("global", args.subcommand):
        if not cp.has_section(section):
            continue
        for key, value in cp.items(section):
            dest = key.replace("-", "_")
            if dest not in defaults:
                raise DataError(f"unknown config key {key!r} in [{section}]")
            if getattr(args, dest) == defaults[dest]:
                default = defaults[dest]
                if isinstance(default, bool):
                    value = cp.getboolean(section, key)
                elif isinstance(default, int):
                    value = int(value)
                elif isinstance(default, float):
                    value = float(value)
                setattr(args, dest, value)
    return args


def _parse_kv(pairs, what):
    out = {}
    for item in pairs:
        if "=" not in item:
            raise DataError(f"{what} must be KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _emit(payload, path, as_json=True):
    if path:
        with open(path, "w") as fh:
            if as_json:
                json.dump(payload, fh, sort_keys=True, indent=1)
            else:
                fh.write(payload)
        log.info("wrote %s", path)
    else:
        if as_json:
            json.dump(payload, sys.stdout, sort_keys=True, indent=1)
            sys.stdout.write("\n")
        else:
            sys.stdout.write(payload)


def _load_xy(args):
    X = load_matrix(args.proxies, getattr(args, "meta", None))
    y = load_series(args.target)
    return X, y


def _calibration(args, X, y):
    if getattr(args, "calibration", None):
        a, b = args.calibration.split(":")
        return int(a), int(b)
    return (max(X.start_year, y.start_year), min(X.end_year, y.end_year))


def _method(args):
    params = {}
    if args.method in ("lasso", "elastic_net", "ridge"):
        lam = args.lam
        try:
            lam = float(lam)
        except ValueError:
            pass
        params["lam"] = lam
    if args.method == "pc_ols":
        params["K"] = args.K
    return MethodConfig(args.method, params)


def cmd_validate(args):
    X, y = _load_xy(args)
    cal = _calibration(args, X, y)
    scheme = make_scheme(cal, args.block_length, args.mode)
    rpt = rmse_profile(_method(args), X, y, scheme, seed=Seed(args.seed))
    _emit(rpt.to_dict(), args.output)
    return 2 if rpt.errors else 0


def cmd_nulls(args):
    X, y = _load_xy(args)
    cal = _calibration(args, X, y)
    scheme = make_scheme(cal, args.block_length, args.mode)
    method = _method(args)
    seed = Seed(args.seed)
    rpt = rmse_profile(method, X, y, scheme, seed=seed)
    ns = NullSpec(args.null_kind, X.n_series, phi=args.phi,
                  reference=X if args.null_kind == "ar1_empirical" else None)
    samples, _ = null_distribution(method, ns, y, scheme,
                                   args.replications, seed.derive("nulls"))
    band = null_band(samples)
    payload = {
        "method": method.tag,
        "null": ns.tag,
        "real": rpt.to_dict(),
        "band": {"quantile_levels": list(band.quantile_levels),
                 "per_block": band.per_block.tolist(),
                 "n_replications": band.n_replications},
        "significance": {
            "per_block": significance(rpt, samples, "per_block"),
            "aggregate": significance(rpt, samples, "aggregate"),
        },
    }
    _emit(payload, args.output)
    return 2 if rpt.errors else 0


def cmd_bayes(args):
    params = {"K": args.K, "ar_order": args.ar_order,
              "iterations": args.iterations, "burn_in": args.burn_in,
              "chains": args.chains, "backcast_start": args.backcast_start,
              "calibration_start": args.calibration_start,
              "calibration_end": args.calibration_end}
    inputs = {}
    if args.target:
        inputs["target"] = args.target
    if args.proxies:
        inputs["proxies"] = args.proxies
    if args.meta:
        inputs["proxies_meta"] = args.meta
    spec = experiments.ExperimentSpec(
        "bayes_backcast", args.output_dir, params, inputs,
        Seed(args.seed), args.threads)
    manifest = experiments.run(spec)
    return 0 if all(s["status"] == "ok" for s in manifest["stages"]) else 2


def cmd_pcselect(args):
    if args.eigenvalues:
        ev = np.array([float(v) for v in args.eigenvalues.split(",")])
    elif args.matrix:
        X = load_matrix(args.matrix)
        ev = solvers.pca_decompose(X, min(X.n_years, X.n_series)).eigenvalues
    else:
        raise DataError("pcselect needs --eigenvalues or --matrix")
    spectrum = pcselect.Spectrum(ev)
    lines = ["criterion,threshold,K"]
    for crit, th, k in pcselect.criteria_table(spectrum, [args.threshold]):
        lines.append(f"{crit},{'' if th is None else th},{k}")
    _emit("\n".join(lines) + "\n", args.output, as_json=False)
    return 0


def cmd_diagnose(args):
    X = load_matrix(args.proxies)
    target = load_series(args.target) if args.target else None
    lines = ["series,stat,value"]
    failures = 0
    for j in range(X.n_series):
        name = X.columns[j].name
        try:
            st = diagnostics.series_stat(X.series(j), args.stat, target=target,
                                         series_id=name)
            lines.append(f"{name},{args.stat},{'%.17g' % st.value}")
        except DataError as exc:
            log.warning("series %s: %s", name, exc)
            failures += 1
    if args.n_boot > 0:
        series_set = [X.series(j) for j in range(X.n_series)]
        sample = diagnostics.bootstrap_null(series_set, args.stat,
                                            args.block_length, args.n_boot,
                                            Seed(args.seed).derive("boot"),
                                            target=target)
        for q in (0.025, 0.5, 0.975):
            lines.append("bootstrap_q%g,%s,%s"
                         % (q, args.stat, "%.17g" % np.quantile(sample, q)))
    _emit("\n".join(lines) + "\n", args.output, as_json=False)
    return 2 if failures else 0


def cmd_experiment(args):
    spec = experiments.ExperimentSpec(
        args.recipe, args.output_dir,
        _parse_kv(args.param, "--param"),
        {k: str(v) for k, v in _parse_kv(args.input, "--input").items()},
        Seed(args.seed), args.threads)
    manifest = experiments.run(spec)
    failed = [s for s in manifest["stages"] if s["status"] != "ok"]
    for s in failed:
        log.error("stage %s failed: %s", s["name"], s["error"])
    return 0 if not failed else 2


def cmd_generate(args):
    params = Ar1Params(args.phi) if args.kind == "ar1" else None
    X = gen_noise_matrix(args.kind, params, args.years, args.series,
                         Seed(args.seed), start_year=args.start_year)
    if args.output:
        write_matrix(X, args.output)
        log.info("wrote %s", args.output)
    else:
        import tempfile
        with tempfile.NamedTemporaryFile("r", suffix=".csv") as fh:
            write_matrix(X, fh.name)
            sys.stdout.write(fh.read())
    return 0


_HANDLERS = {
    "validate": cmd_validate,
    "nulls": cmd_nulls,
    "bayes": cmd_bayes,
    "pcselect": cmd_pcselect,
    "diagnose": cmd_diagnose,
    "experiment": cmd_experiment,
    "generate": cmd_generate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; the contract wants 1
        return 0 if exc.code == 0 else 1
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(args, "log_level", "INFO").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) == 0:
        args.threads = os.cpu_count() or 1
    try:
        args = apply_config(args)
        return _HANDLERS[args.subcommand](args)
    except DataError as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # fatal, but always with a message
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
