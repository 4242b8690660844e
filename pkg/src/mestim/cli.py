"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver did
not converge.
"""
import argparse
import hashlib
import os
import sys

from mestim import __version__
from mestim.config import build_estimating_function, parse_config
from mestim.dataset import read_csv
from mestim.errors import (ConfigError, DataError, MEstimationError,
                           NoConvergence, SingularBread, SingularJacobian,
                           NonFiniteEvaluation)
from mestim.estimator import estimate
from mestim.replicate import EXAMPLES, run
from mestim.report import dumps, failure_document, result_document, summary_table

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4


def _write(path, text):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def cmd_fit(config_path, data_path, output_path=None, digits=4, out=None,
            err=None):
    out, err = out or sys.stdout, err or sys.stderr
    try:
        raw = open(config_path, "rb").read()
    except OSError as e:
        print(f"error: cannot read config {config_path}: {e.strerror}", file=err)
        return EXIT_CONFIG
    try:
        spec = parse_config(raw.decode("utf-8"))
    except (ConfigError, UnicodeDecodeError) as e:
        print(f"config error: {config_path}: {e}", file=err)
        return EXIT_CONFIG
    try:
        cfg = spec.solver_config()
    except ValueError as e:
        print(f"config error: {config_path}: {e}", file=err)
        return EXIT_CONFIG
    try:
        data = read_csv(data_path)
        ef = build_estimating_function(spec, data)
    except DataError as e:
        print(f"data error: {data_path}: {e}", file=err)
        return EXIT_DATA
    except ConfigError as e:
        print(f"config error: {config_path}: {e}", file=err)
        return EXIT_CONFIG

    provenance = {"config_sha256": hashlib.sha256(raw).hexdigest(),
                  "data_sha256": data.sha256, "seed": None,
                  "version": __version__}
    code = EXIT_OK
    try:
        result = estimate(ef, init=spec.init, cfg=cfg)
        doc = result_document(result, spec.ci_level, spec.family, provenance, cfg)
    except NoConvergence as e:
        doc = failure_document(ef.names, e, spec.ci_level, spec.family,
                               ef.n_obs, provenance, cfg)
        print(f"convergence error: {e}", file=err)
        code = EXIT_CONVERGENCE
    except (SingularJacobian, SingularBread, NonFiniteEvaluation) as e:
        print(f"convergence error: {e}", file=err)
        return EXIT_CONVERGENCE
    except MEstimationError as e:
        print(f"data error: {e}", file=err)
        return EXIT_DATA

    if output_path:
        _write(output_path, dumps(doc))
    print(summary_table(doc, digits), file=out)
    return code


def cmd_replicate(example, seed=None, output_dir=None, out=None, err=None):
    out, err = out or sys.stdout, err or sys.stderr
    output_dir = output_dir or example
    try:
        rep = run(example, seed)
    except NoConvergence as e:
        print(f"convergence error: {e}", file=err)
        return EXIT_CONVERGENCE
    except (SingularJacobian, SingularBread, NonFiniteEvaluation) as e:
        print(f"convergence error: {e}", file=err)
        return EXIT_CONVERGENCE
    for name, text in sorted(rep.files.items()):
        _write(os.path.join(output_dir, name), text)
    print(rep.summary, file=out)
    print(f"wrote {', '.join(sorted(rep.files))} to {output_dir}", file=out)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mestim",
        description="M-estimation with empirical sandwich variance.",
        epilog="The SANDWICH_SOLVER_TOL environment variable overrides the "
               "default solver tolerance (1e-9).")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a configured model to a CSV file")
    fit.add_argument("config", help="model configuration file")
    fit.add_argument("data", help="CSV data file")
    fit.add_argument("--out", help="write the JSON result document here")
    fit.add_argument("--digits", type=int, default=4,
                     help="decimals shown in the summary table (default 4)")

    rep = sub.add_parser("replicate", help="re-run a worked example")
    rep.add_argument("example", choices=EXAMPLES)
    rep.add_argument("--seed", type=int, default=None,
                     help="simulation seed (robust-line, standardize)")
    rep.add_argument("--out", help="output directory (default: example name)")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code
    try:
        if args.command == "fit":
            return cmd_fit(args.config, args.data, args.out, args.digits)
        return cmd_replicate(args.example, args.seed, args.out)
    except ValueError as e:
        # e.g. a malformed SANDWICH_SOLVER_TOL
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
