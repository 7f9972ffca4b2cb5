"""Command line entry point: ``dhmm <subcommand> [options]``.

Every subcommand that takes an experiment accepts ``--config FILE`` (JSON or
YAML); flags given on the command line override the file.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import experiment
from .errors import DhmmError
from .experiment import ExperimentConfig, write_csv, write_json
from .graph import GraphTopology, sample_connected_rgg
from .mixing import build_mixing, slem_curve, spectrum_report
from .seeding import parse_range

log = logging.getLogger("dhmm")


def _float_or_optimal(text: str):
    return None if text == "optimal" else float(text)


def _experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or YAML experiment config")
    p.add_argument("--preset", dest="model", help="model preset (asilomar-v, small)")
    p.add_argument("--model-file", dest="model", help="model config file")
    p.add_argument("--S", type=int)
    p.add_argument("--r", type=float)
    p.add_argument("--topology-seed", type=int, help="fixed topology seed (default: the preset's)")
    p.add_argument("--per-seed-topology", action="store_true",
                   help="draw a new topology from every run seed")
    p.add_argument("--graph", dest="graph_file", help="topology JSON written by gen-graph")
    p.add_argument("--construction", choices=["max-degree", "metropolis"])
    p.add_argument("--eps", type=_float_or_optimal, default=argparse.SUPPRESS,
                   help="'optimal' or a positive value")
    p.add_argument("--T", type=int)
    p.add_argument("--n", type=int, help="consensus iterations per measurement")
    p.add_argument("--seeds", help="e.g. 0..49, 0..100..10 or 1,4,7")
    p.add_argument("--output", help=f"output directory (default ${experiment.OUTPUT_ENV} or ./dhmm-out)")
    p.add_argument("--workers", type=int)
    p.add_argument("--normalize", action="store_true", default=None,
                   help="rescale observations so that the covariance floor is at least e")
    p.add_argument("--keep-traces", action="store_true", default=None,
                   help="store per-round consensus errors")
    p.add_argument("--C", type=float)
    p.add_argument("--beta", type=float, help="event constant (default: calibrate)")
    p.add_argument("--calibration-seeds")
    p.add_argument("--eps-acc", type=float, help="accuracy for the unnormalized filter bound")
    p.add_argument("--eps-post", type=float, help="accuracy for the posterior bound")
    p.add_argument("--m", dest="ms", type=float, action="append", help="extra decay exponent (repeatable)")


def config_from_args(args) -> ExperimentConfig:
    doc = experiment.load_config_file(args.config) if args.config else {}
    keys = ["model", "S", "r", "topology_seed", "graph_file", "construction", "T", "n", "seeds",
            "output", "workers", "normalize", "keep_traces", "C", "beta", "calibration_seeds",
            "eps_acc", "eps_post", "ms"]
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            doc[key] = value
    if hasattr(args, "eps"):
        doc["eps"] = args.eps
    if getattr(args, "per_seed_topology", False):
        doc["topology_seed"] = None
    return ExperimentConfig.from_dict(doc)


def _emit(obj, out: str | None) -> None:
    if out:
        write_json(Path(out), obj)
        print(out)
    else:
        print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_gen_graph(args) -> int:
    g = sample_connected_rgg(args.S, args.r, args.seed)
    _emit(g.to_dict(), args.out)
    return 0


def cmd_analyze_spectrum(args) -> int:
    if args.graph:
        g = GraphTopology.load(args.graph)
    else:
        if args.S is None or args.r is None:
            raise DhmmError("analyze-spectrum needs --graph or both --S and --r")
        g = sample_connected_rgg(args.S, args.r, args.seed)
    report = spectrum_report(build_mixing(g, args.construction), args.eps)
    _emit(report.to_dict(), args.out)
    if args.curve_csv:
        lam_grid = [report.lambda2] + [i / 20.0 for i in range(-20, 20)]
        eps_grid = [None] + [0.05 * 1.25 ** i for i in range(30)]
        rows = [{"lambda2": lam, "eps": e, "rho": rho} for lam, e, rho in slem_curve(lam_grid, eps_grid)]
        write_csv(Path(args.curve_csv), rows)
    return 0


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    out = experiment.run_experiment(cfg)
    summary = experiment.load_summary(out)
    print(json.dumps({"output": str(out), "max_sup_disagreement": summary["max_sup_disagreement"],
                      "median_sup_disagreement": summary["median_sup_disagreement"]}, sort_keys=True))
    return 0


def cmd_verify_bounds(args) -> int:
    cfg = config_from_args(args)
    report = experiment.verify_bounds(cfg)
    _emit(report, args.out)
    ok = report["event"]["satisfied"] and all(b["satisfied"] for b in report["bounds"].values())
    return 0 if ok else 3


def cmd_sweep_mixing(args) -> int:
    rows = experiment.sweep_mixing(parse_range(args.S), args.trials, args.r, args.construction, args.seed)
    if args.out:
        write_csv(Path(args.out), rows)
        print(args.out)
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return 0


def cmd_required_n(args) -> int:
    cfg = config_from_args(args)
    _emit(experiment.required_n(cfg), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dhmm", description="Distributed HMM filtering over sensor networks")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-graph", help="sample a connected random geometric graph")
    p.add_argument("--S", type=int, required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_gen_graph)

    p = sub.add_parser("analyze-spectrum", help="spectrum, optimal eps, SLEM and mixing time")
    p.add_argument("--S", type=int)
    p.add_argument("--r", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--graph", help="topology JSON instead of sampling")
    p.add_argument("--construction", choices=["max-degree", "metropolis"], default="max-degree")
    p.add_argument("--eps", type=_float_or_optimal, default=None)
    p.add_argument("--out")
    p.add_argument("--curve-csv", help="also write (lambda2, eps, rho) samples")
    p.set_defaults(func=cmd_analyze_spectrum)

    p = sub.add_parser("run", help="centralized vs distributed filter over a seed list")
    _experiment_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify-bounds", help="Monte-Carlo check of the stability bounds")
    _experiment_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_bounds)

    p = sub.add_parser("sweep-mixing", help="lambda2, rho* and tau over network sizes")
    p.add_argument("--S", default="10..60..10")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--r", type=float, default=0.2)
    p.add_argument("--construction", choices=["max-degree", "metropolis"], default="max-degree")
    p.add_argument("--seed", type=int, default=0, help="topology seed of trial 0")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_mixing)

    p = sub.add_parser("required-n", help="minimal consensus iterations for the stability conditions")
    _experiment_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_required_n)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (DhmmError, ValueError, OSError) as exc:
        print(f"dhmm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
