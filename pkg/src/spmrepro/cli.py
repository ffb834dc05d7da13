"""Command line entry point: ``spmrepro {simulate,design,evaluate,report,run}``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import campaign

log = logging.getLogger("spmrepro")


def _methods(text):
    items = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [m for m in items if m not in campaign.METHODS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown methods {bad}; choose from {', '.join(campaign.METHODS)}")
    return items


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [experiment], [room], [loss], [solver] sections")
    common.add_argument("--seed", type=_seed, help="room / network seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--methods", type=_methods, help="comma list from " + ",".join(campaign.METHODS))
    common.add_argument("--jobs", type=int, help="parallel design jobs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="spmrepro", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate the cabin and write IR datasets")
    sub.add_parser("design", parents=[common], help="design filter banks for every method and source")
    sub.add_parser("evaluate", parents=[common], help="metrics, stacked SPMs and figures")
    sub.add_parser("report", parents=[common], help="render the markdown summary")
    sub.add_parser("run", parents=[common], help="simulate, design, evaluate and report")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = campaign.load_config(args.config, seed=args.seed, out=args.out, methods=args.methods,
                                   jobs=args.jobs)
    except (OSError, ValueError) as exc:
        print(f"spmrepro: config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "simulate":
            for pos, path in campaign.cmd_simulate(cfg).items():
                print(f"{pos}\t{path}")
            return 0
        if args.command == "design":
            results = campaign.cmd_design(cfg)
            for r in results:
                state = r.get("status", "failed") if r["ok"] else "FAILED " + r["error"]
                print(f"{r['method']}\t{r['azimuth']:g}\t{r['seconds']:.1f}s\t{state}")
            return 1 if any(not r["ok"] for r in results) else 0
        if args.command == "evaluate":
            rep = campaign.cmd_evaluate(cfg)
            for (m, pos), v in sorted(rep.dominance.items()):
                print(f"{m}\t{pos}\t{v:.3f}")
            return 1 if rep.failures else 0
        if args.command == "report":
            text = campaign.cmd_report(cfg)
            print(text, end="")
            return 0
        rep = campaign.run_campaign(cfg)
        print(campaign.cmd_report(cfg, rep), end="")
        return 1 if rep.failures else 0
    except FileNotFoundError as exc:
        print(f"spmrepro: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
