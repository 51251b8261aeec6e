"""Command line: simulate | optimize | certify | converge | batch.

Exit codes: 0 success, 1 scenario parse error, 2 numerical failure,
3 batch finished with failed runs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import ParseError, batch, parse_scenario, run


def _parse_u(text: str):
    return tuple(float(v) for v in text.split(","))


def _parse_m_range(text: str):
    lo, _, hi = text.partition(":")
    return int(lo), int(hi)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sweepctrl",
        description="Catching-up simulation and control search for convoy sweeping processes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default="runs", help="output root directory")
        p.add_argument("--m", type=int, default=None, help="grid refinement override")
        p.add_argument(
            "--family", choices=("corridor", "disks"), default=None,
            help="constraint family override",
        )

    sim = sub.add_parser("simulate", help="run the catching-up scheme")
    common(sim)
    sim.add_argument("file", help="scenario file")
    sim.add_argument("--u", type=_parse_u, default=None,
                     help="comma-separated constant controls (default: bounds)")

    opt = sub.add_parser("optimize", help="search controls, then certify the best run")
    common(opt)
    opt.add_argument("file", help="scenario file")
    opt.add_argument("--budget", type=int, default=None, help="evaluation budget")
    opt.add_argument("--seed", type=int, default=None, help="random start seed")
    opt.add_argument("--mode", default=None,
                     help="`constant` or `piecewise:K` schedule shape")

    cer = sub.add_parser("certify", help="score the first-order conditions of one run")
    common(cer)
    cer.add_argument("file", help="scenario file")
    cer.add_argument("--u", type=_parse_u, required=True,
                     help="comma-separated constant controls to certify")

    con = sub.add_parser("converge", help="grid refinement study")
    common(con)
    con.add_argument("file", help="scenario file")
    con.add_argument("--u", type=_parse_u, default=None)
    con.add_argument("--m-range", type=_parse_m_range, default=(6, 11),
                     help="coarse:fine refinement range (default 6:11)")

    bat = sub.add_parser("batch", help="run every *.txt scenario in a directory")
    bat.add_argument("dir", help="scenario directory")
    bat.add_argument("--out", default="runs")
    bat.add_argument("--jobs", type=int, default=None, help="worker processes")
    bat.add_argument("--command", dest="batch_command", default="optimize",
                     choices=("simulate", "optimize", "certify", "converge"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "batch":
        records = batch(args.dir, args.out, jobs=args.jobs, command=args.batch_command)
        failed = [r for r in records if r.status != "ok"]
        for rec in records:
            cost = "" if rec.cost is None else f"  cost = {rec.cost:.10g}"
            print(f"{rec.name}: {rec.status}{cost}")
        print(f"index: {Path(args.out) / 'index.csv'}")
        if failed:
            print(f"{len(failed)} of {len(records)} runs failed", file=sys.stderr)
            return 3
        return 0

    try:
        scenario = parse_scenario(Path(args.file).read_text())
    except FileNotFoundError:
        print(f"error: no such file: {args.file}", file=sys.stderr)
        return 1
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    kwargs = {"m": args.m, "family": args.family}
    if args.command in ("simulate", "certify", "converge"):
        kwargs["u"] = getattr(args, "u", None)
    if args.command == "optimize":
        kwargs.update(budget=args.budget, seed=args.seed, mode=args.mode)
    if args.command == "converge":
        kwargs["m_range"] = args.m_range

    record = run(scenario, args.command, args.out, **kwargs)
    if record.status != "ok":
        print(f"failed: {record.error}", file=sys.stderr)
        print(f"artifacts: {record.out_dir}", file=sys.stderr)
        return 2
    cost = "" if record.cost is None else f"  cost = {record.cost:.10g}"
    print(f"{record.name}: {record.status}{cost}")
    print(f"artifacts: {record.out_dir}")
    if record.report_ok is not None:
        print(f"conditions: {'ok' if record.report_ok else 'FAILED'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
