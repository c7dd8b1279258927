#!/usr/bin/env python3
"""dejavu simulator command line: run one scenario, sweep a delay grid, or validate a file."""
from __future__ import annotations
import argparse
import logging
import sys
from pathlib import Path

# keep src/ on sys.path so the script works from a plain checkout
sys.path.insert(0, str(Path(__file__).resolve().parent / "src"))

from dejavu import config, notify  # noqa: E402
from dejavu.adversary import DelayKind  # noqa: E402
from dejavu.harness import SweepSpec, SweepTargets, run, sweep  # noqa: E402
from dejavu.report import run_row, sweep_rows, write_report, write_trace  # noqa: E402
from dejavu.scenario import ScenarioError, load_scenario, read_doc, validate, with_seed  # noqa: E402

log = logging.getLogger("dejavu")

EXIT_OK = 0
EXIT_INVALID = 2


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario, seed=args.seed)
    result = run(sc)
    row = run_row(sc, result.report)
    if args.trace:
        write_trace(args.trace, result)
    if args.report:
        write_report(args.report, [row])
    print(f"{sc.name}: tuples={len(result.tuples)} recall={row['recall'] or '-'} "
          f"mota={row['mota'] or '-'} idsw={row['idsw']}")
    if args.notify or config.NOTIFY_ON_RUN:
        notify.post_run_summary(row)
    return EXIT_OK


def cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario, seed=args.seed)
    spec = SweepSpec(targets=SweepTargets(args.targets), k_max=args.k_max, delay=DelayKind(args.delay))
    cells = sweep(sc, spec, jobs=args.jobs)
    rows = sweep_rows(sc, spec, cells)
    write_report(args.out, rows)
    print(f"{sc.name}: {len(rows)} cells -> {args.out}")
    if args.notify or config.NOTIFY_ON_RUN:
        notify.post_sweep_summary(rows)
    return EXIT_OK


def cmd_validate(args) -> int:
    errors = validate(with_seed(read_doc(args.scenario), args.seed))
    if errors:
        raise ScenarioError(errors)
    print(f"{args.scenario}: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="dejavu_sim", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", parents=[common], help="run one scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--trace", help="JSONL trace output path")
    r.add_argument("--report", help="CSV report output path")
    r.add_argument("--notify", action="store_true", help="post a summary to DEJAVU_WEBHOOK")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common], help="delay-grid sweep over a benign scenario")
    s.add_argument("--scenario", required=True)
    s.add_argument("--k-max", type=int, default=5)
    s.add_argument("--delay", choices=[d.value for d in DelayKind], default=DelayKind.CONSTANT.value)
    s.add_argument("--targets", choices=[t.value for t in SweepTargets], default=SweepTargets.BOTH.value)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=config.JOBS)
    s.add_argument("--notify", action="store_true")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", parents=[common], help="check a scenario file and list every problem")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else config.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ScenarioError as e:
        for msg in e.errors:
            print(f"invalid: {msg}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
