"""Command line: ``hydrabroker validate|submit|experiment <run-file>``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import statistics
import sys
from pathlib import Path

from .errors import HydraError
from .rundesc import (
    EXIT_ERROR,
    EXIT_OK,
    EXIT_USAGE,
    execute_run,
    load_run,
    validate_run,
)

SUMMARY_METRICS = ("ovh_s", "th_tasks_per_s", "tpt_s", "ttx_s")
SUMMARY_COLUMNS = ("run_id", "provider", "runs", "tasks", "pods", "mode") + tuple(
    f"{m}_{s}" for m in SUMMARY_METRICS for s in ("mean", "stdev"))


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hydrabroker",
                                description="Multi-provider task broker on simulated backends.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check a run description without executing it")
    v.add_argument("file")
    for name, text in (("submit", "execute one run and write trace.csv/metrics.csv"),
                       ("experiment", "seeded repetitions plus summary.csv")):
        s = sub.add_parser(name, help=text)
        s.add_argument("file")
        s.add_argument("--out", help="output directory (default: $HYDRABROKER_OUT or the file's 'output')")
        s.add_argument("--seed", type=int, help="overrides the description seed")
        if name == "experiment":
            s.add_argument("--repeat", type=int, default=3, help="repetitions (default 3)")
    return p


def _out_dir(args, desc) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get("HYDRABROKER_OUT")
    if env:
        return Path(env)
    if desc.output:
        out = Path(desc.output)
        if not out.is_absolute() and desc.base_dir:
            out = Path(desc.base_dir) / out
        return out
    return Path("out") / desc.run_id


def _print_report(outcome, stream):
    print(f"run {outcome.run_id} seed={outcome.seed} states={outcome.counts}", file=stream)
    for m in outcome.report.rows():
        print(f"  {m.provider:>10} tasks={m.tasks:<6} pods={m.pods:<6} mode={m.mode:<10} "
              f"ovh={m.ovh_s:.4f}s th={m.th_tasks_per_s:.1f}/s tpt={m.tpt_s:.2f}s "
              f"ttx={m.ttx_s:.2f}s", file=stream)


def write_summary(outcomes, path) -> str:
    groups: dict = {}
    for o in outcomes:
        key = o.run_id.rsplit("-r", 1)[0]
        for m in o.report.rows():
            groups.setdefault((key, m.provider), []).append(m)
    lines = []
    for (key, provider), rows in groups.items():
        out = [key, provider, len(rows), rows[0].tasks, rows[0].pods, rows[0].mode]
        for metric in SUMMARY_METRICS:
            vals = [getattr(r, metric) for r in rows]
            out.append(repr(float(statistics.fmean(vals))))
            out.append(repr(float(statistics.stdev(vals))) if len(vals) > 1 else "0.0")
        lines.append(out)
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerows(lines)
    return str(path)


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        desc = load_run(args.file)
    except (HydraError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    defects = validate_run(desc)
    if args.command == "validate" or defects:
        if defects:
            print(f"{args.file}: {len(defects)} defect(s)", file=sys.stderr)
            for d in defects:
                print(f"  - {d}", file=sys.stderr)
            return EXIT_ERROR
        kinds = ", ".join(f"{n}({c.kind.value})" for n, c in desc.registry.providers.items())
        print(f"{args.file}: ok [{kinds}]")
        return EXIT_OK

    out = _out_dir(args, desc)
    seed = desc.seed if args.seed is None else args.seed
    try:
        if args.command == "submit":
            outcome = execute_run(desc, out, seed=seed, scale=desc.scales[0])
            _print_report(outcome, sys.stdout)
            print(f"wrote {outcome.paths['trace']} and {outcome.paths['metrics']}")
            return outcome.exit_code
        if args.repeat < 1:
            print("error: --repeat must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        outcomes = []
        code = EXIT_OK
        for scale in desc.scales:
            for i in range(args.repeat):
                tag = f"x{scale}-r{i:02d}" if len(desc.scales) > 1 else f"r{i:02d}"
                run_id = f"{desc.run_id}-{tag}"
                o = execute_run(desc, out / tag, seed=seed + i, scale=scale, run_id=run_id)
                _print_report(o, sys.stdout)
                outcomes.append(o)
                code = max(code, o.exit_code)
        out.mkdir(parents=True, exist_ok=True)
        print(f"wrote {len(outcomes)} runs and {write_summary(outcomes, out / 'summary.csv')}")
        return code
    except (HydraError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
