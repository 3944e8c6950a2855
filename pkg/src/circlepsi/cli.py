"""Command line entry point: ``circlepsi run|list|emit``.

Exit codes: 0 all records pass, 1 some record fails, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import sys

from .harness import SUITES, ConfigError, emit_plot_data, load_config, load_report, run_suite, summary_lines

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="circlepsi", description="Numerical checks for pseudodifferential operators on the circle.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one or more suites")
    run.add_argument("--suite", help="suite name, comma-separated list, or 'all'")
    run.add_argument("--config", help="flat key = value config file")
    run.add_argument("--seed", type=int)
    run.add_argument("--modes", type=int, help="truncation M (modes -M..M)")
    run.add_argument("--depth", type=int, help="symbol depth J")
    run.add_argument("--grid", help="grid resolutions, e.g. 24,32")
    run.add_argument("--tolerance", type=float)
    run.add_argument("--pairs", type=int, help="random cases per suite")
    run.add_argument("--workers", type=int, help="thread pool size")
    run.add_argument("--out", help="JSON report path")
    run.add_argument("--csv-dir", help="directory for CSV dumps")
    run.add_argument("--cache-dir", help="directory for the binary fit cache")
    run.add_argument("-q", "--quiet", action="store_true", help="only print the overall line")

    sub.add_parser("list", help="list suites")

    emit = sub.add_parser("emit", help="write CSV tables from a JSON report")
    emit.add_argument("report")
    emit.add_argument("--out", required=True, help="output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list":
            for name in sorted(SUITES):
                print(f"{name:14s} {SUITES[name][1]}")
            return EXIT_PASS
        if args.command == "emit":
            for path in emit_plot_data(load_report(args.report), args.out):
                print(path)
            return EXIT_PASS
        keys = ("suite", "seed", "modes", "depth", "grid", "tolerance", "pairs", "workers", "out", "csv_dir", "cache_dir")
        cfg = load_config(args.config, {k: getattr(args, k) for k in keys})
    except ConfigError as exc:
        print(f"circlepsi: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = run_suite(cfg)
    lines = summary_lines(report)
    print("\n".join(lines[-1:] if args.quiet else lines))
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
