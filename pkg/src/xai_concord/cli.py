"""Command-line entry point: ``xai-concord run|fixtures|correlation-demo``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from xai_concord.emit import emit, write_delta_table
from xai_concord.errors import ConfigError
from xai_concord.fixtures import TABLE1, table1_globals, table1_report
from xai_concord.pipeline import PipelineConfig, ReportBundle, run_pipeline, run_correlation_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _cmd_run(args) -> int:
    cfg = PipelineConfig.load(args.config)
    out = Path(args.out) if args.out else (Path(cfg.output_dir) if cfg.output_dir else Path(args.config).parent / "out")
    bundle = run_pipeline(cfg, out)
    for p in emit(bundle, cfg.formats, out):
        print(p)
    return EXIT_OK


def _cmd_fixtures(args) -> int:
    out = Path(args.out)
    for study in TABLE1:
        report = table1_report(study)
        bundle = ReportBundle(report, table1_globals(study), {}, {"source": "table1", "study": study},
                              output_dir=out / study)
        for p in emit(bundle, ["json", "csv", "svg"]):
            print(p)
        n5 = [f"{p.pair}: FA={p.fa:.1f} RA={p.ra:.1f}" for p in report.pairs if p.n == 5]
        print(f"{study} n=5  " + "  ".join(n5) + f"  unanimous top feature: {report.top_feature_unanimous}")
    return EXIT_OK


def _cmd_correlation(args) -> int:
    out = Path(args.out)
    ident, corr, delta = run_correlation_scenario(args.seed, n=args.n, output_dir=out)
    for bundle in (ident, corr):
        for p in emit(bundle, ["json", "csv", "svg"]):
            print(p)
    for p in write_delta_table(delta, out):
        print(p)
    for row in delta:
        print(f"{row['pair']:>3} n={row['n']:<3} dFA={row['FA_delta']:+.2f} dRA={row['RA_delta']:+.2f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xai-concord", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the audit pipeline described by a JSON/YAML config file")
    p.add_argument("config")
    p.add_argument("--out", help="override the config's output_dir")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("fixtures", help="emit agreement reports for the published top-5 tables")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fixtures)

    p = sub.add_parser("correlation-demo", help="compare identity vs. correlated synthetic features")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=5000, help="rows per synthetic dataset")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_correlation)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 2
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
