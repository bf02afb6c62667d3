"""Command-line entry point: ``tcalib run|grid|plots|validate``.

Exit codes: 0 success, 1 validation error, 2 runtime failure (including a
numeric-failure count above the configured budget).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .errors import ConfigValidationError, FormatError, SchemaError, TcalibError
from .experiment import (
    emit_plot_data,
    execute,
    grid_search,
    load_config,
    validate_config,
    write_results,
)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("tcalib")


def _load_valid(path, output=None):
    cfg = load_config(path)
    if output is not None:
        cfg = dataclasses.replace(cfg, output_dir=str(output))
    validate_config(cfg)
    return cfg


def cmd_validate(args) -> int:
    cfg = _load_valid(args.config)
    print(f"ok: {len(cfg.methods)} methods, {len(cfg.seeds)} seeds")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_valid(args.config, args.output)
    result = execute(cfg)
    out = write_results(result, cfg.output_dir)
    for row in result.rows():
        print(f"{row.method:32s} seed={row.seed:<4d} acc={row.accuracy:.4f} ece={row.ece:.4f} "
              f"atfd={row.atfd:.4f} failed={row.n_failed}")
    print(f"results written to {out}")
    if result.n_failed > cfg.failure_budget:
        log.error("%d samples failed numerically (budget %d)", result.n_failed, cfg.failure_budget)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = _load_valid(args.config, args.output)
    (alpha, beta), table = grid_search(cfg, args.alpha, args.beta, out_dir=cfg.output_dir)
    for a, b, e, acc in table:
        print(f"alpha={a:<8g} beta={b:<8g} mean_ece={e:.5f} mean_acc={acc:.4f}")
    print(f"best: alpha={alpha:g} beta={beta:g}")
    return EXIT_OK


def cmd_plots(args) -> int:
    for path in emit_plot_data(args.results_dir):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tcalib", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every method on every seed")
    p.add_argument("config")
    p.add_argument("--output", help="override output_dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("grid", help="grid search over (alpha, beta) for the lowest mean ECE")
    p.add_argument("config")
    p.add_argument("--alpha", type=float, nargs="+")
    p.add_argument("--beta", type=float, nargs="+")
    p.add_argument("--output", help="override output_dir")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("plots", help="emit plot data from a results directory")
    p.add_argument("results_dir")
    p.set_defaults(func=cmd_plots)

    p = sub.add_parser("validate", help="validate a config without computing")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigValidationError, FormatError, SchemaError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TcalibError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
