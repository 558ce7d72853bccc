"""Command line entry point: ``varcurv run|verify|list-experiments``.

Exit codes: 0 success, 1 verification failed, 2 bad config or missing
outputs, 3 numeric failure during a run.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import io
from .config import (EXPERIMENTS, OUTPUT_ROOT_ENV, ConfigError, apply_override, config_digest, dump_config,
                     load_config, output_dir_for, resolve_config)
from .errors import ConvergenceError, NumericError, ParameterError

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _resolve(args):
    raw = load_config(args.config)
    for assignment in args.set or []:
        apply_override(raw, assignment)
    if getattr(args, "output_dir", None):
        raw["output_dir"] = args.output_dir
    return resolve_config(raw)


def _cmd_run(args):
    from .experiments import run_experiment

    cfg = _resolve(args)
    outdir = output_dir_for(cfg)
    print(f"# experiment {cfg['experiment']} seed {cfg['seed']} config {config_digest(cfg)}")
    print(dump_config(cfg), end="")
    summary = run_experiment(cfg, outdir, workers=args.workers)
    print(f"# outputs written to {outdir}")
    if cfg["experiment"] == "clss":
        for a, st in summary["status"].items():
            print(f"# CLSS alpha={a}: {st} d_eff_hat={summary['d_eff_hat'][a]}")
    return EXIT_OK


def _cmd_verify(args):
    from .verify import verify_outputs

    cfg = _resolve(args)
    outdir = output_dir_for(cfg)
    report = verify_outputs(cfg, outdir, replay=not args.no_replay)
    for line in report["lines"]:
        print(line)
    io.write_json(Path(outdir) / "verify_report.json", report)
    print(f"# {report['status']}")
    return EXIT_OK if report["status"] in ("PASS", "FAIL_BY_DESIGN") else EXIT_VERIFY


def _cmd_list(args):
    from .config import DEFAULTS

    for name, desc in EXPERIMENTS.items():
        print(f"{name:14s} {desc}")
        if args.verbose:
            print("  " + dump_config(DEFAULTS[name]).replace("\n", "\n  ").rstrip())
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="varcurv", description="Config-driven ES landscape experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (("run", _cmd_run, "run an experiment from a YAML config"),
                            ("verify", _cmd_verify, "check recorded outputs against oracles and a replay")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="YAML config file (may be empty)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key by dotted path, e.g. params.N=64 (repeatable)")
        p.add_argument("--output-dir", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<kind>_<hash>_s<seed>)")
        p.add_argument("--workers", type=int, default=1, help="threads for replicate-level work")
        if name == "verify":
            p.add_argument("--no-replay", action="store_true", help="skip the byte-level replay")
        p.set_defaults(func=fn)
    p = sub.add_parser("list-experiments", help="list experiment kinds")
    p.add_argument("-v", "--verbose", action="store_true", help="also print each kind's defaults")
    p.set_defaults(func=_cmd_list)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ConvergenceError, FloatingPointError) as exc:
        mod = type(exc).__module__
        print(f"numeric error in {mod}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ParameterError as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
