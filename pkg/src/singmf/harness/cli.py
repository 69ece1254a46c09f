"""Command line entry: ``singmf run <config>`` or ``singmf <command> --config <path>``.

Exit status: 0 success, 1 identity-suite failure, 2 configuration error,
3 runtime alarm (a structured ``alarm.json`` is written to the output directory).
"""
from __future__ import annotations

import argparse
import json
import os
import sys

COMMANDS = ("simulate", "pde", "mckean", "chaos", "estimate", "bounds", "suite")
EXIT_SUITE, EXIT_CONFIG, EXIT_ALARM = 1, 2, 3


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("thread count must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_u64, help="run this single seed instead of the configured list")
    common.add_argument("--out", help="output directory (overrides experiment.output_dir)")
    common.add_argument("--threads", type=_positive, default=1, help="worker threads; results do not depend on it")
    common.add_argument("--format", choices=("ini", "json"), help="config encoding (default: by file extension)")

    parser = argparse.ArgumentParser(prog="singmf", description="Singular mean-field experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="run the experiment named in a config file")
    run.add_argument("config")
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=f"run a {name} experiment")
        p.add_argument("--config", required=name != "suite")
    sub.add_parser("list", help="print the experiment registry as JSON")
    return parser


def _alarm_report(exc) -> dict:
    report = {"error": type(exc).__name__, "message": str(exc)}
    extra = getattr(exc, "report", None)
    if isinstance(extra, dict):
        report["details"] = extra
    return report


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = getattr(args, "threads", 1)
    # the compiled loops read this once at import, so it must be set first
    os.environ["NUMBA_NUM_THREADS"] = str(max(threads, int(os.environ.get("NUMBA_NUM_THREADS", "0") or 0)))

    from .. import __version__, _pairs
    from ..kernels import ConfigError
    from ..particles import ExplosionError, StateError
    from ..pde2d import CFLError, PositivityError
    from .config import parse_config, read_config
    from .output import OutputDir, dumps
    from .registry import RuntimeAlarm, get, registry, validate

    if args.command == "list":
        sys.stdout.write(dumps([e.describe() for e in registry()]))
        return 0
    _pairs.set_threads(threads)

    try:
        if args.command == "suite" and args.config is None:
            cfg = parse_config("[experiment]\nname = identity-suite\n", source="<default>")
        else:
            path = args.config
            cfg = read_config(path) if args.format is None else parse_config(open(path).read(), path, args.format)
        try:
            exp = get(cfg.experiment)
        except KeyError:
            raise cfg.field_error("experiment.name", f"unknown experiment {cfg.experiment!r}") from None
        if args.command != "run" and exp.command != args.command:
            raise cfg.field_error("experiment.name",
                                  f"experiment {exp.name!r} runs under {exp.command!r}, not {args.command!r}")
        if args.seed is not None:
            cfg.seeds = [args.seed]
        if args.out is not None:
            cfg.output_dir = args.out
        cfg = validate(cfg, exp)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    out = OutputDir(cfg.output_dir)
    out.text("config.cfg", cfg.to_text(exp.param_types, include_output=False))
    info = {
        "experiment": exp.name,
        "config_sha256": cfg.digest(exp.param_types),
        "seeds": list(cfg.seeds),
        "version": __version__,
        "config_version": cfg.version,
    }
    try:
        results = exp.runner(cfg, out)
    except (ExplosionError, StateError, CFLError, PositivityError, RuntimeAlarm) as e:
        report = _alarm_report(e)
        out.json("alarm.json", report)
        out.manifest({**info, "status": "alarm", "alarm": report})
        print(f"runtime alarm: {report['error']}: {report['message']}", file=sys.stderr)
        return EXIT_ALARM
    except ConfigError as e:
        # parameters only rejected once the module sees them (e.g. d mismatches)
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    out.manifest({**info, "status": "ok", "results": results})
    if exp.name == "bounds":
        sys.stdout.write(dumps(results))
    elif exp.name == "identity-suite":
        for name, passed, value, tol in _suite_rows(out):
            print(f"{'PASS' if passed else 'FAIL'}  {name}  value={value}  tol={tol}")
        if results["failed"]:
            return EXIT_SUITE
    else:
        print(json.dumps({"experiment": exp.name, "output_dir": str(out.path)}))
    return 0


def _suite_rows(out):
    import csv

    with open(out.path / "suite.csv", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [(r[0], r[1] == "true", r[2], r[3]) for r in rows]


if __name__ == "__main__":
    sys.exit(main())
