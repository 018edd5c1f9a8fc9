"""Command line: scenario runs, the benchmark energy table, CI checks.

Subcommands: run (simulate, write files, grade checks), check (grade
only, exit-code driven), bench (energy comparison across the four
benchmark controllers), list (built-in scenarios).  Exit codes: 0 all
checks pass, 1 at least one check failed, 2 the simulation left the
finite range, 3 the configuration was rejected.
"""

import argparse
import os
import sys

import numpy as np

from .benchmark import benchmark_energies
from .errors import NonFiniteState, ParseError, ValidationError
from .metrics import FAIL
from .plots import DEFAULT_PANELS, has_series, write_figure
from .scenarios import (BUILTIN, format_summary, load_scenario, run,
                        with_overrides)


def write_csv(trace, path):
    """One header row, then one row per sample.

    Column order is t, the state columns, then the probe outputs; t is
    printed with 9 significant digits.
    """
    if trace.state_names:
        names = list(trace.state_names)
    else:
        names = ["s%d" % (i + 1) for i in range(trace.states.shape[1])]
    names += list(trace.outputs)
    columns = [trace.times[:, None], trace.states]
    columns += [trace.outputs[k][:, None] for k in trace.outputs]
    data = np.hstack(columns)
    fmt = ["%.9g"] + ["%.10g"] * (data.shape[1] - 1)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t," + ",".join(names) + "\n")
        np.savetxt(fh, data, fmt=fmt, delimiter=",", newline="\n")
    return path


def emit(trace, reports, format, out_dir=".", name="trace"):
    """Write the requested trace files; returns the paths written.

    format is csv, svg, or both.  Reports, when present, land next to
    the trace as <name>-summary.txt with one line per check.
    """
    if format not in ("csv", "svg", "both"):
        raise ValidationError("format must be csv, svg, or both",
                              key="format")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    if format in ("csv", "both"):
        paths.append(write_csv(trace, os.path.join(out_dir, name + ".csv")))
    if format in ("svg", "both"):
        panels = [p for p in DEFAULT_PANELS if has_series(trace, p)]
        paths.append(write_figure(trace, os.path.join(out_dir,
                                                      name + ".svg"),
                                  panels=panels))
    if reports:
        path = os.path.join(out_dir, name + "-summary.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(format_summary(name, reports) + "\n")
        paths.append(path)
    return paths


def _resolve(name):
    if name in BUILTIN:
        return BUILTIN[name]
    if os.path.exists(name):
        return load_scenario(name)
    raise ValidationError(
        "no built-in scenario or file named %r; the list command prints "
        "the built-ins" % name, key="scenario")


def _prepared(args):
    return with_overrides(_resolve(args.scenario), horizon=args.horizon,
                          step=args.step, seed=args.seed)


def _out_dir(args):
    return args.out_dir or os.environ.get("FINFORM_OUT_DIR") or "."


def _cmd_run(args):
    scenario = _prepared(args)
    out_dir = _out_dir(args)
    try:
        trace, reports, summary = run(scenario)
    except NonFiniteState as exc:
        sys.stderr.write("simulation left the finite range: %s\n" % exc)
        if exc.trace is not None:
            for path in emit(exc.trace, [], args.format, out_dir,
                             scenario.id):
                print("wrote %s (partial)" % path)
        return 2
    print(summary)
    for path in emit(trace, reports, args.format, out_dir, scenario.id):
        print("wrote %s" % path)
    return 1 if any(r.status == FAIL for r in reports) else 0


def _cmd_check(args):
    scenario = _prepared(args)
    try:
        _, reports, summary = run(scenario)
    except NonFiniteState as exc:
        sys.stderr.write("simulation left the finite range: %s\n" % exc)
        return 2
    print(summary)
    return 1 if any(r.status == FAIL for r in reports) else 0


def _cmd_bench(args):
    energies = benchmark_energies(t_end=args.horizon, h=args.step)
    print("%-14s %14s" % ("case", "energy"))
    for case, value in energies.items():
        print("%-14s %14.2f" % (case, value))
    return 0


def _cmd_list(args):
    print("%-28s %-17s %-22s %9s %9s %s" % ("id", "plant", "controller",
                                            "horizon", "step", "checks"))
    for sc in BUILTIN.values():
        print("%-28s %-17s %-22s %9g %9g %6d"
              % (sc.id, sc.plant["kind"], sc.controller["kind"], sc.horizon,
                 sc.step, len(sc.checks)))
    return 0


class _Parser(argparse.ArgumentParser):
    # bad command-line input is a configuration error (exit 3), not the
    # blow-up code argparse would exit with
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message, key="argv")


def _sim_flags(parser):
    parser.add_argument("--step", type=float, default=None,
                        help="override the integrator step")
    parser.add_argument("--horizon", type=float, default=None,
                        help="override the horizon in seconds")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")


def build_parser():
    parser = _Parser(prog="finform",
                     description="closed-loop scenario runner and checker")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)
    run_p = sub.add_parser("run", help="simulate, write files, grade checks")
    run_p.add_argument("scenario", help="built-in name or TOML file path")
    _sim_flags(run_p)
    run_p.add_argument("--out-dir", default=None,
                       help="output directory (default FINFORM_OUT_DIR "
                            "or the working directory)")
    run_p.add_argument("--format", choices=("csv", "svg", "both"),
                       default="csv", help="trace file format")
    run_p.set_defaults(func=_cmd_run)
    check_p = sub.add_parser("check", help="grade checks, write nothing")
    check_p.add_argument("scenario", help="built-in name or TOML file path")
    _sim_flags(check_p)
    check_p.set_defaults(func=_cmd_check)
    bench_p = sub.add_parser("bench",
                             help="energy table for the four benchmark "
                                  "controllers")
    bench_p.add_argument("--step", type=float, default=1e-3)
    bench_p.add_argument("--horizon", type=float, default=500.0)
    bench_p.set_defaults(func=_cmd_bench)
    list_p = sub.add_parser("list", help="print the built-in scenarios")
    list_p.set_defaults(func=_cmd_list)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ParseError as exc:
        sys.stderr.write("config error at line %s, column %s: %s\n"
                         % (exc.line, exc.column, exc))
        return 3
    except ValidationError as exc:
        sys.stderr.write("config error (%s): %s\n" % (exc.key, exc))
        return 3
    except NonFiniteState as exc:
        sys.stderr.write("simulation left the finite range: %s\n" % exc)
        return 2
