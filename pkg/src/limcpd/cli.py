"""Command-line front end.

Subcommands ``simulate``, ``converge``, ``drift`` and ``symmetry``. Options
may also come from a flat ``key = value`` file passed with ``--config``;
command-line flags take precedence over the file.

Exit status: 0 on success, 1 on usage or configuration errors, 2 on
numerical failure (non-convergence, non-finite state, failed check).
"""

from __future__ import annotations

import argparse
import sys
from contextlib import contextmanager

import numpy as np

from . import harness
from .lim import IntegrationError, SOLVER_KINDS, SolverConfig
from .problems import BUILTIN_PROBLEMS

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2

LONG_DRIFT_HORIZON = 3.0e4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys use ``_`` or ``-``."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


# name -> (type, default); None default means "no default"
_OPTIONS = {
    "problem": (str, "ex1"),
    "method": (str, "lim"),
    "methods": (str, "boris,lim(4,2),lim(6,3)"),
    "s": (int, 2),
    "k": (int, None),
    "h": (float, None),
    "tfinal": (float, None),
    "solver": (str, "fixed_point"),
    "tol": (float, 1e-14),
    "max_iter": (int, 100),
    "constant_b": (lambda v: str(v).lower() in ("1", "true", "yes", "on"), False),
    "record_every": (int, 1),
    "out": (str, None),
    "seed": (int, 0),
    "ns": (str, "1,2,4,8,16"),
    "norm": (str, "inf"),
    "trials": (int, 20),
    "window": (float, None),
}

_COMMAND_DEFAULTS = {
    "simulate": {"h": 0.01, "tfinal": 10.0},
    "converge": {"problem": "ex2", "h": 0.05, "tfinal": 25.0},
    "drift": {"method": "boris", "h": 0.01, "tfinal": 1000.0, "record_every": 100},
    "symmetry": {"h": 0.01, "tfinal": 0.0},
}


def _add_common(p):
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--problem", help=f"built-in problem: {', '.join(BUILTIN_PROBLEMS)} or free")
    p.add_argument("--method", help="boris, lim or lim(k,s)")
    p.add_argument("--s", type=int, help="LIM stage parameter s (order 2s)")
    p.add_argument("--k", type=int, help="LIM quadrature size k (default 2s)")
    p.add_argument("--h", type=float, help="step size")
    p.add_argument("--tfinal", type=float, help="final time")
    p.add_argument("--solver", choices=SOLVER_KINDS, help="nonlinear solver")
    p.add_argument("--tol", type=float, help="solver tolerance (default 1e-14)")
    p.add_argument("--max-iter", dest="max_iter", type=int, help="solver iteration cap")
    p.add_argument("--constant-B", dest="constant_b", action="store_const", const="true",
                   help="treat the magnetic field as uniform")
    p.add_argument("--record-every", dest="record_every", type=int, help="write every n-th step")
    p.add_argument("--out", help="output CSV path (default: stdout)")
    p.add_argument("--seed", type=int, help="seed for random trial states")


def build_parser():
    parser = _Parser(prog="limcpd", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run one integration and write the trajectory as CSV")
    _add_common(p)

    p = sub.add_parser("converge", help="error/rate table over h = h0/n")
    _add_common(p)
    p.add_argument("--methods", help="comma list, e.g. 'boris,lim(4,2),lim(6,3)'")
    p.add_argument("--ns", help="comma list of refinement factors n")
    p.add_argument("--norm", choices=("inf", "1", "2"), help="per-point norm of the (q, p) error")

    p = sub.add_parser("drift", help="energy error time series and its drift slope")
    _add_common(p)
    p.add_argument("--window", type=float, help="fit the slope on the last WINDOW time units only")
    p.add_argument("--long-horizon", action="store_true",
                   help=f"integrate up to t = {LONG_DRIFT_HORIZON:g} (slow)")

    p = sub.add_parser("symmetry", help="forward/backward round-trip check")
    _add_common(p)
    p.add_argument("--trials", type=int, help="number of random trial states")
    return parser


def resolve_options(args):
    """Merge built-in defaults, the config file and command-line flags, in that order."""
    merged = {name: default for name, (_, default) in _OPTIONS.items()}
    merged.update(_COMMAND_DEFAULTS.get(args.command, {}))
    if getattr(args, "config", None):
        file_values = read_config_file(args.config)
        aliases = {"t_final": "tfinal", "constant_B": "constant_b"}
        for key, value in file_values.items():
            key = aliases.get(key, key)
            if key not in _OPTIONS:
                raise UsageError(f"unknown configuration key {key!r}")
            merged[key] = value
    for key in _OPTIONS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    out = {}
    for key, value in merged.items():
        conv = _OPTIONS[key][0]
        try:
            out[key] = None if value is None else conv(value)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {key}: {value!r}") from exc
    for key in ("record_every", "trials", "max_iter"):
        if out[key] < 1:
            raise UsageError(f"{key.replace('_', '-')} must be at least 1, got {out[key]}")
    for key in ("h", "tol"):
        if out[key] is not None and not out[key] > 0:
            raise UsageError(f"{key} must be positive, got {out[key]}")
    return out


def _solver(opts):
    return SolverConfig(opts["solver"], opts["tol"], opts["max_iter"], opts["constant_b"])


@contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def cmd_simulate(opts):
    problem = harness.resolve_problem(opts["problem"])
    method = harness.parse_method(opts["method"], opts["k"], opts["s"])
    n_steps = harness.step_count(opts["tfinal"], opts["h"])
    records = harness.run(problem, method, problem.initial_state(), opts["h"], n_steps, _solver(opts))
    with _output(opts["out"]) as fh:
        harness.write_csv(fh, problem, records, opts["record_every"])
    return EXIT_OK


def cmd_converge(opts):
    problem = harness.resolve_problem(opts["problem"])
    methods = [harness.parse_method(m) for m in _split_methods(opts["methods"])]
    ns = [int(n) for n in opts["ns"].split(",")]
    h0, t_final = opts["h"], opts["tfinal"]
    if problem.label == "free":
        ref = harness.exact_free_flight_reference(problem, t_final, h0 / max(ns))
    else:
        ref = harness.generate_reference(problem, t_final, h0 / max(ns), config=_solver(opts))
    rows = harness.convergence_table(problem, methods, h0, ns, t_final, ref, opts["norm"], _solver(opts))
    print(harness.format_convergence_table(rows), end="")
    if opts["out"]:
        with _output(opts["out"]) as fh:
            harness.write_convergence_csv(fh, rows)
    return EXIT_OK


def _split_methods(text):
    # commas also separate k and s inside lim(k,s)
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur += ch
    parts.append(cur)
    return [p.strip() for p in parts if p.strip()]


def cmd_drift(opts, long_horizon=False):
    problem = harness.resolve_problem(opts["problem"])
    method = harness.parse_method(opts["method"], opts["k"], opts["s"])
    t_final = LONG_DRIFT_HORIZON if long_horizon else opts["tfinal"]
    t, H = harness.drift_series(problem, method, opts["h"], t_final, opts["record_every"], _solver(opts))
    with _output(opts["out"]) as fh:
        fh.write("t,H_err\n")
        for ti, Hi in zip(t, H):
            fh.write(f"{ti:.16e},{Hi:.16e}\n")
    mask = np.ones_like(t, dtype=bool) if opts["window"] is None else t >= t[-1] - opts["window"]
    slope = harness.drift_slope(t[mask], H[mask])
    print(f"{method.label} on {problem.label}, h={opts['h']:g}: max|H_err| = {np.max(np.abs(H)):.3e}, "
          f"drift slope of |H_err| = {slope:.3e}", file=sys.stderr if opts["out"] is None else sys.stdout)
    return EXIT_OK


def cmd_symmetry(opts):
    problem = harness.resolve_problem(opts["problem"])
    method = harness.parse_method(opts["method"], opts["k"], opts["s"])
    report = harness.symmetry_check(problem, method, opts["h"], opts["trials"], opts["seed"], _solver(opts))
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args)
        if args.command == "simulate":
            return cmd_simulate(opts)
        if args.command == "converge":
            return cmd_converge(opts)
        if args.command == "drift":
            return cmd_drift(opts, args.long_horizon)
        return cmd_symmetry(opts)
    except (UsageError, ValueError, KeyError, OSError) as exc:
        print(f"limcpd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, harness.ReferenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"limcpd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
