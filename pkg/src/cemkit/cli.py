"""Command-line interface: ``cemkit {validate,formfind,solve,bench,export}``.

Exit codes: 0 success, 1 user error or invalid topology, 2 no convergence
under ``--strict``. Paths given as ``-`` read stdin or write stdout. When
``-o`` is omitted, output goes to ``$CEMKIT_OUTPUT_DIR`` if set and to
stdout otherwise.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from cemkit import __version__
from cemkit.errors import CEMError, TopologyError
from cemkit.model import FORMATS, PLANES, dumps, export_form, load_state, parse_model, state_document, with_overrides
from cemkit.topology import ValidityReport, Violation, validate_topology

OUTPUT_DIR_ENV = "CEMKIT_OUTPUT_DIR"
EXIT_OK, EXIT_USER, EXIT_NOT_CONVERGED = 0, 1, 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors with exit code 1."""

    def error(self, message):
        raise UsageError(message)


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one size")
    return values


def _grad_list(text):
    modes = [v.strip() for v in text.split(",") if v.strip()]
    bad = [m for m in modes if m not in ("ad", "fd")]
    if bad or not modes:
        raise argparse.ArgumentTypeError(f"gradient modes must be ad and/or fd, got {text!r}")
    return tuple(dict.fromkeys(modes))


def _add_settings(p):
    g = p.add_argument_group("equilibrium")
    g.add_argument("--tmax", type=_positive_int, metavar="N", help="maximum equilibrium sweeps (default 100)")
    g.add_argument("--eta", type=_positive_float, metavar="X",
                   help="equilibrium threshold on cumulative displacement (default 1e-6)")
    g.add_argument("--aux", choices=("auto", "off"), help="auxiliary trails for trail-free nodes")


def _add_optimizer(p, grad_list=False):
    g = p.add_argument_group("optimizer")
    g.add_argument("--eps", type=_positive_float, metavar="X", help="convergence threshold (default 1e-6)")
    g.add_argument("--max-iter", type=_positive_int, metavar="N", help="iteration budget (default 100)")
    g.add_argument("--algo", choices=("gd", "lbfgs"), help="descent algorithm (default lbfgs)")
    if grad_list:
        g.add_argument("--grad", type=_grad_list, default=("ad", "fd"), metavar="MODES",
                       help="comma-separated gradient modes, from ad and fd (default ad,fd)")
    else:
        g.add_argument("--grad", choices=("ad", "fd"), help="gradient mode (default ad)")
    g.add_argument("--fd-step", type=_positive_float, metavar="H", help="finite-difference step (default 1e-6)")
    g.add_argument("--fd-scheme", choices=("forward", "central"), help="finite-difference scheme (default forward)")
    g.add_argument("--seed", type=int, default=0, help="seed for the perturbed starting point (default 0)")
    g.add_argument("--jitter", type=float, metavar="X",
                   help="relative perturbation of the starting parameters (solve default 0)")


def build_parser():
    parser = Parser(prog="cemkit", description="Constrained form-finding with the CEM solver.")
    parser.add_argument("--version", action="version", version=f"cemkit {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("validate", help="check a model document and its topology")
    p.add_argument("model", help="model document (- for stdin)")
    p.add_argument("--aux", choices=("auto", "off"), help="auxiliary trails for trail-free nodes")

    p = sub.add_parser("formfind", help="compute the equilibrium state of a model")
    p.add_argument("model", help="model document (- for stdin)")
    p.add_argument("-o", "--output", help="state file (- for stdout)")
    _add_settings(p)
    p.add_argument("--strict", action="store_true", help="exit 2 if equilibrium does not converge")

    p = sub.add_parser("solve", help="fit the model's constraints by optimization")
    p.add_argument("model", help="model document (- for stdin)")
    p.add_argument("-o", "--output", help="state file with solve report (- for stdout)")
    _add_settings(p)
    _add_optimizer(p)
    p.add_argument("--strict", action="store_true", help="exit 2 if the optimizer does not converge")
    p.add_argument("--timings", action="store_true", help="include wall time in the report")

    p = sub.add_parser("bench", help="AD versus FD benchmark on a generated structure family")
    p.add_argument("family", choices=("wheel", "bridge", "tree"))
    p.add_argument("--sizes", type=_int_list, required=True, metavar="LIST",
                   help="comma-separated sizes: wheel sides, bridge hangers or tree levels")
    _add_optimizer(p, grad_list=True)
    p.add_argument("--repeats", type=_positive_int, default=1, help="time each run this many times, keep the best")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes (default 1)")
    p.add_argument("--report", help="CSV path; figures are written next to it (- for stdout)")
    p.add_argument("--no-figures", action="store_true", help="skip the figures")

    p = sub.add_parser("export", help="convert a state file to json, svg or obj")
    p.add_argument("state", help="state file (- for stdin)")
    p.add_argument("--format", choices=FORMATS, default="svg")
    p.add_argument("--plane", choices=sorted(PLANES), default="xz", help="svg projection plane")
    p.add_argument("-o", "--output", help="output path (- for stdout)")
    return parser


def _read(path):
    if path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _default_path(source, suffix):
    folder = os.environ.get(OUTPUT_DIR_ENV)
    if not folder:
        return "-"
    stem = "stdin" if source == "-" else Path(source).stem
    return str(Path(folder) / f"{stem}{suffix}")


def _write(path, data: bytes):
    if path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
        return
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


def _load_model(args):
    model = parse_model(_read(args.model))
    overrides = {}
    if getattr(args, "aux", None) is not None:
        overrides["auxiliary"] = args.aux == "auto"
    for flag, key in (("tmax", "t_max"), ("eta", "eta_min"), ("eps", "epsilon"), ("max_iter", "max_iter"),
                      ("algo", "algorithm"), ("grad", "grad"), ("fd_step", "fd_step"),
                      ("fd_scheme", "fd_scheme")):
        if getattr(args, flag, None) is not None:
            overrides[key] = getattr(args, flag)
    return with_overrides(model, **overrides)


def validity(model) -> ValidityReport:
    """Validity of the model's trails, listing rule violations instead of raising."""
    try:
        trails, T = model.resolve()
    except TopologyError as exc:
        rule = "rule 1" if exc.code in ("trail overlap", "unassigned node") else "rule 2"
        return ValidityReport((Violation(rule, None, str(exc)),))
    return validate_topology(T, trails)


def cmd_validate(args):
    model = _load_model(args)
    report = validity(model)
    print(report)
    return EXIT_OK if report.is_valid else EXIT_USER


def _require_valid(model):
    report = validity(model)
    if not report.is_valid:
        first = report.violations[0]
        raise TopologyError(f"invalid topology: {first.rule}: {first.message}", code="invalid topology")


def cmd_formfind(args):
    model = _load_model(args)
    _require_valid(model)
    problem = model.problem()
    state = problem.state(problem.initial())
    _write(args.output or _default_path(args.model, ".state.json"), dumps(state_document(state, problem.topology)).encode())
    if args.strict and not state.converged:
        print(f"cemkit: equilibrium did not converge: eta {state.final_eta:.3e} after "
              f"{state.iterations_used} sweeps", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_solve(args):
    from cemkit.bench import starting_point
    from cemkit.optimize import solve

    model = _load_model(args)
    _require_valid(model)
    problem = model.problem()
    o = model.options
    s0 = starting_point(problem, args.jitter or 0.0, args.seed)
    state, report = solve(problem, algorithm=o.algorithm, epsilon=o.epsilon, max_iter=o.max_iter, grad=o.grad,
                          fd_step=o.fd_step, fd_scheme=o.fd_scheme, s0=s0)
    summary = report.to_dict()
    summary["seed"] = args.seed
    if not args.timings:
        del summary["wall_time"]
    doc = state_document(state, problem.topology, summary)
    _write(args.output or _default_path(args.model, ".state.json"), dumps(doc).encode())
    print(f"cemkit: {report.message}: L = {report.L_final:.3e} after {report.iterations} iterations",
          file=sys.stderr)
    if args.strict and not report.converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_bench(args):
    from cemkit.bench import run_benchmark

    report = run_benchmark(args.family, args.sizes, grad_modes=args.grad, algorithm=args.algo or "lbfgs",
                           max_iter=args.max_iter or 100, epsilon=args.eps or 1e-6,
                           fd_step=args.fd_step or 1e-6, fd_scheme=args.fd_scheme or "forward",
                           repeats=args.repeats, jobs=args.jobs, seed=args.seed, jitter=args.jitter)
    path = args.report
    if path is None:
        folder = os.environ.get(OUTPUT_DIR_ENV)
        path = str(Path(folder) / f"bench-{args.family}.csv") if folder else "-"
    _write(path, report.to_csv().encode())
    if path != "-" and not args.no_figures:
        from cemkit.plotting import report_figures

        report_figures(report, path, epsilon=args.eps or 1e-6)
    failed = [r for r in report.rows if r.error]
    for row in failed:
        print(f"cemkit: {row.family} size {row.size} ({row.grad_mode}) failed: {row.error}", file=sys.stderr)
    return EXIT_OK


def cmd_export(args):
    state, T = load_state(_read(args.state))
    data = export_form(state, T, format=args.format, plane=args.plane)
    _write(args.output or _default_path(args.state, f".{args.format}"), data)
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "formfind": cmd_formfind, "solve": cmd_solve, "bench": cmd_bench,
            "export": cmd_export}


def _one_line(text):
    return " ".join(str(text).split())


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"cemkit: error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USER
    except CEMError as exc:
        print(f"cemkit: {exc.code}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USER
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"cemkit: error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USER
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
