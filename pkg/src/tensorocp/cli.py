"""Command line: single solves, convergence studies, rho sweeps and the 1D estimate check.

Exit codes: 0 success, 1 usage error, 2 solver failure, 3 verification failure.
Running without a subcommand runs the d=3 cosine, rho=h^2 study on levels 1..4.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .appendix import DEFAULT_NS, verify_appendix
from .errors import ConfigurationError, SolverError
from .mesh1d import gauss_rule
from .ocp import (
    PATHS,
    OcpConfig,
    Target,
    boundary_l2_error,
    fit_slope,
    pre_saturation_window,
    full_residual,
    recover_control,
    rho_from_rule,
    rho_sweep,
    run_convergence_study,
    solve_ocp,
)
from .solvers import COARSENINGS, SolverConfig
from .tables import FORMATS, emit_table, format_sci

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3
SUBCOMMANDS = ("solve", "study", "rho-sweep", "verify-appendix")
JOBS_ENV = "TENSOROCP_JOBS"
MAX_DEFAULT_LEVEL = 5
DEFAULT_SWEEP = tuple(2.0 ** -k for k in range(0, 17, 2))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass(frozen=True)
class CliRun:
    subcommand: str
    config: Optional[OcpConfig] = None
    levels: tuple = ()
    paths: tuple = ()
    fmt: str = "csv"
    out: Optional[str] = None
    seed: int = 0
    jobs: int = 1
    rhos: tuple = ()
    ns: tuple = DEFAULT_NS
    shrink: float = 1.0
    extra: dict = field(default_factory=dict)


def parse_levels(text: str) -> tuple:
    """``A..B`` (inclusive) or a single level ``A``."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise UsageError(f"bad level range {text!r}; expected A..B") from None
    if lo < 1 or hi < lo:
        raise UsageError(f"bad level range {text!r}; need 1 <= A <= B")
    return tuple(range(lo, hi + 1))


def parse_inner(text: str) -> tuple:
    """``exact`` or ``pcg:<tol>`` -> (inner_mode, inner_rel_tol)."""
    if text == "exact":
        return "fast-diagonalization-exact", SolverConfig.inner_rel_tol
    if text.startswith("pcg:"):
        try:
            tol = float(text[4:])
        except ValueError:
            raise UsageError(f"bad inner tolerance in {text!r}") from None
        if not 0.0 < tol < 1.0:
            raise UsageError(f"inner tolerance must lie in (0, 1), got {tol}")
        return "inner-pcg", tol
    raise UsageError(f"bad --inner value {text!r}; expected exact or pcg:<tol>")


def _positive_floats(text: str) -> tuple:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None
    if not values or any(not (v > 0 and math.isfinite(v)) for v in values):
        raise UsageError(f"values must be positive and finite: {text!r}")
    return values


def _common(parser: argparse.ArgumentParser, path_default: str, levels_default: str, rho: bool = True) -> None:
    parser.add_argument("--dim", type=int, default=3, help="space dimension 1, 2 or 3")
    parser.add_argument("--levels", default=levels_default, help="level range A..B, n = 2^(level+1)")
    if rho:
        parser.add_argument("--rho", default="h2", help="regularization rule h | h32 | h2 | const:<v>")
    parser.add_argument("--target", default="cosine", choices=["cosine", "quadratic"], help="target")
    parser.add_argument("--path", default=path_default, choices=list(PATHS) + ["all"], help="solver path")
    parser.add_argument("--tol", type=float, default=1e-9, help="relative residual tolerance")
    parser.add_argument("--max-iters", type=int, default=2000, help="iteration cap")
    parser.add_argument("--inner", default="exact", help="interior solve: exact | pcg:<tol>")
    parser.add_argument("--smoothing-steps", type=int, default=1, help="multigrid pre/post smoothing steps")
    parser.add_argument("--damping", type=float, default=0.8, help="Jacobi damping of the multigrid smoother")
    parser.add_argument("--coarsening", default="boundary-preserving", choices=list(COARSENINGS),
                        help="multigrid coarsening")
    parser.add_argument("--quad", type=int, default=5, help="Gauss points per element for rhs and error")
    parser.add_argument("--allow-large", action="store_true", help=f"permit levels above {MAX_DEFAULT_LEVEL}")
    _output(parser)


def _output(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--format", default="csv", choices=list(FORMATS), help="output format")
    parser.add_argument("--out", default="-", help="output file, - for stdout")
    parser.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    parser.add_argument("--jobs", type=int, default=argparse.SUPPRESS,
                        help=f"levels solved in parallel (default: ${JOBS_ENV} or 1)")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="tensorocp", description=__doc__.splitlines()[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="subcommand", parser_class=_Parser)
    _common(sub.add_parser("solve", help="single solve", formatter_class=fmt), "schur-cg", "1")
    _common(sub.add_parser("study", help="multi-level convergence table", formatter_class=fmt), "all", "1..4")
    sweep = sub.add_parser("rho-sweep", help="boundary error and H1 norm over rho", formatter_class=fmt)
    _common(sweep, "schur-cg", "4", rho=False)
    sweep.add_argument("--rho-values", default=",".join(repr(r) for r in DEFAULT_SWEEP),
                       help="comma separated rho values, descending")
    appendix = sub.add_parser("verify-appendix", help="check the interpolation and projection estimates",
                              formatter_class=fmt)
    appendix.add_argument("--ns", default=",".join(str(n) for n in DEFAULT_NS), help="interval counts")
    appendix.add_argument("--shrink", type=float, default=1.0, help="divide every constant by this (self-test)")
    _output(appendix)
    return parser


def _jobs(value: Optional[int]) -> int:
    if value is None:
        env = os.environ.get(JOBS_ENV, "")
        try:
            value = int(env) if env else 1
        except ValueError:
            raise UsageError(f"${JOBS_ENV} must be an integer, got {env!r}") from None
    if value < 1:
        raise UsageError(f"jobs must be >= 1, got {value}")
    return value


def parse_args(argv: Sequence[str] | None = None) -> CliRun:
    """Validated run description; raises UsageError on any bad input."""
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0].startswith("-") and argv[0] not in ("-h", "--help"):
        argv = ["study"] + argv
    args = build_parser().parse_args(argv)
    jobs = _jobs(getattr(args, "jobs", None))
    if args.subcommand == "verify-appendix":
        try:
            ns = tuple(int(n) for n in args.ns.split(","))
        except ValueError:
            raise UsageError(f"bad --ns {args.ns!r}") from None
        if len(ns) < 2 or any(n < 4 for n in ns) or len(set(ns)) != len(ns):
            raise UsageError("--ns needs at least two distinct interval counts >= 4")
        if not (args.shrink > 0 and math.isfinite(args.shrink)):
            raise UsageError("--shrink must be positive")
        return CliRun("verify-appendix", fmt=args.format, out=args.out, seed=args.seed, jobs=jobs,
                      ns=ns, shrink=args.shrink)

    if args.dim not in (1, 2, 3):
        raise UsageError(f"--dim must be 1, 2 or 3, got {args.dim}")
    levels = parse_levels(args.levels)
    if levels[-1] > MAX_DEFAULT_LEVEL and not args.allow_large:
        raise UsageError(f"levels above {MAX_DEFAULT_LEVEL} need --allow-large")
    if args.subcommand in ("solve", "rho-sweep") and len(levels) != 1:
        raise UsageError(f"{args.subcommand} takes a single level")
    if args.subcommand in ("solve", "rho-sweep") and args.path == "all":
        raise UsageError(f"{args.subcommand} takes a single solver path")
    rho_rule = getattr(args, "rho", "h2")
    if not 0.0 < args.tol < 1.0:
        raise UsageError(f"--tol must lie in (0, 1), got {args.tol}")
    if not 5 <= args.quad <= 10:
        raise UsageError("--quad must lie in 5..10")
    inner_mode, inner_tol = parse_inner(args.inner)
    try:
        rho_from_rule(rho_rule, 0.25)
        solver = SolverConfig(rel_tol=args.tol, max_iters=args.max_iters, inner_rel_tol=inner_tol,
                              inner_mode=inner_mode, jacobi_damping=args.damping,
                              smoothing_steps=args.smoothing_steps, coarsening=args.coarsening)
        paths = tuple(PATHS) if args.path == "all" else (args.path,)
        config = OcpConfig(d=args.dim, level=levels[0], rho_rule=rho_rule,
                           target=Target.by_name(args.target, args.dim), path=paths[0], solver=solver,
                           quad_points=args.quad)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None
    rhos = ()
    if args.subcommand == "rho-sweep":
        rhos = _positive_floats(args.rho_values)
        if any(b > a for a, b in zip(rhos[:-1], rhos[1:])):
            raise UsageError("--rho-values must be sorted descending")
    return CliRun(args.subcommand, config, levels, paths, args.format, args.out, args.seed, jobs, rhos)


def _kv_text(pairs, fmt: str) -> str:
    if fmt == "csv":
        return "key,value\n" + "".join(f"{k},{v}\n" for k, v in pairs)
    width = max(len(k) for k, _ in pairs)
    lines = [f"| {'key'.ljust(width)} | value |", f"|{'-' * (width + 2)}|-------|"]
    lines += [f"| {k.ljust(width)} | {v} |" for k, v in pairs]
    return "\n".join(lines) + "\n"


def _run_solve(run: CliRun):
    cfg = run.config
    sol = solve_ocp(cfg)
    _, dual = recover_control(sol)
    error = boundary_l2_error(sol, cfg.target, gauss_rule(cfg.quad_points))
    pairs = [
        ("dim", str(cfg.d)), ("level", str(cfg.level)), ("dofs", str(sol.space.total_dofs)),
        ("h", repr(cfg.h)), ("rho", repr(sol.rho)), ("target", cfg.target.kind), ("path", cfg.path),
        ("iterations", str(sol.report.iterations)),
        ("inner_iterations", str(sol.report.inner_iterations_total)),
        ("final_rel_residual", format_sci(sol.report.final_rel_residual)),
        ("full_rel_residual", format_sci(full_residual(sol))),
        ("boundary_error", format_sci(error)),
        ("control_dual_norm", format_sci(dual)),
    ]
    return _kv_text(pairs, run.fmt), EXIT_OK


def _run_study(run: CliRun):
    table = run_convergence_study(run.config, run.levels, run.paths, jobs=run.jobs)
    failed = [(row.level, path, msg) for row in table.rows for path, msg in row.failures.items()]
    for level, path, msg in failed:
        print(f"level {level} {path}: {msg}", file=sys.stderr)
    return emit_table(table, run.fmt), EXIT_SOLVER if failed else EXIT_OK


def _run_sweep(run: CliRun):
    records = rho_sweep(run.config, run.levels[0], run.rhos)
    pairs = []
    for r in records:
        scaled = "" if r.h1_norm is None else format_sci(r.h1_norm * math.sqrt(r.rho))
        pairs.append([format_sci(r.rho), "" if r.boundary_error is None else format_sci(r.boundary_error),
                      "" if r.h1_norm is None else format_sci(r.h1_norm), scaled, format_sci(r.target_norm)])
    header = ["rho", "boundary_error", "h1_norm", "h1_norm_sqrt_rho", "target_norm"]
    if run.fmt == "csv":
        text = ",".join(header) + "\n" + "".join(",".join(p) + "\n" for p in pairs)
    else:
        text = "| " + " | ".join(header) + " |\n|" + "---:|" * len(header) + "\n"
        text += "".join("| " + " | ".join(c or "-" for c in p) + " |\n" for p in pairs)
    window = pre_saturation_window(records)
    if len(window) >= 2:
        slope = fit_slope([r.rho for r in window], [r.boundary_error for r in window])
        print(f"pre-saturation slope of boundary error vs rho ({len(window)} points): {slope:.3f}", file=sys.stderr)
    return text, EXIT_SOLVER if any(r.failure for r in records) else EXIT_OK


def _run_appendix(run: CliRun):
    report = verify_appendix(run.ns, shrink=run.shrink)
    lines = report.summary_lines()
    for est, func, n, observed, bound in report.violations:
        bound = "unspecified" if bound is None else f"{bound:.6g}"
        lines.append(f"violation: function={func} n={n} estimate={est} observed={observed:.6g} bound={bound}")
    return "\n".join(lines) + "\n", EXIT_OK if report.passed else EXIT_VERIFY


RUNNERS = {"solve": _run_solve, "study": _run_study, "rho-sweep": _run_sweep, "verify-appendix": _run_appendix}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        run = parse_args(argv)
    except UsageError as exc:
        build_parser().print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        text, code = RUNNERS[run.subcommand](run)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if run.out and run.out != "-":
        try:
            with open(run.out, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            print(f"cannot write {run.out}: {exc}", file=sys.stderr)
            return EXIT_USAGE
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
