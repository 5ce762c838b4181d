"""``covsteer`` command line: solve, simulate, compare, sweep-lambda, bench.

Exit codes: 0 success, 1 usage or input error, 2 solve failure, 3 I/O error.
Failures also emit one JSON diagnostics line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CovSteerError, ParseError, SolveError, ValidationError
from .history import ccp_solve, build_stacked, terminal_w2_dcp
from .io import (
    IoError,
    RunResult,
    export_results,
    problem_digest,
    solution_summary,
    step_records,
)
from .montecarlo import simulate
from .problem import CSProblem, load_problem, load_solver_options
from .sdp import SolveOptions, assemble_sdp, solve_cs

log = logging.getLogger("covsteer")

EXIT_OK, EXIT_USAGE, EXIT_SOLVE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _ints(text: str) -> list[int]:
    vals = _floats(text)
    if any(v != int(v) or v < 1 for v in vals):
        raise argparse.ArgumentTypeError("horizons must be positive integers")
    return [int(v) for v in vals]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="covsteer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"covsteer {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", required=True, help="problem file (YAML or JSON)")
        p.add_argument("--out", help="directory for JSON/CSV records and figures")
        p.add_argument("--backend", help="conic backend (clarabel, cvxopt); overrides solver.backend")
        p.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    p = sub.add_parser("solve", help="solve the steering SDP and extract the policy")
    common(p)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--dump-program", help="write the conic program as plain text")

    p = sub.add_parser("simulate", help="Monte Carlo rollouts of the optimal policy")
    common(p)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--rollouts", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("compare", help="SDP against CCP with full-causal and block-diagonal Theta")
    common(p)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--ccp-tol", type=float, default=1e-8)
    p.add_argument("--ccp-max-iter", type=int, default=200)

    p = sub.add_parser("sweep-lambda", help="terminal distance and ellipse data per weight")
    common(p)
    p.add_argument("--values", type=_floats, required=True)

    p = sub.add_parser("bench", help="solve time against horizon with a log-log slope fit")
    common(p)
    p.add_argument("--horizons", type=_ints, required=True)
    p.add_argument("--repeats", type=int, default=3)
    return parser


def _load(args) -> tuple[CSProblem, SolveOptions]:
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {args.config}: {exc}") from exc
    p = load_problem(text)
    opts = SolveOptions.from_mapping(load_solver_options(text))
    if args.backend:
        opts.backend = args.backend
    if getattr(args, "lam", None) is not None:
        p = p.with_lambda(args.lam)
    return p, opts


def _emit_table(rows: list[dict]) -> None:
    writer = csv.writer(sys.stdout)
    writer.writerow(list(rows[0].keys()))
    for r in rows:
        writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in r.values()])


def _plots_enabled(args) -> bool:
    return bool(args.out) and not args.no_plots


def cmd_solve(args) -> int:
    p, opts = _load(args)
    if args.dump_program:
        prog, _ = assemble_sdp(p, opts.redundant_cones)
        try:
            Path(args.dump_program).write_text(prog.dump())
        except OSError as exc:
            raise IoError(str(exc)) from exc
    sol = solve_cs(p, opts)
    rr = RunResult(
        command="solve",
        problem_digest=problem_digest(p),
        options={"lambda": p.lam, "backend": opts.backend,
                 "tolerances": vars(opts.tolerances)},
        summary=solution_summary(sol),
        timings_ms=sol.timings,
    )
    if args.out:
        out = Path(args.out)
        export_results(rr, out / "result.json")
        export_results(rr, out / "trajectory.csv", "csv")
        if _plots_enabled(args):
            from .plotting import plot_trajectory

            plot_trajectory(out / "trajectory.png", sol.trajectory.mu, sol.trajectory.Sigma,
                            p.desired.mean, p.desired.covariance, f"lambda = {p.lam:g}")
    else:
        json.dump(rr.to_dict(), sys.stdout, indent=2)
        sys.stdout.write("\n")
    if args.out:
        _emit_table([{"J_sdp": sol.J_sdp, "J_mean": sol.J_mean, "J_cov": sol.J_cov,
                      "terminal_w2": sol.terminal_w2, "q_norm_max": sol.q_norm_max}])
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.rollouts < 2:
        raise UsageError("--rollouts must be at least 2")
    p, opts = _load(args)
    sol = solve_cs(p, opts)
    t0 = time.perf_counter()
    stats = simulate(p, sol.policy, args.rollouts, args.seed)
    elapsed = 1e3 * (time.perf_counter() - t0)
    rr = RunResult(
        command="simulate",
        problem_digest=problem_digest(p),
        options={"lambda": p.lam, "rollouts": args.rollouts, "seed": args.seed,
                 "backend": opts.backend},
        summary={
            "terminal_w2_empirical": stats.terminal_w2,
            "terminal_w2_analytic": sol.terminal_w2,
            "steps": step_records(stats.sample_mean, stats.sample_cov),
            "analytic_steps": step_records(sol.trajectory.mu, sol.trajectory.Sigma),
        },
        timings_ms={**sol.timings, "simulate": elapsed},
    )
    if args.out:
        out = Path(args.out)
        export_results(rr, out / "rollouts.json")
        export_results(stats, out / "rollouts.csv", "csv")
        if _plots_enabled(args):
            from .plotting import plot_rollouts

            plot_rollouts(out / "rollouts.png", stats.sample_mean, stats.sample_cov,
                          sol.trajectory.mu, sol.trajectory.Sigma,
                          p.desired.mean, p.desired.covariance)
    _emit_table([{"rollouts": args.rollouts, "seed": args.seed,
                  "terminal_w2_empirical": stats.terminal_w2,
                  "terminal_w2_analytic": sol.terminal_w2}])
    return EXIT_OK


def compare_table(p: CSProblem, opts: SolveOptions, ccp_tol=1e-8, ccp_max_iter=200) -> list[dict]:
    rows = []
    t0 = time.perf_counter()
    sol = solve_cs(p, opts)
    rows.append({"method": "sdp", "J": sol.J_sdp, "terminal_w2": sol.terminal_w2,
                 "time_ms": 1e3 * (time.perf_counter() - t0), "iterations": sol.conic.iterations,
                 "converged": True})
    stacked = build_stacked(p)
    for structure, name in (("full-causal", "ccp_full"), ("block-diagonal", "ccp_blockdiag")):
        t0 = time.perf_counter()
        res = ccp_solve(p, structure, tol=ccp_tol, max_iter=ccp_max_iter, stacked=stacked)
        rows.append({"method": name, "J": res.J,
                     "terminal_w2": terminal_w2_dcp(stacked, res.v, res.Theta, p),
                     "time_ms": 1e3 * (time.perf_counter() - t0), "iterations": res.iterations,
                     "converged": res.converged})
    return rows


def cmd_compare(args) -> int:
    p, opts = _load(args)
    rows = compare_table(p, opts, args.ccp_tol, args.ccp_max_iter)
    if rows[0]["J"] > min(r["J"] for r in rows[1:]) + 1e-6:
        log.error("SDP objective exceeds a CCP objective; solver accuracy is suspect")
    if args.out:
        out = Path(args.out)
        export_results(rows, out / "compare.csv", "csv")
        export_results({"command": "compare", "problem_digest": problem_digest(p),
                        "lambda": p.lam, "table": rows}, out / "compare.json")
        if _plots_enabled(args):
            from .plotting import plot_compare

            plot_compare(out / "compare.png", rows)
    _emit_table(rows)
    return EXIT_OK


def sweep(p: CSProblem, opts: SolveOptions, values) -> list[tuple]:
    results = []
    for lam in values:
        sol = solve_cs(p.with_lambda(lam), opts)
        results.append((lam, sol))
    return results


def cmd_sweep(args) -> int:
    p, opts = _load(args)
    if any(v <= 0 for v in args.values):
        raise UsageError("lambda values must be positive")
    results = sweep(p, opts, args.values)
    rows = [{"lambda": lam, "terminal_w2": s.terminal_w2, "J_sdp": s.J_sdp,
             "q_norm_max": s.q_norm_max} for lam, s in results]
    if args.out:
        out = Path(args.out)
        export_results(rows, out / "sweep.csv", "csv")
        record = {"command": "sweep-lambda", "problem_digest": problem_digest(p), "runs": [
            {**row, "steps": step_records(s.trajectory.mu, s.trajectory.Sigma)}
            for row, (_, s) in zip(rows, results)]}
        export_results(record, out / "sweep.json")
        for lam, s in results:
            export_results({"steps": step_records(s.trajectory.mu, s.trajectory.Sigma)},
                           out / f"sweep_lambda_{lam:g}.csv", "csv")
        if _plots_enabled(args):
            from .plotting import plot_sweep

            plot_sweep(out / "sweep.png",
                       [(lam, s.trajectory.mu, s.trajectory.Sigma, s.terminal_w2) for lam, s in results],
                       p.desired.mean, p.desired.covariance)
    _emit_table(rows)
    return EXIT_OK


def bench(p: CSProblem, opts: SolveOptions, horizons, repeats: int = 3):
    """Median conic solve time per horizon and the fitted log-log slope."""
    from .problem import problem_from_mapping, problem_to_mapping

    base = problem_to_mapping(p)
    if any(np.ndim(base[key]) == 3 for key in ("A", "B", "W", "R")):
        raise UsageError("bench needs a time-invariant problem to vary the horizon")
    times = []
    for N in horizons:
        pN = problem_from_mapping({**base, "N": N})
        samples = [solve_cs(pN, opts).timings["conic_solve"] for _ in range(repeats)]
        times.append(float(np.median(samples)))
    slope, intercept = (np.polyfit(np.log(horizons), np.log(times), 1)
                        if len(horizons) > 1 else (float("nan"), float("nan")))
    return times, float(slope), float(intercept)


def cmd_bench(args) -> int:
    p, opts = _load(args)
    times, slope, intercept = bench(p, opts, args.horizons, args.repeats)
    rows = [{"N": N, "time_ms": t} for N, t in zip(args.horizons, times)]
    if args.out:
        out = Path(args.out)
        export_results(rows, out / "bench.csv", "csv")
        export_results({"command": "bench", "backend": opts.backend, "repeats": args.repeats,
                        "table": rows, "loglog_slope": slope,
                        "reference_slope": 3.0}, out / "bench.json")
        if _plots_enabled(args) and len(times) > 1:
            from .plotting import plot_bench

            plot_bench(out / "bench.png", args.horizons, np.array(times), slope, intercept)
    _emit_table(rows)
    print(f"# backend={opts.backend} loglog_slope={slope:.4f} reference=3")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "sweep-lambda": cmd_sweep,
    "bench": cmd_bench,
}


def _diag(kind: str, exc: BaseException, **extra) -> None:
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc), **extra}
    sys.stderr.write(json.dumps(rec) + "\n")


def run_command(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
    except UsageError as exc:
        _diag("usage", exc)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        _diag("usage", exc)
        return EXIT_USAGE
    except (ParseError, ValidationError) as exc:
        _diag("input", exc)
        return EXIT_USAGE
    except (IoError, OSError) as exc:
        _diag("io", exc)
        return EXIT_IO
    except SolveError as exc:
        _diag("solve", exc, stage=exc.stage, status=exc.status)
        return EXIT_SOLVE
    except CovSteerError as exc:
        _diag("solve", exc)
        return EXIT_SOLVE


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
