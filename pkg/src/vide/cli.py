"""Command line front end.

    vide solve --example 7 --tol 1e-6
    vide solve --file problem.txt --tol 1e-10 --mode rel --dump-nodes out.txt
    vide tables --subset 1,2,3 --csv tables.csv
    vide convergence --example 8 --orders 1,2,3 --levels 5

Exit codes: 0 success, 1 invalid input or problem, 2 tolerance not reached,
3 evaluator domain error or overflow during the solve.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import expr as ex
from .problem import (
    REFERENCE_NODE_COUNTS,
    ProblemError,
    ProblemSpec,
    builtin,
    catalog_ids,
    load_path,
    with_interval,
)
from .richardson import (
    COEFFICIENTS,
    ToleranceUnattainable,
    build_tower,
    extrapolate,
    solve_tolerance,
)
from .solver import SolverError
from .transform import to_unit

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_TOLERANCE = 2
EXIT_DOMAIN = 3

TABLE_HEADER = ["example", "N1", "N2", "err1", "err2", "ms1", "ms2"]


class UsageError(Exception):
    pass


@dataclass
class RunRecord:
    problem: str
    epsilon: float
    mode: str
    N_selected: int
    h_selected: float
    error_estimate: float
    error_exact: float | None
    wall_ms: float


def _csv_real(value: float | None) -> str:
    return "" if value is None else f"{value:.17g}"


def _console_real(value: float | None) -> str:
    return "-" if value is None else f"{value:.6g}"


def write_records(records: Sequence[RunRecord], fh) -> None:
    names = [f.name for f in fields(RunRecord)]
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(names)
    for rec in records:
        row = []
        for name in names:
            value = getattr(rec, name)
            row.append(_csv_real(value) if isinstance(value, float) or value is None else str(value))
        writer.writerow(row)


def read_records(fh) -> list[RunRecord]:
    out = []
    for row in csv.DictReader(fh):
        out.append(
            RunRecord(
                problem=row["problem"],
                epsilon=float(row["epsilon"]),
                mode=row["mode"],
                N_selected=int(row["N_selected"]),
                h_selected=float(row["h_selected"]),
                error_estimate=float(row["error_estimate"]),
                error_exact=float(row["error_exact"]) if row["error_exact"] else None,
                wall_ms=float(row["wall_ms"]),
            )
        )
    return out


# --------------------------------------------------------------------------- helpers

def _parse_ids(text: str, what: str) -> list[int]:
    try:
        return [int(a) for a in text.replace(" ", "").split(",") if a]
    except ValueError:
        raise UsageError(f"{what}: expected comma separated integers, got {text!r}") from None


def _get_example(id: int) -> ProblemSpec:
    if id not in catalog_ids():
        raise UsageError(f"unknown example {id} (choose 1..{max(catalog_ids())})")
    return builtin(id)


def _max_exact_error(spec: ProblemSpec, x: np.ndarray, y: np.ndarray) -> float | None:
    if not spec.has_exact:
        return None
    err = 0.0
    for c in range(spec.dim):
        ref = np.array([spec.exact[c](float(v)) for v in x])
        err = max(err, float(np.max(np.abs(y[c] - ref))))
    return err


def run_problem(
    spec: ProblemSpec,
    epsilon: float,
    mode: str = "abs",
    label: str = "",
    interval: tuple[float, float] | None = None,
    **options,
) -> tuple[RunRecord, np.ndarray, np.ndarray]:
    """Solve to tolerance; returns the record plus physical nodes and Y3 values."""
    start = time.perf_counter()
    if interval is not None:
        spec = with_interval(spec, *interval)
        unit, imap = to_unit(spec)
        sol, rep = solve_tolerance(unit, epsilon, mode, **options)
        # coarse-node values carry over unchanged: y(m*s + x0) = y~(s)
        x, y = imap.forward(sol.x), sol.y
    else:
        sol, rep = solve_tolerance(spec, epsilon, mode, **options)
        x, y = sol.x, sol.y
    wall_ms = (time.perf_counter() - start) * 1e3
    record = RunRecord(
        problem=label or spec.name or "problem",
        epsilon=float(epsilon),
        mode=mode,
        N_selected=rep.N_selected,
        h_selected=rep.h_selected * (spec.length if interval is not None else 1.0),
        error_estimate=rep.error_estimate,
        error_exact=_max_exact_error(spec, x, y),
        wall_ms=wall_ms,
    )
    return record, x, y


def _print_record(rec: RunRecord, out) -> None:
    print(
        f"problem={rec.problem}  eps={_console_real(rec.epsilon)}  mode={rec.mode}  "
        f"N={rec.N_selected}  h={_console_real(rec.h_selected)}  "
        f"estimate={_console_real(rec.error_estimate)}  "
        f"error_vs_exact={_console_real(rec.error_exact)}  time={rec.wall_ms:.1f}ms",
        file=out,
    )


# --------------------------------------------------------------------------- commands

def cmd_solve(args, out=sys.stdout) -> int:
    if (args.example is None) == (args.file is None):
        raise UsageError("give exactly one of --example or --file")
    if args.example is not None:
        spec = _get_example(args.example)
        label = f"example {args.example}"
    else:
        spec = load_path(args.file)
        label = spec.name or Path(args.file).name
    interval = tuple(args.interval) if args.interval else None
    options = {}
    if args.pilot is not None:
        options["n_pilot"] = args.pilot
    if args.sigma is not None:
        options["sigma"] = args.sigma
    rec, x, y = run_problem(spec, args.tol, args.mode, label, interval, **options)
    _print_record(rec, out)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            write_records([rec], fh)
    if args.dump_nodes:
        with open(args.dump_nodes, "w") as fh:
            for i in range(len(x)):
                fh.write(" ".join(f"{v:.17g}" for v in (x[i], *y[:, i])) + "\n")
    return EXIT_OK


@dataclass
class TableRow:
    example: int
    N1: int | None = None
    N2: int | None = None
    err1: float | str | None = None
    err2: float | str | None = None
    ms1: float | None = None
    ms2: float | None = None


def _table_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return _csv_real(value)
    return str(value)


def read_table(fh) -> list[TableRow]:
    rows = []

    def num(text, kind):
        if text == "":
            return None
        try:
            return kind(text)
        except ValueError:
            return text

    for r in csv.DictReader(fh):
        rows.append(
            TableRow(
                example=int(r["example"]),
                N1=num(r["N1"], int),
                N2=num(r["N2"], int),
                err1=num(r["err1"], float),
                err2=num(r["err2"], float),
                ms1=num(r["ms1"], float),
                ms2=num(r["ms2"], float),
            )
        )
    return rows


def table_rows(ids: Sequence[int]) -> list[TableRow]:
    rows = []
    for id in sorted(ids):
        spec = _get_example(id)
        row = TableRow(example=id)
        for tag, eps in (("1", 1e-6), ("2", 1e-12)):
            try:
                rec, _, _ = run_problem(spec, eps, "abs", f"example {id}")
            except (ToleranceUnattainable, SolverError) as exc:
                setattr(row, "err" + tag, f"failed: {type(exc).__name__}: {exc}")
                continue
            setattr(row, "N" + tag, rec.N_selected)
            # approximate references get no error column
            setattr(row, "err" + tag, rec.error_exact)
            setattr(row, "ms" + tag, rec.wall_ms)
        rows.append(row)
    return rows


def cmd_tables(args, out=sys.stdout) -> int:
    ids = _parse_ids(args.subset, "--subset") if args.subset else catalog_ids()
    for id in ids:
        _get_example(id)
    rows = table_rows(ids)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TABLE_HEADER)
            for row in rows:
                writer.writerow([_table_cell(getattr(row, k)) for k in TABLE_HEADER])
    print(
        f"{'#':>3} {'N1':>7} {'ref':>6} {'N2':>7} {'ref':>6} {'N2/N1':>7} "
        f"{'err1':>12} {'err2':>12} {'ms1':>9} {'ms2':>9}",
        file=out,
    )
    for row in rows:
        p1, p2 = REFERENCE_NODE_COUNTS[row.example]
        ratio = f"{row.N2 / row.N1:.1f}" if row.N1 and row.N2 else "-"

        def e(v):
            return v[:12] if isinstance(v, str) else _console_real(v)

        def ms(v):
            return "-" if v is None else f"{v:.1f}"

        print(
            f"{row.example:>3} {row.N1 if row.N1 is not None else '-':>7} {p1:>6} "
            f"{row.N2 if row.N2 is not None else '-':>7} {p2:>6} {ratio:>7} "
            f"{e(row.err1):>12} {e(row.err2):>12} {ms(row.ms1):>9} {ms(row.ms2):>9}",
            file=out,
        )
    return EXIT_OK


def convergence_table(spec: ProblemSpec, orders: Sequence[int], levels: int, n0: int = 8):
    """Max-node error against the exact solution for N = n0 * 2^k, k < levels.

    Returns (Ns, errors, slopes) where errors[order] is a list over N and
    slopes[order] holds the log2 ratios of consecutive errors.
    """
    Ns = [n0 * 2**k for k in range(levels)]
    errors: dict[int, list[float]] = {p: [] for p in orders}
    for N in Ns:
        tower = extrapolate(build_tower(spec, N))
        x = tower.base.nodes
        for p in orders:
            errors[p].append(_max_exact_error(spec, x, tower.solution(p)))
    slopes = {
        p: [
            math.log2(e[k] / e[k + 1]) if e[k + 1] > 0 and e[k] > 0 else math.nan
            for k in range(len(e) - 1)
        ]
        for p, e in errors.items()
    }
    return Ns, errors, slopes


def cmd_convergence(args, out=sys.stdout) -> int:
    orders = _parse_ids(args.orders, "--orders")
    supported = {1, *COEFFICIENTS}
    bad = [p for p in orders if p not in supported]
    if bad or not orders:
        raise UsageError(f"unsupported order(s) {bad or orders}; choose from 1..5")
    if args.levels < 2:
        raise UsageError("--levels must be at least 2")
    spec = _get_example(args.example)
    if not spec.has_exact:
        raise UsageError(
            f"example {args.example} has no exact reference solution; convergence needs one"
        )
    Ns, errors, slopes = convergence_table(spec, orders, args.levels, args.n0)
    head = f"{'N':>7}" + "".join(f" {'err(p=%d)' % p:>12} {'slope':>6}" for p in orders)
    print(head, file=out)
    for k, N in enumerate(Ns):
        line = f"{N:>7}"
        for p in orders:
            s = "" if k == 0 else f"{slopes[p][k - 1]:.2f}"
            line += f" {errors[p][k]:>12.4e} {s:>6}"
        print(line, file=out)
    return EXIT_OK


# --------------------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vide", description="Euler/Richardson solver for Volterra integro-differential equations"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a catalog or file problem to a tolerance")
    p.add_argument("--example", type=int, help="catalog example id (1..14)")
    p.add_argument("--file", help="problem-definition file (key/value or JSON)")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--mode", choices=("abs", "rel"), default="abs")
    p.add_argument("--interval", type=float, nargs=2, metavar=("A", "B"),
                   help="pose the problem on [A, B] and solve via the unit interval")
    p.add_argument("--pilot", type=int, help="pilot grid steps")
    p.add_argument("--sigma", type=float, help="safety factor")
    p.add_argument("--dump-nodes", help="write 'x y1 .. yd' per coarse node")
    p.add_argument("--csv", help="write the run record as CSV")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("tables", help="reproduce the node-count tables")
    p.add_argument("--subset", help="comma separated example ids")
    p.add_argument("--csv", help="write the table as CSV")
    p.set_defaults(func=cmd_tables)

    p = sub.add_parser("convergence", help="empirical convergence slopes")
    p.add_argument("--example", type=int, required=True)
    p.add_argument("--orders", default="1,2,3,4,5")
    p.add_argument("--levels", type=int, default=5)
    p.add_argument("--n0", type=int, default=8, help="coarsest grid steps")
    p.set_defaults(func=cmd_convergence)
    return parser


def main(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    pkg_log = logging.getLogger("vide")
    handler = None
    if args.verbose:
        handler = logging.StreamHandler(err)
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        pkg_log.addHandler(handler)
        pkg_log.setLevel(logging.DEBUG)
    try:
        return _dispatch(args, out, err)
    finally:
        if handler is not None:
            pkg_log.removeHandler(handler)
            pkg_log.setLevel(logging.NOTSET)


def _dispatch(args, out, err) -> int:
    try:
        return args.func(args, out)
    except ToleranceUnattainable as exc:
        print(f"error: tolerance not reached: {exc}", file=err)
        return EXIT_TOLERANCE
    except (SolverError, ex.DomainError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_DOMAIN
    except (UsageError, ProblemError, ex.ExprError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INVALID

if __name__ == "__main__":
    sys.exit(main())
