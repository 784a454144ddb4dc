"""Command-line front end: single runs, multi-scheme error comparisons,
strong-order convergence studies, and QSD ensembles.  All output is CSV,
byte-reproducible from the flags and the seed.

Exit codes: 0 success, 2 argument errors, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys as _sys

import numpy as np

from .driver import StepController, StiffnessError, integrate_adaptive, integrate_fixed
from .noise import RngStream, WienerGrid, coarsen
from .problems import PROBLEM_NAMES, PoleProximityError, make_problem
from .qsd import AbsorberModel, run_ensemble
from .steppers import SchemeId
from .system import SdeError

__all__ = ["main", "write_csv", "fmt"]


def fmt(v) -> str:
    """Format one CSV cell: floats with 17 significant digits, rest as str."""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(rows, path: str | None) -> None:
    """Write rows (header first) as comma-separated text with LF newlines.

    ``path`` of None writes to stdout.  I/O failures are re-raised with the
    offending path in the message.
    """
    text = "".join(",".join(fmt(v) for v in row) + "\n" for row in rows)
    if path is None:
        _sys.stdout.write(text)
        return
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path!r}: {exc}") from exc


def _seed(text: str) -> int:
    try:
        return int(text, 0)  # decimal or 0x-prefixed hex
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None


def _schemes(text: str) -> list[SchemeId]:
    try:
        return [SchemeId.from_name(s.strip()) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=_seed, default=0, help="decimal or 0x-hex RNG seed")
    p.add_argument("--out", default=None, help="output CSV path (default stdout)")
    p.add_argument("--stride", type=int, default=1, help="record every k-th step")


def _problem_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--problem", required=True, choices=PROBLEM_NAMES)
    p.add_argument("--preset", default=None, help="named parameter preset (geom2: fig2-like)")
    p.add_argument("--T", type=float, default=1.0, help="end time")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sderk",
        description="Strong-solution SDE integration harness (CSV output).",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="integrate one trajectory")
    _problem_args(run)
    run.add_argument("--scheme", default="srk4")
    run.add_argument("--dt", type=float, default=None, help="fixed step size")
    run.add_argument("--atol", type=float, default=None, help="adaptive absolute tolerance")
    run.add_argument("--rtol", type=float, default=None, help="adaptive relative tolerance")
    _add_common(run)

    cmp_ = sub.add_parser("compare", help="per-scheme error vs time on one shared path")
    _problem_args(cmp_)
    cmp_.add_argument("--schemes", type=_schemes, default=_schemes("em,milstein,srk2,srk4"))
    cmp_.add_argument("--dt", type=float, default=None, help="step size (default: paper value)")
    cmp_.add_argument("--component", type=int, default=0, help="state component to plot")
    _add_common(cmp_)

    conv = sub.add_parser("converge", help="strong-order study on dyadic steps, fixed path")
    _problem_args(conv)
    conv.add_argument("--schemes", type=_schemes, default=_schemes("em,milstein,srk2,srk4"))
    conv.add_argument("--coarsest", type=int, default=8, help="largest step is T/2^coarsest")
    conv.add_argument("--finest", type=int, default=13, help="smallest step is T/2^finest")
    _add_common(conv)

    qsd = sub.add_parser("qsd", help="nonlinear-absorber trajectory ensemble")
    qsd.add_argument("--traj", type=int, default=1000, help="number of trajectories M")
    qsd.add_argument("--T", type=float, default=5.0)
    qsd.add_argument("--nmax", type=int, default=30)
    qsd.add_argument("--noise", choices=("complex", "real"), default="complex")
    qsd.add_argument("--drive", type=float, default=0.1)
    qsd.add_argument("--nout", type=int, default=101, help="uniform output times")
    qsd.add_argument("--workers", type=int, default=1)
    _add_common(qsd)

    return ap


def _cmd_run(args) -> int:
    problem = make_problem(args.problem, preset=args.preset)
    fixed = args.dt is not None
    adaptive = args.atol is not None or args.rtol is not None
    if fixed == adaptive:
        _sys.stderr.write("error: give exactly one of --dt or --atol/--rtol\n")
        return 2
    rng = RngStream(args.seed)
    if fixed:
        traj = integrate_fixed(problem.sys, problem.x0, problem.t0,
                               problem.t0 + args.T, args.dt,
                               SchemeId.from_name(args.scheme), rng,
                               stride=args.stride)
    else:
        atol = args.atol if args.atol is not None else 1e-8
        rtol = args.rtol if args.rtol is not None else atol
        ctrl = StepController(atol=atol, rtol=rtol)
        traj = integrate_adaptive(problem.sys, problem.x0, problem.t0,
                                  problem.t0 + args.T, ctrl, rng,
                                  stride=args.stride)
    n, m = problem.sys.n, problem.sys.m
    header = (["t"] + [f"x{j + 1}" for j in range(n)] + [f"w{k + 1}" for k in range(m)]
              + ["dt_used", "rejected_flag"])
    rows: list[list] = [header]
    for i in range(traj.t.shape[0]):
        rows.append([traj.t[i], *traj.x[i], *traj.w[i], traj.dt_used[i], int(traj.rejected[i])])
    write_csv(rows, args.out)
    return 0


def _cmd_compare(args) -> int:
    problem = make_problem(args.problem, preset=args.preset)
    dt = args.dt if args.dt is not None else problem.dt_paper
    n_steps = max(1, round(args.T / dt))
    rng = RngStream(args.seed)
    grid = WienerGrid.sample(rng, problem.t0, dt, n_steps, problem.sys.m)

    truncated_at = None
    try:
        exact = problem.exact_path(grid)
    except PoleProximityError as exc:
        # truncate the grid just before the pole and emit what we can
        bad = max(0, int(round((exc.t - problem.t0) / dt)) - 1)
        truncated_at = exc
        grid = WienerGrid(problem.t0, dt, grid.increments[:bad])
        exact = problem.exact_path(grid)

    cols = {}
    skipped = []
    for scheme in args.schemes:
        try:
            traj = integrate_fixed(problem.sys, problem.x0, problem.t0,
                                   scheme=scheme, grid=grid)
        except SdeError as exc:
            skipped.append((scheme, exc))
            _sys.stderr.write(f"warning: scheme {scheme.value} failed: {exc}\n")
            continue
        err = np.abs(traj.x[:, args.component] - exact[:, args.component])
        with np.errstate(divide="ignore"):
            cols[scheme] = np.log10(err)
    if not cols:
        _sys.stderr.write("error: all schemes failed\n")
        return 3
    header = ["t"] + [f"log10_abs_err_{s.value}" for s in cols]
    rows: list[list] = [header]
    times = grid.times()
    indices = list(range(0, times.shape[0], max(1, args.stride)))
    if indices[-1] != times.shape[0] - 1:
        indices.append(times.shape[0] - 1)
    for i in indices:
        rows.append([times[i]] + [cols[s][i] for s in cols])
    if truncated_at is not None:
        rows.append([f"# truncated: {truncated_at}"])
    write_csv(rows, args.out)
    return 0


def _fit_slope(dts: np.ndarray, errs: np.ndarray) -> float:
    lx = np.log2(dts)
    ly = np.log2(errs)
    lx = lx - lx.mean()
    return float((lx @ (ly - ly.mean())) / (lx @ lx))


def _cmd_converge(args) -> int:
    if args.finest <= args.coarsest:
        _sys.stderr.write("error: --finest must exceed --coarsest\n")
        return 2
    if args.finest - args.coarsest < 3:
        _sys.stderr.write("error: need at least 4 dyadic levels\n")
        return 2
    problem = make_problem(args.problem, preset=args.preset)
    rng = RngStream(args.seed)
    dt_fine = args.T / 2 ** args.finest
    fine = WienerGrid.sample(rng, problem.t0, dt_fine, 2 ** args.finest, problem.sys.m)
    x_exact = problem.exact_path(fine)[-1]

    exps = list(range(args.coarsest, args.finest + 1))
    errs: dict[SchemeId, list[float]] = {s: [] for s in args.schemes}
    for e in exps:
        grid = coarsen(fine, 2 ** (args.finest - e))
        for scheme in args.schemes:
            traj = integrate_fixed(problem.sys, problem.x0, problem.t0,
                                   scheme=scheme, grid=grid, stride=grid.n_steps)
            errs[scheme].append(float(np.linalg.norm(traj.x_end - x_exact)))

    header = ["dt"] + [f"err_{s.value}" for s in args.schemes]
    rows: list[list] = [header]
    for i, e in enumerate(exps):
        row: list = [args.T / 2 ** e]
        for s in args.schemes:
            v = errs[s][i]
            row.append(v if v > 0.0 else "below-floor")
        rows.append(row)
    slope_row: list = ["slope"]
    for s in args.schemes:
        dts = np.array([args.T / 2 ** e for e in exps])
        ev = np.array(errs[s])
        keep = ev > 1e-14
        if not keep.all():
            _sys.stderr.write(
                f"note: {int((~keep).sum())} level(s) of {s.value} below the 1e-14 "
                "floor were excluded from the fit\n")
        if keep.sum() >= 2:
            slope_row.append(_fit_slope(dts[keep], ev[keep]))
        else:
            slope_row.append("nan")
    rows.append(slope_row)
    write_csv(rows, args.out)
    return 0


def _cmd_qsd(args) -> int:
    model = AbsorberModel(drive=args.drive, noise_kind=args.noise, n_max=args.nmax)
    stats = run_ensemble(model, t_end=args.T, m_traj=args.traj, seed=args.seed,
                         n_out=args.nout, workers=args.workers)
    mean = stats.mean()
    err = stats.stderr()
    rows: list[list] = [["t", "n_mean", "n_stderr", "M"]]
    idx = list(range(0, stats.times.shape[0], max(1, args.stride)))
    if idx[-1] != stats.times.shape[0] - 1:
        idx.append(stats.times.shape[0] - 1)
    for i in idx:
        rows.append([stats.times[i], mean[i], err[i], stats.count])
    write_csv(rows, args.out)
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "compare": _cmd_compare,
    "converge": _cmd_converge,
    "qsd": _cmd_qsd,
}


def main(argv=None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (SdeError, StiffnessError) as exc:
        _sys.stderr.write(f"numerical failure: {exc}\n")
        return 3
    except ValueError as exc:
        _sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
