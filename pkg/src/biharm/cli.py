"""Command-line driver: ``python -m biharm {solve,sigma-scan,audit}``."""
import argparse
import logging
import math
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .adapt import MarkingStrategy, adaptive_loop, mark, verify_marking
from .c0ipg import DEFAULT_SIGMA, IndefiniteSystemError, sigma_star
from .mesh import MeshError, RefinementError, audit_conformity, refine, shape_regularity
from .problems import get_problem, registry
from .vtk import write_vtk

log = logging.getLogger("biharm")


def eoc_rows(ndof, eta, err):
    """Rows (level, ndof, η, error, rate); rate_i = −2 log(e_i/e_{i−1}) / log(N_i/N_{i−1})."""
    rows = []
    for i, (n, e, r) in enumerate(zip(ndof, eta, err)):
        rate = float("nan")
        if i and r is not None and err[i - 1] is not None and r > 0 and err[i - 1] > 0 \
                and n != ndof[i - 1]:
            rate = -2 * math.log(r / err[i - 1]) / math.log(n / ndof[i - 1])
        rows.append((i, n, e, r, rate))
    return rows


def format_eoc(rows):
    out = [f"{'level':>5} {'ndof':>9} {'eta':>12} {'error':>12} {'rate':>7}"]
    for i, n, e, r, rate in rows:
        rs = "" if r is None else f"{r:.5e}"
        out.append(f"{i:>5} {n:>9} {e:>12.5e} {rs:>12} {rate:>7.3f}")
    return "\n".join(out)


def _thread_limit():
    n = os.environ.get("BIHARM_THREADS")
    if not n:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        log.warning("threadpoolctl unavailable; BIHARM_THREADS ignored")
        return nullcontext()
    return threadpool_limits(limits=int(n))


def _cmd_solve(args):
    problem = get_problem(args.problem)
    strategy = MarkingStrategy("maximum" if args.marking == "max" else "doerfler", args.theta)
    callback = None
    if args.vtk:
        outdir = Path(args.vtk)
        outdir.mkdir(parents=True, exist_ok=True)

        def callback(k, mesh, u, est):
            write_vtk(outdir / f"iter_{k:03d}.vtk", u, {"eta": est.eta})

    runlog = adaptive_loop(
        problem, args.sigma, strategy, max_dofs=args.max_dofs, max_iters=args.max_iters,
        eta_tol=args.eta_tol, bisections=args.bisections, quad_degree=args.quad_degree,
        uniform=args.uniform, csv_path=args.out, callback=callback)
    recs = runlog.records
    print(format_eoc(eoc_rows([r.ndof for r in recs], [r.eta_total for r in recs],
                              [r.energy_err for r in recs])))
    print(f"stop: {runlog.stop_reason}")
    return 0


def _cmd_sigma_scan(args):
    problem = get_problem(args.problem)
    s = sigma_star(problem.mesh(), args.sigma_from, args.sigma_to)
    print(f"sigma* = {s:.6g}")
    return 0


def _cmd_audit(args):
    """Randomized mark/refine and marking-admissibility rounds."""
    rng = np.random.default_rng(args.seed)
    problem = get_problem(args.problem)
    mesh = problem.mesh()
    angle0 = shape_regularity(mesh)
    worst = angle0
    for _ in range(args.rounds):
        if mesh.nelements > 2000:
            mesh = problem.mesh()
        marked = np.flatnonzero(rng.random(mesh.nelements) < rng.uniform(0.05, 0.5))
        mesh = refine(mesh, marked)
        audit_conformity(mesh)
        worst = min(worst, shape_regularity(mesh))
        eta = rng.random(int(rng.integers(1, 201)))
        theta = float(rng.choice([0.1, 0.3, 0.5, 0.7, 0.9]))
        for kind in ("maximum", "doerfler"):
            st = MarkingStrategy(kind, theta)
            if not verify_marking(eta, mark(eta, st), st.g).passed:
                print(f"marking check failed ({kind}, theta={theta})")
                return 1
    print(f"rounds={args.rounds} min_angle={worst:.4f} initial={angle0:.4f}")
    return 0 if worst >= 0.5 * angle0 else 1


def build_parser():
    p = argparse.ArgumentParser(prog="biharm", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="adaptive or uniform C0IP run")
    s.add_argument("--problem", required=True, choices=registry())
    s.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    s.add_argument("--theta", type=float, default=0.5)
    s.add_argument("--marking", choices=("max", "doerfler"), default="max")
    s.add_argument("--bisections", type=int, default=1)
    s.add_argument("--max-dofs", type=int)
    s.add_argument("--max-iters", type=int)
    s.add_argument("--eta-tol", type=float)
    s.add_argument("--uniform", action="store_true")
    s.add_argument("--out", help="CSV path")
    s.add_argument("--vtk", help="directory for per-iteration VTK files")
    s.add_argument("--quad-degree", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_solve)

    q = sub.add_parser("sigma-scan", help="empirical coercivity threshold on the initial mesh")
    q.add_argument("--problem", required=True, choices=registry())
    q.add_argument("--from", dest="sigma_from", type=float, default=0.5)
    q.add_argument("--to", dest="sigma_to", type=float, default=40.0)
    q.set_defaults(func=_cmd_sigma_scan)

    a = sub.add_parser("audit", help="randomized mesh and marking checks")
    a.add_argument("--problem", default="square-smooth", choices=registry())
    a.add_argument("--rounds", type=int, default=100)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=_cmd_audit)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "solve":
        if args.max_dofs is None and args.max_iters is None and args.eta_tol is None:
            parser.error("solve needs at least one of --max-dofs, --max-iters, --eta-tol")
        if not 0 < args.theta < 1:
            parser.error("--theta must lie in (0, 1)")
        if args.bisections < 1 or args.quad_degree < 1:
            parser.error("--bisections and --quad-degree must be positive")
    try:
        with _thread_limit():
            return args.func(args)
    except (IndefiniteSystemError, RefinementError, MeshError, ValueError) as exc:
        print(f"biharm: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
