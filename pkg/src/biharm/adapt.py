"""Marking strategies and the SOLVE -> ESTIMATE -> MARK -> REFINE loop."""
import csv
import math
import time
from dataclasses import dataclass, field, asdict
from typing import List, NamedTuple, Optional

import numpy as np

from .c0ipg import DEFAULT_SIGMA, assemble, energy_error, solve
from .estimator import estimate, oscillation
from .femspace import DofMap
from .mesh import mesh_size, refine

CSV_COLUMNS = ["iter", "nelem", "ndof", "eta_total", "eta_max", "energy_err", "hmax",
               "sigma", "theta", "strategy", "wall_ms"]


@dataclass(frozen=True)
class MarkingStrategy:
    kind: str = "maximum"
    theta: float = 0.5

    def __post_init__(self):
        if self.kind not in ("maximum", "doerfler"):
            raise ValueError(f"unknown marking strategy {self.kind!r}")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")

    def g(self, x):
        """Admissibility function: unmarked η(K) never exceeds g(η(M))."""
        if self.kind == "maximum":
            return self.theta * x
        return x * math.sqrt((1 - self.theta**2) / self.theta**2)


def _l2(x):
    """Euclidean norm that survives tiny entries (scaled before squaring)."""
    top = float(np.max(x, initial=0.0))
    return top * math.sqrt(float(np.sum((x / top) ** 2))) if top > 0 else 0.0


def mark(eta, strategy: MarkingStrategy):
    """Indices of marked elements (sorted)."""
    eta = np.asarray(eta, dtype=float)
    if eta.size == 0 or not np.any(eta > 0):
        return np.zeros(0, dtype=np.int64)
    if strategy.kind == "maximum":
        return np.flatnonzero(eta >= strategy.theta * eta.max())
    order = np.lexsort((np.arange(eta.size), -eta))
    cum = np.cumsum((eta[order] / eta.max()) ** 2)
    target = strategy.theta**2 * cum[-1]
    n = int(np.searchsorted(cum, target, side="left")) + 1
    return np.sort(order[:min(n, eta.size)])


class MarkingCheck(NamedTuple):
    passed: bool
    offender: Optional[int]
    excess: float


def verify_marking(eta, marked, g, rtol=1e-12):
    """Check η(K) <= g(η(M)) for every unmarked K; report the worst offender."""
    eta = np.asarray(eta, dtype=float)
    marked = np.asarray(marked, dtype=np.int64)
    unmarked = np.setdiff1d(np.arange(eta.size), marked)
    if unmarked.size == 0:
        return MarkingCheck(True, None, 0.0)
    bound = g(_l2(eta[marked]))
    slack = eta[unmarked] - bound
    worst = int(np.argmax(slack))
    ok = slack[worst] <= rtol * max(bound, eta.max())
    return MarkingCheck(bool(ok), None if ok else int(unmarked[worst]), float(slack[worst]))


@dataclass
class IterationRecord:
    iter: int
    nelem: int
    ndof: int
    eta_total: float
    eta_max: float
    energy_err: Optional[float]
    hmax: float
    sigma: float
    theta: float
    strategy: str
    wall_ms: float
    osc: float = 0.0
    marked: int = 0


@dataclass
class RunLog:
    records: List[IterationRecord] = field(default_factory=list)
    stop_reason: str = ""

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self, path, columns=CSV_COLUMNS):
        with open(path, "w", newline="") as fh:
            write_csv(fh, self.records, columns)


def write_csv(fh, records, columns=CSV_COLUMNS):
    w = csv.writer(fh)
    w.writerow(columns)
    for r in records:
        write_csv_row(w, r, columns)


def adaptive_loop(problem, sigma=DEFAULT_SIGMA, strategy=MarkingStrategy(), *,
                  max_dofs=None, max_iters=None, eta_tol=None, bisections=1,
                  quad_degree=8, solver="direct", uniform=False, csv_path=None,
                  callback=None, mesh=None):
    """Run the adaptive C0IP method until a stop criterion fires.

    Stops after ``max_iters`` refinements, when the next mesh would exceed
    ``max_dofs`` free DOFs, when η drops below ``eta_tol``, or when η is
    exactly zero.  ``callback(k, mesh, u, est)`` is invoked every iteration.
    With ``uniform=True`` every element is marked.
    """
    mesh = problem.mesh() if mesh is None else mesh
    log = RunLog()
    fh = open(csv_path, "w", newline="") if csv_path else None
    writer = None
    if fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
    try:
        k = 0
        while True:
            t0 = time.perf_counter()
            dofmap = DofMap(mesh)
            u = solve(assemble(dofmap, sigma, problem.f, quad_degree), method=solver)
            est = estimate(u, problem.f, sigma, quad_degree)
            eta = est.eta
            err = None
            if problem.exact is not None:
                err = math.sqrt(energy_error(u, problem.exact.hess, sigma).total)
            osc = float(np.sqrt(oscillation(mesh, problem.f, quad_degree).sum()))
            if uniform:
                marked = np.arange(mesh.nelements)
            else:
                marked = mark(eta, strategy)
                check = verify_marking(eta, marked, strategy.g)
                if not check.passed:
                    raise AssertionError(f"marking violates admissibility at element {check.offender}")
            rec = IterationRecord(
                k, mesh.nelements, dofmap.dim, est.total, float(eta.max()) if eta.size else 0.0,
                err, float(mesh_size(mesh)[0].max()), float(sigma), strategy.theta,
                "uniform" if uniform else strategy.kind, 0.0, osc, len(marked))
            if callback is not None:
                callback(k, mesh, u, est)
            reason = ""
            if rec.eta_total == 0.0:
                reason = "converged"
            elif eta_tol is not None and rec.eta_total <= eta_tol:
                reason = "eta_tol"
            elif max_iters is not None and k >= max_iters:
                reason = "max_iters"
            new_mesh = None
            if not reason:
                new_mesh = refine(mesh, marked, bisections=bisections)
                if max_dofs is not None and DofMap(new_mesh).dim > max_dofs:
                    reason = "max_dofs"
            rec.wall_ms = 1e3 * (time.perf_counter() - t0)
            log.records.append(rec)
            if writer:
                write_csv_row(writer, rec)
                fh.flush()
            if reason:
                log.stop_reason = reason
                return log
            mesh = new_mesh
            k += 1
    finally:
        if fh:
            fh.close()


def write_csv_row(writer, rec, columns=CSV_COLUMNS):
    d = asdict(rec)
    writer.writerow(["" if d[c] is None else (repr(d[c]) if isinstance(d[c], float) else d[c])
                     for c in columns])
