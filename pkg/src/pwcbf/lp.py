"""Linear programs: a small model container and two interchangeable backends.

``simplex`` is a dense two-phase revised simplex with Bland's rule as the
anti-cycling fallback; it is deterministic and meant for small models and
as a reference. ``highs`` delegates to scipy's HiGHS wrapper for large models.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

LE, EQ, GE = "<=", "==", ">="
PIVOT_TOL = 1e-9  # pivots below this fraction of the column are refused
CHECK_TOL = 1e-8  # constraint residual accepted for a returned solution
DEGENERATE_STREAK = 50  # degenerate pivots in a row before pricing falls back to Bland's rule


@dataclass
class LPModel:
    """min c.x subject to sparse linear rows and variable boxes."""

    names: list[str] = field(default_factory=list)
    lb: list[float] = field(default_factory=list)
    ub: list[float] = field(default_factory=list)
    cost: list[float] = field(default_factory=list)
    rows: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    senses: list[str] = field(default_factory=list)
    rhs: list[float] = field(default_factory=list)
    row_names: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def num_vars(self) -> int:
        return len(self.names)

    @property
    def num_constraints(self) -> int:
        return len(self.rows)

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf, cost: float = 0.0) -> int:
        self.names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.cost.append(float(cost))
        return len(self.names) - 1

    def add_vars(self, prefix: str, count: int, lb: float = 0.0, ub: float = math.inf) -> np.ndarray:
        start = len(self.names)
        for k in range(count):
            self.add_var(f"{prefix}[{k}]", lb, ub)
        return np.arange(start, start + count)

    def add_row(self, idx, vals, sense: str, rhs: float, name: str | None = None) -> int:
        idx = np.asarray(idx, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        if sense not in (LE, EQ, GE):
            raise ValueError(f"unknown sense {sense!r}")
        if len(idx) and (idx.min() < 0 or idx.max() >= len(self.names)):
            raise ValueError("constraint references an undeclared variable")
        if not np.all(np.isfinite(vals)) or not math.isfinite(rhs):
            raise ValueError("non-finite coefficient")
        self.rows.append((idx, vals))
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        self.row_names.append(name or f"r{len(self.rows) - 1}")
        return len(self.rows) - 1

    def matrix(self) -> sp.csr_matrix:
        data, ri, ci = [], [], []
        for r, (idx, vals) in enumerate(self.rows):
            ri.append(np.full(len(idx), r))
            ci.append(idx)
            data.append(vals)
        if not data:
            return sp.csr_matrix((0, self.num_vars))
        return sp.csr_matrix((np.concatenate(data), (np.concatenate(ri), np.concatenate(ci))),
                             shape=(len(self.rows), self.num_vars))

    def residuals(self, x: np.ndarray) -> float:
        """Largest violation of any row or variable bound at x."""
        x = np.asarray(x, dtype=float)
        worst = float(max(np.max(np.asarray(self.lb) - x, initial=0.0),
                          np.max(x - np.asarray(self.ub), initial=0.0)))
        if self.rows:
            ax = self.matrix() @ x
            rhs = np.asarray(self.rhs)
            s = np.asarray(self.senses)
            worst = max(worst, float(np.max(np.where(s == LE, ax - rhs, 0.0), initial=0.0)),
                        float(np.max(np.where(s == GE, rhs - ax, 0.0), initial=0.0)),
                        float(np.max(np.where(s == EQ, np.abs(ax - rhs), 0.0), initial=0.0)))
        return worst

    def to_mps(self, name: str = "PWCBF") -> str:
        """Fixed-format MPS text."""
        out = io.StringIO()
        w = out.write
        w(f"NAME          {name}\nROWS\n N  COST\n")
        code = {LE: "L", GE: "G", EQ: "E"}
        rn = [f"R{r}" for r in range(len(self.rows))]
        for r, s in enumerate(self.senses):
            w(f" {code[s]}  {rn[r]}\n")
        w("COLUMNS\n")
        cols = self.matrix().tocsc()
        for j in range(self.num_vars):
            cname = f"C{j}"
            entries = []
            if self.cost[j] != 0.0:
                entries.append(("COST", self.cost[j]))
            for p in range(cols.indptr[j], cols.indptr[j + 1]):
                entries.append((rn[cols.indices[p]], cols.data[p]))
            if not entries:
                entries.append(("COST", 0.0))
            for rname, v in entries:
                w(f"    {cname:<8}  {rname:<8}  {_num(v):>12}\n")
        w("RHS\n")
        for r, v in enumerate(self.rhs):
            if v != 0.0:
                w(f"    {'RHS':<8}  {rn[r]:<8}  {_num(v):>12}\n")
        w("BOUNDS\n")
        for j in range(self.num_vars):
            lo, hi = self.lb[j], self.ub[j]
            c = f"C{j}"
            if lo == hi:
                w(f" FX BND       {c:<8}  {_num(lo):>12}\n")
                continue
            if math.isinf(lo):
                w(f" MI BND       {c:<8}\n")
            elif lo != 0.0:
                w(f" LO BND       {c:<8}  {_num(lo):>12}\n")
            if not math.isinf(hi):
                w(f" UP BND       {c:<8}  {_num(hi):>12}\n")
        w("ENDATA\n")
        return out.getvalue()


def _num(v: float) -> str:
    s = repr(float(v))
    return s if len(s) <= 12 else f"{v:.6e}"


@dataclass(frozen=True)
class LPSolution:
    status: str  # optimal | infeasible | unbounded | error
    x: np.ndarray | None
    objective: float
    iterations: int = 0
    message: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


# -- built-in revised simplex --------------------------------------------------------------

class _Failure(Exception):
    def __init__(self, status, message, diagnostics):
        super().__init__(message)
        self.status, self.diagnostics = status, diagnostics


def _standard_form(model: LPModel):
    """Rewrite as min c.y, A y = b, y >= 0; returns the map back to model variables."""
    nv = model.num_vars
    lb, ub = np.asarray(model.lb), np.asarray(model.ub)
    cols = []  # (original var, sign) for each standard column
    shift = np.zeros(nv)
    for j in range(nv):
        if math.isfinite(lb[j]):
            shift[j] = lb[j]
            cols.append((j, 1.0))
        elif math.isfinite(ub[j]):
            shift[j] = ub[j]
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    col_of = {}
    for c, (j, s) in enumerate(cols):
        col_of.setdefault(j, []).append((c, s))
    rows_a, rows_b, kinds = [], [], []
    dense = model.matrix().toarray() if model.rows else np.zeros((0, nv))
    for r in range(model.num_constraints):
        a = np.zeros(len(cols))
        for j in np.flatnonzero(dense[r]):
            for c, s in col_of[j]:
                a[c] += s * dense[r, j]
        rows_a.append(a)
        rows_b.append(model.rhs[r] - dense[r] @ shift)
        kinds.append(model.senses[r])
    for j in range(nv):
        if math.isfinite(lb[j]) and math.isfinite(ub[j]):
            a = np.zeros(len(cols))
            a[col_of[j][0][0]] = 1.0
            rows_a.append(a)
            rows_b.append(ub[j] - lb[j])
            kinds.append(LE)
    n_struct = len(cols)
    n_slack = sum(k != EQ for k in kinds)
    A = np.zeros((len(rows_a), n_struct + n_slack))
    b = np.asarray(rows_b, dtype=float)
    s = n_struct
    for r, (a, k) in enumerate(zip(rows_a, kinds)):
        A[r, :n_struct] = a
        if k == LE:
            A[r, s] = 1.0
            s += 1
        elif k == GE:
            A[r, s] = -1.0
            s += 1
    c = np.zeros(A.shape[1])
    cost = np.asarray(model.cost)
    for cidx, (j, sg) in enumerate(cols):
        c[cidx] = sg * cost[j]
    offset = float(cost @ shift)
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    return A, b, c, cols, shift, offset


class _Basis:
    """LU factors of the basis matrix, recomputed after every pivot.

    Dense refactorization costs O(m^3) per iteration, which is fine for the
    small models this backend targets and avoids the drift of product-form
    updates on badly scaled rows.
    """

    def __init__(self, A, cols):
        self.cols = list(cols)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LinAlgWarning)  # exact singularity is reported below
            self.lu = lu_factor(A[:, self.cols], check_finite=False)
        diag = np.abs(np.diag(self.lu[0]))
        if diag.min(initial=np.inf) <= 1e-13 * max(1.0, diag.max(initial=0.0)):
            raise np.linalg.LinAlgError("singular basis")

    def solve(self, rhs):
        return lu_solve(self.lu, rhs, check_finite=False)

    def solve_t(self, rhs):
        return lu_solve(self.lu, rhs, trans=1, check_finite=False)


def _revised_simplex(A, b, c, basis, allowed, tol, max_iter, it0=0):
    """Dantzig pricing, switching to Bland's rule for good after a long degenerate streak.

    Any cycle consists of degenerate pivots only, so it trips the switch, and
    Bland's rule cannot cycle; the loop therefore terminates.
    """
    m, n = A.shape
    B = _Basis(A, basis)
    it = it0
    last = None
    bland, streak = False, 0
    scale = 1.0 + np.abs(c).max(initial=0.0)
    while True:
        if it - it0 >= max_iter:
            raise _Failure("error", "iteration limit reached", {"iterations": it, "last_pivot": last})
        xb = np.maximum(B.solve(b), 0.0)
        y = B.solve_t(c[B.cols])
        d = c - y @ A
        in_basis = np.zeros(n, dtype=bool)
        in_basis[B.cols] = True
        cand = np.flatnonzero(allowed & ~in_basis & (d < -tol * scale))
        if len(cand) == 0:
            return B, it
        j = int(cand[0] if bland else cand[np.argmin(d[cand])])
        col = B.solve(A[:, j])
        pos = np.flatnonzero(col > PIVOT_TOL * max(1.0, np.abs(col).max()))
        if len(pos) == 0:
            raise _Failure("unbounded", "objective unbounded below", {"iterations": it, "entering": j})
        ratios = xb[pos] / col[pos]
        best = ratios.min()
        ties = pos[ratios <= best + tol * (1.0 + abs(best))]
        if bland:
            # lowest-index basic variable leaves, skipping pivots far smaller than the best tie
            ties = ties[col[ties] >= 1e-3 * col[ties].max()]
            r = int(min(ties, key=lambda q: B.cols[q]))
        else:
            r = int(ties[np.argmax(col[ties])])
        streak = streak + 1 if best <= tol else 0
        bland = bland or streak > DEGENERATE_STREAK
        last = {"entering": j, "leaving": B.cols[r], "row": r, "pivot": float(col[r]), "bland": bland}
        cols = list(B.cols)
        cols[r] = j
        B = _Basis(A, cols)
        it += 1


def simplex(model: LPModel, tol: float = 1e-10, max_iter: int = 50000) -> LPSolution:
    A, b, c, cols, shift, offset = _standard_form(model)
    m, n = A.shape
    if m == 0:
        if np.any(c < 0):
            return LPSolution("unbounded", None, -math.inf, 0, "objective unbounded below")
        x = _recover(np.zeros(n), cols, shift, model.num_vars)
        return LPSolution("optimal", x, float(offset), 0)
    # phase 1 with one artificial per row
    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    allowed = np.ones(n + m, dtype=bool)
    try:
        B, it = _revised_simplex(A1, b, c1, range(n, n + m), allowed, tol, max_iter)
        xb = B.solve(b)
        infeas = float(c1[B.cols] @ xb)
        if infeas > 1e-8 * (1.0 + np.abs(b).max()):
            return LPSolution("infeasible", None, math.nan, it, "problem is infeasible",
                              {"phase1_objective": infeas})
        # drive remaining artificials out of the basis, pivoting on the largest entry
        basis = list(B.cols)
        keep_rows = list(range(m))
        for r in range(m):
            if basis[r] < n:
                continue
            e = np.zeros(m)
            e[r] = 1.0
            row = np.abs(B.solve_t(e) @ A)
            row[[q for q in basis if q < n]] = 0.0
            if row.max(initial=0.0) > 1e-7:
                basis[r] = int(np.argmax(row))
                B = _Basis(A1, basis)
            else:
                keep_rows.remove(r)  # redundant equality
        if len(keep_rows) < m:
            A, b = A[keep_rows], b[keep_rows]
            basis = [basis[r] for r in keep_rows]
        allowed = np.ones(n, dtype=bool)
        B, it = _revised_simplex(A, b, c, basis, allowed, tol, max_iter, it)
    except _Failure as exc:
        return LPSolution(exc.status, None, math.nan if exc.status != "unbounded" else -math.inf,
                          exc.diagnostics.get("iterations", 0), str(exc), exc.diagnostics)
    except np.linalg.LinAlgError as exc:
        return LPSolution("error", None, math.nan, 0, f"singular basis: {exc}")
    y = np.zeros(n)
    y[B.cols] = np.maximum(B.solve(b), 0.0)
    x = _recover(y, cols, shift, model.num_vars)
    resid = model.residuals(x)
    if resid > CHECK_TOL * (1.0 + np.abs(b).max(initial=0.0)):
        return LPSolution("error", None, math.nan, it, f"numerical trouble: residual {resid:.3e}",
                          {"residual": resid})
    return LPSolution("optimal", x, float(np.asarray(model.cost) @ x), it)


def _recover(y, cols, shift, nv):
    x = shift.copy()
    for c, (j, s) in enumerate(cols):
        x[j] += s * y[c]
    return x


# -- HiGHS ---------------------------------------------------------------------------------

def highs(model: LPModel, tol: float = 1e-9) -> LPSolution:
    from scipy.optimize import linprog

    A = model.matrix()
    s = np.asarray(model.senses)
    rhs = np.asarray(model.rhs)
    le, ge, eq = np.flatnonzero(s == LE), np.flatnonzero(s == GE), np.flatnonzero(s == EQ)
    A_ub = sp.vstack([A[le], -A[ge]]).tocsr() if len(le) + len(ge) else None
    b_ub = np.concatenate([rhs[le], -rhs[ge]]) if A_ub is not None else None
    A_eq = A[eq] if len(eq) else None
    b_eq = rhs[eq] if len(eq) else None
    bounds = list(zip([None if math.isinf(v) else v for v in model.lb],
                      [None if math.isinf(v) else v for v in model.ub]))
    res = linprog(np.asarray(model.cost), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs-ds",
                  options={"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": tol,
                           "presolve": True})
    status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(res.status, "error")
    x = np.asarray(res.x) if res.x is not None and status == "optimal" else None
    obj = float(res.fun) if status == "optimal" else math.nan
    return LPSolution(status, x, obj, int(getattr(res, "nit", 0) or 0), str(res.message),
                      {"highs_status": int(res.status)})


BACKENDS = {"simplex": simplex, "highs": highs}


def solve_lp(model: LPModel, backend: str = "auto") -> LPSolution:
    """Solve with the named backend.

    ``auto`` uses the dense simplex for small models and HiGHS otherwise; if
    the simplex reports anything but optimal HiGHS re-solves the model, so a
    numerical failure on a badly scaled model never surfaces as a verdict.
    """
    auto = backend == "auto"
    if auto:
        backend = "simplex" if model.num_vars * max(1, model.num_constraints) <= 4e5 else "highs"
    if backend not in BACKENDS:
        raise ValueError(f"unknown LP backend {backend!r}")
    sol = BACKENDS[backend](model)
    diagnostics = {**sol.diagnostics, "backend": backend}
    if auto and backend == "simplex" and sol.status != "optimal":
        first = sol
        sol = highs(model)
        diagnostics = {**sol.diagnostics, "backend": "highs", "simplex_status": first.status,
                       "simplex_message": first.message}
    return LPSolution(sol.status, sol.x, sol.objective, sol.iterations, sol.message, diagnostics)
