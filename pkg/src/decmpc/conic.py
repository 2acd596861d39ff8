"""Sparse conic program container, deterministic builder, and solver backends.

Everything downstream (robust counterparts, policy synthesis, ADMM subproblems)
is emitted into the canonical form

    minimize    c' x
    subject to  A_eq x = b_eq
                A_ub x <= b_ub
                F_k x + g_k in SOC   (second-order cone blocks)
                x_i >= 0             (for variables flagged nonnegative)

Variable and constraint blocks are registered in insertion order under
path-style names, so identical build sequences produce byte-identical
programs (and byte-identical text exports).
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ProgramBuilder",
    "ConicProgram",
    "SolveResult",
    "SolverHandle",
    "HighsSolver",
    "CvxoptSolver",
    "default_solver",
    "export_program_text",
]


class _TripletStack:
    """Accumulates COO triplets for one constraint matrix."""

    def __init__(self):
        self.rows = []
        self.cols = []
        self.vals = []
        self.rhs = []
        self.labels = []
        self.nrows = 0

    def add(self, rows, cols, vals, rhs, label):
        rows = np.asarray(rows, dtype=np.int64)
        self.rows.append(rows + self.nrows)
        self.cols.append(np.asarray(cols, dtype=np.int64))
        self.vals.append(np.asarray(vals, dtype=float))
        rhs = np.asarray(rhs, dtype=float)
        self.rhs.append(rhs)
        self.labels.append((label, self.nrows, rhs.size))
        self.nrows += rhs.size

    def matrix(self, ncols):
        if not self.rows:
            return sp.csr_matrix((0, ncols)), np.zeros(0)
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        mat = sp.coo_matrix((vals, (rows, cols)), shape=(self.nrows, ncols)).tocsr()
        return mat, np.concatenate(self.rhs)


@dataclass
class ConicProgram:
    """Materialized program in canonical conic form."""

    c: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    soc: list  # list of (F csr, g ndarray); F x + g must lie in SOC
    nonneg: np.ndarray  # bool mask over variables
    var_names: list  # (name, offset, size)
    row_labels: dict  # kind -> list of (label, offset, size)
    obj_offset: float = 0.0

    @property
    def nvars(self) -> int:
        return self.c.size

    def residuals(self, x: np.ndarray) -> dict:
        """Worst constraint violations of a candidate point, by family."""
        out = {}
        out["eq"] = float(np.max(np.abs(self.A_eq @ x - self.b_eq))) if self.b_eq.size else 0.0
        out["ub"] = float(np.max(self.A_ub @ x - self.b_ub)) if self.b_ub.size else 0.0
        soc_viol = 0.0
        for F, g in self.soc:
            v = F @ x + g
            soc_viol = max(soc_viol, float(np.linalg.norm(v[1:]) - v[0]))
        out["soc"] = soc_viol
        out["nonneg"] = float(np.max(np.maximum(-x[self.nonneg], 0.0))) if self.nonneg.any() else 0.0
        return out


class ProgramBuilder:
    """Incremental builder over named variable and parameter blocks.

    Parameters are placeholder columns: constraint coefficients may reference
    them, and ``build(params=...)`` folds them into the right-hand sides.
    This lets receding-horizon and ADMM loops assemble a program once and
    re-solve with fresh initial states / consensus targets.
    """

    def __init__(self):
        self._var_names = []
        self._nvar = 0
        self._nonneg = []
        self._param_names = {}
        self._nparam = 0
        self._eq = _TripletStack()
        self._ub = _TripletStack()
        self._soc = []  # (rows, cols, vals, prows, pcols, pvals, g, dim, label)
        self._obj_cols = []
        self._obj_vals = []
        self._obj_offset = 0.0

    # -- declarations ------------------------------------------------------

    def add_vars(self, name: str, size: int, nonneg: bool = False) -> np.ndarray:
        """Register a variable block; returns its global indices."""
        idx = np.arange(self._nvar, self._nvar + size, dtype=np.int64)
        self._var_names.append((name, self._nvar, size))
        self._nvar += size
        if nonneg:
            self._nonneg.append(idx)
        return idx

    def add_params(self, name: str, size: int) -> np.ndarray:
        """Register a parameter block; returns indices in the parameter space."""
        idx = np.arange(self._nparam, self._nparam + size, dtype=np.int64)
        self._param_names[name] = idx
        self._nparam += size
        return idx

    @property
    def nvars(self) -> int:
        return self._nvar

    # -- constraints -------------------------------------------------------
    # Column convention: variable j occupies column j; parameter p occupies
    # column nvars_final + p.  Builders pass parameter columns as negative
    # indices encoded via `param_col`.

    def param_col(self, pidx):
        """Encode parameter indices as constraint columns."""
        return -(np.asarray(pidx, dtype=np.int64) + 1)

    def add_eq(self, rows, cols, vals, rhs, label: str = ""):
        self._eq.add(rows, cols, vals, rhs, label)

    def add_ub(self, rows, cols, vals, rhs, label: str = ""):
        self._ub.add(rows, cols, vals, rhs, label)

    def add_soc(self, rows, cols, vals, g, dim: int, label: str = ""):
        """Add F x + g in SOC_dim, triplets over (row in 0..dim-1, col)."""
        self._soc.append(
            (
                np.asarray(rows, dtype=np.int64),
                np.asarray(cols, dtype=np.int64),
                np.asarray(vals, dtype=float),
                np.asarray(g, dtype=float),
                int(dim),
                label,
            )
        )

    def add_obj(self, cols, vals):
        self._obj_cols.append(np.asarray(cols, dtype=np.int64))
        self._obj_vals.append(np.asarray(vals, dtype=float))

    def add_obj_offset(self, val: float):
        self._obj_offset += float(val)

    # -- assembly ----------------------------------------------------------

    def _split(self, mat_cols, vals, nv):
        """Split encoded columns into variable part and parameter part."""
        is_par = mat_cols < 0
        return (~is_par, is_par, np.where(is_par, -mat_cols - 1, 0))

    def build(self, params: dict | None = None) -> ConicProgram:
        """Materialize; parameter columns are folded into the RHS."""
        nv = self._nvar
        pvec = np.zeros(self._nparam)
        if params:
            for name, val in params.items():
                pvec[self._param_names[name]] = np.asarray(val, dtype=float).ravel()

        def fold(stack: _TripletStack):
            if not stack.rows:
                return sp.csr_matrix((0, nv)), np.zeros(0)
            rows = np.concatenate(stack.rows)
            cols = np.concatenate(stack.cols)
            vals = np.concatenate(stack.vals)
            rhs = np.concatenate(stack.rhs).copy()
            keep, is_par, pidx = self._split(cols, vals, nv)
            if is_par.any():
                # move parameter terms to the RHS: A x + P p (<=|=) b  ->  A x (<=|=) b - P p
                np.subtract.at(rhs, rows[is_par], vals[is_par] * pvec[pidx[is_par]])
            mat = sp.coo_matrix(
                (vals[keep], (rows[keep], cols[keep])), shape=(stack.nrows, nv)
            ).tocsr()
            return mat, rhs

        A_eq, b_eq = fold(self._eq)
        A_ub, b_ub = fold(self._ub)

        soc = []
        for rows, cols, vals, g, dim, _label in self._soc:
            g = g.copy()
            keep, is_par, pidx = self._split(cols, vals, nv)
            if is_par.any():
                np.add.at(g, rows[is_par], vals[is_par] * pvec[pidx[is_par]])
            F = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(dim, nv)).tocsr()
            soc.append((F, g))

        c = np.zeros(nv)
        for cols, vals in zip(self._obj_cols, self._obj_vals):
            np.add.at(c, cols, vals)
        nonneg = np.zeros(nv, dtype=bool)
        for idx in self._nonneg:
            nonneg[idx] = True
        return ConicProgram(
            c=c,
            A_eq=A_eq,
            b_eq=b_eq,
            A_ub=A_ub,
            b_ub=b_ub,
            soc=soc,
            nonneg=nonneg,
            var_names=list(self._var_names),
            row_labels={
                "eq": list(self._eq.labels),
                "ub": list(self._ub.labels),
                "soc": [(lab, k, dim) for k, (_, _, _, _, dim, lab) in enumerate(self._soc)],
            },
            obj_offset=self._obj_offset,
        )


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | unbounded | error
    objective: float | None
    x: np.ndarray | None
    solve_time: float
    solver: str
    message: str = ""
    dual_eq: np.ndarray | None = None
    dual_ub: np.ndarray | None = None


class SolverHandle:
    """Abstract conic solver: feasibility/gap tolerances plus a solve() call."""

    name = "abstract"
    supports_soc = False
    concurrent_safe = True

    def __init__(self, feas_tol: float = 1e-8, gap_tol: float = 1e-8):
        self.feas_tol = feas_tol
        self.gap_tol = gap_tol

    def solve(self, prog: ConicProgram) -> SolveResult:  # pragma: no cover
        raise NotImplementedError


class HighsSolver(SolverHandle):
    """LP backend via scipy's HiGHS interface. Rejects programs with SOC blocks."""

    name = "highs"
    supports_soc = False

    def solve(self, prog: ConicProgram) -> SolveResult:
        from scipy.optimize import linprog

        if prog.soc:
            raise ValueError("highs backend cannot solve programs with SOC blocks")
        bounds = [(0.0, None) if nn else (None, None) for nn in prog.nonneg]
        t0 = time.perf_counter()
        res = linprog(
            prog.c,
            A_ub=prog.A_ub if prog.b_ub.size else None,
            b_ub=prog.b_ub if prog.b_ub.size else None,
            A_eq=prog.A_eq if prog.b_eq.size else None,
            b_eq=prog.b_eq if prog.b_eq.size else None,
            bounds=bounds,
            method="highs",
            options={"primal_feasibility_tolerance": self.feas_tol,
                     "dual_feasibility_tolerance": self.feas_tol},
        )
        dt = time.perf_counter() - t0
        status = {0: "optimal", 2: "infeasible", 3: "unbounded"}.get(res.status, "error")
        if status != "optimal":
            return SolveResult(status, None, None, dt, self.name, res.message)
        dual_eq = -res.eqlin.marginals if prog.b_eq.size else np.zeros(0)
        dual_ub = -res.ineqlin.marginals if prog.b_ub.size else np.zeros(0)
        return SolveResult(
            "optimal",
            float(res.fun) + prog.obj_offset,
            np.asarray(res.x),
            dt,
            self.name,
            dual_eq=dual_eq,
            dual_ub=dual_ub,
        )


class CvxoptSolver(SolverHandle):
    """LP/SOCP backend via cvxopt's conelp interior-point solver."""

    name = "cvxopt"
    supports_soc = True
    concurrent_safe = False  # cvxopt.solvers.options is module-global

    def solve(self, prog: ConicProgram) -> SolveResult:
        import cvxopt
        from cvxopt import solvers

        n = prog.nvars
        # linear cone rows: A_ub x <= b_ub plus -x <= 0 for nonneg vars
        nn_idx = np.where(prog.nonneg)[0]
        Gl = sp.vstack(
            [
                prog.A_ub,
                sp.coo_matrix(
                    (-np.ones(nn_idx.size), (np.arange(nn_idx.size), nn_idx)),
                    shape=(nn_idx.size, n),
                ),
            ]
        ).tocoo()
        hl = np.concatenate([prog.b_ub, np.zeros(nn_idx.size)])
        blocks = [(Gl, hl)]
        dims_q = []
        for F, g in prog.soc:
            blocks.append(((-F).tocoo(), np.asarray(g, dtype=float)))
            dims_q.append(F.shape[0])
        off = 0
        rows, cols, vals, hparts = [], [], [], []
        for mat, h in blocks:
            rows.append(mat.row + off)
            cols.append(mat.col)
            vals.append(mat.data)
            hparts.append(h)
            off += h.size
        G = cvxopt.spmatrix(
            np.concatenate(vals),
            np.concatenate(rows).astype(int),
            np.concatenate(cols).astype(int),
            (off, n),
        )
        h = cvxopt.matrix(np.concatenate(hparts))
        Ae = prog.A_eq.tocoo()
        A = cvxopt.spmatrix(Ae.data, Ae.row.astype(int), Ae.col.astype(int), (Ae.shape[0], n))
        b = cvxopt.matrix(prog.b_eq)
        c = cvxopt.matrix(prog.c)
        opts = {
            "show_progress": False,
            "abstol": self.gap_tol,
            "reltol": self.gap_tol,
            "feastol": max(self.feas_tol, 1e-9),
            "maxiters": 200,
        }
        t0 = time.perf_counter()
        try:
            sol = solvers.conelp(c, G, h, dims={"l": hl.size, "q": dims_q, "s": []}, A=A, b=b,
                                 options=opts)
        except (ValueError, ZeroDivisionError, ArithmeticError) as exc:
            return SolveResult("error", None, None, time.perf_counter() - t0, self.name, str(exc))
        dt = time.perf_counter() - t0
        st = sol["status"]
        if st == "optimal":
            x = np.asarray(sol["x"]).ravel()
            return SolveResult("optimal", float(prog.c @ x) + prog.obj_offset, x, dt, self.name)
        if st == "primal infeasible":
            return SolveResult("infeasible", None, None, dt, self.name)
        if st == "dual infeasible":
            return SolveResult("unbounded", None, None, dt, self.name)
        # 'unknown': accept the iterate if it is near-feasible with a small gap
        if sol["x"] is not None:
            x = np.asarray(sol["x"]).ravel()
            res = ConicProgram.residuals(prog, x)
            if max(res.values()) < 1e-6:
                return SolveResult(
                    "optimal", float(prog.c @ x) + prog.obj_offset, x, dt, self.name,
                    message="accepted near-optimal iterate",
                )
        return SolveResult("error", None, None, dt, self.name, "conelp returned unknown")


class ClarabelSolver(SolverHandle):
    """LP/SOCP backend via the Clarabel interior-point solver (sparse)."""

    name = "clarabel"
    supports_soc = True

    def solve(self, prog: ConicProgram) -> SolveResult:
        import clarabel

        n = prog.nvars
        nn_idx = np.where(prog.nonneg)[0]
        mats = [prog.A_eq, prog.A_ub,
                sp.coo_matrix((-np.ones(nn_idx.size), (np.arange(nn_idx.size), nn_idx)),
                              shape=(nn_idx.size, n))]
        rhs = [prog.b_eq, prog.b_ub, np.zeros(nn_idx.size)]
        cones = []
        if prog.b_eq.size:
            cones.append(clarabel.ZeroConeT(prog.b_eq.size))
        if prog.b_ub.size + nn_idx.size:
            cones.append(clarabel.NonnegativeConeT(prog.b_ub.size + nn_idx.size))
        for F, g in prog.soc:
            mats.append(-F)
            rhs.append(np.asarray(g, dtype=float))
            cones.append(clarabel.SecondOrderConeT(F.shape[0]))
        A = sp.vstack(mats).tocsc()
        b = np.concatenate(rhs)
        P = sp.csc_matrix((n, n))
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_feas = max(self.feas_tol, 1e-9)
        settings.tol_gap_abs = self.gap_tol
        settings.tol_gap_rel = self.gap_tol
        t0 = time.perf_counter()
        try:
            solver = clarabel.DefaultSolver(P, prog.c, A, b, cones, settings)
            sol = solver.solve()
        except BaseException as exc:  # clarabel raises pyo3 panics on bad input
            return SolveResult("error", None, None, time.perf_counter() - t0, self.name, str(exc))
        dt = time.perf_counter() - t0
        status = str(sol.status)
        if status in ("Solved", "AlmostSolved"):
            x = np.asarray(sol.x)
            return SolveResult("optimal", float(prog.c @ x) + prog.obj_offset, x, dt,
                               self.name, message=status)
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return SolveResult("infeasible", None, None, dt, self.name, status)
        if status in ("DualInfeasible", "AlmostDualInfeasible"):
            return SolveResult("unbounded", None, None, dt, self.name, status)
        return SolveResult("error", None, None, dt, self.name, status)


_BACKENDS = {"highs": HighsSolver, "cvxopt": CvxoptSolver, "clarabel": ClarabelSolver}


def _have_clarabel() -> bool:
    try:
        import clarabel  # noqa: F401

        return True
    except ImportError:  # pragma: no cover
        return False


class AutoSolver(SolverHandle):
    """Dispatches to HiGHS for pure LPs and a conic backend (Clarabel when
    available, else cvxopt) when SOC blocks are present."""

    name = "auto"
    supports_soc = True

    def __init__(self, feas_tol: float = 1e-8, gap_tol: float = 1e-8):
        super().__init__(feas_tol, gap_tol)
        self._lp = HighsSolver(feas_tol, gap_tol)
        self._soc = (ClarabelSolver(feas_tol, gap_tol) if _have_clarabel()
                     else CvxoptSolver(feas_tol, gap_tol))

    def solve(self, prog: ConicProgram) -> SolveResult:
        return (self._soc if prog.soc else self._lp).solve(prog)


def default_solver(name: str | None = None, **kw) -> SolverHandle:
    """Select a backend by name, the DECMPC_SOLVER env var, or automatically."""
    name = name or os.environ.get("DECMPC_SOLVER", "auto")
    if name == "auto":
        return AutoSolver(**kw)
    try:
        return _BACKENDS[name](**kw)
    except KeyError:
        raise ValueError(f"unknown solver backend {name!r}; known: auto, {sorted(_BACKENDS)}")


# ---------------------------------------------------------------------------
# plain-text export
# ---------------------------------------------------------------------------


def export_program_text(prog: ConicProgram, path: str | None = None) -> str:
    """Serialize a program as plain-text sparse triplet sections.

    Sections: VARS (name offset size nonneg), OBJ (col val), EQ / UB
    (row col val per line, then RHS row val), SOC blocks (dim, triplets, g).
    Deterministic and loss-free up to float repr, for external cross-checking.
    """
    lines = [f"decmpc-conic-v1 nvars={prog.nvars}"]
    lines.append("VARS")
    for name, off, size in prog.var_names:
        nn = int(prog.nonneg[off]) if size else 0
        lines.append(f"{name} {off} {size} {nn}")
    lines.append(f"OBJ offset={prog.obj_offset!r}")
    for j in np.nonzero(prog.c)[0]:
        lines.append(f"{j} {prog.c[j]!r}")

    def emit(tag, mat, rhs):
        coo = mat.tocoo()
        lines.append(f"{tag} rows={rhs.size} nnz={coo.nnz}")
        order = np.lexsort((coo.col, coo.row))
        for k in order:
            lines.append(f"{coo.row[k]} {coo.col[k]} {coo.data[k]!r}")
        lines.append(f"{tag}_RHS")
        for i, v in enumerate(rhs):
            lines.append(f"{i} {v!r}")

    emit("EQ", prog.A_eq, prog.b_eq)
    emit("UB", prog.A_ub, prog.b_ub)
    for k, (F, g) in enumerate(prog.soc):
        emit(f"SOC{k}", F, g)
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def elastic_relaxation_report(prog: ConicProgram, solver: SolverHandle | None = None,
                              top: int = 5) -> list:
    """Diagnose an infeasible program by minimizing total constraint slack.

    Returns [(label, slack_mass)] sorted descending: the constraint groups
    that resist satisfaction the most. Diagnostic only.
    """
    b = ProgramBuilder()
    x = b.add_vars("x", prog.nvars)
    # reuse original matrices; add one nonnegative slack per eq (two-sided) and ub row
    coo = prog.A_eq.tocoo()
    s_eq_p = b.add_vars("s_eq_p", prog.b_eq.size, nonneg=True)
    s_eq_m = b.add_vars("s_eq_m", prog.b_eq.size, nonneg=True)
    r = np.arange(prog.b_eq.size)
    b.add_eq(
        np.concatenate([coo.row, r, r]),
        np.concatenate([x[coo.col], s_eq_p, s_eq_m]),
        np.concatenate([coo.data, np.ones(r.size), -np.ones(r.size)]),
        prog.b_eq,
        "elastic_eq",
    )
    coo = prog.A_ub.tocoo()
    s_ub = b.add_vars("s_ub", prog.b_ub.size, nonneg=True)
    r = np.arange(prog.b_ub.size)
    b.add_ub(
        np.concatenate([coo.row, r]),
        np.concatenate([x[coo.col], s_ub]),
        np.concatenate([coo.data, -np.ones(r.size)]),
        prog.b_ub,
        "elastic_ub",
    )
    nn = np.where(prog.nonneg)[0]
    b.add_ub(np.arange(nn.size), x[nn], -np.ones(nn.size), np.zeros(nn.size), "elastic_nonneg")
    b.add_obj(np.concatenate([s_eq_p, s_eq_m, s_ub]), np.ones(2 * prog.b_eq.size + prog.b_ub.size))
    res = HighsSolver().solve(b.build())
    if res.status != "optimal":
        return []
    sol = res.x
    slack = {
        "eq": sol[s_eq_p] + sol[s_eq_m] if prog.b_eq.size else np.zeros(0),
        "ub": sol[s_ub] if prog.b_ub.size else np.zeros(0),
    }
    mass = {}
    for kind in ("eq", "ub"):
        for label, off, size in prog.row_labels.get(kind, []):
            m = float(np.sum(slack[kind][off : off + size]))
            if m > 1e-9:
                mass[label] = mass.get(label, 0.0) + m
    return sorted(mass.items(), key=lambda kv: -kv[1])[:top]
