"""Symmetric vectorization and a small standard-form conic programming layer.

Programs are stored as ``min c^T x  s.t.  A x + s = b,  s in K`` where ``K`` is
an ordered product of zero cones (equalities) and PSD cones in ``svec`` form.
The Lagrangian is ``c^T x + y^T (A x + s - b)`` with ``y in K*``, so at
optimality ``c + A^T y = 0`` and the duality gap is ``c^T x + b^T y = y^T s``.
"""

from __future__ import annotations

import io
import logging
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import BadLength, CovSteerError, NotSymmetric

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)


def sv(d: int) -> int:
    return d * (d + 1) // 2


@lru_cache(maxsize=None)
def svec_indices(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the upper triangle, stacked column by column."""
    r, c = np.tril_indices(d)
    return c, r


def svec(S, tol: float = 1e-12) -> np.ndarray:
    """Upper triangle stacked by columns with off-diagonals scaled by sqrt(2).

    ``svec(S1) @ svec(S2) == trace(S1 @ S2)`` for symmetric ``S1, S2``.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {S.shape}")
    scale = np.linalg.norm(S)
    if scale > 0 and np.linalg.norm(S - S.T) > tol * scale:
        raise NotSymmetric("svec requires a symmetric matrix")
    i, j = svec_indices(S.shape[0])
    out = S[i, j].copy()
    out[i != j] *= SQRT2
    return out


def smat(v) -> np.ndarray:
    """Inverse of :func:`svec`."""
    v = np.asarray(v, dtype=float).reshape(-1)
    d = int(round((math.sqrt(8 * v.size + 1) - 1) / 2))
    if sv(d) != v.size:
        raise BadLength(f"length {v.size} is not a triangular number")
    i, j = svec_indices(d)
    vals = np.where(i == j, v, v / SQRT2)
    S = np.zeros((d, d))
    S[i, j] = vals
    S[j, i] = vals
    return S


# --------------------------------------------------------------------------
# program representation


@dataclass(frozen=True)
class ZeroCone:
    dim: int

    def __str__(self):
        return f"zero {self.dim}"


@dataclass(frozen=True)
class PsdCone:
    side: int

    @property
    def dim(self) -> int:
        return sv(self.side)

    def __str__(self):
        return f"psd {self.side}"


@dataclass
class ConicProgram:
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: list
    variable_index: dict[str, slice]
    offset: float = 0.0
    cone_labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        total = sum(k.dim for k in self.cones)
        if total != self.b.size or self.A.shape != (self.b.size, self.c.size):
            raise CovSteerError(
                f"cone dims {total}, b {self.b.size}, A {self.A.shape}, c {self.c.size} disagree"
            )
        covered = np.zeros(self.c.size, dtype=int)
        for sl in self.variable_index.values():
            covered[sl] += 1
        if np.any(covered != 1):
            raise CovSteerError("every coordinate of x must belong to exactly one named block")

    @property
    def num_vars(self) -> int:
        return self.c.size

    def cone_slices(self) -> list[slice]:
        out, start = [], 0
        for k in self.cones:
            out.append(slice(start, start + k.dim))
            start += k.dim
        return out

    def dump(self) -> str:
        """Plain-text listing: c, A as (row, col, value) triplets, b, cones."""
        buf = io.StringIO()
        A = self.A.tocoo()
        buf.write(f"# conic program: min c'x s.t. Ax + s = b, s in K\n")
        buf.write(f"vars {self.num_vars}\nrows {self.b.size}\noffset {self.offset!r}\n")
        for name, sl in self.variable_index.items():
            buf.write(f"block {name} {sl.start} {sl.stop}\n")
        buf.write("c\n")
        for val in self.c:
            buf.write(f"{val!r}\n")
        buf.write(f"A {A.nnz}\n")
        for r, col, val in sorted(zip(A.row.tolist(), A.col.tolist(), A.data.tolist())):
            buf.write(f"{r} {col} {val!r}\n")
        buf.write("b\n")
        for val in self.b:
            buf.write(f"{val!r}\n")
        buf.write(f"cones {len(self.cones)}\n")
        for i, k in enumerate(self.cones):
            label = self.cone_labels[i] if i < len(self.cone_labels) else ""
            buf.write(f"{k} {label}".rstrip() + "\n")
        return buf.getvalue()


@dataclass
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    status: str
    objective: float
    residuals: tuple[float, float, float]
    iterations: int = 0
    solve_time: float = 0.0
    backend: str = ""
    backend_status: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass
class Tolerances:
    eps_primal: float = 1e-8
    eps_dual: float = 1e-8
    eps_gap: float = 1e-8


def residuals(prog: ConicProgram, x, y, s) -> tuple[float, float, float]:
    """Relative primal, dual and gap residuals recomputed from ``(x, y, s)``."""
    Ax = prog.A @ x
    ATy = prog.A.T @ y
    inf = lambda v: float(np.max(np.abs(v))) if v.size else 0.0  # noqa: E731
    rp = inf(Ax + s - prog.b) / (1.0 + max(inf(prog.b), inf(Ax), inf(s)))
    rd = inf(prog.c + ATy) / (1.0 + max(inf(prog.c), inf(ATy)))
    pobj = float(prog.c @ x)
    dobj = -float(prog.b @ y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return rp, rd, gap


def project_cones(prog: ConicProgram, s: np.ndarray) -> float:
    """Largest violation of cone membership of ``s`` (negative eigenvalue magnitude)."""
    worst = 0.0
    for k, sl in zip(prog.cones, prog.cone_slices()):
        if isinstance(k, ZeroCone):
            worst = max(worst, float(np.max(np.abs(s[sl]))) if k.dim else 0.0)
        else:
            worst = max(worst, float(-min(np.linalg.eigvalsh(smat(s[sl]))[0], 0.0)))
    return worst


# --------------------------------------------------------------------------
# backends


def _solve_clarabel(prog: ConicProgram, tol: Tolerances, max_iter: int, time_limit: float):
    import clarabel

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    if time_limit:
        settings.time_limit = time_limit
    inner = 0.1 * min(tol.eps_primal, tol.eps_dual, tol.eps_gap)
    settings.tol_feas = inner
    settings.tol_gap_abs = inner
    settings.tol_gap_rel = inner
    settings.tol_ktratio = 1e-8
    settings.chordal_decomposition_enable = False
    settings.max_threads = 1
    cones = [
        clarabel.ZeroConeT(k.dim) if isinstance(k, ZeroCone) else clarabel.PSDTriangleConeT(k.side)
        for k in prog.cones
    ]
    P = sp.csc_matrix((prog.num_vars, prog.num_vars))
    solver = clarabel.DefaultSolver(P, prog.c, sp.csc_matrix(prog.A), prog.b, cones, settings)
    sol = solver.solve()
    raw = str(sol.status)
    mapping = {
        "Solved": "optimal",
        "AlmostSolved": "numerical_error",
        "PrimalInfeasible": "infeasible",
        "AlmostPrimalInfeasible": "infeasible",
        "DualInfeasible": "unbounded",
        "AlmostDualInfeasible": "unbounded",
        "MaxIterations": "max_iter",
        "MaxTime": "max_iter",
    }
    status = mapping.get(raw.split(".")[-1], "numerical_error")
    return (
        np.array(sol.x),
        np.array(sol.z),
        np.array(sol.s),
        status,
        raw,
        int(sol.iterations),
    )


def _svec_to_full_rows(side: int) -> sp.csr_matrix:
    """Map from svec coordinates to column-major full-matrix coordinates."""
    i, j = svec_indices(side)
    rows, cols, vals = [], [], []
    for t, (a, b) in enumerate(zip(i, j)):
        if a == b:
            rows.append(a + b * side)
            cols.append(t)
            vals.append(1.0)
        else:
            for r in (a + b * side, b + a * side):
                rows.append(r)
                cols.append(t)
                vals.append(1.0 / SQRT2)
    return sp.csr_matrix((vals, (rows, cols)), shape=(side * side, sv(side)))


def _solve_cvxopt(prog: ConicProgram, tol: Tolerances, max_iter: int, time_limit: float):
    import cvxopt
    from cvxopt import solvers

    A = sp.csr_matrix(prog.A)
    eq_rows, G_blocks, h_blocks, sdims, psd_maps = [], [], [], [], []
    for k, sl in zip(prog.cones, prog.cone_slices()):
        if isinstance(k, ZeroCone):
            eq_rows.extend(range(sl.start, sl.stop))
        else:
            T = _svec_to_full_rows(k.side)
            G_blocks.append(T @ A[sl])
            h_blocks.append(T @ prog.b[sl])
            sdims.append(k.side)
            psd_maps.append((sl, k.side))

    def to_cvx(M):
        M = sp.coo_matrix(M)
        return cvxopt.spmatrix(M.data.tolist(), M.row.tolist(), M.col.tolist(), size=M.shape)

    G = sp.vstack(G_blocks) if G_blocks else sp.csr_matrix((0, prog.num_vars))
    h = np.concatenate(h_blocks) if h_blocks else np.zeros(0)
    opts = {
        "show_progress": False,
        "maxiters": max_iter,
        # conelp stalls when asked for much more than the requested accuracy
        "abstol": tol.eps_gap,
        "reltol": tol.eps_gap,
        "feastol": min(tol.eps_primal, tol.eps_dual),
    }
    args = dict(
        c=cvxopt.matrix(prog.c),
        G=to_cvx(G),
        h=cvxopt.matrix(h),
        dims={"l": 0, "q": [], "s": sdims},
        options=opts,
    )
    if eq_rows:
        args["A"] = to_cvx(A[eq_rows])
        args["b"] = cvxopt.matrix(prog.b[eq_rows])
    res = solvers.conelp(**args)
    x = np.array(res["x"]).reshape(-1) if res["x"] is not None else np.zeros(prog.num_vars)
    y = np.zeros(prog.b.size)
    s = np.zeros(prog.b.size)
    if res["y"] is not None and eq_rows:
        y[eq_rows] = np.array(res["y"]).reshape(-1)
    if res["z"] is not None:
        z = np.array(res["z"]).reshape(-1)
        sfull = np.array(res["s"]).reshape(-1)
        pos = 0
        for sl, side in psd_maps:
            Zm = z[pos:pos + side * side].reshape(side, side, order="F")
            Sm = sfull[pos:pos + side * side].reshape(side, side, order="F")
            y[sl] = svec(0.5 * (Zm + Zm.T), tol=np.inf)
            s[sl] = svec(0.5 * (Sm + Sm.T), tol=np.inf)
            pos += side * side
    raw = res["status"]
    status = {
        "optimal": "optimal",
        "primal infeasible": "infeasible",
        "dual infeasible": "unbounded",
    }.get(raw, "max_iter" if res.get("iterations", 0) >= max_iter else "numerical_error")
    return x, y, s, status, raw, int(res.get("iterations", 0))


BACKENDS = {"clarabel": _solve_clarabel, "cvxopt": _solve_cvxopt}


def solve_conic(
    prog: ConicProgram,
    tolerances: Tolerances | None = None,
    backend: str = "clarabel",
    max_iter: int = 200,
    time_limit: float = 0.0,
) -> ConicSolution:
    """Solve ``prog`` with the named backend.

    The status is ``optimal`` only if the backend converged and the residuals
    recomputed here meet ``tolerances``; otherwise the best iterate is
    returned with a non-optimal status.
    """
    tol = tolerances or Tolerances()
    if backend not in BACKENDS:
        raise CovSteerError(f"unknown conic backend {backend!r}; choose from {sorted(BACKENDS)}")
    t0 = time.perf_counter()
    try:
        x, y, s, status, raw, iters = BACKENDS[backend](prog, tol, max_iter, time_limit)
    except (ArithmeticError, ValueError) as exc:
        log.error("backend %s failed: %s", backend, exc)
        n = prog.num_vars
        x, y, s = np.zeros(n), np.zeros(prog.b.size), np.zeros(prog.b.size)
        status, raw, iters = "numerical_error", repr(exc), 0
    elapsed = time.perf_counter() - t0
    res = residuals(prog, x, y, s)
    if status == "optimal" and (
        res[0] > tol.eps_primal or res[1] > tol.eps_dual or res[2] > tol.eps_gap
    ):
        log.warning("backend %s reported %s but residuals %s exceed tolerances", backend, raw, res)
        status = "numerical_error"
    obj = float(prog.c @ x) + prog.offset
    return ConicSolution(x, y, s, status, obj, res, iters, elapsed, backend, raw)
