"""Exact SDP for covariance steering under randomized state feedback.

Decision blocks per step ``k``: ``P_k = K_k Sigma_k`` (m x n), ``M_k`` (the
input second moment ``P_k Sigma_k^-1 P_k^T + Q_k``) and ``Sigma_{k+1}``; one
extra block ``L`` is the epigraph variable of the trace-square-root part of
the terminal cost.  The mean is steered separately in closed form.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .conic import (
    ConicProgram,
    ConicSolution,
    PsdCone,
    Tolerances,
    ZeroCone,
    smat,
    solve_conic,
    sv,
    svec,
)
from .errors import CovSteerError, MoCoMismatch, SingularA, SingularStateCovariance, SolveError
from .geometry import inv_sqrt_pd, wasserstein2_sq
from .moments import (
    MomentTrajectory,
    RandomizedStateFeedbackPolicy,
    clip_psd,
    policy_cost,
    propagate_randomized,
)
from .problem import CSProblem, validate

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# linear maps between svec / vec coordinates


def _sym_basis(d: int):
    for t in range(sv(d)):
        e = np.zeros(sv(d))
        e[t] = 1.0
        yield smat(e)


def _gen_basis(r: int, c: int):
    for t in range(r * c):
        E = np.zeros(r * c)
        E[t] = 1.0
        yield E.reshape(r, c)


def _lin_map(fn, basis) -> np.ndarray:
    return np.column_stack([svec(fn(E), tol=np.inf) for E in basis])


def _embed(side: int, r0: int, c0: int, block: np.ndarray) -> np.ndarray:
    """Symmetric ``side x side`` matrix with ``block`` at (r0, c0) and its mirror."""
    out = np.zeros((side, side))
    r, c = block.shape
    out[r0:r0 + r, c0:c0 + c] = block
    if r0 != c0:
        out[c0:c0 + c, r0:r0 + r] = block.T
    return out


class _Builder:
    def __init__(self):
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.b: list[np.ndarray] = []
        self.cones: list = []
        self.labels: list[str] = []
        self.nrows = 0

    def add(self, cone, label: str, terms, const: np.ndarray):
        """Append rows ``sum_j T_j x[sl_j] + s = const`` for ``s`` in ``cone``."""
        for T, sl in terms:
            T = np.asarray(T)
            rr, cc = np.nonzero(np.abs(T) > 0)
            self.rows.extend((rr + self.nrows).tolist())
            self.cols.extend((cc + sl.start).tolist())
            self.vals.extend(T[rr, cc].tolist())
        self.b.append(np.asarray(const, dtype=float))
        self.cones.append(cone)
        self.labels.append(label)
        self.nrows += cone.dim


@dataclass(frozen=True)
class SdpLayout:
    """Where each decision block lives in ``x`` and each constraint in ``b``."""

    n: int
    m: int
    N: int
    index: dict
    eq_rows: list  # per step, slice of the covariance-dynamics equality
    lmi_rows: list  # per step, slice of the [M P; P^T Sigma] cone
    terminal_rows: slice
    redundant_cones: bool

    def P(self, x, k):
        return x[self.index[f"P{k}"]].reshape(self.m, self.n)

    def M(self, x, k):
        return smat(x[self.index[f"M{k}"]])

    def Sigma(self, x, k, p: CSProblem):
        if k == 0:
            return np.array(p.initial.covariance)
        return smat(x[self.index[f"Sigma{k}"]])

    def L(self, x):
        return smat(x[self.index["L"]])


def variable_count(n: int, m: int, N: int) -> int:
    """Scalar decision variables of the covariance program in symmetric storage."""
    return N * (sv(n) + n * m + sv(m)) + sv(n)


def assemble_sdp(p: CSProblem, redundant_cones: bool = True) -> tuple[ConicProgram, SdpLayout]:
    """Standard-form conic image of the covariance part of the steering problem.

    The conic objective excludes the constant ``lam * tr(Sigma_d)``, which is
    carried in ``ConicProgram.offset`` instead.
    """
    report = validate(p)
    if not report.ok:
        raise SolveError("assemble", "; ".join(report.violations))
    n, m, N = p.n, p.m, p.N
    lam = p.lam

    index: dict[str, slice] = {}
    pos = 0
    for k in range(N):
        for name, size in ((f"P{k}", m * n), (f"M{k}", sv(m)), (f"Sigma{k + 1}", sv(n))):
            index[name] = slice(pos, pos + size)
            pos += size
    index["L"] = slice(pos, pos + sv(n))
    pos += sv(n)

    c = np.zeros(pos)
    for k in range(N):
        c[index[f"M{k}"]] = svec(p.R[k])
    c[index[f"Sigma{N}"]] += lam * svec(np.eye(n))
    c[index["L"]] = -2.0 * lam * svec(np.eye(n))

    bld = _Builder()
    eq_rows, lmi_rows = [], []
    Sigma0 = np.array(p.initial.covariance)
    I_sv_n = np.eye(sv(n))

    for k in range(N):
        A, B = p.A[k], p.B[k]
        T_sig = _lin_map(lambda S: A @ S @ A.T, _sym_basis(n))
        T_P = _lin_map(lambda P: A @ P.T @ B.T + B @ P @ A.T, _gen_basis(m, n))
        T_M = _lin_map(lambda M: B @ M @ B.T, _sym_basis(m))
        terms = [(I_sv_n, index[f"Sigma{k + 1}"]), (-T_P, index[f"P{k}"]), (-T_M, index[f"M{k}"])]
        const = svec(p.W[k], tol=np.inf)
        if k == 0:
            const = const + T_sig @ svec(Sigma0)
        else:
            terms.append((-T_sig, index[f"Sigma{k}"]))
        start = bld.nrows
        bld.add(ZeroCone(sv(n)), f"dyn{k}", terms, const)
        eq_rows.append(slice(start, bld.nrows))

    side = m + n
    E_M = _lin_map(lambda M: _embed(side, 0, 0, M), _sym_basis(m))
    E_P = _lin_map(lambda P: _embed(side, 0, m, P), _gen_basis(m, n))
    E_S = _lin_map(lambda S: _embed(side, m, m, S), _sym_basis(n))
    for k in range(N):
        terms = [(-E_M, index[f"M{k}"]), (-E_P, index[f"P{k}"])]
        if k == 0:
            const = E_S @ svec(Sigma0)
        else:
            terms.append((-E_S, index[f"Sigma{k}"]))
            const = np.zeros(sv(side))
        start = bld.nrows
        bld.add(PsdCone(side), f"lmi{k}", terms, const)
        lmi_rows.append(slice(start, bld.nrows))

    Dinv = inv_sqrt_pd(p.desired.covariance)
    E_SN = _lin_map(lambda S: _embed(2 * n, 0, 0, S), _sym_basis(n))
    E_L = _lin_map(lambda Lm: _embed(2 * n, 0, n, Dinv @ Lm), _sym_basis(n))
    const = svec(_embed(2 * n, n, n, np.eye(n)))
    start = bld.nrows
    bld.add(
        PsdCone(2 * n),
        "terminal",
        [(-E_SN, index[f"Sigma{N}"]), (-E_L, index["L"])],
        const,
    )
    terminal_rows = slice(start, bld.nrows)
    bld.add(PsdCone(n), "L_psd", [(-I_sv_n, index["L"])], np.zeros(sv(n)))
    if redundant_cones:
        for k in range(1, N + 1):
            bld.add(PsdCone(n), f"Sigma{k}_psd", [(-I_sv_n, index[f"Sigma{k}"])], np.zeros(sv(n)))
        for k in range(N):
            bld.add(PsdCone(m), f"M{k}_psd", [(-np.eye(sv(m)), index[f"M{k}"])], np.zeros(sv(m)))

    Amat = sp.csc_matrix((bld.vals, (bld.rows, bld.cols)), shape=(bld.nrows, pos))
    prog = ConicProgram(
        c=c,
        A=Amat,
        b=np.concatenate(bld.b),
        cones=bld.cones,
        variable_index=index,
        offset=lam * float(np.trace(p.desired.covariance)),
        cone_labels=bld.labels,
    )
    layout = SdpLayout(n, m, N, index, eq_rows, lmi_rows, terminal_rows, redundant_cones)
    return prog, layout


def trace_sqrt_program(M, N) -> tuple[ConicProgram, slice]:
    """``min -tr(L)`` over ``[N, M^-1/2 L; L M^-1/2, I] >= 0, L >= 0``.

    The optimum is ``-tr((M^1/2 N M^1/2)^1/2)``; this is the terminal block
    of :func:`assemble_sdp` with ``N`` held fixed.
    """
    M = np.asarray(M, dtype=float)
    N = np.asarray(N, dtype=float)
    n = M.shape[0]
    Dinv = inv_sqrt_pd(M)
    L_sl = slice(0, sv(n))
    E_L = _lin_map(lambda Lm: _embed(2 * n, 0, n, Dinv @ Lm), _sym_basis(n))
    bld = _Builder()
    bld.add(PsdCone(2 * n), "terminal", [(-E_L, L_sl)],
            svec(_embed(2 * n, 0, 0, N), tol=np.inf) + svec(_embed(2 * n, n, n, np.eye(n))))
    bld.add(PsdCone(n), "L_psd", [(-np.eye(sv(n)), L_sl)], np.zeros(sv(n)))
    Amat = sp.csc_matrix((bld.vals, (bld.rows, bld.cols)), shape=(bld.nrows, sv(n)))
    prog = ConicProgram(c=-svec(np.eye(n)), A=Amat, b=np.concatenate(bld.b), cones=bld.cones,
                        variable_index={"L": L_sl}, cone_labels=bld.labels)
    return prog, L_sl


# --------------------------------------------------------------------------
# mean steering


@dataclass(frozen=True)
class MeanSolution:
    v: np.ndarray  # (N, m)
    mu: np.ndarray  # (N+1, n)
    J_mean: float


def terminal_map(p: CSProblem):
    """``(Phi, G)`` with ``mu_N = Phi mu_0 + G vec(v)``."""
    n, m, N = p.n, p.m, p.N
    Phi = np.eye(n)
    G = np.zeros((n, m * N))
    for k in range(N):
        G = p.A[k] @ G
        G[:, k * m:(k + 1) * m] = p.B[k]
        Phi = p.A[k] @ Phi
    return Phi, G


def solve_mean_qp(p: CSProblem) -> MeanSolution:
    """Closed-form minimizer of ``sum v_k' R_k v_k + lam |mu_N - mu_d|^2``."""
    n, m, N = p.n, p.m, p.N
    Phi, G = terminal_map(p)
    d = Phi @ p.initial.mean - p.desired.mean
    Rbar = sla.block_diag(*p.R)
    v = -p.lam * sla.solve(Rbar + p.lam * G.T @ G, G.T @ d, assume_a="pos")
    mu = np.empty((N + 1, n))
    mu[0] = p.initial.mean
    vs = v.reshape(N, m)
    for k in range(N):
        mu[k + 1] = p.A[k] @ mu[k] + p.B[k] @ vs[k]
    err = mu[N] - p.desired.mean
    J = float(v @ Rbar @ v + p.lam * err @ err)
    return MeanSolution(vs, mu, J)


# --------------------------------------------------------------------------
# policy extraction


@dataclass
class CSSolution:
    policy: RandomizedStateFeedbackPolicy
    trajectory: MomentTrajectory
    J_sdp: float
    J_mean: float
    J_cov: float
    conic: ConicSolution
    determinism: np.ndarray
    terminal_w2: float
    Sigma: np.ndarray  # (N+1, n, n) from the SDP blocks, Sigma_0 included
    P: np.ndarray
    M: np.ndarray
    L: np.ndarray
    Q_raw: np.ndarray  # M - P Sigma^-1 P^T before clipping
    layout: SdpLayout
    moment_mismatch: float
    conic_offset: float = 0.0
    timings: dict = field(default_factory=dict)

    @property
    def J_decision(self) -> float:
        """Objective without the constant ``lam * tr(Sigma_d)``."""
        return self.J_sdp - self.conic_offset

    @property
    def q_norm_max(self) -> float:
        return float(np.max(self.determinism)) if self.determinism.size else 0.0


def extract_policy(
    p: CSProblem,
    sol: ConicSolution,
    layout: SdpLayout,
    mean: MeanSolution,
    offset: float | None = None,
    mismatch_tol: float = 1e-4,
) -> CSSolution:
    """Recover ``K_k = P_k Sigma_k^-1`` and ``Q_k = M_k - P_k Sigma_k^-1 P_k^T``."""
    if not sol.optimal:
        raise SolveError("extract", f"conic status is {sol.status}", sol.status)
    n, m, N = p.n, p.m, p.N
    x = sol.x
    Sigma = np.stack([layout.Sigma(x, k, p) for k in range(N + 1)])
    P = np.stack([layout.P(x, k) for k in range(N)])
    M = np.stack([layout.M(x, k) for k in range(N)])
    L = layout.L(x)
    K = np.empty((N, m, n))
    Q_raw = np.empty((N, m, m))
    for k in range(N):
        w = np.linalg.eigvalsh(Sigma[k])
        if w[-1] <= 0 or w[0] <= 1e-12 * w[-1]:
            raise SingularStateCovariance(f"SDP state covariance at step {k} is singular")
        K[k] = np.linalg.solve(Sigma[k], P[k].T).T
        Qk = M[k] - K[k] @ P[k].T
        Q_raw[k] = 0.5 * (Qk + Qk.T)
    Q = np.stack([clip_psd(q) for q in Q_raw])
    policy = RandomizedStateFeedbackPolicy(mean.v, K, Q)
    traj = propagate_randomized(p, policy)
    mismatch = max(
        np.linalg.norm(traj.Sigma[k] - Sigma[k]) / max(np.linalg.norm(Sigma[k]), 1e-300)
        for k in range(N + 1)
    )
    if mismatch > mismatch_tol:
        raise MoCoMismatch(f"re-propagated covariances differ from SDP blocks by {mismatch:.2e}")
    lam = p.lam
    Sd = p.desired.covariance
    J_cov = sum(float(np.trace(p.R[k] @ M[k])) for k in range(N)) + lam * float(
        np.trace(Sigma[N] + Sd - 2.0 * L)
    )
    determinism = np.array(
        [np.linalg.norm(Q[k]) / max(1.0, np.linalg.norm(M[k])) for k in range(N)]
    )
    return CSSolution(
        policy=policy,
        trajectory=traj,
        J_sdp=mean.J_mean + J_cov,
        J_mean=mean.J_mean,
        J_cov=J_cov,
        conic=sol,
        determinism=determinism,
        terminal_w2=wasserstein2_sq(traj.terminal, p.desired),
        Sigma=Sigma,
        P=P,
        M=M,
        L=L,
        Q_raw=Q_raw,
        layout=layout,
        moment_mismatch=float(mismatch),
        conic_offset=lam * float(np.trace(Sd)) if offset is None else offset,
    )


@dataclass
class SolveOptions:
    backend: str = "clarabel"
    tolerances: Tolerances = field(default_factory=Tolerances)
    max_iter: int = 200
    redundant_cones: bool = True
    determinism_threshold: float = 1e-5

    @classmethod
    def from_mapping(cls, d: dict) -> "SolveOptions":
        known = {"backend", "eps_primal", "eps_dual", "eps_gap", "max_iter",
                 "redundant_cones", "determinism_threshold"}
        extra = set(d) - known
        if extra:
            raise CovSteerError("unknown solver option(s): " + ", ".join(sorted(extra)))
        tol = Tolerances(
            float(d.get("eps_primal", 1e-8)),
            float(d.get("eps_dual", 1e-8)),
            float(d.get("eps_gap", 1e-8)),
        )
        return cls(
            backend=str(d.get("backend", "clarabel")),
            tolerances=tol,
            max_iter=int(d.get("max_iter", 200)),
            redundant_cones=bool(d.get("redundant_cones", True)),
            determinism_threshold=float(d.get("determinism_threshold", 1e-5)),
        )


def solve_cs(p: CSProblem, options: SolveOptions | None = None) -> CSSolution:
    """Mean QP, SDP assembly, conic solve and policy extraction, in that order."""
    opts = options or SolveOptions()
    timings = {}

    def stage(name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        except SolveError:
            raise
        except CovSteerError as exc:
            raise SolveError(name, str(exc)) from exc
        finally:
            timings[name] = 1e3 * (time.perf_counter() - t0)

    mean = stage("mean_qp", solve_mean_qp, p)
    prog, layout = stage("assemble", assemble_sdp, p, opts.redundant_cones)
    sol = stage(
        "conic_solve",
        solve_conic,
        prog,
        opts.tolerances,
        backend=opts.backend,
        max_iter=opts.max_iter,
    )
    if not sol.optimal:
        raise SolveError("conic_solve", f"status {sol.status} ({sol.backend_status})", sol.status)
    out = stage("extract", extract_policy, p, sol, layout, mean, prog.offset)
    out.timings = timings
    return out


# --------------------------------------------------------------------------
# determinism of the optimal policy


@dataclass
class DeterminismReport:
    q_norms: np.ndarray
    comp_slack: np.ndarray | None
    dual_feasible: np.ndarray | None  # (N, 2) booleans for the M- and P-stationarity rows
    dual_residuals: np.ndarray | None
    reduced_primal_res: np.ndarray | None
    threshold: float
    kkt_available: bool
    notes: list[str] = field(default_factory=list)

    @property
    def pass_(self) -> bool:
        return bool(np.max(self.q_norms, initial=0.0) <= self.threshold)

    @property
    def max_q_norm(self) -> float:
        return float(np.max(self.q_norms, initial=0.0))


def verify_deterministic(
    p: CSProblem,
    sol: CSSolution,
    threshold: float = 1e-5,
    dual_tol: float = 1e-6,
    strict: bool = False,
) -> DeterminismReport:
    """Check that the injected-noise covariances vanish and audit the per-step KKT system.

    For each step the per-step reduced data ``Z = A^-1 (Sigma_{k+1} - W) A^-T``
    and ``Y = A^-1 B`` are rebuilt; with ``H`` the equality multiplier mapped
    to the reduced coordinates and ``Q`` the multiplier of the
    ``[M P; P^T Sigma]`` cone, dual feasibility reads
    ``Q11 = R - Y^T H Y`` and ``Q12^T = -H Y``, and complementary slackness
    ``Q [I, P Sigma^-1; 0, I] diag(M - P Sigma^-1 P^T, Sigma) = 0``.
    """
    N, m, n = p.N, p.m, p.n
    q_norms = np.array(
        [np.linalg.norm(sol.policy.Q[k]) / max(1.0, np.linalg.norm(sol.M[k])) for k in range(N)]
    )
    notes = []
    singular = [k for k in range(N) if abs(np.linalg.det(p.A[k])) <= 1e-12 * max(1.0, np.linalg.norm(p.A[k]) ** n)]
    if singular:
        msg = f"A_k singular at steps {singular}; KKT audit unavailable"
        if strict:
            raise SingularA(msg)
        notes.append(msg)
        return DeterminismReport(q_norms, None, None, None, None, threshold, False, notes)

    y = sol.conic.y
    layout = sol.layout
    comp = np.empty(N)
    feas = np.zeros((N, 2), dtype=bool)
    dres = np.empty((N, 2))
    prim = np.empty(N)
    for k in range(N):
        A, B, R = p.A[k], p.B[k], p.R[k]
        S, P, M = sol.Sigma[k], sol.P[k], sol.M[k]
        Ainv = np.linalg.inv(A)
        Z = Ainv @ (sol.Sigma[k + 1] - p.W[k]) @ Ainv.T
        Y = Ainv @ B
        prim[k] = np.linalg.norm(Z - (S + P.T @ Y.T + Y @ P + Y @ M @ Y.T)) / max(
            1.0, np.linalg.norm(Z)
        )
        H = A.T @ smat(y[layout.eq_rows[k]]) @ A
        Qd = smat(y[layout.lmi_rows[k]])
        Q11, Q12 = Qd[:m, :m], Qd[:m, m:]
        r1 = np.linalg.norm(Q11 - (R - Y.T @ H @ Y)) / max(1.0, np.linalg.norm(R))
        r2 = np.linalg.norm(Q12.T + H @ Y) / max(1.0, np.linalg.norm(H @ Y))
        dres[k] = (r1, r2)
        feas[k] = (r1 <= dual_tol, r2 <= dual_tol)
        SinvPt = np.linalg.solve(S, P.T)
        left = np.block([[np.eye(m), SinvPt.T], [np.zeros((n, m)), np.eye(n)]])
        mid = sla.block_diag(M - P @ SinvPt, S)
        X = np.block([[M, P], [P.T, S]])
        comp[k] = np.linalg.norm(Qd @ left @ mid) / max(
            1.0, np.linalg.norm(Qd) * np.linalg.norm(X)
        )
    return DeterminismReport(q_norms, comp, feas, dres, prim, threshold, True, notes)
