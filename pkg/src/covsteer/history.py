"""State-history feedback in lifted (stacked) coordinates and the CCP baseline.

Over the whole horizon the closed loop reads ``x = Gamma x0 + Gu u + Gw w`` and
``u = v + K (x - xbar)`` with ``K`` block lower triangular.  The change of
variables ``Theta = K (I - Gu K)^-1`` makes both state and input covariances
quadratic in ``Theta``; the terminal Wasserstein cost then splits into a convex
part minus a convex trace-square-root part, which the convex-concave procedure
handles by linearizing the latter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, NotPD, SingularTransform
from .geometry import GaussianDensity, sqrt_psd, wasserstein2_sq
from .problem import CSProblem

log = logging.getLogger(__name__)

Structure = Literal["full-causal", "block-diagonal"]


@dataclass(frozen=True)
class StackedSystem:
    Gamma: np.ndarray  # n(N+1) x n
    Gu: np.ndarray  # n(N+1) x mN
    Gw: np.ndarray  # n(N+1) x nN
    Sbar: np.ndarray  # n(N+1) x n(N+1), covariance of Gamma x0 + Gw w
    F: np.ndarray  # n x n(N+1), picks x_N
    Rbar: np.ndarray  # mN x mN
    mu0: np.ndarray
    n: int
    m: int
    N: int

    def block(self, M: np.ndarray, i: int, j: int, rows: str = "x", cols: str = "x") -> np.ndarray:
        """Block ``(i, j)`` of a stacked matrix; ``rows``/``cols`` are ``'x'`` or ``'u'``."""
        r = self.n if rows == "x" else self.m
        c = self.n if cols == "x" else self.m
        return M[i * r:(i + 1) * r, j * c:(j + 1) * c]


def build_stacked(p: CSProblem) -> StackedSystem:
    n, m, N = p.n, p.m, p.N
    Gamma = np.zeros((n * (N + 1), n))
    Gu = np.zeros((n * (N + 1), m * N))
    Gw = np.zeros((n * (N + 1), n * N))
    Gamma[:n] = np.eye(n)
    for k in range(N):
        rk, rk1 = slice(k * n, (k + 1) * n), slice((k + 1) * n, (k + 2) * n)
        Gamma[rk1] = p.A[k] @ Gamma[rk]
        Gu[rk1] = p.A[k] @ Gu[rk]
        Gu[rk1, k * m:(k + 1) * m] = p.B[k]
        Gw[rk1] = p.A[k] @ Gw[rk]
        Gw[rk1, k * n:(k + 1) * n] = np.eye(n)
    Wbar = sla.block_diag(*p.W)
    Sbar = Gamma @ p.initial.covariance @ Gamma.T + Gw @ Wbar @ Gw.T
    Sbar = 0.5 * (Sbar + Sbar.T)
    F = np.zeros((n, n * (N + 1)))
    F[:, n * N:] = np.eye(n)
    Rbar = sla.block_diag(*p.R)
    return StackedSystem(Gamma, Gu, Gw, Sbar, F, Rbar, p.initial.mean.copy(), n, m, N)


def causal_mask(n: int, m: int, N: int, structure: Structure = "full-causal") -> np.ndarray:
    """Boolean mask of the free entries of an ``mN x n(N+1)`` gain or Theta."""
    blocks = np.zeros((N, N + 1), dtype=bool)
    for k in range(N):
        if structure == "block-diagonal":
            blocks[k, k] = True
        elif structure == "full-causal":
            blocks[k, : k + 1] = True
        else:
            raise ValueError(f"unknown structure {structure!r}")
    return np.kron(blocks, np.ones((m, n), dtype=bool))


def _check_theta(T: np.ndarray, s: StackedSystem) -> None:
    if T.shape != (s.m * s.N, s.n * (s.N + 1)):
        raise DimensionMismatch(f"expected {(s.m * s.N, s.n * (s.N + 1))}, got {T.shape}")


def _transform(X: np.ndarray, s: StackedSystem, sign: float) -> np.ndarray:
    """``X (I + sign Gu X)^-1``."""
    _check_theta(X, s)
    dim = s.n * (s.N + 1)
    lhs = np.eye(dim) + sign * (s.Gu @ X)
    # Gu X is strictly block-lower triangular for causal X, so lhs is unit lower triangular.
    try:
        sol = sla.solve(lhs.T, X.T)
    except sla.LinAlgError as exc:
        raise SingularTransform(str(exc)) from None
    return sol.T


def gain_to_theta(K: np.ndarray, stacked: StackedSystem) -> np.ndarray:
    """``Theta = K (I - Gu K)^-1``."""
    return _transform(np.asarray(K, dtype=float), stacked, -1.0)


def theta_to_gain(Theta: np.ndarray, stacked: StackedSystem) -> np.ndarray:
    """``K = Theta (I + Gu Theta)^-1``, the inverse of :func:`gain_to_theta`."""
    return _transform(np.asarray(Theta, dtype=float), stacked, 1.0)


def stacked_moments(stacked: StackedSystem, v: np.ndarray, Theta: np.ndarray):
    """Mean and covariance of the stacked state and input under ``(v, Theta)``.

    Returns ``(xbar, CovX, CovU)``; see :func:`stacked_cross` for ``Cov(u, x)``.
    """
    _check_theta(Theta, stacked)
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != stacked.m * stacked.N:
        raise DimensionMismatch(f"v must have {stacked.m * stacked.N} entries")
    xbar = stacked.Gamma @ stacked.mu0 + stacked.Gu @ v
    T = np.eye(stacked.Gu.shape[0]) + stacked.Gu @ Theta
    CovX = T @ stacked.Sbar @ T.T
    CovU = Theta @ stacked.Sbar @ Theta.T
    return xbar, 0.5 * (CovX + CovX.T), 0.5 * (CovU + CovU.T)


def stacked_cross(stacked: StackedSystem, Theta: np.ndarray) -> np.ndarray:
    """``Cov(u, x) = Theta Sbar (I + Gu Theta)^T``."""
    T = np.eye(stacked.Gu.shape[0]) + stacked.Gu @ Theta
    return Theta @ stacked.Sbar @ T.T


def terminal_covariance(stacked: StackedSystem, Theta: np.ndarray) -> np.ndarray:
    FT = stacked.F + (stacked.F @ stacked.Gu) @ Theta
    S = FT @ stacked.Sbar @ FT.T
    return 0.5 * (S + S.T)


@dataclass(frozen=True)
class DCPTerms:
    J1: float
    J2: float
    J3: float
    J4: float

    @property
    def total(self) -> float:
        return self.J1 + self.J2 + self.J3 - self.J4


def objective_dcp(stacked: StackedSystem, v, Theta, p: CSProblem) -> DCPTerms:
    """The four terms of the difference-of-convex objective at ``(v, Theta)``."""
    lam = p.lam
    v = np.asarray(v, dtype=float).reshape(-1)
    mean_err = stacked.F @ (stacked.Gamma @ stacked.mu0 + stacked.Gu @ v) - p.desired.mean
    J1 = float(v @ stacked.Rbar @ v + lam * mean_err @ mean_err)
    J2 = float(np.trace(stacked.Rbar @ Theta @ stacked.Sbar @ Theta.T))
    SN = terminal_covariance(stacked, Theta)
    Sd = p.desired.covariance
    J3 = float(lam * np.trace(SN + Sd))
    D = sqrt_psd(Sd)
    inner = D @ SN @ D
    J4 = float(2.0 * lam * np.trace(sqrt_psd(0.5 * (inner + inner.T))))
    return DCPTerms(J1, J2, J3, J4)


def grad_J4(stacked: StackedSystem, Theta, p: CSProblem, perturb: float = 1e-12) -> np.ndarray:
    """Gradient of the trace-square-root term with respect to ``Theta`` (full matrix)."""
    _check_theta(Theta, stacked)
    D = sqrt_psd(p.desired.covariance)
    FT = stacked.F + (stacked.F @ stacked.Gu) @ Theta
    SN = FT @ stacked.Sbar @ FT.T
    inner = D @ SN @ D
    inner = 0.5 * (inner + inner.T)
    w, V = np.linalg.eigh(inner)
    floor = perturb * max(w[-1], 1.0)
    if w[0] <= 0:
        w = w + floor
        if w[0] <= 0:
            raise NotPD("terminal covariance is singular beyond the perturbation floor")
    inv_sqrt = (V / np.sqrt(w)) @ V.T
    left = (stacked.F @ stacked.Gu).T @ D @ inv_sqrt @ D
    return 2.0 * p.lam * left @ FT @ stacked.Sbar


# --------------------------------------------------------------------------
# policies with state-history feedback


@dataclass(frozen=True)
class HistoryPolicy:
    """Affine state-history feedback: ``u_k = v_k + sum_{tau<=k} K[k, tau] (x_tau - xbar_tau)``.

    ``K`` has shape ``(N, N, m, n)``; blocks with ``tau > k`` must be zero.
    """

    v: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        K = np.array(self.K, dtype=float)
        if v.ndim != 2 or K.ndim != 4 or K.shape[0] != K.shape[1] or K.shape[0] != v.shape[0]:
            raise DimensionMismatch("v must be (N, m) and K must be (N, N, m, n)")
        if K.shape[2] != v.shape[1]:
            raise DimensionMismatch("K blocks must have m rows")
        upper = np.triu(np.ones(K.shape[:2], dtype=bool), 1)
        if np.any(K[upper] != 0):
            raise ValueError("history gains must be causal (K[k, tau] = 0 for tau > k)")
        v.setflags(write=False)
        K.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "K", K)

    @property
    def N(self) -> int:
        return self.v.shape[0]

    def stacked_gain(self) -> np.ndarray:
        N, _, m, n = self.K.shape
        out = np.zeros((m * N, n * (N + 1)))
        for k in range(N):
            for t in range(k + 1):
                out[k * m:(k + 1) * m, t * n:(t + 1) * n] = self.K[k, t]
        return out

    @classmethod
    def from_stacked(cls, v, Kstack: np.ndarray, n: int, m: int, N: int) -> "HistoryPolicy":
        K = np.zeros((N, N, m, n))
        for k in range(N):
            for t in range(k + 1):
                K[k, t] = Kstack[k * m:(k + 1) * m, t * n:(t + 1) * n]
        return cls(np.asarray(v, dtype=float).reshape(N, m), K)

    @classmethod
    def zero(cls, n: int, m: int, N: int) -> "HistoryPolicy":
        return cls(np.zeros((N, m)), np.zeros((N, N, m, n)))


def random_history_policy(seed: int, n: int, m: int, N: int, scale: float = 0.3) -> HistoryPolicy:
    rng = np.random.default_rng(seed)
    K = scale * rng.standard_normal((N, N, m, n))
    K[np.triu(np.ones((N, N), dtype=bool), 1)] = 0.0
    return HistoryPolicy(rng.standard_normal((N, m)), K)


# --------------------------------------------------------------------------
# convex-concave procedure


@dataclass
class CCPResult:
    v: np.ndarray
    Theta: np.ndarray
    J_trace: list[float]
    terms: DCPTerms
    converged: bool
    iterations: int
    structure: str
    info: dict = field(default_factory=dict)

    @property
    def J(self) -> float:
        return self.terms.total


def mean_feedforward(stacked: StackedSystem, p: CSProblem) -> np.ndarray:
    """Closed-form minimizer of the mean term ``J1`` (normal equations)."""
    G = stacked.F @ stacked.Gu
    d = stacked.F @ stacked.Gamma @ stacked.mu0 - p.desired.mean
    H = stacked.Rbar + p.lam * G.T @ G
    return -p.lam * sla.solve(H, G.T @ d, assume_a="pos")


def ccp_solve(
    p: CSProblem,
    structure: Structure = "full-causal",
    tol: float = 1e-8,
    max_iter: int = 200,
    init: np.ndarray | None = None,
    stacked: StackedSystem | None = None,
) -> CCPResult:
    """Minimize the DCP objective over ``Theta`` restricted to ``structure``.

    Each iteration minimizes ``J2 + J3 - <grad J4(Theta_i), Theta>`` exactly;
    that quadratic has a fixed Hessian, so it is factorized once.
    """
    s = stacked if stacked is not None else build_stacked(p)
    mask = causal_mask(s.n, s.m, s.N, structure)
    rows, cols = np.nonzero(mask)
    G = s.F @ s.Gu
    P = s.Rbar + p.lam * G.T @ G
    # d/dTheta of tr(P Theta Sbar Theta^T) pairs P[r, r'] with Sbar[c, c'].
    H = P[np.ix_(rows, rows)] * s.Sbar[np.ix_(cols, cols)]
    factor = sla.cho_factor(H, lower=True)
    const = (p.lam * G.T @ s.F @ s.Sbar)[rows, cols]

    v = mean_feedforward(s, p)
    Theta = np.zeros(mask.shape) if init is None else np.where(mask, init, 0.0)
    terms = objective_dcp(s, v, Theta, p)
    trace = [terms.total]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = grad_J4(s, Theta, p)
        rhs = 0.5 * g[rows, cols] - const
        new = np.zeros(mask.shape)
        new[rows, cols] = sla.cho_solve(factor, rhs)
        new_terms = objective_dcp(s, v, new, p)
        prev = trace[-1]
        Theta, terms = new, new_terms
        trace.append(terms.total)
        if prev - terms.total <= tol * max(abs(prev), 1.0):
            converged = True
            break
    if not converged:
        log.warning("CCP hit max_iter=%d without meeting tol=%g", max_iter, tol)
    return CCPResult(v, Theta, trace, terms, converged, it, structure)


def ccp_policy(result: CCPResult, stacked: StackedSystem) -> HistoryPolicy:
    K = theta_to_gain(result.Theta, stacked)
    return HistoryPolicy.from_stacked(result.v, K, stacked.n, stacked.m, stacked.N)


def terminal_w2_dcp(stacked: StackedSystem, v, Theta, p: CSProblem) -> float:
    xbar, _, _ = stacked_moments(stacked, v, Theta)
    SN = terminal_covariance(stacked, Theta)
    return wasserstein2_sq(GaussianDensity(stacked.F @ xbar, SN), p.desired)
