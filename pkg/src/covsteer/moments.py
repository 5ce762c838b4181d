"""Exact first and second moment propagation under affine policies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SingularStateCovariance
from .geometry import GaussianDensity, wasserstein2_sq
from .history import HistoryPolicy, build_stacked, gain_to_theta, stacked_cross, stacked_moments
from .problem import CSProblem


def _sym(X):
    return 0.5 * (X + np.swapaxes(X, -1, -2))


@dataclass(frozen=True)
class RandomizedStateFeedbackPolicy:
    """``u_k = v_k + K_k (x_k - xbar_k) + n_k`` with ``n_k ~ N(0, Q_k)``.

    Arrays are stacked over time: ``v`` (N, m), ``K`` (N, m, n), ``Q`` (N, m, m).
    """

    v: np.ndarray
    K: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        v, K, Q = (np.array(a, dtype=float) for a in (self.v, self.K, self.Q))
        N = v.shape[0]
        if v.ndim != 2 or K.ndim != 3 or Q.ndim != 3 or K.shape[0] != N or Q.shape[0] != N:
            raise DimensionMismatch("v, K, Q must be stacked over the same horizon")
        m = v.shape[1]
        if K.shape[1] != m or Q.shape[1:] != (m, m):
            raise DimensionMismatch("inconsistent policy block shapes")
        for a in (v, K, Q):
            a.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "Q", Q)

    @property
    def N(self) -> int:
        return self.v.shape[0]

    @classmethod
    def zero(cls, n: int, m: int, N: int) -> "RandomizedStateFeedbackPolicy":
        return cls(np.zeros((N, m)), np.zeros((N, m, n)), np.zeros((N, m, m)))


@dataclass(frozen=True)
class MomentTrajectory:
    mu: np.ndarray  # (N+1, n)
    Sigma: np.ndarray  # (N+1, n, n)
    ubar: np.ndarray  # (N, m)
    U: np.ndarray  # (N, m, m)
    L: np.ndarray  # (N, m, n), E[u~ x~^T]

    @property
    def terminal(self) -> GaussianDensity:
        return GaussianDensity(self.mu[-1], self.Sigma[-1])


def _check_dims(p: CSProblem, N: int, m: int, n: int | None = None) -> None:
    if N != p.N or m != p.m or (n is not None and n != p.n):
        raise DimensionMismatch(
            f"policy dims (N={N}, m={m}, n={n}) do not match problem (N={p.N}, m={p.m}, n={p.n})"
        )


def propagate_randomized(p: CSProblem, pi: RandomizedStateFeedbackPolicy) -> MomentTrajectory:
    _check_dims(p, pi.N, pi.v.shape[1], pi.K.shape[2])
    n, m, N = p.n, p.m, p.N
    mu = np.empty((N + 1, n))
    Sigma = np.empty((N + 1, n, n))
    U = np.empty((N, m, m))
    L = np.empty((N, m, n))
    mu[0] = p.initial.mean
    Sigma[0] = p.initial.covariance
    for k in range(N):
        A, B, K = p.A[k], p.B[k], pi.K[k]
        Acl = A + B @ K
        mu[k + 1] = A @ mu[k] + B @ pi.v[k]
        Sigma[k + 1] = _sym(Acl @ Sigma[k] @ Acl.T + B @ pi.Q[k] @ B.T + p.W[k])
        U[k] = _sym(K @ Sigma[k] @ K.T + pi.Q[k])
        L[k] = K @ Sigma[k]
    return MomentTrajectory(mu, Sigma, pi.v.copy(), U, L)


def propagate_history(p: CSProblem, pi: HistoryPolicy) -> MomentTrajectory:
    """Moments under state-history feedback, read off the lifted covariances."""
    _check_dims(p, pi.N, pi.v.shape[1], pi.K.shape[3])
    s = build_stacked(p)
    n, m, N = p.n, p.m, p.N
    Theta = gain_to_theta(pi.stacked_gain(), s)
    xbar, CovX, CovU = stacked_moments(s, pi.v.reshape(-1), Theta)
    Cux = stacked_cross(s, Theta)
    mu = xbar.reshape(N + 1, n)
    Sigma = np.stack([s.block(CovX, k, k) for k in range(N + 1)])
    U = np.stack([s.block(CovU, k, k, "u", "u") for k in range(N)])
    L = np.stack([s.block(Cux, k, k, "u", "x") for k in range(N)])
    return MomentTrajectory(mu, _sym(Sigma), pi.v.copy(), _sym(U), L)


def history_recursion_residual(p: CSProblem, traj: MomentTrajectory) -> np.ndarray:
    """Per-step Frobenius residual of the covariance recursion written with ``L_k, U_k``."""
    out = np.empty(p.N)
    for k in range(p.N):
        A, B = p.A[k], p.B[k]
        rhs = (
            A @ traj.Sigma[k] @ A.T
            + A @ traj.L[k].T @ B.T
            + B @ traj.L[k] @ A.T
            + B @ traj.U[k] @ B.T
            + p.W[k]
        )
        out[k] = np.linalg.norm(traj.Sigma[k + 1] - rhs)
    return out


def clip_psd(S: np.ndarray) -> np.ndarray:
    """Symmetrize and zero out negative eigenvalues."""
    w, V = np.linalg.eigh(_sym(S))
    return _sym((V * np.clip(w, 0.0, None)) @ V.T)


def equivalent_randomized(p: CSProblem, pi: HistoryPolicy) -> RandomizedStateFeedbackPolicy:
    """Memoryless randomized policy reproducing the moments of a history policy.

    ``K_k = L_k Sigma_k^-1`` and ``Q_k = U_k - L_k Sigma_k^-1 L_k^T``.
    """
    traj = propagate_history(p, pi)
    N, m, n = p.N, p.m, p.n
    K = np.empty((N, m, n))
    Q = np.empty((N, m, m))
    for k in range(N):
        S = traj.Sigma[k]
        w = np.linalg.eigvalsh(S)
        if w[0] < 1e-12 * w[-1] or w[-1] <= 0:
            raise SingularStateCovariance(f"state covariance at step {k} is singular")
        K[k] = np.linalg.solve(S, traj.L[k].T).T
        Q[k] = clip_psd(traj.U[k] - K[k] @ traj.L[k].T)
    return RandomizedStateFeedbackPolicy(pi.v.copy(), K, Q)


@dataclass(frozen=True)
class PolicyCost:
    running: float
    terminal: float

    @property
    def total(self) -> float:
        return self.running + self.terminal


def policy_cost(traj: MomentTrajectory, p: CSProblem) -> PolicyCost:
    """Expected quadratic control effort plus weighted terminal squared distance."""
    running = 0.0
    for k in range(p.N):
        running += float(traj.ubar[k] @ p.R[k] @ traj.ubar[k] + np.trace(p.R[k] @ traj.U[k]))
    terminal = p.lam * wasserstein2_sq(traj.terminal, p.desired)
    return PolicyCost(running, terminal)
