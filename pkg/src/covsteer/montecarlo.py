"""Seeded closed-loop rollouts of a randomized state-feedback policy.

Random draws come from Philox streams keyed by ``(seed, block, step, kind)``
where rollouts are grouped in fixed blocks of :data:`BLOCK` consecutive
indices.  A rollout's noise therefore depends only on its index, never on
how many rollouts are run or in what order blocks are processed.  Blocks are
reduced in index order, so statistics are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .geometry import GaussianDensity, wasserstein2_sq
from .moments import RandomizedStateFeedbackPolicy, propagate_randomized
from .problem import CSProblem

BLOCK = 4096
_KIND = {"x0": 0, "w": 1, "n": 2}


@dataclass(frozen=True)
class EmpiricalStats:
    sample_mean: np.ndarray  # (N+1, n)
    sample_cov: np.ndarray  # (N+1, n, n), unbiased
    rollouts: int
    seed: int
    terminal_w2: float


def _factor(S: np.ndarray) -> np.ndarray:
    """``F`` with ``F F^T = S`` for PSD ``S`` (singular allowed)."""
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def _normals(seed: int, block: int, step: int, kind: str, count: int, dim: int) -> np.ndarray:
    key = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, block, step, _KIND[kind]])
    gen = np.random.Generator(np.random.Philox(key))
    return gen.standard_normal((count, dim))


def rollout_block(
    p: CSProblem,
    pi: RandomizedStateFeedbackPolicy,
    mean_traj: np.ndarray,
    seed: int,
    block: int,
    count: int,
):
    """Simulate ``count`` rollouts of one block; yields the state batch at each step."""
    n, m = p.n, p.m
    x = p.initial.mean + _normals(seed, block, 0, "x0", count, n) @ _factor(p.initial.covariance).T
    yield x
    for k in range(p.N):
        u = pi.v[k] + (x - mean_traj[k]) @ pi.K[k].T
        if np.any(pi.Q[k]):
            u = u + _normals(seed, block, k, "n", count, m) @ _factor(pi.Q[k]).T
        w = _normals(seed, block, k, "w", count, n) @ _factor(p.W[k]).T
        x = x @ p.A[k].T + u @ p.B[k].T + w
        yield x


def simulate(
    p: CSProblem,
    pi: RandomizedStateFeedbackPolicy,
    rollouts: int,
    seed: int = 0,
) -> EmpiricalStats:
    """Per-step sample mean and unbiased sample covariance over ``rollouts`` runs."""
    if rollouts < 2:
        raise ValueError("need at least two rollouts")
    if pi.N != p.N or pi.v.shape[1] != p.m or pi.K.shape[2] != p.n:
        raise DimensionMismatch("policy does not match problem dimensions")
    n, N = p.n, p.N
    mean_traj = propagate_randomized(p, pi).mu
    # per-block sums around the analytic mean keep the accumulation well conditioned
    s1 = np.zeros((N + 1, n))
    s2 = np.zeros((N + 1, n, n))
    nblocks = -(-rollouts // BLOCK)
    for b in range(nblocks):
        count = min(BLOCK, rollouts - b * BLOCK)
        for k, x in enumerate(rollout_block(p, pi, mean_traj, seed, b, count)):
            d = x - mean_traj[k]
            s1[k] += d.sum(axis=0)
            s2[k] += d.T @ d
    dm = s1 / rollouts
    cov = (s2 - rollouts * np.einsum("ki,kj->kij", dm, dm)) / (rollouts - 1)
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    mean = mean_traj + dm
    w2 = wasserstein2_sq(GaussianDensity(mean[-1], cov[-1]), p.desired)
    return EmpiricalStats(mean, cov, rollouts, seed, w2)


def envelope_violations(stats: EmpiricalStats, mu: np.ndarray, Sigma: np.ndarray, k_sigma: float = 3.0):
    """Entries of mean and covariance outside the ``k_sigma`` sampling envelopes.

    Covariance bound per entry: ``k * sqrt((S_ii S_jj + S_ij^2) / R)``;
    mean bound: ``k * sqrt(S_ii / R)``.  Returns two boolean arrays.
    """
    R = stats.rollouts
    diag = np.einsum("kii->ki", Sigma)
    mean_bound = k_sigma * np.sqrt(diag / R)
    cov_bound = k_sigma * np.sqrt((diag[:, :, None] * diag[:, None, :] + Sigma**2) / R)
    return (
        np.abs(stats.sample_mean - mu) > mean_bound,
        np.abs(stats.sample_cov - Sigma) > cov_bound,
    )
