"""Principal square roots and the closed-form Wasserstein distance between Gaussians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotPD, NotPSD, NotSymmetric

SYM_TOL = 1e-12
PSD_TOL = 1e-10


def _as_square(S, name="matrix") -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {S.shape}")
    return S


def check_symmetric(S, tol: float = SYM_TOL, name: str = "matrix") -> np.ndarray:
    """Return the symmetrized matrix, raising if the relative asymmetry exceeds ``tol``."""
    S = _as_square(S, name)
    scale = np.linalg.norm(S)
    if scale > 0 and np.linalg.norm(S - S.T) > tol * scale:
        raise NotSymmetric(f"{name} is not symmetric")
    return 0.5 * (S + S.T)


def psd_eigh(S, tol: float = PSD_TOL, name: str = "matrix"):
    """Eigendecomposition of a symmetric PSD matrix with round-off negatives clipped to zero."""
    S = check_symmetric(S, name=name)
    w, V = np.linalg.eigh(S)
    top = max(float(np.max(np.abs(w))), 0.0) if w.size else 0.0
    if w.size and w[0] < -tol * top:
        raise NotPSD(f"{name} has eigenvalue {w[0]:.3e} below -{tol:g}*{top:.3e}")
    return np.clip(w, 0.0, None), V


def sqrt_psd(S, tol: float = PSD_TOL) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix."""
    w, V = psd_eigh(S, tol)
    R = (V * np.sqrt(w)) @ V.T
    return 0.5 * (R + R.T)


def inv_sqrt_pd(S, tol: float = 1e-12) -> np.ndarray:
    """Inverse principal square root of a strictly PD matrix."""
    S = check_symmetric(S)
    w, V = np.linalg.eigh(S)
    if w[0] <= tol * max(w[-1], 0.0) or w[-1] <= 0:
        raise NotPD("matrix is not strictly positive definite")
    R = (V / np.sqrt(w)) @ V.T
    return 0.5 * (R + R.T)


def is_pd(S, tol: float = PSD_TOL) -> bool:
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    return bool(w[-1] > 0 and w[0] > tol * w[-1])


def is_psd(S, tol: float = PSD_TOL) -> bool:
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    return bool(w[0] >= -tol * max(abs(w[-1]), abs(w[0])))


@dataclass(frozen=True)
class GaussianDensity:
    """Mean and covariance of a multivariate normal density."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = _as_square(self.covariance, "covariance").copy()
        if cov.shape[0] != mean.size:
            raise DimensionMismatch(
                f"mean has dimension {mean.size} but covariance is {cov.shape}"
            )
        check_symmetric(cov, name="covariance")
        psd_eigh(cov, name="covariance")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def wasserstein2_sq(g1: GaussianDensity, g2: GaussianDensity) -> float:
    """Squared 2-Wasserstein distance between two Gaussian densities.

    Uses the closed form ``|m1 - m2|^2 + tr(S1 + S2) - 2 tr((sqrt(S2) S1 sqrt(S2))^(1/2))``.
    Round-off negatives down to -1e-9 are returned as 0.
    """
    if g1.dim != g2.dim:
        raise DimensionMismatch(f"dimensions differ: {g1.dim} vs {g2.dim}")
    r2 = sqrt_psd(g2.covariance)
    cross = sqrt_psd(_sym(r2 @ g1.covariance @ r2))
    d = g1.mean - g2.mean
    val = float(d @ d + np.trace(g1.covariance) + np.trace(g2.covariance) - 2.0 * np.trace(cross))
    if val < 0.0:
        scale = 1.0 + np.trace(g1.covariance) + np.trace(g2.covariance)
        if val < -1e-9 * scale:
            raise ArithmeticError(f"negative squared distance {val:.3e}")
        val = 0.0
    return val


def phi_trace_sqrt(M, N) -> float:
    """Return ``-tr((sqrt(M) N sqrt(M))^(1/2))`` for PD ``M`` and PSD ``N``."""
    M = check_symmetric(M, name="M")
    w = np.linalg.eigvalsh(M)
    if w[-1] <= 0 or w[0] <= 1e-12 * w[-1]:
        raise NotPD("M must be strictly positive definite")
    rm = sqrt_psd(M)
    return -float(np.trace(sqrt_psd(_sym(rm @ np.asarray(N, dtype=float) @ rm))))


def _sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)
