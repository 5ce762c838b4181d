"""Problem data, validation, problem-file ingestion and seeded random instances.

Problem files are YAML documents (JSON is accepted too, being a YAML subset)
with the keys ``n, m, N, A, B, W, R, lambda, mu0, Sigma0, mud, Sigmad``.
Each of ``A, B, W, R`` is either a single matrix, broadcast over the horizon,
or a list of ``N`` matrices.  ``R`` may also be a scalar, promoted to
``R * I_m``.  An optional ``solver`` mapping configures the conic backend and
is read by :func:`load_solver_options`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .errors import DimensionMismatch, ParseError, ValidationError
from .geometry import GaussianDensity, is_pd, is_psd

REQUIRED_KEYS = ("n", "m", "N", "A", "B", "W", "R", "lambda", "mu0", "Sigma0", "mud", "Sigmad")
PD_TOL = 1e-10
SYM_TOL = 1e-12


def _frozen(x) -> np.ndarray:
    x = np.array(x, dtype=float)
    x.setflags(write=False)
    return x


@dataclass(frozen=True)
class LinearTimeVaryingSystem:
    """Stacked system matrices: ``A`` is (N, n, n), ``B`` (N, n, m), ``W`` (N, n, n)."""

    A: np.ndarray
    B: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        A, B, W = (_frozen(v) for v in (self.A, self.B, self.W))
        if A.ndim != 3 or B.ndim != 3 or W.ndim != 3:
            raise DimensionMismatch("A, B, W must be sequences of matrices")
        N, n, _ = A.shape
        if A.shape != (N, n, n) or B.shape[:2] != (N, n) or W.shape != (N, n, n):
            raise DimensionMismatch(
                f"inconsistent system shapes A{A.shape} B{B.shape} W{W.shape}"
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "W", W)

    @property
    def horizon(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.B.shape[2]


@dataclass(frozen=True)
class CSProblem:
    system: LinearTimeVaryingSystem
    horizon: int
    R: np.ndarray
    lam: float
    initial: GaussianDensity
    desired: GaussianDensity

    def __post_init__(self):
        R = _frozen(self.R)
        if R.shape != (self.system.horizon, self.system.m, self.system.m):
            raise DimensionMismatch(f"R has shape {R.shape}")
        if int(self.horizon) != self.system.horizon:
            raise DimensionMismatch(
                f"horizon {self.horizon} but system has {self.system.horizon} steps"
            )
        for g in (self.initial, self.desired):
            if g.dim != self.system.n:
                raise DimensionMismatch("density dimension differs from state dimension")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "lam", float(self.lam))

    # shorthands used throughout the numerics
    @property
    def n(self) -> int:
        return self.system.n

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def N(self) -> int:
        return self.horizon

    @property
    def A(self) -> np.ndarray:
        return self.system.A

    @property
    def B(self) -> np.ndarray:
        return self.system.B

    @property
    def W(self) -> np.ndarray:
        return self.system.W

    def with_lambda(self, lam: float) -> "CSProblem":
        return CSProblem(self.system, self.horizon, self.R, lam, self.initial, self.desired)

    def with_means(self, mu0, mud) -> "CSProblem":
        return CSProblem(
            self.system,
            self.horizon,
            self.R,
            self.lam,
            GaussianDensity(mu0, self.initial.covariance),
            GaussianDensity(mud, self.desired.covariance),
        )


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _asym(S) -> bool:
    scale = np.linalg.norm(S)
    return scale > 0 and np.linalg.norm(S - S.T) > SYM_TOL * scale


def validate(p: CSProblem) -> ValidationReport:
    """Check every problem invariant; violations are reported, never raised."""
    out: list[str] = []
    if p.N < 1:
        out.append("horizon must be at least 1")
    if not np.isfinite(p.lam) or p.lam <= 0:
        out.append("lambda must be positive")
    for name, arr in (("A", p.A), ("B", p.B), ("W", p.W), ("R", p.R)):
        if not np.all(np.isfinite(arr)):
            out.append(f"{name} contains non-finite entries")
    for k in range(p.N):
        if _asym(p.W[k]):
            out.append(f"W[{k}] not symmetric")
        elif not is_psd(p.W[k], PD_TOL):
            out.append(f"W[{k}] not PSD")
        if _asym(p.R[k]):
            out.append(f"R[{k}] not symmetric")
        elif not is_pd(p.R[k], PD_TOL):
            out.append(f"R[{k}] not PD")
    if not is_pd(p.initial.covariance, PD_TOL):
        out.append("initial covariance not PD")
    if not is_pd(p.desired.covariance, PD_TOL):
        out.append("desired covariance not PD")
    return ValidationReport(out)


# --------------------------------------------------------------------------
# problem files


def _matrix(value, shape, key):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"field '{key}': not a numeric array ({exc})") from None
    if arr.shape != shape:
        raise ParseError(f"field '{key}': expected shape {shape}, got {arr.shape}")
    return arr


def _sequence(value, shape, N, key, scalar_ok=False):
    """Broadcast a single matrix (or scalar) or accept a length-N list of matrices."""
    if scalar_ok and np.isscalar(value):
        if shape[0] != shape[1]:
            raise ParseError(f"field '{key}': scalar needs a square shape")
        return np.broadcast_to(float(value) * np.eye(shape[0]), (N,) + shape).copy()
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"field '{key}': not a numeric array ({exc})") from None
    if arr.shape == shape:
        return np.broadcast_to(arr, (N,) + shape).copy()
    if arr.shape == (N,) + shape:
        return arr
    if scalar_ok and arr.shape == (N,) and shape[0] == shape[1]:
        return arr[:, None, None] * np.eye(shape[0])
    raise ParseError(
        f"field '{key}': expected shape {shape} or ({N}, {shape[0]}, {shape[1]}), got {arr.shape}"
    )


def _load_mapping(config_text: str) -> dict[str, Any]:
    if not config_text or not config_text.strip():
        raise ParseError("empty problem file")
    try:
        doc = yaml.safe_load(config_text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ParseError(f"malformed problem file{where}: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(doc, dict):
        raise ParseError("problem file must be a key/value mapping")
    return doc


def problem_from_mapping(doc: dict[str, Any]) -> CSProblem:
    missing = [k for k in REQUIRED_KEYS if k not in doc]
    if missing:
        raise ParseError("missing field(s): " + ", ".join(missing))
    try:
        n, m, N = int(doc["n"]), int(doc["m"]), int(doc["N"])
    except (TypeError, ValueError):
        raise ParseError("fields 'n', 'm', 'N' must be integers") from None
    if min(n, m, N) < 1:
        raise ParseError("fields 'n', 'm', 'N' must be positive")
    try:
        lam = float(doc["lambda"])
    except (TypeError, ValueError):
        raise ParseError("field 'lambda' must be a number") from None
    A = _sequence(doc["A"], (n, n), N, "A")
    Bv = doc["B"]
    if m == 1 and np.array(Bv, dtype=object).shape in ((n,), (N, n)):
        Bv = np.array(Bv, dtype=float)[..., None]
    B = _sequence(Bv, (n, m), N, "B")
    W = _sequence(doc["W"], (n, n), N, "W", scalar_ok=True)
    R = _sequence(doc["R"], (m, m), N, "R", scalar_ok=True)
    mu0 = _matrix(doc["mu0"], (n,), "mu0")
    mud = _matrix(doc["mud"], (n,), "mud")
    S0 = _matrix(doc["Sigma0"], (n, n), "Sigma0")
    Sd = _matrix(doc["Sigmad"], (n, n), "Sigmad")
    try:
        p = CSProblem(
            LinearTimeVaryingSystem(A, B, W),
            N,
            R,
            lam,
            GaussianDensity(mu0, S0),
            GaussianDensity(mud, Sd),
        )
    except (ValueError, ArithmeticError) as exc:
        raise ParseError(str(exc)) from None
    report = validate(p)
    if not report.ok:
        raise ValidationError(report)
    return p


def load_problem(config_text: str) -> CSProblem:
    """Parse and validate a problem file."""
    return problem_from_mapping(_load_mapping(config_text))


def load_solver_options(config_text: str) -> dict[str, Any]:
    """Return the optional ``solver`` section of a problem file (empty if absent)."""
    doc = _load_mapping(config_text)
    section = doc.get("solver") or {}
    if not isinstance(section, dict):
        raise ParseError("field 'solver' must be a mapping")
    return dict(section)


def _compact(arr: np.ndarray):
    """Collapse a per-step sequence to one matrix when it is time-invariant."""
    if np.all(arr == arr[0]):
        return arr[0].tolist()
    return arr.tolist()


def problem_to_mapping(p: CSProblem) -> dict[str, Any]:
    return {
        "n": p.n,
        "m": p.m,
        "N": p.N,
        "lambda": p.lam,
        "A": _compact(p.A),
        "B": _compact(p.B),
        "W": _compact(p.W),
        "R": _compact(p.R),
        "mu0": p.initial.mean.tolist(),
        "Sigma0": p.initial.covariance.tolist(),
        "mud": p.desired.mean.tolist(),
        "Sigmad": p.desired.covariance.tolist(),
    }


def export_problem(p: CSProblem) -> str:
    """Serialize to the problem-file format; floats round-trip exactly."""
    return yaml.safe_dump(problem_to_mapping(p), sort_keys=False, default_flow_style=None)


def problems_equal(p: CSProblem, q: CSProblem) -> bool:
    pairs = [
        (p.A, q.A), (p.B, q.B), (p.W, q.W), (p.R, q.R),
        (p.initial.mean, q.initial.mean), (p.initial.covariance, q.initial.covariance),
        (p.desired.mean, q.desired.mean), (p.desired.covariance, q.desired.covariance),
    ]
    return (
        p.N == q.N
        and p.lam == q.lam
        and all(a.shape == b.shape and np.array_equal(a, b) for a, b in pairs)
    )


# --------------------------------------------------------------------------
# random instances


def _random_spd(rng: np.random.Generator, d: int, lo=0.1, hi=10.0) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eig = np.exp(rng.uniform(np.log(lo), np.log(hi), size=d))
    S = (Q * eig) @ Q.T
    return 0.5 * (S + S.T)


def random_instance(seed: int, n: int, m: int, N: int) -> CSProblem:
    """Deterministic random problem with invertible, well-conditioned ``A_k``.

    ``W_k``, ``Sigma0`` and ``Sigmad`` have eigenvalues in [0.1, 10]; ``A_k``
    has condition number at most 1e3 (resampled otherwise).
    """
    if min(n, m, N) < 1:
        raise ValueError("n, m, N must be positive")
    rng = np.random.default_rng(seed)
    A = np.empty((N, n, n))
    for k in range(N):
        while True:
            Ak = np.eye(n) + 0.4 * rng.standard_normal((n, n)) / np.sqrt(n)
            if np.linalg.cond(Ak) <= 1e3 and abs(np.linalg.det(Ak)) > 1e-6:
                break
        A[k] = Ak
    B = rng.standard_normal((N, n, m)) / np.sqrt(n)
    W = np.stack([_random_spd(rng, n) for _ in range(N)])
    R = np.stack([_random_spd(rng, m, 0.1, 10.0) for _ in range(N)])
    lam = float(rng.uniform(0.5, 5.0))
    initial = GaussianDensity(rng.standard_normal(n), _random_spd(rng, n))
    desired = GaussianDensity(rng.standard_normal(n), _random_spd(rng, n))
    return CSProblem(LinearTimeVaryingSystem(A, B, W), N, R, lam, initial, desired)
