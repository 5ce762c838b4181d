"""Covariance steering with a squared Wasserstein terminal cost."""

from .errors import CovSteerError
from .geometry import GaussianDensity, phi_trace_sqrt, sqrt_psd, wasserstein2_sq
from .problem import (
    CSProblem,
    LinearTimeVaryingSystem,
    export_problem,
    load_problem,
    random_instance,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "CovSteerError",
    "CSProblem",
    "GaussianDensity",
    "LinearTimeVaryingSystem",
    "export_problem",
    "load_problem",
    "phi_trace_sqrt",
    "random_instance",
    "sqrt_psd",
    "validate",
    "wasserstein2_sq",
]
