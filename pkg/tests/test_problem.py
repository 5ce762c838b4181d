import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covsteer.errors import ParseError, ValidationError
from covsteer.geometry import GaussianDensity
from covsteer.problem import (
    export_problem,
    load_problem,
    load_solver_options,
    problems_equal,
    random_instance,
    validate,
)

from conftest import PLANAR


def test_planar_fields(planar):
    assert (planar.n, planar.m, planar.N) == (2, 1, 60)
    assert planar.lam == 2.0
    assert np.array_equal(planar.A[0], [[1.0, 0.175], [-0.343, 1.0]])
    assert np.array_equal(planar.A[59], planar.A[0])
    assert np.array_equal(planar.B[0], [[0.789], [0.415]])
    assert np.array_equal(planar.W[0], 0.5 * np.eye(2))
    assert np.array_equal(planar.R[0], [[1.0]])
    assert np.array_equal(planar.initial.mean, [4.0, 3.0])
    assert np.array_equal(planar.initial.covariance, np.eye(2))
    assert np.array_equal(planar.desired.mean, [0.0, 0.0])
    assert np.array_equal(planar.desired.covariance, [[3.0, -2.0], [-2.0, 3.0]])


def test_planar_validates(planar):
    assert validate(planar).ok


def test_zero_lambda_reported(planar):
    rep = validate(planar.with_lambda(0.0))
    assert not rep.ok
    assert any("lambda must be positive" in v for v in rep.violations)


def test_singular_desired_reported(planar):
    bad = type(planar)(planar.system, planar.horizon, planar.R, planar.lam, planar.initial,
                       GaussianDensity([0.0, 0.0], np.diag([1.0, 0.0])))
    rep = validate(bad)
    assert any("desired covariance not PD" in v for v in rep.violations)


def test_empty_text():
    with pytest.raises(ParseError):
        load_problem("")


def test_missing_lambda_named():
    text = "\n".join(l for l in PLANAR.read_text().splitlines() if not l.startswith("lambda"))
    with pytest.raises(ParseError, match="lambda"):
        load_problem(text)


def test_malformed_reports_line():
    with pytest.raises(ParseError, match="line"):
        load_problem("n: 2\nA: [[1, 2]\nm: 1\n")


def test_invalid_values_raise_validation_error():
    text = PLANAR.read_text().replace("lambda: 2.0", "lambda: -1.0")
    with pytest.raises(ValidationError) as info:
        load_problem(text)
    assert not info.value.report.ok


def test_per_step_sequences():
    text = """
n: 1
m: 1
N: 2
A: [[[1.0]], [[2.0]]]
B: [[[1.0]], [[0.5]]]
W: 0.1
R: [1.0, 2.0]
lambda: 1.0
mu0: [0.0]
Sigma0: [[1.0]]
mud: [0.0]
Sigmad: [[1.0]]
"""
    p = load_problem(text)
    assert p.A[1, 0, 0] == 2.0 and p.B[1, 0, 0] == 0.5
    assert p.R[1, 0, 0] == 2.0 and p.W[0, 0, 0] == 0.1


def test_solver_section():
    opts = load_solver_options(PLANAR.read_text())
    assert opts["backend"] == "clarabel"


def test_export_round_trip(planar):
    assert problems_equal(load_problem(export_problem(planar)), planar)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**63 - 1), n=st.integers(1, 4), m=st.integers(1, 3), N=st.integers(1, 6))
def test_random_round_trip_and_valid(seed, n, m, N):
    p = random_instance(seed, n, m, N)
    assert validate(p).ok
    assert problems_equal(load_problem(export_problem(p)), p)


def test_random_deterministic():
    a, b = random_instance(1, 2, 1, 5), random_instance(1, 2, 1, 5)
    assert problems_equal(a, b)


def test_random_invertible_A():
    p = random_instance(2, 3, 2, 8)
    for A in p.A:
        assert abs(np.linalg.det(A)) > 1e-6
        assert np.linalg.cond(A) <= 1e3


def test_random_spectra():
    p = random_instance(3, 3, 2, 4)
    for S in [*p.W, p.initial.covariance, p.desired.covariance]:
        w = np.linalg.eigvalsh(S)
        assert w.min() >= 0.1 - 1e-9 and w.max() <= 10 + 1e-9


def test_problem_is_immutable(planar):
    with pytest.raises(ValueError):
        planar.A[0, 0, 0] = 5.0
