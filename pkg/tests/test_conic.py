import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from covsteer.conic import (
    ConicProgram,
    PsdCone,
    Tolerances,
    ZeroCone,
    residuals,
    smat,
    solve_conic,
    sv,
    svec,
)
from covsteer.errors import BadLength, CovSteerError, NotSymmetric
from covsteer.geometry import phi_trace_sqrt
from covsteer.sdp import trace_sqrt_program

from conftest import random_spd


def test_svec_examples():
    assert np.array_equal(svec(np.eye(2)), [1.0, 0.0, 1.0])
    assert np.allclose(svec([[0.0, 1.0], [1.0, 0.0]]), [0.0, math.sqrt(2), 0.0])


def test_svec_column_order():
    S = np.array([[1.0, 2.0, 4.0], [2.0, 3.0, 5.0], [4.0, 5.0, 6.0]])
    r2 = math.sqrt(2)
    assert np.allclose(svec(S), [1, 2 * r2, 3, 4 * r2, 5 * r2, 6])


def test_smat_inverts_examples():
    assert np.array_equal(smat([1.0, 0.0, 1.0]), np.eye(2))
    assert np.allclose(smat([0.0, math.sqrt(2), 0.0]), [[0, 1], [1, 0]])


def test_svec_rejects_asymmetric():
    with pytest.raises(NotSymmetric):
        svec([[1.0, 2.0], [0.0, 1.0]])


def test_smat_bad_length():
    with pytest.raises(BadLength):
        smat(np.zeros(4))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 8))
def test_svec_round_trip_and_isometry(seed, d):
    rng = np.random.default_rng(seed)
    G1, G2 = rng.standard_normal((2, d, d))
    S1, S2 = G1 + G1.T, G2 + G2.T
    # sqrt(2) scaling round-trips to within one ulp, not bitwise
    ulp = np.spacing(np.max(np.abs(S1)))
    assert np.max(np.abs(smat(svec(S1)) - S1)) <= 2 * ulp
    v = rng.standard_normal(sv(d))
    assert np.max(np.abs(svec(smat(v)) - v)) <= 2 * np.spacing(np.max(np.abs(v)))
    assert abs(svec(S1) @ svec(S2) - np.trace(S1 @ S2)) <= 1e-12 * max(1.0, np.linalg.norm(S1) * np.linalg.norm(S2))


def _scalar_equality():
    return ConicProgram(
        c=np.array([1.0]),
        A=sp.csc_matrix(np.array([[1.0]])),
        b=np.array([3.0]),
        cones=[ZeroCone(1)],
        variable_index={"x": slice(0, 1)},
    )


def _trace_above_identity():
    # X >= I  <=>  -X + s = -I with s PSD
    return ConicProgram(
        c=svec(np.eye(2)),
        A=sp.csc_matrix(-np.eye(3)),
        b=-svec(np.eye(2)),
        cones=[PsdCone(2)],
        variable_index={"X": slice(0, 3)},
    )


@pytest.mark.parametrize("backend", ["clarabel", "cvxopt"])
def test_solve_equality_only(backend):
    sol = solve_conic(_scalar_equality(), backend=backend)
    assert sol.optimal
    assert sol.x[0] == pytest.approx(3.0, abs=1e-7)


@pytest.mark.parametrize("backend", ["clarabel", "cvxopt"])
def test_solve_trace_bound(backend):
    sol = solve_conic(_trace_above_identity(), backend=backend)
    assert sol.optimal
    assert sol.objective == pytest.approx(2.0, abs=1e-7)
    # reported residuals are the recomputed ones
    assert np.allclose(residuals(_trace_above_identity(), sol.x, sol.y, sol.s), sol.residuals, atol=1e-10)


def test_infeasible_program_not_optimal():
    prog = ConicProgram(
        c=np.array([0.0]),
        A=sp.csc_matrix(np.array([[1.0], [1.0]])),
        b=np.array([1.0, 2.0]),
        cones=[ZeroCone(2)],
        variable_index={"x": slice(0, 1)},
    )
    assert solve_conic(prog).status != "optimal"


def test_unknown_backend():
    with pytest.raises(CovSteerError):
        solve_conic(_scalar_equality(), backend="nope")


def test_program_validates_cone_dims():
    with pytest.raises(CovSteerError):
        ConicProgram(c=np.zeros(1), A=sp.csc_matrix(np.ones((2, 1))), b=np.zeros(2),
                     cones=[ZeroCone(1)], variable_index={"x": slice(0, 1)})


def test_dump_lists_cones():
    text = _trace_above_identity().dump()
    assert "psd" in text.lower() and "vars 3" in text


def test_deterministic():
    a = solve_conic(_trace_above_identity())
    b = solve_conic(_trace_above_identity())
    assert np.array_equal(a.x, b.x)


@pytest.mark.parametrize("seed", range(5))
def test_trace_sqrt_program_matches_phi(seed):
    rng = np.random.default_rng(seed)
    d = 2 + seed % 2
    M, N = random_spd(rng, d), random_spd(rng, d)
    prog, sl = trace_sqrt_program(M, N)
    sol = solve_conic(prog, Tolerances())
    assert sol.optimal
    assert -np.trace(smat(sol.x[sl])) == pytest.approx(phi_trace_sqrt(M, N), abs=1e-6)
