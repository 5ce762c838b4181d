import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covsteer.errors import DimensionMismatch, NotPD, NotPSD, NotSymmetric
from covsteer.geometry import GaussianDensity, phi_trace_sqrt, sqrt_psd, wasserstein2_sq

from conftest import random_spd


def test_sqrt_identity():
    assert np.allclose(sqrt_psd(np.eye(2)), np.eye(2))


def test_sqrt_diagonal():
    assert np.allclose(sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 6))
def test_sqrt_squares_back_and_commutes(seed, d):
    G = np.random.default_rng(seed).standard_normal((d, d))
    S = G.T @ G
    R = sqrt_psd(S)
    scale = np.linalg.norm(S)
    assert np.linalg.norm(R @ R - S) <= 1e-9 * scale
    assert np.linalg.norm(R @ S - S @ R) <= 1e-9 * scale
    assert np.min(np.linalg.eigvalsh(R)) >= -1e-12


def test_sqrt_clips_roundoff():
    S = np.diag([1.0, -1e-14])
    assert np.allclose(sqrt_psd(S), np.diag([1.0, 0.0]))


def test_sqrt_rejects_bad_input():
    with pytest.raises(NotSymmetric):
        sqrt_psd(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(NotPSD):
        sqrt_psd(np.diag([1.0, -0.1]))


def test_w2_identical():
    g = GaussianDensity([4.0, 3.0], np.eye(2))
    assert wasserstein2_sq(g, g) == 0.0


def test_w2_mean_only():
    g1 = GaussianDensity([0.0, 0.0], np.eye(2))
    g2 = GaussianDensity([3.0, 4.0], np.eye(2))
    assert wasserstein2_sq(g1, g2) == pytest.approx(25.0, abs=1e-12)


def test_w2_scaled_covariance():
    g1 = GaussianDensity([1.0, 1.0], np.eye(2))
    g2 = GaussianDensity([1.0, 1.0], 4 * np.eye(2))
    assert wasserstein2_sq(g1, g2) == pytest.approx(2.0, abs=1e-12)


def test_w2_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        wasserstein2_sq(GaussianDensity([0.0], [[1.0]]), GaussianDensity([0.0, 0.0], np.eye(2)))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 5))
def test_w2_symmetric_nonnegative(seed, d):
    rng = np.random.default_rng(seed)
    g1 = GaussianDensity(rng.standard_normal(d), random_spd(rng, d))
    g2 = GaussianDensity(rng.standard_normal(d), random_spd(rng, d))
    a, b = wasserstein2_sq(g1, g2), wasserstein2_sq(g2, g1)
    assert a >= 0.0
    assert abs(a - b) <= 1e-9 * max(1.0, a)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 5))
def test_w2_commuting_closed_form(seed, d):
    rng = np.random.default_rng(seed)
    l1, l2 = rng.uniform(0.1, 10, d), rng.uniform(0.1, 10, d)
    m1, m2 = rng.standard_normal(d), rng.standard_normal(d)
    expected = np.sum((m1 - m2) ** 2) + np.sum((np.sqrt(l1) - np.sqrt(l2)) ** 2)
    got = wasserstein2_sq(GaussianDensity(m1, np.diag(l1)), GaussianDensity(m2, np.diag(l2)))
    assert got == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_gaussian_density_invariants():
    with pytest.raises(NotSymmetric):
        GaussianDensity([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(NotPSD):
        GaussianDensity([0.0, 0.0], np.diag([1.0, -1.0]))
    with pytest.raises(DimensionMismatch):
        GaussianDensity([0.0], np.eye(2))


def test_phi_examples():
    assert phi_trace_sqrt(np.eye(2), np.eye(2)) == pytest.approx(-2.0)
    assert phi_trace_sqrt(np.eye(2), np.diag([4.0, 9.0])) == pytest.approx(-5.0)
    assert phi_trace_sqrt(np.eye(2), np.zeros((2, 2))) == pytest.approx(0.0, abs=1e-15)


def test_phi_requires_pd_first_argument():
    with pytest.raises(NotPD):
        phi_trace_sqrt(np.diag([1.0, 0.0]), np.eye(2))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 4))
def test_phi_nonpositive(seed, d):
    rng = np.random.default_rng(seed)
    assert phi_trace_sqrt(random_spd(rng, d), random_spd(rng, d)) <= 0.0
