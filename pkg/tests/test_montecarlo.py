import numpy as np
import pytest

from covsteer.errors import DimensionMismatch
from covsteer.moments import RandomizedStateFeedbackPolicy, propagate_randomized
from covsteer.montecarlo import envelope_violations, simulate
from covsteer.problem import problem_from_mapping, problem_to_mapping, random_instance


def test_bitwise_deterministic():
    p = random_instance(0, 2, 1, 5)
    pi = RandomizedStateFeedbackPolicy.zero(2, 1, 5)
    a, b = simulate(p, pi, 5000, seed=7), simulate(p, pi, 5000, seed=7)
    assert np.array_equal(a.sample_mean, b.sample_mean)
    assert np.array_equal(a.sample_cov, b.sample_cov)
    c = simulate(p, pi, 5000, seed=8)
    assert not np.array_equal(a.sample_cov, c.sample_cov)


def test_streams_keyed_independently():
    from covsteer.montecarlo import _normals

    base = _normals(3, 0, 2, "w", 20, 2)
    assert np.array_equal(_normals(3, 0, 2, "w", 10, 2), base[:10])
    for other in (_normals(4, 0, 2, "w", 20, 2), _normals(3, 1, 2, "w", 20, 2),
                  _normals(3, 0, 3, "w", 20, 2), _normals(3, 0, 2, "x0", 20, 2)):
        assert not np.array_equal(other, base)


def test_zero_policy_one_step(planar):
    d = problem_to_mapping(planar)
    p = problem_from_mapping({**d, "N": 1})
    stats = simulate(p, RandomizedStateFeedbackPolicy.zero(2, 1, 1), 100_000, seed=0)
    A = p.A[0]
    S = A @ A.T + 0.5 * np.eye(2)
    bound = np.sqrt((np.outer(np.diag(S), np.diag(S)) + S**2) / 100_000)
    assert np.linalg.norm(stats.sample_cov[1] - S) <= 5 * np.linalg.norm(bound)


def test_sample_cov_psd_and_unbiased_shape():
    p = random_instance(2, 3, 2, 4)
    stats = simulate(p, RandomizedStateFeedbackPolicy.zero(3, 2, 4), 50, seed=1)
    assert stats.sample_cov.shape == (5, 3, 3)
    for C in stats.sample_cov:
        assert np.allclose(C, C.T)
        assert np.linalg.eigvalsh(C)[0] >= -1e-12


def test_injected_noise_is_sampled():
    p = random_instance(3, 2, 1, 3)
    Q = np.ones((3, 1, 1))
    pi = RandomizedStateFeedbackPolicy(np.zeros((3, 1)), np.zeros((3, 1, 2)), Q)
    stats = simulate(p, pi, 100_000, seed=2)
    t = propagate_randomized(p, pi)
    mv, cv = envelope_violations(stats, t.mu, t.Sigma, k_sigma=4.5)
    assert not mv.any() and not cv.any()


def test_policy_mismatch():
    p = random_instance(4, 2, 1, 3)
    with pytest.raises(DimensionMismatch):
        simulate(p, RandomizedStateFeedbackPolicy.zero(2, 2, 3), 10)
    with pytest.raises(ValueError):
        simulate(p, RandomizedStateFeedbackPolicy.zero(2, 1, 3), 1)


@pytest.fixture(scope="module")
def planar_mc(planar, planar_solution):
    return simulate(planar, planar_solution.policy, 100_000, seed=0)


def test_planar_terminal_envelope(planar_solution, planar_mc):
    t = planar_solution.trajectory
    mv, cv = envelope_violations(planar_mc, t.mu, t.Sigma, k_sigma=3.0)
    assert not mv[-1].any() and not cv[-1].any()


def test_planar_all_steps_bonferroni(planar_solution, planar_mc):
    # 61 steps x (2 mean + 4 cov entries); a two-sided 0.3% family-wise level
    # needs roughly 4.5 sigma per entry
    t = planar_solution.trajectory
    mv, cv = envelope_violations(planar_mc, t.mu, t.Sigma, k_sigma=4.5)
    assert not mv.any() and not cv.any()


def test_terminal_w2_converges(planar, planar_solution, planar_mc):
    small = simulate(planar, planar_solution.policy, 1000, seed=0)
    exact = planar_solution.terminal_w2
    err_big = abs(planar_mc.terminal_w2 - exact)
    assert err_big <= abs(small.terminal_w2 - exact) or err_big <= 1e-3
