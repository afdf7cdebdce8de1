import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import toeplitz

from hsm.covband import (ReplicateStats, SubdiagonalView, bandwidth, estimate,
                         estimate_gl, estimate_log, estimate_mgl,
                         gen_moving_average, gen_stair, is_psd, lambda_best,
                         lambda_grid, lambda_max, lambda_theory, min_eigenvalue,
                         mse, sample_covariance, sample_gaussian)
from hsm.hierarchy import Hierarchy, group_structure_log
from hsm.prox_gl import MglWeights, mgl_penalty, mgl_weights, prox_gl_path
from hsm.prox_log import prox_log_path, verify_log_optimality

S6 = toeplitz([1.0, 0.5, 0.25, 0.0, 0.0, 0.0])


def _random_sym(rng, p):
    A = rng.standard_normal((p, p))
    return 0.5 * (A + A.T)


def test_sample_covariance():
    np.testing.assert_array_equal(sample_covariance(np.ones((4, 3))), np.zeros((3, 3)))
    assert sample_covariance(np.array([[0.0], [2.0]]))[0, 0] == 1.0
    with pytest.raises(ValueError):
        sample_covariance(np.ones((1, 3)))


def test_sample_covariance_double_loop(rng):
    X = rng.standard_normal((5, 3))
    mu = X.mean(axis=0)
    ref = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            ref[i, j] = sum((X[k, i] - mu[i]) * (X[k, j] - mu[j]) for k in range(5)) / 5
    np.testing.assert_allclose(sample_covariance(X), ref, atol=1e-12)


def test_subdiagonal_view_round_trip(rng):
    S = rng.standard_normal((5, 5))
    v = SubdiagonalView(5)
    assert list(v.sizes) == [8, 6, 4, 2]
    back = v.devectorize(v.vectorize(S), np.diag(S))
    np.testing.assert_array_equal(back, S)
    np.testing.assert_allclose(v.sq_norms(S),
                               [np.sum(x ** 2) for x in np.split(v.vectorize(S), [8, 14, 18])])


def test_estimators_at_lambda_zero_echo_input(rng):
    S = _random_sym(rng, 7)
    for est in ("gl", "mgl", "log"):
        np.testing.assert_array_equal(estimate(S, 0.0, est).sigma_hat, S)


def test_large_lambda_gives_diagonal():
    for est in ("gl", "mgl", "log"):
        out = estimate(S6, 10.0, est)
        np.testing.assert_array_equal(out.sigma_hat, np.diag(np.diag(S6)))
        assert out.bandwidth == 0 and bandwidth(out.sigma_hat) == 0


def test_asymmetric_input_rejected():
    with pytest.raises(ValueError):
        estimate_log(np.array([[1.0, 2.0], [0.0, 1.0]]), 0.1)


def test_gl_single_subdiagonal():
    S = np.array([[1.0, 0.6], [0.6, 2.0]])
    out = estimate_gl(S, 0.1).sigma_hat
    np.testing.assert_allclose(out[0, 1], 0.6 * (1 - 0.1 * np.sqrt(2) / np.sqrt(0.72)))
    np.testing.assert_array_equal(np.diag(out), [1.0, 2.0])


def _through_view(S, lam, prox):
    v = SubdiagonalView(S.shape[0])
    return v.devectorize(prox(v.vectorize(S), v.sizes, lam), np.diag(S))


def test_log_toeplitz_example_matches_vector_prox():
    got = estimate_log(S6, 0.05).sigma_hat
    ref = _through_view(S6, 0.05, lambda x, s, l: prox_log_path(x, s, l).beta)
    np.testing.assert_allclose(got, ref, atol=1e-10)
    v = SubdiagonalView(6)
    x = v.vectorize(S6)
    sol = prox_log_path(x, v.sizes, 0.05, latents=True)
    gs = group_structure_log(Hierarchy.path(v.sizes))
    assert verify_log_optimality(x, sol, gs, 0.05, tol=1e-10).ok


def test_gl_toeplitz_example_matches_vector_prox():
    got = estimate_gl(S6, 0.05).sigma_hat
    ref = _through_view(S6, 0.05,
                        lambda x, s, l: prox_gl_path(x, s, l, np.sqrt(s)).beta)
    np.testing.assert_allclose(got, ref, atol=1e-10)


def test_mgl_uniform_weights_reduce_to_gl(rng):
    S = _random_sym(rng, 8)
    sizes = SubdiagonalView(8).sizes
    mw = MglWeights.uniform(np.sqrt(sizes))
    np.testing.assert_allclose(estimate_mgl(S, 0.3, mw).sigma_hat,
                               estimate_gl(S, 0.3).sigma_hat, atol=1e-8)


def test_mgl_toeplitz_example_local_optimality():
    lam = 0.05
    v = SubdiagonalView(6)
    x = v.vectorize(S6)
    mw = mgl_weights(v.sizes)
    b = v.vectorize(estimate_mgl(S6, lam).sigma_hat)

    def obj(z):
        return 0.5 * np.sum((x - z) ** 2) + lam * mgl_penalty(z, v.sizes, mw)

    base = obj(b)
    rng = np.random.default_rng(3)
    worst = min(obj(b + 1e-4 * rng.uniform(-1, 1, b.size)) - base for _ in range(5000))
    assert worst >= -1e-12


def test_estimators_match_vector_prox_random(rng):
    for _ in range(20):
        p = int(rng.integers(2, 21))
        S = _random_sym(rng, p)
        lam = rng.uniform(0.01, 1.0)
        np.testing.assert_allclose(
            estimate_log(S, lam).sigma_hat,
            _through_view(S, lam, lambda x, s, l: prox_log_path(x, s, l).beta), atol=1e-10)
        np.testing.assert_allclose(
            estimate_gl(S, lam).sigma_hat,
            _through_view(S, lam, lambda x, s, l: prox_gl_path(x, s, l, np.sqrt(s)).beta),
            atol=1e-10)


def test_estimates_are_symmetric_and_keep_diagonal(rng):
    S = _random_sym(rng, 9)
    for est in ("gl", "mgl", "log"):
        out = estimate(S, 0.2, est)
        np.testing.assert_array_equal(out.sigma_hat, out.sigma_hat.T)
        np.testing.assert_array_equal(np.diag(out.sigma_hat), np.diag(S))
        assert out.bandwidth == bandwidth(out.sigma_hat)


def test_bandwidth():
    assert bandwidth(np.eye(3)) == 0
    assert bandwidth(toeplitz([1.0, 0.5, 0.0])) == 1
    assert bandwidth(estimate_log(S6, 100.0).sigma_hat) == 0


def test_moving_average_generator():
    np.testing.assert_allclose(gen_moving_average(4, 3)[:, 0], [1, 2 / 3, 1 / 3, 0])
    with pytest.raises(ValueError):
        gen_moving_average(3, 1)
    for p in range(3, 31):
        for K in range(2, p):
            # the printed column puts 1/K at lag K-1, so the band ends there
            assert bandwidth(gen_moving_average(p, K)) == K - 1


def test_stair_generator():
    S = gen_stair(10, 5)
    np.testing.assert_allclose(S[:, 0][1:], [0.8, 0.6, 0.4, 0.2, 0, 0, 0, 0, 0])
    for p, K in [(50, 10), (100, 25)]:
        assert min_eigenvalue(gen_stair(p, K)) >= 0.01 - 1e-10
    with pytest.raises(ValueError):
        gen_stair(10, 4)
    # an already well-conditioned pattern is left alone
    delta = toeplitz(np.r_[[1.0, 0.8, 0.6, 0.4, 0.2], np.zeros(1)])
    if min_eigenvalue(delta) >= 0.01:
        np.testing.assert_array_equal(gen_stair(6, 5), delta)
    assert bandwidth(gen_stair(20, 10)) == 9


def test_sample_gaussian():
    n = 20_000
    X = sample_gaussian(np.eye(3), n, seed=1)
    assert np.max(np.abs(sample_covariance(X) - np.eye(3))) <= 5 / np.sqrt(n)
    np.testing.assert_array_equal(sample_gaussian(np.zeros((2, 2)), 4, 0), np.zeros((4, 2)))
    np.testing.assert_array_equal(sample_gaussian(np.eye(2), 5, 9),
                                  sample_gaussian(np.eye(2), 5, 9))
    # semidefinite moving-average matrices factor after jitter
    sample_gaussian(gen_moving_average(30, 30), 3, 0)
    with pytest.raises(np.linalg.LinAlgError):
        sample_gaussian(np.diag([1.0, -1.0]), 3, 0)


def test_mse():
    sig = np.eye(4)
    assert mse([sig, sig], sig) == 0.0
    assert mse([sig + np.eye(4)], sig) == 1.0
    with pytest.raises(ValueError):
        mse([], sig)


def test_mse_is_stable_across_seeds():
    p, n = 100, 50
    sig = gen_moving_average(p, 10)
    lam = lambda_theory(p, n)
    vals = []
    for base in (0, 1000):
        ests = [estimate_log(sample_covariance(sample_gaussian(sig, n, base + r)), lam)
                for r in range(50)]
        vals.append(mse(ests, sig))
    assert 0 < vals[0] < np.inf
    assert abs(vals[0] - vals[1]) <= 0.1 * vals[0]


def test_lambda_best():
    assert lambda_best([0.3], [1.0]) == 0.3
    assert lambda_best([0.1, 0.2, 0.3], [2.0, 1.0, 3.0]) == 0.2
    assert lambda_best([0.1, 0.2, 0.3], [1.0, 1.0, 3.0]) == 0.2


def test_lambda_best_is_interior_for_log():
    p, n = 100, 50
    sig = gen_moving_average(p, 10)
    stats = [ReplicateStats(sample_covariance(sample_gaussian(sig, n, r)), sig)
             for r in range(50)]
    S0 = sample_covariance(sample_gaussian(sig, n, 0))
    grid = lambda_grid(S0, "log")
    prof = [np.mean([s.sq_error(s.scales("log", lam)) / p for s in stats]) for lam in grid]
    best = lambda_best(grid, prof)
    assert grid[0] < best < grid[-1]


def test_lambda_max_is_the_diagonal_threshold(rng):
    S = _random_sym(rng, 8)
    for est in ("gl", "mgl", "log"):
        top = lambda_max(S, est)
        assert estimate(S, top, est).bandwidth == 0
        assert estimate(S, top * (1 - 1e-6), est).bandwidth > 0


def test_replicate_stats_match_dense_error(rng):
    sig = gen_moving_average(12, 4)
    S = sample_covariance(sample_gaussian(sig, 20, 4))
    st_ = ReplicateStats(S, sig)
    for est in ("gl", "mgl", "log"):
        dense = estimate(S, 0.1, est).sigma_hat
        assert st_.sq_error(st_.scales(est, 0.1)) == pytest.approx(
            np.sum((dense - sig) ** 2), rel=1e-12)


def test_eigen_helpers():
    assert min_eigenvalue(np.eye(3)) == pytest.approx(1.0)
    assert is_psd(np.eye(3))
    assert min_eigenvalue(np.diag([1.0, -1.0])) == pytest.approx(-1.0)
    assert not is_psd(np.diag([1.0, -1.0]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), p=st.integers(2, 15))
def test_log_bandwidth_non_increasing_in_lambda(seed, p):
    S = _random_sym(np.random.default_rng(seed), p)
    bands = [estimate_log(S, lam).bandwidth for lam in np.linspace(0, 3, 25)]
    assert all(a >= b for a, b in zip(bands, bands[1:]))
