import numpy as np
import pytest

from ouflow.correlation import (
    gaussian_potential,
    gaussian_solenoidal,
    tensor_at,
)
from ouflow.sampling import (
    IncrementRequest,
    LazyFieldFactor,
    assemble_covariance,
    factorize_covariance,
    increment_factor,
    replica_stream,
    sample_increment,
)

POT = gaussian_potential(dim=2, length_scale=1.0, drift=0.5)
SOL = gaussian_solenoidal(dim=2, length_scale=1.0, drift=0.5)


def test_one_point_no_gradients_is_dt_identity():
    req = IncrementRequest(points=np.zeros((1, 2)), dt=0.25)
    cov = assemble_covariance(POT, req)
    np.testing.assert_array_equal(cov, 0.25 * np.eye(2))


def test_one_point_gradient_block_from_betas():
    # oracle: -dd b(0) built from (beta_L, beta_N) = (3, 1)
    dt = 0.1
    req = IncrementRequest(points=np.zeros((1, 2)), dt=dt, with_gradients=True)
    cov = assemble_covariance(POT, req)
    grad = cov[2:, 2:]
    # diagonal: var(d_k F_i) = beta_L if k == i else beta_N, times dt
    np.testing.assert_allclose(np.diag(grad), dt * np.array([3, 1, 1, 3.0]))
    # cross term cov(d_2 F_1, d_1 F_2) = (beta_L - beta_N)/2
    assert grad[1, 2] == pytest.approx(dt * 1.0)
    # F and grad-F are uncorrelated at a single point (odd derivative at 0)
    np.testing.assert_array_equal(cov[:2, 2:], np.zeros((2, 4)))


def test_zero_dt_gives_zero_draw():
    req = IncrementRequest(points=np.zeros((1, 2)), dt=0.0)
    factor = increment_factor(POT, req)
    sample = sample_increment(factor, replica_stream(0), 1, 2)
    np.testing.assert_array_equal(sample.dF, np.zeros((1, 2)))


def test_coincident_points_get_duplicated_samples():
    pts = np.array([[0.3, -0.7], [0.3, -0.7], [1.0, 2.0]])
    req = IncrementRequest(points=pts, dt=0.05)
    cov = assemble_covariance(POT, req)
    factor = factorize_covariance(cov)
    assert factor.rank < cov.shape[0]
    assert factor.jitter == 0.0
    sample = factor.sample(replica_stream(1)).reshape(3, 2)
    # duplicated up to factorization round-off (LAPACK blocking reorders sums)
    np.testing.assert_allclose(sample[0], sample[1], atol=1e-12)
    assert np.abs(sample[0] - sample[2]).max() > 1e-3


def test_empirical_covariance_one_point():
    dt = 0.2
    req = IncrementRequest(points=np.zeros((1, 2)), dt=dt)
    factor = increment_factor(POT, req)
    draws = factor.sample(replica_stream(3), 10_000)
    emp = draws.T @ draws / len(draws)
    se = dt * np.sqrt(2.0 / len(draws))
    assert np.abs(emp - dt * np.eye(2)).max() <= 4 * max(se, dt / np.sqrt(len(draws)))


def test_empirical_cross_covariance_two_points():
    # 4-SE agreement with dt * b(x - y), both nearby and far-apart pairs
    rng = replica_stream(4)
    dt = 0.3
    for sep in (1.0, 10.0):
        pts = np.array([[0.0, 0.0], [sep, 0.0]])
        req = IncrementRequest(points=pts, dt=dt)
        cov = assemble_covariance(POT, req)
        factor = increment_factor(POT, req)
        draws = factor.sample(rng, 10_000)
        emp = draws.T @ draws / len(draws)
        band = 4 * dt * 1.5 / np.sqrt(len(draws))     # 4 SE, SE <~ 1.5 dt/sqrt(n)
        assert np.abs(emp - cov).max() <= band
        cross = emp[:2, 2:]
        np.testing.assert_allclose(cross, dt * tensor_at(POT, pts[0] - pts[1]),
                                   atol=band)


def test_gradient_blocks_match_finite_differences():
    # cov(F(x), dF(y)) must equal d/dy of cov(F(x), F(y)) to 1e-4 relative
    h = 1e-5
    x = np.array([0.2, -0.4])
    y = np.array([-0.5, 0.3])
    req = IncrementRequest(points=np.stack([x, y]), dt=1.0,
                           with_gradients=True)
    cov = assemble_covariance(SOL, req)
    fg = cov[:2, 4 + 4:]            # F at x vs gradient entries at y
    fd = np.zeros((2, 2, 2))
    for l in range(2):
        e = np.zeros(2)
        e[l] = h
        fd[:, :, l] = (tensor_at(SOL, x - (y + e))
                       - tensor_at(SOL, x - (y - e))) / (2 * h)
    np.testing.assert_allclose(fg.reshape(2, 2, 2), fd, atol=1e-4)


def test_permutation_equivariance_same_stream():
    pts = np.array([[0.1, 0.2], [-1.0, 0.5], [0.7, -0.3]])
    perm = [2, 0, 1]
    req = IncrementRequest(points=pts, dt=0.1, with_gradients=True)
    req_p = IncrementRequest(points=pts[perm], dt=0.1, with_gradients=True)
    s1 = sample_increment(increment_factor(POT, req), replica_stream(9), 3, 2,
                          with_gradients=True)
    s2 = sample_increment(increment_factor(POT, req_p), replica_stream(9), 3, 2,
                          with_gradients=True)
    np.testing.assert_array_equal(s1.dF[perm], s2.dF)
    np.testing.assert_array_equal(s1.dDF[perm], s2.dDF)


def test_bitwise_reproducibility():
    pts = np.array([[0.0, 0.0], [0.5, 0.5]])
    req = IncrementRequest(points=pts, dt=0.1)
    a = increment_factor(POT, req).sample(replica_stream(17, 3), 5)
    b = increment_factor(POT, req).sample(replica_stream(17, 3), 5)
    np.testing.assert_array_equal(a, b)


def test_distinct_replica_streams_differ():
    pts = np.zeros((1, 2))
    req = IncrementRequest(points=pts, dt=0.1)
    factor = increment_factor(POT, req)
    a = factor.sample(replica_stream(17, 0))
    b = factor.sample(replica_stream(17, 1))
    assert not np.array_equal(a, b)


def test_lazy_factor_matches_dense_covariance():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(40, 2))
    dt = 0.07
    lazy = LazyFieldFactor(POT, pts, dt)
    dense = assemble_covariance(POT, IncrementRequest(points=pts, dt=dt))
    # rows of the factor live in canonical (sorted) order
    L = lazy._L[lazy._unsort] * lazy._amp
    np.testing.assert_allclose(L @ L.T, dense, atol=1e-9 * dt)


def test_lazy_factor_draw_covariance():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(25, 2))
    lazy = LazyFieldFactor(SOL, pts, dt=1.0)
    draws = lazy.sample(replica_stream(5), 8000)
    emp = draws.T @ draws / len(draws)
    dense = assemble_covariance(SOL, IncrementRequest(points=pts, dt=1.0))
    assert np.abs(emp - dense).max() <= 4 * 1.5 / np.sqrt(len(draws))


def test_request_validation():
    with pytest.raises(ValueError, match="non-finite"):
        IncrementRequest(points=np.array([[np.inf, 0.0]]), dt=0.1)
    with pytest.raises(ValueError, match="dt"):
        IncrementRequest(points=np.zeros((1, 2)), dt=-1.0)
