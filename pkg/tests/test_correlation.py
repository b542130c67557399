import numpy as np
import pytest

from ouflow.correlation import (
    beta_coefficients,
    build_tensor,
    gaussian_mixture,
    gaussian_potential,
    gaussian_solenoidal,
    sup_ratio_constants,
    tensor_at,
    tensor_derivatives,
    user_supplied,
    validate_psd,
)


def fd_second_at_zero(B, h=1e-4):
    # independent oracle: 5-point stencil using evenness of the correlations
    return (-B(2 * h) + 16 * B(h) - 30 * B(0.0) + 16 * B(h) - B(2 * h)) / (12 * h * h)


def test_beta_potential_unit_scale():
    model = gaussian_potential(dim=2, length_scale=1.0, drift=0.5)
    # oracle first: differentiate the correlation functions numerically
    assert -fd_second_at_zero(model.B_L) == pytest.approx(3.0, rel=1e-6)
    assert -fd_second_at_zero(model.B_N) == pytest.approx(1.0, rel=1e-6)
    assert beta_coefficients(model) == pytest.approx((3.0, 1.0))


def test_beta_scales_inverse_square():
    model = gaussian_potential(dim=2, length_scale=2.0, drift=0.5)
    assert beta_coefficients(model) == pytest.approx((0.75, 0.25))


def test_beta_mixture_linear():
    betas = {a: beta_coefficients(gaussian_mixture(a, dim=3, length_scale=1.3,
                                                   drift=0.2))
             for a in (0.0, 0.35, 1.0)}
    for i in range(2):
        interp = 0.35 * betas[1.0][i] + 0.65 * betas[0.0][i]
        assert betas[0.35][i] == pytest.approx(interp, rel=1e-12)


def test_tensor_at_origin_is_identity():
    model = gaussian_mixture(0.4, dim=3, length_scale=0.7, drift=1.0)
    assert np.array_equal(build_tensor(model, np.zeros(3)), np.eye(3))


def test_tensor_axis_alignment():
    model = gaussian_potential(dim=3, length_scale=1.0, drift=0.5)
    r = 0.9
    b = build_tensor(model, np.array([r, 0.0, 0.0]))
    expected = np.diag([model.B_L(r), model.B_N(r), model.B_N(r)])
    np.testing.assert_allclose(b, expected, atol=1e-15)


def test_tensor_isotropy_conjugation():
    model = gaussian_mixture(0.6, dim=2, length_scale=1.0, drift=0.5)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        theta = rng.uniform(0, 2 * np.pi)
        O = np.array([[np.cos(theta), -np.sin(theta)],
                      [np.sin(theta), np.cos(theta)]])
        if rng.random() < 0.5:
            O = O @ np.diag([1.0, -1.0])        # include reflections
        x = rng.normal(size=2) * rng.uniform(0.01, 5)
        err = np.abs(O.T @ build_tensor(model, O @ x) @ O
                     - build_tensor(model, x)).max()
        worst = max(worst, err)
    assert worst <= 1e-12


def test_tensor_symmetry_and_evenness():
    model = gaussian_solenoidal(dim=2, length_scale=1.0, drift=0.5)
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.normal(size=2)
        b = build_tensor(model, x)
        assert np.array_equal(b, b.T)
        assert np.array_equal(b, build_tensor(model, -x))


def test_tensor_rescaling():
    kappa = 2.5
    m1 = gaussian_potential(dim=2, length_scale=1.0, drift=0.5)
    m2 = gaussian_potential(dim=2, length_scale=kappa, drift=0.5)
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.normal(size=2)
        np.testing.assert_allclose(build_tensor(m2, kappa * x),
                                   build_tensor(m1, x), rtol=1e-13)


def test_tensor_rejects_nonfinite():
    model = gaussian_potential(dim=2, length_scale=1.0, drift=0.5)
    with pytest.raises(ValueError, match="non-finite"):
        build_tensor(model, np.array([np.nan, 0.0]))


def test_derivatives_at_zero():
    model = gaussian_potential(dim=2, length_scale=1.0, drift=0.5)
    first, second = tensor_derivatives(model, np.zeros(2))
    assert np.array_equal(first, np.zeros((2, 2, 2)))
    assert -second[0, 0, 0, 0] == pytest.approx(3.0)   # beta_L
    assert -second[0, 0, 1, 1] == pytest.approx(1.0)   # beta_N


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
def test_derivatives_match_finite_differences(alpha):
    model = gaussian_mixture(alpha, dim=2, length_scale=1.0, drift=0.5)
    rng = np.random.default_rng(11)
    h = 1e-5
    for _ in range(10):
        x = rng.normal(size=2) * rng.uniform(0.1, 3)
        first, second = tensor_derivatives(model, x)
        fd1 = np.zeros_like(first)
        fd2 = np.zeros_like(second)
        for k in range(2):
            ek = np.zeros(2)
            ek[k] = h
            fd1[:, :, k] = (build_tensor(model, x + ek)
                            - build_tensor(model, x - ek)) / (2 * h)
            for l in range(2):
                el = np.zeros(2)
                el[l] = h
                fd2[:, :, k, l] = (
                    build_tensor(model, x + ek + el)
                    - build_tensor(model, x + ek - el)
                    - build_tensor(model, x - ek + el)
                    + build_tensor(model, x - ek - el)) / (4 * h * h)
        scale1 = max(np.abs(first).max(), 1e-3)
        scale2 = max(np.abs(second).max(), 1e-3)
        assert np.abs(fd1 - first).max() / scale1 <= 1e-5
        assert np.abs(fd2 - second).max() / scale2 <= 1e-5


def test_derivatives_singular_guard():
    model = gaussian_potential(dim=2, length_scale=1.0, drift=0.5)
    with pytest.raises(ValueError, match="singular guard"):
        tensor_derivatives(model, np.array([1e-12, 0.0]))


def test_user_supplied_matches_closed_family():
    closed = gaussian_potential(dim=2, length_scale=1.0, drift=0.5)
    wrapped = user_supplied(closed.B_L, closed.B_N, dim=2, length_scale=1.0,
                            drift=0.5)
    assert wrapped.beta_L == pytest.approx(3.0, rel=1e-5)
    assert wrapped.beta_N == pytest.approx(1.0, rel=1e-5)
    r = np.linspace(0.05, 4.0, 40)
    np.testing.assert_allclose(wrapped.dB_L(r), closed.dB_L(r), atol=1e-8)
    np.testing.assert_allclose(wrapped.d2B_N(r), closed.d2B_N(r), atol=1e-6)


def test_sup_ratio_gaussian_transversal():
    # (1 - exp(-u^2/2)) / u^2 is decreasing, so the sup is the u->0 limit 1/2
    model = gaussian_potential(dim=2, length_scale=1.0, drift=0.5)
    # naive quotient oracle kept away from the cancellation region near 0
    u = np.geomspace(1e-2, 1e3, 2000)
    grid_max = ((1 - np.exp(-u**2 / 2)) / u**2).max()
    bound = sup_ratio_constants(model)
    assert bound.a == pytest.approx(0.5, rel=1e-8)
    assert grid_max <= bound.a + 1e-10


def test_sup_ratio_dominates_beta_over_two():
    for model in (gaussian_mixture(0.3, dim=2, length_scale=1.5, drift=0.7),
                  gaussian_solenoidal(dim=3, length_scale=0.8, drift=0.2)):
        bound = sup_ratio_constants(model)
        assert bound.a >= model.beta_N / 2 - 1e-14
        assert bound.b_const >= model.beta_L / 2 - 1e-14
        assert bound.sigma == pytest.approx(np.sqrt(2 * bound.b_const))
        assert bound.lambda_bound == pytest.approx(
            (model.dim - 1) * bound.a - model.drift)


def test_psd_single_point():
    model = gaussian_potential(dim=2, length_scale=1.0, drift=0.5)
    report = validate_psd(model, np.zeros((1, 2)))
    assert report.ok and report.min_eigenvalue == pytest.approx(1.0)


def test_psd_gaussian_family_cloud():
    model = gaussian_potential(dim=2, length_scale=1.0, drift=0.5)
    rng = np.random.default_rng(5)
    report = validate_psd(model, rng.normal(size=(50, 2)) * 2)
    assert report.ok
    assert report.min_eigenvalue >= -1e-10


def test_psd_detects_invalid_pair():
    # found by oracle search: longitudinal decaying much faster than
    # transversal is not a realizable isotropic covariance
    model = user_supplied(lambda r: np.exp(-4 * np.square(r)),
                          lambda r: np.exp(-np.square(r) / 2),
                          dim=2, length_scale=1.0, drift=0.5)
    rng = np.random.default_rng(0)
    report = validate_psd(model, rng.normal(size=(40, 2)) * 1.5)
    assert not report.ok
    assert report.min_eigenvalue < -1e-3


def test_degenerate_model_rejected():
    with pytest.raises(ValueError):
        user_supplied(lambda r: np.ones_like(np.asarray(r, dtype=float)),
                      lambda r: np.exp(-np.square(r) / 2),
                      dim=2, length_scale=1.0, drift=0.5)


def test_mixture_weight_range():
    with pytest.raises(ValueError):
        gaussian_mixture(1.2, dim=2)
    with pytest.raises(ValueError):
        gaussian_mixture(0.5, dim=2, drift=-1.0)
