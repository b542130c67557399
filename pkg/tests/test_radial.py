import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import ks_2samp

from ouflow.correlation import gaussian_solenoidal
from ouflow.flow import ensemble_positions, stability_limit
from ouflow.presets import (
    reference_contracting,
    reference_expanding,
)
from ouflow.radial import (
    NOT_NORMALIZABLE,
    RadialLaw,
    classify,
    classify_model,
    invariant_density,
    scale_function,
    simulate_radial,
    speed_density,
)
from ouflow.sampling import replica_stream
from ouflow.spectrum import LyapunovSpectrum


@pytest.fixture(scope="module")
def sol_law():
    return RadialLaw.from_model(reference_expanding())


def test_coefficients_match_naive_formulas(sol_law):
    model = sol_law.model
    r = np.linspace(0.3, 4.0, 30)
    drift_naive = (model.dim - 1) * (1 - model.B_N(r)) / r - model.drift * r
    diff_naive = 2 * (1 - model.B_L(r))
    np.testing.assert_allclose(sol_law.drift(r), drift_naive, rtol=1e-12)
    np.testing.assert_allclose(sol_law.diffusion_sq(r), diff_naive, rtol=1e-12)


def test_scale_function_base_point_and_monotone(sol_law):
    assert scale_function(sol_law, 1.0) == 0.0
    vals = scale_function(sol_law, np.array([0.5, 1.0, 2.0, 3.0]))
    assert np.all(np.diff(vals) > 0)
    assert vals[0] < 0 < vals[2]


def test_scale_solves_generator_ode(sol_law):
    # A s = 0: central differences of s against the drift/diffusion pair
    for r in np.linspace(0.2, 5.0, 12):
        h = 1e-4 * r
        s_m, s_0, s_p = (scale_function(sol_law, x) for x in (r - h, r, r + h))
        s1 = (s_p - s_m) / (2 * h)
        s2 = (s_p - 2 * s_0 + s_m) / (h * h)
        residual = (0.5 * sol_law.diffusion_sq(r) * s2
                    + sol_law.drift(r) * s1)
        dominant = abs(sol_law.drift(r) * s1)
        assert abs(residual) <= 1e-4 * dominant


def test_speed_density_small_r_power_law():
    # analytic exponent rho - 2 with rho = ((d-1) beta_N/2 - c)/(beta_L/2)
    model = gaussian_solenoidal(dim=2, length_scale=1.0, drift=0.25)
    law = RadialLaw.from_model(model)
    rho = law.small_r_exponent
    assert rho == pytest.approx(2.5)
    xs = np.geomspace(1e-3, 1e-2, 12)
    slope = np.polyfit(np.log(xs), np.log(speed_density(law, xs)), 1)[0]
    assert slope == pytest.approx(rho - 2.0, rel=0.02)


def test_invariant_density_exists_iff_top_exponent_positive(sol_law):
    dens = invariant_density(sol_law)
    assert dens is not NOT_NORMALIZABLE
    # independent re-integration of m_p over the cached range
    total, _ = quad(lambda x: speed_density(sol_law, x) / dens.total_mass,
                    sol_law.grid[0], sol_law.grid[-1], limit=400)
    rho = sol_law.small_r_exponent
    head = (speed_density(sol_law, sol_law.grid[0]) / dens.total_mass
            * sol_law.grid[0] / (rho - 1.0))
    assert total + head == pytest.approx(1.0, abs=1e-6)

    law_neg = RadialLaw.from_model(reference_contracting())
    assert invariant_density(law_neg) is NOT_NORMALIZABLE


def test_boundary_case_flagged():
    model = gaussian_solenoidal(dim=2, length_scale=1.0, drift=1.0)
    verdict = classify_model(model)
    assert verdict["lambda1"] == pytest.approx(0.0)
    assert verdict["classification"] == "recurrent"
    assert not verdict["normalizable"]
    assert verdict["boundary"]


def test_classify_rule():
    mk = lambda top: LyapunovSpectrum((top, top - 1.0), (1, 1), "closed_form")
    assert classify(mk(0.5)) == "recurrent"
    assert classify(mk(0.0)) == "recurrent"
    assert classify(mk(-1.1)) == "transient"


def test_transient_paths_collapse():
    law = RadialLaw.from_model(reference_contracting())   # lambda_1 = -1.5
    path = simulate_radial(law, r0=1.0, dt=2e-3, T=20.0,
                           rng=replica_stream(3), n_paths=200,
                           record_stride=10**9)
    final = path.values[-1]
    assert np.mean(final < 1e-3) >= 0.9
    assert np.all(path.values > 0)


def test_recurrent_paths_cross_both_levels():
    law = RadialLaw.from_model(reference_expanding())
    r0 = 0.3
    path = simulate_radial(law, r0=r0, dt=2e-3, T=600.0,
                           rng=replica_stream(4), n_paths=100,
                           record_stride=5)
    hit_low = (path.values < r0 / 10).any(axis=0)
    hit_high = (path.values > 10 * r0).any(axis=0)
    assert np.mean(hit_low & hit_high) >= 0.9
    assert path.law_accurate


def test_generator_coefficients_from_short_time_moments(sol_law):
    # Richardson extrapolation of one-step moments at two step sizes
    r0 = 1.0
    n = 200_000
    est = {}
    for dt in (2e-3, 1e-3):
        path = simulate_radial(sol_law, r0=r0, dt=dt, T=dt,
                               rng=replica_stream(8), n_paths=n)
        dr = path.values[-1] - r0
        est[dt] = (dr.mean() / dt, dr.var(ddof=1) / dt)
    drift_rich = 2 * est[1e-3][0] - est[2e-3][0]
    diff_rich = 2 * est[1e-3][1] - est[2e-3][1]
    se_drift = np.sqrt(5 * sol_law.diffusion_sq(r0) / (n * 1e-3))
    assert abs(drift_rich - sol_law.drift(r0)) <= 3 * se_drift
    assert diff_rich == pytest.approx(sol_law.diffusion_sq(r0), rel=0.02)


def test_occupation_matches_invariant_density_short(sol_law):
    dens = invariant_density(sol_law)
    path = simulate_radial(sol_law, r0=1.0, dt=5e-3, T=3000.0,
                           rng=replica_stream(5), n_paths=1,
                           record_stride=20)
    burn = int(len(path.values) // 10)
    samples = path.values[burn:].ravel()
    grid = np.quantile(samples, np.linspace(0.02, 0.98, 25))
    emp = np.searchsorted(np.sort(samples), grid) / len(samples)
    theo = dens.cdf(grid)
    assert np.abs(emp - theo).max() < 0.08
    assert path.law_accurate


def test_flow_distance_matches_radial_sde_in_law():
    # the same (r0, model) integrated as a full two-point flow and as the
    # scalar distance SDE agree in distribution (two-sample KS at 1%)
    model = reference_expanding()
    law = RadialLaw.from_model(model)
    r0 = 1.0
    dt = stability_limit(model)
    n = 1000
    x = np.array([[r0 / 2, 0.0], [-r0 / 2, 0.0]])
    initial = np.broadcast_to(x, (n, 2, 2)).copy()
    snap = {}
    for t, X in ensemble_positions(model, initial, dt, int(round(10.0 / dt)),
                                   seed=6):
        for target in (1.0, 10.0):
            if abs(t - target) < dt / 2:
                snap[target] = np.linalg.norm(X[:, 0] - X[:, 1], axis=1)
    rng = replica_stream(7)
    radial = simulate_radial(law, r0=r0, dt=dt, T=10.0, rng=rng, n_paths=n,
                             record_stride=5)
    times = np.asarray(radial.times)
    crit = 1.628 * np.sqrt(2.0 / n)          # 1% two-sample KS critical value
    for target in (1.0, 10.0):
        idx = int(np.argmin(np.abs(times - target)))
        stat = ks_2samp(snap[target], radial.values[idx]).statistic
        assert stat < crit, f"KS at t={target}: {stat:.4f} >= {crit:.4f}"


def test_rejects_nonpositive_start(sol_law):
    with pytest.raises(ValueError):
        simulate_radial(sol_law, r0=0.0, dt=1e-3, T=1.0, rng=replica_stream(0))
