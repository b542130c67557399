import numpy as np
import pytest

from ouflow.flow import (
    SimConfig,
    ensemble_positions,
    pullback_cloud,
    simulate,
    stability_limit,
)
from ouflow.presets import (
    default_contracting,
    reference_contracting,
    reference_expanding,
)
from ouflow.sampling import replica_stream

SOL = reference_expanding()      # exponents (0.5, -1.5)
POT = reference_contracting()    # exponents (-1.5, -3.5)


def test_stability_guard_enforced():
    with pytest.raises(ValueError, match="stability guard"):
        SimConfig(model=SOL, dt=0.5, horizon=1.0)
    SimConfig(model=SOL, dt=0.5, horizon=1.0, allow_unstable_dt=True)


def test_zero_noise_position_and_jacobian_exact():
    cfg = SimConfig(model=SOL, dt=1e-3, horizon=2.0, noise_scale=0.0,
                    track_jacobians=True)
    traj = simulate(cfg, np.array([[1.0, -2.0]]))
    decay = np.exp(-SOL.drift * 2.0)
    np.testing.assert_allclose(traj.final.positions[0],
                               np.array([1.0, -2.0]) * decay, rtol=1e-12)
    np.testing.assert_allclose(traj.final.jacobians[0], decay * np.eye(2),
                               rtol=1e-12)


def test_zero_horizon_echoes_initial():
    cfg = SimConfig(model=SOL, dt=1e-3, horizon=0.0)
    pts = np.array([[0.5, 0.5], [1.0, 0.0]])
    traj = simulate(cfg, pts)
    assert traj.times.tolist() == [0.0]
    np.testing.assert_array_equal(traj.final.positions, pts)


def test_one_point_marginal_is_ou():
    # moment test against N(x e^{-ct}, (1 - e^{-2ct})/(2c) Id), 4 SE
    model = SOL
    x0 = np.array([1.5, -0.5])
    T, dt, B = 2.0, stability_limit(model), 10_000
    n_steps = int(round(T / dt))
    initial = np.broadcast_to(x0, (B, 1, 2)).copy()
    for _, X in ensemble_positions(model, initial, dt, n_steps, seed=21):
        pass
    final = X[:, 0, :]
    c = model.drift
    mean_th = x0 * np.exp(-c * T)
    var_th = (1 - np.exp(-2 * c * T)) / (2 * c)
    se_mean = np.sqrt(var_th / B)
    assert np.abs(final.mean(axis=0) - mean_th).max() <= 4 * se_mean
    se_var = var_th * np.sqrt(2.0 / B)
    assert np.abs(final.var(axis=0, ddof=1) - var_th).max() <= 4 * se_var + c * dt * var_th


def test_two_point_contraction_fraction():
    # strongly contracting family: terminal separation below the initial one
    # in at least 90% of replicas
    model = default_contracting()
    B, T = 200, 50.0
    dt = 0.02
    x = np.array([[0.5, 0.0], [-0.5, 0.0]])
    initial = np.broadcast_to(x, (B, 2, 2)).copy()
    mid = None
    for t, X in ensemble_positions(model, initial, dt, int(T / dt), seed=3):
        if abs(t - 20.0) < dt / 2:
            mid = np.linalg.norm(X[:, 0] - X[:, 1], axis=1)
    dist = np.linalg.norm(X[:, 0] - X[:, 1], axis=1)
    assert np.mean(dist < 1.0) >= 0.9
    # positivity is asserted inside the float-representable window; beyond
    # ~e^{-30} contraction the coincident-point limit is unavoidable
    assert np.all(mid > 0)


def test_permuted_initial_points_permute_trajectory():
    pts = np.array([[0.1, 0.2], [-0.4, 0.9], [1.0, -1.0]])
    perm = [2, 0, 1]
    cfg = SimConfig(model=SOL, dt=1e-3, horizon=0.02, seed=5)
    a = simulate(cfg, pts)
    b = simulate(cfg, pts[perm])
    np.testing.assert_array_equal(a.final.positions[perm], b.final.positions)


@pytest.mark.parametrize("model_fn,lam1,T", [
    (default_contracting, -0.75, 10.0),       # stays above the round-off floor
    (reference_expanding, 0.5, 8.0),          # stays far below the length scale
])
def test_localized_pair_log_growth_matches_top_exponent(model_fn, lam1, T):
    # a pair separated by 1e-3 l behaves like a tangent vector while the
    # separation stays inside the representable tangent window
    model = model_fn()
    B = 128
    dt = 0.02 if model.length_scale > 1 else stability_limit(model)
    sep = 1e-3 * model.length_scale
    x = np.array([[sep / 2, 0.0], [-sep / 2, 0.0]])
    initial = np.broadcast_to(x, (B, 2, 2)).copy()
    for _, X in ensemble_positions(model, initial, dt, int(round(T / dt)),
                                   seed=9):
        pass
    dist = np.linalg.norm(X[:, 0] - X[:, 1], axis=1)
    assert np.all(dist > 0)
    rate = (np.log(dist) - np.log(sep)).mean() / T
    assert rate == pytest.approx(lam1, abs=0.1 * abs(lam1))


def test_pullback_t0_is_invariant_law_sample():
    cloud = pullback_cloud(SOL, n_samples=4000, T=0.0, seed=1)
    pts = cloud.points
    var_th = 1.0 / (2 * SOL.drift)
    se = var_th * np.sqrt(2.0 / len(pts))
    assert np.abs(pts.var(axis=0, ddof=1) - var_th).max() <= 4 * se
    assert cloud.meta["T"] == 0.0


def test_pullback_collapse_for_negative_top_exponent():
    model = default_contracting()       # lambda_1 = -0.75
    snaps = pullback_cloud(model, n_samples=1000, T=14.0, dt=0.02, seed=2,
                           snapshot_times=[0.02, 14.0])
    def q95(pts):
        sub = pts[::2]
        d = np.linalg.norm(sub[:, None, :] - sub[None, :, :], axis=-1)
        return np.percentile(d[np.triu_indices_from(d, 1)], 95)
    early = q95(snaps[0.02].points)
    late = q95(snaps[14.0].points)
    assert late < 0.01 * early


def test_pullback_respects_memory_guard():
    with pytest.raises(ValueError, match="memory guard"):
        pullback_cloud(SOL, n_samples=10_000_000, T=1.0)


def test_pullback_large_drift_concentrates():
    # each marginal stays exactly at the invariant law N(0, 1/(2c)), so the
    # second moment about the origin reads off 1/(2c); large drift shrinks it
    from ouflow.correlation import gaussian_solenoidal
    model = gaussian_solenoidal(dim=2, length_scale=1.0, drift=5.0)
    cloud = pullback_cloud(model, n_samples=1000, T=0.05, seed=4)
    second_moment = np.square(cloud.points).mean()
    assert second_moment == pytest.approx(1.0 / (2 * 5.0), rel=0.3)
    wide = pullback_cloud(SOL, n_samples=1000, T=0.05, seed=4)
    assert np.square(wide.points).mean() > 5 * second_moment


def test_scheme_consistency_first_order():
    # with the noise switched off the schemes differ only in the drift
    # discretization; the terminal gap halves when dt halves
    x0 = np.array([[2.0, 0.0]])
    gaps = []
    for dt in (0.002, 0.001):
        finals = {}
        for scheme in ("euler_maruyama", "exponential_euler"):
            cfg = SimConfig(model=SOL, dt=dt, horizon=1.0, scheme=scheme,
                            noise_scale=0.0, seed=0)
            finals[scheme] = simulate(cfg, x0).final.positions[0, 0]
        gaps.append(abs(finals["euler_maruyama"] - finals["exponential_euler"]))
    assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=0.05)


def test_trajectory_reproducible_and_fingerprinted():
    cfg = SimConfig(model=SOL, dt=1e-3, horizon=0.05, seed=12, replica_index=3)
    a = simulate(cfg, np.array([[0.3, 0.3]]))
    b = simulate(cfg, np.array([[0.3, 0.3]]))
    np.testing.assert_array_equal(a.final.positions, b.final.positions)
    assert a.fingerprint == b.fingerprint
    assert "seed=12" in a.fingerprint and "replica=3" in a.fingerprint
