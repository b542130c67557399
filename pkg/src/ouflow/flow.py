"""Time stepping of the n-point motion and its Jacobian cocycle.

One step freezes the field increment at the start-of-step positions (the
flow's stochastic integral is of Ito type, so the explicit scheme is the
consistent one) and draws it exactly from the joint law provided by
``ouflow.sampling``:

    euler_maruyama:     x <- x + dF(x) - c x dt
    exponential_euler:  x <- exp(-c dt) x + dF(x)

with the Jacobian propagated by the same gradient draw,

    J <- J + dDF(x) J - c J dt        (resp.  exp(-c dt) J + dDF(x) J).

Both schemes are strongly consistent to first order in dt; the exponential
variant applies the linear drift exactly, so zero-noise runs reproduce
``x0 exp(-c t)`` and ``J = exp(-c t) Id`` to machine precision.

Replicas are independent tasks keyed by ``replica_index`` with streams
derived per ``ouflow.sampling.replica_stream``; a single replica is
sequential.  The batched ensemble driver factors each replica's covariance
per step and consumes each replica's stream in fixed step-major order (one
block of ``m`` standard normals per step), so every driver is individually
reproducible; the batched and single-replica paths realize the same law
through different factorizations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ouflow.correlation import CorrelationModel, tensor_at
from ouflow.sampling import (
    IncrementRequest,
    increment_factor,
    replica_stream,
    sample_increment,
    JITTER_LADDER,
)

__all__ = [
    "SimConfig",
    "FlowState",
    "Trajectory",
    "step",
    "simulate",
    "pullback_cloud",
    "stability_limit",
    "ensemble_positions",
]

SCHEMES = ("exponential_euler", "euler_maruyama")

# Refuse clouds whose factor storage would not fit comfortably in memory.
MAX_CLOUD_ENTRIES = 200_000


def stability_limit(model: CorrelationModel) -> float:
    """Default time-step guard: resolve both the drift and the tangent growth.

    The stiffest scales are the linear drift (rate ``c``) and the tangent
    stretching (rates ``beta_L``, ``beta_N``); the guard keeps a step to 1%
    of each.
    """
    return min(0.01 / model.drift,
               0.01 * model.length_scale**2 / max(model.beta_L, model.beta_N))


@dataclass(frozen=True)
class SimConfig:
    """Numerical configuration of one flow simulation."""

    model: CorrelationModel
    dt: float
    horizon: float
    track_jacobians: bool = False
    scheme: str = "exponential_euler"
    seed: int = 0
    replica_index: int = 0
    noise_scale: float = 1.0
    store_stride: int = 1
    allow_unstable_dt: bool = False

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; pick from {SCHEMES}")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        limit = stability_limit(self.model)
        if self.dt > limit * (1 + 1e-12) and not self.allow_unstable_dt:
            raise ValueError(
                f"dt={self.dt:g} exceeds the stability guard {limit:g} "
                "for this model; pass allow_unstable_dt=True to override")

    def fingerprint(self) -> str:
        return (f"{self.model.fingerprint()}|dt={self.dt:g}|T={self.horizon:g}"
                f"|scheme={self.scheme}|seed={self.seed}"
                f"|replica={self.replica_index}|noise={self.noise_scale:g}"
                f"|jac={int(self.track_jacobians)}")


@dataclass
class FlowState:
    """Positions (and optional Jacobians) of a tracked cloud at time t."""

    t: float
    positions: np.ndarray              # (n, d)
    jacobians: np.ndarray | None       # (n, d, d)
    rng: np.random.Generator


@dataclass
class Trajectory:
    """Down-sampled record of one replica."""

    times: np.ndarray
    positions: np.ndarray              # (n_stored, n, d)
    jacobians: np.ndarray | None       # (n_stored, n, d, d)
    fingerprint: str
    final: FlowState


def _advance(positions, jacobians, sample, config):
    dt = config.dt
    c = config.model.drift
    if config.scheme == "exponential_euler":
        decay = np.exp(-c * dt)
        new_pos = decay * positions + sample.dF
        new_jac = None
        if jacobians is not None:
            new_jac = decay * jacobians + np.einsum(
                "pik,pkj->pij", sample.dDF, jacobians)
    else:
        new_pos = positions + sample.dF - c * positions * dt
        new_jac = None
        if jacobians is not None:
            new_jac = (jacobians + np.einsum("pik,pkj->pij", sample.dDF, jacobians)
                       - c * jacobians * dt)
    return new_pos, new_jac


def step(state: FlowState, config: SimConfig) -> FlowState:
    """Advance one time step; aborts the replica on non-finite state."""
    req = IncrementRequest(points=state.positions, dt=config.dt,
                           with_gradients=config.track_jacobians)
    factor = increment_factor(config.model, req, noise_scale=config.noise_scale)
    sample = sample_increment(factor, state.rng, req.n_points, req.dim,
                              with_gradients=config.track_jacobians)
    new_pos, new_jac = _advance(state.positions, state.jacobians, sample, config)
    if not np.all(np.isfinite(new_pos)) or (
            new_jac is not None and not np.all(np.isfinite(new_jac))):
        raise RuntimeError(
            f"non-finite state at t={state.t + config.dt:g} "
            f"(replica {config.replica_index}); aborting replica")
    return FlowState(t=state.t + config.dt, positions=new_pos,
                     jacobians=new_jac, rng=state.rng)


def simulate(config: SimConfig, initial_points) -> Trajectory:
    """Run one replica from the given initial cloud.

    Reproducible given ``(seed, replica_index)``; the record carries the
    configuration fingerprint.  A zero horizon echoes the initial state.
    """
    pts = np.atleast_2d(np.asarray(initial_points, dtype=float))
    n, d = pts.shape
    if d != config.model.dim:
        raise ValueError(f"initial points must have dimension {config.model.dim}")
    rng = replica_stream(config.seed, config.replica_index)
    state = FlowState(
        t=0.0, positions=pts.copy(),
        jacobians=np.broadcast_to(np.eye(d), (n, d, d)).copy()
        if config.track_jacobians else None,
        rng=rng)
    n_steps = int(round(config.horizon / config.dt)) if config.horizon > 0 else 0
    times = [0.0]
    stored_pos = [state.positions.copy()]
    stored_jac = [state.jacobians.copy()] if config.track_jacobians else None
    for k in range(n_steps):
        state = step(state, config)
        if (k + 1) % config.store_stride == 0 or k == n_steps - 1:
            times.append(state.t)
            stored_pos.append(state.positions.copy())
            if stored_jac is not None:
                stored_jac.append(state.jacobians.copy())
    return Trajectory(
        times=np.asarray(times),
        positions=np.asarray(stored_pos),
        jacobians=np.asarray(stored_jac) if stored_jac is not None else None,
        fingerprint=config.fingerprint(),
        final=state)


def pullback_cloud(model: CorrelationModel, n_samples: int, T: float,
                   dt: float | None = None, seed: int = 0,
                   snapshot_times=None, noise_scale: float = 1.0,
                   allow_unstable_dt: bool = False):
    """Push an equilibrium sample of the one-point motion through one flow.

    Draws ``n_samples`` points from the one-point invariant law
    ``N(0, 1/(2c) Id)`` and transports them through a single flow realization
    (one field stream, all points coupled) over horizon ``T``.  By
    stationarity of the field increments the result equals, in distribution,
    the pullback image of the invariant law at horizon ``T``; that
    distributional identity is this function's approximation contract.

    Returns an ``EmpiricalMeasure`` tagged with ``(T, seed)``; when
    ``snapshot_times`` is given, a dict of such measures keyed by time
    (useful for stabilization studies along a single realization).
    """
    from ouflow.dimension import EmpiricalMeasure     # local: avoid cycle

    d = model.dim
    if n_samples * d > MAX_CLOUD_ENTRIES:
        raise ValueError(
            f"cloud of {n_samples} x {d} entries exceeds the memory guard "
            f"({MAX_CLOUD_ENTRIES} entries)")
    limit = stability_limit(model)
    if dt is None:
        dt = limit
    elif dt > limit * (1 + 1e-12) and not allow_unstable_dt:
        raise ValueError(
            f"dt={dt:g} exceeds the stability guard {limit:g}; "
            "pass allow_unstable_dt=True to override")
    rng = replica_stream(seed, 0)
    X = rng.normal(0.0, np.sqrt(1.0 / (2.0 * model.drift)), size=(n_samples, d))

    def measure(X_now, t_now):
        return EmpiricalMeasure(points=X_now.copy(), meta={
            "model": model.fingerprint(), "T": t_now, "seed": seed,
            "n": n_samples, "dt": dt})

    wanted = sorted(snapshot_times) if snapshot_times is not None else None
    out = {}
    n_steps = int(round(T / dt)) if T > 0 else 0
    decay = np.exp(-model.drift * dt)
    for k in range(n_steps):
        req = IncrementRequest(points=X, dt=dt, with_gradients=False)
        factor = increment_factor(model, req, noise_scale=noise_scale)
        dF = factor.sample(rng).reshape(n_samples, d)
        X = decay * X + dF
        if not np.all(np.isfinite(X)):
            raise RuntimeError(f"non-finite cloud at step {k + 1}")
        if wanted:
            t_now = (k + 1) * dt
            while wanted and t_now >= wanted[0] - dt / 2:
                out[wanted.pop(0)] = measure(X, t_now)
    if snapshot_times is None:
        return measure(X, T)
    for leftover in wanted:                 # snapshot at/after the horizon
        out[leftover] = measure(X, n_steps * dt)
    return out


def _batched_cholesky(cov: np.ndarray, ladder=JITTER_LADDER) -> np.ndarray:
    """Factor a (B, m, m) stack for sampling: F F^T = cov.

    Plain Cholesky first; replicas whose matrix is (numerically) rank
    deficient -- collapsed clouds -- fall back to the pivoted factorization,
    whose rank truncation realizes the duplicated-samples limit without
    injecting jitter noise into vanishing separations.  The jitter ladder is
    climbed only if the pivoted route also fails.
    """
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    from ouflow.sampling import factorize_covariance
    m = cov.shape[-1]
    out = np.empty_like(cov)
    for b in range(cov.shape[0]):
        try:
            out[b] = np.linalg.cholesky(cov[b])
            continue
        except np.linalg.LinAlgError:
            pass
        f = factorize_covariance(cov[b], jitter_ladder=ladder)
        M = np.zeros((m, m))
        M[f._piv, :f.rank] = f._L       # row-permuted factor, M M^T = cov[b]
        out[b] = M
    return out


def ensemble_positions(model: CorrelationModel, initial: np.ndarray,
                       dt: float, n_steps: int, seed: int,
                       scheme: str = "exponential_euler",
                       noise_scale: float = 1.0, replica_offset: int = 0):
    """Generator driving B independent replicas of an n-point cloud.

    ``initial`` has shape (B, n, d); replica b uses the stream
    ``replica_stream(seed, replica_offset + b)``.  Yields ``(t, X)`` with
    ``X`` of shape (B, n, d) after every step (the initial state first).
    Batched linear algebra, per-replica streams.
    """
    X = np.array(initial, dtype=float)
    B, n, d = X.shape
    m = n * d
    streams = [replica_stream(seed, replica_offset + b) for b in range(B)]
    decay = np.exp(-model.drift * dt)
    sqdt = np.sqrt(dt) * noise_scale
    chunk = max(1, min(n_steps, (1 << 22) // max(B * m, 1)))
    yield 0.0, X
    z_buf = None
    for k in range(n_steps):
        j = k % chunk
        if j == 0:
            take = min(chunk, n_steps - k)
            z_buf = np.stack([s.standard_normal((take, m)) for s in streams])
        diffs = X[:, :, None, :] - X[:, None, :, :]
        cov = tensor_at(model, diffs)                       # (B, n, n, d, d)
        cov = cov.transpose(0, 1, 3, 2, 4).reshape(B, m, m)
        L = _batched_cholesky(cov)
        dF = sqdt * np.einsum("bij,bj->bi", L, z_buf[:, j, :])
        if scheme == "exponential_euler":
            X = decay * X + dF.reshape(B, n, d)
        else:
            X = X + dF.reshape(B, n, d) - model.drift * X * dt
        if not np.all(np.isfinite(X)):
            raise RuntimeError(f"non-finite ensemble state at step {k + 1}")
        yield (k + 1) * dt, X
