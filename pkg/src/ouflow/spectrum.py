"""Lyapunov spectrum: closed form, Kaplan-Yorke dimension, QR estimation.

The flow's tangent (variational) dynamics at a point is driven by the
gradient increments of the field, whose law does not depend on the base
point; the exponents therefore come out in closed form,

    lambda_i = (d - i) * beta_N / 2 - i * beta_L / 2 - c,   i = 1..d,

all simple, uniformly spaced by ``(beta_N + beta_L) / 2``.  The empirical
counterpart is the classical Benettin QR method: propagate an orthonormal
frame through the one-step Jacobian multipliers, re-orthonormalize every few
steps, and average the log diagonal of the R factors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ouflow.correlation import CorrelationModel
from ouflow.sampling import (
    IncrementRequest,
    assemble_covariance,
    factorize_covariance,
    replica_stream,
)

__all__ = [
    "LyapunovSpectrum",
    "closed_form_spectrum",
    "lyapunov_dimension",
    "estimate_spectrum_qr",
]


@dataclass(frozen=True)
class LyapunovSpectrum:
    """Ordered exponents with multiplicities and provenance.

    ``stderr`` is populated for QR estimates (batch-means standard errors);
    ``boundary`` flags a vanishing top exponent, where the equilibrium
    dimension is not defined by the theory.
    """

    exponents: tuple
    multiplicities: tuple
    provenance: str                      # "closed_form" | "qr_estimate"
    stderr: tuple | None = None

    def __post_init__(self):
        lam = np.asarray(self.exponents, dtype=float)
        if np.any(np.diff(lam) > 0):
            raise ValueError("exponents must be ordered non-increasing")
        if len(self.multiplicities) != len(self.exponents):
            raise ValueError("multiplicities must match exponents")

    @property
    def top(self) -> float:
        return self.exponents[0]

    @property
    def boundary(self) -> bool:
        return self.top == 0.0


def closed_form_spectrum(beta_L: float, beta_N: float, c: float,
                         d: int) -> LyapunovSpectrum:
    """Exact spectrum from the local field statistics and the drift."""
    if not (beta_L > 0 and beta_N > 0 and c > 0 and d >= 2):
        raise ValueError("need beta_L, beta_N, c > 0 and d >= 2")
    lam = tuple((d - i) * beta_N / 2.0 - i * beta_L / 2.0 - c
                for i in range(1, d + 1))
    return LyapunovSpectrum(exponents=lam, multiplicities=(1,) * d,
                            provenance="closed_form")


def model_spectrum(model: CorrelationModel) -> LyapunovSpectrum:
    return closed_form_spectrum(model.beta_L, model.beta_N, model.drift,
                                model.dim)


def lyapunov_dimension(spectrum: LyapunovSpectrum) -> float:
    """Kaplan-Yorke dimension of the spectrum.

    ``k`` is the largest index with a positive partial sum
    ``sum_{i<=k} lambda_i m_i``; the dimension is ``sum_{i<=k} m_i``
    (equal to the full space dimension when the first k multiplicities
    exhaust it) plus the interpolation term
    ``-(1/lambda_{k+1}) sum_{i<=k} lambda_i m_i``.

    When the top exponent is nonpositive no such ``k`` exists; the value 0
    is returned by convention (the equilibrium is a Dirac mass for a strictly
    negative top exponent; a vanishing one is flagged as a boundary case via
    ``spectrum.boundary``).
    """
    lam = np.asarray(spectrum.exponents, dtype=float)
    mult = np.asarray(spectrum.multiplicities, dtype=float)
    partial = np.cumsum(lam * mult)
    positive = np.nonzero(partial > 0)[0]
    if len(positive) == 0:
        return 0.0
    k = positive[-1]
    if mult[:k + 1].sum() == mult.sum():
        return float(mult.sum())
    return float(mult[:k + 1].sum() - partial[k] / lam[k + 1])


def _onepoint_gradient_factor(model: CorrelationModel, dt: float,
                              noise_scale: float):
    """Factorized joint law of (dF, dDF) at a single point.

    Stationarity makes this law position independent, which is what lets a
    spectrum run factor once and reuse the factor for every step.
    """
    req = IncrementRequest(points=np.zeros((1, model.dim)), dt=dt,
                           with_gradients=True)
    cov = assemble_covariance(model, req)
    if noise_scale != 1.0:
        cov = cov * noise_scale**2
    return factorize_covariance(cov)


def estimate_spectrum_qr(model: CorrelationModel, T: float, dt: float,
                         replicas: int = 20, seed: int = 0,
                         reortho_stride: int = 10, n_batches: int = 10,
                         scheme: str = "exponential_euler",
                         noise_scale: float = 1.0,
                         initial_frame: np.ndarray | None = None,
                         cond_limit: float = 1e8) -> LyapunovSpectrum:
    """Benettin QR estimate of the full spectrum, pooled over replicas.

    Each replica propagates an orthonormal frame through one-step Jacobian
    multipliers ``exp(-c dt)(I) + dDF`` (or the Euler-Maruyama variant) with
    QR re-orthonormalization every ``reortho_stride`` steps; exponents are
    the time averages of ``log |diag R|``.  Standard errors come from batch
    means (``n_batches`` per replica, pooled).  If the multiplier product's
    diagonal spread breaches ``cond_limit`` the stride is halved once, after
    which the run errors out.

    A fixed ``initial_frame`` (orthogonal d x d) may replace the identity;
    estimates are invariant to it up to stochastic error.
    """
    d = model.dim
    n_steps = int(round(T / dt))
    if n_steps < n_batches * reortho_stride:
        raise ValueError("horizon too short for the requested batching")
    for attempt in range(2):
        try:
            batch_means = _qr_run(model, T, dt, n_steps, replicas, seed,
                                  reortho_stride, n_batches, scheme,
                                  noise_scale, initial_frame, cond_limit)
            break
        except _ConditionBreach:
            if attempt == 1 or reortho_stride == 1:
                raise RuntimeError(
                    "QR condition limit breached even after halving the "
                    "re-orthonormalization stride")
            reortho_stride = max(1, reortho_stride // 2)
    pooled = batch_means.reshape(-1, d)
    est = pooled.mean(axis=0)
    se = pooled.std(axis=0, ddof=1) / np.sqrt(pooled.shape[0])
    order = np.argsort(est)[::-1]
    return LyapunovSpectrum(
        exponents=tuple(float(x) for x in est[order]),
        multiplicities=(1,) * d,
        provenance="qr_estimate",
        stderr=tuple(float(x) for x in se[order]))


class _ConditionBreach(Exception):
    pass


def _qr_run(model, T, dt, n_steps, replicas, seed, stride, n_batches,
            scheme, noise_scale, initial_frame, cond_limit):
    d = model.dim
    factor = _onepoint_gradient_factor(model, dt, noise_scale)
    m = factor.m                                   # d + d*d normals per step
    streams = [replica_stream(seed, b) for b in range(replicas)]
    Q = np.broadcast_to(
        np.eye(d) if initial_frame is None else np.asarray(initial_frame, dtype=float),
        (replicas, d, d)).copy()
    c = model.drift
    lin = np.exp(-c * dt) if scheme == "exponential_euler" else 1.0 - c * dt
    lin_eye = lin * np.eye(d)

    # QR events close each stride (the tail event may be shorter); batches
    # are contiguous runs of events
    event_end = list(range(stride, n_steps + 1, stride))
    if not event_end or event_end[-1] != n_steps:
        event_end.append(n_steps)
    n_events = len(event_end)
    batch_of_event = np.minimum(
        (np.arange(n_events) * n_batches) // n_events, n_batches - 1)
    logs = np.zeros((replicas, n_batches, d))
    batch_steps = np.zeros(n_batches)
    event = 0
    chunk = max(stride, min(n_steps, (1 << 21) // max(replicas * m, 1)))
    prod = np.broadcast_to(np.eye(d), (replicas, d, d)).copy()
    z_buf = None
    steps_in_prod = 0
    for k in range(n_steps):
        j = k % chunk
        if j == 0:
            take = min(chunk, n_steps - k)
            z_buf = np.stack([s.standard_normal((take, m)) for s in streams])
        flat = factor.sample_from(z_buf[:, j, :])
        dDF = flat[:, d:].reshape(replicas, d, d)
        prod = np.einsum("bik,bkj->bij", lin_eye[None] + dDF, prod)
        steps_in_prod += 1
        if k + 1 == event_end[event]:
            Z = np.einsum("bik,bkj->bij", prod, Q)
            Q, R = np.linalg.qr(Z)
            diag = np.abs(np.einsum("bii->bi", R))
            if np.any(diag.max(axis=1) / np.maximum(diag.min(axis=1), 1e-300)
                      > cond_limit):
                raise _ConditionBreach
            b = batch_of_event[event]
            logs[:, b, :] += np.log(diag)
            batch_steps[b] += steps_in_prod
            prod = np.broadcast_to(np.eye(d), (replicas, d, d)).copy()
            steps_in_prod = 0
            event += 1
    return logs / (dt * batch_steps)[None, :, None]
