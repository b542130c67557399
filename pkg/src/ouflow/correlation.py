"""Isotropic covariance tensors for homogeneous Gaussian vector fields.

The matrix-valued covariance of an isotropic random vector field is fully
determined by two scalar functions of distance, the longitudinal correlation
``B_L`` (component along the separation vector) and the transversal
correlation ``B_N`` (components orthogonal to it):

    b_ij(x) = (B_L(|x|) - B_N(|x|)) x_i x_j / |x|^2 + B_N(|x|) delta_ij

with ``b(0) = Id`` after normalization.  The negative second derivatives at
zero, ``beta_L = -B_L''(0)`` and ``beta_N = -B_N''(0)``, control the local
stretching statistics of the flow driven by the field and hence its Lyapunov
spectrum.

Shipped families are derived from the scalar Gaussian kernel
``C(x) = l^2 exp(-|x|^2 / (2 l^2))``:

* ``gaussian_potential``  -- gradient field of a scalar Gaussian potential,
  covariance ``-Hess C``; curl-free.
* ``gaussian_solenoidal`` -- divergence-free complement,
  covariance ``(-Lap C) Id + Hess C`` (normalized); volume preserving.
* ``gaussian_mixture``    -- convex combination of the two; the mixture
  weight tunes the sign of the top Lyapunov exponent.

All three are covariances of actual Gaussian fields, so positive
semidefiniteness holds by construction.  User-supplied pairs are only
checked numerically (``validate_psd``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

__all__ = [
    "CorrelationModel",
    "PairwiseBound",
    "PsdReport",
    "gaussian_potential",
    "gaussian_solenoidal",
    "gaussian_mixture",
    "user_supplied",
    "build_tensor",
    "tensor_at",
    "tensor_derivatives",
    "beta_coefficients",
    "sup_ratio_constants",
    "validate_psd",
]

# Relative radius below which the tensor formula's removable singularity is
# numerically hostile; evaluation there is rejected, callers must use x = 0.
SINGULAR_GUARD = 1e-10

# Switch radius (in units of the length scale) below which series expansions
# replace the direct ``(1 - B(r)) / r^2`` quotient for user-supplied models.
SERIES_SWITCH = 1e-3


@dataclass(frozen=True)
class CorrelationModel:
    """A valid isotropic covariance tensor plus the drift it is paired with.

    Immutable after construction and safe to share across parallel workers.

    Attributes
    ----------
    family : str
        One of ``gaussian_potential``, ``gaussian_solenoidal``,
        ``gaussian_mixture``, ``user``.
    length_scale : float
        Spatial correlation length ``l`` of the driving field.
    dim : int
        Space dimension ``d >= 2``.
    drift : float
        Strength ``c > 0`` of the linear restoring drift ``-c x``.
    alpha : float
        Mixture weight on the potential (curl-free) part; 1 for the pure
        potential family, 0 for the pure solenoidal family.
    B_L, B_N : callable
        Longitudinal / transversal correlations, vectorized over ``r >= 0``.
    dB_L, dB_N, d2B_L, d2B_N : callable
        First and second radial derivatives.
    decay_L, decay_N : callable
        Stable evaluations of ``(1 - B(r)) / r^2`` (finite limit ``beta/2``
        at zero); used wherever the raw quotient would lose precision.
    beta_L, beta_N : float
        ``-B_L''(0)`` and ``-B_N''(0)``, both strictly positive.
    """

    family: str
    length_scale: float
    dim: int
    drift: float
    alpha: float
    B_L: Callable = field(repr=False)
    B_N: Callable = field(repr=False)
    dB_L: Callable = field(repr=False)
    dB_N: Callable = field(repr=False)
    d2B_L: Callable = field(repr=False)
    d2B_N: Callable = field(repr=False)
    decay_L: Callable = field(repr=False)
    decay_N: Callable = field(repr=False)
    beta_L: float = 0.0
    beta_N: float = 0.0
    # Gaussian families only: (kappa1, kappa2) such that, with
    # E = exp(-r^2/(2 l^2)),  (B_L - B_N)/r^2 = kappa1 E  and
    # B_N = (1 - kappa2 r^2) E.  Lets hot loops share a single exp.
    fast_pair: tuple | None = field(repr=False, default=None)

    def fingerprint(self) -> str:
        return (f"{self.family}(l={self.length_scale:g},d={self.dim},"
                f"c={self.drift:g},alpha={self.alpha:g})")


@dataclass(frozen=True)
class PairwiseBound:
    """Constants of the pathwise two-point growth bound.

    The distance of two flow trajectories satisfies, almost surely,

        |phi_t(x) - phi_t(y)| <= |x - y| * exp(sigma * B*_t + lambda_bound * t)

    for a standard Brownian motion ``B`` with running maximum ``B*``, where

        a            = sup_{u>0} (1 - B_N(u)) / u^2
        b_const      = sup_{u>0} (1 - B_L(u)) / u^2
        sigma        = sqrt(2 * b_const)
        lambda_bound = (d - 1) * a - drift
    """

    a: float
    b_const: float
    sigma: float
    lambda_bound: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a > 0):
            raise ValueError(f"sup ratio a must be finite positive, got {self.a}")
        if not (np.isfinite(self.b_const) and self.b_const > 0):
            raise ValueError(f"sup ratio b must be finite positive, got {self.b_const}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class PsdReport:
    ok: bool
    min_eigenvalue: float
    n_points: int
    tol: float


def _validate_model(model: CorrelationModel) -> CorrelationModel:
    """Construction-time soundness gate shared by all factories."""
    l = model.length_scale
    if not (l > 0 and np.isfinite(l)):
        raise ValueError(f"length_scale must be positive, got {l}")
    if model.dim < 2:
        raise ValueError(f"dim must be >= 2, got {model.dim}")
    if not (model.drift > 0 and np.isfinite(model.drift)):
        raise ValueError(f"drift must be positive, got {model.drift}")
    if abs(model.B_L(0.0) - 1.0) > 1e-12 or abs(model.B_N(0.0) - 1.0) > 1e-12:
        raise ValueError("correlations must be normalized to B_L(0) = B_N(0) = 1")
    if not (model.beta_L > 0 and model.beta_N > 0):
        raise ValueError(
            f"degenerate model: beta_L={model.beta_L}, beta_N={model.beta_N} "
            "must both be positive")
    r = np.geomspace(1e-3 * l, 1e3 * l, 512)
    for name, B in (("B_L", model.B_L), ("B_N", model.B_N)):
        vals = np.asarray(B(r), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"{name} produced non-finite values")
        if np.any(np.abs(vals) > 1.0 + 1e-12):
            raise ValueError(f"{name} exceeds 1 in absolute value")
    # quadratic expansion must hold with a bounded r^4 remainder near zero
    rq = np.geomspace(1e-2 * l, l / 4.0, 64)
    for name, B, beta in (("B_L", model.B_L, model.beta_L),
                          ("B_N", model.B_N, model.beta_N)):
        rem = np.abs(np.asarray(B(rq)) - (1.0 - 0.5 * beta * rq**2)) / rq**4
        if not np.all(np.isfinite(rem)) or rem.max() > 1e6 / l**4:
            raise ValueError(f"{name} violates the quadratic small-r expansion")
    return model


def _gaussian_pieces(length_scale: float, dim: int):
    """Closed-form correlation pieces of the two Gaussian-kernel families.

    With ``E(r) = exp(-r^2 / (2 l^2))``:

        potential:  B_L = (1 - r^2/l^2) E,            B_N = E
        solenoidal: B_L = E,   B_N = (1 - r^2/((d-1) l^2)) E

    Returns per-family dicts of B, dB, d2B and stable ``(1-B)/r^2`` callables.
    """
    l2 = length_scale**2
    dm1 = dim - 1

    def E(r):
        return np.exp(-np.square(r) / (2 * l2))

    # shared building blocks; expm1 keeps 1 - E accurate for tiny r
    def one_minus_E_over_r2(r):
        r2 = np.square(r)
        out = -np.expm1(-r2 / (2 * l2))
        return np.divide(out, r2, out=np.full_like(out, 1 / (2 * l2)),
                         where=r2 > 0)

    pot = {
        "B_L": lambda r: (1 - np.square(r) / l2) * E(r),
        "B_N": E,
        "dB_L": lambda r: r * (np.square(r) - 3 * l2) / l2**2 * E(r),
        "dB_N": lambda r: -r / l2 * E(r),
        "d2B_L": lambda r: (-3 * l2**2 + 6 * l2 * np.square(r) - np.square(r)**2)
                           / l2**3 * E(r),
        "d2B_N": lambda r: (np.square(r) - l2) / l2**2 * E(r),
        # 1 - B_L = (1 - E) + (r^2/l^2) E : both terms positive, no cancellation
        "decay_L": lambda r: one_minus_E_over_r2(r) + E(r) / l2,
        "decay_N": one_minus_E_over_r2,
        "beta_L": 3.0 / l2,
        "beta_N": 1.0 / l2,
    }
    sol = {
        "B_L": E,
        "B_N": lambda r: (1 - np.square(r) / (dm1 * l2)) * E(r),
        "dB_L": lambda r: -r / l2 * E(r),
        "dB_N": lambda r: r * (np.square(r) - (dim + 1) * l2) / (dm1 * l2**2) * E(r),
        "d2B_L": lambda r: (np.square(r) - l2) / l2**2 * E(r),
        "d2B_N": lambda r: (-(dim + 1) * l2**2 + (dim + 4) * l2 * np.square(r)
                            - np.square(r)**2) / (dm1 * l2**3) * E(r),
        "decay_L": one_minus_E_over_r2,
        "decay_N": lambda r: one_minus_E_over_r2(r) + E(r) / (dm1 * l2),
        "beta_L": 1.0 / l2,
        "beta_N": (dim + 1) / (dm1 * l2),
    }
    return pot, sol


def gaussian_mixture(alpha: float, dim: int = 2, length_scale: float = 1.0,
                     drift: float = 0.5) -> CorrelationModel:
    """Convex mixture of the potential and solenoidal Gaussian families.

    Parameters
    ----------
    alpha : float
        Weight in [0, 1] on the potential (curl-free) component.  Covariances
        add, so every derived coefficient is linear in ``alpha``; in
        particular ``alpha`` moves the top Lyapunov exponent continuously
        between the solenoidal and potential extremes.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"mixture weight must lie in [0, 1], got {alpha}")
    pot, sol = _gaussian_pieces(length_scale, dim)

    def mix(key):
        f, g = pot[key], sol[key]
        return lambda r, f=f, g=g: alpha * f(r) + (1 - alpha) * g(r)

    family = {1.0: "gaussian_potential", 0.0: "gaussian_solenoidal"}.get(
        alpha, "gaussian_mixture")
    l2 = length_scale**2
    kappa1 = (1 - alpha) / ((dim - 1) * l2) - alpha / l2
    kappa2 = (1 - alpha) / ((dim - 1) * l2)
    model = CorrelationModel(
        family=family, length_scale=length_scale, dim=dim, drift=drift,
        alpha=alpha,
        B_L=mix("B_L"), B_N=mix("B_N"),
        dB_L=mix("dB_L"), dB_N=mix("dB_N"),
        d2B_L=mix("d2B_L"), d2B_N=mix("d2B_N"),
        decay_L=mix("decay_L"), decay_N=mix("decay_N"),
        beta_L=alpha * pot["beta_L"] + (1 - alpha) * sol["beta_L"],
        beta_N=alpha * pot["beta_N"] + (1 - alpha) * sol["beta_N"],
        fast_pair=(kappa1, kappa2),
    )
    return _validate_model(model)


def gaussian_potential(dim: int = 2, length_scale: float = 1.0,
                       drift: float = 0.5) -> CorrelationModel:
    """Gradient (curl-free) Gaussian field; strongly contracting flow."""
    return gaussian_mixture(1.0, dim=dim, length_scale=length_scale, drift=drift)


def gaussian_solenoidal(dim: int = 2, length_scale: float = 1.0,
                        drift: float = 0.5) -> CorrelationModel:
    """Divergence-free Gaussian field; volume preserving before the drift."""
    return gaussian_mixture(0.0, dim=dim, length_scale=length_scale, drift=drift)


def user_supplied(B_L: Callable, B_N: Callable, dim: int = 2,
                  length_scale: float = 1.0, drift: float = 0.5,
                  fd_step: float | None = None) -> CorrelationModel:
    """Wrap an arbitrary (B_L, B_N) pair with finite-difference derivatives.

    Derivatives use 5-point central differences with step ``1e-4 * l`` by
    default, accurate to far better than the 1e-5 relative level any
    downstream consumer needs.  Validity of the pair as a covariance is NOT
    implied; run ``validate_psd`` on a representative point set.
    """
    h = fd_step if fd_step is not None else 1e-4 * length_scale

    def d1(B):
        def deriv(r, B=B):
            r = np.asarray(r, dtype=float)
            return (B(r - 2*h) - 8*B(r - h) + 8*B(r + h) - B(r + 2*h)) / (12*h)
        return deriv

    def d2(B):
        def deriv(r, B=B):
            r = np.asarray(r, dtype=float)
            return (-B(r - 2*h) + 16*B(r - h) - 30*B(r)
                    + 16*B(r + h) - B(r + 2*h)) / (12*h*h)
        return deriv

    d2L, d2N = d2(B_L), d2(B_N)
    beta_L = float(-d2L(2 * h))   # evaluated just off zero: B may only be
    beta_N = float(-d2N(2 * h))   # defined for r >= 0, stencils need r-2h >= 0
    switch = SERIES_SWITCH * length_scale

    def decay(B, beta):
        def f(r, B=B, beta=beta):
            r = np.asarray(r, dtype=float)
            r2 = np.square(r)
            direct = np.divide(1.0 - B(r), r2, out=np.zeros_like(r2),
                               where=r2 > 0)
            return np.where(r < switch, beta / 2.0, direct)
        return f

    model = CorrelationModel(
        family="user", length_scale=length_scale, dim=dim, drift=drift,
        alpha=float("nan"),
        B_L=B_L, B_N=B_N, dB_L=d1(B_L), dB_N=d1(B_N), d2B_L=d2L, d2B_N=d2N,
        decay_L=decay(B_L, beta_L), decay_N=decay(B_N, beta_N),
        beta_L=beta_L, beta_N=beta_N,
    )
    return _validate_model(model)


def tensor_at(model: CorrelationModel, diffs: np.ndarray) -> np.ndarray:
    """Vectorized covariance tensor at an array of separation vectors.

    Parameters
    ----------
    diffs : ndarray, shape (..., d)
        Separation vectors; zeros allowed (identity block there).

    Returns
    -------
    ndarray, shape (..., d, d)
    """
    diffs = np.asarray(diffs, dtype=float)
    r2 = np.einsum("...i,...i->...", diffs, diffs)
    if model.fast_pair is not None:
        k1, k2 = model.fast_pair
        E = np.exp(r2 / (-2.0 * model.length_scale**2))
        coef = k1 * E
        BN = (1.0 - k2 * r2) * E
    else:
        r = np.sqrt(r2)
        BN = np.asarray(model.B_N(r), dtype=float)
        # (B_L - B_N)/r^2 has a finite limit; use the stable decays
        coef = model.decay_N(r) - model.decay_L(r)
    # outer product first: fl(d_i d_j) = fl(d_j d_i), so b is exactly symmetric
    out = (diffs[..., :, None] * diffs[..., None, :]) * coef[..., None, None]
    idx = np.arange(model.dim)
    out[..., idx, idx] += BN[..., None]
    zero = r2 == 0
    if np.any(zero):
        out[zero] = np.eye(model.dim)
    return out


def build_tensor(model: CorrelationModel, x) -> np.ndarray:
    """Covariance tensor ``b(x)`` at a single separation vector.

    Returns the identity at ``x = 0``; symmetric by construction.  Rejects
    non-finite input components.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise ValueError(f"expected a vector of length {model.dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite input components in {x}")
    return tensor_at(model, x)


def beta_coefficients(model: CorrelationModel) -> tuple[float, float]:
    """``(beta_L, beta_N)``, the negative second derivatives at zero."""
    return model.beta_L, model.beta_N


def tensor_derivatives(model: CorrelationModel, x) -> tuple[np.ndarray, np.ndarray]:
    """First and second Cartesian derivatives of the covariance tensor.

    Returns
    -------
    first : ndarray, shape (d, d, d)
        ``first[i, j, k] = d b_ij / d x_k``.
    second : ndarray, shape (d, d, d, d)
        ``second[i, j, k, l] = d^2 b_ij / (d x_k d x_l)``.

    At ``x = 0`` the analytic limits are used: the first derivatives vanish
    (b is even) and the second derivatives are built from ``beta_L, beta_N``.
    Evaluation at ``0 < |x| < 1e-10 l`` is rejected; the formula has a
    removable singularity that is numerically hostile there.
    """
    x = np.asarray(x, dtype=float)
    d = model.dim
    if x.shape != (d,):
        raise ValueError(f"expected a vector of length {d}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite input components in {x}")
    r = float(np.linalg.norm(x))
    eye = np.eye(d)
    if r == 0.0:
        first = np.zeros((d, d, d))
        bL, bN = model.beta_L, model.beta_N
        sym = np.einsum("ik,jl->ijkl", eye, eye) + np.einsum("il,jk->ijkl", eye, eye)
        second = 0.5 * (bN - bL) * sym - bN * np.einsum("ij,kl->ijkl", eye, eye)
        return first, second
    if r < SINGULAR_GUARD * model.length_scale:
        raise ValueError(
            f"|x| = {r:.3e} lies inside the singular guard "
            f"{SINGULAR_GUARD * model.length_scale:.3e}; use x = 0 exactly")

    u = x / r
    D = float(model.B_L(r) - model.B_N(r))
    dD = float(model.dB_L(r) - model.dB_N(r))
    d2D = float(model.d2B_L(r) - model.d2B_N(r))
    dBN = float(model.dB_N(r))
    d2BN = float(model.d2B_N(r))

    uu = np.outer(u, u)
    uuu = np.einsum("i,j,k->ijk", u, u, u)
    # T_ijk = delta_ik u_j + delta_jk u_i - 2 u_i u_j u_k
    T = (np.einsum("ik,j->ijk", eye, u) + np.einsum("jk,i->ijk", eye, u)
         - 2 * uuu)
    first = dD * uuu + (D / r) * T + dBN * np.einsum("ij,k->ijk", eye, u)

    # dU[i, l] = d u_i / d x_l = (delta_il - u_i u_l) / r
    dU = (eye - uu) / r
    d_uuu = (np.einsum("il,j,k->ijkl", dU, u, u)
             + np.einsum("jl,i,k->ijkl", dU, u, u)
             + np.einsum("kl,i,j->ijkl", dU, u, u))
    dT = (np.einsum("ik,jl->ijkl", eye, dU) + np.einsum("jk,il->ijkl", eye, dU)
          - 2 * d_uuu)
    second = (d2D * np.einsum("ijk,l->ijkl", uuu, u) + dD * d_uuu
              + (dD / r - D / r**2) * np.einsum("ijk,l->ijkl", T, u)
              + (D / r) * dT
              + d2BN * np.einsum("ij,k,l->ijkl", eye, u, u)
              + dBN * np.einsum("ij,kl->ijkl", eye, dU))
    return first, second


def sup_ratio_constants(model: CorrelationModel) -> PairwiseBound:
    """Constants of the pairwise exponential growth bound.

    The suprema of ``(1 - B(u)) / u^2`` are taken over a geometric grid
    ``u in [1e-4 l, 1e3 l]`` augmented with the analytic ``u -> 0`` limit
    ``beta / 2``; for the shipped families the ratio is decreasing, so the
    limit is the supremum and the grid is a verification.
    """
    u = np.geomspace(1e-4 * model.length_scale, 1e3 * model.length_scale, 4096)
    ratio_N = np.asarray(model.decay_N(u), dtype=float)
    ratio_L = np.asarray(model.decay_L(u), dtype=float)
    if not (np.all(np.isfinite(ratio_N)) and np.all(np.isfinite(ratio_L))):
        raise ValueError("non-finite sup ratio; correlation does not decay")
    a = max(float(ratio_N.max()), model.beta_N / 2.0)
    b_const = max(float(ratio_L.max()), model.beta_L / 2.0)
    return PairwiseBound(
        a=a, b_const=b_const, sigma=float(np.sqrt(2.0 * b_const)),
        lambda_bound=(model.dim - 1) * a - model.drift)


def validate_psd(model: CorrelationModel, points, tol: float = 1e-10) -> PsdReport:
    """Check positive semidefiniteness of the assembled block covariance.

    Assembles the ``n d x n d`` matrix ``[b(x_i - x_j)]`` over the given
    points and reports whether its minimum eigenvalue is ``>= -tol``.
    Always returns a verdict; never raises on an indefinite model.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = pts.shape
    if d != model.dim:
        raise ValueError(f"points must have dimension {model.dim}, got {d}")
    if n < 1:
        raise ValueError("need at least one point")
    diffs = pts[:, None, :] - pts[None, :, :]
    blocks = tensor_at(model, diffs)                       # (n, n, d, d)
    big = blocks.transpose(0, 2, 1, 3).reshape(n * d, n * d)
    big = 0.5 * (big + big.T)
    min_eig = float(scipy.linalg.eigvalsh(big, subset_by_index=[0, 0])[0])
    return PsdReport(ok=min_eig >= -tol, min_eigenvalue=min_eig,
                     n_points=n, tol=tol)
