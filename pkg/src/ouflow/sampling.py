"""Exact joint Gaussian sampling of field increments and their gradients.

The driving field has independent increments in time, so one simulation step
only ever needs a single joint Gaussian draw of ``dF`` (and optionally the
gradient increments ``dDF``) at the current evaluation points.  The draw is
exact: the full cross-covariance over the finite point set is assembled from
the covariance tensor and factorized, so there is no spatial discretization
error of any kind.

Covariance blocks (``h = x - y`` the separation, per unit time):

    F-F       cov(dF_i(x),   dF_j(y))   =  b_ij(h)
    F-grad    cov(dF_i(x),   dD_lF_j(y)) = -(d_l b_ij)(h)
    grad-grad cov(dD_kF_i(x), dD_lF_j(y)) = -(d_k d_l b_ij)(h)

The sign convention above is the module contract and is unit-tested against
central finite differences of the F-F blocks.

Factorization is a pivoted Cholesky: coincident or nearly coincident points
make the matrix (numerically) rank deficient, which is the physically
meaningful limit -- duplicated points receive duplicated samples.  A jitter
ladder 1e-12 .. 1e-8 (relative to the mean diagonal) is climbed before a
failure is declared.  For large point clouds a lazy variant evaluates kernel
columns on demand and stops at the numerical rank, which is dramatically
smaller than the matrix size for smooth kernels; the truncation tolerance
sits at the bottom of the jitter ladder, so both paths agree within the
documented numerical slack.

Reproducibility: all randomness flows through numpy's counter-based Philox
generator.  Replica streams derive from the root seed via
``SeedSequence(seed, spawn_key=(replica_index,))``; one draw always consumes
exactly ``m`` standard normals (``m`` = matrix size), independent of the
realized numerical rank, so streams stay aligned across jitter or rank
decisions.  Points are canonically ordered internally (lexicographic sort),
which makes the sampler exactly permutation-equivariant at fixed stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from ouflow.correlation import CorrelationModel, tensor_at, tensor_derivatives

__all__ = [
    "IncrementRequest",
    "IncrementSample",
    "CovarianceFactor",
    "assemble_covariance",
    "factorize_covariance",
    "increment_factor",
    "sample_increment",
    "replica_stream",
]

JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)
LAZY_TOL = 1e-10          # relative truncation of the lazy pivoted Cholesky
RNG_ALGORITHM = "Philox (numpy counter-based, 4x64-10)"


def replica_stream(seed: int, replica_index: int = 0) -> np.random.Generator:
    """Independent, reproducible stream for one replica.

    Stream derivation rule (documented contract):
    ``Generator(Philox(SeedSequence(seed, spawn_key=(replica_index,))))``.
    Distinct replica indices give statistically independent streams that can
    be consumed in parallel; a single stream must not be shared.
    """
    ss = np.random.SeedSequence(seed, spawn_key=(replica_index,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class IncrementRequest:
    """What to sample: field increments at ``points`` over a step ``dt``."""

    points: np.ndarray
    dt: float
    with_gradients: bool = False

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if not np.all(np.isfinite(pts)):
            raise ValueError("increment request contains non-finite points")
        if not (self.dt >= 0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be a finite nonnegative real, got {self.dt}")
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def size(self) -> int:
        n, d = self.points.shape
        return n * d * (1 + (d if self.with_gradients else 0))


@dataclass(frozen=True)
class IncrementSample:
    """One exact joint draw; ``dDF`` present iff gradients were requested."""

    dF: np.ndarray                 # (n, d)
    dDF: np.ndarray | None = None  # (n, d, d), dDF[p, i, k] = d_k F_i at point p


def assemble_covariance(model: CorrelationModel, request: IncrementRequest) -> np.ndarray:
    """Dense joint covariance of the requested increments.

    Layout: the first ``n*d`` rows/columns are the field increments in point
    order (point-major, component-minor); with gradients, the next ``n*d^2``
    are the gradient entries ``(point, i, k)`` flattened in C order.

    The matrix is ``dt`` times the unit-time covariance described in the
    module docstring.
    """
    pts = request.points
    n, d = pts.shape
    if d != model.dim:
        raise ValueError(f"points must have dimension {model.dim}, got {d}")
    diffs = pts[:, None, :] - pts[None, :, :]
    bb = tensor_at(model, diffs)                           # (n, n, d, d)
    nf = n * d
    m = request.size()
    cov = np.empty((m, m))
    cov[:nf, :nf] = bb.transpose(0, 2, 1, 3).reshape(nf, nf)
    if request.with_gradients:
        ng = n * d * d
        fg = np.empty((n, d, n, d, d))     # cov(F_i(x_p), d_l F_j(y_q))
        gg = np.empty((n, d, d, n, d, d))  # cov(d_k F_i(x_p), d_l F_j(y_q))
        for p in range(n):
            for q in range(n):
                first, second = tensor_derivatives(model, diffs[p, q])
                fg[p, :, q, :, :] = -first            # -(d_l b_ij)(h)
                gg[p, :, :, q, :, :] = -second.transpose(0, 2, 1, 3)
        cov[:nf, nf:] = fg.reshape(nf, ng)
        cov[nf:, :nf] = cov[:nf, nf:].T
        cov[nf:, nf:] = gg.reshape(ng, ng)
    cov *= request.dt
    return 0.5 * (cov + cov.T)


class CovarianceFactor:
    """Sampling-ready factorization ``cov ~ P L L^T P^T`` (rank revealing).

    Holds the permuted lower-triangular factor truncated at the numerical
    rank, plus the jitter rung that was needed.  ``sample`` consumes exactly
    ``m`` standard normals per draw regardless of rank.
    """

    def __init__(self, L: np.ndarray, piv: np.ndarray, rank: int, m: int,
                 jitter: float, unsort: np.ndarray | None = None):
        self._L = L[:, :rank]
        self._piv = piv
        self.rank = rank
        self.m = m
        self.jitter = jitter
        self._unsort = unsort

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw ``size`` joint samples (flat vectors of length ``m``)."""
        nsamp = 1 if size is None else size
        out = self.sample_from(rng.standard_normal((nsamp, self.m)))
        return out[0] if size is None else out

    def sample_from(self, z: np.ndarray) -> np.ndarray:
        """Map given standard normals (shape (..., m)) to joint samples."""
        out = np.zeros(z.shape)
        out[..., self._piv] = z[..., :self.rank] @ self._L.T
        if self._unsort is not None:
            out = out[..., self._unsort]
        return out


def factorize_covariance(cov: np.ndarray,
                         jitter_ladder=JITTER_LADDER) -> CovarianceFactor:
    """Pivoted Cholesky with a jitter ladder.

    Climbs the ladder until LAPACK's pivoted factorization succeeds; raises
    with the minimum eigenvalue in the message once the budget is exhausted.
    """
    m = cov.shape[0]
    scale = float(np.mean(np.diag(cov))) if m else 0.0
    if m == 0:
        raise ValueError("empty covariance")
    for jit in jitter_ladder:
        work = cov if jit == 0.0 else cov + (jit * scale) * np.eye(m)
        c, piv, rank, info = lapack.dpstrf(work, lower=1, tol=1e-14 * scale)
        if info < 0:
            raise RuntimeError(f"dpstrf failed with info={info}")
        L = np.tril(c)[:, :rank]
        piv0 = np.asarray(piv) - 1
        # rank-deficient PSD input is fine (duplicated points); an indefinite
        # one is not -- detect it through the diagonal of the residual
        diag_resid = np.diag(work)[piv0] - np.square(L).sum(axis=1)
        if diag_resid.min() >= -1e-8 * max(scale, 1e-300):
            return CovarianceFactor(L=L, piv=piv0, rank=rank, m=m, jitter=jit)
    min_eig = float(scipy.linalg.eigvalsh(cov, subset_by_index=[0, 0])[0])
    raise RuntimeError(
        f"covariance factorization failed beyond jitter budget "
        f"{jitter_ladder[-1]:g}; min eigenvalue {min_eig:.3e}")


def _pivoted_cholesky_lazy(colfn, diag: np.ndarray, tol: float,
                           max_rank: int | None = None):
    """Left-looking pivoted Cholesky with on-demand kernel columns.

    Only ever materializes the selected columns, so memory is O(m * rank).
    Stops when the largest remaining diagonal falls below ``tol`` (absolute,
    callers pass a relative tolerance times the diagonal scale).
    """
    m = diag.shape[0]
    if max_rank is None:
        max_rank = m
    dvec = diag.astype(float).copy()
    L = np.empty((m, min(max_rank, 256)), order="F")
    piv = []
    k = 0
    while k < max_rank:
        p = int(np.argmax(dvec))
        if dvec[p] <= tol:
            break
        col = np.asarray(colfn(p), dtype=float)
        if k:
            col = col - L[:, :k] @ L[p, :k]
        col /= np.sqrt(dvec[p])
        dvec -= col * col
        np.maximum(dvec, 0.0, out=dvec)
        if k >= L.shape[1]:
            grow = min(max_rank, 2 * L.shape[1])
            L = np.asfortranarray(np.concatenate(
                [L, np.empty((m, grow - L.shape[1]), order="F")], axis=1))
        L[:, k] = col
        piv.append(p)
        k += 1
    return L[:, :k], k


class LazyFieldFactor:
    """Rank-revealing factor of the F-F covariance for large point clouds.

    Same sampling contract as ``CovarianceFactor`` (consumes ``m`` normals
    per draw); the matrix is never materialized.  Points are canonically
    sorted so the factor is permutation-equivariant.
    """

    def __init__(self, model: CorrelationModel, points: np.ndarray, dt: float,
                 tol: float = LAZY_TOL, noise_scale: float = 1.0):
        pts = np.asarray(points, dtype=float)
        n, d = pts.shape
        order = np.lexsort(pts.T[::-1])
        inv = np.argsort(order)
        # entry-level permutation from sorted layout back to caller layout
        self._unsort = (inv[:, None] * d + np.arange(d)[None, :]).reshape(-1)
        X = pts[order]
        self.m = n * d
        self._amp = np.sqrt(dt) * noise_scale

        def colfn(p, X=X, model=model):
            j, comp = divmod(p, d)
            diff = X - X[j]
            blocks = tensor_at(model, diff)      # (n, d, d)
            return blocks[:, :, comp].reshape(-1)

        L, rank = _pivoted_cholesky_lazy(colfn, np.ones(self.m), tol)
        self._L = L
        self.rank = rank
        self.jitter = 0.0

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        nsamp = 1 if size is None else size
        out = self.sample_from(rng.standard_normal((nsamp, self.m)))
        return out[0] if size is None else out

    def sample_from(self, z: np.ndarray) -> np.ndarray:
        out = (z[..., :self.rank] @ self._L.T) * self._amp
        return out[..., self._unsort]


# Above this matrix size the dense path is not worth assembling; the lazy
# rank-revealing path takes over (F-F blocks only).
DENSE_SIZE_LIMIT = 4096


def increment_factor(model: CorrelationModel, request: IncrementRequest,
                     noise_scale: float = 1.0):
    """Factorization for a request, choosing the dense or lazy path.

    The dense path assembles the full matrix and uses LAPACK's pivoted
    Cholesky; the lazy path (large gradient-free requests) evaluates kernel
    columns on demand.  Both honor the same canonical point ordering.
    """
    pts = request.points
    order = np.lexsort(pts.T[::-1])
    if request.size() > DENSE_SIZE_LIMIT and not request.with_gradients:
        return LazyFieldFactor(model, pts, request.dt, noise_scale=noise_scale)
    sorted_req = IncrementRequest(points=pts[order], dt=request.dt,
                                  with_gradients=request.with_gradients)
    cov = assemble_covariance(model, sorted_req)
    if noise_scale != 1.0:
        cov = cov * noise_scale**2
    factor = factorize_covariance(cov)
    # map the sorted sample layout back to the caller's point order
    n, d = pts.shape
    nf = n * d
    unsort = np.empty(request.size(), dtype=np.intp)
    inv = np.argsort(order)
    blk = np.arange(d)
    for i in range(n):
        unsort[i * d: (i + 1) * d] = inv[i] * d + blk
    if request.with_gradients:
        blk2 = np.arange(d * d)
        for i in range(n):
            unsort[nf + i * d * d: nf + (i + 1) * d * d] = nf + inv[i] * d * d + blk2
    factor._unsort = unsort
    return factor


def sample_increment(factor, rng: np.random.Generator, n_points: int,
                     dim: int, with_gradients: bool = False) -> IncrementSample:
    """One exact draw from a prepared factorization.

    Bit-for-bit reproducible for a fixed platform given the stream state;
    the caller owns the stream exclusively.
    """
    flat = factor.sample(rng)
    nf = n_points * dim
    dF = flat[:nf].reshape(n_points, dim)
    dDF = None
    if with_gradients:
        dDF = flat[nf:].reshape(n_points, dim, dim)
    return IncrementSample(dF=dF, dDF=dDF)
