"""Banded covariance estimation with hierarchical penalties on subdiagonals.

Subdiagonal m (1 <= m <= p-1) holds every entry with |i - j| = m, both
triangles, so it has 2 (p - m) entries. Banding is the hierarchy
s_1 -> s_2 -> ... -> s_{p-1}: a subdiagonal may be nonzero only if every
subdiagonal closer to the diagonal is. The diagonal is never penalized.

Each estimator is the prox of the sample covariance, so it reduces to one
scale per subdiagonal: ``sigma_hat = S * toeplitz([1, t_1, ..., t_{p-1}])``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import eigvalsh, toeplitz

from . import _kernels
from ._kernels import TIE_RTOL
from .prox_gl import MglWeights, mgl_weights
from .solvers import ConvergenceWarning

ESTIMATORS = ("gl", "mgl", "log")
# stopping rule for the repeated mGL sweeps: relative duality gap and sweep cap
MGL_TOL = 1e-7
MGL_MAX_PASSES = 5_000


@dataclass
class CovEstimate:
    """A banded covariance estimate.

    Attributes
    ----------
    sigma_hat : ndarray
    bandwidth : int
        Largest lag with a nonzero entry (0 if diagonal).
    lam : float
    scales : ndarray
        Multiplier applied to each subdiagonal 1..p-1.
    knots : ndarray or None
        LOG only: knot lags.
    """

    sigma_hat: np.ndarray
    bandwidth: int
    lam: float
    scales: np.ndarray
    knots: Optional[np.ndarray] = None


def check_symmetric(S, rtol=1e-12):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    if S.size and np.max(np.abs(S - S.T)) > rtol * scale:
        raise ValueError("matrix is not symmetric")
    return S


class SubdiagonalView:
    """Map between a p x p matrix and its stacked off-diagonal entries.

    The vector lists subdiagonal 1, then 2, and so on; within subdiagonal m
    the upper-triangle entries come first, then the lower ones.
    """

    def __init__(self, p):
        if p < 1:
            raise ValueError("p must be positive")
        self.p = int(p)
        self.lags = np.arange(1, self.p)
        self.sizes = 2 * (self.p - self.lags)

    @property
    def cumulative_sizes(self):
        return np.cumsum(self.sizes)

    def vectorize(self, S):
        S = np.asarray(S, dtype=float)
        parts = []
        for m in self.lags:
            parts.append(np.diagonal(S, m))
            parts.append(np.diagonal(S, -m))
        return np.concatenate(parts) if parts else np.empty(0)

    def devectorize(self, v, diagonal=None):
        out = np.zeros((self.p, self.p))
        if diagonal is not None:
            out[np.diag_indices(self.p)] = diagonal
        pos = 0
        idx = np.arange(self.p)
        for m in self.lags:
            k = self.p - m
            out[idx[:k], idx[:k] + m] = v[pos:pos + k]
            out[idx[:k] + m, idx[:k]] = v[pos + k:pos + 2 * k]
            pos += 2 * k
        return out

    def sq_norms(self, S):
        """Squared Frobenius norm of each subdiagonal, both triangles."""
        S = np.asarray(S, dtype=float)
        return np.array([np.sum(np.diagonal(S, m) ** 2)
                         + np.sum(np.diagonal(S, -m) ** 2) for m in self.lags])


def sample_covariance(data):
    """Sample covariance with divisor n."""
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be an n x p matrix")
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two observations")
    Xc = X - X.mean(axis=0)
    S = (Xc.T @ Xc) / n
    return 0.5 * (S + S.T)


def _scales(z, p, estimator, lam, mw=None, mgl_passes=None):
    """Per-subdiagonal scales of an estimator from squared norms ``z``.

    ``mgl_passes=1`` runs the single mGL sweep, whose all-zero output is
    exact (used for lambda_max).
    """
    sizes = 2.0 * (p - np.arange(1, p))
    knots = None
    if estimator == "log":
        w2 = np.cumsum(sizes)
        knots, fvals, _l, _f = _kernels.log_path_knots(z, w2, lam, TIE_RTOL)
        t = _kernels.knot_scales(z.size, knots, fvals, lam)
    elif estimator == "gl":
        t, _a = _kernels.gl_path_scales(z, np.sqrt(sizes), lam)
    elif estimator == "mgl":
        if mw is None:
            mw = mgl_weights(sizes)
        if lam == 0.0:
            t = np.ones(z.size)
        else:
            cap = MGL_MAX_PASSES if mgl_passes is None else mgl_passes
            t, _v, _n, ok = _kernels.mgl_path_scales(z, mw.table, lam, 200,
                                                     MGL_TOL, cap)
            if not ok and mgl_passes is None:
                warnings.warn(f"mGL sweeps hit the cap of {cap} at lambda={lam:g}",
                              ConvergenceWarning, stacklevel=3)
    else:
        raise ValueError(f"unknown estimator {estimator!r}; use one of {ESTIMATORS}")
    return t, knots


def _band(t):
    nz = np.flatnonzero(t)
    return int(nz[-1] + 1) if nz.size else 0


def estimate(S, lam, estimator="log", mw: Optional[MglWeights] = None):
    """Banded estimate of ``S`` with the named penalty ("gl", "mgl", "log")."""
    S = check_symmetric(S)
    lam = float(lam)
    if not lam >= 0 or not np.isfinite(lam):
        raise ValueError("lam must be a finite nonnegative number")
    p = S.shape[0]
    if p == 1:
        return CovEstimate(S.copy(), 0, lam, np.empty(0))
    z = SubdiagonalView(p).sq_norms(S)
    t, knots = _scales(z, p, estimator, lam, mw)
    sigma = S * toeplitz(np.concatenate([[1.0], t]))
    return CovEstimate(sigma, _band(t), lam, t, knots)


def estimate_log(S, lam):
    """LOG estimator: prefix groups s_{1:m} weighted by sqrt(|s_{1:m}|)."""
    return estimate(S, lam, "log")


def estimate_gl(S, lam):
    """GL estimator: suffix groups s_{l:p-1} weighted by sqrt(|s_l|)."""
    return estimate(S, lam, "gl")


def estimate_mgl(S, lam, mw: Optional[MglWeights] = None):
    """mGL estimator: weight sqrt(|s_l|) / (m - l + 1) on s_m in group l."""
    return estimate(S, lam, "mgl", mw)


def bandwidth(est):
    """Largest m >= 1 with a nonzero entry on subdiagonal m, else 0."""
    A = np.asarray(est, dtype=float)
    p = A.shape[0]
    for m in range(p - 1, 0, -1):
        if np.any(np.diagonal(A, m) != 0) or np.any(np.diagonal(A, -m) != 0):
            return m
    return 0


def gen_moving_average(p, K):
    """Toeplitz matrix with first column (1, (K-1)/K, ..., 1/K, 0, ..., 0).

    Lag m carries (K - m) / K for m < K, so the nonzero band reaches lag
    K - 1. Requires 2 <= K <= p.
    """
    p, K = int(p), int(K)
    if not 2 <= K <= p:
        raise ValueError(f"need 2 <= K <= p, got K={K}, p={p}")
    col = np.zeros(p)
    col[:K] = (K - np.arange(K)) / K
    return toeplitz(col)


def gen_stair(p, K):
    """Stair pattern shifted to have minimum eigenvalue at least 0.01.

    The first column repeats 1, 0.8, 0.6, 0.4, 0.2 in runs of K/5 followed
    by zeros, so the band reaches lag K - 1. Requires K divisible by 5 and
    K <= p.
    """
    p, K = int(p), int(K)
    if K < 5 or K % 5 != 0:
        raise ValueError(f"K must be a positive multiple of 5, got {K}")
    if K > p:
        raise ValueError(f"need K <= p, got K={K}, p={p}")
    col = np.zeros(p)
    col[:K] = np.repeat([1.0, 0.8, 0.6, 0.4, 0.2], K // 5)
    delta = toeplitz(col)
    shift = max(0.01 - min_eigenvalue(delta), 0.0)
    return delta + shift * np.eye(p)


def sample_gaussian(sigma, n, seed):
    """``n`` draws from N(0, sigma), deterministic in ``seed``.

    Uses a Cholesky factor; if that fails, ``1e-10 * trace / p`` is added to
    the diagonal once before giving up.
    """
    sigma = check_symmetric(sigma)
    p = sigma.shape[0]
    rng = np.random.default_rng(seed)
    if not np.any(sigma):
        return np.zeros((int(n), p))
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * np.trace(sigma) / p
        try:
            L = np.linalg.cholesky(sigma + jitter * np.eye(p))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(
                "covariance is not positive semidefinite") from exc
    return rng.standard_normal((int(n), p)) @ L.T


def mse(estimates, sigma_star):
    """Mean over estimates of ``||est - sigma_star||_F^2 / p``."""
    estimates = list(estimates)
    if not estimates:
        raise ValueError("need at least one estimate")
    sigma_star = np.asarray(sigma_star, dtype=float)
    p = sigma_star.shape[0]
    vals = []
    for e in estimates:
        e = np.asarray(getattr(e, "sigma_hat", e), dtype=float)
        if e.shape != sigma_star.shape:
            raise ValueError("estimate and target shapes differ")
        vals.append(np.sum((e - sigma_star) ** 2) / p)
    return float(np.mean(vals))


def lambda_best(lams, mses):
    """Grid point with the smallest MSE; ties go to the larger lambda."""
    lams = np.asarray(lams, dtype=float)
    mses = np.asarray(mses, dtype=float)
    if lams.size == 0 or lams.shape != mses.shape:
        raise ValueError("need matching non-empty lambda and MSE arrays")
    best = np.min(mses)
    return float(np.max(lams[mses == best]))


def min_eigenvalue(sigma):
    """Smallest eigenvalue of a symmetric matrix."""
    sigma = np.asarray(sigma, dtype=float)
    return float(eigvalsh(sigma, subset_by_index=[0, 0])[0])


def is_psd(sigma):
    """True when the smallest eigenvalue is at least ``-1e-10 ||sigma||_F``."""
    sigma = np.asarray(sigma, dtype=float)
    return min_eigenvalue(sigma) >= -1e-10 * np.linalg.norm(sigma)


def lambda_theory(p, n, x=2.0):
    """x * sqrt(log p / n)."""
    return float(x * np.sqrt(np.log(p) / n))


def lambda_max(S, estimator="log", rtol=1e-10):
    """Smallest lambda at which the estimate is diagonal (found by bisection).

    For "mgl" the bisection tests the single sweep, whose all-zero output
    is certified, so the value may sit slightly above the exact threshold.
    """
    S = check_symmetric(S)
    p = S.shape[0]
    if p == 1:
        return 0.0
    return _lambda_max_z(SubdiagonalView(p).sq_norms(S), p, estimator, rtol)


def _lambda_max_z(z, p, estimator, rtol=1e-10):
    if not np.any(z):
        return 0.0
    mw = mgl_weights(2 * (p - np.arange(1, p))) if estimator == "mgl" else None

    def band(lam):
        return _band(_scales(z, p, estimator, lam, mw, mgl_passes=1)[0])

    lo, hi = 0.0, max(1.0, float(np.sqrt(z.sum())))
    while band(hi) > 0:
        lo, hi = hi, 2.0 * hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if band(mid) > 0:
            lo = mid
        else:
            hi = mid
    return hi


def lambda_grid(S, estimator="log", n_lambda=50, ratio=1e-4):
    """``n_lambda`` log-spaced values from ``ratio * lambda_max`` to lambda_max."""
    top = lambda_max(S, estimator)
    if top == 0.0:
        raise ValueError("matrix is already diagonal; no grid to build")
    return np.geomspace(ratio * top, top, int(n_lambda))


class ReplicateStats:
    """Per-subdiagonal sufficient statistics of one sample covariance.

    Lets the Frobenius error of any scaled estimate be computed without
    forming the matrix.
    """

    def __init__(self, S, sigma_star):
        S = np.asarray(S, dtype=float)
        T = np.asarray(sigma_star, dtype=float)
        self.p = S.shape[0]
        zs, cross, zt = _kernels.subdiagonal_stats(S, T)
        self.diag_err = zs[0] - 2.0 * cross[0] + zt[0]
        self.z = zs[1:]
        self.cross = cross[1:]
        self.zt = zt[1:]

    def scales(self, estimator, lam, mw=None):
        return _scales(self.z, self.p, estimator, float(lam), mw)[0]

    def sq_error(self, t):
        """``||S * toeplitz([1, t]) - sigma_star||_F^2``."""
        return float(self.diag_err + np.sum(t * t * self.z - 2.0 * t * self.cross
                                            + self.zt))
