"""Shared numerical kernels.

Linear algebra on symmetric matrices, univariate and multivariate normal
cdf/log-pdf, truncated-normal sampling, and reproducible random streams.
Symmetric matrices are plain numpy arrays; symmetry and definiteness are
checked by the operations that require them, not assumed.

The multivariate cdf follows the separation-of-variables approach of Genz:
standardize, greedily reorder variables by increasing conditional probability,
then integrate over the unit cube with randomly shifted rank-1 lattice rules.
Dimensions 1 and 2 use closed forms instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular

from .errors import DimensionTooLarge, DomainError, NotPositiveDefinite, NotPSD

__all__ = [
    "INF_BOUND",
    "CdfResult",
    "RandomStream",
    "cholesky",
    "sqrt_psd",
    "spectral_norm",
    "norm_cdf",
    "norm_logcdf",
    "norm_pdf",
    "norm_quantile",
    "mvn_cdf",
    "mvn_logpdf",
    "sample_truncnorm",
]

# Sentinel for an infinite integration bound: any |bound| >= INF_BOUND / 2 is
# treated as infinite. Using the largest finite double keeps every array float64.
INF_BOUND = float(np.finfo(np.float64).max)

_LOG_2PI = math.log(2.0 * math.pi)

# First 16 primes; sqrt(prime) fractional parts generate the Richtmyer lattice.
_PRIMES = np.array([2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53],
                   dtype=np.float64)

_MAX_DIM = 12


@dataclass(frozen=True)
class CdfResult:
    """Outcome of a multivariate normal cdf evaluation.

    value is clipped to [0, 1]; error_estimate is 3x the standard error over
    the randomized lattice shifts (0 for closed-form paths); points_used counts
    integrand evaluations; converged is False when max_points was exhausted
    before error_estimate fell below the requested tolerance.
    """

    value: float
    error_estimate: float
    points_used: int
    converged: bool = True

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"cdf value {self.value} outside [0, 1]")
        if self.error_estimate < 0.0:
            raise ValueError("negative error estimate")


@dataclass
class RandomStream:
    """Reproducible, splittable random source.

    Wraps a counter-based Philox bit generator keyed by (seed, stream_id):
    identical keys reproduce identical draw sequences, distinct stream_ids give
    statistically independent streams from one seed. Draws advance internal
    state, so each concurrent task must own its stream.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        key = np.array([self.seed % (1 << 64), self.stream_id % (1 << 64)],
                       dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def standard_normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def child(self, tag: int) -> "RandomStream":
        """Independent stream derived from this one's identity and an integer tag."""
        mixed = (self.stream_id * 0x9E3779B97F4A7C15 + tag + 1) % (1 << 64)
        return RandomStream(self.seed, mixed)


def _require_square_symmetric(a: np.ndarray, atol: float = 0.0) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.abs(a - a.T) <= atol * (1.0 + np.abs(a).max(initial=0.0))):
        raise DomainError("matrix is not symmetric")
    return a


def cholesky(a: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == a.

    Raises NotPositiveDefinite when a pivot falls at or below
    dim * machine-epsilon * max-diagonal, mirroring the failure mode of the
    underlying LAPACK factorization with an explicit threshold.
    """
    a = _require_square_symmetric(a, atol=1e-12)
    n = a.shape[0]
    threshold = n * np.finfo(np.float64).eps * max(np.max(np.diag(a)), 0.0)
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("Cholesky factorization failed: matrix is not "
                                  "positive definite") from None
    if np.min(np.diag(lower)) ** 2 <= threshold:
        raise NotPositiveDefinite(
            f"pivot {np.min(np.diag(lower))**2:.3e} at or below threshold "
            f"{threshold:.3e}")
    return lower


def sqrt_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root B with B @ B == a.

    Computed by symmetric eigendecomposition; eigenvalues in
    [-1e-12 * spectral-radius, 0) are clamped to 0 as rounding noise. A more
    negative eigenvalue raises NotPSD.
    """
    a = _require_square_symmetric(a, atol=1e-12)
    w, v = np.linalg.eigh(a)
    radius = max(abs(w[0]), abs(w[-1]))
    if w[0] < -1e-12 * radius:
        raise NotPSD(f"eigenvalue {w[0]:.3e} below -1e-12 * spectral radius "
                     f"{radius:.3e}")
    w = np.clip(w, 0.0, None)
    root = (v * np.sqrt(w)) @ v.T
    return 0.5 * (root + root.T)


def spectral_norm(m: np.ndarray) -> float:
    """Largest singular value of a rectangular matrix."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DomainError(f"expected a 2-D array, got ndim {m.ndim}")
    if m.size == 0:
        return 0.0
    return float(np.linalg.svd(m, compute_uv=False)[0])


def norm_cdf(x) -> float | np.ndarray:
    """Standard normal cdf (vectorized)."""
    out = special.ndtr(x)
    return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out


def norm_logcdf(x) -> float | np.ndarray:
    """log of the standard normal cdf, accurate in the deep left tail."""
    out = special.log_ndtr(x)
    return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out


def norm_pdf(x) -> float | np.ndarray:
    """Standard normal density."""
    x = np.asarray(x, dtype=np.float64)
    out = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return float(out) if out.ndim == 0 else out


def norm_quantile(p) -> float | np.ndarray:
    """Standard normal quantile; requires p strictly inside (0, 1)."""
    arr = np.asarray(p, dtype=np.float64)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("quantile argument must lie strictly inside (0, 1)")
    out = special.ndtri(arr)
    return float(out) if arr.ndim == 0 else out


def mvn_logpdf(x, mean, cov) -> float:
    """Log density of N(mean, cov) at x, via Cholesky (no explicit inverse)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    n = x.shape[0]
    if mean.shape[0] != n or cov.shape != (n, n):
        raise DomainError("x, mean, and cov dimensions do not agree")
    lower = cholesky(cov)
    u = solve_triangular(lower, x - mean, lower=True, check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
    return float(-0.5 * (n * _LOG_2PI + logdet + u @ u))


# ---------------------------------------------------------------------------
# Bivariate normal cdf: Gauss-Legendre on the arcsin-path integral.
#
#   Phi2(h, k, rho) = Phi(h) Phi(k)
#       + (1/2pi) * int_0^arcsin(rho) exp(-(h^2 - 2 h k sin t + k^2)
#                                          / (2 cos^2 t)) dt
#
# The integrand is analytic for |rho| <= 0.925, where a fixed 24-point rule is
# exact to ~1e-15. Beyond that the integrand steepens near the endpoint, so an
# adaptive quadrature takes over; rho = +/-1 has exact limits.
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _bvn_cdf(h, k, rho: float):
    """P(X <= h, Y <= k) for standard bivariate normal, vectorized over h, k."""
    h = np.asarray(h, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if rho == 0.0:
        return special.ndtr(h) * special.ndtr(k)
    if rho >= 1.0:
        return special.ndtr(np.minimum(h, k))
    if rho <= -1.0:
        return np.clip(special.ndtr(h) + special.ndtr(k) - 1.0, 0.0, None)
    if abs(rho) <= 0.925:
        asr = math.asin(rho)
        theta = 0.5 * asr * (_GL_NODES + 1.0)  # nodes mapped to [0, asr]
        sin_t = np.sin(theta)
        cos2_t = 1.0 - sin_t * sin_t
        hh = h[..., None]
        kk = k[..., None]
        integrand = np.exp(-(hh * hh - 2.0 * hh * kk * sin_t + kk * kk)
                           / (2.0 * cos2_t))
        corr = (0.5 * asr) * (integrand @ _GL_WEIGHTS) / (2.0 * math.pi)
        return special.ndtr(h) * special.ndtr(k) + corr
    # steep-integrand fallback, element by element
    from scipy.integrate import quad

    def scalar(hi: float, ki: float) -> float:
        asr = math.asin(rho)

        def f(t: float) -> float:
            s = math.sin(t)
            return math.exp(-(hi * hi - 2.0 * hi * ki * s + ki * ki)
                            / (2.0 * (1.0 - s * s)))

        val, _ = quad(f, 0.0, asr, epsabs=1e-14, epsrel=1e-13, limit=200)
        return float(special.ndtr(hi) * special.ndtr(ki) + val / (2.0 * math.pi))

    out = np.empty(np.broadcast(h, k).shape)
    flat = out.reshape(-1)
    hb, kb = np.broadcast_arrays(h, k)
    for i, (hi, ki) in enumerate(zip(hb.reshape(-1), kb.reshape(-1))):
        flat[i] = scalar(float(hi), float(ki))
    return np.clip(out, 0.0, 1.0) if out.ndim else float(np.clip(out, 0.0, 1.0))


def _tvn_cdf(b: np.ndarray, corr: np.ndarray) -> float:
    """Trivariate standard normal cdf via Plackett's identity.

    Starting from a correlation matrix with the two off-path entries zeroed
    (where the probability splits as a bivariate times a univariate), the two
    remaining correlations are moved linearly to their targets and the exact
    derivative along the path is integrated over t in [0, 1]. The pair kept
    fixed is the one with the largest |correlation| so the moving entries stay
    strictly inside (-1, 1). Deterministic, absolute error ~1e-12 for
    |correlation| <= 0.9 (adaptive fallback beyond).
    """
    r12, r13, r23 = abs(corr[0, 1]), abs(corr[0, 2]), abs(corr[1, 2])
    if r12 >= r13 and r12 >= r23:
        order = (0, 1, 2)
    elif r13 >= r23:
        order = (0, 2, 1)
    else:
        order = (1, 2, 0)
    b1, b2, b3 = (float(b[i]) for i in order)
    r21 = float(corr[order[0], order[1]])
    r31 = float(corr[order[0], order[2]])
    r32 = float(corr[order[1], order[2]])

    base = float(_bvn_cdf(b1, b2, r21)) * float(special.ndtr(b3))

    def integrand(t):
        t = np.asarray(t, dtype=np.float64)
        p31 = t * r31
        p32 = t * r32
        total = np.zeros_like(t)
        # moving rho_13: bivariate density at (b1, b3), conditional on X2
        den = 1.0 - p31 * p31
        phi2 = np.exp(-(b1 * b1 - 2.0 * p31 * b1 * b3 + b3 * b3) / (2.0 * den)) \
            / (2.0 * math.pi * np.sqrt(den))
        beta_a = (r21 - p32 * p31) / den
        beta_b = (p32 - r21 * p31) / den
        mu = beta_a * b1 + beta_b * b3
        s2 = np.maximum(1.0 - r21 * beta_a - p32 * beta_b, 1e-24)
        total += r31 * phi2 * special.ndtr((b2 - mu) / np.sqrt(s2))
        # moving rho_23: bivariate density at (b2, b3), conditional on X1
        den = 1.0 - p32 * p32
        phi2 = np.exp(-(b2 * b2 - 2.0 * p32 * b2 * b3 + b3 * b3) / (2.0 * den)) \
            / (2.0 * math.pi * np.sqrt(den))
        beta_a = (r21 - p31 * p32) / den
        beta_b = (p31 - r21 * p32) / den
        mu = beta_a * b2 + beta_b * b3
        s2 = np.maximum(1.0 - r21 * beta_a - p31 * beta_b, 1e-24)
        total += r32 * phi2 * special.ndtr((b1 - mu) / np.sqrt(s2))
        return total

    if max(abs(r21), abs(r31), abs(r32)) <= 0.9:
        t_nodes = 0.5 * (_GL_NODES + 1.0)
        val = base + 0.5 * float(integrand(t_nodes) @ _GL_WEIGHTS)
    else:
        from scipy.integrate import quad

        corr_path, _ = quad(lambda t: float(integrand(t)), 0.0, 1.0,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
        val = base + corr_path
    return min(max(val, 0.0), 1.0)


def _chol_reorder(corr: np.ndarray, b: np.ndarray):
    """Cholesky factor and bounds permuted for the separation-of-variables rule.

    Greedy ordering: at each stage pick the remaining variable with the
    smallest conditional probability, conditioning previous variables at their
    truncated means E[z | z <= a] = -phi(a)/Phi(a). Returns (lower, bperm).
    """
    n = corr.shape[0]
    c = corr.copy()
    bp = b.copy()
    y = np.zeros(n)
    tiny = 1e-300
    for k in range(n):
        best, best_prob = k, np.inf
        for i in range(k, n):
            denom2 = c[i, i] - np.dot(c[i, :k], c[i, :k])
            denom = math.sqrt(max(denom2, 1e-14))
            a = (bp[i] - np.dot(c[i, :k], y[:k])) / denom
            prob = special.ndtr(a)
            if prob < best_prob:
                best, best_prob = i, prob
        if best != k:
            c[[k, best], :] = c[[best, k], :]
            c[:, [k, best]] = c[:, [best, k]]
            bp[k], bp[best] = bp[best], bp[k]
        pivot2 = c[k, k] - np.dot(c[k, :k], c[k, :k])
        if pivot2 <= n * np.finfo(np.float64).eps:
            raise NotPositiveDefinite(
                f"correlation matrix is numerically singular at pivot {k}")
        pivot = math.sqrt(pivot2)
        c[k, k] = pivot
        for i in range(k + 1, n):
            c[i, k] = (c[i, k] - np.dot(c[i, :k], c[k, :k])) / pivot
        a = (bp[k] - np.dot(c[k, :k], y[:k])) / pivot
        phi_a = math.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
        y[k] = -phi_a / max(special.ndtr(a), tiny)
    return np.tril(c), bp


def _sov_integrand(lower: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Genz integrand over the unit cube, vectorized over the points in w.

    w has shape (npts, dim-1); returns shape (npts,).
    """
    npts = w.shape[0]
    dim = b.shape[0]
    eps = 1e-15
    e = np.full(npts, special.ndtr(b[0] / lower[0, 0]))
    prod = e.copy()
    z = np.empty((npts, dim - 1))
    for i in range(1, dim):
        arg = np.clip(e * w[:, i - 1], eps, 1.0 - eps)
        z[:, i - 1] = special.ndtri(arg)
        center = z[:, :i] @ lower[i, :i]
        e = special.ndtr((b[i] - center) / lower[i, i])
        prod *= e
    return prod


def mvn_cdf(upper, cov, tol: float = 1e-7, max_points: int = 20_000_000,
            rng: RandomStream | None = None, *, _force_qmc: bool = False) -> CdfResult:
    """P(Z <= upper) for Z ~ N(0, cov).

    Bounds at +/-INF_BOUND (or beyond half of it) are treated as infinite:
    +infinite coordinates are dropped analytically, any -infinite coordinate
    gives probability 0. Dimensions 1-3 after dropping use closed forms or
    deterministic quadrature; higher dimensions (up to 12) use randomized
    lattice integration, extending the same shifted point sets until
    error_estimate (3x the standard error across shifts) falls to tol or the
    evaluation budget max_points is exhausted, in which case the best value is
    returned with converged=False.

    When rng is omitted a fixed internal stream makes the result deterministic.
    _force_qmc routes dimension 3 through the lattice integrator, for
    cross-validation of the two paths.
    """
    upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    n = upper.shape[0]
    if cov.shape != (n, n):
        raise DomainError(f"cov shape {cov.shape} does not match bound length {n}")
    _require_square_symmetric(cov, atol=1e-12)
    if n > _MAX_DIM:
        raise DimensionTooLarge(f"dimension {n} exceeds the supported cap {_MAX_DIM}")
    if tol <= 0.0:
        raise DomainError("tol must be positive")

    half_inf = 0.5 * INF_BOUND
    if np.any(upper <= -half_inf):
        return CdfResult(0.0, 0.0, 0)
    finite = upper < half_inf
    if not np.all(finite):
        idx = np.where(finite)[0]
        if idx.size == 0:
            return CdfResult(1.0, 0.0, 0)
        upper = upper[idx]
        cov = cov[np.ix_(idx, idx)]
        n = idx.size

    sd = np.sqrt(np.diag(cov))
    if np.any(sd <= 0.0):
        raise NotPositiveDefinite("covariance has a non-positive diagonal entry")
    b = upper / sd
    corr = cov / np.outer(sd, sd)
    np.fill_diagonal(corr, 1.0)

    if n == 1:
        return CdfResult(float(special.ndtr(b[0])), 1e-16, 0)
    if n in (2, 3):
        try:
            np.linalg.cholesky(corr)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite("covariance matrix is not positive "
                                      "definite") from None
    if n == 2:
        val = float(_bvn_cdf(b[0], b[1], float(corr[0, 1])))
        return CdfResult(min(max(val, 0.0), 1.0), 5e-13, 0)
    if n == 3 and not _force_qmc:
        return CdfResult(_tvn_cdf(b, corr), 5e-12, 2 * _GL_NODES.size)

    lower, bp = _chol_reorder(corr, b)
    if rng is None:
        rng = RandomStream(seed=1608637542, stream_id=n)
    q = np.mod(np.sqrt(_PRIMES[: n - 1]), 1.0)

    n_shifts = 12
    shifts = rng.uniform(size=(n_shifts, n - 1))
    sums = np.zeros(n_shifts)
    count = 0  # lattice points accumulated per shift
    npts = 1 << 11
    while True:
        k = np.arange(count + 1, count + npts + 1, dtype=np.float64)[:, None]
        base = np.mod(k * q, 1.0)  # (npts, n-1)
        for s in range(n_shifts):
            w = np.abs(2.0 * np.mod(base + shifts[s], 1.0) - 1.0)
            sums[s] += float(np.sum(_sov_integrand(lower, bp, w)))
        count += npts
        means = sums / count
        value = float(np.mean(means))
        err = 3.0 * float(np.std(means, ddof=1)) / math.sqrt(n_shifts)
        total = n_shifts * count
        if err <= tol:
            return CdfResult(min(max(value, 0.0), 1.0), err, total)
        if n_shifts * (count + count) > max_points:
            return CdfResult(min(max(value, 0.0), 1.0), err, total, converged=False)
        npts = count  # double the accumulated points each round


def _truncnorm_standard(a: np.ndarray, rng: RandomStream) -> np.ndarray:
    """Draws from the standard normal truncated to [a_i, inf), vectorized.

    Exact inverse-cdf, split to keep the quantile argument well conditioned:
    below the median, u on (Phi(a), 1) directly; above, map a uniform onto
    the complementary tail, x = -ndtri(U * Phi(-a)), so no 1 - Phi
    cancellation occurs however deep the truncation. One uniform per draw.
    """
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    u = rng.uniform(size=a.shape)

    mild = a <= 0.0
    if np.any(mild):
        am = a[mild]
        lo = special.ndtr(am)
        v = lo + u[mild] * (1.0 - lo)
        out[mild] = special.ndtri(np.clip(v, 1e-300, 1.0 - 1e-16))

    hard = ~mild
    if np.any(hard):
        q = special.ndtr(-a[hard])  # tail mass beyond the bound
        out[hard] = -special.ndtri(np.maximum((1.0 - u[hard]) * q, 1e-300))
    return out


def sample_truncnorm(mean, sd, lower, rng: RandomStream):
    """Draw from N(mean, sd^2) truncated to [lower, inf).

    Scalar arguments give a float; array arguments broadcast and give an
    array. A lower bound at or below -INF_BOUND/2 means no truncation.
    """
    mean = np.asarray(mean, dtype=np.float64)
    sd = np.asarray(sd, dtype=np.float64)
    lower = np.asarray(lower, dtype=np.float64)
    if np.any(sd <= 0.0):
        raise DomainError("sd must be positive")
    mean_b, sd_b, lower_b = np.broadcast_arrays(mean, sd, lower)
    scalar = mean_b.ndim == 0
    mean_b = np.atleast_1d(mean_b).astype(np.float64)
    sd_b = np.atleast_1d(sd_b).astype(np.float64)
    lower_b = np.atleast_1d(lower_b).astype(np.float64)

    a = (lower_b - mean_b) / sd_b
    a = np.where(lower_b <= -0.5 * INF_BOUND, -np.inf, a)
    z = np.empty_like(a)
    free = ~np.isfinite(a)
    if np.any(free):
        z[free] = rng.standard_normal(int(np.count_nonzero(free)))
    if np.any(~free):
        z[~free] = _truncnorm_standard(a[~free], rng)
    x = mean_b + sd_b * z
    x = np.where(np.isfinite(a), np.maximum(x, lower_b), x)
    return float(x[0]) if scalar else x
