"""Multivariate log-skewed distribution families.

Two related families built from a normal kernel and a normal-cdf skewing
factor:

* the canonical family with an n x m skewness matrix Delta (valid iff its
  spectral norm is below 1), its exp-transform supported on the positive
  orthant, and the location-scale extension (mu, Sigma, Delta);
* the unified family parameterized by (eta, gamma, omega_bar, Omega_star),
  whose exp-transform contains the canonical one as the special case
  eta = 0, gamma = 0, omega_bar = 1, Omega_star = [[I_m, Delta'], [Delta, I_n]].

Densities, cdf, mixed moments, shape coefficients, marginal and conditional
laws, independence structure, and exact sampling through the stochastic
representation  Z = mu + Sigma^{1/2}(Delta |D| + (I - Delta Delta')^{1/2} V).
All matrix square roots are the symmetric PSD ones, so densities, cdf, and
sampler agree with each other exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import numerics
from .errors import (
    BadPartition,
    DomainError,
    InvalidSkewness,
    NotBlockDiagonal,
    NotPositiveDefinite,
)
from .numerics import CdfResult, RandomStream, cholesky, mvn_cdf, spectral_norm, sqrt_psd

__all__ = [
    "SkewnessMatrix",
    "LcfusnParams",
    "SunParams",
    "MomentOrder",
    "validate",
    "delta_from_lambda",
    "lcfusn_logpdf",
    "cfusn_logpdf",
    "lcfusn_cdf",
    "mixed_moment",
    "shape_coefficients",
    "marginal",
    "conditional_logpdf",
    "conditional_sun_params",
    "independence_partition",
    "lsun_logpdf",
    "sample",
]

_LOG_2PI = math.log(2.0 * math.pi)

# margin under the strict spectral-norm bound; prevents downstream Cholesky
# failures at the boundary
_VALIDITY_MARGIN = 1e-10


@dataclass(frozen=True)
class SkewnessMatrix:
    """The n x m skewness matrix, validated so that I - Delta Delta' and
    I - Delta' Delta are both positive definite."""

    delta: np.ndarray

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.delta, dtype=np.float64))
        object.__setattr__(self, "delta", d)
        norm = spectral_norm(d)
        if norm > 1.0 - _VALIDITY_MARGIN:
            raise InvalidSkewness(norm)

    @property
    def n(self) -> int:
        return self.delta.shape[0]

    @property
    def m(self) -> int:
        return self.delta.shape[1]

    @classmethod
    def parsimonious(cls, delta: float, n: int, m: int) -> "SkewnessMatrix":
        """The single-parameter form delta * ones(n, m)."""
        return cls(float(delta) * np.ones((n, m)))


def validate(delta) -> SkewnessMatrix:
    """Validate a raw n x m matrix as a skewness matrix.

    Accepted iff spectral_norm(delta) <= 1 - 1e-10; for the parsimonious form
    delta * ones(n, m) this is |delta| < 1/sqrt(n m) - 1e-10.
    """
    if isinstance(delta, SkewnessMatrix):
        return delta
    return SkewnessMatrix(np.atleast_2d(np.asarray(delta, dtype=np.float64)))


def delta_from_lambda(lam) -> SkewnessMatrix:
    """Map an unconstrained n x m matrix to a valid skewness matrix via
    Delta = Lambda (I_m + Lambda' Lambda)^{-1/2}. Smooth and injective; the
    image always satisfies the validity constraint."""
    lam = np.atleast_2d(np.asarray(lam, dtype=np.float64))
    m = lam.shape[1]
    root = sqrt_psd(np.eye(m) + lam.T @ lam)
    return SkewnessMatrix(lam @ np.linalg.inv(root))


@dataclass(frozen=True)
class LcfusnParams:
    """Location mu, scale Sigma (symmetric positive definite), and skewness.

    The standard family is the special case mu = 0, Sigma = I. Derived
    factorizations are cached lazily; instances are immutable.
    """

    mu: np.ndarray
    sigma: np.ndarray
    delta: SkewnessMatrix
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        delta = validate(self.delta)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "delta", delta)
        n = mu.shape[0]
        if sigma.shape != (n, n):
            raise DomainError(f"sigma shape {sigma.shape} does not match "
                              f"location dimension {n}")
        if delta.n != n:
            raise DomainError(f"skewness has {delta.n} rows, expected {n}")
        cholesky(sigma)  # positive definiteness check

    @property
    def n(self) -> int:
        return self.mu.shape[0]

    @property
    def m(self) -> int:
        return self.delta.m

    @property
    def is_standard(self) -> bool:
        return bool(np.all(self.mu == 0.0) and np.array_equal(self.sigma, np.eye(self.n)))

    @classmethod
    def standard(cls, delta) -> "LcfusnParams":
        d = validate(delta)
        return cls(np.zeros(d.n), np.eye(d.n), d)

    # cached factorizations -------------------------------------------------

    def _cached(self, key: str, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    @property
    def sigma_sqrt(self) -> np.ndarray:
        return self._cached("sigma_sqrt", lambda: sqrt_psd(self.sigma))

    @property
    def sigma_isqrt(self) -> np.ndarray:
        return self._cached("sigma_isqrt", lambda: np.linalg.inv(self.sigma_sqrt))

    @property
    def logdet_sigma(self) -> float:
        def build():
            lower = cholesky(self.sigma)
            return 2.0 * float(np.sum(np.log(np.diag(lower))))
        return self._cached("logdet_sigma", build)

    @property
    def skew_cov(self) -> np.ndarray:
        """I_m - Delta' Delta, the covariance of the skewing cdf factor."""
        def build():
            d = self.delta.delta
            return np.eye(self.m) - d.T @ d
        return self._cached("skew_cov", build)


@dataclass(frozen=True)
class SunParams:
    """Parameter block (eta, gamma, omega_bar, Omega_star) of the unified
    family.

    Omega_star is (n+m) x (n+m), partitioned as [[Gamma, Delta'], [Delta,
    Omega_bar]] with Gamma the m x m truncation block, Delta the n x m
    cross block, and Omega_bar the n x n correlation block (unit diagonal
    required there; Gamma's diagonal may fall below 1, as happens for
    conditional laws). The whole matrix must be symmetric positive definite.
    """

    eta: np.ndarray
    gamma: np.ndarray
    omega_bar: np.ndarray
    omega_star: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        eta = np.atleast_1d(np.asarray(self.eta, dtype=np.float64))
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=np.float64))
        omega_bar = np.atleast_1d(np.asarray(self.omega_bar, dtype=np.float64))
        omega_star = np.atleast_2d(np.asarray(self.omega_star, dtype=np.float64))
        for name, arr in (("eta", eta), ("gamma", gamma), ("omega_bar", omega_bar),
                          ("omega_star", omega_star)):
            object.__setattr__(self, name, arr)
        n, m = eta.shape[0], gamma.shape[0]
        if omega_bar.shape != (n,):
            raise DomainError("omega_bar length does not match eta")
        if np.any(omega_bar <= 0.0):
            raise DomainError("omega_bar entries must be positive")
        if omega_star.shape != (n + m, n + m):
            raise DomainError(f"omega_star shape {omega_star.shape}, expected "
                              f"{(n + m, n + m)}")
        cholesky(omega_star)  # symmetric PD check
        corr_diag = np.diag(omega_star)[m:]
        if not np.allclose(corr_diag, 1.0, atol=1e-12):
            raise DomainError("the n x n correlation block of omega_star must "
                              "have unit diagonal")
        if np.any(np.diag(omega_star)[:m] > 1.0 + 1e-12):
            raise DomainError("the truncation block diagonal cannot exceed 1")

    @property
    def n(self) -> int:
        return self.eta.shape[0]

    @property
    def m(self) -> int:
        return self.gamma.shape[0]

    @property
    def gamma_block(self) -> np.ndarray:
        return self.omega_star[: self.m, : self.m]

    @property
    def delta_block(self) -> np.ndarray:
        """The n x m cross block."""
        return self.omega_star[self.m:, : self.m]

    @property
    def corr_block(self) -> np.ndarray:
        return self.omega_star[self.m:, self.m:]

    @classmethod
    def embedding(cls, delta) -> "SunParams":
        """The parameter block under which the unified family coincides with
        the standard canonical family with skewness delta."""
        d = validate(delta)
        n, m = d.n, d.m
        omega_star = np.block([[np.eye(m), d.delta.T], [d.delta, np.eye(n)]])
        return cls(np.zeros(n), np.zeros(m), np.ones(n), omega_star)

    def _cached(self, key: str, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]


@dataclass(frozen=True)
class MomentOrder:
    """Vector of non-negative integer moment orders, one per coordinate."""

    t: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.t))
        if not np.issubdtype(t.dtype, np.number) or np.any(t < 0) \
                or np.any(t != np.floor(t)):
            raise DomainError("moment orders must be non-negative integers")
        object.__setattr__(self, "t", t.astype(np.float64))

    @property
    def n(self) -> int:
        return self.t.shape[0]


def _as_order(t, n: int) -> MomentOrder:
    order = t if isinstance(t, MomentOrder) else MomentOrder(np.asarray(t))
    if order.n != n:
        raise DomainError(f"moment order has length {order.n}, expected {n}")
    return order


def _standardized_log_argument(y, params: LcfusnParams) -> tuple[np.ndarray, np.ndarray]:
    """ln y and x = Sigma^{-1/2}(ln y - mu) for strictly positive y."""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.shape[0] != params.n:
        raise DomainError(f"point has dimension {y.shape[0]}, expected {params.n}")
    if np.any(y <= 0.0) or not np.all(np.isfinite(y)):
        raise DomainError("evaluation points must be strictly positive and finite")
    log_y = np.log(y)
    x = params.sigma_isqrt @ (log_y - params.mu)
    return log_y, x


def _log_skew_factor(u: np.ndarray, cov: np.ndarray, tol: float,
                     rng: RandomStream | None) -> float:
    """log Phi_m(u | cov), using the exact log tail for m = 1."""
    m = u.shape[0]
    if m == 1:
        return float(special.log_ndtr(u[0] / math.sqrt(cov[0, 0])))
    res = mvn_cdf(u, cov, tol=tol, rng=rng)
    if res.value <= 0.0:
        return -np.inf
    return math.log(res.value)


def cfusn_logpdf(z, params: LcfusnParams, *, cdf_tol: float = 1e-7,
                 rng: RandomStream | None = None) -> float:
    """Log density of the canonical (pre-exponential) family at a real vector:
    m log 2 + log phi_n(z; mu, Sigma) + log Phi_m(Delta' Sigma^{-1/2}(z - mu)
    | I_m - Delta' Delta)."""
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if z.shape[0] != params.n:
        raise DomainError(f"point has dimension {z.shape[0]}, expected {params.n}")
    x = params.sigma_isqrt @ (z - params.mu)
    return _cfusn_core(x, params, cdf_tol, rng)


def _cfusn_core(x: np.ndarray, params: LcfusnParams, cdf_tol: float,
                rng: RandomStream | None) -> float:
    n, m = params.n, params.m
    log_norm = -0.5 * (n * _LOG_2PI + float(x @ x)) - 0.5 * params.logdet_sigma
    u = params.delta.delta.T @ x
    return m * math.log(2.0) + log_norm \
        + _log_skew_factor(u, params.skew_cov, cdf_tol, rng)


def lcfusn_logpdf(y, params: LcfusnParams, *, cdf_tol: float = 1e-7,
                  rng: RandomStream | None = None) -> float:
    """Log density of the log-transformed family at a strictly positive vector.

    Equals cfusn_logpdf(ln y) - sum(ln y) exactly (shared code path).
    """
    log_y, x = _standardized_log_argument(y, params)
    return _cfusn_core(x, params, cdf_tol, rng) - float(np.sum(log_y))


def lcfusn_cdf(y, params: LcfusnParams, *, tol: float = 1e-7,
               max_points: int = 20_000_000,
               rng: RandomStream | None = None) -> CdfResult:
    """Distribution function P(Y <= y) componentwise.

    Built from the selection representation: with (Z, W0) jointly normal,
    F(y) = 2^m P(Z <= ln y, -W0 <= 0), whose covariance block matrix is
    [[Sigma, -Sigma^{1/2} Delta], [-Delta' Sigma^{1/2}, I_m]] (mean (mu, 0)).
    For the standard family this is the block form [[I_n, -Delta],
    [-Delta', I_m]] evaluated at (ln y, 0). Error estimate and convergence
    flag are propagated from the underlying normal cdf, scaled by 2^m.
    """
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.shape[0] != params.n:
        raise DomainError(f"point has dimension {y.shape[0]}, expected {params.n}")
    if np.any(y <= 0.0):
        raise DomainError("evaluation points must be strictly positive")
    n, m = params.n, params.m
    big = y >= numerics.INF_BOUND / 2
    log_y = np.where(big, numerics.INF_BOUND, np.log(np.where(big, 1.0, y)))
    d = params.delta.delta
    cross = params.sigma_sqrt @ d
    cov = np.block([[params.sigma, -cross], [-cross.T, np.eye(m)]])
    upper = np.concatenate([log_y - np.where(big, 0.0, params.mu), np.zeros(m)])
    res = mvn_cdf(upper, cov, tol=tol, max_points=max_points, rng=rng)
    scale = 2.0 ** m
    return CdfResult(min(scale * res.value, 1.0), scale * res.error_estimate,
                     res.points_used, res.converged)


def mixed_moment(t, params: LcfusnParams) -> float:
    """E(prod Y_i^{t_i}).

    Standard family: 2^m e^{t't/2} Phi_m(Delta' t) with the cdf at identity
    covariance computed as an exact product of univariate cdfs. Location-scale
    family: exp(t'mu) 2^m exp(t'Sigma t/2) Phi_m(Delta' Sigma^{1/2} t), from
    the moment generating function of the underlying kernel.
    """
    order = _as_order(t, params.n)
    tv = order.t
    v = params.delta.delta.T @ (params.sigma_sqrt @ tv)
    log_val = float(tv @ params.mu) + params.m * math.log(2.0) \
        + 0.5 * float(tv @ params.sigma @ tv) \
        + float(np.sum(special.log_ndtr(v)))
    return math.exp(log_val)


def shape_coefficients(delta) -> tuple[float, float]:
    """Skewness and kurtosis of the univariate (n = 1) standard family.

    Computed from the first four raw moments 2^m e^{k^2/2} prod_j Phi(k
    delta_j) through the central-moment identities; returns (skewness,
    kurtosis), the kurtosis uncentered by 3 (i.e. the fourth standardized
    moment).
    """
    d = validate(delta)
    if d.n != 1:
        raise DomainError("shape coefficients are defined for n = 1 only")
    params = LcfusnParams.standard(d)
    mu1, mu2, mu3, mu4 = (mixed_moment([k], params) for k in (1, 2, 3, 4))
    c2 = mu2 - mu1**2
    c3 = mu3 - 3.0 * mu1 * mu2 + 2.0 * mu1**3
    c4 = mu4 - 4.0 * mu1 * mu3 + 6.0 * mu1**2 * mu2 - 3.0 * mu1**4
    return c3 / c2**1.5, c4 / c2**2


def marginal(params: LcfusnParams, keep) -> LcfusnParams:
    """Marginal law over the kept coordinate indices.

    The family is closed under marginalization: keep the matching rows of
    Delta. For location-scale parameters, Sigma must be block-diagonal across
    kept/dropped indices (otherwise the marginal leaves the family).
    """
    keep = np.atleast_1d(np.asarray(keep, dtype=np.intp))
    if keep.size == 0 or np.any(keep < 0) or np.any(keep >= params.n) \
            or np.unique(keep).size != keep.size:
        raise BadPartition(f"invalid kept index set {keep.tolist()} for "
                           f"dimension {params.n}")
    drop = np.setdiff1d(np.arange(params.n), keep)
    if drop.size:
        cross = params.sigma[np.ix_(keep, drop)]
        scale = float(np.max(np.abs(np.diag(params.sigma))))
        if np.any(np.abs(cross) > 1e-12 * scale):
            raise NotBlockDiagonal("scale matrix has cross-covariance between "
                                   "kept and dropped coordinates")
    return LcfusnParams(params.mu[keep], params.sigma[np.ix_(keep, keep)],
                        SkewnessMatrix(params.delta.delta[keep, :]))


def _split_params(params: LcfusnParams, n1: int):
    if not 0 < n1 < params.n:
        raise BadPartition(f"partition point {n1} must lie strictly inside "
                           f"(0, {params.n})")
    idx1 = np.arange(n1)
    idx2 = np.arange(n1, params.n)
    return idx1, idx2


def conditional_logpdf(y1, y2, params: LcfusnParams, n1: int, *,
                       cdf_tol: float = 1e-7,
                       rng: RandomStream | None = None) -> float:
    """Log conditional density of the first n1 coordinates given the rest.

    Standard family:
      log f(y1 | y2) = -sum(ln y1) + log phi_{n1}(ln y1)
        + log Phi_m(D1' ln y1 + D2' ln y2 | I_m - Delta' Delta)
        - log Phi_m(D2' ln y2 | I_m - D2' D2),
    with D1, D2 the row blocks of Delta. The location-scale version (Sigma
    block-diagonal across the partition) applies the same form to the
    standardized arguments. The covariance of the numerator cdf uses the full
    Delta; the result equals joint minus marginal log density.
    """
    idx1, idx2 = _split_params(params, n1)
    y1 = np.atleast_1d(np.asarray(y1, dtype=np.float64))
    y2 = np.atleast_1d(np.asarray(y2, dtype=np.float64))
    if y1.shape[0] != idx1.size or y2.shape[0] != idx2.size:
        raise BadPartition("point dimensions do not match the partition")
    if np.any(y1 <= 0.0) or np.any(y2 <= 0.0):
        raise DomainError("evaluation points must be strictly positive")

    part2 = marginal(params, idx2)  # also enforces block-diagonal Sigma
    part1 = marginal(params, idx1)
    m = params.m
    x1 = part1.sigma_isqrt @ (np.log(y1) - part1.mu)
    x2 = part2.sigma_isqrt @ (np.log(y2) - part2.mu)
    d1 = params.delta.delta[idx1, :]
    d2 = params.delta.delta[idx2, :]

    log_norm = -float(np.sum(np.log(y1))) - 0.5 * part1.logdet_sigma \
        - 0.5 * (idx1.size * _LOG_2PI + float(x1 @ x1))
    u_num = d1.T @ x1 + d2.T @ x2
    num = _log_skew_factor(u_num, params.skew_cov, cdf_tol, rng)
    den = _log_skew_factor(d2.T @ x2, np.eye(m) - d2.T @ d2, cdf_tol, rng)
    return log_norm + num - den


def conditional_sun_params(params: LcfusnParams, y2, n1: int) -> SunParams:
    """The conditional law of the leading block given y2, expressed in the
    unified family: eta = mu1, gamma = D2' x2, truncation block I_m - D2'D2,
    cross block D1, correlation block I_{n1} (standardized coordinates)."""
    idx1, idx2 = _split_params(params, n1)
    y2 = np.atleast_1d(np.asarray(y2, dtype=np.float64))
    if y2.shape[0] != idx2.size:
        raise BadPartition("conditioning point does not match the partition")
    if np.any(y2 <= 0.0):
        raise DomainError("conditioning point must be strictly positive")
    part2 = marginal(params, idx2)
    part1 = marginal(params, idx1)
    if not part1.is_standard:
        raise DomainError("the unified-family form of the conditional is "
                          "available for standard-family parameters only")
    x2 = part2.sigma_isqrt @ (np.log(y2) - part2.mu)
    d1 = params.delta.delta[idx1, :]
    d2 = params.delta.delta[idx2, :]
    m = params.m
    omega_star = np.block([[np.eye(m) - d2.T @ d2, d1.T], [d1, np.eye(idx1.size)]])
    return SunParams(np.zeros(idx1.size), d2.T @ x2, np.ones(idx1.size), omega_star)


def independence_partition(delta, row_split: int, col_split: int) -> str:
    """Sufficient-condition verdict for independence of the two row blocks.

    With Delta partitioned into blocks [[D11, D12], [D21, D22]] by
    (row_split, col_split): 'independent-case-i' when the off-diagonal blocks
    are structurally zero, 'independent-case-ii' when the diagonal blocks are,
    'not-established' otherwise (the condition is sufficient, not necessary).
    """
    d = validate(delta).delta
    n, m = d.shape
    if not (0 < row_split < n) or not (0 < col_split < m):
        raise BadPartition(f"splits ({row_split}, {col_split}) must lie "
                           f"strictly inside ({n}, {m})")
    d11 = d[:row_split, :col_split]
    d12 = d[:row_split, col_split:]
    d21 = d[row_split:, :col_split]
    d22 = d[row_split:, col_split:]
    if not d12.any() and not d21.any():
        return "independent-case-i"
    if not d11.any() and not d22.any():
        return "independent-case-ii"
    return "not-established"


def lsun_logpdf(y, params: SunParams, *, cdf_tol: float = 1e-7,
                rng: RandomStream | None = None) -> float:
    """Log density of the exp-transform of the unified family:

    -sum(ln y) + log phi_n(ln y - eta | Omega)
      + log Phi_m(gamma + Delta' Omega_bar^{-1} omega^{-1}(ln y - eta)
                  | Gamma - Delta' Omega_bar^{-1} Delta)
      - log Phi_m(gamma | Gamma),
    with Omega = omega Omega_bar omega and omega = diag(omega_bar). The
    normalizing cdf in the denominator is cached per parameter block.
    """
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.shape[0] != params.n:
        raise DomainError(f"point has dimension {y.shape[0]}, expected {params.n}")
    if np.any(y <= 0.0):
        raise DomainError("evaluation points must be strictly positive")
    n, m = params.n, params.m
    corr = params.corr_block
    dblock = params.delta_block
    gamma_blk = params.gamma_block

    log_y = np.log(y)
    resid = (log_y - params.eta) / params.omega_bar  # omega^{-1}(ln y - eta)
    corr_inv_resid = np.linalg.solve(corr, resid)

    log_phi = -0.5 * (n * _LOG_2PI + float(resid @ corr_inv_resid)) \
        - float(np.sum(np.log(params.omega_bar))) \
        - 0.5 * float(np.linalg.slogdet(corr)[1])

    u = params.gamma + dblock.T @ corr_inv_resid
    cond_cov = gamma_blk - dblock.T @ np.linalg.solve(corr, dblock)
    log_num = _log_skew_factor(u, cond_cov, cdf_tol, rng)

    def build_den():
        return _log_skew_factor(params.gamma, gamma_blk, cdf_tol, rng)
    log_den = params._cached("log_norm_cdf", build_den)

    return -float(np.sum(log_y)) + log_phi + log_num - log_den


def sample(params: LcfusnParams, count: int, rng: RandomStream) -> np.ndarray:
    """Exact draws through the stochastic representation.

    Each row is exp(mu + Sigma^{1/2}(Delta |D| + (I_n - Delta Delta')^{1/2} V))
    with D ~ N_m(0, I) and V ~ N_n(0, I) independent. Draw order is fixed ( D
    first, then V, each (count, dim) row-major), so results are deterministic
    given the stream.
    """
    if count < 1:
        raise DomainError("count must be at least 1")
    n, m = params.n, params.m
    d = params.delta.delta
    comp_root = sqrt_psd(np.eye(n) - d @ d.T)
    abs_d = np.abs(rng.standard_normal((count, m)))
    v = rng.standard_normal((count, n))
    z = abs_d @ d.T + v @ comp_root  # comp_root is symmetric
    return np.exp(params.mu + z @ params.sigma_sqrt)
