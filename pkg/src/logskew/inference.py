"""Bayesian fitting of the parsimonious log-skewed model by data augmentation.

Model: Y_i i.i.d. from the location-scale family with skewness Delta =
delta * ones(n, m), m fixed. Writing Z_i = ln Y_i, the stochastic
representation gives the augmented form

    Z_i | x_i ~ N_n(mu + delta * Sigma^{1/2} 1_n t_i,  C),   t_i = sum(x_i),
    x_i = |X_i| ~ half-normal_m,
    C = Sigma^{1/2} W_delta Sigma^{1/2},   W_delta = I_n - m delta^2 1_{n,n},

which is valid iff n m delta^2 < 1 (W_delta positive definite; the same bound
as spectral validity of Delta). Priors: mu ~ N(mu0, Sigma_mu), Sigma ~
inverse-Wishart(d, D) with density proportional to |Sigma|^{-(d+n+1)/2}
exp(-tr(D Sigma^{-1})/2), delta ~ uniform on the admissible interval.

The Gibbs cycle draws mu exactly (Gaussian), Sigma by a log-Cholesky
random-walk Metropolis step, delta by a reflected random walk on its support,
and the latent t rows by coordinate-wise truncated-normal Gibbs. The
non-augmented full-conditional kernels (prior times the stacked-cdf
likelihood) are evaluated directly for low-dimensional validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy import special, stats

from . import distributions
from .distributions import LcfusnParams, SkewnessMatrix
from .errors import (
    DimensionTooLarge,
    DomainError,
    NonFinite,
    NotPositiveDefinite,
    TooFewDraws,
)
from .numerics import (
    RandomStream,
    _truncnorm_standard,
    cholesky,
    mvn_cdf,
    mvn_logpdf,
    sqrt_psd,
)

__all__ = [
    "PriorSpec",
    "ChainState",
    "ChainConfig",
    "ParameterSummary",
    "PosteriorSummary",
    "DataMatrix",
    "FitResult",
    "delta_support",
    "moment_init",
    "loglik",
    "loglik_rows",
    "update_mu",
    "update_sigma",
    "update_delta",
    "update_latents",
    "run_chain",
    "direct_conditional_logkernel",
    "summarize",
    "sample_prior",
    "sample_augmented",
]

_LOG_2PI = math.log(2.0 * math.pi)
_DELTA_MARGIN = 1e-6  # margin inside the open support of delta


def delta_support(n: int, m: int) -> float:
    """Half-width of the admissible delta interval: 1/sqrt(nm) - margin."""
    return 1.0 / math.sqrt(n * m) - _DELTA_MARGIN


@dataclass(frozen=True)
class PriorSpec:
    """Conjugate-style prior block.

    mu ~ N(mu0, sigma_mu); Sigma ~ inverse-Wishart(d, scale) in the
    standard parametrization (density proportional to |Sigma|^{-(d+n+1)/2}
    exp(-tr(scale @ Sigma^{-1})/2), proper for d > n - 1); delta ~ uniform
    on the admissible interval, which depends on (n, m) and needs no
    hyperparameters. The univariate aliases are alpha = d/2, beta = scale/2
    (inverse-gamma) and v = sigma_mu (normal variance).
    """

    mu0: np.ndarray
    sigma_mu: np.ndarray
    d: float
    scale: np.ndarray

    def __post_init__(self):
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=np.float64))
        sigma_mu = np.atleast_2d(np.asarray(self.sigma_mu, dtype=np.float64))
        scale = np.atleast_2d(np.asarray(self.scale, dtype=np.float64))
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "sigma_mu", sigma_mu)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "d", float(self.d))
        n = mu0.shape[0]
        if sigma_mu.shape != (n, n) or scale.shape != (n, n):
            raise DomainError("prior matrix shapes do not match mu0")
        cholesky(sigma_mu)
        cholesky(scale)
        if self.d <= n - 1:
            raise DomainError(f"inverse-Wishart needs d > n - 1, got d={self.d}")

    @property
    def n(self) -> int:
        return self.mu0.shape[0]

    @cached_property
    def prec_mu(self) -> np.ndarray:
        """Inverse of sigma_mu (reused by every mu update)."""
        return np.linalg.inv(self.sigma_mu)

    @classmethod
    def univariate(cls, mu0: float, v: float, alpha: float, beta: float) -> "PriorSpec":
        """n = 1 aliases: mu ~ N(mu0, v), sigma^2 ~ inverse-gamma(alpha, beta)."""
        if v <= 0.0 or alpha <= 0.0 or beta <= 0.0:
            raise DomainError("v, alpha, beta must be positive")
        return cls(np.array([mu0]), np.array([[v]]), 2.0 * alpha,
                   np.array([[2.0 * beta]]))


@dataclass
class ChainState:
    """Mutable state of one chain: (mu, Sigma, delta, latent t-block)."""

    mu: np.ndarray
    sigma: np.ndarray
    delta: float
    latent_absX: np.ndarray  # L x m, non-negative
    iteration: int = 0


@dataclass(frozen=True)
class ChainConfig:
    """MCMC run settings; defaults sized for routine univariate fits.

    init_mu / init_sigma / init_delta override the default starting point
    (sample mean / sample covariance of ln Y, delta = 0) — e.g. for
    overdispersed multi-chain starts or a moment-matched warm start. None
    keeps the default for that component. Each accepts either one shared
    value (n-vector / n x n matrix / scalar) or one value per chain (an
    extra leading axis of length n_chains; for init_delta, a sequence).
    """

    iterations: int = 20_000
    burnin: int = 5_000
    thin: int = 5
    seed: int = 0
    n_chains: int = 2
    sigma_scale: float = 0.2
    delta_scale: float = 0.1
    adapt_until: int = 5_000
    record_loglik: bool = True
    init_mu: object = None
    init_sigma: object = None
    init_delta: float | None = None

    def __post_init__(self):
        if not 0 <= self.burnin < self.iterations:
            raise DomainError("need 0 <= burnin < iterations")
        if self.thin < 1:
            raise DomainError("thin must be >= 1")
        if self.n_chains < 1:
            raise DomainError("n_chains must be >= 1")
        if self.sigma_scale <= 0.0 or self.delta_scale <= 0.0:
            raise DomainError("proposal scales must be positive")
        if self.adapt_until < 0:
            raise DomainError("adapt_until must be >= 0")

    @property
    def kept(self) -> int:
        """Retained draws per chain."""
        return (self.iterations - self.burnin + self.thin - 1) // self.thin


@dataclass(frozen=True)
class DataMatrix:
    """L x n strictly positive observations with cached logs."""

    values: np.ndarray
    log_values: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if v.ndim != 2:
            raise DomainError("data must be a 2-D matrix")
        if v.size and (not np.all(np.isfinite(v)) or np.any(v <= 0.0)):
            raise DomainError("all observations must be strictly positive "
                              "and finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "log_values", np.log(v) if v.size
                           else np.zeros_like(v))

    @property
    def L(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ParameterSummary:
    name: str
    mean: float
    sd: float
    q025: float
    median: float
    q975: float
    hpd_lower: float
    hpd_upper: float
    ess: float


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-parameter posterior summaries at a common HPD level."""

    parameters: dict
    level: float

    def __getitem__(self, name: str) -> ParameterSummary:
        return self.parameters[name]


@dataclass(frozen=True)
class FitResult:
    """Retained draws and diagnostics from run_chain.

    draws has shape (n_chains, kept, P) with columns named by `names`;
    loglik, when recorded, has shape (n_chains, kept, L) holding
    per-observation log-densities at each retained draw.
    """

    names: tuple
    draws: np.ndarray
    iterations: np.ndarray
    loglik: np.ndarray | None
    diagnostics: dict
    m: int
    config: ChainConfig

    def pooled(self) -> np.ndarray:
        """All chains stacked: (n_chains * kept, P)."""
        return self.draws.reshape(-1, self.draws.shape[-1])

    def pooled_loglik(self) -> np.ndarray:
        if self.loglik is None:
            raise DomainError("log-likelihood matrix was not recorded")
        return self.loglik.reshape(-1, self.loglik.shape[-1])


# ---------------------------------------------------------------------------
# likelihood


def loglik(data: DataMatrix, mu, sigma, delta: float, m: int) -> float:
    """Log-likelihood: sum of per-observation log-densities."""
    if data.L == 0:
        return 0.0
    params = _params_from(mu, sigma, delta, data.n, m)
    return float(sum(distributions.lcfusn_logpdf(row, params)
                     for row in data.values))


def loglik_rows(data: DataMatrix, mu, sigma, delta: float, m: int) -> np.ndarray:
    """Per-observation log-densities, vectorized across observations.

    Exact closed forms for m <= 2 (the skewing cdf has equal arguments and
    equicorrelated covariance under Delta = delta * ones); falls back to the
    general density row by row for larger m. Agrees with loglik to float
    round-off.
    """
    n, L = data.n, data.L
    if L == 0:
        return np.zeros(0)
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    if m > 2:
        params = _params_from(mu, sigma, delta, n, m)
        return np.array([distributions.lcfusn_logpdf(row, params)
                         for row in data.values])

    root_inv = np.linalg.inv(sqrt_psd(sigma))
    x = (data.log_values - mu) @ root_inv  # symmetric root
    sign, logdet = np.linalg.slogdet(sigma)
    base = (m * math.log(2.0) - 0.5 * logdet - data.log_values.sum(axis=1)
            - 0.5 * (n * _LOG_2PI + np.einsum("ij,ij->i", x, x)))
    # skew factor: all m arguments equal delta * sum(x); covariance
    # I_m - n delta^2 ones(m, m)
    g = delta * x.sum(axis=1)
    diag = 1.0 - n * delta * delta
    if m == 1:
        return base + special.log_ndtr(g / math.sqrt(diag))
    from .numerics import _bvn_cdf
    rho = -n * delta * delta / diag
    std = g / math.sqrt(diag)
    vals = _bvn_cdf(std, std, rho)
    return base + np.log(np.maximum(vals, 1e-300))


def _params_from(mu, sigma, delta: float, n: int, m: int) -> LcfusnParams:
    return LcfusnParams(np.atleast_1d(np.asarray(mu, dtype=np.float64)),
                        np.atleast_2d(np.asarray(sigma, dtype=np.float64)),
                        SkewnessMatrix.parsimonious(delta, n, m))


# ---------------------------------------------------------------------------
# full-conditional updates (parsimonious model)


@dataclass(frozen=True)
class _SigmaFactors:
    """Factorizations of one Sigma, shared across a Gibbs sweep."""

    chol: np.ndarray
    root: np.ndarray
    root_inv: np.ndarray
    logdet: float


def _factorize(sigma: np.ndarray) -> _SigmaFactors:
    if sigma.shape == (1, 1):  # scalar case, skips the eigendecomposition
        v = float(sigma[0, 0])
        if not v > 0.0 or not math.isfinite(v):
            raise NotPositiveDefinite("sigma must be positive")
        r = math.sqrt(v)
        return _SigmaFactors(chol=np.array([[r]]), root=np.array([[r]]),
                             root_inv=np.array([[1.0 / r]]), logdet=math.log(v))
    chol = cholesky(sigma)
    root = sqrt_psd(sigma)
    return _SigmaFactors(chol=chol, root=root, root_inv=np.linalg.inv(root),
                         logdet=2.0 * float(np.sum(np.log(np.diag(chol)))))


@lru_cache(maxsize=None)
def _tril_indices(n: int):
    return np.tril_indices(n)


@lru_cache(maxsize=None)
def _strict_tril_indices(n: int):
    return np.tril_indices(n, -1)


@lru_cache(maxsize=None)
def _chol_exponents(n: int) -> np.ndarray:
    return np.arange(n, 0, -1) + 1.0  # n-i+2 for i = 1..n


def _w_delta_inverse(n: int, m: int, delta: float) -> np.ndarray:
    """(I_n - m delta^2 1_{n,n})^{-1} by the rank-one update formula."""
    det = 1.0 - n * m * delta * delta
    if det <= 0.0:
        raise NotPositiveDefinite("W_delta is singular at this delta")
    return np.eye(n) + (m * delta * delta / det) * np.ones((n, n))


def _gauss_quad_terms(z_std: np.ndarray, delta: float, t: np.ndarray,
                      n: int, m: int) -> np.ndarray:
    """Per-observation quadratic forms r_i' C^{-1} r_i in standardized
    coordinates: u_i = z_std_i - delta t_i 1_n, and
    u' W^{-1} u = u'u + m delta^2 (1'u)^2 / (1 - n m delta^2)."""
    det = 1.0 - n * m * delta * delta
    if n == 1:  # the rank-one correction collapses: u^2 / (1 - m delta^2)
        u = z_std[:, 0] - delta * t
        return u * u / det
    u = z_std - delta * t[:, None]
    row = u.sum(axis=1)
    return np.einsum("ij,ij->i", u, u) + (m * delta * delta / det) * row * row


def _augmented_logkernel_std(z_std: np.ndarray, t: np.ndarray,
                             logdet_sigma: float, delta: float,
                             n: int, m: int) -> float:
    """As _augmented_logkernel, from precomputed standardized residuals."""
    L = z_std.shape[0]
    det = 1.0 - n * m * delta * delta
    if det <= 0.0:
        return -np.inf
    quad = float(np.sum(_gauss_quad_terms(z_std, delta, t, n, m)))
    return -0.5 * L * (logdet_sigma + math.log(det)) - 0.5 * quad


def _augmented_logkernel(mu, sigma_root_inv, logdet_sigma: float, delta: float,
                         data: DataMatrix, latents: np.ndarray,
                         n: int, m: int) -> float:
    """Log of the Gaussian factor of the augmented model (2 pi constants
    dropped): -L/2 log|Sigma| - L/2 log(1 - nm delta^2) - quad/2."""
    if data.L == 0:
        return 0.0
    z_std = (data.log_values - mu) @ sigma_root_inv
    return _augmented_logkernel_std(z_std, latents.sum(axis=1), logdet_sigma,
                                    delta, n, m)


def update_mu(state: ChainState, data: DataMatrix, prior: PriorSpec,
              rng: RandomStream, *, factors: _SigmaFactors | None = None) -> np.ndarray:
    """Exact Gaussian draw from the mu full conditional.

    mu | rest ~ N(S [Sigma_mu^{-1} mu0 + C^{-1} sum_i (Z_i - a_i)], S),
    S = [Sigma_mu^{-1} + L C^{-1}]^{-1}, a_i = delta Sigma^{1/2} 1_n t_i.
    """
    n = prior.n
    m = state.latent_absX.shape[1]
    prec_prior = prior.prec_mu
    if data.L == 0:
        post_cov = prior.sigma_mu
        post_mean = prior.mu0
    elif n == 1:  # scalar fast path, same formulas
        delta = state.delta
        det = 1.0 - m * delta * delta
        if det <= 0.0:
            raise NotPositiveDefinite("W_delta is singular at this delta")
        sigma = float(state.sigma[0, 0])
        c_inv = 1.0 / (sigma * det)
        t_sum = float(state.latent_absX.sum())
        resid_sum = float(data.log_values.sum()) \
            - delta * math.sqrt(sigma) * t_sum
        prec = float(prec_prior[0, 0]) + data.L * c_inv
        v = 1.0 / prec
        mean = v * (float(prec_prior[0, 0]) * float(prior.mu0[0])
                    + c_inv * resid_sum)
        return np.array([mean + math.sqrt(v) * float(rng.standard_normal(1)[0])])
    else:
        f = factors if factors is not None else _factorize(state.sigma)
        c_inv = f.root_inv @ _w_delta_inverse(n, m, state.delta) @ f.root_inv
        t = state.latent_absX.sum(axis=1)
        resid = data.log_values - state.delta * np.outer(t, f.root.sum(axis=1))
        prec = prec_prior + data.L * c_inv
        post_cov = np.linalg.inv(prec)
        post_cov = 0.5 * (post_cov + post_cov.T)
        post_mean = post_cov @ (prec_prior @ prior.mu0 + c_inv @ resid.sum(axis=0))
    return post_mean + cholesky(post_cov) @ rng.standard_normal(n)


def _log_iw_kernel(sigma: np.ndarray, prior: PriorSpec) -> float:
    """Unnormalized inverse-Wishart log-density."""
    n = sigma.shape[0]
    if n == 1:
        v = float(sigma[0, 0])
        if v <= 0.0:
            return -np.inf
        return -0.5 * (prior.d + 2) * math.log(v) \
            - 0.5 * float(prior.scale[0, 0]) / v
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0:
        return -np.inf
    return (-0.5 * (prior.d + n + 1) * logdet
            - 0.5 * float(np.trace(np.linalg.solve(sigma, prior.scale))))


def _sigma_from_theta(theta: np.ndarray, n: int) -> tuple[np.ndarray, float]:
    """Rebuild Sigma from log-Cholesky coordinates; also return the
    log-Jacobian |dSigma/dtheta| = log(2^n prod g_ii^{n-i+2})."""
    if n == 1:  # np.exp: overflow -> inf, filtered by the caller
        return np.array([[np.exp(2.0 * theta[0])]]), \
            math.log(2.0) + 2.0 * float(theta[0])
    g = np.zeros((n, n))
    diag = np.exp(theta[:n])
    g[np.diag_indices(n)] = diag
    g[_strict_tril_indices(n)] = theta[n:]
    sigma = g @ g.T
    log_jac = n * math.log(2.0) + float(_chol_exponents(n) @ np.log(diag))
    return sigma, log_jac


def _sigma_logtarget(sigma: np.ndarray, state: ChainState, data: DataMatrix,
                     prior: PriorSpec, n: int, m: int,
                     factors: _SigmaFactors | None = None) -> float:
    try:
        f = factors if factors is not None else _factorize(sigma)
    except (np.linalg.LinAlgError, NotPositiveDefinite):
        return -np.inf
    return _log_iw_kernel(sigma, prior) + _augmented_logkernel(
        state.mu, f.root_inv, f.logdet, state.delta, data, state.latent_absX, n, m)


def update_sigma(state: ChainState, data: DataMatrix, prior: PriorSpec,
                 rng: RandomStream, *, scale: float = 0.2,
                 factors: _SigmaFactors | None = None) -> np.ndarray:
    """Metropolis step on Sigma: random walk in log-Cholesky coordinates.

    Returns the accepted matrix, or the current object unchanged on
    rejection (identity comparison detects acceptance).
    """
    n = prior.n
    m = state.latent_absX.shape[1]
    f = factors if factors is not None else _factorize(state.sigma)
    diag = np.diag(f.chol)
    theta = np.concatenate([np.log(diag), f.chol[_strict_tril_indices(n)]])
    prop_theta = theta + scale * rng.standard_normal(theta.shape[0])
    with np.errstate(over="ignore"):
        prop_sigma, prop_jac = _sigma_from_theta(prop_theta, n)
    if not np.all(np.isfinite(prop_sigma)):
        return state.sigma
    cur_jac = n * math.log(2.0) + float(_chol_exponents(n) @ np.log(diag))
    log_ratio = (_sigma_logtarget(prop_sigma, state, data, prior, n, m) + prop_jac
                 - _sigma_logtarget(state.sigma, state, data, prior, n, m,
                                    factors=f) - cur_jac)
    if math.log(rng.uniform()) < log_ratio:
        return prop_sigma
    return state.sigma


def _reflect(value: float, bound: float) -> float:
    """Fold a real into [-bound, bound] by reflection at both walls."""
    period = 4.0 * bound
    t = (value + bound) % period
    return (t - bound) if t <= 2.0 * bound else (3.0 * bound - t)


def update_delta(state: ChainState, data: DataMatrix, prior: PriorSpec,
                 rng: RandomStream, *, scale: float = 0.1,
                 factors: _SigmaFactors | None = None) -> float:
    """Metropolis step on delta: reflected random walk on the admissible
    interval (the reflection keeps the proposal symmetric, and the uniform
    prior contributes nothing inside the support)."""
    n = prior.n
    m = state.latent_absX.shape[1]
    bound = delta_support(n, m)
    prop = _reflect(state.delta + scale * float(rng.standard_normal(1)[0]), bound)
    if data.L == 0:
        return prop
    f = factors if factors is not None else _factorize(state.sigma)
    z_std = (data.log_values - state.mu) @ f.root_inv  # shared by both sides
    t = state.latent_absX.sum(axis=1)
    log_ratio = (_augmented_logkernel_std(z_std, t, f.logdet, prop, n, m)
                 - _augmented_logkernel_std(z_std, t, f.logdet, state.delta,
                                            n, m))
    if math.log(rng.uniform()) < log_ratio:
        return prop
    return state.delta


def update_latents(state: ChainState, data: DataMatrix, rng: RandomStream, *,
                   factors: _SigmaFactors | None = None) -> np.ndarray:
    """One coordinate-wise Gibbs sweep over the latent block.

    Each |X_i| | rest is a positive-orthant Gaussian with precision
    A = I_m + delta^2 s 1_{m,m}  (s = n / (1 - n m delta^2)) and linear term
    delta h_i 1_m, h_i = 1' Sigma^{-1/2}(Z_i - mu) / (1 - n m delta^2); the
    univariate conditionals are exact truncated normals, vectorized across
    observations.
    """
    L, m = state.latent_absX.shape
    if L == 0:
        return state.latent_absX.copy()
    n = data.n
    delta = state.delta
    det = 1.0 - n * m * delta * delta
    s = n / det
    a_diag = 1.0 + delta * delta * s
    a_off = delta * delta * s
    f = factors if factors is not None else _factorize(state.sigma)
    h = ((data.log_values - state.mu) @ f.root_inv).sum(axis=1) / det

    x = state.latent_absX.copy()
    row_sum = x.sum(axis=1)
    sd = 1.0 / math.sqrt(a_diag)
    for j in range(m):
        others = row_sum - x[:, j]
        mean = (delta * h - a_off * others) / a_diag
        # standardized draw from [-mean/sd, inf); same law as
        # sample_truncnorm(mean, sd, 0.0, rng) without its broadcasting
        new_col = np.maximum(mean + sd * _truncnorm_standard(-mean / sd, rng), 0.0)
        row_sum += new_col - x[:, j]
        x[:, j] = new_col
    return x


# ---------------------------------------------------------------------------
# prior and model simulation (used for initialization and validation)


def sample_prior(prior: PriorSpec, m: int, rng: RandomStream):
    """Draw (mu, Sigma, delta) from the prior."""
    n = prior.n
    mu = prior.mu0 + cholesky(prior.sigma_mu) @ rng.standard_normal(n)
    sigma = stats.invwishart.rvs(df=prior.d, scale=prior.scale,
                                 random_state=rng.generator)
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    bound = delta_support(n, m)
    delta = float(rng.uniform() * 2.0 * bound - bound)
    return mu, sigma, delta


def sample_augmented(mu, sigma, delta: float, m: int, count: int,
                     rng: RandomStream):
    """Draw (data, latents) jointly from the augmented model.

    Marginally over the latents the data follow the parsimonious
    location-scale family (same law as distributions.sample).
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    n = mu.shape[0]
    det = 1.0 - n * m * delta * delta
    if det <= 0.0:
        raise NotPositiveDefinite("delta outside the admissible interval")
    root = sqrt_psd(sigma)
    w_root = sqrt_psd(np.eye(n) - m * delta * delta * np.ones((n, n)))
    x = np.abs(rng.standard_normal((count, m)))
    eps = rng.standard_normal((count, n))
    z = mu + delta * np.outer(x.sum(axis=1), root @ np.ones(n)) \
        + eps @ (w_root @ root)  # (root @ w_root)' with symmetric factors
    return DataMatrix(np.exp(z)), x


# ---------------------------------------------------------------------------
# full chain


def moment_init(data: DataMatrix, m: int) -> tuple:
    """Method-of-moments starting point for univariate data.

    Matches the first three moments of ln Y: with T the sum of m i.i.d.
    half-normals and c = sqrt(2/pi),

        E ln Y   = mu + sigma delta m c,
        Var ln Y = sigma^2 (1 - m delta^2 c^2),
        skew ln Y = m c (4/pi - 1) delta^3 / (1 - m delta^2 c^2)^{3/2},

    so the sample skewness pins delta (monotone, solved by bisection, with
    the sample value clipped into the attainable range), then the variance
    gives sigma^2 and the mean gives mu. Returns (mu, sigma, delta) shaped
    for ChainConfig's init fields.
    """
    if data.n != 1:
        raise DomainError("moment matching is implemented for n = 1 only")
    if data.L < 3:
        raise DomainError("need at least 3 observations")
    z = data.log_values[:, 0]
    g1 = float(z.mean())
    g2 = float(z.var())
    if g2 <= 0.0:
        raise DomainError("degenerate sample: zero variance")
    g3 = float(np.mean((z - g1) ** 3)) / g2 ** 1.5
    c2 = 2.0 / math.pi
    c = math.sqrt(c2)
    coef = m * c * (4.0 / math.pi - 1.0)
    bound = delta_support(1, m)

    def skew_of(delta: float) -> float:
        return coef * delta ** 3 / (1.0 - m * delta * delta * c2) ** 1.5

    hi = 0.98 * bound
    g3 = min(max(g3, skew_of(-hi)), skew_of(hi))
    lo_d, hi_d = -hi, hi
    for _ in range(200):
        mid = 0.5 * (lo_d + hi_d)
        if skew_of(mid) < g3:
            lo_d = mid
        else:
            hi_d = mid
    delta = 0.5 * (lo_d + hi_d)
    sigma2 = g2 / (1.0 - m * delta * delta * c2)
    mu = g1 - math.sqrt(sigma2) * delta * m * c
    return np.array([mu]), np.array([[sigma2]]), delta


def _per_chain(value, chain: int, base_ndim: int, what: str,
               n_chains: int) -> np.ndarray:
    """Select this chain's entry from a shared or per-chain init value."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == base_ndim + 1:
        if arr.shape[0] != n_chains:
            raise DomainError(f"per-chain {what} needs one entry per chain")
        return arr[chain]
    return arr


def _initial_state(data: DataMatrix, prior: PriorSpec, m: int,
                   rng: RandomStream, config: ChainConfig,
                   chain: int) -> ChainState:
    n = prior.n
    if config.init_mu is not None:
        mu = np.atleast_1d(_per_chain(config.init_mu, chain, 1, "init_mu",
                                      config.n_chains))
        if mu.shape != (n,):
            raise DomainError("init_mu has the wrong dimension")
    elif data.L >= 2:
        mu = data.log_values.mean(axis=0)
    else:
        mu = prior.mu0.copy()
    if config.init_sigma is not None:
        sigma = np.atleast_2d(_per_chain(config.init_sigma, chain, 2,
                                         "init_sigma", config.n_chains))
        if sigma.shape != (n, n):
            raise DomainError("init_sigma has the wrong dimension")
        cholesky(sigma)
    elif data.L >= 2:
        sigma = np.atleast_2d(np.cov(data.log_values, rowvar=False))
        sigma = sigma + 1e-8 * np.eye(n)
        try:
            cholesky(sigma)
        except NotPositiveDefinite:
            sigma = prior.scale / (prior.d + n + 1)
    else:
        sigma = prior.scale / (prior.d + n + 1)  # prior mode
    delta = 0.0
    if config.init_delta is not None:
        delta = float(_per_chain(config.init_delta, chain, 0, "init_delta",
                                 config.n_chains))
        if abs(delta) >= delta_support(n, m):
            raise DomainError("init_delta outside the admissible interval")
    latents = np.abs(rng.standard_normal((data.L, m)))
    return ChainState(mu=np.asarray(mu, dtype=np.float64),
                      sigma=np.asarray(sigma, dtype=np.float64),
                      delta=delta, latent_absX=latents, iteration=0)


def _check_finite(state: ChainState, chain: int):
    if not (np.all(np.isfinite(state.mu)) and np.all(np.isfinite(state.sigma))
            and math.isfinite(state.delta)
            and np.all(np.isfinite(state.latent_absX))):
        raise NonFinite(f"chain {chain} reached a non-finite state at "
                        f"iteration {state.iteration}")


def _sigma_names(n: int) -> list:
    return [f"sigma_{i + 1}{j + 1}" for i, j in zip(*np.tril_indices(n))]


def run_chain(data: DataMatrix, prior: PriorSpec, config: ChainConfig,
              m: int) -> FitResult:
    """Run the full Gibbs cycle: mu exact, Sigma MH, delta MH, latent sweep.

    Chains run on distinct substreams of config.seed and are bit-reproducible
    given (data, prior, config, m). Proposal scales adapt toward 30%
    acceptance in 50-iteration windows while iteration < adapt_until, then
    freeze (retained draws are post-adaptation whenever adapt_until <=
    burnin, the default).
    """
    if m < 1:
        raise DomainError("m must be >= 1")
    if data.n != prior.n:
        raise DomainError("data dimension does not match the prior")
    n = prior.n
    names = tuple([f"mu_{i + 1}" for i in range(n)] + _sigma_names(n) + ["delta"])
    tril = np.tril_indices(n)
    kept = config.kept
    p = len(names)

    draws = np.empty((config.n_chains, kept, p))
    loglik_rec = (np.empty((config.n_chains, kept, data.L))
                  if config.record_loglik else None)
    iterations = np.array([config.burnin + k * config.thin + 1
                           for k in range(kept)], dtype=np.int64)
    accept = {"sigma": np.zeros(config.n_chains),
              "delta": np.zeros(config.n_chains)}
    scales = {"sigma": np.zeros(config.n_chains),
              "delta": np.zeros(config.n_chains)}

    window = 50
    for c in range(config.n_chains):
        rng = RandomStream(config.seed, stream_id=c)
        state = _initial_state(data, prior, m, rng, config, c)
        factors = _factorize(state.sigma)
        sigma_scale = config.sigma_scale
        delta_scale = config.delta_scale
        win_acc = {"sigma": 0, "delta": 0}
        k = 0
        for i in range(config.iterations):
            state.iteration = i + 1
            state.mu = update_mu(state, data, prior, rng, factors=factors)
            new_sigma = update_sigma(state, data, prior, rng, scale=sigma_scale,
                                     factors=factors)
            if new_sigma is not state.sigma:
                accept["sigma"][c] += 1
                win_acc["sigma"] += 1
                state.sigma = new_sigma
                factors = _factorize(new_sigma)
            new_delta = update_delta(state, data, prior, rng, scale=delta_scale,
                                     factors=factors)
            if new_delta != state.delta:
                accept["delta"][c] += 1
                win_acc["delta"] += 1
            state.delta = new_delta
            state.latent_absX = update_latents(state, data, rng, factors=factors)
            _check_finite(state, c)

            if (i + 1) % window == 0 and i < config.adapt_until:
                sigma_scale *= math.exp(0.5 * (win_acc["sigma"] / window - 0.3))
                delta_scale *= math.exp(0.5 * (win_acc["delta"] / window - 0.3))
                win_acc = {"sigma": 0, "delta": 0}

            if i >= config.burnin and (i - config.burnin) % config.thin == 0:
                draws[c, k, :n] = state.mu
                draws[c, k, n:-1] = state.sigma[tril]
                draws[c, k, -1] = state.delta
                if loglik_rec is not None:
                    loglik_rec[c, k] = loglik_rows(data, state.mu, state.sigma,
                                                   state.delta, m)
                k += 1
        accept["sigma"][c] /= config.iterations
        accept["delta"][c] /= config.iterations
        scales["sigma"][c] = sigma_scale
        scales["delta"][c] = delta_scale

    diagnostics = {
        "ess": {name: float(sum(_ess_imse(draws[c, :, j])
                                for c in range(config.n_chains)))
                for j, name in enumerate(names)},
        "rhat": {name: _split_rhat(draws[:, :, j]) for j, name in enumerate(names)},
        "accept_sigma": accept["sigma"].tolist(),
        "accept_delta": accept["delta"].tolist(),
        "final_sigma_scale": scales["sigma"].tolist(),
        "final_delta_scale": scales["delta"].tolist(),
    }
    return FitResult(names=names, draws=draws, iterations=iterations,
                     loglik=loglik_rec, diagnostics=diagnostics, m=m,
                     config=config)


# ---------------------------------------------------------------------------
# direct (non-augmented) full-conditional kernels


def direct_conditional_logkernel(tag: str, value, state: ChainState,
                                 data: DataMatrix, prior: PriorSpec, *,
                                 cdf_tol: float = 1e-8) -> float:
    """Unnormalized log full-conditional of mu, Sigma, or delta without
    augmentation: log prior(tag) plus the stacked-cdf log-likelihood with
    all L skewing factors evaluated as one (L*m)-dimensional normal cdf at
    block covariance I_{Lm} - I_L (x) Delta'Delta. Requires L*m <= 12.
    """
    n = data.n
    m = state.latent_absX.shape[1]
    if data.L * m > 12:
        raise DimensionTooLarge(f"stacked cdf dimension {data.L * m} exceeds 12")

    mu, sigma, delta = state.mu, state.sigma, state.delta
    if tag == "mu":
        mu = np.atleast_1d(np.asarray(value, dtype=np.float64))
        log_prior = mvn_logpdf(mu, prior.mu0, prior.sigma_mu)
    elif tag == "sigma":
        sigma = np.atleast_2d(np.asarray(value, dtype=np.float64))
        log_prior = _log_iw_kernel(sigma, prior)
    elif tag == "delta":
        delta = float(value)
        bound = delta_support(n, m)
        if abs(delta) >= bound or 1.0 - n * m * delta * delta <= 1e-12:
            return -np.inf  # outside the support / singular skew covariance
        log_prior = 0.0
    else:
        raise DomainError(f"unknown parameter tag {tag!r}")
    if not math.isfinite(log_prior):
        return -np.inf
    return log_prior + _stacked_loglik(data, mu, sigma, delta, m, cdf_tol)


def _stacked_loglik(data: DataMatrix, mu, sigma, delta: float, m: int,
                    cdf_tol: float = 1e-8) -> float:
    """Log-likelihood with the skew factors as a single stacked normal cdf."""
    L, n = data.L, data.n
    if L == 0:
        return 0.0
    try:
        root_inv = np.linalg.inv(sqrt_psd(sigma))
        sign, logdet = np.linalg.slogdet(sigma)
        if sign <= 0:
            return -np.inf
    except (np.linalg.LinAlgError, NotPositiveDefinite):
        return -np.inf
    x = (data.log_values - mu) @ root_inv
    base = (L * m * math.log(2.0) - 0.5 * L * logdet
            - float(data.log_values.sum())
            - 0.5 * (L * n * _LOG_2PI + float(np.einsum("ij,ij->", x, x))))
    # stacked cdf: per observation the m arguments all equal delta sum(x_i)
    args = np.repeat(delta * x.sum(axis=1), m)
    block = np.eye(m) - n * delta * delta * np.ones((m, m))
    cov = np.kron(np.eye(L), block)
    res = mvn_cdf(args, cov, tol=cdf_tol)
    if res.value <= 0.0:
        return -np.inf
    return base + math.log(res.value)


# ---------------------------------------------------------------------------
# posterior summaries


def _hpd(draws: np.ndarray, level: float) -> tuple[float, float]:
    """Shortest interval containing `level` of the sorted sample."""
    x = np.sort(draws)
    n = x.shape[0]
    k = max(1, int(math.ceil(level * n)))
    if k >= n:
        return float(x[0]), float(x[-1])
    widths = x[k - 1:] - x[: n - k + 1]
    j = int(np.argmin(widths))
    return float(x[j]), float(x[j + k - 1])


def _ess_imse(draws: np.ndarray) -> float:
    """Effective sample size with initial-monotone-sequence truncation."""
    x = np.asarray(draws, dtype=np.float64)
    n = x.shape[0]
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = float(x @ x) / n
    if var <= 0.0:
        return float(n)
    # autocovariance via FFT
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n].real / n
    rho = acov / acov[0]
    # pair sums Gamma_j = rho_{2j} + rho_{2j+1}: keep while positive, enforce
    # monotone non-increasing
    pairs = []
    j = 0
    while 2 * j + 1 < n:
        g = rho[2 * j] + rho[2 * j + 1]
        if g <= 0.0:
            break
        pairs.append(g)
        j += 1
    if not pairs:
        return float(n)
    pairs = np.minimum.accumulate(pairs)
    tau = max(1.0, -1.0 + 2.0 * float(np.sum(pairs)))
    return float(min(n, n / tau))


def _split_rhat(chains: np.ndarray) -> float:
    """Potential scale reduction over split half-chains; chains is
    (n_chains, kept)."""
    kept = chains.shape[1]
    half = kept // 2
    if half < 2:
        return float("nan")
    segments = np.concatenate([chains[:, :half], chains[:, half: 2 * half]],
                              axis=0)
    means = segments.mean(axis=1)
    variances = segments.var(axis=1, ddof=1)
    w = float(variances.mean())
    b = half * float(means.var(ddof=1))
    if w <= 0.0:
        return 1.0
    var_plus = (half - 1) / half * w + b / half
    return float(math.sqrt(var_plus / w))


def summarize(draws, names=None, level: float = 0.95) -> PosteriorSummary:
    """Posterior summaries of retained draws.

    draws: (N,) for a single parameter or (N, P) with `names` labelling
    columns; requires N >= 100. HPD intervals use the shortest-window method
    over the sorted sample; ESS uses initial-monotone autocorrelation
    truncation and is capped at N.
    """
    arr = np.asarray(draws, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DomainError("draws must be a vector or a draws-by-parameters matrix")
    n, p = arr.shape
    if n < 100:
        raise TooFewDraws(f"need at least 100 retained draws, got {n}")
    if not 0.0 < level < 1.0:
        raise DomainError("level must be in (0, 1)")
    if names is None:
        names = [f"param_{j + 1}" for j in range(p)] if p > 1 else ["param"]
    if len(names) != p:
        raise DomainError("names length does not match the number of columns")

    params = {}
    for j, name in enumerate(names):
        col = arr[:, j]
        lo, hi = _hpd(col, level)
        q = np.quantile(col, [0.025, 0.5, 0.975])
        params[name] = ParameterSummary(
            name=name, mean=float(col.mean()), sd=float(col.std(ddof=1)),
            q025=float(q[0]), median=float(q[1]), q975=float(q[2]),
            hpd_lower=lo, hpd_upper=hi, ess=_ess_imse(col))
    return PosteriorSummary(parameters=params, level=level)
