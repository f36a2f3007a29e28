"""Comparison statistics over retained posterior draws.

Everything here consumes the output of a finished fit: a T x L table of
per-observation log-likelihoods, the pooled draw matrix, or posterior-mean
parameters. Provided are the deviance information criterion with its
effective-parameter count, per-observation conditional predictive ordinates
(harmonic-mean estimator, evaluated in log space), Rao-Blackwellized
posterior predictive tail probabilities, and a plug-in Kolmogorov-Smirnov
test of the fitted cdf against the empirical one.

All functions are pure; nothing mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .distributions import LcfusnParams, lcfusn_cdf
from .errors import DimensionError, DomainError, NonFinite, TooFewDraws
from .inference import DataMatrix

__all__ = [
    "LoglikMatrix",
    "ComparisonReport",
    "dic",
    "cpo",
    "predictive_probability",
    "ks_plugin",
    "kolmogorov_sf",
]


@dataclass(frozen=True)
class LoglikMatrix:
    """Per-draw, per-observation log-likelihood table.

    values[t, i] = log f(y_i | theta_t) for retained draw t and observation
    i. A -inf entry records a zero density at some draw (legal, handled
    downstream); nan and +inf are corrupt and rejected.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DomainError(f"expected a 2-d table, got ndim={v.ndim}")
        if v.shape[0] < 1 or v.shape[1] < 1:
            raise DomainError("needs at least one draw and one observation")
        if np.any(np.isnan(v)) or np.any(v == np.inf):
            raise NonFinite("log-likelihood entries must not be nan or +inf")
        object.__setattr__(self, "values", v)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def L(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ComparisonReport:
    """One model's comparison statistics, ready for serialization.

    predictive_probs holds (threshold, direction, probability) triples in
    request order. slncpo_mean is the per-observation average (the scale on
    which models of different sample sizes compare); slncpo_sum is L times
    that.
    """

    dic: float
    p_d: float
    slncpo_sum: float
    slncpo_mean: float
    ks_dn: float
    ks_pvalue: float
    predictive_probs: tuple

    def __post_init__(self):
        if not math.isfinite(self.p_d):
            raise NonFinite("p_d must be finite")
        if not 0.0 <= self.ks_dn <= 1.0:
            raise DomainError(f"ks_dn={self.ks_dn} outside [0, 1]")
        if not 0.0 <= self.ks_pvalue <= 1.0:
            raise DomainError(f"ks_pvalue={self.ks_pvalue} outside [0, 1]")
        probs = tuple((float(c), str(d), float(p))
                      for c, d, p in self.predictive_probs)
        for c, d, p in probs:
            if not 0.0 <= p <= 1.0:
                raise DomainError(f"predictive probability {p} outside [0, 1]")
        object.__setattr__(self, "predictive_probs", probs)

    def to_dict(self) -> dict:
        return {
            "dic": self.dic,
            "p_d": self.p_d,
            "slncpo_sum": self.slncpo_sum,
            "slncpo_mean": self.slncpo_mean,
            "ks_dn": self.ks_dn,
            "ks_pvalue": self.ks_pvalue,
            "predictive_probs": [
                {"threshold": c, "direction": d, "probability": p}
                for c, d, p in self.predictive_probs
            ],
        }


def dic(loglik: LoglikMatrix, loglik_at_posterior_mean: float,
        *, allow_single_draw: bool = False) -> tuple[float, float]:
    """Deviance information criterion and effective parameter count.

    D_bar = mean over draws of -2 sum_i loglik[t, i]; D(theta_bar) =
    -2 * loglik_at_posterior_mean; p_D = D_bar - D(theta_bar); DIC =
    D_bar + p_D = 2 D_bar - D(theta_bar). Returns (dic, p_d).

    A single-draw table has no posterior spread, so by default it is
    rejected; with allow_single_draw the degenerate convention p_D = 0,
    DIC = D(theta_bar) applies.
    """
    if not math.isfinite(loglik_at_posterior_mean):
        raise NonFinite("log-likelihood at the posterior mean must be finite")
    d_at_mean = -2.0 * float(loglik_at_posterior_mean)
    if loglik.T < 2:
        if not allow_single_draw:
            raise TooFewDraws("need at least 2 retained draws for p_D")
        return d_at_mean, 0.0
    deviances = -2.0 * loglik.values.sum(axis=1)
    d_bar = float(deviances.mean())
    if not math.isfinite(d_bar):
        raise NonFinite("mean deviance is not finite")
    p_d = d_bar - d_at_mean
    return d_bar + p_d, p_d


def cpo(loglik: LoglikMatrix) -> tuple[np.ndarray, float, float]:
    """Conditional predictive ordinates and their summed/averaged logs.

    CPO_i is the harmonic mean over draws of f(y_i | theta_t), computed in
    log space: ln CPO_i = ln T - logsumexp_t(-loglik[t, i]). Returns
    (cpo_vector, slncpo_sum, slncpo_mean). An observation with a -inf
    log-likelihood at any draw gets CPO_i = 0 (its -loglik dominates the
    harmonic mean); the resulting -inf propagates into the sums rather than
    raising. The log-scale sums are always exact; a vector entry whose CPO
    exceeds the float range saturates to inf.
    """
    if loglik.T < 2:
        raise TooFewDraws("need at least 2 retained draws")
    log_cpo = math.log(loglik.T) - special.logsumexp(-loglik.values, axis=0)
    slncpo_sum = float(log_cpo.sum())
    with np.errstate(over="ignore"):
        values = np.exp(log_cpo)
    return values, slncpo_sum, slncpo_sum / loglik.L


def _dimension_from_width(p: int) -> int:
    """Invert p = n + n(n+1)/2 + 1, the pooled draw-matrix width."""
    n = int(round((math.sqrt(8.0 * p + 1.0) - 3.0) / 2.0))
    if n < 1 or n + n * (n + 1) // 2 + 1 != p:
        raise DomainError(f"draw matrix width {p} does not match any "
                          f"dimension's (mu, sigma, delta) layout")
    return n


def _params_from_row(row: np.ndarray, n: int, m: int) -> LcfusnParams:
    """Rebuild location-scale parameters from one packed draw row."""
    mu = row[:n]
    sigma = np.zeros((n, n))
    tril = np.tril_indices(n)
    sigma[tril] = row[n:n + len(tril[0])]
    sigma[(tril[1], tril[0])] = sigma[tril]
    delta = float(row[-1])
    return LcfusnParams(mu, sigma, delta * np.ones((n, m)))


def predictive_probability(draws, threshold: float, direction: str, m: int,
                           *, min_draws: int = 100,
                           cdf_tol: float = 1e-7) -> float:
    """Posterior predictive P(Y > c) or P(Y < c), averaged over draws.

    draws is a pooled (N, P) matrix in run_chain column order (mu entries,
    lower-triangle sigma entries, delta); a FitResult pools itself. The
    Rao-Blackwellized estimate averages 1 - F(c | theta_t) (direction
    "above") or F(c | theta_t) ("below") with F the fitted cdf, so no fresh
    predictive sampling enters. For n > 1 the scalar threshold is applied
    componentwise ("below" is the orthant {all Y_i <= c}, "above" its
    complement). min_draws guards against summarizing noise; lower it
    explicitly for degenerate checks.
    """
    if direction not in ("above", "below"):
        raise DomainError(f"direction must be 'above' or 'below', "
                          f"got {direction!r}")
    if threshold <= 0.0:
        raise DomainError("threshold must be strictly positive")
    matrix = draws.pooled() if hasattr(draws, "pooled") else \
        np.asarray(draws, dtype=np.float64)
    if matrix.ndim != 2:
        raise DomainError("draws must form a 2-d matrix")
    if matrix.shape[0] < min_draws:
        raise TooFewDraws(f"{matrix.shape[0]} draws < required {min_draws}")
    n = _dimension_from_width(matrix.shape[1])
    point = np.full(n, threshold)
    total = 0.0
    for row in matrix:
        f = lcfusn_cdf(point, _params_from_row(row, n, m), tol=cdf_tol).value
        total += 1.0 - f if direction == "above" else f
    return min(max(total / matrix.shape[0], 0.0), 1.0)


def kolmogorov_sf(x: float, terms: int = 100) -> float:
    """Kolmogorov distribution survival function, truncated series.

    K(x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2), the asymptotic law of
    sqrt(L) * D_L under the null. Alternating and decreasing in k for x > 0,
    so the truncation error is below the first omitted term; the result is
    clamped to [0, 1]. x <= 0 returns 1.
    """
    if x <= 0.0:
        return 1.0
    k = np.arange(1, terms + 1)
    s = 2.0 * float(np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k * k * x * x)))
    return min(max(s, 0.0), 1.0)


def ks_plugin(data: DataMatrix, mu, sigma, delta: float, m: int,
              *, min_observations: int = 10,
              cdf_tol: float = 1e-7) -> tuple[float, float]:
    """Plug-in Kolmogorov-Smirnov distance and asymptotic p-value.

    Compares the empirical cdf of univariate data against the fitted cdf at
    point-estimate parameters (posterior means). D_L is the sup over both
    one-sided deviations at the L jump points; the p-value is
    kolmogorov_sf(sqrt(L) * D_L). Univariate only. min_observations guards
    the asymptotic p-value; lower it explicitly for degenerate checks.
    """
    if data.n != 1:
        raise DimensionError(f"univariate data required, got n={data.n}")
    if data.L < min_observations:
        raise TooFewDraws(f"{data.L} observations < required "
                          f"{min_observations}")
    params = LcfusnParams(mu, sigma, float(delta) * np.ones((1, m)))
    y = np.sort(data.values[:, 0])
    f = np.array([lcfusn_cdf(y[i:i + 1], params, tol=cdf_tol).value
                  for i in range(data.L)])
    hi = np.arange(1, data.L + 1) / data.L
    lo = np.arange(0, data.L) / data.L
    dn = max(float(np.max(hi - f)), float(np.max(f - lo)))
    return dn, kolmogorov_sf(math.sqrt(data.L) * dn)
