"""Truncated Poisson distribution over network depth.

All expectations over depth are exact sums over the finite support; the
log-weights ``d*log(lam) - log(d!)`` are normalised with a log-sum-exp so the
pmf stays finite for any positive ``lam``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import poisson

from snds.autodiff import Parameter, Tensor, record
from snds.errors import DomainError

LAMBDA_FLOOR = 1e-3


def _log_pmf(lam: float, d_min: int, d_max: int) -> tuple[np.ndarray, np.ndarray]:
    depths = np.arange(d_min, d_max + 1, dtype=np.float64)
    logw = depths * math.log(lam) - gammaln(depths + 1)
    return depths, logw - logsumexp(logw)


def truncated_poisson_pmf(lam: float, d_min: int, d_max: int) -> np.ndarray:
    """pmf values at ``d_min..d_max`` as a plain array."""
    if lam <= 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    if not 1 <= d_min <= d_max:
        raise DomainError(f"invalid support [{d_min}, {d_max}]")
    return np.exp(_log_pmf(lam, d_min, d_max)[1])


def compute_d_max(lam: float, delta: float = 0.95, d_min: int = 1) -> int:
    """Smallest ``k`` with Poisson(lam) CDF(k) >= delta, clamped below at ``d_min``."""
    if lam <= 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    k = int(poisson.ppf(delta, lam))
    # ppf inverts a floating CDF; step back/forward so the defining inequality holds exactly.
    while k > 0 and poisson.cdf(k - 1, lam) >= delta:
        k -= 1
    while poisson.cdf(k, lam) < delta:
        k += 1
    return max(k, d_min)


@dataclass
class DepthPrior:
    prior_lambda: float = 1.0

    def __post_init__(self):
        if self.prior_lambda <= 0:
            raise DomainError(f"prior_lambda must be positive, got {self.prior_lambda}")

    def log_pmf(self, d_min: int, d_max: int) -> np.ndarray:
        return _log_pmf(self.prior_lambda, d_min, d_max)[1]

    def pmf(self, d_min: int, d_max: int) -> np.ndarray:
        return np.exp(self.log_pmf(d_min, d_max))


@dataclass
class TruncatedPoissonPosterior:
    """q(d) proportional to Poisson(d; lam) on ``[d_min, d_max]``; ``lam`` is trainable."""

    lam: Parameter
    d_min: int = 1
    d_max: int = 1
    delta: float = 0.95

    def __post_init__(self):
        if not isinstance(self.lam, Parameter):
            self.lam = Parameter(float(self.lam), name="depth.lambda")
        if self.lam.item() <= 0:
            raise DomainError(f"lambda must be positive, got {self.lam.item()}")
        if not 1 <= self.d_min <= self.d_max:
            raise DomainError(f"invalid support [{self.d_min}, {self.d_max}]")

    @classmethod
    def from_lambda(cls, lam: float, delta: float = 0.95, d_min: int = 1) -> "TruncatedPoissonPosterior":
        return cls(Parameter(float(lam), name="depth.lambda"), d_min, compute_d_max(lam, delta, d_min), delta)

    @property
    def lambda_value(self) -> float:
        return self.lam.item()

    @property
    def support(self) -> range:
        return range(self.d_min, self.d_max + 1)

    def refresh_support(self) -> int:
        """Recompute ``d_max`` from the current ``lam`` and return it."""
        self.d_max = compute_d_max(self.lambda_value, self.delta, self.d_min)
        return self.d_max

    def clamp(self) -> None:
        if self.lam.data < LAMBDA_FLOOR:
            self.lam.data = np.array(LAMBDA_FLOOR)

    def pmf_values(self) -> np.ndarray:
        return truncated_poisson_pmf(self.lambda_value, self.d_min, self.d_max)

    def pmf(self, d: int) -> float:
        if d not in self.support:
            raise DomainError(f"depth {d} outside support [{self.d_min}, {self.d_max}]")
        return float(self.pmf_values()[d - self.d_min])

    def pmf_tensor(self) -> Tensor:
        """Differentiable pmf vector over the support (gradient flows to ``lam``)."""
        return pmf_tensor(self.lam, self.d_min, self.d_max)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(np.arange(self.d_min, self.d_max + 1), size=size, p=self.pmf_values())


def pmf_tensor(lam: Tensor, d_min: int, d_max: int) -> Tensor:
    lam_v = float(lam.data)
    if lam_v <= 0:
        raise DomainError(f"lambda must be positive, got {lam_v}")
    depths, logq = _log_pmf(lam_v, d_min, d_max)
    q = np.exp(logq)
    # dq_d/dlam = q_d (d/lam - E_q[d])
    dq = q * (depths / lam_v - np.dot(q, depths) / lam_v)
    return record("truncated_poisson_pmf", q, (lam,), lambda g: (np.asarray(np.dot(g, dq)),))


def kl_depth(posterior: TruncatedPoissonPosterior, prior: DepthPrior) -> Tensor:
    """Exact KL(q || p) over the posterior's support, differentiable in ``lam``."""
    lam_v = posterior.lambda_value
    depths, logq = _log_pmf(lam_v, posterior.d_min, posterior.d_max)
    logp = prior.log_pmf(posterior.d_min, posterior.d_max)
    if not np.all(np.isfinite(logp)):
        raise DomainError("prior assigns zero mass inside the posterior support")
    q = np.exp(logq)
    ratio = logq - logp
    value = max(float(np.dot(q, ratio)), 0.0)
    dq = q * (depths / lam_v - np.dot(q, depths) / lam_v)
    # sum_d dq_d = 0, so the derivative of q*log q contributes only dq * log-ratio.
    return record("kl_depth", value, (posterior.lam,), lambda g: (np.asarray(g * np.dot(dq, ratio)),))


def kl_depth_mc(
    posterior: TruncatedPoissonPosterior, prior: DepthPrior, samples: int, rng: np.random.Generator
) -> tuple[Tensor, float]:
    """Monte Carlo KL estimate and its standard error.

    The gradient treats the drawn depths as fixed and differentiates the
    sampled log-ratios only; it exists for fidelity experiments, the exact
    :func:`kl_depth` is the default everywhere.
    """
    lam_v = posterior.lambda_value
    depths, logq = _log_pmf(lam_v, posterior.d_min, posterior.d_max)
    logp = prior.log_pmf(posterior.d_min, posterior.d_max)
    draws = rng.choice(len(depths), size=samples, p=np.exp(logq))
    terms = (logq - logp)[draws]
    q = np.exp(logq)
    dlogq = depths / lam_v - np.dot(q, depths) / lam_v
    grad = float(np.mean(dlogq[draws]))
    est = record("kl_depth_mc", terms.mean(), (posterior.lam,), lambda g: (np.asarray(g * grad),))
    return est, float(terms.std(ddof=1) / math.sqrt(samples))


def mode_depth(posterior: TruncatedPoissonPosterior) -> int:
    """Most probable depth; ties (up to rounding) go to the shallower depth."""
    q = posterior.pmf_values()
    return posterior.d_min + int(np.flatnonzero(q >= q.max() * (1 - 1e-12))[0])
