"""Closed-form results: equilibrium marginals, density profiles, LEQ and McLennan corrections.

Site indices in formulas run ``i = 1 .. N``; arrays returned here are indexed
``0 .. N-1`` and hold the value for site ``i = index + 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import DegenerateDenominatorError, ParameterError
from .model import Configuration, ModelParams

__all__ = [
    "EquilibriumMarginal",
    "DensityProfile",
    "LinearCorrection",
    "LEQExpansion",
    "marginal_pmf",
    "marginal_logpmf",
    "single_site_potential",
    "potential_U",
    "partition_function",
    "mean_occupancy",
    "theta_from_density",
    "density_profile_general",
    "density_profile_perturbed",
    "density_profile_weak",
    "stationary_current",
    "particle_flux",
    "leq_log_weight",
    "leq_expansion",
    "leq_first_order_coefficients",
    "leq_closed_form_coefficients",
    "leq_log_partition_slope",
    "mclennan_coefficients",
]

# relative size below which a closed-form denominator is treated as zero
_DEGENERATE_RTOL = 1e-13


def _check_theta(theta) -> None:
    t = np.asarray(theta, dtype=float)
    if not np.all((t > 0) & (t < 1)):
        raise ParameterError(f"theta must lie in (0, 1), got {theta!r}")


def _check_m(m: float) -> None:
    if not m > 0:
        raise ParameterError(f"m must be positive, got {m!r}")


def marginal_logpmf(theta: float, m: float, n):
    """``log gamma(n)``; ``n`` may be an int or an integer array."""
    _check_theta(theta)
    _check_m(m)
    n = np.asarray(n)
    if np.any(n < 0):
        raise ParameterError("occupation numbers must be non-negative")
    out = n * math.log(theta) + m * math.log1p(-theta) + gammaln(m + n) - gammaln(n + 1.0) - gammaln(m)
    return out if out.ndim else float(out)


def marginal_pmf(theta: float, m: float, n):
    """Single-site equilibrium mass ``theta^n Gamma(m+n) / (Z n! Gamma(m))`` with ``Z = (1-theta)^-m``."""
    return np.exp(marginal_logpmf(theta, m, n)) if np.ndim(n) else math.exp(marginal_logpmf(theta, m, n))


def partition_function(theta: float, m: float) -> float:
    _check_theta(theta)
    return (1.0 - theta) ** (-m)


def single_site_potential(theta: float, m: float, n):
    """``V(n) = -n log theta + m log(1-theta) + log n! - log(Gamma(m+n)/Gamma(m))``."""
    _check_theta(theta)
    _check_m(m)
    n = np.asarray(n)
    out = -n * math.log(theta) + m * math.log1p(-theta) + gammaln(n + 1.0) - (gammaln(m + n) - gammaln(m))
    return out if out.ndim else float(out)


def potential_U(cfg: Configuration | Sequence[int], theta: float, m: float) -> float:
    """Thermodynamic potential ``U = -log nu_eq``, a sum of single-site terms."""
    return float(np.sum(single_site_potential(theta, m, np.asarray(list(cfg)))))


def mean_occupancy(theta: float, m: float) -> float:
    _check_theta(theta)
    return m * theta / (1.0 - theta)


def theta_from_density(rho: float, m: float) -> float:
    if not rho > 0:
        raise ParameterError(f"density must be positive, got {rho!r}")
    _check_m(m)
    return rho / (m + rho)


@dataclass(frozen=True)
class EquilibriumMarginal:
    """Single-site equilibrium law at fugacity ``theta``."""

    theta: float
    m: float

    def __post_init__(self):
        _check_theta(self.theta)
        _check_m(self.m)

    @classmethod
    def from_rates(cls, b: float, d: float, m: float) -> "EquilibriumMarginal":
        return cls(b / d, m)

    def pmf(self, n):
        return marginal_pmf(self.theta, self.m, n)

    def logpmf(self, n):
        return marginal_logpmf(self.theta, self.m, n)

    def potential(self, n):
        return single_site_potential(self.theta, self.m, n)

    @property
    def mean(self) -> float:
        return mean_occupancy(self.theta, self.m)

    @property
    def partition(self) -> float:
        return partition_function(self.theta, self.m)

    def tail_cap(self, tol: float = 1e-12) -> int:
        """Smallest ``n_max`` with ``P(n > n_max) < tol``."""
        n, cdf = 0, 0.0
        # pmf is unimodal; summing the head is exact enough for tails >= 1e-15
        while True:
            cdf += self.pmf(n)
            if 1.0 - cdf < tol and n >= self.mean:
                return n
            n += 1


def _ratio(num: float, den: float, scale: float, what: str) -> float:
    if abs(den) <= _DEGENERATE_RTOL * scale:
        raise DegenerateDenominatorError(f"{what}: denominator vanishes ({den!r})")
    return num / den


@dataclass(frozen=True)
class DensityProfile:
    """Linear stationary profile ``rho_i = alpha + beta * i``."""

    alpha: float
    beta: float
    N: int

    @property
    def sites(self) -> np.ndarray:
        return np.arange(1, self.N + 1)

    @property
    def densities(self) -> np.ndarray:
        return self.alpha + self.beta * self.sites

    def density(self, i: int) -> float:
        return self.alpha + self.beta * i

    @property
    def current(self) -> float:
        """Expected discrete gradient ``<eta_{i+1} - eta_i>``, i.e. ``beta``."""
        return self.beta


def density_profile_general(p: ModelParams) -> DensityProfile:
    """Exact stationary profile for arbitrary reservoir rates."""
    b1, d1, bN, dN, m, N = p.b1, p.d1, p.bN, p.dN, p.m, p.N
    den = (bN - dN) * (b1 - d1) * N + (dN + d1 - bN - b1) * m + (b1 - d1) * (dN - bN)
    scale = abs((bN - dN) * (b1 - d1)) * N + (dN + d1 + bN + b1) * m + abs((b1 - d1) * (dN - bN))
    alpha_num = b1 * (dN - bN) * m * N + (bN + b1) * m**2 + bN * (b1 - d1) * m
    beta_num = (bN * d1 - b1 * dN) * m
    alpha = _ratio(alpha_num, den, scale, "profile intercept")
    beta = _ratio(beta_num, den, scale, "profile slope")
    return DensityProfile(alpha, beta, N)


def _check_subcritical(b: float, d: float) -> None:
    if not (b > 0 and d > 0):
        raise ParameterError("rates must be positive")
    if not b < d:
        raise ParameterError(f"finite density requires b < d, got b={b!r}, d={d!r}")


def density_profile_perturbed(b: float, d: float, m: float, N: int, eps: float) -> DensityProfile:
    """Profile of the +-eps reservoirs, exact in ``eps``."""
    _check_subcritical(b, d)
    e2 = eps * eps
    den = ((b - d) ** 2 - b * b * e2) * N + (2 * d - 2 * b) * m + (b * b * e2 - (b - d) ** 2)
    alpha_num = (
        (b * d - b * b + b * d * eps + b * b * e2) * m * N
        + 2 * b * m * m
        + (b * b - b * d + b * d * eps - b * b * e2) * m
    )
    beta_num = -2 * b * d * m * eps
    scale = ((b - d) ** 2 + b * b * e2) * (N + 1) + 2 * (d + b) * m
    return DensityProfile(_ratio(alpha_num, den, scale, "profile intercept"),
                          _ratio(beta_num, den, scale, "profile slope"), N)


def _weak_denominator(b: float, d: float, m: float, N: int) -> float:
    return (d - b) ** 2 * N + 2 * (d - b) * m - (d - b) ** 2


def density_profile_weak(b: float, d: float, m: float, N: int, eps: float) -> DensityProfile:
    """First-order-in-``eps`` profile of the +-eps reservoirs."""
    _check_subcritical(b, d)
    D = _weak_denominator(b, d, m, N)
    alpha = b * m / (d - b) + b * d * m * (N + 1) * eps / D
    beta = -2 * b * d * m * eps / D
    return DensityProfile(alpha, beta, N)


def stationary_current(p: ModelParams) -> float:
    """Slope ``beta`` of the stationary profile (expected ``eta_{i+1} - eta_i``).

    Negative when the left reservoir is the denser one.  The net number of
    particles crossing each bond left-to-right per unit time is
    :func:`particle_flux`, equal to ``-m * beta``.
    """
    return density_profile_general(p).beta


def particle_flux(p: ModelParams) -> float:
    """Net left-to-right jumps per unit time across any bond in the steady state."""
    return -p.m * stationary_current(p)


def leq_log_weight(theta_profile: Sequence[float], m: float, cfg: Configuration | Sequence[int]) -> float:
    """Log-probability of ``cfg`` under the product measure with site fugacities ``theta_profile``."""
    theta = np.asarray(theta_profile, dtype=float)
    eta = np.asarray(list(cfg))
    if theta.shape != eta.shape:
        raise ParameterError(f"profile has {theta.size} sites, configuration has {eta.size}")
    _check_theta(theta)
    total = 0.0
    for t, n in zip(theta, eta):
        total += marginal_logpmf(float(t), m, int(n))
    return total


@dataclass(frozen=True)
class LinearCorrection:
    """Per-site weights ``c_i`` of a first-order exponent ``eps * sum_i c_i eta_i``."""

    coefficients: np.ndarray
    A: float | None = None
    B: float | None = None

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def N(self) -> int:
        return self.coefficients.size

    def __call__(self, cfg) -> float:
        """``sum_i c_i eta_i``; ``cfg`` may also be an ``(S, N)`` array of states."""
        eta = np.asarray(cfg if not isinstance(cfg, Configuration) else cfg.occupations)
        return eta @ self.coefficients


@dataclass(frozen=True)
class LEQExpansion:
    """Zeroth and first order terms of the density and fugacity profiles."""

    rho0: np.ndarray
    rho1: np.ndarray
    theta0: np.ndarray
    theta1: np.ndarray


def leq_expansion(b: float, d: float, m: float, N: int) -> LEQExpansion:
    _check_subcritical(b, d)
    D = _weak_denominator(b, d, m, N)
    i = np.arange(1, N + 1)
    rho0 = np.full(N, b * m / (d - b))
    rho1 = b * d * m * (N + 1) / D - 2 * b * d * m * i / D
    theta0 = rho0 / (m + rho0)
    theta1 = m * rho1 / (m + rho0) ** 2
    return LEQExpansion(rho0, rho1, theta0, theta1)


def leq_first_order_coefficients(b: float, d: float, m: float, N: int) -> LinearCorrection:
    """Exponent weights ``theta1_i / theta0_i`` of the local-equilibrium measure to first order."""
    ex = leq_expansion(b, d, m, N)
    return LinearCorrection(ex.theta1 / ex.theta0)


def leq_closed_form_coefficients(b: float, d: float, m: float, N: int) -> LinearCorrection:
    _check_subcritical(b, d)
    i = np.arange(1, N + 1)
    return LinearCorrection((N + 1 - 2 * i) / (N - 1 + 2 * m / (d - b)))


def leq_log_partition_slope(b: float, d: float, m: float, N: int) -> float:
    """``d/d eps`` at 0 of ``sum_i log Z(theta_i(eps))``; zero because the ``c_i`` sum to zero."""
    ex = leq_expansion(b, d, m, N)
    return float(np.sum(m * ex.theta1 / (1.0 - ex.theta0)))


def mclennan_coefficients(b: float, d: float, m: float, N: int) -> LinearCorrection:
    """Coefficients ``c_i = A + B i`` solving ``L(sum c_i eta_i) = (b-d)(eta_1 - eta_N)``.

    The first-order stationary measure is ``nu_eq * exp(eps * sum_i c_i eta_i)``.
    """
    if not (b > 0 and d > 0 and m > 0):
        raise ParameterError("b, d and m must be positive")
    if b == d:
        raise DegenerateDenominatorError("McLennan coefficients need b != d")
    den = N - 1 - 2 * m / (b - d)
    if abs(den) <= _DEGENERATE_RTOL * (N + 1 + abs(2 * m / (b - d))):
        raise DegenerateDenominatorError(f"N - 1 - 2m/(b-d) vanishes for b={b}, d={d}, m={m}, N={N}")
    A = (N + 1) / den
    B = -2 / den
    return LinearCorrection(A + B * np.arange(1, N + 1), A=A, B=B)
