"""Location-scale Gaussian and Student's t densities.

Only what the label losses need: log-densities, the t entropy, and the
moment scaling of the t scale parameter. The special functions are
written out here (Lanczos log-gamma, asymptotic digamma) so the loss
code has no hidden dependency on a particular scipy build.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Lanczos approximation, g = 7, n = 9.
_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


class UndefinedMomentError(ValueError):
    """A moment that does not exist for the given degrees of freedom."""


@dataclass(frozen=True)
class GaussianParams:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class StudentTParams:
    """Student's t with location ``mu`` and *scale* ``sigma`` (not the std)."""

    nu: float
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be > 0, got {self.nu}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


def log_gamma(x: float) -> float:
    x = float(x)
    if not x > 0 or math.isinf(x):
        raise DomainError(f"log_gamma requires 0 < x < inf, got {x}")
    if x < 0.5:
        # reflection: Gamma(x) Gamma(1 - x) = pi / sin(pi x)
        return math.log(math.pi / math.sin(math.pi * x)) - log_gamma(1.0 - x)
    if x == int(x) and x <= 171:
        return math.log(math.factorial(int(x) - 1))
    z = x - 1.0
    acc = _LANCZOS_COEF[0]
    for i in range(1, len(_LANCZOS_COEF)):
        acc += _LANCZOS_COEF[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    return LOG_SQRT_2PI + (z + 0.5) * math.log(t) - t + math.log(acc)


def log_beta(i: float, j: float) -> float:
    if not (i > 0 and j > 0):
        raise DomainError(f"log_beta requires positive arguments, got ({i}, {j})")
    return log_gamma(i) + log_gamma(j) - log_gamma(i + j)


def digamma(x: float) -> float:
    x = float(x)
    if not x > 0 or math.isinf(x):
        raise DomainError(f"digamma requires 0 < x < inf, got {x}")
    shift = 0.0
    while x < 10.0:
        shift -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    # Bernoulli-number asymptotic series
    series = inv2 * (
        1.0 / 12
        - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132))))
    )
    return shift + math.log(x) - 0.5 * inv - series


def gaussian_logpdf(p: GaussianParams, y):
    z = (np.asarray(y, dtype=float) - p.mu) / p.sigma
    out = -LOG_SQRT_2PI - math.log(p.sigma) - 0.5 * z * z
    return float(out) if np.ndim(out) == 0 else out


def studentt_logpdf(p: StudentTParams, y):
    """Log of the t density, normalised with the Beta function B(1/2, nu/2)."""
    z2 = ((np.asarray(y, dtype=float) - p.mu) / p.sigma) ** 2
    out = (
        -log_beta(0.5, 0.5 * p.nu)
        - 0.5 * math.log(p.nu)
        - math.log(p.sigma)
        - 0.5 * (p.nu + 1.0) * np.log1p(z2 / p.nu)
    )
    return float(out) if np.ndim(out) == 0 else out


def studentt_entropy_offset(nu: float) -> float:
    """Entropy of the t with unit scale; H(nu, sigma) = offset(nu) + ln(sigma)."""
    return (
        0.5 * math.log(nu)
        + log_beta(0.5, 0.5 * nu)
        + 0.5 * (nu + 1.0) * (digamma(0.5 * (nu + 1.0)) - digamma(0.5 * nu))
    )


def studentt_entropy(p: StudentTParams) -> float:
    return studentt_entropy_offset(p.nu) + math.log(p.sigma)


def variance_factor(nu: float) -> float:
    """nu / (nu - 2): ratio of the t variance to its squared scale."""
    if not nu > 2:
        raise UndefinedMomentError(f"t variance is undefined for nu <= 2 (nu={nu})")
    return nu / (nu - 2.0)


def scaled_std(p: StudentTParams) -> float:
    return p.sigma * math.sqrt(variance_factor(p.nu))
