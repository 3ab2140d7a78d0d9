"""Error-function family and the elementary inequality kernels behind the
width-collapse bound.

Every function here is pure. The scalar-facing operations take a
:class:`GaussianScalar`; the ``*_moments`` variants take arrays of means and
variances and broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "GaussianScalar",
    "erf",
    "std_normal_cdf",
    "expected_probit",
    "expected_erf",
    "expected_erf_moments",
    "polya_upper_bound",
    "jensen_exp_bound",
    "cauchy_group_bound",
]

_FOUR_OVER_PI = 4.0 / np.pi


@dataclass(frozen=True)
class GaussianScalar:
    """Univariate normal N(mean, variance); variance 0 is a point mass."""

    mean: float
    variance: float

    def __post_init__(self):
        if not np.isfinite(self.mean):
            raise ValueError(f"mean must be finite, got {self.mean}")
        if not (self.variance >= 0.0) or not np.isfinite(self.variance):
            raise ValueError(f"variance must be finite and >= 0, got {self.variance}")


def erf(z):
    """Error function, 2/sqrt(pi) * integral_0^z exp(-t^2) dt.

    Accepts scalars or arrays; returns a float for scalar input.
    """
    out = special.erf(z)
    return float(out) if np.ndim(out) == 0 else out


def std_normal_cdf(z):
    """Standard normal CDF."""
    out = special.ndtr(z)
    return float(out) if np.ndim(out) == 0 else out


def expected_probit(g: GaussianScalar) -> float:
    """E[Phi(z)] for z ~ g, which equals Phi(mean / sqrt(1 + variance))."""
    return std_normal_cdf(g.mean / np.sqrt(1.0 + g.variance))


def expected_erf(g: GaussianScalar) -> float:
    """E[erf(z)] for z ~ g, which equals erf(mean / sqrt(1 + 2 variance))."""
    return erf(g.mean / np.sqrt(1.0 + 2.0 * g.variance))


def expected_erf_moments(mean, variance):
    """Vectorised :func:`expected_erf` over arrays of means and variances."""
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    return special.erf(mean / np.sqrt(1.0 + 2.0 * variance))


def polya_upper_bound(z):
    """Upper bound 1 - exp(-(4/pi) z^2) on erf(z)^2."""
    z = np.asarray(z, dtype=float)
    out = -np.expm1(-_FOUR_OVER_PI * z * z)
    return float(out) if out.ndim == 0 else out


def jensen_exp_bound(mus, c1: float) -> tuple[float, float]:
    """Both sides of the Jensen bound on a sum of Gaussian-shaped terms.

    Returns ``(lhs, rhs)`` with ``lhs = sum_k exp(-c1 mu_k^2)`` and
    ``rhs = K exp(-(c1/K) sum_k mu_k^2)``; ``lhs >= rhs`` always.
    The budget on ``sum mu_k^2`` is taken at its tightest admissible value,
    the sum itself.
    """
    mus = np.asarray(mus, dtype=float).ravel()
    if mus.size == 0:
        raise ValueError("mus must be non-empty")
    if not c1 > 0:
        raise ValueError(f"c1 must be positive, got {c1}")
    k = mus.size
    sq = mus * mus
    lhs = float(np.sum(np.exp(-c1 * sq)))
    rhs = float(k * np.exp(-(c1 / k) * np.sum(sq)))
    return lhs, rhs


def cauchy_group_bound(a) -> tuple[float, float]:
    """Both sides of the grouped Cauchy-Schwarz bound for a K x M matrix.

    ``lhs = sum_k (sum_m a_km)^2`` and ``rhs = M sum_m sum_k a_km^2``;
    ``lhs <= rhs`` always.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    m = a.shape[1]
    lhs = float(np.sum(np.sum(a, axis=1) ** 2))
    rhs = float(m * np.sum(a * a))
    return lhs, rhs
