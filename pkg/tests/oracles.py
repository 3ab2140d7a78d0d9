"""Slow reference computations used only by the tests."""

from __future__ import annotations

import math

import mpmath
import numpy as np


def erf_series(z: float, dps: int = 80) -> float:
    """Maclaurin series of erf summed in high precision until terms vanish."""
    with mpmath.workdps(dps):
        x = mpmath.mpf(z)
        if abs(x) > 6:
            return math.copysign(1.0, z)  # |1 - erf| < 2e-17 beyond 6
        total = mpmath.mpf(0)
        power = x
        n = 0
        while True:
            term = power / (math.factorial(n) * (2 * n + 1))
            total += term if n % 2 == 0 else -term
            if abs(term) < mpmath.mpf(10) ** (-(dps - 10)) and n > 5:
                break
            n += 1
            power *= x * x
        return float(2 / mpmath.sqrt(mpmath.pi) * total)


def normal_cdf_quad(z: float) -> float:
    """Standard normal CDF by adaptive quadrature of the density."""
    with mpmath.workdps(30):
        return float(mpmath.quad(lambda t: mpmath.exp(-t * t / 2), [-mpmath.inf, 0, z]) / mpmath.sqrt(2 * mpmath.pi))


def mc_mean(fn, mean, var, n, rng):
    """Sample mean and standard error of fn(z), z ~ N(mean, var)."""
    z = mean + math.sqrt(var) * rng.standard_normal(n)
    v = fn(z)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(n))


def mc_kl(mu, sigma2, n, rng):
    """MC estimate of E_q[log q - log p] for factorised q, p = N(0, I)."""
    sd = np.sqrt(sigma2)
    theta = mu + sd * rng.standard_normal((n, mu.size))
    log_q = -0.5 * (((theta - mu) / sd) ** 2 + np.log(2 * np.pi * sigma2))
    log_p = -0.5 * (theta**2 + np.log(2 * np.pi))
    ratio = (log_q - log_p).sum(axis=1)
    return float(ratio.mean()), float(ratio.std(ddof=1) / math.sqrt(n))


def central_difference(fn, x, h):
    """Central finite-difference gradient of scalar fn at x with per-coordinate steps h."""
    x = np.asarray(x, dtype=float)
    h = np.broadcast_to(h, x.shape)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        g[i] = (fn(xp) - fn(xm)) / (2 * h[i])
    return g
