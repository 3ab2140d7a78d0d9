"""Infinite-width (NNGP) kernels and exact Gaussian-process regression."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .priorcore import Activation, PriorConfig

__all__ = [
    "KernelKind",
    "GpPosterior",
    "DecompositionError",
    "NumericalFault",
    "nngp_kernel",
    "kernel_matrix",
    "gp_fit",
    "gp_predict",
    "JITTER_LADDER",
    "kernel_diag",
]

JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)
_TANH_BLOCK = 8192
_NEG_VAR_TOL = 1e-10


class DecompositionError(np.linalg.LinAlgError):
    pass


class NumericalFault(ArithmeticError):
    pass


@dataclass(frozen=True)
class KernelKind:
    """Which NNGP covariance to use.

    ``tanh_mc`` carries its own sample budget and seed; all pairs share the
    same input-layer draws, so matrices are symmetric and PSD by construction.
    """

    name: str
    n_samples: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.name not in ("erf", "relu", "tanh_mc"):
            raise ValueError(f"unknown kernel kind {self.name!r}")
        if self.name == "tanh_mc" and self.n_samples < 2:
            raise ValueError("tanh_mc needs n_samples >= 2")

    @classmethod
    def erf(cls) -> "KernelKind":
        return cls("erf")

    @classmethod
    def relu(cls) -> "KernelKind":
        return cls("relu")

    @classmethod
    def tanh_mc(cls, n_samples: int = 200_000, seed: int = 0) -> "KernelKind":
        return cls("tanh_mc", n_samples, seed)

    @classmethod
    def for_activation(cls, activation, n_samples: int = 200_000, seed: int = 0) -> "KernelKind":
        activation = Activation(activation)
        if activation is Activation.ERF:
            return cls.erf()
        if activation is Activation.RELU:
            return cls.relu()
        return cls.tanh_mc(n_samples, seed)


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _input_cov(prior: PriorConfig, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return prior.sigma2_w1 * a @ b.T + prior.sigma2_b1


def kernel_matrix(prior: PriorConfig, X1, X2, kind: KernelKind) -> np.ndarray:
    """NNGP covariance ``sigma2_w2_tilde * E[psi(z(x)) psi(z(x'))]`` for all pairs."""
    X1, X2 = _points(X1), _points(X2)
    if X1.shape[1] != X2.shape[1]:
        raise ValueError(f"input dimensions differ: {X1.shape[1]} vs {X2.shape[1]}")
    if kind.name == "tanh_mc":
        return prior.sigma2_w2_tilde * _tanh_mc_cross(prior, X1, X2, kind)
    s12 = _input_cov(prior, X1, X2)
    s11 = prior.sigma2_w1 * np.sum(X1 * X1, axis=1) + prior.sigma2_b1
    s22 = prior.sigma2_w1 * np.sum(X2 * X2, axis=1) + prior.sigma2_b1
    if kind.name == "erf":
        arg = 2.0 * s12 / np.sqrt(np.outer(1.0 + 2.0 * s11, 1.0 + 2.0 * s22))
        k = (2.0 / math.pi) * np.arcsin(np.clip(arg, -1.0, 1.0))
    else:
        norms = np.sqrt(np.outer(s11, s22))
        cos = np.clip(s12 / norms, -1.0, 1.0)
        phi = np.arccos(cos)
        k = norms / (2.0 * math.pi) * (np.sin(phi) + (math.pi - phi) * cos)
    return prior.sigma2_w2_tilde * k


def _tanh_mc_cross(prior, X1, X2, kind) -> np.ndarray:
    rng = np.random.default_rng(kind.seed)
    d = X1.shape[1]
    n2 = 1 if X2 is None else X2.shape[0]
    out = np.zeros((X1.shape[0], n2))
    # fixed block size keeps the draw stream independent of the input shapes
    block = _TANH_BLOCK
    done = 0
    while done < kind.n_samples:
        m = min(block, kind.n_samples - done)
        w = rng.standard_normal((m, d))
        b = rng.standard_normal(m)
        h1 = np.tanh(prior.sd_w1 * X1 @ w.T + prior.sd_b1 * b)
        if X2 is None:
            out[:, 0] += np.sum(h1 * h1, axis=1)
        else:
            out += h1 @ np.tanh(prior.sd_w1 * X2 @ w.T + prior.sd_b1 * b).T
        done += m
    return (out[:, 0] if X2 is None else out) / kind.n_samples


def nngp_kernel(prior: PriorConfig, x, x2, kind: KernelKind) -> float:
    """Scalar NNGP covariance between two inputs."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise ValueError(f"input dimensions differ: {x.shape} vs {x2.shape}")
    return float(kernel_matrix(prior, x[None, :], x2[None, :], kind)[0, 0])


@dataclass(frozen=True)
class GpPosterior:
    train_inputs: np.ndarray
    kind: KernelKind
    prior: PriorConfig
    factor: np.ndarray
    alpha: np.ndarray
    jitter_used: float


def gp_fit(X, y, kind: KernelKind, prior: PriorConfig) -> GpPosterior:
    """Cholesky-factorise ``K + sigma2_noise I``, escalating jitter on failure."""
    X = _points(X)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] < 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"need N >= 1 matching rows, got X {X.shape} and y {y.shape}")
    gram = kernel_matrix(prior, X, X, kind)
    if not np.all(np.isfinite(gram)):
        raise ValueError("kernel matrix is not finite")
    eye = np.eye(X.shape[0])
    for jitter in JITTER_LADDER:
        try:
            factor = linalg.cholesky(gram + (prior.sigma2_noise + jitter) * eye, lower=True)
        except linalg.LinAlgError:
            continue
        alpha = linalg.cho_solve((factor, True), y)
        return GpPosterior(X, kind, prior, factor, alpha, jitter)
    raise DecompositionError(f"Cholesky failed at maximum jitter {JITTER_LADDER[-1]}")


def gp_predict(post: GpPosterior, xs):
    """Posterior ``(means, variances)`` of the latent function at ``xs``."""
    xs = _points(xs)
    k_star = kernel_matrix(post.prior, post.train_inputs, xs, post.kind)
    means = k_star.T @ post.alpha
    v = linalg.solve_triangular(post.factor, k_star, lower=True)
    k_ss = kernel_diag(post.prior, xs, post.kind)
    variances = k_ss - np.sum(v * v, axis=0)
    if np.any(variances < -_NEG_VAR_TOL):
        raise NumericalFault(f"negative predictive variance {variances.min():.3e}")
    return means, np.maximum(variances, 0.0)


def kernel_diag(prior: PriorConfig, X, kind: KernelKind) -> np.ndarray:
    """Prior variances ``k(x, x)``; matches the diagonal of :func:`kernel_matrix`."""
    X = _points(X)
    s11 = prior.sigma2_w1 * np.sum(X * X, axis=1) + prior.sigma2_b1
    if kind.name == "erf":
        k = (2.0 / math.pi) * np.arcsin(2.0 * s11 / (1.0 + 2.0 * s11))
    elif kind.name == "relu":
        k = 0.5 * s11
    else:
        k = _tanh_mc_cross(prior, X, None, kind)
    return prior.sigma2_w2_tilde * k
