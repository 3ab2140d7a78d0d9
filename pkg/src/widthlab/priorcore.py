"""Single-hidden-layer network under a factorised Gaussian prior.

Parameters are stored in raw units with a standard-normal prior; the forward
pass multiplies each group by its prior standard deviation and the output by
``1/sqrt(K)`` (NTK scaling), which reproduces the prior with output-weight
variance ``sigma2_w2_tilde / K`` at every width.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import special

__all__ = [
    "Activation",
    "PriorConfig",
    "Architecture",
    "ParamVector",
    "Standardization",
    "Dataset",
    "BoundReport",
    "PredictiveMoments",
    "forward",
    "network_outputs",
    "activation_moments",
    "activation_prior_variance",
    "c_x",
    "c_x_xstar",
    "theorem_bound",
    "prior_function_samples",
    "prior_predictive_moments",
    "upcrossings",
    "zscore",
    "unstandardize",
]

SeedLike = Union[int, Sequence[int], np.random.SeedSequence]

_SQRT_PI = math.sqrt(math.pi)
_GH_NODES = 160
# elements per chunk when materialising (samples, points, width) tensors
_CHUNK_ELEMS = 1 << 22


class Activation(str, enum.Enum):
    ERF = "erf"
    TANH = "tanh"
    RELU = "relu"

    def __call__(self, z):
        if self is Activation.ERF:
            return special.erf(z)
        if self is Activation.TANH:
            return np.tanh(z)
        return np.maximum(z, 0.0)

    def derivative(self, z):
        if self is Activation.ERF:
            return (2.0 / _SQRT_PI) * np.exp(-z * z)
        if self is Activation.TANH:
            t = np.tanh(z)
            return 1.0 - t * t
        return (z > 0.0).astype(float)


@dataclass(frozen=True)
class PriorConfig:
    """Prior variances of the three parameter groups plus observation noise.

    ``sigma2_w2_tilde`` is the width-independent output-weight variance; the
    effective output-weight prior at width K is ``sigma2_w2_tilde / K``.
    """

    sigma2_w1: float = 1.0
    sigma2_b1: float = 1.0
    sigma2_w2_tilde: float = 1.0
    sigma2_noise: float = 1.0

    def __post_init__(self):
        for name in ("sigma2_w1", "sigma2_b1", "sigma2_w2_tilde", "sigma2_noise"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value}")

    @classmethod
    def experiment_defaults(cls) -> "PriorConfig":
        """Prior variance 2 on every group, noise variance 0.01."""
        return cls(2.0, 2.0, 2.0, 0.01)

    @property
    def sd_w1(self) -> float:
        return math.sqrt(self.sigma2_w1)

    @property
    def sd_b1(self) -> float:
        return math.sqrt(self.sigma2_b1)

    @property
    def sd_w2_tilde(self) -> float:
        return math.sqrt(self.sigma2_w2_tilde)


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    width: int
    activation: Activation = Activation.ERF

    def __post_init__(self):
        if int(self.input_dim) != self.input_dim or self.input_dim < 1:
            raise ValueError(f"input_dim must be a positive integer, got {self.input_dim}")
        if int(self.width) != self.width or self.width < 1:
            raise ValueError(f"width must be a positive integer, got {self.width}")
        object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def n_params(self) -> int:
        return self.width * (self.input_dim + 2)

    @property
    def output_scale(self) -> float:
        return 1.0 / math.sqrt(self.width)

    def split(self, flat: np.ndarray):
        """Views ``(w1, b1, w2)`` of a ``(..., n_params)`` array.

        Layout is w1 row-major (K x D), then b1 (K), then w2 (K).
        """
        k, d = self.width, self.input_dim
        if flat.shape[-1] != self.n_params:
            raise ValueError(f"expected trailing dimension {self.n_params}, got {flat.shape[-1]}")
        lead = flat.shape[:-1]
        w1 = flat[..., : k * d].reshape(lead + (k, d))
        b1 = flat[..., k * d : k * (d + 1)]
        w2 = flat[..., k * (d + 1) :]
        return w1, b1, w2


@dataclass
class ParamVector:
    """One network in raw (unit-prior-scale) units."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        self.w1 = np.atleast_2d(np.asarray(self.w1, dtype=float))
        self.b1 = np.atleast_1d(np.asarray(self.b1, dtype=float))
        self.w2 = np.atleast_1d(np.asarray(self.w2, dtype=float))
        k = self.w1.shape[0]
        if self.b1.shape != (k,) or self.w2.shape != (k,):
            raise ValueError(
                f"inconsistent shapes w1={self.w1.shape} b1={self.b1.shape} w2={self.w2.shape}"
            )

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2])

    @classmethod
    def unflatten(cls, arch: Architecture, flat) -> "ParamVector":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (arch.n_params,):
            raise ValueError(f"expected shape ({arch.n_params},), got {flat.shape}")
        w1, b1, w2 = arch.split(flat)
        return cls(w1.copy(), b1.copy(), w2.copy())

    @classmethod
    def zeros(cls, arch: Architecture) -> "ParamVector":
        return cls.unflatten(arch, np.zeros(arch.n_params))

    def check(self, arch: Architecture):
        if self.w1.shape != (arch.width, arch.input_dim):
            raise ValueError(
                f"parameters have shape {self.w1.shape}, architecture expects "
                f"({arch.width}, {arch.input_dim})"
            )


@dataclass(frozen=True)
class Standardization:
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    standardization: Optional[Standardization] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"X has shape {self.X.shape} but y has {self.y.shape[0]} entries")
        if self.y.shape[0] < 1:
            raise ValueError("dataset must contain at least one observation")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]


@dataclass
class BoundReport:
    """Constants and outcome of checking the posterior-mean bound on a grid."""

    c_x: float
    c_x_xstar: np.ndarray
    v_of_x: np.ndarray
    bound: np.ndarray
    loss_at_params: float
    mean_abs: np.ndarray
    holds: bool
    premise_holds: bool = True
    kl: float = 0.0
    error: float = 0.0
    # halved squared-mean sums in native units, and their budgets
    w1_budget_used: np.ndarray = field(default_factory=lambda: np.zeros(0))
    w1_budget: np.ndarray = field(default_factory=lambda: np.zeros(0))
    b1_budget_used: float = 0.0
    b1_budget: float = 0.0
    w2_budget_used: float = 0.0
    w2_budget: float = 0.0

    @property
    def budgets_hold(self) -> bool:
        return (
            bool(np.all(self.w1_budget_used <= self.w1_budget))
            and self.b1_budget_used <= self.b1_budget
            and self.w2_budget_used <= self.w2_budget
        )


@dataclass
class PredictiveMoments:
    """Pointwise predictive means and variances with Monte Carlo standard errors.

    ``mean_se``/``var_se`` are zero for exact (quadrature) moments.
    """

    means: np.ndarray
    variances: np.ndarray
    mean_se: np.ndarray
    var_se: np.ndarray
    samples: Optional[np.ndarray] = None

    @classmethod
    def from_samples(cls, samples: np.ndarray, keep: bool = False) -> "PredictiveMoments":
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        if n < 2:
            raise ValueError("need at least two samples for moment estimates")
        means = samples.mean(axis=0)
        centred = samples - means
        m2 = np.mean(centred**2, axis=0)
        m4 = np.mean(centred**4, axis=0)
        variances = m2 * n / (n - 1)
        mean_se = np.sqrt(variances / n)
        var_se = np.sqrt(np.maximum(m4 - m2 * m2, 0.0) / n)
        return cls(means, variances, mean_se, var_se, samples if keep else None)


def _as_points(x, input_dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and input_dim == 1 and x.shape[0] != 1:
        x = x[:, None]
    x = np.atleast_2d(x)
    if x.shape[-1] != input_dim:
        raise ValueError(f"inputs have dimension {x.shape[-1]}, architecture expects {input_dim}")
    return x


def preactivations(prior: PriorConfig, w1, b1, X) -> np.ndarray:
    """Hidden pre-activations of shape ``(S, N, K)`` from stacked raw weights.

    ``w1`` is ``(S, K, D)``, ``b1`` is ``(S, K)`` and ``X`` is ``(N, D)``.
    """
    z = np.einsum("skd,nd->snk", w1, X, optimize=True) if X.shape[1] > 1 else (
        w1[:, None, :, 0] * X[None, :, 0, None]
    )
    return prior.sd_w1 * z + prior.sd_b1 * b1[:, None, :]


def network_outputs(arch: Architecture, prior: PriorConfig, w1, b1, w2, X) -> np.ndarray:
    """Outputs ``(S, N)`` for a stack of S raw parameter draws."""
    z = preactivations(prior, w1, b1, X)
    h = arch.activation(z)
    scale = prior.sd_w2_tilde * arch.output_scale
    return scale * np.einsum("snk,sk->sn", h, w2, optimize=True)


def forward(arch: Architecture, prior: PriorConfig, params: ParamVector, x) -> float:
    """Network output at a single input ``x`` of length D."""
    params.check(arch)
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (arch.input_dim,):
        raise ValueError(f"input has shape {x.shape}, architecture expects ({arch.input_dim},)")
    z = prior.sd_w1 * params.w1 @ x + prior.sd_b1 * params.b1
    h = arch.activation(z)
    return float(prior.sd_w2_tilde * arch.output_scale * np.dot(params.w2, h))


def _gauss_hermite(n: int = _GH_NODES):
    nodes, weights = np.polynomial.hermite_e.hermegauss(n)
    return nodes, weights / math.sqrt(2.0 * math.pi)


_GH = _gauss_hermite()


def _gh_expect(fn, mean, sd):
    nodes, weights = _GH
    mean = np.asarray(mean, dtype=float)[..., None]
    sd = np.asarray(sd, dtype=float)[..., None]
    return np.sum(weights * fn(mean + sd * nodes), axis=-1)


def activation_moments(activation: Activation, mean, variance):
    """``(E[psi(z)], E[psi(z)^2])`` for z ~ N(mean, variance), elementwise.

    Erf uses the Gaussian-erf identity for the mean and Owen's T function for
    the second moment; ReLU uses the rectified-Gaussian moments; tanh uses
    Gauss-Hermite quadrature.
    """
    activation = Activation(activation)
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if activation is Activation.ERF:
        denom = np.sqrt(1.0 + 2.0 * variance)
        first = special.erf(mean / denom)
        h = math.sqrt(2.0) * mean / denom
        a = 1.0 / np.sqrt(1.0 + 4.0 * variance)
        second = 1.0 - 8.0 * special.owens_t(h, a)
        return first, np.clip(second, 0.0, 1.0)
    if activation is Activation.RELU:
        sd = np.sqrt(variance)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(sd > 0, mean / np.where(sd > 0, sd, 1.0), np.sign(mean) * np.inf)
        cdf = special.ndtr(t)
        pdf = np.where(np.isfinite(t), np.exp(-0.5 * np.where(np.isfinite(t), t, 0.0) ** 2), 0.0)
        pdf = pdf / math.sqrt(2.0 * math.pi)
        first = mean * cdf + sd * pdf
        second = (mean * mean + variance) * cdf + mean * sd * pdf
        return first, second
    sd = np.sqrt(variance)
    return _gh_expect(np.tanh, mean, sd), _gh_expect(lambda z: np.tanh(z) ** 2, mean, sd)


def _prior_preact_variance(prior: PriorConfig, X: np.ndarray) -> np.ndarray:
    return prior.sigma2_w1 * np.sum(X * X, axis=-1) + prior.sigma2_b1


def activation_prior_variance(arch: Architecture, prior: PriorConfig, x):
    """Prior predictive variance V(x) of the network output.

    Equals ``sigma2_w2_tilde * E[psi(s eps)^2]`` with
    ``s^2 = sigma2_w1 |x|^2 + sigma2_b1``. For the odd activations this is the
    variance of ``psi(s eps)``; for ReLU the non-zero activation mean is part of
    the output variance because the output weights are centred.

    Accepts a single input (returns float) or a ``(T, D)`` array.
    """
    pts = _as_points(x, arch.input_dim)
    s2 = _prior_preact_variance(prior, pts)
    if arch.activation is Activation.ERF:
        second = (2.0 / math.pi) * np.arcsin(2.0 * s2 / (1.0 + 2.0 * s2))
    elif arch.activation is Activation.TANH:
        second = _gh_expect(lambda z: np.tanh(z) ** 2, 0.0, np.sqrt(s2))
    else:
        second = _gh_expect(lambda z: np.maximum(z, 0.0) ** 2, 0.0, np.sqrt(s2))
    v = prior.sigma2_w2_tilde * second
    x_arr = np.asarray(x, dtype=float)
    if x_arr.ndim <= 1 and pts.shape[0] == 1 and x_arr.size == arch.input_dim:
        return float(v[0])
    return v


def c_x(dataset: Dataset, arch: Architecture, prior: PriorConfig) -> float:
    """Data-fit term of the loss evaluated at the prior; independent of width."""
    if dataset.n < 1:
        raise ValueError("dataset is empty")
    v = activation_prior_variance(arch, prior, dataset.X)
    return float(np.sum(dataset.y**2 + v) / (2.0 * prior.sigma2_noise))


def c_x_xstar(c_x_value: float, x_star, prior: PriorConfig) -> float:
    """Budget on the summed squared pre-activation means at test input ``x_star``."""
    if c_x_value < 0:
        raise ValueError(f"c_x_value must be >= 0, got {c_x_value}")
    x_star = np.atleast_1d(np.asarray(x_star, dtype=float))
    d = x_star.shape[-1]
    return float(
        2.0 * (d + 1) * c_x_value * (prior.sigma2_w1 * np.sum(x_star**2) + prior.sigma2_b1)
    )


def theorem_bound(k: int, c_x_value: float, c_x_xstar_value, prior: PriorConfig):
    """Upper bound on |E_q f(x*)| for any variational state with loss <= C_X.

    ``sqrt(2 sigma2_w2_tilde C_X) * sqrt(1 - exp(-(4/pi) C_{X,x*} / K))``.
    Vectorises over ``c_x_xstar_value``.
    """
    if k < 1:
        raise ValueError(f"width must be >= 1, got {k}")
    cxx = np.asarray(c_x_xstar_value, dtype=float)
    if c_x_value < 0 or np.any(cxx < 0):
        raise ValueError("constants must be non-negative")
    out = np.sqrt(2.0 * prior.sigma2_w2_tilde * c_x_value) * np.sqrt(
        -np.expm1(-(4.0 / math.pi) * cxx / k)
    )
    return float(out) if out.ndim == 0 else out


def _seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _sample_functions(arch, prior, X, n_samples, rng, draw) -> np.ndarray:
    per = max(1, _CHUNK_ELEMS // (X.shape[0] * arch.width))
    out = np.empty((n_samples, X.shape[0]))
    for start in range(0, n_samples, per):
        stop = min(n_samples, start + per)
        flat = draw(rng, stop - start)
        w1, b1, w2 = arch.split(flat)
        out[start:stop] = network_outputs(arch, prior, w1, b1, w2, X)
    return out


def prior_function_samples(
    arch: Architecture,
    prior: PriorConfig,
    xs,
    n_samples: int,
    seed: SeedLike,
    n_blocks: int = 1,
) -> np.ndarray:
    """Network outputs ``(n_samples, T)`` under i.i.d. prior parameter draws.

    Samples are split into ``n_blocks`` contiguous blocks, each with a seed
    spawned from ``seed``; output depends only on (seed, n_blocks).
    """
    X = _as_points(xs, arch.input_dim)
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    children = _seed_sequence(seed).spawn(n_blocks)
    edges = np.linspace(0, n_samples, n_blocks + 1).astype(int)

    def draw(rng, m):
        return rng.standard_normal((m, arch.n_params))

    parts = [
        _sample_functions(arch, prior, X, int(hi - lo), np.random.default_rng(child), draw)
        for child, lo, hi in zip(children, edges[:-1], edges[1:])
    ]
    return np.concatenate(parts, axis=0)


def prior_predictive_moments(
    arch: Architecture,
    prior: PriorConfig,
    xs,
    n_samples: int,
    seed: SeedLike,
    n_blocks: int = 1,
    keep_samples: bool = False,
) -> PredictiveMoments:
    """Monte Carlo prior predictive mean and variance at each row of ``xs``."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    samples = prior_function_samples(arch, prior, xs, n_samples, seed, n_blocks)
    return PredictiveMoments.from_samples(samples, keep=keep_samples)


def upcrossings(grid_x, f_values) -> list[float]:
    """Locations where ``f`` crosses zero from below, linearly interpolated."""
    grid_x = np.asarray(grid_x, dtype=float).ravel()
    f = np.asarray(f_values, dtype=float).ravel()
    if grid_x.shape != f.shape:
        raise ValueError(f"grid has {grid_x.size} points but f has {f.size} values")
    if np.any(np.diff(grid_x) <= 0):
        raise ValueError("grid_x must be strictly increasing")
    lo, hi = f[:-1], f[1:]
    idx = np.nonzero((lo < 0.0) & (hi >= 0.0))[0]
    frac = -lo[idx] / (hi[idx] - lo[idx])
    return (grid_x[idx] + frac * (grid_x[idx + 1] - grid_x[idx])).tolist()


def zscore(dataset: Dataset) -> Dataset:
    """Centre and scale inputs and outputs to mean 0, population variance 1.

    A single observation is centred with scale fixed to 1.
    """
    X, y = dataset.X, dataset.y
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    if dataset.n == 1:
        x_scale = np.ones(X.shape[1])
        y_scale = 1.0
    else:
        x_scale = X.std(axis=0)
        y_scale = float(y.std())
        bad = [f"x[{j}]" for j in np.nonzero(x_scale == 0)[0]]
        if y_scale == 0:
            bad.append("y")
        if bad:
            raise ValueError(f"cannot standardize zero-variance column(s): {', '.join(bad)}")
    record = Standardization(x_mean, x_scale, y_mean, y_scale)
    return Dataset((X - x_mean) / x_scale, (y - y_mean) / y_scale, record)


def unstandardize(dataset: Dataset) -> Dataset:
    """Invert :func:`zscore`."""
    s = dataset.standardization
    if s is None:
        raise ValueError("dataset carries no standardization record")
    return Dataset(dataset.X * s.x_scale + s.x_mean, dataset.y * s.y_scale + s.y_mean)
