"""Mean-field Gaussian variational inference for the single-layer network.

All parameters live in raw units with a N(0, 1) prior (see
:mod:`widthlab.priorcore`), so the KL term is a plain sum over coordinates.
Standard deviations are parameterised as ``sigma = exp(rho)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .priorcore import (
    Activation,
    Architecture,
    BoundReport,
    Dataset,
    PredictiveMoments,
    PriorConfig,
    SeedLike,
    _as_points,
    _seed_sequence,
    activation_moments,
    activation_prior_variance,
    c_x,
    c_x_xstar,
    network_outputs,
    preactivations,
    theorem_bound,
)
from .specfun import expected_erf_moments

__all__ = [
    "VariationalParams",
    "TrainConfig",
    "ElboBreakdown",
    "TrainTrace",
    "TrainingDiverged",
    "init_variational",
    "kl_to_prior",
    "elbo_estimate",
    "elbo_gradient",
    "elbo_and_gradient",
    "train",
    "posterior_predictive",
    "predictive_moments_exact",
    "posterior_mean_exact_erf",
    "bound_check",
    "expected_error",
]

log = logging.getLogger(__name__)

_CHUNK_ELEMS = 1 << 22


@dataclass
class VariationalParams:
    mu: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).ravel()
        self.rho = np.asarray(self.rho, dtype=float).ravel()
        if self.mu.shape != self.rho.shape:
            raise ValueError(f"mu has {self.mu.size} entries but rho has {self.rho.size}")

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.rho)

    @property
    def sigma2(self) -> np.ndarray:
        return np.exp(2.0 * self.rho)

    @classmethod
    def at_prior(cls, arch: Architecture) -> "VariationalParams":
        """The variational state equal to the N(0, 1) raw prior."""
        return cls(np.zeros(arch.n_params), np.zeros(arch.n_params))

    @classmethod
    def from_variances(cls, mu, sigma2) -> "VariationalParams":
        return cls(mu, 0.5 * np.log(np.asarray(sigma2, dtype=float)))

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.mu, self.rho])

    @classmethod
    def unflatten(cls, flat) -> "VariationalParams":
        flat = np.asarray(flat, dtype=float)
        half = flat.size // 2
        return cls(flat[:half], flat[half:])

    def copy(self) -> "VariationalParams":
        return VariationalParams(self.mu.copy(), self.rho.copy())

    def check(self, arch: Architecture):
        if self.mu.size != arch.n_params:
            raise ValueError(
                f"variational state has {self.mu.size} parameters, "
                f"architecture expects {arch.n_params}"
            )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20000
    learning_rate: float = 0.001
    momentum: float = 0.9
    mc_samples: int = 64
    clip_norm: float = 10.0
    restart_period: int = 500
    lr_min: float = 0.0
    seed: int = 0
    record_every: int = 100

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.mc_samples < 1 or self.restart_period < 1 or self.record_every < 1:
            raise ValueError("mc_samples, restart_period and record_every must be >= 1")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0")
        if self.lr_min < 0 or self.learning_rate < self.lr_min:
            raise ValueError("need 0 <= lr_min <= learning_rate")

    def learning_rate_at(self, epoch: int) -> float:
        """Cosine-annealed rate with a warm restart every ``restart_period`` epochs."""
        phase = (epoch % self.restart_period) / self.restart_period
        return self.lr_min + 0.5 * (self.learning_rate - self.lr_min) * (1.0 + math.cos(math.pi * phase))


@dataclass(frozen=True)
class ElboBreakdown:
    expected_nll: float
    kl: float

    @property
    def elbo(self) -> float:
        return -(self.expected_nll + self.kl)

    @property
    def loss(self) -> float:
        return self.expected_nll + self.kl


@dataclass
class TrainTrace:
    epoch: list = field(default_factory=list)
    elbo: list = field(default_factory=list)
    kl: list = field(default_factory=list)
    expected_nll: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)

    COLUMNS = ("epoch", "elbo", "kl", "expected_nll", "learning_rate", "grad_norm")

    def append(self, epoch, breakdown: ElboBreakdown, lr, grad_norm):
        if self.epoch and epoch <= self.epoch[-1]:
            raise ValueError("trace epochs must be strictly increasing")
        self.epoch.append(int(epoch))
        self.elbo.append(breakdown.elbo)
        self.kl.append(breakdown.kl)
        self.expected_nll.append(breakdown.expected_nll)
        self.learning_rate.append(float(lr))
        self.grad_norm.append(float(grad_norm))

    def rows(self):
        return list(zip(*(getattr(self, c) for c in self.COLUMNS)))

    def __len__(self):
        return len(self.epoch)


class TrainingDiverged(RuntimeError):
    """Raised when the objective becomes non-finite; carries the trace so far."""

    def __init__(self, message: str, trace: TrainTrace, epoch: int):
        super().__init__(message)
        self.trace = trace
        self.epoch = epoch


def init_variational(arch: Architecture, seed: SeedLike) -> VariationalParams:
    """Normal-inverse-gamma initialisation.

    ``mu ~ N(0, 1)`` and ``sigma^2 ~ InvGamma(nu + 1, nu)`` with ``nu = K``, so
    each parameter's marginal has mean 0, variance 2, and ``E[sigma^2] = 1``.
    """
    rng = np.random.default_rng(_seed_sequence(seed))
    nu = float(arch.width)
    mu = rng.standard_normal(arch.n_params)
    sigma2 = nu / rng.gamma(nu + 1.0, 1.0, size=arch.n_params)
    return VariationalParams.from_variances(mu, sigma2)


def kl_to_prior(vp: VariationalParams) -> float:
    """KL(q || N(0, I)) for the factorised Gaussian ``q``."""
    s2 = vp.sigma2
    # s2 - 1 - log s2 computed as expm1(2 rho) - 2 rho keeps precision near the prior
    return float(0.5 * np.sum(vp.mu**2 + np.expm1(2.0 * vp.rho) - 2.0 * vp.rho)) if s2.size else 0.0


def _draw_eps(seed: SeedLike, n_mc: int, n_params: int) -> np.ndarray:
    return np.random.default_rng(_seed_sequence(seed)).standard_normal((n_mc, n_params))


def _nll_constant(dataset: Dataset, prior: PriorConfig) -> float:
    return 0.5 * dataset.n * math.log(2.0 * math.pi * prior.sigma2_noise)


def _likelihood_pass(vp, dataset, arch, prior, eps, want_grad):
    """Mean over draws of sum_n (y_n - f)^2 / (2 sigma2_noise), plus raw-param gradient."""
    sigma = vp.sigma
    X, y = dataset.X, dataset.y
    n_mc = eps.shape[0]
    scale = prior.sd_w2_tilde * arch.output_scale
    inv_noise = 1.0 / prior.sigma2_noise
    per = max(1, _CHUNK_ELEMS // (dataset.n * arch.width))
    total = 0.0
    g_mu = np.zeros_like(vp.mu) if want_grad else None
    g_rho = np.zeros_like(vp.mu) if want_grad else None
    for start in range(0, n_mc, per):
        e = eps[start : start + per]
        theta = vp.mu + sigma * e
        w1, b1, w2 = arch.split(theta)
        z = preactivations(prior, w1, b1, X)
        h = arch.activation(z)
        f = scale * np.einsum("snk,sk->sn", h, w2, optimize=True)
        r = y - f
        total += 0.5 * inv_noise * float(np.sum(r * r))
        if not want_grad:
            continue
        g_f = -r * (inv_noise / n_mc)  # d(objective)/df, shape (S, N)
        g_w2 = scale * np.einsum("sn,snk->sk", g_f, h, optimize=True)
        g_z = (scale * g_f)[:, :, None] * w2[:, None, :] * arch.activation.derivative(z)
        g_b1 = prior.sd_b1 * g_z.sum(axis=1)
        if X.shape[1] == 1:
            g_w1 = (prior.sd_w1 * np.einsum("snk,n->sk", g_z, X[:, 0], optimize=True))[:, :, None]
        else:
            g_w1 = prior.sd_w1 * np.einsum("snk,nd->skd", g_z, X, optimize=True)
        g_theta = np.concatenate(
            [g_w1.reshape(g_w1.shape[0], -1), g_b1, g_w2], axis=1
        )
        g_mu += g_theta.sum(axis=0)
        g_rho += np.einsum("sp,sp->p", g_theta, e, optimize=True)
    if want_grad:
        g_rho *= sigma
    return total / n_mc, g_mu, g_rho


def elbo_and_gradient(
    vp: VariationalParams,
    dataset: Optional[Dataset],
    arch: Architecture,
    prior: PriorConfig,
    n_mc: int,
    seed: SeedLike,
    want_grad: bool = True,
):
    """Seed-fixed MC objective and its exact gradient with respect to (mu, rho).

    Returns ``(ElboBreakdown, grad)`` where ``grad`` is the gradient of
    ``-elbo`` laid out as ``concat(mu, rho)``. ``dataset=None`` evaluates the
    KL term alone.
    """
    vp.check(arch)
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    kl = kl_to_prior(vp)
    g_mu = vp.mu.copy()
    g_rho = np.expm1(2.0 * vp.rho)
    if dataset is None:
        breakdown = ElboBreakdown(0.0, kl)
    else:
        if dataset.input_dim != arch.input_dim:
            raise ValueError("dataset and architecture input dimensions differ")
        eps = _draw_eps(seed, n_mc, arch.n_params)
        err, l_mu, l_rho = _likelihood_pass(vp, dataset, arch, prior, eps, want_grad)
        breakdown = ElboBreakdown(err + _nll_constant(dataset, prior), kl)
        if want_grad:
            g_mu += l_mu
            g_rho += l_rho
    grad = np.concatenate([g_mu, g_rho]) if want_grad else None
    return breakdown, grad


def elbo_estimate(vp, dataset, arch, prior, n_mc: int, seed: SeedLike) -> ElboBreakdown:
    """Reparameterised MC estimate of the ELBO with the analytic KL."""
    return elbo_and_gradient(vp, dataset, arch, prior, n_mc, seed, want_grad=False)[0]


def elbo_gradient(vp, dataset, arch, prior, n_mc: int, seed: SeedLike) -> np.ndarray:
    """Gradient of ``-elbo_estimate`` (same seed) with respect to ``concat(mu, rho)``."""
    return elbo_and_gradient(vp, dataset, arch, prior, n_mc, seed)[1]


def epoch_seed(seed: int, epoch: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 1, int(epoch)])


def train(
    arch: Architecture,
    prior: PriorConfig,
    dataset: Dataset,
    cfg: TrainConfig,
    init: Optional[VariationalParams] = None,
):
    """Full-batch momentum SGD on ``-ELBO`` with clipping and cosine warm restarts.

    Returns ``(params, trace)``. Deterministic given ``cfg``. Raises
    :class:`TrainingDiverged` when the objective turns non-finite.
    """
    vp = (init if init is not None else init_variational(arch, cfg.seed)).copy()
    vp.check(arch)
    trace = TrainTrace()
    flat = vp.flatten()
    velocity = np.zeros_like(flat)
    half = flat.size // 2
    for epoch in range(cfg.epochs):
        current = VariationalParams(flat[:half], flat[half:])
        breakdown, grad = elbo_and_gradient(
            current, dataset, arch, prior, cfg.mc_samples, epoch_seed(cfg.seed, epoch)
        )
        gnorm = float(np.linalg.norm(grad))
        lr = cfg.learning_rate_at(epoch)
        if not (math.isfinite(breakdown.loss) and math.isfinite(gnorm)):
            trace.append(epoch, breakdown, lr, gnorm)
            raise TrainingDiverged(
                f"non-finite objective at epoch {epoch} (loss={breakdown.loss}, |g|={gnorm})",
                trace,
                epoch,
            )
        if epoch % cfg.record_every == 0:
            trace.append(epoch, breakdown, lr, gnorm)
        if gnorm > cfg.clip_norm:
            grad *= cfg.clip_norm / gnorm
        velocity *= cfg.momentum
        velocity += grad
        flat -= lr * velocity
    vp = VariationalParams(flat[:half].copy(), flat[half:].copy())
    if cfg.epochs > 0 and (cfg.epochs - 1) % cfg.record_every != 0:
        breakdown = elbo_estimate(vp, dataset, arch, prior, cfg.mc_samples, epoch_seed(cfg.seed, cfg.epochs))
        trace.append(cfg.epochs, breakdown, cfg.learning_rate_at(cfg.epochs), float("nan"))
    return vp, trace


def posterior_predictive(
    vp: VariationalParams,
    arch: Architecture,
    prior: PriorConfig,
    xs,
    n_samples: int,
    seed: SeedLike,
    keep_samples: bool = False,
) -> PredictiveMoments:
    """Monte Carlo moments of the network output under ``q``."""
    vp.check(arch)
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    X = _as_points(xs, arch.input_dim)
    rng = np.random.default_rng(_seed_sequence(seed))
    sigma = vp.sigma
    per = max(1, _CHUNK_ELEMS // (X.shape[0] * arch.width))
    out = np.empty((n_samples, X.shape[0]))
    for start in range(0, n_samples, per):
        stop = min(n_samples, start + per)
        theta = vp.mu + sigma * rng.standard_normal((stop - start, arch.n_params))
        out[start:stop] = network_outputs(arch, prior, *arch.split(theta), X)
    return PredictiveMoments.from_samples(out, keep=keep_samples)


def _unit_preact_moments(vp, arch, prior, X):
    """Mean and variance ``(T, K)`` of each hidden pre-activation under ``q``."""
    w1_mu, b1_mu, _ = arch.split(vp.mu)
    w1_s2, b1_s2, _ = arch.split(vp.sigma2)
    mean = prior.sd_w1 * X @ w1_mu.T + prior.sd_b1 * b1_mu
    var = prior.sigma2_w1 * (X * X) @ w1_s2.T + prior.sigma2_b1 * b1_s2
    return mean, var


def predictive_moments_exact(vp, arch, prior, xs) -> PredictiveMoments:
    """Predictive mean and variance under ``q`` without sampling.

    Hidden units are independent under the mean-field family, so both moments
    reduce to per-unit Gaussian expectations of the activation.
    """
    vp.check(arch)
    X = _as_points(xs, arch.input_dim)
    mean_z, var_z = _unit_preact_moments(vp, arch, prior, X)
    e1, e2 = activation_moments(arch.activation, mean_z, var_z)
    _, _, w2_mu = arch.split(vp.mu)
    _, _, w2_s2 = arch.split(vp.sigma2)
    scale2 = prior.sigma2_w2_tilde / arch.width
    means = math.sqrt(scale2) * e1 @ w2_mu
    variances = scale2 * ((w2_mu**2 + w2_s2) * e2 - (w2_mu**2) * e1**2).sum(axis=1)
    zeros = np.zeros_like(means)
    return PredictiveMoments(means, np.maximum(variances, 0.0), zeros, zeros.copy())


def posterior_mean_exact_erf(vp, arch, prior, xs) -> np.ndarray:
    """Closed-form E_q[f(x)] for the erf network via the Gaussian-erf identity."""
    if arch.activation is not Activation.ERF:
        raise ValueError(f"closed-form posterior mean needs the erf activation, got {arch.activation.value}")
    vp.check(arch)
    X = _as_points(xs, arch.input_dim)
    mean_z, var_z = _unit_preact_moments(vp, arch, prior, X)
    _, _, w2_mu = arch.split(vp.mu)
    return prior.sd_w2_tilde * arch.output_scale * expected_erf_moments(mean_z, var_z) @ w2_mu


def expected_error(vp, dataset, arch, prior) -> float:
    """Exact ``sum_n E_q (y_n - f(x_n))^2 / (2 sigma2_noise)``."""
    m = predictive_moments_exact(vp, arch, prior, dataset.X)
    return float(np.sum((dataset.y - m.means) ** 2 + m.variances) / (2.0 * prior.sigma2_noise))


def bound_check(
    vp: VariationalParams,
    arch: Architecture,
    prior: PriorConfig,
    dataset: Dataset,
    xs,
    slack: float = 0.0,
) -> BoundReport:
    """Check the width-collapse bound as an implication at every row of ``xs``.

    The premise is ``loss <= C_X`` where loss is the data-fit term plus KL
    (likelihood normalising constants removed). Both the loss and the
    posterior mean are computed from exact moments, so no MC slack is
    needed; ``slack`` loosens the mean comparison if desired.
    """
    if arch.activation is not Activation.ERF:
        raise ValueError(f"bound check needs the erf activation, got {arch.activation.value}")
    vp.check(arch)
    X = _as_points(xs, arch.input_dim)
    cx = c_x(dataset, arch, prior)
    cxx = np.array([c_x_xstar(cx, x, prior) for x in X])
    bound = theorem_bound(arch.width, cx, cxx, prior)
    mean_abs = np.abs(posterior_mean_exact_erf(vp, arch, prior, X))
    err = expected_error(vp, dataset, arch, prior)
    kl = kl_to_prior(vp)
    loss = err + kl
    premise = loss <= cx
    holds = (not premise) or bool(np.all(mean_abs <= bound + slack))

    w1_mu, b1_mu, w2_mu = arch.split(vp.mu)
    # native-unit means: sd * raw; output weights have prior sd sqrt(s2_tilde / K)
    w1_used = 0.5 * np.sum((prior.sd_w1 * w1_mu) ** 2, axis=0)
    b1_used = 0.5 * float(np.sum((prior.sd_b1 * b1_mu) ** 2))
    w2_native = prior.sd_w2_tilde * arch.output_scale * w2_mu
    w2_used = 0.5 * arch.width * float(np.sum(w2_native**2))
    return BoundReport(
        c_x=cx,
        c_x_xstar=cxx,
        v_of_x=np.atleast_1d(activation_prior_variance(arch, prior, dataset.X)),
        bound=np.atleast_1d(bound),
        loss_at_params=loss,
        mean_abs=mean_abs,
        holds=holds,
        premise_holds=premise,
        kl=kl,
        error=err,
        w1_budget_used=w1_used,
        w1_budget=np.full(arch.input_dim, prior.sigma2_w1 * cx),
        b1_budget_used=b1_used,
        b1_budget=prior.sigma2_b1 * cx,
        w2_budget_used=w2_used,
        w2_budget=prior.sigma2_w2_tilde * cx,
    )
