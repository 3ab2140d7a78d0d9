import math

import numpy as np
import pytest

from widthlab.mfvi import (
    TrainConfig,
    TrainingDiverged,
    VariationalParams,
    bound_check,
    elbo_and_gradient,
    elbo_estimate,
    elbo_gradient,
    expected_error,
    init_variational,
    kl_to_prior,
    posterior_mean_exact_erf,
    posterior_predictive,
    predictive_moments_exact,
    train,
)
from widthlab.priorcore import (
    Activation,
    Architecture,
    Dataset,
    ParamVector,
    PriorConfig,
    activation_prior_variance,
    c_x,
    forward,
    zscore,
)

from oracles import central_difference, mc_kl

UNIT = PriorConfig()
EXPERIMENT = PriorConfig.experiment_defaults()
TWO_POINTS = zscore(Dataset(np.array([[-1.0], [1.0]]), np.array([-1.0, 1.0])))


def random_vp(arch, seed, mu_scale=1.0):
    rng = np.random.default_rng(seed)
    return VariationalParams(mu_scale * rng.standard_normal(arch.n_params), rng.uniform(-1.0, 0.5, arch.n_params))


class TestInit:
    def test_marginal_moments(self):
        arch = Architecture(2, 25_000)
        vp = init_variational(arch, seed=0)
        n = arch.n_params
        theta = vp.mu + vp.sigma * np.random.default_rng(1).standard_normal(n)
        assert abs(theta.mean()) <= 3 * theta.std() / math.sqrt(n)
        var_se = math.sqrt((np.mean((theta - theta.mean()) ** 4) - theta.var() ** 2) / n)
        assert abs(theta.var() - 2.0) <= 3 * var_se
        s2 = vp.sigma2
        assert abs(s2.mean() - 1.0) <= 3 * s2.std() / math.sqrt(n)

    def test_deterministic(self):
        arch = Architecture(1, 50)
        a, b = init_variational(arch, 4), init_variational(arch, 4)
        assert np.array_equal(a.mu, b.mu) and np.array_equal(a.rho, b.rho)


class TestKL:
    def test_zero_at_prior(self):
        assert kl_to_prior(VariationalParams.at_prior(Architecture(1, 10))) == 0.0

    def test_single_mean(self):
        assert kl_to_prior(VariationalParams([1.0], [0.0])) == 0.5

    def test_positive_away_from_prior(self):
        assert kl_to_prior(VariationalParams([0.0], [1e-4])) > 0
        assert kl_to_prior(random_vp(Architecture(1, 3), 2)) > 0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_mc(self, seed):
        vp = random_vp(Architecture(1, 2), seed)
        est, se = mc_kl(vp.mu, vp.sigma2, 10**6, np.random.default_rng(100 + seed))
        assert abs(kl_to_prior(vp) - est) <= 3 * se


class TestElbo:
    def test_breakdown_identity(self):
        arch = Architecture(1, 6)
        b = elbo_estimate(random_vp(arch, 0), TWO_POINTS, arch, EXPERIMENT, 8, 0)
        assert b.kl >= 0
        assert b.elbo == -(b.expected_nll + b.kl)

    @pytest.mark.parametrize("k", [125, 2000])
    def test_error_at_prior_is_cx(self, k):
        arch = Architecture(1, k)
        vp = VariationalParams.at_prior(arch)
        const = 0.5 * TWO_POINTS.n * math.log(2 * math.pi * UNIT.sigma2_noise)
        est = np.array([
            elbo_estimate(vp, TWO_POINTS, arch, UNIT, 16, seed).expected_nll - const for seed in range(300)
        ])
        se = est.std(ddof=1) / math.sqrt(est.size)
        assert abs(est.mean() - c_x(TWO_POINTS, arch, UNIT)) <= 3 * se

    def test_zero_residual_limit(self):
        arch = Architecture(1, 1)
        params = ParamVector([[0.8]], [0.1], [1.5])
        y = np.array([forward(arch, EXPERIMENT, params, x) for x in TWO_POINTS.X])
        ds = Dataset(TWO_POINTS.X, y)
        vp = VariationalParams(params.flatten(), np.full(arch.n_params, -30.0))
        b = elbo_estimate(vp, ds, arch, EXPERIMENT, 4, 0)
        assert b.expected_nll == pytest.approx(math.log(2 * math.pi * EXPERIMENT.sigma2_noise), abs=1e-9)

    def test_se_shrinks_like_inverse_sqrt(self):
        arch = Architecture(1, 20)
        vp = random_vp(arch, 3, 0.3)
        sd = {}
        for n in (4, 64):
            vals = [elbo_estimate(vp, TWO_POINTS, arch, EXPERIMENT, n, s).expected_nll for s in range(300)]
            sd[n] = np.std(vals, ddof=1)
        assert sd[4] / sd[64] == pytest.approx(4.0, rel=0.25)

    def test_deterministic(self):
        arch = Architecture(1, 10)
        vp = random_vp(arch, 1)
        assert elbo_estimate(vp, TWO_POINTS, arch, EXPERIMENT, 5, 7) == elbo_estimate(vp, TWO_POINTS, arch, EXPERIMENT, 5, 7)


class TestGradient:
    def test_kl_only(self):
        arch = Architecture(1, 4)
        vp = random_vp(arch, 0)
        g = elbo_gradient(vp, None, arch, EXPERIMENT, 3, 0)
        p = arch.n_params
        np.testing.assert_allclose(g[:p], vp.mu, rtol=1e-15)
        # d/dsigma = sigma - 1/sigma, chain-ruled by dsigma/drho = sigma
        np.testing.assert_allclose(g[p:], (vp.sigma - 1 / vp.sigma) * vp.sigma, rtol=1e-12)

    @pytest.mark.parametrize("act", list(Activation))
    @pytest.mark.parametrize("k", [2, 8])
    def test_finite_differences(self, act, k):
        arch = Architecture(1, k, act)
        data = zscore(Dataset(np.linspace(-1.5, 1.2, 5)[:, None], np.sin(np.linspace(-1.5, 1.2, 5) * 2)))
        vp = random_vp(arch, 10 + k)

        def loss(flat):
            return elbo_estimate(VariationalParams.unflatten(flat), data, arch, EXPERIMENT, 6, 99).loss

        flat = vp.flatten()
        g = elbo_gradient(vp, data, arch, EXPERIMENT, 6, 99)
        fd = central_difference(loss, flat, 1e-5 * np.maximum(1.0, np.abs(flat)))
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6 * np.max(np.abs(fd)))
        assert rel.max() <= 1e-4

    def test_finite_differences_at_prior(self):
        arch = Architecture(1, 8)
        vp = VariationalParams.at_prior(arch)

        def loss(flat):
            return elbo_estimate(VariationalParams.unflatten(flat), TWO_POINTS, arch, EXPERIMENT, 8, 5).loss

        g = elbo_gradient(vp, TWO_POINTS, arch, EXPERIMENT, 8, 5)
        fd = central_difference(loss, vp.flatten(), 1e-5)
        assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6 * np.max(np.abs(fd)))) <= 1e-4

    def test_dead_input_column(self):
        arch = Architecture(2, 3)
        X = np.column_stack([np.linspace(-1, 1, 4), np.zeros(4)])
        ds = Dataset(X, [0.3, -0.2, 0.5, 1.0])
        vp = random_vp(arch, 4)
        g = elbo_gradient(vp, ds, arch, EXPERIMENT, 5, 1)
        kl_only = elbo_gradient(vp, None, arch, EXPERIMENT, 5, 1)
        p = arch.n_params
        dead = np.arange(1, 2 * arch.width, 2)  # w1[k, 1], row-major
        np.testing.assert_array_equal(g[dead], kl_only[dead])
        np.testing.assert_array_equal(g[p + dead], kl_only[p + dead])
        assert not np.allclose(g[dead - 1], kl_only[dead - 1])


class TestTrain:
    def test_schedule(self):
        cfg = TrainConfig(learning_rate=0.001, restart_period=500)
        assert cfg.learning_rate_at(0) == 0.001
        assert cfg.learning_rate_at(250) == pytest.approx(0.0005)
        assert cfg.learning_rate_at(500) == 0.001
        assert cfg.learning_rate_at(499) < 1e-7

    def test_experiment_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.learning_rate, cfg.momentum, cfg.mc_samples, cfg.restart_period) == (
            20000, 0.001, 0.9, 64, 500
        )

    def test_zero_epochs(self):
        arch = Architecture(1, 5)
        vp, trace = train(arch, EXPERIMENT, TWO_POINTS, TrainConfig(epochs=0, seed=3))
        init = init_variational(arch, 3)
        assert np.array_equal(vp.mu, init.mu) and np.array_equal(vp.rho, init.rho)
        assert len(trace) == 0

    def test_deterministic_and_trace(self):
        arch = Architecture(1, 10)
        cfg = TrainConfig(epochs=30, seed=1, record_every=10)
        a, ta = train(arch, EXPERIMENT, TWO_POINTS, cfg)
        b, tb = train(arch, EXPERIMENT, TWO_POINTS, cfg)
        assert np.array_equal(a.flatten(), b.flatten())
        assert ta.epoch == [0, 10, 20, 30]
        np.testing.assert_array_equal(np.array(ta.rows(), float), np.array(tb.rows(), float))

    def test_divergence_raises(self):
        arch = Architecture(1, 3)
        bad = VariationalParams(np.full(arch.n_params, np.nan), np.zeros(arch.n_params))
        with pytest.raises(TrainingDiverged) as info:
            train(arch, EXPERIMENT, TWO_POINTS, TrainConfig(epochs=5), init=bad)
        assert info.value.epoch == 0 and len(info.value.trace) == 1

    def test_improves_on_init_and_prior(self):
        arch = Architecture(1, 125)
        cx = c_x(TWO_POINTS, arch, EXPERIMENT)
        gains, losses, signs = [], [], []
        for seed in range(5):
            cfg = TrainConfig(epochs=1500, seed=seed)
            vp, _ = train(arch, EXPERIMENT, TWO_POINTS, cfg)
            init = init_variational(arch, seed)
            exact = lambda v: expected_error(v, TWO_POINTS, arch, EXPERIMENT) + kl_to_prior(v)
            gains.append(exact(init) - exact(vp))
            losses.append(exact(vp))
            m = predictive_moments_exact(vp, arch, EXPERIMENT, TWO_POINTS.X).means
            signs.append(np.all(np.sign(m) == np.sign(TWO_POINTS.y)))
        assert np.median(gains) > 0
        assert np.median(losses) <= cx
        assert all(signs)


class TestPredictive:
    def test_prior_state(self):
        arch = Architecture(1, 30)
        xs = np.linspace(-2, 2, 6)
        m = posterior_predictive(VariationalParams.at_prior(arch), arch, EXPERIMENT, xs, 20_000, seed=2)
        v = activation_prior_variance(arch, EXPERIMENT, xs[:, None])
        assert np.all(np.abs(m.means) <= 3 * m.mean_se)
        assert np.all(np.abs(m.variances - v) <= 3 * m.var_se)

    def test_point_mass_limit(self):
        arch = Architecture(1, 7, "tanh")
        vp = random_vp(arch, 1)
        vp.rho[:] = -40.0
        xs = np.array([-0.5, 0.2, 1.1])
        m = posterior_predictive(vp, arch, EXPERIMENT, xs, 10, seed=0)
        expect = [forward(arch, EXPERIMENT, ParamVector.unflatten(arch, vp.mu), [x]) for x in xs]
        np.testing.assert_allclose(m.means, expect, rtol=1e-12)
        assert np.all(m.variances < 1e-20)

    @pytest.mark.parametrize("act", list(Activation))
    def test_exact_moments_match_mc(self, act):
        arch = Architecture(1, 8, act)
        vp = random_vp(arch, 6)
        xs = np.linspace(-2, 2, 5)
        mc = posterior_predictive(vp, arch, EXPERIMENT, xs, 10**6, seed=8)
        ex = predictive_moments_exact(vp, arch, EXPERIMENT, xs)
        assert np.all(np.abs(ex.means - mc.means) <= 3 * mc.mean_se)
        assert np.all(np.abs(ex.variances - mc.variances) <= 3 * mc.var_se)


class TestExactErfMean:
    def test_zero_output_means(self):
        arch = Architecture(2, 6)
        vp = random_vp(arch, 0)
        vp.mu[-arch.width :] = 0.0
        assert np.all(posterior_mean_exact_erf(vp, arch, EXPERIMENT, np.ones((3, 2))) == 0.0)

    def test_prior(self):
        arch = Architecture(1, 6)
        assert np.all(posterior_mean_exact_erf(VariationalParams.at_prior(arch), arch, EXPERIMENT, [0.3, 1.0]) == 0.0)

    def test_wrong_activation(self):
        arch = Architecture(1, 6, "relu")
        with pytest.raises(ValueError):
            posterior_mean_exact_erf(VariationalParams.at_prior(arch), arch, EXPERIMENT, [0.0, 1.0])

    def test_against_mc(self):
        arch = Architecture(1, 8)
        vp = random_vp(arch, 12)
        xs = np.linspace(-2, 2, 7)
        mc = posterior_predictive(vp, arch, EXPERIMENT, xs, 10**6, seed=13)
        assert np.all(np.abs(posterior_mean_exact_erf(vp, arch, EXPERIMENT, xs) - mc.means) <= 3 * mc.mean_se)


class TestBoundCheck:
    grid = np.linspace(-2, 2, 50)

    def test_prior_state(self):
        arch = Architecture(1, 125)
        rep = bound_check(VariationalParams.at_prior(arch), arch, EXPERIMENT, TWO_POINTS, self.grid)
        assert rep.loss_at_params == pytest.approx(rep.c_x, rel=1e-12)
        assert np.all(rep.mean_abs == 0.0)
        assert rep.holds and rep.budgets_hold
        assert np.all(rep.bound >= 0)

    def test_wrong_activation(self):
        arch = Architecture(1, 5, "tanh")
        with pytest.raises(ValueError):
            bound_check(VariationalParams.at_prior(arch), arch, EXPERIMENT, TWO_POINTS, self.grid)

    def test_bound_holds_whenever_loss_below_cx(self):
        # the bound is a consequence of loss <= C_X alone, not of optimality
        rng = np.random.default_rng(0)
        hits = 0
        for trial in range(200):
            k = int(rng.integers(1, 40))
            arch = Architecture(1, k)
            vp = VariationalParams(rng.standard_normal(arch.n_params) * rng.uniform(0, 2), rng.uniform(-2, 0.5, arch.n_params))
            rep = bound_check(vp, arch, EXPERIMENT, TWO_POINTS, self.grid)
            assert rep.holds
            if rep.premise_holds:
                hits += 1
                assert rep.budgets_hold
                assert np.all(rep.mean_abs <= rep.bound)
        assert hits > 20

    def test_output_budget_contrapositive(self):
        # exceeding the output-weight mean budget forces loss above C_X
        rng = np.random.default_rng(1)
        for trial in range(200):
            k = int(rng.integers(1, 300))
            arch = Architecture(1, k)
            cx = c_x(TWO_POINTS, arch, EXPERIMENT)
            vp = VariationalParams(rng.standard_normal(arch.n_params), rng.uniform(-1, 0.3, arch.n_params))
            w2 = vp.mu[-k:]
            w2 *= math.sqrt(2 * cx * rng.uniform(1.0001, 3) / np.sum(w2**2))
            rep = bound_check(vp, arch, EXPERIMENT, TWO_POINTS, self.grid)
            assert rep.w2_budget_used > rep.w2_budget
            assert rep.loss_at_params > cx
