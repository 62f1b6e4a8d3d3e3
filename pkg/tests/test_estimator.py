"""Solver tests: closed-form targets, optimizer oracles, failure modes."""

import numpy as np
import pytest
from scipy.optimize import minimize

from acss import AcssConfig, RidgeRegularizer, ZERO_REG, draw_noise, solve_perturbed
from acss.estimator import effective_radius
from acss.models import (
    BehrensFisherModel,
    GaussianMeanModel,
    GlmModel,
    SpatialModel,
)


def test_config_rejects_negative_sigma():
    with pytest.raises(ValueError):
        AcssConfig(sigma=-1.0)


class TestClosedFormTarget:
    def test_gaussian_mean_exact(self):
        # for the Gaussian-mean fixture the perturbed stationary point has
        # the closed form xbar - sigma * w / n
        rng = np.random.default_rng(31)
        for _ in range(100):
            n = int(rng.integers(3, 40))
            sigma = float(rng.uniform(0.1, 5.0))
            model = GaussianMeanModel(n)
            x = rng.normal(rng.uniform(-2, 2), 1.0, n)
            w = draw_noise(1, rng)
            est = solve_perturbed(model, ZERO_REG, x, w, AcssConfig(sigma=sigma))
            target = x.mean() - sigma * w[0] / n
            assert est.is_ssosp
            assert abs(est.theta_hat[0] - target) <= 1e-8
            assert est.min_hess_eig == pytest.approx(n)
            assert not est.active_at_boundary

    def test_ridge_changes_target(self):
        # with an l2 penalty the stationary point solves
        # n (theta - xbar) + lam theta + sigma w = 0
        rng = np.random.default_rng(32)
        model = GaussianMeanModel(20)
        x = rng.normal(1.0, 1.0, 20)
        w = draw_noise(1, rng)
        lam = 3.0
        est = solve_perturbed(model, RidgeRegularizer(lam), x, w, AcssConfig(sigma=2.0))
        target = (20 * x.mean() - 2.0 * w[0]) / (20 + lam)
        assert est.is_ssosp
        assert abs(est.theta_hat[0] - target) <= 1e-8

    def test_location_equivariance(self):
        # shifting every observation by c shifts the fitted mean by c
        rng = np.random.default_rng(33)
        model = GaussianMeanModel(15)
        x = rng.normal(0.0, 1.0, 15)
        w = draw_noise(1, rng)
        cfg = AcssConfig(sigma=0.7)
        base = solve_perturbed(model, ZERO_REG, x, w, cfg)
        for c in (-2.5, 0.1, 4.0):
            shifted = solve_perturbed(model, ZERO_REG, x + c, w, cfg)
            assert abs(shifted.theta_hat[0] - base.theta_hat[0] - c) <= 1e-8


class TestAgainstScipy:
    def test_unperturbed_logistic_matches_bfgs(self):
        rng = np.random.default_rng(33)
        Z = rng.standard_normal((60, 3))
        model = GlmModel(Z, family="logistic")
        x = model.sample(np.array([0.5, -0.25, 0.0]), rng)
        est = solve_perturbed(model, ZERO_REG, x, np.zeros(3), AcssConfig(sigma=0.0))
        res = minimize(lambda t: model.neg_loglik(t, x), np.zeros(3),
                       jac=lambda t: model.grad_neg_loglik(t, x),
                       method="BFGS", options={"gtol": 1e-10})
        assert est.is_ssosp
        assert np.allclose(est.theta_hat, res.x, atol=1e-6)

    def test_perturbed_logistic_matches_scipy(self):
        rng = np.random.default_rng(34)
        Z = rng.standard_normal((50, 2))
        model = GlmModel(Z, family="logistic")
        x = model.sample(np.array([0.3, 0.3]), rng)
        w = draw_noise(2, rng)
        sigma = np.sqrt(10.0)
        est = solve_perturbed(model, ZERO_REG, x, w, AcssConfig(sigma=sigma))

        def obj(t):
            return model.neg_loglik(t, x) + sigma * w @ t

        res = minimize(obj, np.zeros(2), method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12})
        assert est.is_ssosp
        assert np.allclose(est.theta_hat, res.x, atol=1e-5)


class TestStationarity:
    def test_gradient_balances_noise(self):
        # at the reported optimum the model gradient cancels the noise term
        rng = np.random.default_rng(35)
        model = BehrensFisherModel(20, 25)
        x = model.sample(np.array([0.0, 1.0, 2.0]), rng)
        w = draw_noise(3, rng)
        est = solve_perturbed(model, ZERO_REG, x, w, AcssConfig(sigma=1.0))
        assert est.is_ssosp
        resid = model.grad_neg_loglik(est.theta_hat, x) + 1.0 * w
        assert np.linalg.norm(resid) <= 1e-7

    def test_warm_start_at_optimum_takes_no_step(self):
        rng = np.random.default_rng(36)
        model = BehrensFisherModel(15, 15)
        x = model.sample(np.array([0.5, 1.5, 0.5]), rng)
        w = draw_noise(3, rng)
        cfg = AcssConfig(sigma=1.0)
        first = solve_perturbed(model, ZERO_REG, x, w, cfg)
        assert first.is_ssosp
        again = solve_perturbed(model, ZERO_REG, x, w, cfg,
                                theta_start=first.theta_hat)
        assert again.is_ssosp
        assert again.iterations == 0
        assert np.array_equal(again.theta_hat, first.theta_hat)


class TestFailureModes:
    def test_zero_iteration_budget_fails(self):
        model = GaussianMeanModel(10)
        x = np.arange(10.0)
        est = solve_perturbed(model, ZERO_REG, x, np.array([0.4]),
                              AcssConfig(sigma=1.0, max_iter=0))
        assert not est.is_ssosp

    def test_non_finite_data_fails_without_raising(self):
        model = GaussianMeanModel(5)
        x = np.array([0.0, 1.0, np.nan, 2.0, 3.0])
        est = solve_perturbed(model, ZERO_REG, x, np.array([0.1]),
                              AcssConfig(sigma=1.0))
        assert not est.is_ssosp

    def test_boundary_contact_is_flagged(self):
        # a tiny trust ball with a strong noise pull parks the iterate on
        # the ball surface, which must be reported and rejected
        rng = np.random.default_rng(37)
        model = SpatialModel(side=4)
        x = model.sample(np.array([0.8]), rng)
        est = solve_perturbed(model, ZERO_REG, x, np.array([50.0]),
                              AcssConfig(sigma=1.0, init_radius_rule=1e-6))
        assert not est.is_ssosp
        assert est.active_at_boundary
        assert np.linalg.norm(est.theta_hat - est.theta_init) <= est.radius + 1e-12

    def test_interior_spatial_solve_succeeds(self):
        rng = np.random.default_rng(38)
        model = SpatialModel(side=10)
        x = model.sample(np.array([0.25]), rng)
        est = solve_perturbed(model, ZERO_REG, x, draw_noise(1, rng),
                              AcssConfig(sigma=1.0, init_radius_rule="max"))
        assert est.is_ssosp
        assert model.param_in_domain(est.theta_hat)
        assert np.linalg.norm(est.theta_hat - est.theta_init) < est.radius


class TestEffectiveRadius:
    def test_default_rule_quarter_power(self):
        model = GaussianMeanModel(16)
        x = np.zeros(16)
        assert effective_radius(model, x, np.array([0.0]), "default") == pytest.approx(0.5)

    def test_max_rule_uses_domain_cap(self):
        model = SpatialModel(side=3)
        x = np.zeros(9)
        r = effective_radius(model, x, np.array([2.0]), "max")
        assert r == pytest.approx(2.0 - 2e-8, abs=1e-12)

    def test_float_and_callable_rules(self):
        model = GaussianMeanModel(16)
        x = np.zeros(16)
        assert effective_radius(model, x, np.array([0.0]), 0.05) == 0.05
        rule = lambda m, xx, t0: 0.125
        assert effective_radius(model, x, np.array([0.0]), rule) == 0.125

    def test_domain_cap_binds(self):
        model = BehrensFisherModel(20, 15)
        x = np.zeros(35)
        theta_init = np.array([0.0, 0.01, 5.0])
        r = effective_radius(model, x, theta_init, "default")
        assert r == pytest.approx(0.01 - 1e-8, abs=1e-12)

    def test_unknown_rule_rejected(self):
        model = GaussianMeanModel(4)
        with pytest.raises(ValueError):
            effective_radius(model, np.zeros(4), np.array([0.0]), "huge")


def test_draw_noise_scale():
    rng = np.random.default_rng(39)
    draws = np.array([draw_noise(4, rng) for _ in range(50000)])
    assert draws.shape == (50000, 4)
    assert np.allclose(draws.mean(axis=0), 0.0, atol=0.01)
    assert np.allclose(draws.var(axis=0), 0.25, atol=0.01)
