"""Plug-in conditional density of the data given the perturbed estimate.

Conditioning on the solved parameter theta_hat leaves the data with an
unnormalized density over the set of datasets that *could* have produced
theta_hat under some noise vector. On that set the density is

    log f(x; theta_hat)
      - d * ||grad L(theta_hat; x)||^2 / (2 sigma^2)
      + log det hess L(theta_hat; x)

with L the penalized (not perturbed) objective: the quadratic term is the
Gaussian log-density of the unique noise vector w* = -grad L / sigma that
maps x to theta_hat, and the determinant is the Jacobian of that map.
Off the set the density is zero.

Membership itself asks whether the solver, fed (x, w*), would actually
return theta_hat: the gradient vanishes by construction, so it reduces to
the remaining optimality conditions, a positive-definite Hessian and (for
models solved over a trust ball) theta_hat falling strictly inside the
ball built from x. `membership_resolve` runs that solver call literally;
the batched fast path must agree with it and the test suite holds the two
routes together.
"""

from __future__ import annotations

import numpy as np

from .api import Model, Regularizer
from .estimator import (
    AcssConfig,
    BOUNDARY_MARGIN,
    EIG_TOL,
    SsospEstimate,
    effective_radius,
    solve_perturbed,
)


class ConditionalContext:
    """Batched evaluator of the conditional density at a fixed theta_hat."""

    def __init__(self, model: Model, reg: Regularizer, theta_hat: np.ndarray,
                 sigma: float, cfg: AcssConfig):
        if sigma <= 0:
            raise ValueError("sigma must be positive to condition on the estimate")
        self.model = model
        self.reg = reg
        self.theta_hat = np.asarray(theta_hat, dtype=float)
        self.sigma = float(sigma)
        self.cfg = cfg
        self.cache = model.make_param_cache(self.theta_hat)
        self._const_logdet: np.ndarray | None = None

    # -- density core ---------------------------------------------------------

    def _logdet_pd(self, parts, X) -> np.ndarray:
        """Log-determinant of the penalized Hessian; -inf where not PD at tolerance."""
        if parts.hess is not None:
            eigs = np.linalg.eigvalsh(parts.hess)
            scale = np.maximum(np.abs(eigs[:, 0]), np.abs(eigs[:, -1]))
            pd = eigs[:, 0] > EIG_TOL * (1.0 + scale)
            logdet = np.where(pd, np.log(np.maximum(eigs, 1e-300)).sum(axis=1), -np.inf)
            return logdet
        if self.model.hess_is_constant:
            if self._const_logdet is None:
                H = (self.model.hess_neg_loglik(self.theta_hat, X[0])
                     + self.reg.hess(self.theta_hat))
                eigs = np.linalg.eigvalsh(H)
                scale = max(abs(eigs[0]), abs(eigs[-1]))
                if eigs[0] > EIG_TOL * (1.0 + scale):
                    self._const_logdet = np.array(np.log(eigs).sum())
                else:
                    self._const_logdet = np.array(-np.inf)
            return np.broadcast_to(self._const_logdet, X.shape[:1]).copy()
        # scalar, data-dependent Hessian
        h = parts.min_hess_eig
        pd = h > EIG_TOL * (1.0 + np.abs(h))
        return np.where(pd, parts.log_det_hess, -np.inf)

    def core_batch(self, X: np.ndarray) -> np.ndarray:
        """loglik - d ||g||^2 / (2 sigma^2) + logdet(H); -inf where H not PD."""
        parts = self.model.density_parts_batch(self.theta_hat, X, cache=self.cache,
                                               reg=self.reg)
        g2 = np.einsum("bd,bd->b", parts.grad, parts.grad)
        quad = self.model.d * g2 / (2.0 * self.sigma ** 2)
        return parts.loglik - quad + self._logdet_pd(parts, X)

    # -- trust-ball membership -------------------------------------------------

    def ball_ok_batch(self, X: np.ndarray) -> np.ndarray:
        """theta_hat strictly inside each dataset's trust ball (always for convex fits)."""
        B = X.shape[0]
        if self.model.strictly_convex:
            return np.ones(B, dtype=bool)
        inits = self.model.batch_initial_estimates(X)
        caps = self.model.batch_domain_caps(inits)
        cap_margin = np.where(np.isfinite(caps),
                              caps - 1e-8 * np.maximum(1.0, caps), np.inf)
        rule = self.cfg.init_radius_rule
        if rule == "default":
            r = np.full(B, self.model.n_obs ** (-0.25))
        elif rule == "max":
            r = np.full(B, np.inf)
        elif callable(rule):
            r = np.array([float(rule(self.model, X[b], inits[b])) for b in range(B)])
        else:
            r = np.full(B, float(rule))
        radius = np.minimum(r, cap_margin)
        dist = np.linalg.norm(self.theta_hat[None, :] - inits, axis=1)
        return dist < radius * (1.0 - BOUNDARY_MARGIN)

    def member_batch(self, X: np.ndarray) -> np.ndarray:
        return np.isfinite(self.core_batch(X)) & self.ball_ok_batch(X)

    def log_density_batch(self, X: np.ndarray) -> np.ndarray:
        core = self.core_batch(X)
        return np.where(self.ball_ok_batch(X), core, -np.inf)

    def unnorm_log_density(self, x: np.ndarray) -> float:
        return float(self.log_density_batch(x[None])[0])

    # -- literal membership check (reference route for tests) --------------------

    def noise_for(self, x: np.ndarray) -> np.ndarray:
        """The unique w with grad of the perturbed objective zero at theta_hat."""
        g = (self.model.grad_neg_loglik(self.theta_hat, x)
             + self.reg.grad(self.theta_hat))
        return -g / self.sigma

    def membership_resolve(self, x: np.ndarray) -> bool:
        """Re-run the solver at (x, w*(x)), warm-started at theta_hat."""
        est = solve_perturbed(self.model, self.reg, x, self.noise_for(x), self.cfg,
                              theta_start=self.theta_hat)
        return bool(est.is_ssosp and np.array_equal(est.theta_hat, self.theta_hat))
