"""Gaussian-mean test fixture: X_i ~ N(theta, 1) i.i.d., theta scalar.

Everything about this model is available in closed form, which makes it
the reference fixture for exactness tests:

  - L(theta; x) = n/2 log(2 pi) + sum_i (x_i - theta)^2 / 2
  - grad = n (theta - xbar),  hess = n
  - the perturbed stationary point is theta_hat = xbar - sigma w / n
  - conditioned on theta_hat, X splits into an independent standard-normal
    component orthogonal to the all-ones direction plus a Gaussian mean:
    xbar | theta_hat ~ N(theta_hat, 1 / (n + n^2 / sigma^2)),
    giving an exact i.i.d. conditional sampler.
"""

from __future__ import annotations

import numpy as np

from ..api import DensityParts, Model, ZERO_REG


class GaussianMeanModel(Model):
    """Unit-variance Gaussian location family on R^n."""

    strictly_convex = True
    has_product_form = True
    is_gaussian = True
    hess_is_constant = True
    kind = "gaussian-mean"

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("need at least one observation")
        self.n = int(n)
        self.n_obs = self.n
        self.d = 1

    # -- likelihood -------------------------------------------------------

    def neg_loglik(self, theta: np.ndarray, x: np.ndarray) -> float:
        r = x - theta[0]
        return 0.5 * self.n * np.log(2 * np.pi) + 0.5 * float(r @ r)

    def grad_neg_loglik(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.array([self.n * (theta[0] - x.mean())])

    def hess_neg_loglik(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.array([[float(self.n)]])

    # -- sampling and estimation ------------------------------------------

    def sample(self, theta, rng, size=None):
        shape = (self.n,) if size is None else (size, self.n)
        return rng.normal(theta[0], 1.0, shape)

    def initial_estimate(self, x: np.ndarray) -> np.ndarray:
        return np.array([x.mean()])

    def param_in_domain(self, theta: np.ndarray) -> bool:
        return bool(np.isfinite(theta[0]))

    # -- batched evaluation -------------------------------------------------

    def density_parts_batch(self, theta, X, cache=None, reg=ZERO_REG):
        n = self.n
        r = X - theta[0]
        ll = -0.5 * n * np.log(2 * np.pi) - 0.5 * (r * r).sum(axis=1)
        g = (n * (theta[0] - X.mean(axis=1)))[:, None] + reg.grad(theta)
        h = n + reg.hess(theta)[0, 0]
        B = X.shape[0]
        log_det = np.full(B, np.log(h) if h > 0 else -np.inf)
        return DensityParts(loglik=ll, grad=g,
                            log_det_hess=log_det,
                            min_hess_eig=np.full(B, h))

    # -- product-form hooks --------------------------------------------------

    def obs_loglik_batch(self, theta, X, cache=None):
        r = X - theta[0]
        return -0.5 * np.log(2 * np.pi) - 0.5 * r * r

    def resample_obs_batch(self, theta, X, mask, rng, cache=None):
        out = X.copy()
        k = int(mask.sum())
        out[mask] = rng.normal(theta[0], 1.0, k)
        return out

    # -- Gaussian hooks --------------------------------------------------------

    def gaussian_mean(self, theta):
        return np.full(self.n, theta[0])

    def cov_factor(self, theta):
        return "diag", np.ones(self.n)

    # -- exact conditional sampler ---------------------------------------------

    def sample_conditional_iid(self, theta_hat, sigma, M, rng):
        """Draw M exact i.i.d. copies from the plug-in conditional law.

        Decomposing x = xbar 1 + x_perp, the conditional density
        exp(-||x - theta_hat 1||^2 / 2) * exp(-n^2 (xbar - theta_hat)^2 / (2 sigma^2))
        factorizes: x_perp is standard normal on the hyperplane orthogonal
        to 1, and xbar ~ N(theta_hat, 1 / (n + n^2 / sigma^2)).
        """
        n = self.n
        th = theta_hat[0]
        var_mean = 1.0 / (n + n * n / (sigma * sigma))
        z = rng.standard_normal((M, n))
        z -= z.mean(axis=1, keepdims=True)
        means = rng.normal(th, np.sqrt(var_mean), M)
        return z + means[:, None]
