"""Two Gaussian samples with a common mean and separate variances.

The parameter is theta = (mu, v0, v1) with v0, v1 > 0; the dataset is the
concatenation of the two groups (group 0 first). A curved exponential
family: the common mean ties the two natural parameters together, so no
fixed-dimension sufficient statistic exists and the composite null has to
be handled by conditioning on the perturbed estimator.

Derivatives (all closed-form; S1_k, S2_k are the per-group sums of
(x - mu) and (x - mu)^2):

    dL/dmu   = -sum_k S1_k / v_k
    dL/dv_k  = n_k / (2 v_k) - S2_k / (2 v_k^2)
    H[mu,mu] = sum_k n_k / v_k
    H[mu,v_k] = S1_k / v_k^2
    H[v_k,v_k] = -n_k / (2 v_k^2) + S2_k / v_k^3
    H[v_0,v_1] = 0
"""

from __future__ import annotations

import numpy as np

from ..api import DensityParts, Model, ZERO_REG

_LOG_2PI = np.log(2 * np.pi)
_VAR_FLOOR = 1e-8


class BehrensFisherModel(Model):
    """N(mu, v0) x n0 independent of N(mu, v1) x n1, packed as one vector."""

    has_product_form = True
    is_gaussian = True
    kind = "behrens-fisher"

    def __init__(self, n0: int, n1: int):
        if min(n0, n1) < 2:
            raise ValueError("each group needs at least two observations")
        self.n0, self.n1 = int(n0), int(n1)
        self.n_obs = self.n0 + self.n1
        self.d = 3

    def _split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[..., :self.n0], x[..., self.n0:]

    # -- likelihood ------------------------------------------------------------

    def neg_loglik(self, theta, x):
        mu, v0, v1 = theta
        x0, x1 = self._split(x)
        out = 0.5 * self.n0 * (np.log(v0) + _LOG_2PI) + ((x0 - mu) ** 2).sum() / (2 * v0)
        out += 0.5 * self.n1 * (np.log(v1) + _LOG_2PI) + ((x1 - mu) ** 2).sum() / (2 * v1)
        return float(out)

    def grad_neg_loglik(self, theta, x):
        mu, v0, v1 = theta
        x0, x1 = self._split(x)
        s1 = [(x0 - mu).sum(), (x1 - mu).sum()]
        s2 = [((x0 - mu) ** 2).sum(), ((x1 - mu) ** 2).sum()]
        return np.array([
            -s1[0] / v0 - s1[1] / v1,
            0.5 * self.n0 / v0 - 0.5 * s2[0] / v0 ** 2,
            0.5 * self.n1 / v1 - 0.5 * s2[1] / v1 ** 2,
        ])

    def hess_neg_loglik(self, theta, x):
        mu, v0, v1 = theta
        x0, x1 = self._split(x)
        s1 = [(x0 - mu).sum(), (x1 - mu).sum()]
        s2 = [((x0 - mu) ** 2).sum(), ((x1 - mu) ** 2).sum()]
        H = np.zeros((3, 3))
        H[0, 0] = self.n0 / v0 + self.n1 / v1
        H[0, 1] = H[1, 0] = s1[0] / v0 ** 2
        H[0, 2] = H[2, 0] = s1[1] / v1 ** 2
        H[1, 1] = -0.5 * self.n0 / v0 ** 2 + s2[0] / v0 ** 3
        H[2, 2] = -0.5 * self.n1 / v1 ** 2 + s2[1] / v1 ** 3
        return H

    # -- sampling and estimation ----------------------------------------------

    def sample(self, theta, rng, size=None):
        mu, v0, v1 = theta
        shape0 = (self.n0,) if size is None else (size, self.n0)
        shape1 = (self.n1,) if size is None else (size, self.n1)
        return np.concatenate(
            [rng.normal(mu, np.sqrt(v0), shape0), rng.normal(mu, np.sqrt(v1), shape1)],
            axis=-1)

    def initial_estimate(self, x):
        x0, x1 = self._split(x)
        mu = x.mean()
        v0 = max(((x0 - mu) ** 2).mean(), _VAR_FLOOR)
        v1 = max(((x1 - mu) ** 2).mean(), _VAR_FLOOR)
        return np.array([mu, v0, v1])

    def param_in_domain(self, theta):
        return bool(np.all(np.isfinite(theta)) and theta[1] > 0 and theta[2] > 0)

    def domain_ball_cap(self, theta):
        return float(min(theta[1], theta[2]))

    def batch_domain_caps(self, thetas):
        return np.minimum(thetas[:, 1], thetas[:, 2])

    def batch_initial_estimates(self, X):
        x0, x1 = self._split(X)
        mu = X.mean(axis=1)
        v0 = np.maximum(((x0 - mu[:, None]) ** 2).mean(axis=1), _VAR_FLOOR)
        v1 = np.maximum(((x1 - mu[:, None]) ** 2).mean(axis=1), _VAR_FLOOR)
        return np.column_stack([mu, v0, v1])

    # -- batched evaluation -----------------------------------------------------

    def density_parts_batch(self, theta, X, cache=None, reg=ZERO_REG):
        mu, v0, v1 = theta
        x0, x1 = self._split(X)
        r0, r1 = x0 - mu, x1 - mu
        s1_0, s1_1 = r0.sum(axis=1), r1.sum(axis=1)
        s2_0, s2_1 = (r0 * r0).sum(axis=1), (r1 * r1).sum(axis=1)
        B = X.shape[0]
        ll = -(0.5 * self.n0 * (np.log(v0) + _LOG_2PI) + s2_0 / (2 * v0)
               + 0.5 * self.n1 * (np.log(v1) + _LOG_2PI) + s2_1 / (2 * v1))
        g = np.column_stack([
            -s1_0 / v0 - s1_1 / v1,
            0.5 * self.n0 / v0 - 0.5 * s2_0 / v0 ** 2,
            0.5 * self.n1 / v1 - 0.5 * s2_1 / v1 ** 2,
        ]) + reg.grad(theta)
        H = np.zeros((B, 3, 3))
        H[:, 0, 0] = self.n0 / v0 + self.n1 / v1
        H[:, 0, 1] = H[:, 1, 0] = s1_0 / v0 ** 2
        H[:, 0, 2] = H[:, 2, 0] = s1_1 / v1 ** 2
        H[:, 1, 1] = -0.5 * self.n0 / v0 ** 2 + s2_0 / v0 ** 3
        H[:, 2, 2] = -0.5 * self.n1 / v1 ** 2 + s2_1 / v1 ** 3
        H += reg.hess(theta)
        return DensityParts(loglik=ll, grad=g, hess=H)

    # -- product-form hooks --------------------------------------------------------

    def _obs_var(self, theta):
        return np.concatenate([np.full(self.n0, theta[1]), np.full(self.n1, theta[2])])

    def obs_loglik_batch(self, theta, X, cache=None):
        v = self._obs_var(theta)
        r = X - theta[0]
        return -0.5 * (np.log(v) + _LOG_2PI)[None, :] - r * r / (2 * v)[None, :]

    def resample_obs_batch(self, theta, X, mask, rng, cache=None):
        out = X.copy()
        sd = np.sqrt(self._obs_var(theta))
        draws = theta[0] + sd[None, :] * rng.standard_normal(X.shape)
        out[mask] = draws[mask]
        return out

    # -- Gaussian hooks -----------------------------------------------------------

    def gaussian_mean(self, theta):
        return np.full(self.n_obs, theta[0])

    def cov_factor(self, theta):
        return "diag", np.sqrt(self._obs_var(theta))
