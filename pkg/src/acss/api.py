"""Core interfaces: model contract, regularizers, and the penalized objective.

The testing procedure in this package is built around one object, the
penalized negative log-likelihood

    L(theta; x) = -log f(x; theta) + R(theta),

and its randomly perturbed version

    L(theta; x, w) = L(theta; x) + sigma * w @ theta.

Every model exposes the likelihood and its first two derivatives on a
flattened parameter vector of length ``d``, plus plumbing the samplers
need: forward sampling, an initial estimator, domain geometry for the
trust ball, and batched density evaluations over stacks of datasets.

Architecture note: the Markov chains in :mod:`acss.samplers` advance many
states at once, so the hot path is ``density_parts_batch`` which returns,
for a (B, ...) stack of datasets at a fixed parameter, everything the
conditional density needs per state. Models with structure (constant
Hessian, scalar parameter) override it to avoid generic d x d eigenwork.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np


class AcssError(Exception):
    """Base class for errors raised by this package."""


class NumericalDomainError(AcssError):
    """A numeric operation left its valid domain (bad factorization, NaN)."""


class UnsupportedOperationError(AcssError):
    """The requested sampler or proposal does not apply to this model."""


class ConfigError(AcssError):
    """Invalid experiment configuration or config file."""


# ---------------------------------------------------------------------------
# Regularizers
# ---------------------------------------------------------------------------

class Regularizer:
    """Twice-differentiable penalty R(theta) added to the negative log-likelihood."""

    def value(self, theta: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ZeroRegularizer(Regularizer):
    """R(theta) = 0; the default in all shipped experiments."""

    def value(self, theta: np.ndarray) -> float:
        return 0.0

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return np.zeros_like(theta)

    def hess(self, theta: np.ndarray) -> np.ndarray:
        d = theta.shape[0]
        return np.zeros((d, d))


class RidgeRegularizer(Regularizer):
    """R(theta) = lam/2 * ||theta||^2."""

    def __init__(self, lam: float):
        if lam < 0:
            raise ValueError("ridge weight must be nonnegative")
        self.lam = float(lam)

    def value(self, theta: np.ndarray) -> float:
        return 0.5 * self.lam * float(theta @ theta)

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return self.lam * theta

    def hess(self, theta: np.ndarray) -> np.ndarray:
        return self.lam * np.eye(theta.shape[0])


ZERO_REG = ZeroRegularizer()


# ---------------------------------------------------------------------------
# Batched density pieces
# ---------------------------------------------------------------------------

@dataclass
class DensityParts:
    """Per-dataset pieces of the conditional density at a fixed parameter.

    Exactly one of (``hess``) or (``log_det_hess`` and ``min_hess_eig``)
    is populated. ``grad`` already includes the regularizer gradient;
    Hessian quantities already include the regularizer Hessian. ``loglik``
    is the unpenalized log f(x; theta).
    """

    loglik: np.ndarray               # (B,)
    grad: np.ndarray                 # (B, d)
    hess: np.ndarray | None = None   # (B, d, d)
    log_det_hess: np.ndarray | None = None  # (B,), -inf where not PD
    min_hess_eig: np.ndarray | None = None  # (B,)


class Model:
    """Parametric model contract.

    Subclasses define the negative log-likelihood and its derivatives on a
    flattened parameter of length ``d``, forward sampling, the initial
    estimator used to center the trust ball, and (where meaningful) the
    product-form and Gaussian hooks the proposal distributions rely on.

    Datasets are numpy arrays; the leading axis is the batch axis for the
    ``*_batch`` methods. ``n_obs`` counts exchangeable observation units.
    """

    d: int
    n_obs: int
    strictly_convex: bool = False
    has_product_form: bool = False
    is_gaussian: bool = False
    # Constant-Hessian models let the conditional density cache one log-det.
    hess_is_constant: bool = False
    kind: str = "model"

    # -- likelihood -------------------------------------------------------

    def neg_loglik(self, theta: np.ndarray, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad_neg_loglik(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess_neg_loglik(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- sampling and estimation ------------------------------------------

    def sample(self, theta: np.ndarray, rng: np.random.Generator,
               size: int | None = None) -> np.ndarray:
        """Draw one dataset (size=None) or a (size, ...) stack from P_theta."""
        raise NotImplementedError

    def initial_estimate(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def initial_estimate_info(self, x: np.ndarray) -> dict[str, Any]:
        """Diagnostics of the initial estimator (e.g. fallback used)."""
        return {}

    # -- parameter domain ---------------------------------------------------

    def param_in_domain(self, theta: np.ndarray) -> bool:
        """Open-set membership check for theta."""
        raise NotImplementedError

    def domain_ball_cap(self, theta: np.ndarray) -> float:
        """Distance from theta to the domain boundary (inf for R^d).

        The trust ball around the initial estimate is capped below this so
        the whole ball stays inside the open parameter set.
        """
        return np.inf

    # -- batched evaluation -------------------------------------------------

    def make_param_cache(self, theta: np.ndarray) -> Any:
        """Precompute fixed-parameter quantities reused across evaluations."""
        return None

    def density_parts_batch(self, theta: np.ndarray, X: np.ndarray,
                            cache: Any = None,
                            reg: Regularizer = ZERO_REG) -> DensityParts:
        """Generic row-by-row fallback; structured models override this."""
        B = X.shape[0]
        ll = np.empty(B)
        g = np.empty((B, self.d))
        h = np.empty((B, self.d, self.d))
        for b in range(B):
            xb = X[b]
            ll[b] = -self.neg_loglik(theta, xb)
            g[b] = self.grad_neg_loglik(theta, xb)
            h[b] = self.hess_neg_loglik(theta, xb)
        g += reg.grad(theta)
        h += reg.hess(theta)
        return DensityParts(loglik=ll, grad=g, hess=h)

    def batch_initial_estimates(self, X: np.ndarray) -> np.ndarray:
        return np.stack([self.initial_estimate(X[b]) for b in range(X.shape[0])])

    def batch_domain_caps(self, thetas: np.ndarray) -> np.ndarray:
        return np.array([self.domain_ball_cap(t) for t in thetas])

    # -- product-form hooks (subset-resampling proposal) --------------------

    def obs_loglik_batch(self, theta: np.ndarray, X: np.ndarray,
                         cache: Any = None) -> np.ndarray:
        """Per-observation log f_i for product models; shape (B, n_obs)."""
        raise UnsupportedOperationError(
            f"{self.kind}: no per-observation density (not a product model)")

    def resample_obs_batch(self, theta: np.ndarray, X: np.ndarray,
                           mask: np.ndarray, rng: np.random.Generator,
                           cache: Any = None) -> np.ndarray:
        """Redraw the observations flagged by the (B, n_obs) boolean mask."""
        raise UnsupportedOperationError(
            f"{self.kind}: no per-observation resampler (not a product model)")

    # -- Gaussian hooks (autoregressive mixing proposal) ---------------------

    def gaussian_mean(self, theta: np.ndarray) -> np.ndarray:
        raise UnsupportedOperationError(f"{self.kind}: not a Gaussian model")

    def cov_factor(self, theta: np.ndarray) -> tuple[str, np.ndarray]:
        """Covariance factor of the Gaussian law: ("diag", sd) or ("dense", L).

        For "dense", L is a lower Cholesky factor of the covariance.
        """
        raise UnsupportedOperationError(f"{self.kind}: not a Gaussian model")

    # -- exact conditional sampling (test fixture only) ----------------------

    def sample_conditional_iid(self, theta_hat: np.ndarray, sigma: float,
                               M: int, rng: np.random.Generator) -> np.ndarray:
        raise UnsupportedOperationError(
            f"{self.kind}: no exact conditional sampler; use an MCMC topology")


# ---------------------------------------------------------------------------
# Penalized objective
# ---------------------------------------------------------------------------

def penalized_objective(model: Model, reg: Regularizer, theta: np.ndarray,
                        x: np.ndarray, w: np.ndarray, sigma: float) -> float:
    """L(theta; x, w) = -log f(x; theta) + R(theta) + sigma * w @ theta."""
    return model.neg_loglik(theta, x) + reg.value(theta) + sigma * float(w @ theta)


def grad_penalized_objective(model: Model, reg: Regularizer, theta: np.ndarray,
                             x: np.ndarray, w: np.ndarray, sigma: float) -> np.ndarray:
    return model.grad_neg_loglik(theta, x) + reg.grad(theta) + sigma * w


def hess_penalized_objective(model: Model, reg: Regularizer, theta: np.ndarray,
                             x: np.ndarray) -> np.ndarray:
    # The perturbation sigma * w @ theta is linear, so the Hessian is w-free.
    return model.hess_neg_loglik(theta, x) + reg.hess(theta)
