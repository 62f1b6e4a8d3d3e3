"""Zero-mean Gaussian field on a lattice with exponential-decay covariance.

The scalar parameter theta > 0 sets the covariance Sigma_theta with
entries exp(-theta * D_ij) for a fixed pairwise distance matrix D. The
observations are one jointly Gaussian vector, so this model has no
product form; the autoregressive mixing proposal serves it instead.

Scalar derivatives of L(theta; x) = n/2 log(2 pi) + 1/2 log det Sigma
+ 1/2 x' Sigma^-1 x, using dSigma/dtheta = -(D o Sigma):

    dL/dtheta = -1/2 tr(Sigma^-1 (D o Sigma)) + 1/2 x' A x,
        A = Sigma^-1 (D o Sigma) Sigma^-1
    d2L/dtheta2 = 1/2 x' Bq x + 1/2 tr(Sigma^-1 (D o D o Sigma))
        - 1/2 tr((Sigma^-1 (D o Sigma))^2),
        Bq = 2 Sigma^-1 (D o Sigma) Sigma^-1 (D o Sigma) Sigma^-1
             - Sigma^-1 (D o D o Sigma) Sigma^-1

Everything a chain needs at fixed theta reduces to two quadratic forms
per state, so a parameter cache holds A, Bq, the trace constants and one
Cholesky factor; each batched evaluation is O(n^2) per state.
"""

from __future__ import annotations

import numpy as np

from ..api import DensityParts, Model, NumericalDomainError, ZERO_REG

_LOG_2PI = np.log(2 * np.pi)


def lattice_coordinates(side: int, ndim: int = 2) -> np.ndarray:
    """Integer lattice points of a side^ndim grid, row-major."""
    axes = np.indices((side,) * ndim).reshape(ndim, -1)
    return axes[::-1].T.astype(float)  # first coordinate varies fastest


class SpatialModel(Model):
    """Gaussian spatial process with covariance exp(-theta * D)."""

    kind = "spatial"
    is_gaussian = True

    def __init__(self, side: int | None = None, ndim: int = 2,
                 distances: np.ndarray | None = None,
                 coords: np.ndarray | None = None):
        if distances is not None:
            D = np.asarray(distances, dtype=float)
            if D.ndim != 2 or D.shape[0] != D.shape[1]:
                raise ValueError("distance matrix must be square")
            self.coords = coords
        else:
            if side is None:
                raise ValueError("give either a lattice side or a distance matrix")
            self.coords = lattice_coordinates(side, ndim)
            diff = self.coords[:, None, :] - self.coords[None, :, :]
            D = np.sqrt((diff ** 2).sum(axis=-1))
        if not np.allclose(D, D.T) or np.any(np.diag(D) != 0):
            raise ValueError("distances must be symmetric with zero diagonal")
        self.D = D
        self.n = D.shape[0]
        self.n_obs = self.n
        self.d = 1
        # Unordered unit-distance pairs drive the initial estimator.
        iu = np.triu_indices(self.n, 1)
        unit = np.isclose(D[iu], 1.0)
        self.unit_pairs = (iu[0][unit], iu[1][unit])
        self._adj = np.isclose(D, 1.0).astype(float)
        # Newton iterations evaluate value/grad/hess at the same theta back
        # to back; memoize the O(n^3) factorizations they share.
        self._memo: dict[float, tuple] = {}

    def covariance(self, theta_val: float) -> np.ndarray:
        if theta_val <= 0:
            raise ValueError("theta must be positive")
        return np.exp(-theta_val * self.D)

    def _factor(self, theta_val: float):
        key = float(theta_val)
        hit = self._memo.get(key)
        if hit is not None:
            return hit[0], hit[1]
        Sig = self.covariance(theta_val)
        try:
            L = np.linalg.cholesky(Sig)
        except np.linalg.LinAlgError as e:
            raise NumericalDomainError(
                f"covariance factorization failed at theta={theta_val}") from e
        if len(self._memo) > 64:
            self._memo.clear()
        self._memo[key] = (Sig, L, None)
        return Sig, L

    def _inverse(self, theta_val: float) -> np.ndarray:
        key = float(theta_val)
        Sig, L = self._factor(key)
        hit = self._memo.get(key)
        if hit is not None and hit[2] is not None:
            return hit[2]
        Si = np.linalg.inv(Sig)
        self._memo[key] = (Sig, L, Si)
        return Si

    # -- likelihood ----------------------------------------------------------

    def neg_loglik(self, theta, x):
        Sig, L = self._factor(theta[0])
        half = np.linalg.solve(L, x)
        logdet = 2.0 * np.log(np.diag(L)).sum()
        return float(0.5 * self.n * _LOG_2PI + 0.5 * logdet + 0.5 * half @ half)

    def grad_neg_loglik(self, theta, x):
        Sig, L = self._factor(theta[0])
        Si = self._inverse(theta[0])
        DS = self.D * Sig
        q = Si @ x
        val = -0.5 * np.einsum("ij,ji->", Si, DS) + 0.5 * q @ (DS @ q)
        return np.array([val])

    def hess_neg_loglik(self, theta, x):
        Sig, L = self._factor(theta[0])
        Si = self._inverse(theta[0])
        DS = self.D * Sig
        DDS = self.D * DS
        q = Si @ x
        xBx = 2.0 * (q @ (DS @ (Si @ (DS @ q)))) - q @ (DDS @ q)
        M = Si @ DS
        c2 = 0.5 * np.einsum("ij,ji->", Si, DDS) - 0.5 * np.einsum("ij,ji->", M, M)
        return np.array([[0.5 * xBx + c2]])

    # -- sampling and estimation ------------------------------------------------

    def sample(self, theta, rng, size=None):
        _, L = self._factor(theta[0])
        if size is None:
            return L @ rng.standard_normal(self.n)
        return rng.standard_normal((size, self.n)) @ L.T

    def _neighbor_average(self, x: np.ndarray) -> np.ndarray:
        i, j = self.unit_pairs
        return (x[..., i] * x[..., j]).mean(axis=-1)

    def initial_estimate(self, x):
        avg = float(self._neighbor_average(x))
        if 0.0 < avg < 1.0:
            return np.array([-np.log(avg)])
        return np.array([1.0])

    def initial_estimate_info(self, x):
        avg = float(self._neighbor_average(x))
        return {"init_fallback": not (0.0 < avg < 1.0)}

    def batch_initial_estimates(self, X):
        avg = self._neighbor_average(X)
        ok = (avg > 0.0) & (avg < 1.0)
        out = np.where(ok, -np.log(np.where(ok, avg, 0.5)), 1.0)
        return out[:, None]

    def param_in_domain(self, theta):
        return bool(np.isfinite(theta[0]) and theta[0] > 1e-10)

    def domain_ball_cap(self, theta):
        return float(theta[0])

    def batch_domain_caps(self, thetas):
        return thetas[:, 0]

    # -- batched evaluation --------------------------------------------------------

    def make_param_cache(self, theta):
        Sig, L = self._factor(theta[0])
        Si = self._inverse(theta[0])
        DS = self.D * Sig
        DDS = self.D * DS
        M = Si @ DS
        A = M @ Si                       # Sigma^-1 (D o Sigma) Sigma^-1
        Bq = 2.0 * (M @ M @ Si) - Si @ DDS @ Si
        return {
            "Si": Si,
            "chol": L,
            "A": 0.5 * (A + A.T),
            "Bq": 0.5 * (Bq + Bq.T),
            "c1": np.einsum("ij,ji->", Si, DS),
            "c2": 0.5 * np.einsum("ij,ji->", Si, DDS) - 0.5 * np.einsum("ij,ji->", M, M),
            "logdet": 2.0 * np.log(np.diag(L)).sum(),
        }

    def density_parts_batch(self, theta, X, cache=None, reg=ZERO_REG):
        if cache is None:
            cache = self.make_param_cache(theta)
        qf = lambda Mat: ((X @ Mat) * X).sum(axis=1)
        ll = -0.5 * self.n * _LOG_2PI - 0.5 * cache["logdet"] - 0.5 * qf(cache["Si"])
        g = (0.5 * (qf(cache["A"]) - cache["c1"]))[:, None] + reg.grad(theta)
        h = 0.5 * qf(cache["Bq"]) + cache["c2"] + reg.hess(theta)[0, 0]
        log_det = np.where(h > 0, np.log(np.maximum(h, 1e-300)), -np.inf)
        return DensityParts(loglik=ll, grad=g, log_det_hess=log_det, min_hess_eig=h)

    # -- Gaussian hooks ---------------------------------------------------------------

    def gaussian_mean(self, theta):
        return np.zeros(self.n)

    def cov_factor(self, theta):
        _, L = self._factor(theta[0])
        return "dense", L


def axis_neighbor_pairs(model: SpatialModel, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Unordered unit-distance pairs aligned with one coordinate axis."""
    if model.coords is None:
        raise ValueError("model was built from raw distances; no coordinates")
    i, j = model.unit_pairs
    aligned = ~np.isclose(model.coords[i, axis], model.coords[j, axis])
    return i[aligned], j[aligned]


def anisotropy_statistic(model: SpatialModel, x: np.ndarray) -> float:
    """Sum of products over horizontal pairs minus vertical pairs.

    Under an isotropic fit the two sums match in expectation; stretching
    distances along the second axis depresses the vertical correlations,
    so large values point away from the null.
    """
    hi, hj = axis_neighbor_pairs(model, axis=0)
    vi, vj = axis_neighbor_pairs(model, axis=1)
    return float((x[hi] * x[hj]).sum() - (x[vi] * x[vj]).sum())


def anisotropic_covariance(model: SpatialModel, c: float, rate: float = 0.25) -> np.ndarray:
    """Covariance of the data-generating field with anisotropy level c."""
    if model.coords is None:
        raise ValueError("model was built from raw distances; no coordinates")
    diff = model.coords[:, None, :] - model.coords[None, :, :]
    stretched = diff.copy()
    stretched[..., 1] *= (1.0 + c)
    dist = np.sqrt((stretched ** 2).sum(axis=-1))
    return np.exp(-rate * dist)
