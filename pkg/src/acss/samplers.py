"""Markov chain sampling of approximately exchangeable data copies.

Given the solved parameter and its conditional density context, these
chains target the plug-in conditional law of the data. Two proposal
families cover the shipped models:

  * subset resampling: pick a uniform random subset of observations and
    redraw them from the fitted product density. The index set drops out
    of the proposal ratio, which reduces to the per-observation density
    ratio on the touched coordinates; works for discrete data.
  * autoregressive mixing: shrink toward the fitted Gaussian mean and add
    scaled fresh noise. Reversible with respect to the fitted Gaussian,
    so the ratio is the Gaussian density difference of the two states.

Acceptance uses the conditional core first and checks trust-ball
membership only for proposals that survive the core accept test; the
final decision is identical, membership evaluation being a 0/1 factor of
the acceptance probability, but the expensive per-dataset initial
estimates are skipped for rejected moves.

Copies are arranged in one of two exchangeability-preserving topologies:
a hub-and-spoke layout (one chain away from the data, then independent
spokes) or a permuted serial chain (the data inserted at a uniformly
random position of one long reversible chain). A third, exact i.i.d.
route exists for models that can sample their conditional law directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .api import Model, Regularizer, UnsupportedOperationError
from .conditional import ConditionalContext
from .estimator import AcssConfig, draw_noise, solve_perturbed

MAX_CHAIN_STEPS = 500

# ---------------------------------------------------------------------------
# Proposals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProposalConfig:
    """Proposal family plus its knobs; `steps` is the chain length L."""

    family: str                     # "subset" or "ar"
    steps: int
    subset_size: int | None = None
    rho: float | None = None

    def __post_init__(self):
        if self.family not in ("subset", "ar"):
            raise ValueError(f"unknown proposal family {self.family!r}")
        if self.family == "subset" and (self.subset_size is None or self.subset_size < 1):
            raise ValueError("subset proposal needs a positive subset_size")
        if self.family == "ar" and (self.rho is None or not 0 <= self.rho < 1):
            raise ValueError("ar proposal needs rho in [0, 1)")
        if self.steps < 1:
            raise ValueError("chain length must be at least 1")


def subset_proposal(model: Model, theta_hat: np.ndarray, X: np.ndarray,
                    subset_size: int, rng: np.random.Generator, cache=None):
    """Redraw a uniform subset of observations; returns (proposal, log q-ratio)."""
    B = X.shape[0]
    n = model.n_obs
    order = np.argsort(rng.random((B, n)), axis=1)
    mask = np.zeros((B, n), dtype=bool)
    np.put_along_axis(mask, order[:, :subset_size], True, axis=1)
    X_prop = model.resample_obs_batch(theta_hat, X, mask, rng, cache=cache)
    ll_curr = model.obs_loglik_batch(theta_hat, X, cache=cache)
    ll_prop = model.obs_loglik_batch(theta_hat, X_prop, cache=cache)
    lqr = ((ll_curr - ll_prop) * mask).sum(axis=1)
    return X_prop, lqr


def ar_mixing_proposal(model: Model, theta_hat: np.ndarray, X: np.ndarray,
                       rho: float, rng: np.random.Generator,
                       _cache: tuple | None = None):
    """Autoregressive move toward the fitted Gaussian; returns (proposal, log q-ratio)."""
    if _cache is None:
        _cache = (model.gaussian_mean(theta_hat), model.cov_factor(theta_hat))
    mean, (kind, fac) = _cache
    z = rng.standard_normal(X.shape)
    eps = z * fac if kind == "diag" else z @ fac.T
    X_prop = mean + rho * (X - mean) + np.sqrt(1.0 - rho * rho) * eps

    def _quad(Y):
        r = Y - mean
        y = r / fac if kind == "diag" else solve_triangular(fac, r.T, lower=True).T
        return np.einsum("bn,bn->b", y, y)

    # reversible w.r.t. N(mean, Sigma): q(x|x') / q(x'|x) = N(x) / N(x')
    lqr = 0.5 * (_quad(X_prop) - _quad(X))
    return X_prop, lqr


def _make_proposer(ctx: ConditionalContext, pcfg: ProposalConfig) -> Callable:
    model, th = ctx.model, ctx.theta_hat
    if pcfg.family == "subset":
        s = pcfg.subset_size
        pcache = ctx.cache
        return lambda X, rng: subset_proposal(model, th, X, s, rng, cache=pcache)
    cache = (model.gaussian_mean(th), model.cov_factor(th))
    return lambda X, rng: ar_mixing_proposal(model, th, X, pcfg.rho, rng, _cache=cache)


# ---------------------------------------------------------------------------
# Metropolis-Hastings engine
# ---------------------------------------------------------------------------


def mh_chain_batch(ctx: ConditionalContext, pcfg: ProposalConfig, X0: np.ndarray,
                   steps: int, rng: np.random.Generator):
    """Advance a (B, ...) stack of states `steps` MH updates in lockstep.

    Returns (final states, mean acceptance rate over all steps and rows).
    """
    propose = _make_proposer(ctx, pcfg)
    X = np.array(X0, copy=True)
    core = ctx.core_batch(X)
    B = X.shape[0]
    n_acc = 0
    for _ in range(steps):
        X_prop, lqr = propose(X, rng)
        core_prop = ctx.core_batch(X_prop)
        with np.errstate(invalid="ignore"):
            log_a = lqr + core_prop - core
        u = rng.random(B)
        pre = u < np.exp(np.minimum(log_a, 0.0))
        if pre.any():
            ok = ctx.ball_ok_batch(X_prop[pre])
            accept = pre.copy()
            accept[pre] = ok
        else:
            accept = pre
        X[accept] = X_prop[accept]
        core[accept] = core_prop[accept]
        n_acc += int(accept.sum())
    return X, n_acc / (B * steps)


def mh_step(ctx: ConditionalContext, pcfg: ProposalConfig, x: np.ndarray,
            rng: np.random.Generator):
    """One MH update of a single state; returns (new state, accepted flag)."""
    X, rate = mh_chain_batch(ctx, pcfg, x[None], 1, rng)
    return X[0], bool(rate > 0)


# ---------------------------------------------------------------------------
# Copy topologies
# ---------------------------------------------------------------------------


@dataclass
class CopySet:
    copies: np.ndarray          # (M, ...) stack of sampled datasets
    topology: str
    acceptance_rate: float


def hub_and_spoke(ctx: ConditionalContext, pcfg: ProposalConfig, x_obs: np.ndarray,
                  M: int, rng: np.random.Generator) -> CopySet:
    """L steps to a hub, then M independent L-step spokes from it."""
    hub, rate_hub = mh_chain_batch(ctx, pcfg, x_obs[None], pcfg.steps, rng)
    spokes0 = np.repeat(hub, M, axis=0)
    copies, rate_spokes = mh_chain_batch(ctx, pcfg, spokes0, pcfg.steps, rng)
    rate = (rate_hub + M * rate_spokes) / (M + 1)
    return CopySet(copies=copies, topology="hub-and-spoke", acceptance_rate=rate)


def permuted_serial(ctx: ConditionalContext, pcfg: ProposalConfig, x_obs: np.ndarray,
                    M: int, rng: np.random.Generator) -> CopySet:
    """One long reversible chain with the data at a uniform random position.

    The data sits at position m* ~ Uniform{0..M}; m* segments of L steps
    run backward from it and M - m* segments run forward, legitimate
    because one kernel drives both arms and is reversible for the target.
    Copies come back in position order.
    """
    m_star = int(rng.integers(0, M + 1))
    rates = []
    backward = []
    state = x_obs[None]
    for _ in range(m_star):
        state, r = mh_chain_batch(ctx, pcfg, state, pcfg.steps, rng)
        backward.append(state[0])
        rates.append(r)
    forward = []
    state = x_obs[None]
    for _ in range(M - m_star):
        state, r = mh_chain_batch(ctx, pcfg, state, pcfg.steps, rng)
        forward.append(state[0])
        rates.append(r)
    ordered = backward[::-1] + forward
    copies = np.stack(ordered) if ordered else np.empty((0,) + x_obs.shape)
    rate = float(np.mean(rates)) if rates else 1.0
    return CopySet(copies=copies, topology="permuted-serial", acceptance_rate=rate)


def iid_copies(model: Model, theta_hat: np.ndarray, sigma: float, M: int,
               rng: np.random.Generator) -> CopySet:
    """Exact independent draws from the conditional law (toy models only)."""
    copies = model.sample_conditional_iid(theta_hat, sigma, M, rng)
    return CopySet(copies=copies, topology="iid", acceptance_rate=1.0)


# ---------------------------------------------------------------------------
# Tuning: pick the proposal knob and the chain length from theta_hat alone
# ---------------------------------------------------------------------------


@dataclass
class TuningResult:
    family: str
    chosen: float               # selected subset size or rho
    steps: int                  # selected chain length L
    acceptance: dict            # candidate -> mean acceptance
    low_acceptance: bool
    extra: dict = field(default_factory=dict)


def default_subset_candidates(n: int) -> list[int]:
    cands = {1, 2, 5, 10, 20, n // 2, n}
    return sorted(c for c in cands if 1 <= c <= n)


DEFAULT_RHO_CANDIDATES = (0.5, 0.8, 0.9, 0.95, 0.99)


def subset_chain_length(n_obs: int, s: int, abar: float) -> int:
    """L = round(min(500, 2 n / (s * acceptance))), the cost-balance rule."""
    if abar <= 0:
        return MAX_CHAIN_STEPS
    return int(np.rint(min(float(MAX_CHAIN_STEPS), 2.0 * n_obs / (s * abar))))


def rho_chain_length(corr: float) -> int:
    """L = round(min(500, 20 / (1 - corr_+))) from the measured copy correlation."""
    eff = max(float(corr), 0.0)
    if eff >= 1.0:
        return MAX_CHAIN_STEPS
    return int(np.rint(min(float(MAX_CHAIN_STEPS), 20.0 / (1.0 - eff))))


def tune_subset_size(model: Model, reg: Regularizer, theta_hat: np.ndarray,
                     cfg: AcssConfig, rng: np.random.Generator,
                     candidates: list[int] | None = None,
                     n_sim: int | None = None, n_steps: int | None = None) -> TuningResult:
    """Pick the subset size s maximizing s * acceptance, subject to acceptance >= 0.2.

    Simulates datasets from the fitted law and measures acceptance of
    short chains run at the fitted parameter; uses theta_hat only, never
    the observed data.
    """
    if candidates is None:
        candidates = default_subset_candidates(model.n_obs)
    n_sim = cfg.subset_tune_sims if n_sim is None else n_sim
    n_steps = cfg.subset_tune_steps if n_steps is None else n_steps
    ctx = ConditionalContext(model, reg, theta_hat, cfg.sigma, cfg)
    X_sim = model.sample(theta_hat, rng, size=n_sim)
    acc = {}
    for s in candidates:
        pcfg = ProposalConfig(family="subset", steps=1, subset_size=int(s))
        _, rate = mh_chain_batch(ctx, pcfg, X_sim, n_steps, rng.spawn(1)[0])
        acc[int(s)] = float(rate)
    viable = [s for s in candidates if acc[int(s)] >= 0.2]
    if viable:
        chosen = min(viable, key=lambda s: (-s * acc[int(s)], s))
        low = False
    else:
        chosen = max(candidates, key=lambda s: acc[int(s)])
        low = True
    steps = subset_chain_length(model.n_obs, int(chosen), acc[int(chosen)])
    return TuningResult(family="subset", chosen=int(chosen), steps=steps,
                        acceptance=acc, low_acceptance=low)


def tune_mixing_rho(model: Model, reg: Regularizer, theta_hat: np.ndarray,
                    cfg: AcssConfig, rng: np.random.Generator,
                    candidates: tuple[float, ...] = DEFAULT_RHO_CANDIDATES,
                    n_sim: int | None = None) -> TuningResult:
    """Pick rho minimizing copy correlation among candidates with acceptance >= 0.05.

    Each simulated dataset is pushed through the full pipeline (fresh
    noise, re-solve, conditional context at its own estimate) and given
    one MH step per candidate; a rejected step counts as correlation 1.
    """
    n_sim = cfg.rho_tune_sims if n_sim is None else n_sim
    states = []
    contexts = []
    for _ in range(n_sim):
        x_sim = model.sample(theta_hat, rng)
        w = draw_noise(model.d, rng)
        est = solve_perturbed(model, reg, x_sim, w, cfg)
        if not est.is_ssosp:
            continue
        states.append(x_sim)
        contexts.append(ConditionalContext(model, reg, est.theta_hat, cfg.sigma, cfg))
    if not states:
        raise UnsupportedOperationError(
            "mixing-parameter tuning: no simulated solve reached a strict optimum")
    acc = {}
    corr = {}
    for rho in candidates:
        pcfg = ProposalConfig(family="ar", steps=1, rho=float(rho))
        step_rng = rng.spawn(1)[0]
        n_acc = 0
        corrs = np.empty(len(states))
        for i, (x_sim, ctx) in enumerate(zip(states, contexts)):
            x_new, accepted = mh_step(ctx, pcfg, x_sim, step_rng)
            if accepted:
                n_acc += 1
                c = np.corrcoef(x_sim.ravel(), x_new.ravel())[0, 1]
                corrs[i] = 1.0 if not np.isfinite(c) else c
            else:
                corrs[i] = 1.0
        acc[float(rho)] = n_acc / len(states)
        corr[float(rho)] = float(corrs.mean())
    viable = [r for r in candidates if acc[float(r)] >= 0.05]
    if viable:
        chosen = min(viable, key=lambda r: corr[float(r)])
        low = False
    else:
        chosen = max(candidates, key=lambda r: acc[float(r)])
        low = True
    measured = corr[float(chosen)]
    return TuningResult(family="ar", chosen=float(chosen),
                        steps=rho_chain_length(measured), acceptance=acc,
                        low_acceptance=low,
                        extra={"copy_correlation": corr, "chosen_correlation": measured,
                               "n_solved": len(states)})
