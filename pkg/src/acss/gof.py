"""End-to-end goodness-of-fit test: solve, sample copies, compare statistics.

`run_acss` is the package's front door. It perturbs and solves the
penalized fit, builds the conditional density context, tunes a proposal
if none is supplied, draws M approximately exchangeable copies of the
data, and converts any user statistic into a Monte Carlo p-value

    p = (1 + #{m : T(copy_m) >= T(x)}) / (M + 1),

with ties counted against the data so the test stays valid. A failed
solve (no strict optimum found) yields p = 1: the method loses power but
never its level, and no exception escapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .api import ConfigError, Model, Regularizer, UnsupportedOperationError, ZERO_REG
from .conditional import ConditionalContext
from .estimator import AcssConfig, SsospEstimate, draw_noise, solve_perturbed
from .samplers import (
    CopySet,
    ProposalConfig,
    TuningResult,
    hub_and_spoke,
    iid_copies,
    permuted_serial,
    tune_mixing_rho,
    tune_subset_size,
)

_TOPOLOGIES = {
    "hub-and-spoke": "hub-and-spoke",
    "hub": "hub-and-spoke",
    "permuted-serial": "permuted-serial",
    "serial": "permuted-serial",
    "iid": "iid",
}


def normalize_topology(name: str) -> str:
    try:
        return _TOPOLOGIES[name.strip().lower()]
    except KeyError:
        raise ConfigError(f"unknown topology {name!r}; "
                          f"expected one of {sorted(set(_TOPOLOGIES.values()))}")


def compute_pvalue(t_observed: float, t_copies: np.ndarray) -> float:
    """Monte Carlo p-value with ties counted toward rejection of nothing."""
    M = len(t_copies)
    return float((1 + int(np.sum(np.asarray(t_copies) >= t_observed))) / (M + 1))


@dataclass
class AcssResult:
    pvalue: float
    t_observed: float
    t_copies: np.ndarray
    ssosp_ok: bool
    estimate: SsospEstimate
    tuning: TuningResult | None = None
    copies: CopySet | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def theta_hat(self) -> np.ndarray:
        return self.estimate.theta_hat


def _resolve_proposal(model: Model, reg: Regularizer, theta_hat: np.ndarray,
                      cfg: AcssConfig, proposal, rng) -> tuple[ProposalConfig, TuningResult | None]:
    if isinstance(proposal, ProposalConfig):
        return proposal, None
    family = proposal
    if family is None:
        if model.has_product_form:
            family = "subset"
        elif model.is_gaussian:
            family = "ar"
        else:
            raise UnsupportedOperationError(
                f"{model.kind}: no proposal family applies; pass one explicitly")
    if family == "subset":
        tr = tune_subset_size(model, reg, theta_hat, cfg, rng)
        return ProposalConfig(family="subset", steps=tr.steps,
                              subset_size=int(tr.chosen)), tr
    if family == "ar":
        tr = tune_mixing_rho(model, reg, theta_hat, cfg, rng)
        return ProposalConfig(family="ar", steps=tr.steps, rho=float(tr.chosen)), tr
    raise ConfigError(f"unknown proposal family {family!r}")


def run_acss(model: Model, x: np.ndarray, statistic: Callable[[np.ndarray], float],
             cfg: AcssConfig, M: int, rng: np.random.Generator,
             topology: str = "hub-and-spoke", reg: Regularizer = ZERO_REG,
             proposal: str | ProposalConfig | None = None) -> AcssResult:
    """Test fit of `model` to `x` using `statistic`, with M sampled copies."""
    if M < 1:
        raise ConfigError("M must be at least 1")
    topology = normalize_topology(topology)
    w_rng, tune_rng, chain_rng = rng.spawn(3)

    w = draw_noise(model.d, w_rng)
    est = solve_perturbed(model, reg, x, w, cfg)
    t_obs = float(statistic(x))
    if not est.is_ssosp:
        return AcssResult(pvalue=1.0, t_observed=t_obs, t_copies=np.empty(0),
                          ssosp_ok=False, estimate=est,
                          diagnostics={"failure": "no strict optimum"})

    if topology == "iid":
        copies = iid_copies(model, est.theta_hat, cfg.sigma, M, chain_rng)
        tuning = None
    else:
        ctx = ConditionalContext(model, reg, est.theta_hat, cfg.sigma, cfg)
        pcfg, tuning = _resolve_proposal(model, reg, est.theta_hat, cfg,
                                         proposal, tune_rng)
        sampler = hub_and_spoke if topology == "hub-and-spoke" else permuted_serial
        copies = sampler(ctx, pcfg, x, M, chain_rng)

    t_copies = np.array([float(statistic(c)) for c in copies.copies])
    return AcssResult(pvalue=compute_pvalue(t_obs, t_copies), t_observed=t_obs,
                      t_copies=t_copies, ssosp_ok=True, estimate=est,
                      tuning=tuning, copies=copies,
                      diagnostics={"acceptance_rate": copies.acceptance_rate})
