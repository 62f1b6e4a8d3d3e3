"""Goodness-of-fit testing with approximately exchangeable data copies.

The test draws copies of the observed data conditional on a randomly
perturbed penalized fit of the null model, then converts any test
statistic into a finite-sample Monte Carlo p-value. See `run_acss` for
the one-call interface and `acss.harness` for the shipped experiments.
"""

from .api import (
    AcssError,
    ConfigError,
    DensityParts,
    Model,
    NumericalDomainError,
    Regularizer,
    RidgeRegularizer,
    UnsupportedOperationError,
    ZERO_REG,
    ZeroRegularizer,
)
from .conditional import ConditionalContext
from .estimator import AcssConfig, SsospEstimate, draw_noise, effective_radius, solve_perturbed
from .gof import AcssResult, compute_pvalue, run_acss
from .samplers import (
    CopySet,
    ProposalConfig,
    TuningResult,
    ar_mixing_proposal,
    hub_and_spoke,
    iid_copies,
    mh_chain_batch,
    mh_step,
    permuted_serial,
    subset_proposal,
    tune_mixing_rho,
    tune_subset_size,
)

__version__ = "0.1.0"

__all__ = [
    "AcssConfig",
    "AcssError",
    "AcssResult",
    "ConditionalContext",
    "ConfigError",
    "CopySet",
    "DensityParts",
    "Model",
    "NumericalDomainError",
    "ProposalConfig",
    "Regularizer",
    "RidgeRegularizer",
    "SsospEstimate",
    "TuningResult",
    "UnsupportedOperationError",
    "ZERO_REG",
    "ZeroRegularizer",
    "ar_mixing_proposal",
    "compute_pvalue",
    "draw_noise",
    "effective_radius",
    "hub_and_spoke",
    "iid_copies",
    "mh_chain_batch",
    "mh_step",
    "permuted_serial",
    "run_acss",
    "solve_perturbed",
    "subset_proposal",
    "tune_mixing_rho",
    "tune_subset_size",
    "__version__",
]
