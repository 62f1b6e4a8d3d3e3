"""Model families usable with the sampler.

Every family implements the `Model` contract from `acss.api`: penalized
objective pieces, an initial estimator, batched density evaluations, and
whatever sampling hooks its proposal kernels need.
"""

from __future__ import annotations

from typing import Any

from ..api import ConfigError, Model
from .behrens_fisher import BehrensFisherModel
from .glm import GlmModel
from .mvt import MultivariateTModel, symmetric_basis, tail_weight_statistic
from .spatial import (
    SpatialModel,
    anisotropic_covariance,
    anisotropy_statistic,
    axis_neighbor_pairs,
    lattice_coordinates,
)
from .toy import GaussianMeanModel

__all__ = [
    "BehrensFisherModel",
    "GaussianMeanModel",
    "GlmModel",
    "MultivariateTModel",
    "SpatialModel",
    "anisotropic_covariance",
    "anisotropy_statistic",
    "axis_neighbor_pairs",
    "lattice_coordinates",
    "make_model",
    "symmetric_basis",
    "tail_weight_statistic",
]


def make_model(kind: str, **params: Any) -> Model:
    """Construct a model by its config-file name."""
    try:
        if kind == "gaussian-mean":
            return GaussianMeanModel(n=int(params["n"]))
        if kind == "glm":
            return GlmModel(params["Z"], family=params.get("family", "logistic"))
        if kind == "behrens-fisher":
            return BehrensFisherModel(n0=int(params["n0"]), n1=int(params["n1"]))
        if kind == "spatial":
            return SpatialModel(side=int(params["side"]))
        if kind == "multivariate-t":
            return MultivariateTModel(n=int(params["n"]), k=int(params["k"]),
                                      gamma=float(params["gamma"]))
    except KeyError as exc:
        raise ConfigError(f"model {kind!r} is missing parameter {exc}") from exc
    raise ConfigError(f"unknown model kind {kind!r}")
