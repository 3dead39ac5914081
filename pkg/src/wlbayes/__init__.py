"""Class-weighted Bayesian logistic and ordered-logistic regression.

The log-likelihood contribution of every observation is multiplied by a
weight inversely proportional to its class frequency, so rare classes are
not swamped by common ones. Posterior sampling uses a vectorised HMC
sampler; predictions are evaluated by leave-one-out refits.
"""

__version__ = "0.1.0"

from .metrics import MetricsReport, binary_report, ordinal_report
from .model import Dataset, ModelSpec, log_posterior
from .predict import classify, loo_validate, posterior_predict
from .sampler import PosteriorDraws, SamplerConfig, sample
from .simdata import SimConfig, simulate
from .weights import ClassWeights, compute_weights, unit_weights

__all__ = [
    "ClassWeights",
    "Dataset",
    "MetricsReport",
    "ModelSpec",
    "PosteriorDraws",
    "SamplerConfig",
    "SimConfig",
    "binary_report",
    "classify",
    "compute_weights",
    "log_posterior",
    "loo_validate",
    "ordinal_report",
    "posterior_predict",
    "sample",
    "simulate",
    "unit_weights",
]
