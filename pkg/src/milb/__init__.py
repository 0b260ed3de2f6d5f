"""Active-learning laboratory for continuous multimodal regression.

Mixture-density-network ensembles with a mutual-information lower-bound
acquisition score, classical baselines, batch-selection strategies, and
three benchmark simulators behind a reproducible experiment harness.
"""

__version__ = "0.1.0"

from .rng import RngStream  # noqa: F401
from .gmm import (  # noqa: F401
    DiagGaussianMixture,
    EnsemblePrediction,
    entropy_exact_gaussian,
    entropy_lower,
    entropy_mc,
    entropy_upper,
    log_pdf,
    marginal_mixture,
    sample,
)
