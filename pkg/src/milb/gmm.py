"""Diagonal-covariance Gaussian mixtures: densities, sampling, entropies.

A mixture is K weighted Gaussians with diagonal covariances over R^N.
Differential entropy of a mixture has no closed form; this module provides
the pairwise-evaluation lower bound and the component-entropy upper bound
(both O(K^2 N) for diagonal covariances) plus a Monte-Carlo estimator used
as the independent oracle in tests.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

from .rng import RngStream

VAR_FLOOR = 1e-6
WEIGHT_TOL = 1e-9

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class DiagGaussianMixture:
    """Weights (K,), means (K, N), per-dimension variances (K, N)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        var = np.asarray(self.variances, dtype=float)
        if mu.ndim != 2:
            raise ValueError(f"means must be (K, N), got shape {mu.shape}")
        k, n = mu.shape
        if k < 1 or n < 1:
            raise ValueError("mixture needs K >= 1 components and N >= 1 dims")
        if w.shape != (k,) or var.shape != (k, n):
            raise ValueError(
                f"inconsistent shapes: weights {w.shape}, means {mu.shape}, "
                f"variances {var.shape}"
            )
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights must be nonnegative and sum to 1, got sum {w.sum()!r}")
        if np.any(var < VAR_FLOOR):
            raise ValueError(f"variance entries must be >= {VAR_FLOOR}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class EnsemblePrediction:
    """Per-member conditional mixtures plus member weights w_z."""

    member_mixtures: tuple
    member_weights: np.ndarray

    def __post_init__(self):
        mix = tuple(self.member_mixtures)
        w = np.asarray(self.member_weights, dtype=float)
        if len(mix) < 1 or w.shape != (len(mix),):
            raise ValueError("need one weight per member mixture")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("member weights must be nonnegative and sum to 1")
        dims = {m.dim for m in mix}
        if len(dims) != 1:
            raise ValueError(f"member mixtures disagree on output dim: {dims}")
        object.__setattr__(self, "member_mixtures", mix)
        object.__setattr__(self, "member_weights", w)

    @property
    def n_members(self) -> int:
        return len(self.member_mixtures)


def _log_weights(weights):
    with np.errstate(divide="ignore"):
        return np.log(weights)


def component_log_pdf(weights, means, variances, y):
    """log-density rows for y (..., N) under stacked mixture parameters."""
    y = np.asarray(y, dtype=float)
    diff = y[..., None, :] - means
    quad = np.sum(diff * diff / variances + np.log(variances) + _LOG_2PI, axis=-1)
    comp = -0.5 * quad  # (..., K)
    return logsumexp(comp + _log_weights(weights), axis=-1)


def log_pdf(m: DiagGaussianMixture, y):
    """Mixture log-density at y; y may be (N,) or a batch (B, N)."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != m.dim:
        raise ValueError(f"y has dim {y.shape[-1]}, mixture has dim {m.dim}")
    return component_log_pdf(m.weights, m.means, m.variances, y)


def sample(m: DiagGaussianMixture, stream: RngStream, size: int | None = None):
    """Draw from the mixture: component index from weights, then Gaussian."""
    n = 1 if size is None else int(size)
    idx = stream.categorical(m.weights, size=n)
    eps = stream.std_normal((n, m.dim))
    out = m.means[idx] + np.sqrt(m.variances[idx]) * eps
    return out[0] if size is None else out


def marginal_mixture(e: EnsemblePrediction) -> DiagGaussianMixture:
    """Flatten an ensemble prediction into one mixture with weights w_z * a_i."""
    ws, mus, vs = [], [], []
    for wz, mix in zip(e.member_weights, e.member_mixtures):
        ws.append(wz * mix.weights)
        mus.append(mix.means)
        vs.append(mix.variances)
    return DiagGaussianMixture(
        np.concatenate(ws), np.concatenate(mus, axis=0), np.concatenate(vs, axis=0)
    )


def entropy_exact_gaussian(mean, variances) -> float:
    """Entropy of a single diagonal Gaussian: 0.5 * sum_d log(2*pi*e*var_d)."""
    var = np.asarray(variances, dtype=float)
    if np.any(var <= 0):
        raise ValueError("variances must be positive")
    return 0.5 * float(np.sum(np.log(2.0 * np.pi * np.e * var)))


def _pairwise_cross_logpdf(means, variances):
    """logN(mu_i; mu_j, C_i + C_j) for all component pairs, shape (K, K)."""
    sv = variances[:, None, :] + variances[None, :, :]
    diff = means[:, None, :] - means[None, :, :]
    return -0.5 * np.sum(diff * diff / sv + np.log(sv) + _LOG_2PI, axis=-1)


def entropy_lower(m: DiagGaussianMixture) -> float:
    """Pairwise-evaluation lower bound on mixture entropy."""
    cross = _pairwise_cross_logpdf(m.means, m.variances)
    inner = logsumexp(cross + _log_weights(m.weights)[None, :], axis=1)
    return -float(np.dot(m.weights, inner))


def entropy_upper(m: DiagGaussianMixture) -> float:
    """Component-entropy upper bound: sum_i pi_i (-log pi_i + H(N_i))."""
    comp_h = 0.5 * np.sum(np.log(2.0 * np.pi * np.e * m.variances), axis=1)
    return float(np.dot(m.weights, comp_h) - np.sum(xlogy(m.weights, m.weights)))


def entropy_mc(m: DiagGaussianMixture, n_samples: int, stream: RngStream):
    """Monte-Carlo entropy estimate and its standard error."""
    if n_samples < 2:
        raise ValueError("need at least 2 samples for a standard error")
    ys = sample(m, stream, size=n_samples)
    chunk = 20_000  # bounds the (chunk, K, N) temporaries
    lp = np.concatenate([
        log_pdf(m, ys[s : s + chunk]) for s in range(0, n_samples, chunk)
    ])
    est = -float(np.mean(lp))
    stderr = float(np.std(lp, ddof=1) / np.sqrt(n_samples))
    return est, stderr


# ---------------------------------------------------------------------------
# Batched kernels over stacked mixtures (one mixture per row), used when
# scoring large candidate pools. Shapes: weights (B, K), means (B, K, N),
# variances (B, K, N).
# ---------------------------------------------------------------------------


def entropy_lower_batch(weights, means, variances):
    sv = variances[:, :, None, :] + variances[:, None, :, :]
    diff = means[:, :, None, :] - means[:, None, :, :]
    cross = -0.5 * np.sum(diff * diff / sv + np.log(sv) + _LOG_2PI, axis=-1)
    inner = logsumexp(cross + _log_weights(weights)[:, None, :], axis=2)
    return -np.sum(weights * inner, axis=1)


def entropy_upper_batch(weights, variances):
    comp_h = 0.5 * np.sum(np.log(2.0 * np.pi * np.e * variances), axis=2)
    return np.sum(weights * comp_h - xlogy(weights, weights), axis=1)


def stacked_log_pdf(weights, means, variances, y):
    """Row-wise log-density: row b of y under the b-th stacked mixture.

    weights (B, K), means/variances (B, K, N), y (B, N) -> (B,).
    """
    y = np.asarray(y, dtype=float)
    diff = y[:, None, :] - means
    comp = -0.5 * np.sum(diff * diff / variances + np.log(variances) + _LOG_2PI, axis=2)
    return logsumexp(comp + _log_weights(weights), axis=1)
