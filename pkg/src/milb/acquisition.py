"""Pool scoring and set-valued selectors for active learning.

Scalar scores (one per candidate): random, epistemic variance of the
conditional mean, and the mutual-information lower bound (MI-LB), which
combines an entropy lower bound on the marginal predictive mixture with
per-member entropy upper bounds.  Set-valued baselines (BAIT on last-layer
Fisher embeddings, k-Center-Greedy on backbone features) bypass scoring
and return index sets directly.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import gmm, mdn
from .rng import RngStream


@dataclass(frozen=True)
class ScoreVector:
    """Per-candidate acquisition scores plus the producing acquisition tag."""

    scores: np.ndarray
    kind: str

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if s.ndim != 1:
            raise ValueError("scores must be a 1-D vector")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", s)

    def __len__(self):
        return self.scores.shape[0]


def dump_scores(sv: ScoreVector, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["candidate_index", "score"])
        for i, s in enumerate(sv.scores):
            writer.writerow([i, repr(float(s))])


def _stack_predictions(preds):
    """Stack a sequence of EnsemblePrediction into (w, alpha, mu, var) arrays.

    Shapes: member weights (B, Z), alpha (B, Z, K), mu/var (B, Z, K, N).
    """
    w = np.stack([p.member_weights for p in preds])
    alpha = np.stack([[m.weights for m in p.member_mixtures] for p in preds])
    mu = np.stack([[m.means for m in p.member_mixtures] for p in preds])
    var = np.stack([[m.variances for m in p.member_mixtures] for p in preds])
    return w, alpha, mu, var


def score_random(n: int, stream: RngStream) -> ScoreVector:
    """i.i.d. Uniform(0,1) scores."""
    if n < 1:
        raise ValueError("need at least one candidate")
    return ScoreVector(stream.uniform(0.0, 1.0, n), "random")


def score_epistemic_variance(preds) -> ScoreVector:
    """Trace of the across-member covariance of per-member mixture means."""
    w, alpha, mu, _ = _stack_predictions(preds)
    return ScoreVector(_variance_from_stacked(w, alpha, mu), "variance")


def _variance_from_stacked(w, alpha, mu):
    member_mean = np.sum(alpha[..., None] * mu, axis=2)  # (B, Z, N)
    overall = np.sum(w[..., None] * member_mean, axis=1)  # (B, N)
    dev = member_mean - overall[:, None, :]
    return np.sum(w * np.sum(dev * dev, axis=2), axis=1)


def score_milb(preds) -> ScoreVector:
    """Lower bound on I(Y; Z | x): marginal entropy lower bound minus the
    weighted per-member entropy upper bounds.  May be negative (bound slack);
    used raw for ranking, never clamped."""
    w, alpha, mu, var = _stack_predictions(preds)
    return ScoreVector(_milb_from_stacked(w, alpha, mu, var), "milb")


def _milb_from_stacked(w, alpha, mu, var):
    b, z, k, n = mu.shape
    beta = (w[..., None] * alpha).reshape(b, z * k)
    h_low = gmm.entropy_lower_batch(beta, mu.reshape(b, z * k, n), var.reshape(b, z * k, n))
    h_up = gmm.entropy_upper_batch(alpha.reshape(b * z, k), var.reshape(b * z, k, n))
    return h_low - np.sum(w * h_up.reshape(b, z), axis=1)


@dataclass(frozen=True)
class FisherEmbedding:
    """Per-candidate flattened last-layer Fisher gradient rows (n, d)."""

    rows: np.ndarray

    def __post_init__(self):
        r = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if not np.all(np.isfinite(r)):
            raise ValueError("embedding rows must be finite")
        object.__setattr__(self, "rows", r)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self):
        return self.rows.shape[0]


def responsibilities(mix: gmm.DiagGaussianMixture, y) -> np.ndarray:
    """Posterior probability that each component generated y."""
    diff = y[None, :] - mix.means
    comp = -0.5 * np.sum(
        diff * diff / mix.variances + np.log(mix.variances) + np.log(2.0 * np.pi), axis=1
    )
    joint = comp + np.log(mix.weights)
    joint -= joint.max()
    g = np.exp(joint)
    return g / g.sum()


def fisher_embed(member0: mdn.MdnParams, x, stream: RngStream) -> np.ndarray:
    """One-MC-sample gradient of member-0 log-likelihood w.r.t. mean-head weights.

    Draws y from the predicted mixture, then flattens
    gamma_k (y - mu_k) / sigma_k^2 outer backbone activation z(x).
    """
    alpha, mu, var, h = mdn.mixture_params(member0, np.asarray(x, dtype=float)[None, :])
    mix = gmm.DiagGaussianMixture(alpha[0], mu[0], var[0])
    y = gmm.sample(mix, stream)
    gamma = responsibilities(mix, y)
    coef = gamma[:, None] * (y[None, :] - mix.means) / mix.variances  # (K, N)
    return np.einsum("kd,j->kdj", coef, h[0]).reshape(-1)


def fisher_embed_pool(member0: mdn.MdnParams, xs, stream: RngStream) -> FisherEmbedding:
    """Embedding rows for a set of candidates, one child stream per row."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    rows = [fisher_embed(member0, xs[i], stream.split(i)) for i in range(xs.shape[0])]
    return FisherEmbedding(np.stack(rows))


def bait_trace_objective(selected, cand: FisherEmbedding, labeled: FisherEmbedding,
                         ridge: float) -> float:
    """tr((F_lab + F_sel + ridge*I)^-1 F_cand), evaluated directly."""
    d = cand.dim
    m = ridge * np.eye(d)
    if len(labeled.rows):
        m += labeled.rows.T @ labeled.rows
    sel = np.asarray(list(selected), dtype=int)
    if sel.size:
        gs = cand.rows[sel]
        m += gs.T @ gs
    a = cand.rows.T @ cand.rows / len(cand)
    return float(np.trace(np.linalg.solve(m, a)))


def select_bait(embeddings: FisherEmbedding, labeled_embeddings: FisherEmbedding,
                batch: int, ridge: float = 1e-3) -> np.ndarray:
    """Fisher-trace batch selection: forward greedy to 2k, backward prune to k.

    Maintains the inverse burden matrix with rank-one updates; ties are broken
    toward the lowest candidate index.  Cost grows with the square of the
    embedding dimension, which is the known expense of this baseline.
    """
    n, d = embeddings.rows.shape
    if batch > n:
        raise ValueError(f"batch {batch} exceeds pool size {n}")
    if labeled_embeddings.rows.size and labeled_embeddings.dim != d:
        raise ValueError("labeled embedding dimension mismatch")
    if batch == n:
        return np.arange(n)
    g = embeddings.rows
    a = g.T @ g / n  # candidate Fisher, the trace target
    m = ridge * np.eye(d)
    if len(labeled_embeddings.rows):
        m += labeled_embeddings.rows.T @ labeled_embeddings.rows
    minv = np.linalg.inv(m)

    selected = []
    available = np.ones(n, dtype=bool)
    for _ in range(min(2 * batch, n)):
        p = minv @ a @ minv
        t1 = np.einsum("ij,jk,ik->i", g, p, g)
        t2 = np.einsum("ij,jk,ik->i", g, minv, g)
        gain = np.where(available, t1 / (1.0 + t2), -np.inf)
        j = int(np.argmax(gain))
        selected.append(j)
        available[j] = False
        v = minv @ g[j]
        minv -= np.outer(v, v) / (1.0 + g[j] @ v)

    while len(selected) > batch:
        p = minv @ a @ minv
        gs = g[selected]
        u1 = np.einsum("ij,jk,ik->i", gs, p, gs)
        u2 = np.einsum("ij,jk,ik->i", gs, minv, gs)
        rise = u1 / (1.0 - u2)
        # drop the weakest contributor; on ties prefer removing the higher index
        drop = int(np.lexsort((-np.asarray(selected), rise))[0])
        j = selected.pop(drop)
        v = minv @ g[j]
        minv += np.outer(v, v) / (1.0 - g[j] @ v)

    return np.asarray(sorted(selected), dtype=int)


def select_coreset(features, labeled_features, k: int) -> np.ndarray:
    """k-Center-Greedy: repeatedly pick the candidate farthest from the
    selected-or-labeled set.  Returns indices in selection (max-min) order."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    n = features.shape[0]
    if k > n:
        raise ValueError(f"k {k} exceeds pool size {n}")
    labeled_features = np.asarray(labeled_features, dtype=float)
    if labeled_features.size:
        labeled_features = np.atleast_2d(labeled_features)
        d2 = _sq_dists(features, labeled_features)
        d_min = np.sqrt(d2.min(axis=1))
    else:
        d_min = np.full(n, np.inf)
    chosen = []
    for _ in range(k):
        j = int(np.argmax(d_min))
        chosen.append(j)
        dj = np.sqrt(_sq_dists(features, features[j : j + 1])[:, 0])
        d_min = np.minimum(d_min, dj)
        d_min[j] = -np.inf
    return np.asarray(chosen, dtype=int)


def _sq_dists(a, b):
    return np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)


def variance_failure_demo(stream: RngStream | None = None, n_samples: int = 100_000,
                          delta: float = np.pi / 8) -> dict:
    """Two unit-circle distributions with equal variance but different entropy.

    The uniform distribution spreads over the whole circle; the polar one
    splits mass evenly between two antipodal arcs of half-width delta.  Both
    have zero mean and trace-variance 1, yet their arc-length differential
    entropies differ by log(2*pi) - log(4*delta): variance cannot separate
    them, entropy can.
    """
    if stream is None:
        stream = RngStream(0, 2718)
    theta_u = stream.uniform(0.0, 2.0 * np.pi, n_samples)
    side = np.where(stream.uniform(0.0, 1.0, n_samples) < 0.5, 0.0, np.pi)
    theta_p = side + stream.uniform(-delta, delta, n_samples)
    uniform_xy = np.stack([np.cos(theta_u), np.sin(theta_u)], axis=1)
    polar_xy = np.stack([np.cos(theta_p), np.sin(theta_p)], axis=1)

    def trace_var(xy):
        return float(np.sum(np.var(xy, axis=0)))

    def uniform_logpdf(theta):
        return np.full_like(theta, -np.log(2.0 * np.pi))

    def polar_logpdf(theta):
        # density 1/(4 delta) on the two arcs around 0 and pi, zero elsewhere
        wrapped = np.mod(theta + np.pi / 2, np.pi) - np.pi / 2
        on_cap = np.abs(wrapped) <= delta
        return np.where(on_cap, -np.log(4.0 * delta), -np.inf)

    uniform_entropy = -float(np.mean(uniform_logpdf(theta_u)))
    polar_entropy = -float(np.mean(polar_logpdf(theta_p)))
    expected_gap = float(np.log(2.0 * np.pi) - np.log(4.0 * delta))
    report = {
        "uniform_variance": trace_var(uniform_xy),
        "polar_variance": trace_var(polar_xy),
        "uniform_entropy": uniform_entropy,
        "polar_entropy": polar_entropy,
        "entropy_gap": uniform_entropy - polar_entropy,
        "expected_gap": expected_gap,
        "uniform_samples_theta": theta_u,
        "polar_samples_theta": theta_p,
    }
    report["passes"] = (
        abs(report["uniform_variance"] - 1.0) < 0.01
        and abs(report["polar_variance"] - 1.0) < 0.01
        and abs(report["entropy_gap"] - expected_gap) < 1e-3
    )
    return report
