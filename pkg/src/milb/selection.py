"""Batch query selection: greedy top-k, stochastic softmax sampling (SBAL),
and acquisition-weighted farthest-point sampling (MaxDist)."""

from dataclasses import dataclass, field

import numpy as np

from .rng import RngStream


@dataclass
class BatchRequest:
    """How to turn scores into a query batch of size k."""

    k: int
    strategy: str = "topk"
    exclusions: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    temperature: float = 1.0  # SBAL softmax temperature T
    score_weight: float = 1.0  # MaxDist weight w on normalized scores

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("batch size k must be >= 1")
        if self.strategy not in ("topk", "sbal", "maxdist"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.temperature <= 0:
            raise ValueError("SBAL temperature must be positive")
        if self.score_weight < 0:
            raise ValueError("MaxDist score weight must be nonnegative")
        self.exclusions = np.asarray(self.exclusions, dtype=int)


def _eligible_mask(n, req: BatchRequest):
    mask = np.ones(n, dtype=bool)
    mask[req.exclusions] = False
    if int(mask.sum()) < req.k:
        raise ValueError(
            f"requested k={req.k} but only {int(mask.sum())} candidates available"
        )
    return mask


def _topk_indices(values, mask, k):
    # stable sort on negated values: ties resolve to the lowest index
    order = np.argsort(-values, kind="stable")
    order = order[mask[order]]
    return order[:k]


def select_topk(scores, req: BatchRequest) -> np.ndarray:
    """The k highest-scoring non-excluded indices, lowest-index tie-break."""
    scores = np.asarray(scores, dtype=float)
    mask = _eligible_mask(scores.shape[0], req)
    return _topk_indices(scores, mask, req.k)


def select_sbal(scores, req: BatchRequest, stream: RngStream) -> np.ndarray:
    """Sample k points without replacement from softmax(score / T) by taking
    the top-k of score/T + Gumbel noise."""
    scores = np.asarray(scores, dtype=float)
    mask = _eligible_mask(scores.shape[0], req)
    perturbed = scores / req.temperature + stream.gumbel(scores.shape[0])
    return _topk_indices(perturbed, mask, req.k)


def select_maxdist(scores, features, req: BatchRequest) -> np.ndarray:
    """Greedy farthest-point sampling weighted by normalized scores.

    Features are standardized per dimension over the pool and scores min-max
    normalized to [0, 1] (constant scores become all-zeros, i.e. pure
    geometry).  Each step picks the candidate maximizing
    d_min(i) * (1 + w * s_norm(i)), where d_min is the squared distance to the
    nearest already-selected or already-labeled point.
    """
    scores = np.asarray(scores, dtype=float)
    features = np.atleast_2d(np.asarray(features, dtype=float))
    n = scores.shape[0]
    if features.shape[0] != n:
        raise ValueError("scores and features must cover the same pool")
    mask = _eligible_mask(n, req)

    std = features.std(axis=0)
    feats = (features - features.mean(axis=0)) / np.maximum(std, 1e-8)

    lo = scores[mask].min()
    hi = scores[mask].max()
    if hi - lo > 0:
        s_norm = (scores - lo) / (hi - lo)
    else:
        s_norm = np.zeros(n)

    refs = req.exclusions
    if refs.size:
        d_min = np.min(
            np.sum((feats[:, None, :] - feats[refs][None, :, :]) ** 2, axis=2), axis=1
        )
    else:
        d_min = np.full(n, np.inf)

    weight = 1.0 + req.score_weight * s_norm
    chosen = []
    avail = mask.copy()
    for _ in range(req.k):
        value = np.where(avail, d_min * weight, -np.inf)
        j = int(np.argmax(value))
        chosen.append(j)
        avail[j] = False
        dj = np.sum((feats - feats[j]) ** 2, axis=1)
        d_min = np.minimum(d_min, dj)
    return np.asarray(chosen, dtype=int)
