"""Mixture Density Network on an MLP backbone, trained from scratch.

The network maps an input through `depth` hidden layers of width `hidden`
(GELU activations, exact erf form) and a linear head producing, for each of
K mixture components, a logit, a mean vector and a raw variance vector.
Weights are softmax(logits); variances are softplus(raw) + VAR_FLOOR so the
predicted density never degenerates.

Gradients are reverse-mode, written out by hand; AdamW with adaptive
gradient clipping and a warmup-then-exponential-decay learning rate
reproduces the training schedule used throughout the experiments.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, expit, logsumexp

from .gmm import VAR_FLOOR, DiagGaussianMixture, EnsemblePrediction
from .rng import RngStream

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class TrainingDiverged(RuntimeError):
    """Raised when parameters or loss become non-finite during training."""


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    phi = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * phi


def softplus(x):
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    # inverse of softplus for y > 0: log(e^y - 1)
    return np.log(np.expm1(y))


@dataclass
class ModelConfig:
    """Architecture of one ensemble member."""

    in_dim: int
    out_dim: int
    hidden: int = 128
    depth: int = 2
    n_comp: int = 5


@dataclass
class TrainConfig:
    """Optimizer and schedule settings shared by all ensemble members."""

    peak_lr: float = 5e-4
    weight_decay: float = 1e-2
    clip_threshold: float = 0.1
    batch_size: int = 128
    iter_cap: int = 10_000
    iter_per_sample: int = 10
    min_iter: int = 1
    decay_rate: float = 0.9
    decay_every: int = 2000
    warmup_cap: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def n_iterations(self, n_labeled: int) -> int:
        """Adaptive step count: clamp(iter_per_sample * n_lab, min_iter, cap)."""
        return int(min(self.iter_cap, max(self.min_iter, self.iter_per_sample * n_labeled)))

    def warmup_steps(self, n_iter: int) -> int:
        return int(min(self.warmup_cap, max(1, n_iter // 5)))


class MdnParams:
    """Backbone weights/biases plus the mixture head, as named blocks."""

    def __init__(self, cfg: ModelConfig, blocks: dict):
        self.cfg = cfg
        self._blocks = blocks

    def blocks(self):
        return self._blocks.items()

    def __getitem__(self, name):
        return self._blocks[name]

    def copy(self) -> "MdnParams":
        return MdnParams(self.cfg, {k: v.copy() for k, v in self._blocks.items()})

    def l2_distance(self, other: "MdnParams") -> float:
        return float(
            np.sqrt(sum(np.sum((v - other[k]) ** 2) for k, v in self.blocks()))
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self._blocks.values())


def head_width(cfg: ModelConfig) -> int:
    return cfg.n_comp * (1 + 2 * cfg.out_dim)


def init_params(cfg: ModelConfig, stream: RngStream) -> MdnParams:
    """LeCun-style scaled-uniform init; head biases zero so sigma^2 ~ softplus(0)."""
    blocks = {}
    fan_in = cfg.in_dim
    for layer in range(cfg.depth):
        limit = np.sqrt(3.0 / fan_in)
        blocks[f"w{layer}"] = stream.uniform(-limit, limit, (cfg.hidden, fan_in))
        blocks[f"b{layer}"] = np.zeros(cfg.hidden)
        fan_in = cfg.hidden
    limit = np.sqrt(3.0 / cfg.hidden)
    blocks["head_w"] = stream.uniform(-limit, limit, (head_width(cfg), cfg.hidden))
    blocks["head_b"] = np.zeros(head_width(cfg))
    return MdnParams(cfg, blocks)


def _forward_cache(params: MdnParams, x):
    """Run the backbone + head, keeping activations for backprop."""
    cfg = params.cfg
    h = np.asarray(x, dtype=float)
    if h.ndim != 2 or h.shape[1] != cfg.in_dim:
        raise ValueError(f"expected input of shape (B, {cfg.in_dim}), got {h.shape}")
    acts = [h]
    pre = []
    for layer in range(cfg.depth):
        a = h @ params[f"w{layer}"].T + params[f"b{layer}"]
        pre.append(a)
        h = gelu(a)
        acts.append(h)
    u = h @ params["head_w"].T + params["head_b"]
    k, n = cfg.n_comp, cfg.out_dim
    logits = u[:, :k]
    means = u[:, k : k + k * n].reshape(-1, k, n)
    raw_var = u[:, k + k * n :].reshape(-1, k, n)
    log_alpha = logits - logsumexp(logits, axis=1, keepdims=True)
    variances = softplus(raw_var) + VAR_FLOOR
    return {
        "acts": acts,
        "pre": pre,
        "logits": logits,
        "log_alpha": log_alpha,
        "means": means,
        "raw_var": raw_var,
        "variances": variances,
    }


def mixture_params(params: MdnParams, x):
    """Predicted mixture parameters for a batch of inputs.

    Returns (alpha, means, variances, backbone) with shapes
    (B, K), (B, K, N), (B, K, N), (B, hidden).
    """
    c = _forward_cache(params, x)
    return np.exp(c["log_alpha"]), c["means"], c["variances"], c["acts"][-1]


def forward(params: MdnParams, x) -> DiagGaussianMixture:
    """Predicted conditional mixture at a single input vector."""
    alpha, means, variances, _ = mixture_params(params, np.asarray(x, dtype=float)[None, :])
    return DiagGaussianMixture(alpha[0], means[0], variances[0])


def _batch_loglik(cache, y):
    """Per-row mixture log-likelihood and component log terms."""
    means, variances, log_alpha = cache["means"], cache["variances"], cache["log_alpha"]
    diff = y[:, None, :] - means
    comp = -0.5 * np.sum(
        diff * diff / variances + np.log(variances) + np.log(2.0 * np.pi), axis=2
    )
    joint = log_alpha + comp  # (B, K)
    lp = logsumexp(joint, axis=1)
    return lp, joint


def nll_loss(params: MdnParams, batch_x, batch_y) -> float:
    """Mean negative log-likelihood of the batch."""
    batch_x = np.atleast_2d(np.asarray(batch_x, dtype=float))
    batch_y = np.atleast_2d(np.asarray(batch_y, dtype=float))
    if batch_x.shape[0] == 0:
        raise ValueError("empty batch")
    cache = _forward_cache(params, batch_x)
    lp, _ = _batch_loglik(cache, batch_y)
    return -float(np.mean(lp))


def loss_and_grad(params: MdnParams, batch_x, batch_y):
    """NLL and its exact reverse-mode gradient as a name->array dict."""
    cfg = params.cfg
    batch_x = np.atleast_2d(np.asarray(batch_x, dtype=float))
    batch_y = np.atleast_2d(np.asarray(batch_y, dtype=float))
    if batch_x.shape[0] == 0:
        raise ValueError("empty batch")
    b = batch_x.shape[0]
    cache = _forward_cache(params, batch_x)
    lp, joint = _batch_loglik(cache, batch_y)
    loss = -float(np.mean(lp))

    alpha = np.exp(cache["log_alpha"])
    gamma = np.exp(joint - lp[:, None])  # mixture responsibilities
    means, variances, raw_var = cache["means"], cache["variances"], cache["raw_var"]
    diff = batch_y[:, None, :] - means

    # head-output gradients of the mean NLL
    d_logits = (alpha - gamma) / b
    d_means = gamma[:, :, None] * (means - batch_y[:, None, :]) / variances / b
    d_var = -gamma[:, :, None] * (diff * diff / variances - 1.0) / (2.0 * variances) / b
    d_raw = d_var * expit(raw_var)

    k, n = cfg.n_comp, cfg.out_dim
    d_u = np.concatenate(
        [d_logits, d_means.reshape(b, k * n), d_raw.reshape(b, k * n)], axis=1
    )

    grads = {}
    h_last = cache["acts"][-1]
    grads["head_w"] = d_u.T @ h_last
    grads["head_b"] = d_u.sum(axis=0)
    d_h = d_u @ params["head_w"]
    for layer in range(cfg.depth - 1, -1, -1):
        d_a = d_h * gelu_grad(cache["pre"][layer])
        grads[f"w{layer}"] = d_a.T @ cache["acts"][layer]
        grads[f"b{layer}"] = d_a.sum(axis=0)
        if layer > 0:
            d_h = d_a @ params[f"w{layer}"]
    return loss, grads


def grad_nll(params: MdnParams, batch_x, batch_y) -> dict:
    """Gradient of nll_loss with respect to every parameter block."""
    return loss_and_grad(params, batch_x, batch_y)[1]


def clip_gradients(params: MdnParams, grads: dict, threshold: float, eps: float = 1e-3):
    """Adaptive clipping: enforce ||g|| / (||w|| + eps) <= threshold per block."""
    for name, w in params.blocks():
        g = grads[name]
        gn = float(np.linalg.norm(g))
        cap = threshold * (float(np.linalg.norm(w)) + eps)
        if gn > cap:
            grads[name] = g * (cap / gn)
    return grads


def learning_rate(step: int, peak_lr: float, warmup_steps: int,
                  decay_rate: float = 0.9, decay_every: int = 2000) -> float:
    """Linear warmup to the peak, then exponential decay per decay_every steps."""
    if step < warmup_steps:
        return peak_lr * step / warmup_steps
    return peak_lr * decay_rate ** ((step - warmup_steps) / decay_every)


@dataclass
class AdamState:
    m: dict
    v: dict
    warmup_steps: int
    step_count: int = 0


def init_adam_state(params: MdnParams, n_iter: int, cfg: TrainConfig) -> AdamState:
    zeros = lambda: {k: np.zeros_like(v) for k, v in params.blocks()}
    return AdamState(m=zeros(), v=zeros(), warmup_steps=cfg.warmup_steps(n_iter))


def adamw_step(params: MdnParams, grads: dict, state: AdamState, step_index: int,
               cfg: TrainConfig):
    """One clipped AdamW update; returns the mutated (params, state)."""
    grads = clip_gradients(params, grads, cfg.clip_threshold)
    lr = learning_rate(step_index, cfg.peak_lr, state.warmup_steps,
                       cfg.decay_rate, cfg.decay_every)
    t = step_index + 1
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, w in params.blocks():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        w -= lr * (update + cfg.weight_decay * w)
    state.step_count = t
    return params, state


def train_member(data, model_cfg: ModelConfig, train_cfg: TrainConfig,
                 stream: RngStream, record_loss: bool = False):
    """Train one member on (X, Y) with the adaptive iteration schedule."""
    x, y = data
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n_lab = x.shape[0]
    if n_lab < 1:
        raise ValueError("need at least one labeled example")
    n_iter = train_cfg.n_iterations(n_lab)
    params = init_params(model_cfg, stream.split("init"))
    state = init_adam_state(params, n_iter, train_cfg)
    batch_stream = stream.split("batches")
    batch = min(train_cfg.batch_size, n_lab)
    losses = [] if record_loss else None
    for step in range(n_iter):
        idx = batch_stream.integers(0, n_lab, size=batch)
        loss, grads = loss_and_grad(params, x[idx], y[idx])
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        params, state = adamw_step(params, grads, state, step, train_cfg)
        if not params.all_finite():
            raise TrainingDiverged(f"non-finite parameters after step {step}")
        if record_loss:
            losses.append(loss)
    if record_loss:
        return params, np.asarray(losses)
    return params


@dataclass
class MdnEnsemble:
    """Independently trained members with uniform weights."""

    members: list
    member_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        if self.member_weights is None:
            n = len(self.members)
            self.member_weights = np.full(n, 1.0 / n)

    @property
    def n_members(self) -> int:
        return len(self.members)


def train_ensemble(data, model_cfg: ModelConfig, train_cfg: TrainConfig,
                   n_ens: int, master_stream: RngStream,
                   map_fn=map) -> MdnEnsemble:
    """Train n_ens members on identical data with independent streams."""
    streams = [master_stream.split("member", z) for z in range(n_ens)]
    members = list(map_fn(
        lambda s: train_member(data, model_cfg, train_cfg, s), streams
    ))
    return MdnEnsemble(members)


def predict_ensemble(ens: MdnEnsemble, x) -> EnsemblePrediction:
    """Per-member conditional mixtures at one input."""
    return EnsemblePrediction(
        tuple(forward(p, x) for p in ens.members), ens.member_weights
    )


def predict_ensemble_batch(ens: MdnEnsemble, x):
    """Stacked member predictions over a batch.

    Returns (alphas, means, variances, backbone0) with shapes
    (Z, B, K), (Z, B, K, N), (Z, B, K, N) and member-0 activations (B, hidden).
    """
    alphas, means, variances = [], [], []
    backbone0 = None
    for z, p in enumerate(ens.members):
        a, mu, var, h = mixture_params(p, x)
        alphas.append(a)
        means.append(mu)
        variances.append(var)
        if z == 0:
            backbone0 = h
    return np.stack(alphas), np.stack(means), np.stack(variances), backbone0


# ---------------------------------------------------------------------------
# Checkpoints: flat JSON manifest with dims and row-major parameter arrays.
# ---------------------------------------------------------------------------


def params_to_manifest(params: MdnParams, step_count: int = 0) -> dict:
    cfg = params.cfg
    return {
        "in_dim": cfg.in_dim,
        "out_dim": cfg.out_dim,
        "hidden": cfg.hidden,
        "depth": cfg.depth,
        "n_comp": cfg.n_comp,
        "step_count": int(step_count),
        "blocks": {k: v.tolist() for k, v in params.blocks()},
    }


def params_from_manifest(manifest: dict) -> MdnParams:
    cfg = ModelConfig(
        in_dim=manifest["in_dim"],
        out_dim=manifest["out_dim"],
        hidden=manifest["hidden"],
        depth=manifest["depth"],
        n_comp=manifest["n_comp"],
    )
    blocks = {k: np.asarray(v, dtype=float) for k, v in manifest["blocks"].items()}
    return MdnParams(cfg, blocks)


def ensemble_to_manifest(ens: MdnEnsemble, step_count: int = 0) -> dict:
    return {
        "member_weights": ens.member_weights.tolist(),
        "members": [params_to_manifest(p, step_count) for p in ens.members],
    }


def ensemble_from_manifest(manifest: dict) -> MdnEnsemble:
    members = [params_from_manifest(m) for m in manifest["members"]]
    return MdnEnsemble(members, np.asarray(manifest["member_weights"], dtype=float))
