"""The active-learning loop: train, score, select, label, evaluate.

A run is fully determined by (config, seed): the pool, every training
stream, every acquisition draw and every simulator label derive from one
master stream, so replaying a run reproduces its record byte for byte.
Wall-clock timings are collected separately (see the run manifest) to keep
the serialized record deterministic.
"""

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import acquisition as acq
from . import benchmarks as bench
from . import gmm, mdn, selection
from .rng import RngStream

ACQUISITIONS = ("random", "variance", "milb", "bait", "coreset")
STRATEGIES = ("topk", "sbal", "maxdist")


class RoundFailure(RuntimeError):
    """A round produced a non-finite loss or NLL; carries the round index."""

    def __init__(self, round_index, message):
        super().__init__(f"round {round_index}: {message}")
        self.round_index = round_index


def worker_count() -> int:
    """Worker cap from MILB_THREADS: unset/1 sequential, 0 auto, n capped."""
    raw = os.environ.get("MILB_THREADS", "").strip()
    if not raw:
        return 1
    n = int(raw)
    return os.cpu_count() or 1 if n == 0 else max(1, n)


def parallel_map(fn, items):
    """Order-preserving map over a thread pool; falls back to serial."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


@dataclass
class ExperimentConfig:
    benchmark: str = "double_well"
    hidden: int = 128
    depth: int = 3
    k_mdn: int = 8
    n_ens: int = 8
    train: mdn.TrainConfig = field(default_factory=mdn.TrainConfig)
    pool_size: int = 50_000
    test_size: int = 2_000
    init_size: int = 100
    rounds: int = 20
    query_batch: int = 50
    acquisition: str = "milb"
    strategy: str = "topk"
    sbal_temp: float = 1.0
    maxdist_w: float = 1.0
    chunk_size: int = 256
    bait_ridge: float = 1e-3
    probe_size: int = 0
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])

    def __post_init__(self):
        if self.acquisition not in ACQUISITIONS:
            raise ValueError(f"unknown acquisition {self.acquisition!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.init_size + self.rounds * self.query_batch > self.pool_size:
            raise ValueError("labeling budget exceeds pool size")

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        train = d.pop("train", {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(train=mdn.TrainConfig(**train), **d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:12]


def default_config(benchmark: str) -> ExperimentConfig:
    """Per-benchmark defaults matching the reference experiment tables."""
    if benchmark == "multimodal":
        return ExperimentConfig(
            benchmark="multimodal", hidden=128, depth=2, k_mdn=5, n_ens=8,
            rounds=20, query_batch=50, train=mdn.TrainConfig(),
        )
    if benchmark == "double_well":
        return ExperimentConfig(
            benchmark="double_well", hidden=128, depth=3, k_mdn=8, n_ens=8,
            rounds=20, query_batch=50, train=mdn.TrainConfig(),
        )
    if benchmark == "ternary":
        return ExperimentConfig(
            benchmark="ternary", hidden=64, depth=2, k_mdn=4, n_ens=8,
            rounds=30, query_batch=15,
            train=mdn.TrainConfig(
                peak_lr=2e-4, weight_decay=5e-2, batch_size=64,
                iter_cap=40_000, iter_per_sample=200, min_iter=2_000,
            ),
        )
    raise ValueError(f"unknown benchmark {benchmark!r}")


def build_system(benchmark: str):
    if benchmark == "multimodal":
        return bench.make_multimodal_system()
    if benchmark == "double_well":
        return bench.make_double_well_system()
    if benchmark == "ternary":
        return bench.make_ternary_system()
    raise ValueError(f"unknown benchmark {benchmark!r}")


@dataclass
class RunRecord:
    benchmark: str
    acquisition: str
    strategy: str
    seed: int
    config_hash: str
    rounds: list = field(default_factory=list)
    elapsed_s: list = field(default_factory=list)  # wall clock, manifest-only

    @property
    def final_nll(self) -> float:
        return self.rounds[-1]["test_nll"]

    def to_dict(self) -> dict:
        return {
            "benchmark": self.benchmark,
            "acquisition": self.acquisition,
            "strategy": self.strategy,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "rounds": self.rounds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(benchmark=d["benchmark"], acquisition=d["acquisition"],
                   strategy=d["strategy"], seed=d["seed"],
                   config_hash=d["config_hash"], rounds=d["rounds"])


def _marginal_arrays(ens, xs):
    """Marginal-mixture parameter stacks for a batch: (B, ZK) / (B, ZK, N)."""
    alphas, means, variances, _ = mdn.predict_ensemble_batch(ens, xs)
    w = ens.member_weights[:, None, None]
    z, b, k = alphas.shape
    n = means.shape[-1]
    beta = np.moveaxis(w * alphas, 0, 1).reshape(b, z * k)
    mu = np.moveaxis(means, 0, 1).reshape(b, z * k, n)
    var = np.moveaxis(variances, 0, 1).reshape(b, z * k, n)
    return beta, mu, var


def evaluate_nll(ens: mdn.MdnEnsemble, test_x, test_y, chunk: int = 1024) -> float:
    """Mean -log marginal density of the ensemble over the test set."""
    test_x = np.atleast_2d(np.asarray(test_x, dtype=float))
    test_y = np.atleast_2d(np.asarray(test_y, dtype=float))
    if test_x.shape[0] == 0:
        raise ValueError("empty test set")
    total = 0.0
    for start in range(0, test_x.shape[0], chunk):
        xs = test_x[start : start + chunk]
        ys = test_y[start : start + chunk]
        beta, mu, var = _marginal_arrays(ens, xs)
        total += -float(np.sum(gmm.stacked_log_pdf(beta, mu, var, ys)))
    return total / test_x.shape[0]


def score_pool(cfg: ExperimentConfig, ens, inputs, stream: RngStream) -> acq.ScoreVector:
    """Scalar acquisition scores over every pool candidate, chunked."""
    n = inputs.shape[0]
    if cfg.acquisition == "random":
        return acq.score_random(n, stream.split("random_scores"))
    chunks = [inputs[s : s + cfg.chunk_size] for s in range(0, n, cfg.chunk_size)]

    def one(chunk_x):
        alphas, means, variances, _ = mdn.predict_ensemble_batch(ens, chunk_x)
        w = np.broadcast_to(ens.member_weights[None, :],
                            (chunk_x.shape[0], ens.n_members))
        a = np.moveaxis(alphas, 0, 1)
        mu = np.moveaxis(means, 0, 1)
        var = np.moveaxis(variances, 0, 1)
        if cfg.acquisition == "variance":
            return acq._variance_from_stacked(w, a, mu)
        return acq._milb_from_stacked(w, a, mu, var)

    scores = np.concatenate(parallel_map(one, chunks))
    return acq.ScoreVector(scores, cfg.acquisition)


def _backbone_features(ens, inputs, chunk: int) -> np.ndarray:
    feats = [
        mdn.mixture_params(ens.members[0], inputs[s : s + chunk])[3]
        for s in range(0, inputs.shape[0], chunk)
    ]
    return np.concatenate(feats, axis=0)


def select_queries(cfg: ExperimentConfig, ens, pool: bench.LabeledPool,
                   stream: RngStream) -> np.ndarray:
    """Pick the next query batch of pool indices for the configured method."""
    mask = pool.unlabeled_mask()
    remaining = np.flatnonzero(mask)

    if cfg.acquisition == "coreset":
        cand = _backbone_features(ens, pool.inputs[remaining], cfg.chunk_size)
        lab = _backbone_features(ens, pool.inputs[pool.labeled], cfg.chunk_size)
        picks = acq.select_coreset(cand, lab, cfg.query_batch)
        return remaining[picks]
    if cfg.acquisition == "bait":
        member0 = ens.members[0]
        cand = acq.fisher_embed_pool(member0, pool.inputs[remaining],
                                     stream.split("bait_cand"))
        lab = acq.fisher_embed_pool(member0, pool.inputs[pool.labeled],
                                    stream.split("bait_labeled"))
        picks = acq.select_bait(cand, lab, cfg.query_batch, cfg.bait_ridge)
        return remaining[picks]

    scores = score_pool(cfg, ens, pool.inputs, stream)
    req = selection.BatchRequest(
        k=cfg.query_batch, strategy=cfg.strategy, exclusions=pool.labeled,
        temperature=cfg.sbal_temp, score_weight=cfg.maxdist_w,
    )
    if cfg.strategy == "topk":
        return selection.select_topk(scores.scores, req)
    if cfg.strategy == "sbal":
        return selection.select_sbal(scores.scores, req, stream.split("sbal"))
    return selection.select_maxdist(scores.scores, pool.inputs, req)


def run_experiment(cfg: ExperimentConfig, seed: int) -> RunRecord:
    """One active-learning run: initial training plus `rounds` query rounds."""
    master = RngStream(seed).split("run")
    system = build_system(cfg.benchmark)
    model_cfg = mdn.ModelConfig(in_dim=system.in_dim, out_dim=system.out_dim,
                                hidden=cfg.hidden, depth=cfg.depth, n_comp=cfg.k_mdn)
    pool = bench.make_pool(system, cfg.pool_size, cfg.test_size, cfg.init_size,
                           master.split("data"))
    probe_x = None
    if cfg.probe_size > 0:
        probe_x = bench.sample_input(system, master.split("probe"), cfg.probe_size)

    record = RunRecord(cfg.benchmark, cfg.acquisition, cfg.strategy, int(seed),
                       cfg.config_hash())
    ens = None
    for rnd in range(cfg.rounds + 1):
        t0 = time.perf_counter()
        acquired = []
        try:
            if rnd > 0:
                picks = select_queries(cfg, ens, pool, master.split("acquire", rnd))
                pool.acquire(picks)
                acquired = [int(i) for i in picks]
            ens = mdn.train_ensemble(pool.training_data(), model_cfg, cfg.train,
                                     cfg.n_ens, master.split("train", rnd),
                                     map_fn=parallel_map)
            nll = evaluate_nll(ens, pool.test_x, pool.test_y)
        except (mdn.TrainingDiverged, FloatingPointError) as exc:
            raise RoundFailure(rnd, str(exc)) from exc
        if not np.isfinite(nll):
            raise RoundFailure(rnd, f"non-finite test NLL {nll!r}")
        entry = {
            "round": rnd,
            "n_labeled": int(pool.n_labeled),
            "test_nll": float(nll),
            "acquired": acquired,
        }
        if probe_x is not None:
            alphas, means, variances, _ = mdn.predict_ensemble_batch(ens, probe_x)
            w = np.broadcast_to(ens.member_weights[None, :],
                                (probe_x.shape[0], ens.n_members))
            entry["probe_milb_mean"] = float(np.mean(acq._milb_from_stacked(
                w, np.moveaxis(alphas, 0, 1), np.moveaxis(means, 0, 1),
                np.moveaxis(variances, 0, 1),
            )))
        record.rounds.append(entry)
        record.elapsed_s.append(time.perf_counter() - t0)
    return record


def aggregate(records) -> list:
    """Per-round mean/min/max/std of test NLL across seeds."""
    records = list(records)
    if not records:
        raise ValueError("need at least one record")
    n_rounds = {len(r.rounds) for r in records}
    if len(n_rounds) != 1:
        raise ValueError(f"records disagree on round counts: {sorted(n_rounds)}")
    rows = []
    for i in range(n_rounds.pop()):
        nlls = np.array([r.rounds[i]["test_nll"] for r in records])
        labeled = {r.rounds[i]["n_labeled"] for r in records}
        if len(labeled) != 1:
            raise ValueError("records disagree on labeled counts")
        rows.append({
            "round": i,
            "n_labeled": labeled.pop(),
            "nll_mean": float(np.mean(nlls)),
            "nll_min": float(np.min(nlls)),
            "nll_max": float(np.max(nlls)),
            "nll_std": float(np.std(nlls, ddof=1)) if len(nlls) > 1 else 0.0,
        })
    return rows
