"""Acceptance suite: every release criterion at its stated tolerance.

Each test exercises one criterion end to end and reports a pass/fail line
in the terminal summary.  The heavy learning-curve criteria (7 and 8)
dominate the runtime; everything else finishes in seconds to minutes.
"""

import json
import time

import numpy as np
import pytest

from milb import acquisition as acq
from milb import benchmarks as B
from milb import cli, gmm, harness, mdn, selection
from milb.checks import max_gradient_relative_error, mc_mutual_information
from milb.rng import RngStream

HALF_LOG_2_OVER_E = 0.5 * np.log(2.0 / np.e)


def test_criterion_1_entropy_sandwich(criterion):
    t0 = time.time()
    stream = RngStream(2024, 1)
    violations = 0
    for i in range(1000):
        s = stream.split(i)
        k = int(s.integers(1, 9))
        n = int(s.integers(1, 21))
        m = gmm.DiagGaussianMixture(
            s.dirichlet(np.ones(k)),
            3.0 * s.std_normal((k, n)),
            np.exp(s.std_normal((k, n))),
        )
        est, se = gmm.entropy_mc(m, 100_000, s.split("mc"))
        if gmm.entropy_lower(m) > est + 3 * se:
            violations += 1
        if gmm.entropy_upper(m) < est - 3 * se:
            violations += 1
    elapsed = time.time() - t0
    passed = violations == 0 and elapsed < 120
    criterion(1, "entropy sandwich on 1000 random mixtures", passed, elapsed)
    assert violations == 0
    assert elapsed < 120


def test_criterion_2_milb_certificate(criterion):
    t0 = time.time()
    stream = RngStream(2024, 2)
    violations = 0
    for i in range(200):
        s = stream.split(i)
        z = int(s.integers(1, 5))
        k = int(s.integers(1, 4))
        n = int(s.integers(1, 5))
        members = tuple(
            gmm.DiagGaussianMixture(
                s.split(j, "w").dirichlet(np.ones(k)),
                2.0 * s.split(j, "m").std_normal((k, n)),
                np.exp(s.split(j, "v").std_normal((k, n))),
            )
            for j in range(z)
        )
        pred = gmm.EnsemblePrediction(members, s.dirichlet(np.ones(z)))
        score = float(acq.score_milb([pred]).scores[0])
        mi, se = mc_mutual_information(pred, 100_000, s.split("mc"))
        if score > mi + 3 * se:
            violations += 1
    elapsed = time.time() - t0
    passed = violations == 0 and elapsed < 300
    criterion(2, "MI-LB below MC mutual information on 200 ensembles", passed, elapsed)
    assert violations == 0
    assert elapsed < 300


def test_criterion_3_gradient_correctness(criterion):
    t0 = time.time()
    err = max_gradient_relative_error(RngStream(2024, 3), n_draws=10)
    elapsed = time.time() - t0
    passed = err < 1e-4 and elapsed < 60
    criterion(3, f"gradients vs central differences (max rel err {err:.2e})",
              passed, elapsed)
    assert err < 1e-4
    assert elapsed < 60


def test_criterion_4_closed_form_milb_values(criterion):
    t0 = time.time()
    m = gmm.DiagGaussianMixture([1.0], [[0.0]], [[1.0]])
    ident = float(acq.score_milb(
        [gmm.EnsemblePrediction((m, m), [0.5, 0.5])]
    ).scores[0])
    sep = float(acq.score_milb([
        gmm.EnsemblePrediction(
            (
                gmm.DiagGaussianMixture([1.0], [[-50.0]], [[1.0]]),
                gmm.DiagGaussianMixture([1.0], [[50.0]], [[1.0]]),
            ),
            [0.5, 0.5],
        )
    ]).scores[0])
    ok_ident = abs(ident - HALF_LOG_2_OVER_E) < 1e-9
    ok_sep = abs(sep - (np.log(2.0) + HALF_LOG_2_OVER_E)) < 1e-6
    elapsed = time.time() - t0
    criterion(4, "closed-form MI-LB values (identical and separated members)",
              ok_ident and ok_sep, elapsed)
    assert ok_ident
    assert ok_sep


def test_criterion_5_multimodal_oracle_nll(criterion):
    t0 = time.time()
    system = B.make_multimodal_system()
    s = RngStream(2024, 5).split("test")
    tx = B.mm_sample_input(system, s.split("x"), 2000)
    ty = B.mm_label(system, tx, s.split("y"), np.arange(2000))
    nll = B.mm_oracle_nll(system, tx, ty)
    elapsed = time.time() - t0
    passed = 21.5 <= nll <= 24.5 and elapsed < 60
    criterion(5, f"multimodal oracle NLL {nll:.2f} in [21.5, 24.5]", passed, elapsed)
    assert 21.5 <= nll <= 24.5
    assert elapsed < 60


def test_criterion_6_kramers_phase_transition(criterion):
    t0 = time.time()
    res = B.kramers_escape_fractions(
        [0.3, 0.5, 0.7, 1.0], 2000, RngStream(2024, 6).split("kramers")
    )
    esc = res["opposite_well_fraction"]
    trapped = esc[0] < 0.01
    both = res["smaller_well_fraction"][2] >= 0.20
    monotone = all(esc[i] <= esc[i + 1] for i in range(3))
    elapsed = time.time() - t0
    passed = trapped and both and monotone and elapsed < 120
    criterion(6, f"Kramers transition (escape fractions {[round(e, 4) for e in esc]})",
              passed, elapsed)
    assert trapped
    assert both
    assert monotone
    assert elapsed < 120


def test_criterion_7_mixture_head_necessity(criterion):
    t0 = time.time()
    system = B.make_double_well_system()
    s = RngStream(2024, 7).split("headgap")
    n_train, n_test = 20_000, 2_000
    tx = B.dw_sample_input(system, s.split("x"), n_train)
    ty = B.dw_label(system, tx, s.split("y"), np.arange(n_train))
    vx = B.dw_sample_input(system, s.split("vx"), n_test)
    vy = B.dw_label(system, vx, s.split("vy"), np.arange(n_test))
    nll = {}
    for k in (8, 1):
        model_cfg = mdn.ModelConfig(in_dim=7, out_dim=20, hidden=128, depth=3,
                                    n_comp=k)
        ens = mdn.train_ensemble((tx, ty), model_cfg, mdn.TrainConfig(), 4,
                                 s.split("ens", k), map_fn=harness.parallel_map)
        nll[k] = harness.evaluate_nll(ens, vx, vy)
    gap = nll[1] - nll[8]
    elapsed = time.time() - t0
    passed = nll[8] <= nll[1] - 2.0 and elapsed < 2700
    criterion(7, f"mixture head necessity (K=8 {nll[8]:.2f} vs K=1 {nll[1]:.2f}, "
                 f"gap {gap:.2f} >= 2)", passed, elapsed)
    assert nll[8] <= nll[1] - 2.0
    assert elapsed < 2700


def test_criterion_8_acquisition_ordering(criterion):
    t0 = time.time()
    finals = {}
    for acquisition in ("milb", "random"):
        cfg = harness.ExperimentConfig(
            benchmark="double_well", hidden=128, depth=3, k_mdn=8, n_ens=4,
            pool_size=10_000, test_size=2_000, init_size=100, rounds=10,
            query_batch=30, acquisition=acquisition, strategy="topk",
            train=mdn.TrainConfig(),
        )
        for seed in (0, 1, 2):
            finals[(acquisition, seed)] = harness.run_experiment(cfg, seed).final_nll
    milb_finals = [finals[("milb", s)] for s in (0, 1, 2)]
    random_finals = [finals[("random", s)] for s in (0, 1, 2)]
    everywhere = all(m < r for m, r in zip(milb_finals, random_finals))
    ratio = float(np.mean(random_finals) / np.mean(milb_finals))
    elapsed = time.time() - t0
    passed = everywhere and ratio >= 1.5 and elapsed < 10_800
    criterion(8, f"acquisition ordering (MI-LB {[round(v, 1) for v in milb_finals]} vs "
                 f"Random {[round(v, 1) for v in random_finals]}, ratio {ratio:.2f})",
              passed, elapsed)
    assert everywhere
    assert ratio >= 1.5
    assert elapsed < 10_800


def test_criterion_9_variance_failure_demo(criterion):
    t0 = time.time()
    report = acq.variance_failure_demo(RngStream(2024, 9), n_samples=100_000)
    ok_var = (
        abs(report["uniform_variance"] - 1.0) < 0.01
        and abs(report["polar_variance"] - 1.0) < 0.01
    )
    ok_gap = abs(report["entropy_gap"] - report["expected_gap"]) < 1e-3
    elapsed = time.time() - t0
    passed = ok_var and ok_gap and elapsed < 10
    criterion(9, f"variance-failure demo (entropy gap {report['entropy_gap']:.4f})",
              passed, elapsed)
    assert ok_var
    assert ok_gap
    assert elapsed < 10


def test_criterion_10_run_determinism(criterion, tmp_path):
    t0 = time.time()
    cfg = harness.ExperimentConfig(
        benchmark="double_well", hidden=24, depth=2, k_mdn=3, n_ens=2,
        pool_size=400, test_size=100, init_size=40, rounds=2, query_batch=20,
        acquisition="milb", strategy="topk",
        train=mdn.TrainConfig(iter_cap=300, batch_size=64),
    )
    config_path = tmp_path / "cfg.json"
    config_path.write_text(json.dumps(cfg.to_dict()))
    blobs = []
    for attempt in ("first", "second"):
        out = tmp_path / attempt
        code = cli.cli_main([
            "run", "--config", str(config_path), "--seed", "3", "--out", str(out)
        ])
        assert code == 0
        blobs.append((out / f"run_{cfg.config_hash()}_3.json").read_bytes())
    passed = blobs[0] == blobs[1]
    criterion(10, "byte-identical run records for identical (config, seed)",
              passed, time.time() - t0)
    assert passed


def test_criterion_11_selection_strategy_limits(criterion):
    t0 = time.time()
    stream = RngStream(2024, 11)
    sbal_ok = True
    for i in range(100):
        scores = stream.split("scores", i).uniform(0.0, 1.0, 60)
        req = selection.BatchRequest(k=10, strategy="sbal", temperature=1e-9)
        got = set(selection.select_sbal(scores, req, stream.split("g", i)))
        want = set(selection.select_topk(scores, selection.BatchRequest(k=10)))
        sbal_ok &= got == want

    from test_selection import pure_farthest_point

    maxdist_ok = True
    for i in range(100):
        s = stream.split("fps", i)
        feats = s.std_normal((30, 3))
        scores = s.uniform(0.0, 1.0, 30)
        req = selection.BatchRequest(k=6, strategy="maxdist", exclusions=[0, 1],
                                     score_weight=0.0)
        got = set(selection.select_maxdist(scores, feats, req))
        maxdist_ok &= got == set(pure_farthest_point(feats, [0, 1], 6))
    elapsed = time.time() - t0
    passed = sbal_ok and maxdist_ok
    criterion(11, "selection limits (SBAL T->0 = top-k, MaxDist w=0 = farthest point)",
              passed, elapsed)
    assert sbal_ok
    assert maxdist_ok
