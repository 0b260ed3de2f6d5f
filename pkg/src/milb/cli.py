"""Command-line harness: run / sweep / verify / bench / report."""

import argparse
import csv
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import acquisition as acq
from . import benchmarks as bench
from . import gmm, harness, mdn
from .rng import RngStream


def _version_string() -> str:
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if desc.returncode == 0:
            return f"{__version__}+g{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _load_config(path: str) -> harness.ExperimentConfig:
    with open(path) as f:
        return harness.ExperimentConfig.from_dict(json.load(f))


def _write_manifest(out_dir: Path, cfg: harness.ExperimentConfig, timings: dict):
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "version": _version_string(),
        "timings": timings,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _write_record(out_dir: Path, record: harness.RunRecord) -> Path:
    path = out_dir / f"run_{record.config_hash}_{record.seed}.json"
    path.write_text(record.to_json())
    return path


def _cmd_run(args) -> int:
    try:
        cfg = _load_config(args.config)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    if args.acquisition:
        cfg.acquisition = args.acquisition
    if args.strategy:
        cfg.strategy = args.strategy
    if args.sbal_temp is not None:
        cfg.sbal_temp = args.sbal_temp
    if args.maxdist_w is not None:
        cfg.maxdist_w = args.maxdist_w
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = harness.run_experiment(cfg, args.seed)
    path = _write_record(out_dir, record)
    _write_manifest(out_dir, cfg, {f"seed_{record.seed}_round_elapsed_s": record.elapsed_s})
    print(f"wrote {path}")
    print(f"final test NLL: {record.final_nll:.4f} at n={record.rounds[-1]['n_labeled']}")
    return 0


def _cmd_sweep(args) -> int:
    try:
        cfg = _load_config(args.config)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    acquisitions = args.acquisitions.split(",")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else cfg.seeds
    timings = {}
    all_rows = []
    for a in acquisitions:
        cfg_a = harness.ExperimentConfig.from_dict({**cfg.to_dict(), "acquisition": a})
        records = []
        for seed in seeds:
            rec = harness.run_experiment(cfg_a, seed)
            _write_record(out_dir, rec)
            timings[f"{a}_seed_{seed}_total_s"] = sum(rec.elapsed_s)
            records.append(rec)
            print(f"{a} seed {seed}: final NLL {rec.final_nll:.4f}")
        for row in harness.aggregate(records):
            all_rows.append({"acquisition": a, **row})
    _write_curves(out_dir / "curves.csv", all_rows, with_acquisition=True)
    _write_manifest(out_dir, cfg, timings)
    return 0


def _write_curves(path: Path, rows, with_acquisition: bool):
    cols = ["round", "n_labeled", "nll_mean", "nll_min", "nll_max", "nll_std"]
    if with_acquisition:
        cols = ["acquisition"] + cols
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=cols)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row[c] for c in cols})


def _cmd_report(args) -> int:
    out_dir = Path(args.out)
    paths = sorted(out_dir.glob("run_*.json"))
    if not paths:
        print(f"error: no run_*.json records under {out_dir}", file=sys.stderr)
        return 2
    groups = {}
    for p in paths:
        rec = harness.RunRecord.from_dict(json.loads(p.read_text()))
        groups.setdefault((rec.config_hash, rec.acquisition), []).append(rec)
    multi = len(groups) > 1
    rows = []
    for (_, a), records in sorted(groups.items()):
        for row in harness.aggregate(records):
            rows.append({"acquisition": a, **row})
    _write_curves(out_dir / "curves.csv", rows, with_acquisition=multi)
    print(f"wrote {out_dir / 'curves.csv'} ({len(rows)} rows)")
    for (_, a), records in sorted(groups.items()):
        final = harness.aggregate(records)[-1]
        print(
            f"{a}: final NLL {final['nll_mean']:.4f} "
            f"[{final['nll_min']:.4f}, {final['nll_max']:.4f}] "
            f"+/- {final['nll_std']:.4f} over {len(records)} seed(s)"
        )
    return 0


def _suite_entropy_sandwich(n_mixtures=200, n_samples=20_000) -> bool:
    stream = RngStream(7, 101)
    for _ in range(n_mixtures):
        k = int(stream.integers(1, 9))
        n = int(stream.integers(1, 21))
        m = gmm.DiagGaussianMixture(
            stream.dirichlet(np.ones(k)),
            3.0 * stream.std_normal((k, n)),
            np.exp(stream.std_normal((k, n))),
        )
        est, se = gmm.entropy_mc(m, n_samples, stream.split("mc"))
        if gmm.entropy_lower(m) > est + 3 * se or gmm.entropy_upper(m) < est - 3 * se:
            return False
    return True


def _suite_gradients(n_draws=4) -> bool:
    from .checks import max_gradient_relative_error

    stream = RngStream(7, 202)
    return max_gradient_relative_error(stream, n_draws) < 1e-4


def _suite_mi_certificate(n_ensembles=40, n_samples=20_000) -> bool:
    from .checks import mc_mutual_information, random_ensemble_prediction

    stream = RngStream(7, 303)
    for _ in range(n_ensembles):
        pred = random_ensemble_prediction(stream)
        score = float(acq.score_milb([pred]).scores[0])
        mi, se = mc_mutual_information(pred, n_samples, stream.split("mc"))
        if score > mi + 3 * se:
            return False
    return True


def _cmd_verify(args) -> int:
    suites = [
        ("entropy-bounds", _suite_entropy_sandwich),
        ("gradient-check", _suite_gradients),
        ("mi-certificate", _suite_mi_certificate),
    ]
    ok = True
    for name, fn in suites:
        t0 = time.perf_counter()
        passed = fn()
        ok &= passed
        status = "PASS" if passed else "FAIL"
        print(f"{status} {name} ({time.perf_counter() - t0:.1f}s)")
    return 0 if ok else 1


def _cmd_bench(args) -> int:
    stream = RngStream(7, 404)
    b, z, k, n = 2048, 4, 8, 20
    w = np.full((b, z), 1.0 / z)
    alpha = np.full((b, z, k), 1.0 / k)
    mu = stream.std_normal((b, z, k, n))
    var = np.exp(stream.std_normal((b, z, k, n)))
    t0 = time.perf_counter()
    acq._milb_from_stacked(w, alpha, mu, var)
    dt = time.perf_counter() - t0
    print(f"milb scoring: {b / dt:,.0f} candidates/s (Z={z}, K={k}, N={n})")

    weights = np.full((b, k), 1.0 / k)
    t0 = time.perf_counter()
    gmm.entropy_lower_batch(weights, mu[:, 0], var[:, 0])
    dt = time.perf_counter() - t0
    print(f"entropy lower bound: {b / dt:,.0f} mixtures/s (K={k}, N={n})")

    sys_dw = bench.make_double_well_system()
    xs = bench.dw_sample_input(sys_dw, stream, 256)
    t0 = time.perf_counter()
    bench.dw_label(sys_dw, xs, stream.split("bench"), np.arange(256))
    dt = time.perf_counter() - t0
    print(f"double-well simulator: {256 / dt:,.0f} trajectories/s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="milb",
        description="Active-learning experiments with MDN ensembles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, required=True)
    run.add_argument("--out", default="runs")
    run.add_argument("--acquisition", choices=harness.ACQUISITIONS)
    run.add_argument("--strategy", choices=harness.STRATEGIES)
    run.add_argument("--sbal-temp", type=float, default=None)
    run.add_argument("--maxdist-w", type=float, default=None)
    run.set_defaults(fn=_cmd_run)

    sweep = sub.add_parser("sweep", help="acquisitions x seeds grid")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--out", default="runs")
    sweep.add_argument("--acquisitions", default="random,variance,milb")
    sweep.add_argument("--seeds", default=None)
    sweep.set_defaults(fn=_cmd_sweep)

    verify = sub.add_parser("verify", help="entropy-bound, gradient and MI suites")
    verify.set_defaults(fn=_cmd_verify)

    bench_p = sub.add_parser("bench", help="kernel throughput")
    bench_p.set_defaults(fn=_cmd_bench)

    report = sub.add_parser("report", help="aggregate run records to CSV")
    report.add_argument("--out", default="runs")
    report.set_defaults(fn=_cmd_report)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return args.fn(args)


def main() -> None:
    sys.exit(cli_main())
