"""Command-line entry point: dataset generation, odometry runs, benchmarks.

Subcommands:

    liomap gen  SPEC.json  --out DIR [--seed N]
    liomap run  DATASET    --out DIR [--config CFG.json] [--seed N]
                           [--parallel-rebuild on|off] [--validate]
    liomap bench DATASET|- --out DIR [--config CFG.json] [--sizes 1e4,1e5]
                           [--validate] [--parallel-rebuild on|off]

`bench -` skips the dataset trace and only runs the size sweep given by
--sizes. Exit code 0 means every requested output was written and no
validation check failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import dataset as dset
from .bench import (AccuracyReport, compute_accuracy, run_size_benchmark,
                    run_tree_benchmark, trace_from_dataset, write_bench_csv)
from .config import RunConfig
from .dataset import DatasetFormatError, load_dataset, load_traj_csv
from .ikdtree import BalanceParams
from .lio import OdometryDiverged, run_odometry
from .synth import SimSpec, export_dataset


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.from_file(path)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    data = cfg.to_dict()
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    pr = getattr(args, "parallel_rebuild", None)
    if pr is not None:
        data["parallel_rebuild"] = pr == "on"
    return RunConfig.from_dict(data)


def cmd_gen(args) -> int:
    with open(args.spec) as f:
        raw = json.load(f)
    if args.seed is not None:
        raw["seed"] = args.seed
    spec = SimSpec.from_dict(raw)
    world, traj, sensors = spec.build()
    os.makedirs(args.out, exist_ok=True)
    n = export_dataset(world, traj, sensors, spec.seed, args.out)
    print(f"wrote {n} scans to {args.out}")
    return 0


def cmd_run(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    ds = load_dataset(args.dataset)
    os.makedirs(args.out, exist_ok=True)
    result = run_odometry(ds, cfg)
    t, pos, quat = result.trajectory_arrays()
    dset.write_traj_csv(os.path.join(args.out, "traj.csv"), t, pos, quat)
    _write_timing_csv(os.path.join(args.out, "timing.csv"), result.records)
    bench_records = [bench_mod.BenchRecord(
        scan_index=r.index, tree_size=r.tree_size, valid_count=r.valid_points,
        insert_us_mean=r.insert_us_mean, knn_us_mean=r.knn_us_mean,
        boxdel_us_mean=r.boxdel_us_mean, peak_us=r.peak_us,
        rebuilds=r.rebuilds) for r in result.records]
    write_bench_csv(bench_records, os.path.join(args.out, "bench.csv"))
    gt = ds.gt_path()
    if gt is not None:
        gt_t, gt_pos, gt_quat = load_traj_csv(gt)
        report = compute_accuracy(t, pos, quat, gt_t, gt_pos, gt_quat)
        with open(os.path.join(args.out, "accuracy.json"), "w") as f:
            f.write(report.to_json() + "\n")
        print(f"rmse {report.rmse_m:.4f} m, end-to-end "
              f"{report.end_to_end_m:.4f} m over {report.length_m:.1f} m")
    print(f"processed {len(result.records)} scans; map "
          f"{result.map_stats['valid_points']} valid points")
    if args.validate:
        errors = _validate_run(ds, cfg, result)
        if errors:
            print(f"validation FAILED: {errors}", file=sys.stderr)
            return 3
        print("validation passed")
    return 0


def _validate_run(ds, cfg, result) -> list:
    """Post-run oracle checks on the final map: cached-attribute recount,
    one valid point per downsample cell, and kNN spot checks against the
    exhaustive oracle."""
    errors = []
    if len(result.records) != ds.scan_count:
        errors.append("missing per-scan records")
    try:
        result.tree.check_consistency()
    except AssertionError as e:
        errors.append(f"tree attributes inconsistent: {e}")
    valid = result.tree.flatten()
    if valid.shape[0]:
        cells = np.floor(valid / cfg.downsample_res_m).astype(np.int64)
        _, counts = np.unique(cells, axis=0, return_counts=True)
        if counts.max() > 1:
            errors.append("a downsample cell holds more than one valid point")
        rng = np.random.default_rng(cfg.seed)
        picks = rng.integers(0, valid.shape[0], size=min(50, valid.shape[0]))
        for i in picks:
            target = valid[i] + rng.normal(0, 0.3, 3)
            got = [d for _, d in result.tree.knn_search(target, cfg.knn_k)]
            want = [d for _, d in bench_mod.brute_force_knn(
                valid, target, cfg.knn_k)]
            if not np.allclose(got, want, rtol=0, atol=0):
                errors.append("kNN result differs from the exhaustive oracle")
                break
    return errors


def _write_timing_csv(path: str, records) -> None:
    cols = ["propagate_ms", "compensate_ms", "update_ms", "map_insert_ms",
            "region_ms"]
    with open(path, "w", newline="\n") as f:
        f.write("scan_index," + ",".join(cols) + "\n")
        for r in records:
            f.write(str(r.index) + ","
                    + ",".join("%.6g" % r.timings_ms[c] for c in cols) + "\n")


def cmd_bench(args) -> int:
    cfg = _apply_overrides(_load_config(args.config), args)
    os.makedirs(args.out, exist_ok=True)
    params = BalanceParams(cfg.alpha_bal, cfg.alpha_del, cfg.n_max)
    summary: dict = {}
    records = []
    failed = False
    if args.dataset != "-":
        ds = load_dataset(args.dataset)
        trace = trace_from_dataset(ds, cfg)
        records, trace_summary = run_tree_benchmark(
            trace, params, parallel=cfg.parallel_rebuild,
            validate=args.validate)
        summary["trace"] = trace_summary
        if args.validate and trace_summary["knn_mismatches"]:
            failed = True
    if args.sizes:
        sizes = [float(s) for s in args.sizes.split(",")]
        size_records, fits = run_size_benchmark(
            sizes, params, parallel=cfg.parallel_rebuild, seed=cfg.seed)
        records.extend(size_records)
        summary["size_sweep"] = {
            "sizes": [r.tree_size for r in size_records],
            "insert_us": [r.insert_us_mean for r in size_records],
            "knn_us": [r.knn_us_mean for r in size_records],
            "fits": fits,
        }
    write_bench_csv(records, os.path.join(args.out, "bench.csv"))
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    if failed:
        print("validation FAILED: kNN mismatches against the exhaustive "
              "oracle", file=sys.stderr)
        return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="liomap",
        description="Incremental k-d tree mapping and LiDAR-inertial "
                    "odometry toolkit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="configuration keys (JSON file for --config):\n"
               + RunConfig.describe())
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    p_gen.add_argument("spec", help="generator spec JSON")
    p_gen.add_argument("--out", required=True, help="output dataset directory")
    p_gen.add_argument("--seed", type=int, default=None,
                       help="override the spec's seed")
    p_gen.set_defaults(func=cmd_gen)

    p_run = sub.add_parser("run", help="run odometry over a dataset")
    p_run.add_argument("dataset", help="dataset directory")
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--config", default=None, help="RunConfig JSON file")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--parallel-rebuild", choices=("on", "off"),
                       default=None)
    p_run.add_argument("--validate", action="store_true",
                       help="enable post-run oracle checks")
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench", help="tree benchmark on a dataset "
                                           "trace and/or size sweep")
    p_bench.add_argument("dataset", help="dataset directory, or '-' for "
                                         "size sweep only")
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--config", default=None)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument("--sizes", default=None,
                         help="comma-separated tree sizes, e.g. 1e4,1e5")
    p_bench.add_argument("--parallel-rebuild", choices=("on", "off"),
                         default=None)
    p_bench.add_argument("--validate", action="store_true",
                         help="cross-check kNN answers against the "
                              "exhaustive oracle (untimed pass)")
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DatasetFormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OdometryDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
