"""Command-line experiment runner.

Subcommands: ``gen-synthetic`` (write a synthetic feature file), ``run``
(execute the config's method x seed matrix), ``eval`` (aggregate a run
directory), ``score`` (ad-hoc min-FRE scoring of a feature file against a
checkpoint). Exit codes: 0 success, 2 config error, 3 data error,
4 runtime error. Set ``COUQ_LOG`` to adjust verbosity.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import glob
import json
import logging
import os
import sys
import time

import numpy as np

from .checkpoint import load_checkpoint
from .config import METHODS, load_config
from .errors import (
    CheckpointError,
    ConfigError,
    CouqError,
    DataError,
    DimensionError,
    FormatError,
    InsufficientDataError,
    ScheduleError,
)
from .evalkit import RunReport, emit_report
from .featstore import gen_synthetic, load_features, save_features
from .runner import run_single
from .subspace import min_fre_batch

log = logging.getLogger("couq")

_DATA_ERRORS = (
    FormatError, DataError, DimensionError, InsufficientDataError,
    ScheduleError, CheckpointError,
)


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("COUQ_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (CouqError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="couq",
        description="Continual open-world uncertainty quantification experiments",
    )
    sub = parser.add_subparsers(required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic .feat file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("run", help="run the experiment matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--methods", help="comma-separated override of run.methods")
    p.add_argument("--seeds", help="comma-separated override of run.seeds")
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="aggregate reports in a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score a feature file against a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_score)
    return parser


def cmd_gen_synthetic(args) -> int:
    config = load_config(args.config)
    if config.synthetic is None:
        raise ConfigError("config has no [dataset.synthetic] section")
    fs = gen_synthetic(config.synthetic, config.synthetic_seed)
    save_features(fs, args.out, "csv" if args.out.endswith(".csv") else "binary")
    print(f"wrote {len(fs)} records (dim {fs.dim}) to {args.out}")
    return 0


def cmd_run(args) -> int:
    config = load_config(args.config)
    methods = args.methods.split(",") if args.methods else config.methods
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else config.seeds

    os.makedirs(args.out, exist_ok=True)
    manifest = {
        "config": os.path.abspath(args.config),
        "methods": methods,
        "seeds": seeds,
        "status": "partial",
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "completed_runs": [],
    }
    _write_manifest(args.out, manifest)

    jobs = [(m, s) for m in methods for s in seeds]
    reports: list[RunReport] = []
    try:
        if args.threads > 1:
            with concurrent.futures.ThreadPoolExecutor(args.threads) as pool:
                futures = {
                    pool.submit(
                        run_single, config, m, s, os.path.join(args.out, m, f"seed{s}")
                    ): (m, s)
                    for m, s in jobs
                }
                for fut in concurrent.futures.as_completed(futures):
                    reports.append(fut.result())
                    manifest["completed_runs"].append(list(futures[fut]))
        else:
            for m, s in jobs:
                reports.append(
                    run_single(config, m, s, os.path.join(args.out, m, f"seed{s}"))
                )
                manifest["completed_runs"].append([m, s])
    except Exception:
        manifest["status"] = "failed"
        _write_manifest(args.out, manifest)
        raise

    emit_report(reports, args.out)
    manifest["status"] = "complete"
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    _write_manifest(args.out, manifest)
    print(f"wrote {len(reports)} run reports to {args.out}")
    return 0


def _write_manifest(out_dir: str, manifest: dict) -> None:
    path = os.path.join(out_dir, "MANIFEST.json")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def cmd_eval(args) -> int:
    paths = sorted(glob.glob(os.path.join(args.run_dir, "report_*.json")))
    if not paths:
        raise DataError(f"no report JSONs found in {args.run_dir}")
    reports = []
    for path in paths:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                reports.append(RunReport.from_json(fh.read()))
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"corrupt report {path}: {exc}") from exc

    by_method: dict[str, list[RunReport]] = {}
    for r in reports:
        by_method.setdefault(r.method, []).append(r)

    rows = []
    for method in sorted(by_method):
        group = by_method[method]
        aurocs = [r.averages()["auroc"] for r in group if r.averages()["auroc"] is not None]
        accs = [
            r.averages()["cumulative_accuracy"]
            for r in group
            if r.averages()["cumulative_accuracy"] is not None
        ]
        rows.append({
            "method": method,
            "seeds": len(group),
            "auroc_mean": float(np.mean(aurocs)) if aurocs else None,
            "auroc_median": float(np.median(aurocs)) if aurocs else None,
            "cumacc_mean": float(np.mean(accs)) if accs else None,
        })

    header = f"{'method':<20} {'seeds':>5} {'auroc':>8} {'auroc~':>8} {'cumacc':>8}"
    print(header)
    print("-" * len(header))
    for row in rows:
        print(
            f"{row['method']:<20} {row['seeds']:>5} "
            f"{_cell(row['auroc_mean']):>8} {_cell(row['auroc_median']):>8} "
            f"{_cell(row['cumacc_mean']):>8}"
        )

    out_csv = os.path.join(args.run_dir, "eval.csv")
    with open(out_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["method", "seeds", "auroc_mean", "auroc_median", "cumacc_mean"],
            lineterminator="\n",
        )
        writer.writeheader()
        writer.writerows(rows)
    print(f"\nwrote {out_csv}")
    return 0


def _cell(value) -> str:
    return "-" if value is None else f"{value:.4f}"


def cmd_score(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if not ckpt.old_subspaces:
        raise CheckpointError(f"{args.checkpoint} holds no class subspaces")
    fs = load_features(
        args.features, "csv" if args.features.endswith(".csv") else "binary"
    )
    scores, classes = min_fre_batch(ckpt.old_subspaces.values(), fs.vectors)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write("id,score,nearest_class\n")
        for rid, s, c in zip(fs.ids.tolist(), scores, classes):
            out.write(f"{rid},{s!r},{int(c)}\n")
    finally:
        if args.out:
            out.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
