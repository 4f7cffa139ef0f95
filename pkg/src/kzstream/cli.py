"""Command-line front end.

    kzstream run --mode insert-only|dynamic-2pass|cost-only \
        --input stream.kzs --out DIR [--k K --z Z --eps E --delta D --seed S]
    kzstream experiment --name NAME --out DIR [--seed S --trials T]

Exit codes: 0 success, 2 parse/usage error, 3 overflow or probabilistic
failure, 4 enumeration-budget refusal.  Flags override the stream header's
clustering parameters.  KZSTREAM_THREADS controls experiment fan-out.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .coreset import coreset_to_bytes, write_coreset_text
from .core import solve_approx
from .errors import BudgetError, ParseError, RecoveryOverflowError, UsageError
from .experiments import EXPERIMENT_NAMES, run_experiment
from .manifest import build_manifest, write_manifest
from .meter import MemoryMeter
from .params import PipelineConfig
from .pipeline import InsertPipeline, JlProjector
from .rng import derive_seed
from .streamfile import read_stream
from .twopass import KMEDIAN, KZ, pass_one, pass_two


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kzstream")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a pipeline over a stream file")
    run.add_argument("--mode", required=True,
                     choices=["insert-only", "dynamic-2pass", "cost-only"])
    run.add_argument("--input", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--k", type=int)
    run.add_argument("--z", type=int)
    run.add_argument("--eps", type=float)
    run.add_argument("--delta", type=int)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--gamma-scale", type=float)

    exp = sub.add_parser("experiment", help="run a named experiment")
    exp.add_argument("--name", required=True)
    exp.add_argument("--out", required=True)
    exp.add_argument("--seed", type=int, default=0)
    exp.add_argument("--trials", type=int)
    exp.add_argument("--sizes", type=int, nargs="+")
    return parser


def _write_report(path, fields: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(fields.keys()))
        writer.writerow(list(fields.values()))


def _cmd_run(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    insertion_only = args.mode != "dynamic-2pass"
    header, updates = read_stream(args.input, insertion_only=insertion_only)
    params = header.params(seed=args.seed, eps=args.eps, k=args.k, z=args.z,
                           delta=args.delta)
    config = PipelineConfig(expected_stream_len=max(2, len(updates)))
    if args.gamma_scale is not None:
        config.gamma_scale = args.gamma_scale
    meter = MemoryMeter(n=max(2, len(updates)), d=params.d, delta=params.delta)

    overflow = False
    extra = {"mode": args.mode, "records": len(updates)}
    if args.mode == "insert-only":
        pipe = InsertPipeline(params, config=config, meter=meter)
        for point, delta in updates:
            for _ in range(delta):
                pipe.insert(point)
        S = pipe.query()
        extra["samples"] = pipe.tree.n_inserted
        extra["tree_overrun"] = pipe.tree.overrun
    elif args.mode == "cost-only":
        proj = JlProjector(params, config)
        params_m = params.with_dim(proj.m)
        meter.add("projector", proj.m * params.d)
        pipe = InsertPipeline(params_m, config=config, meter=meter)
        for point, delta in updates:
            snapped = proj.to_lattice(point)
            for _ in range(delta):
                pipe.insert(snapped)
        S = pipe.query()
        params = params_m  # the emitted coreset lives in projected space
        extra["samples"] = pipe.tree.n_inserted
        extra["projected_dim"] = proj.m
        extra["projection_scale"] = proj.scale
    else:
        mode = KMEDIAN if params.z == 1 else KZ
        summary = pass_one(updates, params, mode, config, meter=meter)
        extra["pass_one_cost_estimate"] = summary.Z
        extra["gamma_hat"] = summary.gamma
        try:
            S = pass_two(updates, summary, params, meter=meter)
        except RecoveryOverflowError as exc:
            manifest = build_manifest(
                command="run", params=params, config=config,
                input_path=args.input, meter=meter,
                extra={**extra, "overflow": True, "error": str(exc)})
            write_manifest(manifest, out_dir / "manifest.json")
            print(f"error: sparse recovery overflow: {exc}", file=sys.stderr)
            return 3

    if len(S) > 0:
        centers, final_cost, _ = solve_approx(
            S.as_dataset(), params, params.k,
            seed=derive_seed(params.seed, "report"), config=config)
    else:
        final_cost = 0.0
    if args.mode == "cost-only":
        final_cost = final_cost / extra["projection_scale"] ** params.z

    coreset_path = out_dir / "coreset.kzc"
    write_coreset_text(S, coreset_path)
    binary_path = out_dir / "coreset.bin"
    binary_path.write_bytes(coreset_to_bytes(S))
    report_path = out_dir / "report.csv"
    _write_report(report_path, {
        "mode": args.mode,
        "records": len(updates),
        "coreset_points": len(S),
        "final_cost": final_cost,
        "peak_words": meter.peak_words,
        "word_bits": meter.word_bits,
        "samples": extra.get("samples", ""),
        "overflow": int(overflow),
    })
    manifest = build_manifest(
        command="run", params=params, config=config, input_path=args.input,
        meter=meter, outputs=[coreset_path, binary_path, report_path],
        extra={**extra, "overflow": overflow, "final_cost": final_cost})
    write_manifest(manifest, out_dir / "manifest.json")
    return 0


def _cmd_experiment(args) -> int:
    path, _ = run_experiment(args.name, args.out, seed=args.seed,
                             sizes=args.sizes, trials=args.trials)
    print(path)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_experiment(args)
    except (ParseError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RecoveryOverflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except BudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
