"""Command line entry point: ``run``, ``sweep``, ``gen-stream`` and ``plot-data``.

Log verbosity comes from ``TACLE_LOG_LEVEL`` (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .experiment import (
    PLOT_KINDS,
    ExperimentConfig,
    emit_plot_data,
    load_config,
    load_results,
    mean_std,
    read_sweep_csv,
    run_experiment,
    sweep_threshold,
)
from .streams import generate_stream, write_stream_csv


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _config(path) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def cmd_run(args) -> int:
    cfg = _config(args.config)
    if args.pipeline:
        cfg = replace(cfg, pipeline=args.pipeline)
    if args.seeds is not None:
        cfg = replace(cfg, seeds=tuple(args.seeds))
    if args.out:
        cfg = replace(cfg, output_dir=str(args.out))
    results = run_experiment(cfg)
    for r in results:
        print(f"seed {r.seed}: average incremental accuracy {r.average_incremental_accuracy:.4f}")
    m, s = mean_std([r.average_incremental_accuracy for r in results])
    print(f"{cfg.pipeline} [{cfg.config_hash()}]: {m:.4f} +- {s:.4f} over {len(results)} seeds")
    if cfg.output_dir:
        print(f"results written to {cfg.output_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args.config)
    if args.seeds is not None:
        cfg = replace(cfg, seeds=tuple(args.seeds))
    out = Path(args.out) if args.out else None
    sweep = sweep_threshold(cfg, args.alphas, args.betas, out)
    header = "alpha\\beta " + " ".join(f"{b:>7g}" for b in sweep.betas)
    print(header)
    for a, row in zip(sweep.alphas, sweep.grid):
        print(f"{a:<10g} " + " ".join(f"{v:7.4f}" for v in row))
    if out:
        print(f"grid written to {out}")
    return 0


def cmd_gen_stream(args) -> int:
    cfg = _config(args.config)
    stream_cfg = cfg.stream if args.seed is None else replace(cfg.stream, seed=args.seed)
    write_stream_csv(generate_stream(stream_cfg), args.out)
    print(f"stream written to {args.out}")
    return 0


def cmd_plot_data(args) -> int:
    if args.kind == "sweep_grid":
        source = Path(args.results)
        if source.is_dir():
            source = source / "sweep.csv"
        data = read_sweep_csv(source)
    else:
        data = load_results(args.results)
        if args.config_hash:
            data = [r for r in data if r.config_hash == args.config_hash]
        hashes = {r.config_hash for r in data}
        if len(hashes) > 1:
            raise SystemExit(f"results from several configs in {args.results}; pick one with --config-hash")
    out = args.out or Path(args.results if Path(args.results).is_dir() else ".") / f"{args.kind}.csv"
    emit_plot_data(data, args.kind, out)
    print(f"{args.kind} written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tacle", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment over one or more seeds")
    r.add_argument("--config", type=Path)
    r.add_argument("--pipeline", choices=["tacle", "fixed", "labeled", "fixed_threshold", "labeled_only"])
    r.add_argument("--seeds", type=_ints)
    r.add_argument("--out", type=Path)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="grid over threshold alpha and beta")
    s.add_argument("--config", type=Path)
    s.add_argument("--alphas", type=_floats, default=[0.45, 0.5, 0.55])
    s.add_argument("--betas", type=_floats, default=[0.6, 0.65, 0.7])
    s.add_argument("--seeds", type=_ints)
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gen-stream", help="write a synthetic stream as embedding CSV")
    g.add_argument("--config", type=Path)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_gen_stream)

    d = sub.add_parser("plot-data", help="emit plot-ready CSV from stored results")
    d.add_argument("--results", required=True, help="results directory (or sweep CSV)")
    d.add_argument("--kind", choices=PLOT_KINDS, required=True)
    d.add_argument("--config-hash")
    d.add_argument("--out", type=Path)
    d.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("TACLE_LOG_LEVEL", "WARNING").upper(),
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
