"""Command-line entry point.

Subcommands:
    bench exp1        actual-versus-counterfactual decay run
    bench exp2        full intervention comparison run
    bench grid        axis-product sweep with derived per-point seeds
    bench gen-stream  write a synthetic stream to a line-record file
    bench certify     calibrate the Gaussian noise level for a deviation
    bench inspect     summarize a stream or apply one intervention

Exit codes: 0 success, 1 configuration error, 2 runtime failure. Result
files are written atomically (temp file, then rename).
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench, certify, configio, metrics
from .errors import InvalidConfig, StateAlignError
from .interventions import InterventionContext, apply as apply_intervention, parse_intervention
from .olbfgs import initial_state, replay
from .stream import edit_history, generate_stream, read_stream, select_deletion_set, write_stream

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench", description="Deletion benchmarks for online L-BFGS state alignment."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=str, default=None, help="key-value config file")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=None, help="override the base seed")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    add_run_args(sub.add_parser("exp1", help="decay run without intervention"))
    add_run_args(sub.add_parser("exp2", help="full intervention comparison"))
    add_run_args(sub.add_parser("grid", help="axis-product sweep"))

    gen = sub.add_parser("gen-stream", help="write a synthetic stream file")
    gen.add_argument("--config", type=str, default=None)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=str, required=True, help="output stream file")

    cert = sub.add_parser("certify", help="noise level for a deviation bound")
    cert.add_argument("--alpha", type=float, required=True)
    cert.add_argument("--eps", type=float, required=True)
    cert.add_argument("--delta", type=float, required=True)
    cert.add_argument("--beta", type=float, default=0.0)

    insp = sub.add_parser("inspect", help="summarize a stream or one intervention")
    insp.add_argument("--stream", type=str, default=None, help="stream file to summarize")
    insp.add_argument("--config", type=str, default=None)
    insp.add_argument("--seed", type=int, default=None)
    insp.add_argument("--intervention", type=str, default=None, help="method id to apply")
    return parser


def _load_cfg(args, defaults: bench.ExperimentConfig) -> bench.ExperimentConfig:
    cfg = defaults
    if args.config is not None:
        cfg = configio.load_config(args.config, base=cfg)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    cfg.validate()
    return cfg


def _write_run_outputs(result: bench.RunResult, out_dir: str, fmt: str) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "json":
        path = out / "results.json"
        bench.write_results_json([result], str(path))
    else:
        path = out / "results.csv"
        bench.write_results_csv([result], str(path))
    written.append(str(path))
    for method, trace in result.traces.items():
        tpath = out / f"trace_{method}.csv"
        bench.write_trace_csv(trace, str(tpath))
        written.append(str(tpath))
    return written


def _cmd_experiment(args, which: int) -> int:
    defaults = bench.experiment1_defaults() if which == 1 else bench.experiment2_defaults()
    cfg = _load_cfg(args, defaults)
    runner = bench.run_experiment1 if which == 1 else bench.run_experiment2
    result = runner(cfg, keep_traces=args.out is not None)
    if args.out:
        for path in _write_run_outputs(result, args.out, args.format):
            print(path)
    for row in result.methods:
        print(
            f"{row.method}: future_state_auc={row.future_state_auc!r} "
            f"exact_recovery={str(row.exact_recovery).lower()}"
        )
    if result.assumption_violations:
        print("assumption violations: " + "; ".join(result.assumption_violations))
    return EXIT_OK


def _cmd_grid(args) -> int:
    cfg = _load_cfg(args, bench.experiment2_defaults())
    axes = configio.load_grid_axes(args.config) if args.config else {}
    results = bench.run_grid(cfg, axes, workers=args.workers)
    summary = bench.aggregate(results)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.format == "json":
            bench.write_results_json(results, str(out / "results.json"))
            print(str(out / "results.json"))
        else:
            bench.write_results_csv(results, str(out / "results.csv"))
            print(str(out / "results.csv"))
        bench.write_summary_csv(summary, str(out / "summary.csv"))
        print(str(out / "summary.csv"))
    for row in summary:
        print(
            f"{row['method']}: median_auc={row['median_future_state_auc']!r} "
            f"exact_recovery_rate={row['exact_recovery_rate']!r}"
        )
    return EXIT_OK


def _cmd_gen_stream(args) -> int:
    cfg = _load_cfg(args, bench.experiment2_defaults())
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    strm = generate_stream(cfg.stream, seed)
    write_stream(strm, args.out)
    print(f"wrote {len(strm.events)} events to {args.out}")
    return EXIT_OK


def _cmd_certify(args) -> int:
    cert = certify.certificate(args.alpha, args.eps, args.delta, args.beta)
    print(f"sigma {cert.sigma!r}")
    print(f"alpha {cert.alpha!r}")
    print(f"epsilon {cert.epsilon!r}")
    print(f"delta {cert.delta!r}")
    print(f"beta {cert.beta!r}")
    print(f"exact {str(cert.exact).lower()}")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    if args.stream:
        strm = read_stream(args.stream)
        kinds = {}
        for e in strm.events:
            kinds[e.op.value] = kinds.get(e.op.value, 0) + 1
        print(f"stream seed={strm.seed} regime={strm.regime.value} dimension={strm.dimension}")
        print(f"events {len(strm.events)} " + " ".join(f"{k}={v}" for k, v in sorted(kinds.items())))
        return EXIT_OK
    cfg = _load_cfg(args, bench.experiment2_defaults())
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    scfg = cfg.stream
    step_cfg = replace(cfg.optimizer, ridge=scfg.ridge)
    strm = generate_stream(scfg, seed)
    theta0 = initial_state(scfg.dimension, step_cfg)
    prefix = strm.prefix(scfg.deletion_time)
    actual = replay(theta0, prefix, step_cfg)
    deletions = select_deletion_set(
        strm, scfg.deletion_time, scfg.deletion_mode, scfg.deletion_size, grad_state=actual.w
    )
    print(
        f"trained {len(prefix)} events: |w|={float(np.linalg.norm(actual.w))!r} "
        f"pairs={len(actual.memory)}"
    )
    print(f"deletion set ({scfg.deletion_mode.value}): {sorted(deletions.indices)}")
    if args.intervention:
        spec = parse_intervention(args.intervention, step_cfg.tau)
        ctx = InterventionContext(
            actual=actual,
            deletions=deletions,
            step_cfg=step_cfg,
            theta0=theta0,
            full_prefix=prefix,
            window_buffer=prefix,
        )
        intervened = apply_intervention(spec, ctx)
        oracle = replay(theta0, edit_history(prefix, deletions), step_cfg)
        probes = metrics.make_probes(scfg.dimension, cfg.probe_count, seed)
        e_w = metrics.param_error(intervened.state.w, oracle.w)
        e_z = metrics.memory_operator_error(intervened.state.memory, oracle.memory, probes)
        print(
            f"{intervened.label}: param_err={e_w!r} mem_err={e_z!r} "
            f"state_err={metrics.state_error(e_w, e_z, cfg.memory_weight)!r} "
            f"replayed={intervened.cost.replayed_events}"
        )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "exp1":
            return _cmd_experiment(args, 1)
        if args.command == "exp2":
            return _cmd_experiment(args, 2)
        if args.command == "grid":
            return _cmd_grid(args)
        if args.command == "gen-stream":
            return _cmd_gen_stream(args)
        if args.command == "certify":
            return _cmd_certify(args)
        if args.command == "inspect":
            return _cmd_inspect(args)
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StateAlignError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
