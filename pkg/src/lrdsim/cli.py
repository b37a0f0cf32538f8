"""Command-line surface: run, sweep, costs, analyze.

Exit codes: 0 success, 1 configuration or usage error, 2 run completed
but diverged (sweeps also exit 2 when any point diverges).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import costs as costs_mod
from .config import ConfigError, RunConfig, load_file
from .distsim import Engine
from .logio import LogFormatError, read_log, write_log

SWEEP_AXES = ("rank", "K", "batch_and_workers", "omega", "sparsity")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad usage; the CLI contract reserves
    # 2 for divergence, so usage problems are remapped to exit 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lrdsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment and write a metric log")
    p_run.add_argument("--config", required=True, help="YAML config path")
    p_run.add_argument("--out", required=True, help="output log path")
    p_run.add_argument("--threads", type=int, default=None, help="worker threads (default: workers)")
    p_run.add_argument("--seed", type=int, default=None, help="override master_seed")

    p_sweep = sub.add_parser("sweep", help="run one config across an axis of values")
    p_sweep.add_argument("--config", required=True, help="base YAML config path")
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--values", required=True, help="comma-separated axis values")
    p_sweep.add_argument("--out-dir", required=True, help="directory for per-point logs and summary.csv")
    p_sweep.add_argument("--threads", type=int, default=None)
    p_sweep.add_argument("--parallel", type=int, default=1, help="sweep points run concurrently")
    p_sweep.add_argument("--seed", type=int, default=None, help="override master_seed for every point")

    p_costs = sub.add_parser("costs", help="print per-variant payload/memory counts and reduction ratios")
    p_costs.add_argument("--p", type=int, required=True)
    p_costs.add_argument("--q", type=int, required=True)
    p_costs.add_argument("--r", type=int, required=True)
    p_costs.add_argument("--k", type=int, default=None, help="sets k-x, k-u and k-v together")
    p_costs.add_argument("--k-x", type=int, default=None)
    p_costs.add_argument("--k-u", type=int, default=None)
    p_costs.add_argument("--k-v", type=int, default=None)

    p_an = sub.add_parser("analyze", help="summarize a metric log")
    p_an.add_argument("log", help="metric log path")
    return parser


def _apply_seed(cfg: RunConfig, seed) -> RunConfig:
    if seed is None:
        return cfg
    return dataclasses.replace(cfg, master_seed=seed)


def cmd_run(args) -> int:
    try:
        cfg = _apply_seed(load_file(args.config), args.seed)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    engine = Engine(cfg, threads=args.threads)
    summary = write_log(args.out, cfg, engine.basis_inconsistent, engine.records())
    if summary["diverged"]:
        print(f"run diverged after {summary['steps']} steps; log at {args.out}", file=sys.stderr)
        return 2
    print(f"wrote {summary['steps']} steps to {args.out}")
    return 0


def _sweep_config(base: RunConfig, axis: str, raw_value: str) -> tuple[RunConfig, str]:
    """Resolved config for one sweep point plus a filename-safe label."""
    if axis == "rank":
        r = int(raw_value)
        return dataclasses.replace(base, rank=r), f"rank{r}"
    if axis == "K":
        k = int(raw_value)
        sched = dataclasses.replace(base.schedule, k_x=k, k_u=k, k_v=k)
        return dataclasses.replace(base, schedule=sched), f"K{k}"
    if axis == "batch_and_workers":
        m = int(raw_value)
        global_batch = base.workers * base.problem.batch_size
        if global_batch % m != 0:
            raise ConfigError(f"global batch {global_batch} does not divide across {m} workers")
        prob = dataclasses.replace(base.problem, batch_size=global_batch // m)
        return dataclasses.replace(base, workers=m, problem=prob), f"M{m}"
    if axis == "omega":
        w = float(raw_value)
        qhm = dataclasses.replace(base.qhm, omega=w)
        return dataclasses.replace(base, qhm=qhm), f"omega{w}"
    if axis == "sparsity":
        keep = float(raw_value)
        flags = dataclasses.replace(base.flags, sparsify_keep=keep)
        return dataclasses.replace(base, flags=flags), f"keep{keep}"
    raise ConfigError(f"unknown sweep axis '{axis}'")


def cmd_sweep(args) -> int:
    from .config import validate

    try:
        base = _apply_seed(load_file(args.config), args.seed)
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError("no sweep values given")
        points = []
        for raw in values:
            cfg, label = _sweep_config(base, args.axis, raw)
            validate(cfg)
            points.append((raw, cfg, label))
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_point(point):
        raw, cfg, label = point
        path = out_dir / f"{label}.log"
        engine = Engine(cfg, threads=args.threads)
        summary = write_log(str(path), cfg, engine.basis_inconsistent, engine.records())
        _, steps = read_log(str(path))
        final = steps[-1]["mean_loss"] if steps else None
        return raw, str(path), final, summary["diverged"]

    if args.parallel > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            rows = list(pool.map(run_point, points))
    else:
        rows = [run_point(p) for p in points]
    summary_path = out_dir / "summary.csv"
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write("axis,value,final_loss,diverged,log\n")
        for raw, path, final, diverged in rows:
            final_txt = "" if final is None else repr(final)
            fh.write(f"{args.axis},{raw},{final_txt},{str(diverged).lower()},{path}\n")
    print(f"wrote {len(rows)} runs and {summary_path}")
    return 2 if any(r[3] for r in rows) else 0


def _fmt_ratio(value: float) -> str:
    flag = "" if value > 1.0 else "  (no benefit)"
    return f"{value:.2f}{flag}"


def cmd_costs(args) -> int:
    k_x = args.k_x if args.k_x is not None else args.k
    k_u = args.k_u if args.k_u is not None else args.k
    k_v = args.k_v if args.k_v is not None else args.k
    if None in (k_x, k_u, k_v):
        print("costs: provide --k or all of --k-x/--k-u/--k-v", file=sys.stderr)
        return 1
    try:
        inputs = costs_mod.CostInputs(p=args.p, q=args.q, r=args.r, k_x=k_x, k_u=k_u, k_v=k_v)
    except ValueError as exc:
        print(f"costs: {exc}", file=sys.stderr)
        return 1
    rows = [
        ("global", "none"),
        ("global", "low_rank"),
        ("global", "full_rank"),
        ("local", "none"),
        ("local", "low_rank"),
        ("local", "full_rank"),
        ("local_adam", None),
        ("ddp", None),
    ]
    print(f"per-payload element counts (p={args.p}, q={args.q}, r={args.r}, "
          f"K_x={k_x}, K_u={k_u}, K_v={k_v})")
    print(f"{'variant':<22}{'uplink':>12}{'downlink':>12}{'memory':>12}")
    for variant, mode in rows:
        pay = costs_mod.per_payload(variant, mode, inputs)
        if variant in ("global", "local"):
            mem = costs_mod.memory_overhead(variant, mode, inputs)
        elif variant == "local_adam":
            mem = costs_mod.adam_memory(inputs)
        else:
            mem = ""
        label = variant if mode is None else f"{variant}/{mode}"
        print(f"{label:<22}{pay.uplink_total:>12}{pay.downlink_total:>12}{str(mem):>12}")
    print()
    print(f"reduction vs low-rank DDP:   {_fmt_ratio(costs_mod.reduction_vs_lowrank_ddp(inputs))}")
    print(f"reduction vs full-rank DDP:  {_fmt_ratio(costs_mod.reduction_vs_fullrank_ddp(inputs))}")
    print(f"reduction vs full-rank local (global): {_fmt_ratio(costs_mod.reduction_vs_fullrank_local(inputs, 'global'))}")
    print(f"reduction vs full-rank local (local):  {_fmt_ratio(costs_mod.reduction_vs_fullrank_local(inputs, 'local'))}")
    print(f"optimizer-state memory ratio p/r: {costs_mod.optimizer_state_memory_ratio(inputs):.2f}")
    return 0


def cmd_analyze(args) -> int:
    try:
        header, steps = read_log(args.log)
    except (LogFormatError, OSError) as exc:
        print(f"analyze: {exc}", file=sys.stderr)
        return 1
    if not steps:
        print("analyze: log has a header but no step records", file=sys.stderr)
        return 1
    final = steps[-1]
    diverged = any(s.get("diverged") for s in steps)
    layer_mssv: dict[int, list] = {}
    layer_sr: list = []
    for s in steps:
        sub = s.get("subspace")
        if not sub:
            continue
        for li, metrics in enumerate(sub):
            if metrics is None:
                continue
            layer_mssv.setdefault(li, []).append(metrics["mssv"])
            layer_sr.append(metrics["stable_rank"])
    print(f"steps: {len(steps)}")
    print(f"final mean loss: {final['mean_loss']}")
    print(f"diverged: {str(diverged).lower()}")
    if header.get("basis_inconsistent"):
        print("note: moments averaged across inconsistent worker bases")
    if layer_mssv:
        for li in sorted(layer_mssv):
            vals = layer_mssv[li]
            print(f"layer {li}: mean MSSV at projection updates: {np.mean(vals):.6f} ({len(vals)} updates)")
        print(f"stable rank of projection signals: min {min(layer_sr):.3f}, max {max(layer_sr):.3f}")
    else:
        print("no projection updates logged")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "costs": cmd_costs, "analyze": cmd_analyze}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
