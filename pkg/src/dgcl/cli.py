"""Command-line entry point: experiment grids, gradient checks, drift reports.

Subcommands::

    dgcl run <config>        execute the (method, lambda, M, seed) grid
    dgcl gradcheck [--seed]  finite-difference check of all loss gradients
    dgcl drift <config>      paired lambda=0 vs lambda=config drift report

``run`` exits 0 on full success, 1 if any grid cell failed (outputs from
completed cells are preserved), and 2 on configuration errors. Set the
``DGCL_THREADS`` environment variable to run grid cells in parallel worker
processes; output files are identical either way.
"""
from __future__ import annotations

import argparse
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import gradcheck, metrics
from .config import RunConfig, build_tasks, config_hash, parse_config_file
from .errors import ConfigError, DgclError
from .trainer import REGULARIZED, TrainerConfig, run_stream


@dataclass(frozen=True)
class Cell:
    method: str
    lam: float
    memory: int
    seed: int

    @property
    def name(self) -> str:
        return f"{self.method}_lam{self.lam:g}_M{self.memory}_seed{self.seed}"


def expand_cells(cfg: RunConfig) -> list[Cell]:
    """The full grid; lambda only varies for regularized methods, and
    finetune ignores the memory sweep (it never writes memory)."""
    cells = []
    for method in cfg.methods:
        lams = cfg.lams if method in REGULARIZED else [0.0]
        memories = cfg.memories if method != "finetune" else [cfg.memories[0]]
        for lam in lams:
            for memory in memories:
                for seed in cfg.seeds:
                    cells.append(Cell(method, lam, memory, seed))
    return cells


def _cell_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir) / f"run-{config_hash(cfg)}"


def execute_cell(cfg: RunConfig, cell: Cell, outdir: str) -> dict:
    """Run one grid cell and write its three report files."""
    tasks = build_tasks(cfg, cell.seed)
    tc = TrainerConfig(method=cell.method, lam=cell.lam, tau=cfg.tau,
                       lr=cfg.lr, batch_size=cfg.batch_size,
                       iterations=cfg.iterations, memory_size=cell.memory,
                       seed=cell.seed)
    result = run_stream(tc, tasks)
    base = Path(outdir) / cell.name
    metrics.write_accuracy_csv(result.matrix, f"{base}.matrix.csv")
    metrics.write_drift_csv(result.drift, f"{base}.drift.csv")
    summary = metrics.run_summary(cell.method, cell.seed, cell.lam, cfg.tau,
                                  cell.memory, result.matrix)
    metrics.write_json(summary, f"{base}.summary.json")
    return summary


def _worker_count(n_cells: int) -> int:
    raw = os.environ.get("DGCL_THREADS", "1")
    try:
        cap = max(1, int(raw))
    except ValueError:
        cap = 1
    return min(cap, n_cells) if n_cells else 1


def _aggregate(cfg: RunConfig, cells: list[Cell],
               summaries: dict[Cell, dict]) -> dict:
    groups: dict[tuple, list[Cell]] = {}
    for cell in cells:
        if cell in summaries:
            groups.setdefault((cell.method, cell.lam, cell.memory),
                              []).append(cell)
    rows = []
    for (method, lam, memory), members in sorted(groups.items()):
        row = {"method": method, "lambda": lam, "M": memory, "tau": cfg.tau,
               "seeds": sorted(c.seed for c in members)}
        for key in ("fa", "ga", "fm", "la"):
            values = [summaries[c][key] for c in members]
            if any(v is None for v in values):
                row[f"{key}_mean"] = None
                row[f"{key}_ci95"] = None
            else:
                mean, ci = metrics.mean_and_ci95(values)
                row[f"{key}_mean"] = mean
                row[f"{key}_ci95"] = ci
        rows.append(row)
    return {"config_hash": config_hash(cfg), "cells": rows}


def cmd_run(config_path: str) -> int:
    try:
        cfg = parse_config_file(config_path)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    cells = expand_cells(cfg)
    outdir = _cell_dir(cfg)
    outdir.mkdir(parents=True, exist_ok=True)
    workers = _worker_count(len(cells))
    summaries: dict[Cell, dict] = {}
    failures: list[tuple[Cell, str]] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {cell: pool.submit(execute_cell, cfg, cell, str(outdir))
                       for cell in cells}
        for cell, fut in futures.items():
            exc = fut.exception()
            if exc is None:
                summaries[cell] = fut.result()
            else:
                failures.append((cell, str(exc)))
    else:
        for cell in cells:
            try:
                summaries[cell] = execute_cell(cfg, cell, str(outdir))
            except (DgclError, OSError, FloatingPointError) as e:
                failures.append((cell, f"{type(e).__name__}: {e}"))
            except Exception:
                failures.append((cell, traceback.format_exc(limit=3)))
    metrics.write_json(_aggregate(cfg, cells, summaries), outdir / "summary.json")
    for cell, msg in failures:
        print(f"cell {cell.name} failed: {msg}", file=sys.stderr)
    print(f"{len(summaries)}/{len(cells)} cells completed -> {outdir}")
    return 1 if failures else 0


def cmd_gradcheck(seed: int = 0, instances: int = 100) -> int:
    errors = gradcheck.run_gradcheck(seed=seed, instances=instances)
    print(f"gradcheck seed={seed} instances={instances} "
          f"tolerance={gradcheck.TOLERANCE:g}")
    failed = []
    for name in gradcheck.LOSS_NAMES:
        err = errors[name]
        status = "ok" if err < gradcheck.TOLERANCE else "FAIL"
        print(f"  {name:<6} max_rel_err={err:.3e}  {status}")
        if err >= gradcheck.TOLERANCE:
            failed.append(name)
    if failed:
        print(f"FAIL: {', '.join(failed)} exceeded {gradcheck.TOLERANCE:g}")
        return 1
    print("PASS")
    return 0


def cmd_drift(config_path: str) -> int:
    try:
        cfg = parse_config_file(config_path)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    lam_reg = cfg.lams[0]
    seed = cfg.seeds[0]
    memory = cfg.memories[0]
    outdir = Path(cfg.output_dir) / f"drift-{config_hash(cfg)}"
    try:
        tasks = build_tasks(cfg, seed)
        results = {}
        for label, lam in (("base", 0.0), ("reg", lam_reg)):
            tc = TrainerConfig(method="kisp", lam=lam, tau=cfg.tau, lr=cfg.lr,
                               batch_size=cfg.batch_size,
                               iterations=cfg.iterations, memory_size=memory,
                               seed=seed)
            results[label] = run_stream(tc, tasks)
        outdir.mkdir(parents=True, exist_ok=True)
        _write_paired_drift(results["base"].drift, results["reg"].drift,
                            lam_reg, outdir / "drift_paired.csv")
        for label, lam in (("base", 0.0), ("reg", lam_reg)):
            _write_accuracy_evolution(
                results[label].matrix,
                outdir / f"accuracy_evolution_lam{lam:g}.csv")
    except (DgclError, OSError, FloatingPointError) as e:
        print(f"drift run failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print(f"drift report -> {outdir}")
    return 0


def _write_paired_drift(base, reg, lam_reg: float, path) -> None:
    lines = [f"update_index,task_id,drift_lam0,drift_lam{lam_reg:g}"]
    for eb, er in zip(base.entries, reg.entries):
        lines.append(f"{eb.update_index},{eb.task_id},"
                     f"{eb.value!r},{er.value!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def _write_accuracy_evolution(matrix, path) -> None:
    t = matrix.T
    header = "after_task," + ",".join(f"task_{j}_accuracy"
                                      for j in range(1, t + 1))
    lines = [header]
    for i in range(1, t + 1):
        cells = [repr(v) for v in matrix.row(i)] + [""] * (t - i)
        lines.append(f"{i}," + ",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dgcl",
        description="Online continual-learning benchmark runner.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment grid")
    p_run.add_argument("config", help="path to a key=value config file")
    p_grad = sub.add_parser("gradcheck",
                            help="verify analytic gradients by differences")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--instances", type=int, default=100)
    p_drift = sub.add_parser("drift",
                             help="paired drift / accuracy-evolution report")
    p_drift.add_argument("config", help="path to a key=value config file")
    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config)
    if args.command == "gradcheck":
        return cmd_gradcheck(seed=args.seed, instances=args.instances)
    return cmd_drift(args.config)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
