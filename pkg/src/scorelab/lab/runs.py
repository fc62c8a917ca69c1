"""Command implementations: each produces a self-describing run directory
(resolved config, manifest, delimited outputs, figures) and never writes
outside its designated output directory."""

from __future__ import annotations

import csv
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .. import __version__
from ..core import GuidanceConfig, Latent
from ..data import sample_dataset
from ..distill import (
    DBCSchedule,
    DistillConfig,
    RunHistory,
    init_particles,
    run_distillation,
)
from ..errors import ConfigError
from ..metrics import metric_report, mode_coverage
from ..mlp import (
    make_train_batch,
    batch_loss,
    oracle_batch_loss,
    save_checkpoint,
    train_denoiser,
)
from ..oracle import OracleDenoiser
from ..trajectory import TimestepTrajectory, dump_trajectory_pair, make_trajectory_pair
from . import figures, verify
from .config import (
    ablate_cells,
    build_dataset,
    build_denoiser,
    build_distill_config,
    build_sched,
    build_train_config,
    config_hash,
    dump_config,
)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_manifest(out: Path, payload: dict) -> None:
    (out / "manifest.yaml").write_text(yaml.safe_dump(payload, sort_keys=True))


def _prepare_out(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(dump_config(cfg))
    return out


# ----------------------------------------------------------------------
# train


def cmd_train(cfg: dict) -> Path:
    out = _prepare_out(cfg)
    sched = build_sched(cfg)
    ds = build_dataset(cfg)
    tc = build_train_config(cfg)
    start = time.monotonic()
    result = train_denoiser(ds, sched, tc)
    wall = time.monotonic() - start

    ckpt = out / "checkpoint.npz"
    save_checkpoint(result.net, sched, ckpt)
    _write_csv(
        out / "train_history.csv",
        ["step", "loss"],
        [[int(s), float(l)] for s, l in zip(result.loss_steps, result.losses)],
    )

    heldout = make_train_batch(ds, sched, int(cfg["train"]["heldout_size"]), int(cfg["train"]["heldout_seed"]))
    net_loss = batch_loss(result.net, heldout)
    oracle_loss = oracle_batch_loss(OracleDenoiser(ds, sched), heldout)
    _write_manifest(
        out,
        {
            "command": "train",
            "config_hash": config_hash(cfg),
            "version": __version__,
            "wall_seconds": round(wall, 3),
            "steps": tc.steps,
            "heldout_loss": float(net_loss),
            "oracle_loss": float(oracle_loss),
            "loss_ratio": float(net_loss / oracle_loss),
            "checkpoint": ckpt.name,
            "failed": False,
        },
    )
    if cfg.get("figures", True) and len(result.loss_steps):
        figures.training_loss(result.loss_steps, result.losses, out / "training_loss.png")
    return out


# ----------------------------------------------------------------------
# distill


def _history_rows(history: RunHistory) -> tuple[list[str], list[list]]:
    if not history.records:
        return ["k", "particle", "calls", "grad_norm"], []
    m = len(history.records[0].residual_norms)
    header = ["k", "particle", "calls", "grad_norm"]
    header += [f"res_{i}" for i in range(m)]
    header += [f"w_{i}" for i in range(m)]
    rows = []
    for r in history.records:
        rows.append([r.k, r.particle, r.calls, r.grad_norm, *r.residual_norms, *r.weights])
    return header, rows


def _write_distill_outputs(out: Path, cfg: dict, dc: DistillConfig, history: RunHistory, ds, sched, den, wall: float) -> None:
    header, rows = _history_rows(history)
    _write_csv(out / "history.csv", header, rows)
    _write_csv(
        out / "metrics.csv",
        ["mark", "calls", "iteration", "sliced_wasserstein"],
        [[s.mark, s.calls, s.iteration, s.sliced_wasserstein] for s in history.snapshots],
    )
    theta = history.theta_final
    _write_csv(
        out / "particles.csv",
        ["index"] + [f"x_{j}" for j in range(theta.shape[1])],
        [[i, *theta[i]] for i in range(theta.shape[0])],
    )

    targets = sample_dataset(ds, dc.target, dc.eval_samples, dc.eval_seed)
    centers = ds.mode_centers(dc.target)
    report = metric_report(
        theta, targets, centers, projections=dc.eval_projections, seed=dc.eval_seed
    )
    sep = ds.mode_separation(dc.target)
    radius = 0.1 * sep if sep > 0 else 0.5
    near_mode = sum(mode_coverage(theta, centers, radius)[1]) / theta.shape[0]
    near_mean = mode_coverage(theta, ds.class_mean(dc.target)[None, :], radius)[1][0] / theta.shape[0]

    is_trajectory_method = dc.method in ("ge3d", "ge3d_no_dbc")
    if is_trajectory_method and not history.failed and history.iterations_run > 0:
        # Representative paired trajectories for particle 0, before and
        # after distillation, on fixed equal gaps.
        traj = TimestepTrajectory(
            tuple(int(v) for v in np.concatenate([[0], np.cumsum([dc.gap_min] * dc.steps)]))
        )
        cond = den.class_condition(dc.target)
        g = GuidanceConfig(dc.guidance_scale)
        init_theta = init_particles(dc, ds.dim, np.random.default_rng(dc.seed))
        pair0 = make_trajectory_pair(Latent(init_theta[0], 0), traj, den, cond, g, sched)
        dump_trajectory_pair(pair0, out / "trajectory_initial.csv")
        pair1 = make_trajectory_pair(Latent(theta[0], 0), traj, den, cond, g, sched)
        dump_trajectory_pair(pair1, out / "trajectory_final.csv")
        if cfg.get("figures", True):
            figures.trajectory_pair(pair0, out / "trajectory_initial.png")
            figures.trajectory_pair(pair1, out / "trajectory_final.png")

    _write_manifest(
        out,
        {
            "command": "distill",
            "config_hash": config_hash(cfg),
            "version": __version__,
            "method": dc.method,
            "seed": dc.seed,
            "wall_seconds": round(wall, 3),
            "iterations_run": history.iterations_run,
            "denoiser_calls": history.total_calls,
            "calls_per_iteration": dc.calls_per_iteration(),
            "budget": dc.max_calls,
            "failed": history.failed,
            "failure_message": history.failure_message,
            "final_sliced_wasserstein": report.sliced_wasserstein,
            "final_mmd_rbf": report.mmd_rbf,
            "modes_covered": report.modes_covered,
            "mode_counts": list(report.mode_counts),
            "near_mode_fraction": float(near_mode),
            "near_mean_fraction": float(near_mean),
        },
    )
    if cfg.get("figures", True):
        if history.records:
            figures.run_history(history, out / "history.png")
        if history.snapshots:
            figures.convergence(history, out / "convergence.png")
        figures.particles(theta, targets, centers, out / "particles.png", radius=radius)
        if is_trajectory_method:
            figures.weight_schedule(
                DBCSchedule.make(max(dc.iterations, 1), dc.steps, dc.sigma()),
                out / "weights.png",
            )


def cmd_distill(cfg: dict) -> tuple[Path, RunHistory]:
    out = _prepare_out(cfg)
    sched = build_sched(cfg)
    ds = build_dataset(cfg)
    den = build_denoiser(cfg, ds, sched)
    dc = build_distill_config(cfg)
    start = time.monotonic()
    history = run_distillation(dc.method, dc, ds, sched, den)
    wall = time.monotonic() - start
    _write_distill_outputs(out, cfg, dc, history, ds, sched, den, wall)
    return out, history


# ----------------------------------------------------------------------
# compare


def cmd_compare(cfg: dict) -> Path:
    out = _prepare_out(cfg)
    sched = build_sched(cfg)
    ds = build_dataset(cfg)
    den = build_denoiser(cfg, ds, sched)
    comp = cfg["compare"]
    budget = int(comp["budget"])
    eval_points = int(comp["eval_points"])
    methods = list(comp["methods"])
    seeds = [int(s) for s in comp["seeds"]]
    start = time.monotonic()

    curve_rows, final_rows = [], []
    totals = {}
    for method in methods:
        probe = build_distill_config(cfg, method=method)
        cost = probe.calls_per_iteration()
        iters = budget // cost
        if iters < 1:
            raise ConfigError(f"budget {budget} too small for one {method} iteration ({cost} calls)")
        for seed in seeds:
            dc = build_distill_config(cfg, seed=seed, method=method)
            dc = replace(
                dc,
                iterations=iters,
                max_calls=budget,
                eval_every_calls=max(budget // eval_points, 1),
            )
            run_dir = out / "runs" / f"{method}_seed{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            t0 = time.monotonic()
            history = run_distillation(method, dc, ds, sched, den)
            sub_cfg = dict(cfg)
            sub_cfg["out"] = str(run_dir)
            _write_distill_outputs(run_dir, sub_cfg, dc, history, ds, sched, den, time.monotonic() - t0)
            totals[f"{method}_seed{seed}"] = history.total_calls
            for s in history.snapshots:
                curve_rows.append(
                    {"method": method, "seed": seed, "mark": s.mark, "calls": s.calls, "iteration": s.iteration, "sw": s.sliced_wasserstein}
                )
            final_rows.append(
                [method, seed, history.total_calls, history.final_metric(), int(history.failed)]
            )

    _write_csv(
        out / "curves.csv",
        ["method", "seed", "mark", "calls", "iteration", "sliced_wasserstein"],
        [[r["method"], r["seed"], r["mark"], r["calls"], r["iteration"], r["sw"]] for r in curve_rows],
    )
    _write_csv(
        out / "finals.csv",
        ["method", "seed", "calls", "final_sliced_wasserstein", "failed"],
        final_rows,
    )
    _write_manifest(
        out,
        {
            "command": "compare",
            "config_hash": config_hash(cfg),
            "version": __version__,
            "wall_seconds": round(time.monotonic() - start, 3),
            "budget": budget,
            "methods": methods,
            "seeds": seeds,
            "denoiser_calls": totals,
            "failed": False,
        },
    )
    if cfg.get("figures", True):
        figures.compare_curves(curve_rows, out / "compare.png")
    return out


# ----------------------------------------------------------------------
# ablate


def cmd_ablate(cfg: dict) -> Path:
    out = _prepare_out(cfg)
    sched = build_sched(cfg)
    ds = build_dataset(cfg)
    den = build_denoiser(cfg, ds, sched)
    cells = ablate_cells(cfg)
    a = cfg["ablate"]
    budget = int(a["budget"])
    seeds = [int(s) for s in a["seeds"]]
    start = time.monotonic()

    grid_rows = []
    fig_rows = []
    for far, n, gap in cells:
        for seed in seeds:
            dc = build_distill_config(cfg, seed=seed)
            iters = budget // (3 * n)
            if iters < 1:
                raise ConfigError(f"budget {budget} too small for one iteration at {n} steps")
            dc = replace(
                dc,
                steps=n,
                gap_min=gap,
                gap_max=gap,
                iterations=iters,
                max_calls=budget,
                eval_every_calls=0,
            )
            cell_dir = out / "cells" / f"far{far}_n{n}_seed{seed}"
            cell_dir.mkdir(parents=True, exist_ok=True)
            t0 = time.monotonic()
            history = run_distillation(dc.method, dc, ds, sched, den)
            sub_cfg = dict(cfg)
            sub_cfg["out"] = str(cell_dir)
            _write_distill_outputs(cell_dir, sub_cfg, dc, history, ds, sched, den, time.monotonic() - t0)
            final = history.final_metric() if history.snapshots else float("nan")
            grid_rows.append([far, n, gap, seed, history.total_calls, final, int(history.failed)])
            fig_rows.append({"farthest": far, "steps": n, "gap": gap, "seed": seed, "sw": final})

    _write_csv(
        out / "grid.csv",
        ["farthest", "steps", "gap", "seed", "calls", "final_sliced_wasserstein", "failed"],
        grid_rows,
    )
    _write_manifest(
        out,
        {
            "command": "ablate",
            "config_hash": config_hash(cfg),
            "version": __version__,
            "wall_seconds": round(time.monotonic() - start, 3),
            "budget": budget,
            "cells": len(cells),
            "seeds": seeds,
            "failed": False,
        },
    )
    if cfg.get("figures", True):
        figures.ablation_grid(fig_rows, out / "ablation.png")
    return out


# ----------------------------------------------------------------------
# verify


def cmd_verify(cfg: dict) -> tuple[list[verify.CheckResult], Path | None]:
    sched = build_sched(cfg)
    results = verify.run_all(sched, draws=int(cfg.get("draws", 1000)))
    out = None
    if cfg.get("out"):
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        report = "\n".join(r.line() for r in results) + "\n"
        (out / "report.txt").write_text(report)
        _write_manifest(
            out,
            {
                "command": "verify",
                "config_hash": config_hash(cfg),
                "version": __version__,
                "all_passed": all(r.passed for r in results),
                "failed": not all(r.passed for r in results),
            },
        )
        if cfg.get("figures", True):
            figures.weight_schedule(DBCSchedule.make(3000, 6, 1000.0), out / "weights.png")
    return results, out
