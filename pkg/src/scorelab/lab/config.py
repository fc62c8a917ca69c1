"""File-driven run configuration.

Configs are YAML mappings merged over per-command defaults; unknown keys
are rejected so typos fail fast, and every resolved config validates
against the module preconditions before any compute. The resolved mapping
(sorted, canonical JSON) is hashed into the manifest so identical configs
hash identically on any platform.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import yaml

from ..core import NoiseSchedule, build_schedule
from ..data import ClassMixture, ToyDataset
from ..distill import METHODS, DistillConfig
from ..errors import ConfigError, ParameterError
from ..mlp import TrainConfig, load_checkpoint
from ..oracle import OracleDenoiser

SCHEDULE_DEFAULTS = {"T": 1000, "beta_start": 1.0e-4, "beta_end": 0.02}

# Two-class, single-Gaussian-per-class dataset: the training benchmark.
SEPARATED_CLASSES = [
    {"means": [[-3.0, 0.0]], "stddev": 0.5, "weights": [1.0]},
    {"means": [[3.0, 0.0]], "stddev": 0.5, "weights": [1.0]},
]

# Two modes per class, symmetric about the class mean: the distillation
# benchmark (target class 0 has modes at (-2, 0) and (2, 0)).
TWO_MODE_CLASSES = [
    {"means": [[-2.0, 0.0], [2.0, 0.0]], "stddev": 0.2, "weights": [0.5, 0.5]},
    {"means": [[0.0, -2.0], [0.0, 2.0]], "stddev": 0.2, "weights": [0.5, 0.5]},
]

DISTILL_DEFAULTS = {
    "method": "ge3d",
    "target": 0,
    "iterations": 2000,
    "particles": 32,
    "init": {"kind": "uniform", "scale": 3.0},
    "optimizer": {"kind": "adam", "lr": 0.05},
    "guidance_scale": 7.5,
    "trajectory": {"steps": 6, "gap_min": 60, "gap_max": 80, "resample_gaps": True},
    "dbc_sigma": None,
    "residual_scaling": "none",
    "sds": {"t_min": 200, "t_max": 500, "f_t": 1.0, "guidance_scale": 100.0},
    "ism": {"t_min": 200, "t_max": 500, "gap_min": 60, "gap_max": 80},
    "max_calls": None,
    "eval": {"every_calls": 3600, "samples": 1024, "projections": 64, "seed": 1234},
}


def default_config(command: str) -> dict:
    """Fully-resolved defaults for one CLI command."""
    base = {
        "seed": 0,
        "out": f"runs/{command}",
        "figures": True,
        "schedule": copy.deepcopy(SCHEDULE_DEFAULTS),
    }
    if command == "train":
        base["dataset"] = {"classes": copy.deepcopy(SEPARATED_CLASSES)}
        base["train"] = {
            "steps": 20000,
            "batch": 256,
            "lr": 1.0e-3,
            "condition_dropout": 0.1,
            "widths": [128, 128, 128, 128],
            "emb_dim": 16,
            "time_freqs": 8,
            "heldout_size": 4096,
            "heldout_seed": 97,
        }
    elif command == "distill":
        base["dataset"] = {"classes": copy.deepcopy(TWO_MODE_CLASSES)}
        base["denoiser"] = {"kind": "oracle", "path": None}
        base["distill"] = copy.deepcopy(DISTILL_DEFAULTS)
    elif command == "compare":
        base["dataset"] = {"classes": copy.deepcopy(TWO_MODE_CLASSES)}
        base["denoiser"] = {"kind": "oracle", "path": None}
        base["distill"] = copy.deepcopy(DISTILL_DEFAULTS)
        base["compare"] = {
            "methods": ["sds", "ism", "ge3d", "ge3d_no_dbc"],
            "seeds": [0, 1, 2, 3, 4],
            "budget": 36000,
            "eval_points": 10,
        }
    elif command == "ablate":
        base["dataset"] = {"classes": copy.deepcopy(TWO_MODE_CLASSES)}
        base["denoiser"] = {"kind": "oracle", "path": None}
        base["distill"] = copy.deepcopy(
            {**DISTILL_DEFAULTS, "method": "ge3d_no_dbc"}
        )
        base["ablate"] = {
            "farthest": [360],
            "steps": [1, 2, 6, 10, 24],
            "step_sizes": None,
            "seeds": [0, 1, 2, 3, 4],
            "budget": 36000,
        }
    elif command == "verify":
        base = {"seed": 0, "out": None, "figures": True, "schedule": copy.deepcopy(SCHEDULE_DEFAULTS), "draws": 1000}
    else:
        raise ConfigError(f"unknown command {command!r}")
    return base


def _merge(defaults, user, path=""):
    if isinstance(defaults, dict):
        if not isinstance(user, dict):
            raise ConfigError(f"expected a mapping at {path or 'top level'}")
        out = copy.deepcopy(defaults)
        for key, val in user.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key {path + key!r}")
            if isinstance(defaults[key], dict) and defaults[key]:
                out[key] = _merge(defaults[key], val, path + key + ".")
            else:
                out[key] = copy.deepcopy(val)
        return out
    return copy.deepcopy(user)


def load_config(command: str, path: str | Path | None, overrides: dict | None = None) -> dict:
    """Merge a YAML file (optional) and CLI overrides over the defaults."""
    cfg = default_config(command)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"could not parse {p}: {exc}") from exc
        cfg = _merge(cfg, user)
    for key, val in (overrides or {}).items():
        if val is not None:
            cfg[key] = val
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False, default_flow_style=None)


# ----------------------------------------------------------------------
# builders: resolved config mapping -> module objects


def build_sched(cfg: dict) -> NoiseSchedule:
    s = cfg["schedule"]
    try:
        return build_schedule(int(s["T"]), float(s["beta_start"]), float(s["beta_end"]))
    except ParameterError as exc:
        raise ConfigError(f"bad schedule: {exc}") from exc


def build_dataset(cfg: dict) -> ToyDataset:
    try:
        mixtures = tuple(
            ClassMixture(c["means"], float(c["stddev"]), c["weights"])
            for c in cfg["dataset"]["classes"]
        )
        return ToyDataset(mixtures)
    except (ParameterError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad dataset: {exc}") from exc


def build_denoiser(cfg: dict, ds: ToyDataset, sched: NoiseSchedule):
    d = cfg["denoiser"]
    if d["kind"] == "oracle":
        return OracleDenoiser(ds, sched)
    if d["kind"] == "checkpoint":
        if not d.get("path"):
            raise ConfigError("checkpoint denoiser needs a path")
        p = Path(d["path"])
        if not p.exists():
            raise ConfigError(f"checkpoint not found: {p}")
        net, digest = load_checkpoint(p)
        if digest != sched.digest():
            raise ConfigError(
                "checkpoint was trained on a different noise schedule "
                f"(stored {digest}, configured {sched.digest()})"
            )
        return net
    raise ConfigError(f"unknown denoiser kind {d['kind']!r}")


def build_train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    try:
        return TrainConfig(
            steps=int(t["steps"]),
            batch=int(t["batch"]),
            lr=float(t["lr"]),
            condition_dropout=float(t["condition_dropout"]),
            seed=int(cfg["seed"]),
            widths=tuple(int(w) for w in t["widths"]),
            emb_dim=int(t["emb_dim"]),
            time_freqs=int(t["time_freqs"]),
        )
    except (ParameterError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad train section: {exc}") from exc


def build_distill_config(cfg: dict, seed: int | None = None, method: str | None = None) -> DistillConfig:
    d = cfg["distill"]
    try:
        dc = DistillConfig(
            method=method if method is not None else d["method"],
            iterations=int(d["iterations"]),
            seed=int(seed if seed is not None else cfg["seed"]),
            target=int(d["target"]),
            particles=int(d["particles"]),
            init_kind=d["init"]["kind"],
            init_scale=float(d["init"]["scale"]),
            optimizer=d["optimizer"]["kind"],
            lr=float(d["optimizer"]["lr"]),
            guidance_scale=float(d["guidance_scale"]),
            steps=int(d["trajectory"]["steps"]),
            gap_min=int(d["trajectory"]["gap_min"]),
            gap_max=int(d["trajectory"]["gap_max"]),
            resample_gaps=bool(d["trajectory"]["resample_gaps"]),
            dbc_sigma=None if d["dbc_sigma"] is None else float(d["dbc_sigma"]),
            residual_scaling=d["residual_scaling"],
            sds_t_min=int(d["sds"]["t_min"]),
            sds_t_max=int(d["sds"]["t_max"]),
            sds_f_t=float(d["sds"]["f_t"]),
            sds_guidance_scale=float(d["sds"]["guidance_scale"]),
            ism_t_min=int(d["ism"]["t_min"]),
            ism_t_max=int(d["ism"]["t_max"]),
            ism_gap_min=int(d["ism"]["gap_min"]),
            ism_gap_max=int(d["ism"]["gap_max"]),
            max_calls=None if d["max_calls"] is None else int(d["max_calls"]),
            eval_every_calls=int(d["eval"]["every_calls"]),
            eval_samples=int(d["eval"]["samples"]),
            eval_projections=int(d["eval"]["projections"]),
            eval_seed=int(d["eval"]["seed"]),
        )
    except (ParameterError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad distill section: {exc}") from exc
    validate_distill(dc, cfg)
    return dc


def validate_distill(dc: DistillConfig, cfg: dict) -> None:
    """Check module preconditions before any compute."""
    T = int(cfg["schedule"]["T"])
    ds = build_dataset(cfg)
    if dc.method not in METHODS:
        raise ConfigError(f"unknown method {dc.method!r}; expected one of {METHODS}")
    if not (0 <= dc.target < ds.classes):
        raise ConfigError(f"target class {dc.target} out of range")
    if dc.method in ("ge3d", "ge3d_no_dbc"):
        if not (1 <= dc.gap_min <= dc.gap_max):
            raise ConfigError("trajectory gaps must satisfy 1 <= gap_min <= gap_max")
        if dc.steps * dc.gap_max > T:
            raise ConfigError(
                f"infeasible trajectory: {dc.steps} gaps of up to {dc.gap_max} exceed T={T}"
            )
    if dc.method == "sds" and not (1 <= dc.sds_t_min <= dc.sds_t_max <= T):
        raise ConfigError("sds timestep range out of bounds")
    if dc.method == "ism":
        if not (2 <= dc.ism_t_min <= dc.ism_t_max <= T):
            raise ConfigError("ism timestep range out of bounds")
        if not (1 <= dc.ism_gap_min <= dc.ism_gap_max):
            raise ConfigError("ism gaps must satisfy 1 <= gap_min <= gap_max")
    if dc.iterations < 0 or dc.particles < 1:
        raise ConfigError("iterations must be >= 0 and particles >= 1")
    if dc.eval_samples < 1 or dc.eval_projections < 1:
        raise ConfigError("eval sizes must be >= 1")


def ablate_cells(cfg: dict) -> list[tuple[int, int, int]]:
    """Expand the ablation grid into (farthest, steps, gap) cells."""
    a = cfg["ablate"]
    cells = []
    for far in a["farthest"]:
        far = int(far)
        if a.get("step_sizes"):
            pairs = []
            for gap in a["step_sizes"]:
                gap = int(gap)
                if far % gap != 0:
                    raise ConfigError(f"step size {gap} does not divide farthest {far}")
                pairs.append((far // gap, gap))
        else:
            pairs = []
            for n in a["steps"]:
                n = int(n)
                if far % n != 0:
                    raise ConfigError(f"steps {n} does not divide farthest {far}")
                pairs.append((n, far // n))
        for n, gap in pairs:
            cells.append((far, n, gap))
    if not cells:
        raise ConfigError("ablation grid is empty")
    return cells
