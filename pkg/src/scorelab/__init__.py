"""Desk-scale score-distillation laboratory on toy conditional diffusion
models: deterministic DDIM algebra, trainable and exact denoisers, paired
noising/denoising trajectories, and the sds/ism/trajectory-alignment
distillation family with executable identity checks."""

__version__ = "0.1.0"

from .core import (
    Condition,
    CountingDenoiser,
    Denoiser,
    GuidanceConfig,
    Latent,
    NoiseSchedule,
    build_schedule,
    cfg_combine,
    ddim_delta,
    ddim_step,
    q_sample,
)
from .data import ClassMixture, ToyDataset, sample_dataset
from .distill import (
    DBCSchedule,
    DistillConfig,
    DistillParams,
    GradientReport,
    RunHistory,
    dbc_weights,
    ge3d_iteration,
    ism_gradient,
    run_distillation,
    sds_gradient,
    verify_ism_identity,
    verify_sds_identity,
)
from .metrics import MetricReport, metric_report, mmd_rbf, mode_coverage, sliced_wasserstein
from .mlp import (
    DenoiserMLP,
    TrainConfig,
    load_checkpoint,
    mlp_gradient_check,
    save_checkpoint,
    train_denoiser,
)
from .oracle import GaussianOracle, OracleDenoiser, oracle_eps
from .trajectory import (
    TimestepTrajectory,
    TrajectoryPair,
    build_timestep_trajectory,
    denoise_cfg,
    invert_ddim,
    invert_with_embedding_optimization,
    make_trajectory_pair,
)

__all__ = [name for name in dir() if not name.startswith("_")]
