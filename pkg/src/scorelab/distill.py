"""Distillation gradients over the toy renderer.

Three update rules share the machinery:

* single-step residual against injected noise (``sds``);
* single-step residual against an earlier null-conditioned prediction,
  with deterministic inversion providing the noised input (``ism``);
* multi-step trajectory alignment with per-granularity weights
  (``ge3d``), optionally with the iteration-dependent Gaussian weight
  schedule disabled (``ge3d_no_dbc`` uses uniform weights).

The "renderer" analog selects one particle of the parameter set per
iteration; gradients reach only that particle (stop-gradient through the
trajectories, as in the literal weighted-residual form of the update).

The module also ships executable checks of the two single-step algebraic
identities that rewrite the sds and ism residuals as latent alignments.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import core
from .core import (
    Condition,
    CountingDenoiser,
    Denoiser,
    GuidanceConfig,
    Latent,
    NoiseSchedule,
)
from .data import ToyDataset, sample_dataset
from .errors import NumericError, ParameterError
from .metrics import sliced_wasserstein
from .trajectory import TimestepTrajectory, make_trajectory_pair, trajectory_from_rng

METHODS = ("sds", "ism", "ge3d", "ge3d_no_dbc")


# ----------------------------------------------------------------------
# dynamic balancing coefficients


@dataclass(frozen=True)
class DBCSchedule:
    """Gaussian weight schedule moving emphasis from coarse residuals
    (large node index) early in training to fine residuals (small index)
    late. Peak iterations Delta[i] = (n-1-i) * K / (n-1)."""

    K: int
    n: int
    sigma: float
    Delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Delta", np.asarray(self.Delta, dtype=np.float64))
        if self.K < 1 or self.n < 1:
            raise ParameterError("K and n must be >= 1")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if self.Delta.shape != (self.n,):
            raise ParameterError("Delta must have length n")

    @classmethod
    def make(cls, K: int, n: int, sigma: float) -> "DBCSchedule":
        if n == 1:
            delta = np.zeros(1)
        else:
            idx = np.arange(n, dtype=np.float64)
            delta = K * ((n - 1 - idx) / (n - 1))
        return cls(K=K, n=n, sigma=sigma, Delta=delta)


def dbc_weights(k: int, dbc: DBCSchedule) -> np.ndarray:
    """Normalized weights over granularities at iteration k; positive and
    summing to 1 (softmax of the Gaussian log-weights, shifted for
    stability so the peak term is always exp(0))."""
    if not (0 <= k < dbc.K):
        raise ParameterError(f"iteration k must lie in [0, {dbc.K}), got {k}")
    z = -((k - dbc.Delta) ** 2) / (2.0 * dbc.sigma**2)
    z -= z.max()
    w = np.exp(z)
    return w / w.sum()


# ----------------------------------------------------------------------
# particles and per-iteration gradients


@dataclass(frozen=True)
class DistillParams:
    """The distillable parameter set: M particles in R^d, plus the current
    outer-iteration counter."""

    theta: np.ndarray  # (M, d)
    iteration: int = 0

    def __post_init__(self):
        theta = np.atleast_2d(np.asarray(self.theta, dtype=np.float64))
        object.__setattr__(self, "theta", theta)
        if theta.shape[0] < 1:
            raise ParameterError("need at least one particle")
        if not np.all(np.isfinite(theta)):
            raise NumericError("particles contain non-finite values")
        if self.iteration < 0:
            raise ParameterError("iteration must be >= 0")


@dataclass(frozen=True)
class GradientReport:
    """Per-iteration alignment summary: residuals x_{t_i} - x_tilde_{t_i},
    their weights, and the weighted total applied to the rendered particle."""

    residuals: tuple[np.ndarray, ...]
    weights: np.ndarray
    total: np.ndarray
    denoiser_calls: int
    particle_index: int
    nodes: tuple[int, ...]


def sds_gradient(
    x0: np.ndarray,
    t: int,
    den: Denoiser,
    cond: Condition,
    g: GuidanceConfig,
    eps: np.ndarray,
    sched: NoiseSchedule,
    f_t: float = 1.0,
) -> np.ndarray:
    """f(t) * (guided prediction - injected noise) at x_t = q_sample(x0, t, eps).

    The diffusion-model Jacobian is skipped: the returned vector is applied
    to the rendered sample directly.
    """
    x_t = core.q_sample(Latent(np.asarray(x0, dtype=np.float64), 0), t, eps, sched)
    eps_u = den.predict(x_t.value, t, den.null_condition())
    eps_c = den.predict(x_t.value, t, cond)
    return f_t * (core.cfg_combine(eps_u, eps_c, g) - np.asarray(eps, dtype=np.float64))


def ism_gradient(
    x0: np.ndarray,
    s: int,
    t: int,
    den: Denoiser,
    cond: Condition,
    g: GuidanceConfig,
    sched: NoiseSchedule,
) -> np.ndarray:
    """Guided prediction at t minus the null prediction at s, with x_s and
    x_t produced by deterministic inversion from x0 (one transition 0 -> s,
    then one transition s -> t). Deterministic: no injected noise."""
    if not (0 <= s < t <= sched.T):
        raise ParameterError(f"need 0 <= s < t <= {sched.T}, got ({s}, {t})")
    null = den.null_condition()
    x0_lat = Latent(np.asarray(x0, dtype=np.float64), 0)
    if s == 0:
        x_s = x0_lat
    else:
        x_s = core.ddim_step(x0_lat, s, den.predict(x0_lat.value, 0, null), sched)
    eps_s = den.predict(x_s.value, s, null)
    x_t = core.ddim_step(x_s, t, eps_s, sched)
    eps_u = den.predict(x_t.value, t, null)
    eps_c = den.predict(x_t.value, t, cond)
    return core.cfg_combine(eps_u, eps_c, g) - eps_s


def ge3d_iteration(
    p: DistillParams,
    traj: TimestepTrajectory,
    den: Denoiser,
    cond: Condition,
    g: GuidanceConfig,
    dbc: DBCSchedule,
    sched: NoiseSchedule,
    particle_index: int | None = None,
    rng: np.random.Generator | None = None,
    uniform_weights: bool = False,
    residual_scaling: str = "none",
) -> GradientReport:
    """One trajectory-alignment iteration on a single rendered particle.

    Runs the null-conditioned climb and the guided descent, forms residuals
    for i = 0..n-1, and combines them with the iteration's weights. Exactly
    3n denoiser evaluations. The trajectory is treated as constant for the
    gradient (only the rendered particle receives the update).
    """
    if p.iteration >= dbc.K:
        raise ParameterError(f"iteration {p.iteration} out of range for K={dbc.K}")
    if dbc.n != traj.n:
        raise ParameterError(f"weight schedule covers {dbc.n} steps, trajectory has {traj.n}")
    if residual_scaling not in ("none", "eps_units"):
        raise ParameterError(f"unknown residual scaling {residual_scaling!r}")
    if particle_index is None:
        if rng is None:
            raise ParameterError("need a particle index or a generator to draw one")
        particle_index = int(rng.integers(0, p.theta.shape[0]))
    counting = CountingDenoiser(den)
    x0 = Latent(p.theta[particle_index], 0)
    pair = make_trajectory_pair(x0, traj, counting, cond, g, sched)
    residuals = pair.residuals()
    if residual_scaling == "eps_units":
        # Convert each residual to noise units via the identity scale
        # 1 / (sqrt(ab_{t_i}) * delta_{t_i -> t_{i+1}}); defined at every
        # node including t_0 = 0.
        residuals = [
            r
            / (
                np.sqrt(sched.alpha_bar[traj.nodes[i]])
                * core.ddim_delta(traj.nodes[i], traj.nodes[i + 1], sched)
            )
            for i, r in enumerate(residuals)
        ]
    for i, r in enumerate(residuals):
        if not np.all(np.isfinite(r)):
            raise NumericError(f"non-finite residual at node {i}")
    if uniform_weights:
        weights = np.full(traj.n, 1.0 / traj.n)
    else:
        weights = dbc_weights(p.iteration, dbc)
    total = np.zeros_like(residuals[0])
    for w, r in zip(weights, residuals):
        total += w * r
    return GradientReport(
        residuals=tuple(residuals),
        weights=weights,
        total=total,
        denoiser_calls=counting.calls,
        particle_index=particle_index,
        nodes=traj.nodes,
    )


# ----------------------------------------------------------------------
# executable identity checks


def verify_sds_identity(
    x0: np.ndarray,
    t_n: int,
    eps: np.ndarray,
    den: Denoiser,
    cond: Condition,
    g: GuidanceConfig,
    sched: NoiseSchedule,
) -> float:
    """Max abs difference between sqrt(ab/(1-ab)) * (x_0 - x_tilde_0) and
    the guided-minus-injected noise residual, where x_tilde_0 comes from a
    single-step denoise of the noised sample. Algebraically zero for any
    denoiser."""
    x0 = np.asarray(x0, dtype=np.float64)
    x_tn = core.q_sample(Latent(x0, 0), t_n, eps, sched)
    eps_u = den.predict(x_tn.value, t_n, den.null_condition())
    eps_c = den.predict(x_tn.value, t_n, cond)
    eps_g = core.cfg_combine(eps_u, eps_c, g)
    ab = sched.alpha_bar[t_n]
    x0_tilde = (x_tn.value - np.sqrt(1.0 - ab) * eps_g) / np.sqrt(ab)
    lhs = np.sqrt(ab / (1.0 - ab)) * (x0 - x0_tilde)
    rhs = eps_g - np.asarray(eps, dtype=np.float64)
    return float(np.max(np.abs(lhs - rhs)))


def verify_ism_identity(
    x0: np.ndarray,
    s: int,
    t: int,
    den: Denoiser,
    cond: Condition,
    g: GuidanceConfig,
    sched: NoiseSchedule,
) -> float:
    """Max abs difference between (x_s - x_tilde_s) / (sqrt(ab_s) * delta)
    and the guided-at-t minus null-at-s prediction difference, after one
    inversion step s -> t and one guided step t -> s. Algebraically zero
    for any denoiser."""
    if not (0 <= s < t <= sched.T):
        raise ParameterError(f"need 0 <= s < t <= {sched.T}, got ({s}, {t})")
    null = den.null_condition()
    x0_lat = Latent(np.asarray(x0, dtype=np.float64), 0)
    if s == 0:
        x_s = x0_lat
    else:
        x_s = core.ddim_step(x0_lat, s, den.predict(x0_lat.value, 0, null), sched)
    eps_s = den.predict(x_s.value, s, null)
    x_t = core.ddim_step(x_s, t, eps_s, sched)
    eps_u = den.predict(x_t.value, t, null)
    eps_c = den.predict(x_t.value, t, cond)
    eps_g = core.cfg_combine(eps_u, eps_c, g)
    x_s_tilde = core.ddim_step(x_t, s, eps_g, sched)
    delta = core.ddim_delta(s, t, sched)
    lhs = (x_s.value - x_s_tilde.value) / (np.sqrt(sched.alpha_bar[s]) * delta)
    rhs = eps_g - eps_s
    return float(np.max(np.abs(lhs - rhs)))


# ----------------------------------------------------------------------
# outer optimization loop


@dataclass(frozen=True)
class DistillConfig:
    """Numeric configuration of one distillation run (file-facing config
    handling lives in the lab layer)."""

    method: str = "ge3d"
    iterations: int = 2000
    seed: int = 0
    target: int = 0
    particles: int = 64
    init_kind: str = "uniform"  # uniform box [-scale, scale]^d or normal(0, scale^2)
    init_scale: float = 3.0
    optimizer: str = "adam"
    lr: float = 0.05
    guidance_scale: float = 7.5
    # trajectory-alignment settings
    steps: int = 6
    gap_min: int = 60
    gap_max: int = 80
    resample_gaps: bool = True
    dbc_sigma: float | None = None  # None -> K / 3
    residual_scaling: str = "none"
    # single-step-method settings
    sds_t_min: int = 200
    sds_t_max: int = 500
    sds_f_t: float = 1.0
    sds_guidance_scale: float = 100.0
    ism_t_min: int = 200
    ism_t_max: int = 500
    ism_gap_min: int = 60
    ism_gap_max: int = 80
    # stopping and evaluation
    max_calls: int | None = None
    eval_every_calls: int = 0  # 0: final snapshot only
    eval_samples: int = 2048
    eval_projections: int = 64
    eval_seed: int = 1234

    def sigma(self) -> float:
        if self.dbc_sigma is not None:
            return self.dbc_sigma
        return max(self.iterations, 1) / 3.0

    def calls_per_iteration(self) -> int:
        if self.method in ("ge3d", "ge3d_no_dbc"):
            return 3 * self.steps
        if self.method == "sds":
            return 2
        if self.method == "ism":
            return 4
        raise ParameterError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    particle: int
    calls: int
    grad_norm: float
    residual_norms: tuple[float, ...]
    weights: tuple[float, ...]


@dataclass(frozen=True)
class MetricSnapshot:
    mark: int  # call-budget position of the snapshot
    calls: int
    iteration: int
    sliced_wasserstein: float


@dataclass
class RunHistory:
    method: str
    records: list[IterationRecord] = field(default_factory=list)
    snapshots: list[MetricSnapshot] = field(default_factory=list)
    theta_final: np.ndarray | None = None
    total_calls: int = 0
    iterations_run: int = 0
    failed: bool = False
    failure_message: str = ""

    def final_metric(self) -> float:
        if not self.snapshots:
            raise ParameterError("run produced no metric snapshots")
        return self.snapshots[-1].sliced_wasserstein


class _ParticleAdam:
    """Adam with per-particle moments; only the touched particle's state
    advances, matching the sparse update pattern of the renderer."""

    def __init__(self, m_particles: int, dim: int, lr: float):
        self.lr = lr
        self.m = np.zeros((m_particles, dim))
        self.v = np.zeros((m_particles, dim))
        self.t = np.zeros(m_particles, dtype=int)

    def step(self, theta: np.ndarray, idx: int, grad: np.ndarray):
        b1, b2, eps = 0.9, 0.999, 1e-8
        self.t[idx] += 1
        self.m[idx] = b1 * self.m[idx] + (1.0 - b1) * grad
        self.v[idx] = b2 * self.v[idx] + (1.0 - b2) * grad**2
        mhat = self.m[idx] / (1.0 - b1 ** self.t[idx])
        vhat = self.v[idx] / (1.0 - b2 ** self.t[idx])
        theta[idx] -= self.lr * mhat / (np.sqrt(vhat) + eps)


class _ParticleSGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, theta: np.ndarray, idx: int, grad: np.ndarray):
        theta[idx] -= self.lr * grad


def init_particles(cfg: DistillConfig, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Deterministic particle initialization; the run's generator draws
    this first, so the initial state is recoverable from the config."""
    if cfg.init_kind == "uniform":
        return rng.uniform(-cfg.init_scale, cfg.init_scale, size=(cfg.particles, dim))
    if cfg.init_kind == "normal":
        return cfg.init_scale * rng.standard_normal((cfg.particles, dim))
    raise ParameterError(f"unknown particle init {cfg.init_kind!r}")


def run_distillation(
    method: str,
    config: DistillConfig,
    ds: ToyDataset,
    sched: NoiseSchedule,
    den: Denoiser,
) -> RunHistory:
    """Iterate the chosen update rule for config.iterations (or until the
    call budget is exhausted), recording per-iteration diagnostics and
    periodic sliced-Wasserstein snapshots against the target class.

    Deterministic under the config seed; numeric blow-up terminates the
    run and returns the partial history with the failure flag set.
    """
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}; expected one of {METHODS}")
    config = replace(config, method=method)
    rng = np.random.default_rng(config.seed)
    dim = ds.dim
    theta = init_particles(config, dim, rng)
    counting = CountingDenoiser(den)
    cond = den.class_condition(config.target)
    guide = GuidanceConfig(
        config.sds_guidance_scale if method == "sds" else config.guidance_scale
    )
    cost = config.calls_per_iteration()
    dbc = DBCSchedule.make(max(config.iterations, 1), config.steps, config.sigma())
    if config.optimizer == "adam":
        opt = _ParticleAdam(config.particles, dim, config.lr)
    elif config.optimizer == "sgd":
        opt = _ParticleSGD(config.lr)
    else:
        raise ParameterError(f"unknown optimizer {config.optimizer!r}")

    targets = sample_dataset(ds, config.target, config.eval_samples, config.eval_seed)

    history = RunHistory(method=method)
    traj = None
    next_mark = config.eval_every_calls if config.eval_every_calls > 0 else None

    def snapshot(mark: int, k: int):
        sw = sliced_wasserstein(
            theta, targets, projections=config.eval_projections, seed=config.eval_seed
        )
        history.snapshots.append(MetricSnapshot(mark, counting.calls, k, sw))

    for k in range(config.iterations):
        if config.max_calls is not None and counting.calls + cost > config.max_calls:
            break
        c = int(rng.integers(0, config.particles))
        try:
            if method in ("ge3d", "ge3d_no_dbc"):
                if traj is None or config.resample_gaps:
                    traj = trajectory_from_rng(
                        config.steps, config.gap_min, config.gap_max, rng
                    )
                report = ge3d_iteration(
                    DistillParams(theta, k),
                    traj,
                    counting,
                    cond,
                    guide,
                    dbc,
                    sched,
                    particle_index=c,
                    uniform_weights=(method == "ge3d_no_dbc"),
                    residual_scaling=config.residual_scaling,
                )
                grad = report.total
                res_norms = tuple(float(np.linalg.norm(r)) for r in report.residuals)
                weights = tuple(float(w) for w in report.weights)
            elif method == "sds":
                t = int(rng.integers(config.sds_t_min, config.sds_t_max + 1))
                eps = rng.standard_normal(dim)
                grad = sds_gradient(
                    theta[c], t, counting, cond, guide, eps, sched, config.sds_f_t
                )
                res_norms = (float(np.linalg.norm(grad)),)
                weights = (1.0,)
            else:  # ism
                gap = int(rng.integers(config.ism_gap_min, config.ism_gap_max + 1))
                t = int(rng.integers(config.ism_t_min, config.ism_t_max + 1))
                s = max(1, t - gap)
                grad = ism_gradient(theta[c], s, t, counting, cond, guide, sched)
                res_norms = (float(np.linalg.norm(grad)),)
                weights = (1.0,)
            if not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite gradient at iteration {k}")
            opt.step(theta, c, grad)
            if not np.all(np.isfinite(theta[c])):
                raise NumericError(f"particle {c} became non-finite at iteration {k}")
        except NumericError as exc:
            history.failed = True
            history.failure_message = str(exc)
            break
        history.records.append(
            IterationRecord(
                k=k,
                particle=c,
                calls=counting.calls,
                grad_norm=float(np.linalg.norm(grad)),
                residual_norms=res_norms,
                weights=weights,
            )
        )
        history.iterations_run = k + 1
        if next_mark is not None:
            while counting.calls >= next_mark:
                snapshot(next_mark, k)
                next_mark += config.eval_every_calls

    if history.iterations_run > 0 and (
        not history.snapshots or history.snapshots[-1].calls != counting.calls
    ):
        snapshot(counting.calls, history.iterations_run - 1)
    history.theta_final = theta.copy()
    history.total_calls = counting.calls
    return history
