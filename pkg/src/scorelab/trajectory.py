"""Paired noising/denoising trajectories.

The noising pass climbs the timestep nodes with null-conditioned
predictions; the denoising pass descends from the shared top anchor with
guided predictions. Their per-node differences are what the distillation
losses consume. An optional inversion mode optimizes a free conditioning
embedding per denoising step to align the two paths, in the style of
null-text / prompt-tuning inversion.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import core
from .core import Condition, Denoiser, GuidanceConfig, Latent, NoiseSchedule
from .errors import NumericError, ParameterError
from .mlp import DenoiserMLP


@dataclass(frozen=True)
class TimestepTrajectory:
    """Strictly increasing timestep nodes [t_0=0, t_1, ..., t_n]."""

    nodes: tuple[int, ...]

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise ParameterError("trajectory needs at least two nodes")
        if self.nodes[0] != 0:
            raise ParameterError("trajectory must start at t=0")
        if any(b <= a for a, b in zip(self.nodes[:-1], self.nodes[1:])):
            raise ParameterError(f"nodes must be strictly increasing: {self.nodes}")

    @property
    def n(self) -> int:
        return len(self.nodes) - 1

    @property
    def top(self) -> int:
        return self.nodes[-1]

    def gaps(self) -> tuple[int, ...]:
        return tuple(b - a for a, b in zip(self.nodes[:-1], self.nodes[1:]))


def build_timestep_trajectory(
    n: int, gap_min: int, gap_max: int, seed: int, T: int = 1000
) -> TimestepTrajectory:
    """n spacings drawn uniformly from [gap_min, gap_max], anchored at t_0 = 0."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if not (1 <= gap_min <= gap_max):
        raise ParameterError(f"need 1 <= gap_min <= gap_max, got ({gap_min}, {gap_max})")
    if n * gap_max > T:
        raise ParameterError(f"infeasible: {n} gaps of up to {gap_max} exceed T={T}")
    rng = np.random.default_rng(seed)
    return trajectory_from_rng(n, gap_min, gap_max, rng)


def trajectory_from_rng(
    n: int, gap_min: int, gap_max: int, rng: np.random.Generator
) -> TimestepTrajectory:
    gaps = rng.integers(gap_min, gap_max + 1, n)
    nodes = np.concatenate([[0], np.cumsum(gaps)])
    return TimestepTrajectory(tuple(int(v) for v in nodes))


@dataclass(frozen=True)
class TrajectoryPair:
    """Noising latents x and denoising latents x_tilde over the same nodes,
    sharing the top-node anchor bit-exactly."""

    traj: TimestepTrajectory
    noising: tuple[Latent, ...]
    denoising: tuple[Latent, ...]

    def __post_init__(self):
        n = self.traj.n
        if len(self.noising) != n + 1 or len(self.denoising) != n + 1:
            raise ParameterError("latent lists must cover every node")
        for lat, t in zip(self.noising, self.traj.nodes):
            if lat.timestep != t:
                raise ParameterError("noising timestep tags do not match nodes")
        for lat, t in zip(self.denoising, self.traj.nodes):
            if lat.timestep != t:
                raise ParameterError("denoising timestep tags do not match nodes")
        if not np.array_equal(self.noising[-1].value, self.denoising[-1].value):
            raise ParameterError("trajectories must share the top anchor exactly")

    def residuals(self) -> list[np.ndarray]:
        """x_{t_i} - x_tilde_{t_i} for i = 0..n-1 (the anchor is excluded)."""
        return [
            self.noising[i].value - self.denoising[i].value for i in range(self.traj.n)
        ]


def _checked(name: str, arr: np.ndarray, t: int) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} produced non-finite values at t={t}")
    return arr


def invert_ddim(
    x0: Latent, traj: TimestepTrajectory, den: Denoiser, sched: NoiseSchedule
) -> list[Latent]:
    """Climb the trajectory with null-conditioned predictions.

    Exactly n denoiser evaluations, one per transition, each at the lower
    node of the transition.
    """
    if x0.timestep != 0:
        raise ParameterError(f"inversion starts from timestep 0, got {x0.timestep}")
    null = den.null_condition()
    lats = [x0]
    for i in range(traj.n):
        t_lo, t_hi = traj.nodes[i], traj.nodes[i + 1]
        eps = _checked("denoiser", den.predict(lats[-1].value, t_lo, null), t_lo)
        lats.append(core.ddim_step(lats[-1], t_hi, eps, sched))
    return lats


def denoise_cfg(
    x_tn: Latent,
    traj: TimestepTrajectory,
    den: Denoiser,
    cond: Condition,
    g: GuidanceConfig,
    sched: NoiseSchedule,
) -> list[Latent]:
    """Descend the trajectory with guided predictions.

    Returns [x_tilde_{t_0}, ..., x_tilde_{t_n}] with x_tilde_{t_n} = x_tn.
    2n denoiser evaluations (conditional plus unconditional per step).
    """
    if x_tn.timestep != traj.top:
        raise ParameterError(
            f"denoising starts at the top node {traj.top}, got {x_tn.timestep}"
        )
    null = den.null_condition()
    lats = [x_tn]
    for i in range(traj.n - 1, -1, -1):
        t_hi = traj.nodes[i + 1]
        cur = lats[-1]
        eps_u = _checked("denoiser", den.predict(cur.value, t_hi, null), t_hi)
        eps_c = _checked("denoiser", den.predict(cur.value, t_hi, cond), t_hi)
        eps_g = core.cfg_combine(eps_u, eps_c, g)
        nxt = core.ddim_step(cur, traj.nodes[i], eps_g, sched)
        _checked("ddim step", nxt.value, traj.nodes[i])
        lats.append(nxt)
    return lats[::-1]


def make_trajectory_pair(
    x0: Latent,
    traj: TimestepTrajectory,
    den: Denoiser,
    cond: Condition,
    g: GuidanceConfig,
    sched: NoiseSchedule,
) -> TrajectoryPair:
    noising = invert_ddim(x0, traj, den, sched)
    denoising = denoise_cfg(noising[-1], traj, den, cond, g, sched)
    return TrajectoryPair(traj, tuple(noising), tuple(denoising))


@dataclass
class EmbeddingInversion:
    """Result of per-step embedding-optimized inversion.

    embeddings[i] conditions the transition t_{i+1} -> t_i (steps are
    optimized from the top down). Losses are per step, before and after
    the inner optimization; `converged[i]` reports whether the final loss
    fell below the requested threshold (non-convergence is reported, not
    raised).
    """

    embeddings: list[np.ndarray]
    path: list[Latent]
    initial_losses: np.ndarray
    final_losses: np.ndarray
    converged: np.ndarray


def invert_with_embedding_optimization(
    x0: Latent,
    traj: TimestepTrajectory,
    den: DenoiserMLP,
    sched: NoiseSchedule,
    inner_steps: int,
    lr: float,
    loss_threshold: float = 1e-6,
) -> EmbeddingInversion:
    """Align the denoising path to the noising path by optimizing one free
    conditioning embedding per step.

    For each transition t_{i+1} -> t_i (from the top down) the embedding is
    tuned by plain gradient descent on || x_{t_i} - x_tilde_{t_i} ||^2 with
    the network frozen; embeddings start from the null row.
    """
    if not isinstance(den, DenoiserMLP):
        raise ParameterError("embedding optimization requires an embedding-conditioned denoiser")
    noising = invert_ddim(x0, traj, den, sched)
    n = traj.n
    embeddings: list[np.ndarray | None] = [None] * n
    path: list[Latent | None] = [None] * (n + 1)
    path[n] = noising[n]
    init_losses = np.zeros(n)
    final_losses = np.zeros(n)

    for i in range(n - 1, -1, -1):
        t_hi = traj.nodes[i + 1]
        t_lo = traj.nodes[i]
        cur = path[i + 1]
        target = noising[i].value
        ab_lo = sched.alpha_bar[t_lo]
        ab_hi = sched.alpha_bar[t_hi]
        delta = core.ddim_delta(t_lo, t_hi, sched)
        base = np.sqrt(ab_lo) * (cur.value / np.sqrt(ab_hi))
        coeff = np.sqrt(ab_lo) * delta
        emb = den.emb_table[0].copy()

        def step_loss(e: np.ndarray):
            out, cache = den.forward(cur.value[None, :], np.array([t_hi]), e[None, :])
            x_lo = base - coeff * out[0]
            resid = target - x_lo
            return float(resid @ resid), resid, cache

        loss, resid, cache = step_loss(emb)
        init_losses[i] = loss
        for _ in range(inner_steps):
            # d loss / d out = 2 * coeff * resid  (x_lo depends on out via -coeff)
            dout = (2.0 * coeff * resid)[None, :]
            _, _, dinput = den.backward(dout, cache)
            emb = emb - lr * den.input_embedding_grad(dinput)[0]
            loss, resid, cache = step_loss(emb)
        final_losses[i] = loss
        out, _ = den.forward(cur.value[None, :], np.array([t_hi]), emb[None, :])
        path[i] = core.ddim_step(cur, t_lo, out[0], sched)
        embeddings[i] = emb

    converged = final_losses <= np.maximum(loss_threshold, 0.01 * init_losses)
    return EmbeddingInversion(
        [e for e in embeddings],
        [p for p in path],
        init_losses,
        final_losses,
        converged,
    )


def dump_trajectory_pair(pair: TrajectoryPair, path) -> None:
    """Write one row per node: node index, timestep, then the noising and
    denoising latent components."""
    d = pair.noising[0].dim
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["i", "t"]
        header += [f"x_{j}" for j in range(d)]
        header += [f"xt_{j}" for j in range(d)]
        writer.writerow(header)
        for i, t in enumerate(pair.traj.nodes):
            row = [i, t]
            row += [repr(float(v)) for v in pair.noising[i].value]
            row += [repr(float(v)) for v in pair.denoising[i].value]
            writer.writerow(row)
