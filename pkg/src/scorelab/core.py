"""Shared diffusion algebra: noise schedules, forward noising, deterministic
DDIM transitions, and classifier-free guidance.

Conventions used throughout the package:

* discrete timesteps t in [0, T], with t = 0 the clean sample;
* alpha_bar[0] = 1 exactly, alpha_bar strictly decreasing;
* the DDIM transition is deterministic (zero random-perturbation
  coefficient) and valid in both directions of noise level.

All arrays are float64 and all operations are pure functions over
immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import NumericError, ParameterError


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule tables indexed by discrete timestep.

    ``beta`` and ``alpha_bar`` have length T+1 with the index-0 convention
    beta[0] = 0 and alpha_bar[0] = 1, so alpha_bar[t] is the cumulative
    product of (1 - beta[s]) for s = 1..t.
    """

    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen(self.beta))
        object.__setattr__(self, "alpha_bar", _frozen(self.alpha_bar))
        if self.T < 1:
            raise ParameterError(f"T must be >= 1, got {self.T}")
        if self.beta.shape != (self.T + 1,) or self.alpha_bar.shape != (self.T + 1,):
            raise ParameterError("beta and alpha_bar must have length T+1")
        if self.beta[0] != 0.0:
            raise ParameterError("beta[0] must be 0")
        if self.alpha_bar[0] != 1.0:
            raise ParameterError("alpha_bar[0] must be 1")
        if np.any(self.alpha_bar <= 0.0) or np.any(self.alpha_bar > 1.0):
            raise ParameterError("alpha_bar values must lie in (0, 1]")
        if np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ParameterError("alpha_bar must be strictly decreasing")

    @classmethod
    def from_betas(cls, beta: np.ndarray) -> "NoiseSchedule":
        """Build the cumulative tables from per-step variances beta[1..T]."""
        beta = np.asarray(beta, dtype=np.float64)
        T = beta.shape[0]
        full = np.concatenate([[0.0], beta])
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
        return cls(T=T, beta=full, alpha_bar=alpha_bar)

    def digest(self) -> str:
        """Stable hex digest of the schedule contents, used in checkpoints."""
        import hashlib

        h = hashlib.sha256()
        h.update(str(self.T).encode())
        h.update(self.beta.tobytes())
        return h.hexdigest()[:16]


def build_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linear beta ramp from beta_start to beta_end over t = 1..T."""
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, T))


@dataclass(frozen=True)
class Latent:
    """A point in data space tagged with its noise level."""

    value: np.ndarray
    timestep: int

    def __post_init__(self):
        object.__setattr__(self, "value", _frozen(self.value))
        if self.timestep < 0:
            raise ParameterError(f"timestep must be >= 0, got {self.timestep}")
        if not np.all(np.isfinite(self.value)):
            raise NumericError("latent has non-finite components")

    @property
    def dim(self) -> int:
        return self.value.shape[0]


@dataclass(frozen=True)
class Condition:
    """Conditioning input: a class label (or None for unconditional) plus
    the embedding vector the denoiser should consume for it."""

    label: int | None
    embedding: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "embedding", _frozen(self.embedding))

    @property
    def is_null(self) -> bool:
        return self.label is None


@dataclass(frozen=True)
class GuidanceConfig:
    """Classifier-free guidance strength. scale = 0 is purely unconditional,
    scale = 1 purely conditional, larger values extrapolate."""

    scale: float = 7.5

    def __post_init__(self):
        if not np.isfinite(self.scale) or self.scale < 0.0:
            raise ParameterError(f"guidance scale must be finite and >= 0, got {self.scale}")


@runtime_checkable
class Denoiser(Protocol):
    """Conditional noise-prediction function eps(x, t, cond)."""

    def predict(self, x: np.ndarray, t: int, cond: Condition) -> np.ndarray: ...

    def null_condition(self) -> Condition: ...

    def class_condition(self, label: int) -> Condition: ...


class CountingDenoiser:
    """Wrapper that counts predict() calls; used for call-budget accounting."""

    def __init__(self, inner: Denoiser):
        self.inner = inner
        self.calls = 0

    def predict(self, x: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        self.calls += 1
        return self.inner.predict(x, t, cond)

    def null_condition(self) -> Condition:
        return self.inner.null_condition()

    def class_condition(self, label: int) -> Condition:
        return self.inner.class_condition(label)


def q_sample(x0: Latent, t: int, eps: np.ndarray, sched: NoiseSchedule) -> Latent:
    """Forward noising: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
    if x0.timestep != 0:
        raise ParameterError(f"q_sample input must be at timestep 0, got {x0.timestep}")
    if not (1 <= t <= sched.T):
        raise ParameterError(f"t must be in [1, {sched.T}], got {t}")
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.value.shape:
        raise ParameterError("eps dimension does not match x0")
    ab = sched.alpha_bar[t]
    return Latent(np.sqrt(ab) * x0.value + np.sqrt(1.0 - ab) * eps, t)


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, g: GuidanceConfig) -> np.ndarray:
    """Guided prediction eps_u + scale * (eps_c - eps_u).

    The scale = 1 endpoint returns the conditional prediction exactly; the
    literal form already makes scale = 0 and the agreeing-predictions fixed
    point exact.
    """
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    if eps_uncond.shape != eps_cond.shape:
        raise ParameterError("guidance inputs must have equal dimensions")
    if g.scale == 1.0:
        return eps_cond.copy()
    return eps_uncond + g.scale * (eps_cond - eps_uncond)


def ddim_step(x_m: Latent, k: int, eps_hat: np.ndarray, sched: NoiseSchedule) -> Latent:
    """Deterministic transition between noise levels m -> k (either direction):

        x_k = sqrt(ab_k) * (x_m - sqrt(1 - ab_m) * eps_hat) / sqrt(ab_m)
              + sqrt(1 - ab_k) * eps_hat
    """
    m = x_m.timestep
    if not (0 <= m <= sched.T and 0 <= k <= sched.T):
        raise ParameterError(f"timesteps must lie in [0, {sched.T}], got m={m}, k={k}")
    if k == m:
        return Latent(x_m.value, m)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if eps_hat.shape != x_m.value.shape:
        raise ParameterError("eps_hat dimension does not match x_m")
    ab_m = sched.alpha_bar[m]
    ab_k = sched.alpha_bar[k]
    if ab_m == 0.0:
        raise NumericError("alpha_bar[m] = 0: transition is singular")
    x0_pred = (x_m.value - np.sqrt(1.0 - ab_m) * eps_hat) / np.sqrt(ab_m)
    return Latent(np.sqrt(ab_k) * x0_pred + np.sqrt(1.0 - ab_k) * eps_hat, k)


def ddim_delta(t_lo: int, t_hi: int, sched: NoiseSchedule) -> float:
    """Transition coefficient between adjacent trajectory nodes:

        sqrt((1 - ab_hi) / ab_hi) - sqrt((1 - ab_lo) / ab_lo)

    Strictly positive and additive over concatenated intervals.
    """
    if not (0 <= t_lo < t_hi <= sched.T):
        raise ParameterError(f"need 0 <= t_lo < t_hi <= {sched.T}, got ({t_lo}, {t_hi})")
    ab_lo = sched.alpha_bar[t_lo]
    ab_hi = sched.alpha_bar[t_hi]
    return float(np.sqrt((1.0 - ab_hi) / ab_hi) - np.sqrt((1.0 - ab_lo) / ab_lo))
