"""Self-check suite: algebraic identities, DDIM round-trips, weight-schedule
properties, and the backprop gradient check, each reported as a named check
with its worst observed residual against a fixed threshold.

The identity checks hold for arbitrary denoisers, so they run against a
random-weight network; no training is involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import core, distill
from ..core import GuidanceConfig, Latent
from ..mlp import DenoiserMLP, make_train_batch, mlp_gradient_check
from ..data import ClassMixture, ToyDataset


@dataclass(frozen=True)
class CheckResult:
    name: str
    residual: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.threshold

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"[{status}] {self.name}: max residual {self.residual:.3e} (threshold {self.threshold:.0e})"


def _random_net(sched, rng) -> DenoiserMLP:
    return DenoiserMLP.create(
        data_dim=2, n_classes=2, T=sched.T, widths=(32, 32), emb_dim=8, rng=rng
    )


def check_sds_identity(sched, draws: int = 1000, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    den = _random_net(sched, rng)
    worst = 0.0
    for _ in range(draws):
        x0 = 4.0 * rng.standard_normal(2)
        eps = rng.standard_normal(2)
        t = int(rng.integers(1, sched.T + 1))
        g = GuidanceConfig(float(rng.uniform(0.0, 10.0)))
        cond = den.class_condition(int(rng.integers(0, 2)))
        worst = max(worst, distill.verify_sds_identity(x0, t, eps, den, cond, g, sched))
    return CheckResult("single-step noising/denoising identity", worst, 1e-9)


def check_ism_identity(sched, draws: int = 1000, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    den = _random_net(sched, rng)
    worst = 0.0
    for _ in range(draws):
        x0 = 4.0 * rng.standard_normal(2)
        s = int(rng.integers(0, sched.T))
        t = int(rng.integers(s + 1, sched.T + 1))
        g = GuidanceConfig(float(rng.uniform(0.0, 10.0)))
        cond = den.class_condition(int(rng.integers(0, 2)))
        worst = max(worst, distill.verify_ism_identity(x0, s, t, den, cond, g, sched))
    return CheckResult("inversion-step alignment identity", worst, 1e-9)


def check_ddim_roundtrip(sched, draws: int = 500, seed: int = 2) -> CheckResult:
    """m -> k -> m with a shared eps_hat must return to x_m (relative)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        m = int(rng.integers(0, sched.T + 1))
        k = int(rng.integers(0, sched.T + 1))
        x_m = Latent(4.0 * rng.standard_normal(2), m)
        eps_hat = rng.standard_normal(2)
        x_k = core.ddim_step(x_m, k, eps_hat, sched)
        back = core.ddim_step(x_k, m, eps_hat, sched)
        scale = max(float(np.max(np.abs(x_m.value))), 1.0)
        worst = max(worst, float(np.max(np.abs(back.value - x_m.value))) / scale)
    return CheckResult("ddim round-trip (relative)", worst, 1e-10)


def check_noising_inversion(sched, draws: int = 500, seed: int = 3) -> CheckResult:
    """q_sample then a ddim step back to 0 with the true eps recovers x0."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        x0 = Latent(4.0 * rng.standard_normal(2), 0)
        t = int(rng.integers(1, sched.T + 1))
        eps = rng.standard_normal(2)
        x_t = core.q_sample(x0, t, eps, sched)
        back = core.ddim_step(x_t, 0, eps, sched)
        scale = max(float(np.max(np.abs(x0.value))), 1.0)
        worst = max(worst, float(np.max(np.abs(back.value - x0.value))) / scale)
    return CheckResult("forward noising inversion (relative)", worst, 1e-10)


def check_delta_additivity(sched, draws: int = 500, seed: int = 4) -> CheckResult:
    """delta(a,b) + delta(b,c) telescopes to delta(a,c)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        a, b, c = sorted(rng.choice(sched.T + 1, size=3, replace=False))
        a, b, c = int(a), int(b), int(c)
        lhs = core.ddim_delta(a, b, sched) + core.ddim_delta(b, c, sched)
        worst = max(worst, abs(lhs - core.ddim_delta(a, c, sched)))
    return CheckResult("transition-coefficient additivity", worst, 1e-12)


def check_rescaled_step_form(sched, draws: int = 500, seed: int = 5) -> CheckResult:
    """ddim_step agrees with the rescaled update
    x_k / sqrt(ab_k) = x_m / sqrt(ab_m) +- delta * eps_hat."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        m = int(rng.integers(0, sched.T + 1))
        k = int(rng.integers(0, sched.T + 1))
        if m == k:
            k = (k + 1) % (sched.T + 1)
        x_m = Latent(4.0 * rng.standard_normal(2), m)
        eps_hat = rng.standard_normal(2)
        stepped = core.ddim_step(x_m, k, eps_hat, sched).value
        sign = 1.0 if k > m else -1.0
        delta = core.ddim_delta(min(m, k), max(m, k), sched)
        rescaled = np.sqrt(sched.alpha_bar[k]) * (
            x_m.value / np.sqrt(sched.alpha_bar[m]) + sign * delta * eps_hat
        )
        scale = max(float(np.max(np.abs(stepped))), 1.0)
        worst = max(worst, float(np.max(np.abs(stepped - rescaled))) / scale)
    return CheckResult("rescaled transition form (relative)", worst, 1e-10)


def check_weight_schedule(K: int = 3000, n: int = 6, sigma: float = 1000.0) -> CheckResult:
    """Normalization to 1, exact peak endpoints, and the coarse-to-fine
    argmax handoff (boolean failures count as residual 1)."""
    dbc = distill.DBCSchedule.make(K, n, sigma)
    worst = 0.0
    if dbc.Delta[0] != float(K) or dbc.Delta[n - 1] != 0.0:
        worst = 1.0
    prev_arg = n - 1
    for k in range(K):
        w = distill.dbc_weights(k, dbc)
        worst = max(worst, abs(float(w.sum()) - 1.0))
        arg = int(np.argmax(w))
        if arg > prev_arg:
            worst = max(worst, 1.0)
        prev_arg = arg
    first = int(np.argmax(distill.dbc_weights(0, dbc)))
    last = int(np.argmax(distill.dbc_weights(K - 1, dbc)))
    if first != n - 1 or last != 0:
        worst = max(worst, 1.0)
    return CheckResult("granularity weight schedule", worst, 1e-12)


def check_gradient_check(sched, seed: int = 6) -> CheckResult:
    rng = np.random.default_rng(seed)
    net = DenoiserMLP.create(2, 2, sched.T, widths=(64, 64), emb_dim=8, rng=rng)
    ds = ToyDataset(
        (
            ClassMixture([[-2.0, 0.0]], 0.5, [1.0]),
            ClassMixture([[2.0, 0.0]], 0.5, [1.0]),
        )
    )
    batch = make_train_batch(ds, sched, 16, seed=7)
    err = mlp_gradient_check(net, batch, sched, n_params=32, seed=8)
    return CheckResult("backprop gradient check", err, 1e-4)


def run_all(sched, draws: int = 1000) -> list[CheckResult]:
    return [
        check_sds_identity(sched, draws),
        check_ism_identity(sched, draws),
        check_ddim_roundtrip(sched),
        check_noising_inversion(sched),
        check_delta_additivity(sched),
        check_rescaled_step_form(sched),
        check_weight_schedule(),
        check_gradient_check(sched),
    ]
