"""Closed-form Bayes-optimal noise prediction for Gaussian(-mixture) data.

For x0 ~ N(mu, s2 I) and x_t = sqrt(ab) x0 + sqrt(1-ab) eps, the posterior
mean of x0 given x_t is

    E[x0 | x_t] = mu + (sqrt(ab) s2 / (ab s2 + 1 - ab)) (x_t - sqrt(ab) mu)

and the loss-minimizing noise estimate is

    eps_hat = (x_t - sqrt(ab) E[x0 | x_t]) / sqrt(1 - ab).

The mixture case weights per-component posterior means by the component
responsibilities under the noised marginals; this is exact, so the oracle
serves as ground truth against trained denoisers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Condition, Latent, NoiseSchedule
from .data import ToyDataset
from .errors import ParameterError


@dataclass(frozen=True)
class GaussianOracle:
    """Single isotropic Gaussian prior for one class."""

    mean: np.ndarray
    var: float

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        if not self.var > 0:
            raise ParameterError(f"variance must be > 0, got {self.var}")


def gaussian_posterior_mean(
    x_t: np.ndarray, t: int, mean: np.ndarray, var: float, sched: NoiseSchedule
) -> np.ndarray:
    """E[x0 | x_t] for the single-Gaussian prior."""
    ab = sched.alpha_bar[t]
    shrink = np.sqrt(ab) * var / (ab * var + 1.0 - ab)
    return mean + shrink * (x_t - np.sqrt(ab) * mean)


def oracle_eps(x_t: Latent, label: int, o: GaussianOracle, sched: NoiseSchedule) -> np.ndarray:
    """Bayes-optimal noise estimate for a single-Gaussian class prior.

    Undefined at t = 0 where no noise has been added (division by zero).
    The `label` argument is accepted for interface symmetry with trained
    denoisers; the oracle instance already fixes the class.
    """
    t = x_t.timestep
    if t < 1:
        raise ParameterError("oracle noise estimate requires t >= 1")
    ab = sched.alpha_bar[t]
    post = gaussian_posterior_mean(x_t.value, t, o.mean, o.var, sched)
    return (x_t.value - np.sqrt(ab) * post) / np.sqrt(1.0 - ab)


class OracleDenoiser:
    """Exact conditional denoiser for a ToyDataset.

    Class conditions use that class's mixture posterior; the null condition
    uses the pooled mixture over all classes (uniform class prior), which is
    what an ideal classifier-free-guidance-trained network would learn for
    the empty condition. At t = 0 the prediction is the zero vector, the
    continuous limit of the posterior formula.
    """

    def __init__(self, ds: ToyDataset, sched: NoiseSchedule):
        self.ds = ds
        self.sched = sched
        # Pooled components: (means, vars, log-weights) per conditioning case.
        self._cases: dict[int | None, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        for lab in range(ds.classes):
            mix = ds.mixtures[lab]
            self._cases[lab] = (
                mix.means,
                np.full(mix.means.shape[0], mix.stddev**2),
                np.log(mix.weights),
            )
        means = np.concatenate([ds.mixtures[lab].means for lab in range(ds.classes)])
        variances = np.concatenate(
            [
                np.full(ds.mixtures[lab].means.shape[0], ds.mixtures[lab].stddev**2)
                for lab in range(ds.classes)
            ]
        )
        logw = np.concatenate(
            [np.log(ds.mixtures[lab].weights / ds.classes) for lab in range(ds.classes)]
        )
        self._cases[None] = (means, variances, logw)

    def posterior_mean(self, x: np.ndarray, t: int, label: int | None) -> np.ndarray:
        """E[x0 | x_t] under the class mixture (or pooled mixture for None)."""
        means, variances, logw = self._cases[label]
        ab = self.sched.alpha_bar[t]
        d = x.shape[0]
        v = ab * variances + 1.0 - ab  # marginal variance of x_t per component
        diff = x[None, :] - np.sqrt(ab) * means
        sq = (diff**2).sum(axis=1)
        logits = logw - 0.5 * sq / v - 0.5 * d * np.log(v)
        logits -= logits.max()
        gamma = np.exp(logits)
        gamma /= gamma.sum()
        shrink = np.sqrt(ab) * variances / v
        comp_post = means + shrink[:, None] * diff
        return gamma @ comp_post

    def predict(self, x: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if t == 0:
            return np.zeros_like(x)
        ab = self.sched.alpha_bar[t]
        post = self.posterior_mean(x, t, cond.label)
        return (x - np.sqrt(ab) * post) / np.sqrt(1.0 - ab)

    def null_condition(self) -> Condition:
        return Condition(None, self._embedding(None))

    def class_condition(self, label: int) -> Condition:
        if not (0 <= label < self.ds.classes):
            raise ParameterError(f"unknown class {label}")
        return Condition(label, self._embedding(label))

    def _embedding(self, label: int | None) -> np.ndarray:
        # One-hot placeholder embeddings; the oracle conditions on the label.
        e = np.zeros(self.ds.classes + 1)
        e[0 if label is None else label + 1] = 1.0
        return e
