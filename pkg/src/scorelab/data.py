"""Synthetic class-conditional point distributions.

Each class is an isotropic Gaussian mixture in R^d; the collection of
classes (with a uniform class prior) stands in for the data distribution
a pretrained conditional denoiser was fitted to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class ClassMixture:
    """Isotropic Gaussian mixture: component means, one shared stddev,
    and component weights summing to 1."""

    means: np.ndarray  # (components, d)
    stddev: float
    weights: np.ndarray  # (components,)

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        weights = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)
        if means.shape[0] < 1:
            raise ParameterError("mixture needs at least one component")
        if weights.shape != (means.shape[0],):
            raise ParameterError("weights must match the number of components")
        if np.any(weights < 0) or abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ParameterError("weights must be non-negative and sum to 1")
        if not self.stddev > 0:
            raise ParameterError(f"stddev must be > 0, got {self.stddev}")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def mean(self) -> np.ndarray:
        """Mixture mean (the conditional mean of the class)."""
        return self.weights @ self.means


@dataclass(frozen=True)
class ToyDataset:
    """One ClassMixture per class label, uniform class prior."""

    mixtures: tuple[ClassMixture, ...]

    def __post_init__(self):
        if len(self.mixtures) < 1:
            raise ParameterError("dataset needs at least one class")
        dims = {m.dim for m in self.mixtures}
        if len(dims) != 1:
            raise ParameterError("all classes must share one data dimension")

    @property
    def classes(self) -> int:
        return len(self.mixtures)

    @property
    def dim(self) -> int:
        return self.mixtures[0].dim

    def class_mean(self, label: int) -> np.ndarray:
        return self.mixtures[label].mean

    def mode_centers(self, label: int) -> np.ndarray:
        """Component means of one class; the modes when components are
        well separated relative to their stddev."""
        return self.mixtures[label].means

    def mode_separation(self, label: int) -> float:
        """Minimum pairwise distance between a class's component means."""
        centers = self.mixtures[label].means
        if centers.shape[0] < 2:
            return 0.0
        diff = centers[:, None, :] - centers[None, :, :]
        dists = np.sqrt((diff**2).sum(-1))
        return float(dists[np.triu_indices(centers.shape[0], k=1)].min())


def _sample_mixture(mix: ClassMixture, count: int, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(mix.weights)
    comp = np.searchsorted(cum, rng.random(count), side="right")
    comp = np.minimum(comp, mix.means.shape[0] - 1)
    return mix.means[comp] + mix.stddev * rng.standard_normal((count, mix.dim))


def sample_dataset(ds: ToyDataset, label: int, count: int, seed: int) -> np.ndarray:
    """Draw `count` points from one class's mixture, deterministic under seed."""
    if not (0 <= label < ds.classes):
        raise ParameterError(f"unknown class {label} (dataset has {ds.classes})")
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    return _sample_mixture(ds.mixtures[label], count, rng)


def sample_labeled(
    ds: ToyDataset, labels: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw one point per entry of `labels` from that label's mixture.

    Consumes the generator class by class in label order, so callers stay
    bit-reproducible for a fixed label vector.
    """
    labels = np.asarray(labels)
    out = np.empty((labels.shape[0], ds.dim))
    for lab in range(ds.classes):
        mask = labels == lab
        n = int(mask.sum())
        if n:
            out[mask] = _sample_mixture(ds.mixtures[lab], n, rng)
    return out
