import numpy as np
import pytest

import scorelab as sl
from scorelab.mlp import TrainConfig, train_denoiser


@pytest.fixture(scope="session")
def sched():
    return sl.build_schedule(1000, 1e-4, 0.02)


@pytest.fixture(scope="session")
def separated_ds():
    return sl.ToyDataset(
        (
            sl.ClassMixture([[-3.0, 0.0]], 0.5, [1.0]),
            sl.ClassMixture([[3.0, 0.0]], 0.5, [1.0]),
        )
    )


@pytest.fixture(scope="session")
def two_mode_ds():
    return sl.ToyDataset(
        (
            sl.ClassMixture([[-2.0, 0.0], [2.0, 0.0]], 0.2, [0.5, 0.5]),
            sl.ClassMixture([[0.0, -2.0], [0.0, 2.0]], 0.2, [0.5, 0.5]),
        )
    )


@pytest.fixture(scope="session")
def single_class_ds():
    return sl.ToyDataset((sl.ClassMixture([[1.5, -0.5]], 1.0, [1.0]),))


@pytest.fixture(scope="session")
def oracle_den(two_mode_ds, sched):
    return sl.OracleDenoiser(two_mode_ds, sched)


@pytest.fixture(scope="session")
def single_oracle_den(single_class_ds, sched):
    return sl.OracleDenoiser(single_class_ds, sched)


@pytest.fixture(scope="session")
def random_net(sched):
    return sl.DenoiserMLP.create(
        2, 2, sched.T, widths=(32, 32), emb_dim=8, seed=11
    )


@pytest.fixture(scope="session")
def trained_small(separated_ds, sched):
    """A briefly trained denoiser; enough fit for embedding-optimization
    and Bayes-bound tests without the full benchmark budget."""
    cfg = TrainConfig(steps=2500, batch=128, lr=1e-3, seed=5, widths=(64, 64, 64))
    return train_denoiser(separated_ds, sched, cfg)


class ZeroDenoiser:
    """Predicts the zero vector everywhere."""

    def predict(self, x, t, cond):
        return np.zeros_like(np.asarray(x, dtype=np.float64))

    def null_condition(self):
        return sl.Condition(None, np.zeros(1))

    def class_condition(self, label):
        return sl.Condition(label, np.ones(1))


class ConstantDenoiser:
    """Predicts one fixed vector regardless of x, t, or condition."""

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)

    def predict(self, x, t, cond):
        return self.value.copy()

    def null_condition(self):
        return sl.Condition(None, np.zeros(1))

    def class_condition(self, label):
        return sl.Condition(label, np.ones(1))


@pytest.fixture
def zero_den():
    return ZeroDenoiser()


@pytest.fixture
def const_den():
    return ConstantDenoiser
