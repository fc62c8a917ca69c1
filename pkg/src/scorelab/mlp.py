"""Trainable conditional denoiser: a small fully-connected network with
hand-written reverse-mode gradients.

The network maps (x, t, condition embedding) -> noise estimate of the same
dimension as x. Timesteps enter through sinusoidal features, conditions
through a learned embedding table whose row 0 is the null condition.
Everything is float64 numpy and deterministic under a fixed seed, so
training twice with the same config yields bit-identical weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Condition, NoiseSchedule
from .data import ToyDataset, sample_labeled
from .errors import ParameterError, TrainingError

CHECKPOINT_VERSION = 1


def time_features(t: np.ndarray, T: int, n_freqs: int) -> np.ndarray:
    """Sinusoidal features of t/T at n_freqs octaves: (B, 2 * n_freqs)."""
    tau = np.asarray(t, dtype=np.float64)[:, None] / T
    freqs = np.pi * (2.0 ** np.arange(n_freqs))[None, :]
    ang = tau * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class DenoiserMLP:
    """Tanh MLP noise predictor with learned condition embeddings."""

    def __init__(
        self,
        data_dim: int,
        n_classes: int,
        T: int,
        widths: tuple[int, ...],
        weights: list[np.ndarray],
        biases: list[np.ndarray],
        emb_table: np.ndarray,
        time_freqs: int = 8,
    ):
        self.data_dim = data_dim
        self.n_classes = n_classes
        self.T = T
        self.widths = tuple(widths)
        self.weights = weights
        self.biases = biases
        self.emb_table = emb_table
        self.time_freqs = time_freqs

    # ------------------------------------------------------------------
    # construction

    @classmethod
    def create(
        cls,
        data_dim: int,
        n_classes: int,
        T: int,
        widths: tuple[int, ...] = (128, 128, 128, 128),
        emb_dim: int = 16,
        time_freqs: int = 8,
        rng: np.random.Generator | None = None,
        seed: int = 0,
    ) -> "DenoiserMLP":
        if rng is None:
            rng = np.random.default_rng(seed)
        in_dim = data_dim + 2 * time_freqs + emb_dim
        dims = [in_dim, *widths, data_dim]
        weights, biases = [], []
        for a, b in zip(dims[:-1], dims[1:]):
            weights.append(rng.normal(0.0, 1.0 / np.sqrt(a), size=(a, b)))
            biases.append(np.zeros(b))
        emb_table = 0.5 * rng.standard_normal((n_classes + 1, emb_dim))
        return cls(data_dim, n_classes, T, tuple(widths), weights, biases, emb_table, time_freqs)

    @property
    def emb_dim(self) -> int:
        return self.emb_table.shape[1]

    def copy(self) -> "DenoiserMLP":
        return DenoiserMLP(
            self.data_dim,
            self.n_classes,
            self.T,
            self.widths,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.emb_table.copy(),
            self.time_freqs,
        )

    # ------------------------------------------------------------------
    # forward / backward

    def forward(self, x: np.ndarray, t: np.ndarray, emb: np.ndarray):
        """Batched forward pass; returns (output, activation cache)."""
        h = np.concatenate([x, time_features(t, self.T, self.time_freqs), emb], axis=1)
        cache = [h]
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W + b)
            cache.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out, cache

    def backward(self, dout: np.ndarray, cache: list[np.ndarray]):
        """Reverse pass. Returns (weight grads, bias grads, input grad)
        where the input grad spans the concatenated (x, time, emb) block."""
        g_w = [None] * len(self.weights)
        g_b = [None] * len(self.biases)
        dh = dout
        g_w[-1] = cache[-1].T @ dh
        g_b[-1] = dh.sum(axis=0)
        dh = dh @ self.weights[-1].T
        for l in range(len(self.weights) - 2, -1, -1):
            dz = dh * (1.0 - cache[l + 1] ** 2)
            g_w[l] = cache[l].T @ dz
            g_b[l] = dz.sum(axis=0)
            dh = dz @ self.weights[l].T
        return g_w, g_b, dh

    def input_embedding_grad(self, dinput: np.ndarray) -> np.ndarray:
        """Slice the embedding block out of an input gradient."""
        start = self.data_dim + 2 * self.time_freqs
        return dinput[:, start:]

    # ------------------------------------------------------------------
    # Denoiser protocol

    def predict(self, x: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        return self.predict_embedding(x, t, cond.embedding)

    def predict_embedding(self, x: np.ndarray, t: int, emb: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out, _ = self.forward(x[None, :], np.array([t]), np.asarray(emb)[None, :])
        return out[0]

    def null_condition(self) -> Condition:
        return Condition(None, self.emb_table[0])

    def class_condition(self, label: int) -> Condition:
        if not (0 <= label < self.n_classes):
            raise ParameterError(f"unknown class {label}")
        return Condition(label, self.emb_table[label + 1])

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, self.emb_table]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20000
    batch: int = 256
    lr: float = 1e-3
    condition_dropout: float = 0.1
    seed: int = 0
    widths: tuple[int, ...] = (128, 128, 128, 128)
    emb_dim: int = 16
    time_freqs: int = 8
    log_every: int = 200

    def __post_init__(self):
        if not (0.0 <= self.condition_dropout <= 1.0):
            raise ParameterError("condition_dropout must lie in [0, 1]")
        if self.steps < 0 or self.batch < 1 or not self.lr > 0:
            raise ParameterError("invalid training configuration")


@dataclass(frozen=True)
class TrainBatch:
    """A fixed evaluation batch for the noise-prediction loss."""

    x_t: np.ndarray
    t: np.ndarray
    labels: np.ndarray  # -1 marks the null condition
    eps: np.ndarray


@dataclass
class TrainResult:
    net: DenoiserMLP
    loss_steps: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    losses: np.ndarray = field(default_factory=lambda: np.empty(0))


def make_train_batch(
    ds: ToyDataset, sched: NoiseSchedule, size: int, seed: int
) -> TrainBatch:
    """Held-out batch: class-conditioned noised samples with their true noise."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, ds.classes, size)
    x0 = sample_labeled(ds, labels, rng)
    t = rng.integers(1, sched.T + 1, size)
    eps = rng.standard_normal((size, ds.dim))
    ab = sched.alpha_bar[t][:, None]
    x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return TrainBatch(x_t, t, labels, eps)


def _batch_embeddings(net: DenoiserMLP, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rows = np.where(labels < 0, 0, labels + 1)
    return net.emb_table[rows], rows


def batch_loss(net: DenoiserMLP, batch: TrainBatch) -> float:
    """Mean over the batch of the squared noise-prediction error."""
    emb, _ = _batch_embeddings(net, batch.labels)
    out, _ = net.forward(batch.x_t, batch.t, emb)
    return float(np.mean(((out - batch.eps) ** 2).sum(axis=1)))


def oracle_batch_loss(denoiser, batch: TrainBatch) -> float:
    """Same loss evaluated by any other Denoiser (e.g. the exact oracle)."""
    total = 0.0
    for i in range(batch.x_t.shape[0]):
        lab = int(batch.labels[i])
        cond = denoiser.null_condition() if lab < 0 else denoiser.class_condition(lab)
        pred = denoiser.predict(batch.x_t[i], int(batch.t[i]), cond)
        total += float(((pred - batch.eps[i]) ** 2).sum())
    return total / batch.x_t.shape[0]


class _Adam:
    def __init__(self, params: list[np.ndarray], lr: float):
        self.lr = lr
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g**2
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + eps)


def train_denoiser(ds: ToyDataset, sched: NoiseSchedule, cfg: TrainConfig) -> TrainResult:
    """Fit the noise-prediction objective on the toy dataset.

    A single seeded generator drives initialization and every batch draw,
    so identical configs reproduce identical weights. Each batch uses the
    null embedding with probability `condition_dropout` (the standard
    recipe for enabling classifier-free guidance at sampling time).
    """
    rng = np.random.default_rng(cfg.seed)
    net = DenoiserMLP.create(
        ds.dim,
        ds.classes,
        sched.T,
        widths=cfg.widths,
        emb_dim=cfg.emb_dim,
        time_freqs=cfg.time_freqs,
        rng=rng,
    )
    opt = _Adam(net.parameters(), cfg.lr)
    loss_steps, losses = [], []
    for step in range(cfg.steps):
        labels = rng.integers(0, ds.classes, cfg.batch)
        x0 = sample_labeled(ds, labels, rng)
        t = rng.integers(1, sched.T + 1, cfg.batch)
        eps = rng.standard_normal((cfg.batch, ds.dim))
        ab = sched.alpha_bar[t][:, None]
        x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
        drop = rng.random() < cfg.condition_dropout
        rows = np.zeros(cfg.batch, dtype=int) if drop else labels + 1
        emb = net.emb_table[rows]

        out, cache = net.forward(x_t, t, emb)
        err = out - eps
        loss = float(np.mean((err**2).sum(axis=1)))
        if not np.isfinite(loss):
            raise TrainingError(f"loss became non-finite at step {step} (lr={cfg.lr})")
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            loss_steps.append(step)
            losses.append(loss)

        dout = 2.0 * err / cfg.batch
        g_w, g_b, dinput = net.backward(dout, cache)
        g_table = np.zeros_like(net.emb_table)
        np.add.at(g_table, rows, net.input_embedding_grad(dinput))
        opt.step(net.parameters(), [*g_w, *g_b, g_table])
    return TrainResult(net, np.array(loss_steps, dtype=int), np.array(losses))


def mlp_gradient_check(
    net: DenoiserMLP,
    batch: TrainBatch,
    sched: NoiseSchedule,
    n_params: int = 32,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Compare analytic loss gradients against central finite differences
    on a random parameter subset; returns the max relative error."""
    if batch.x_t.shape[0] == 0:
        raise ParameterError("gradient check needs a nonempty batch")
    emb, rows = _batch_embeddings(net, batch.labels)
    out, cache = net.forward(batch.x_t, batch.t, emb)
    dout = 2.0 * (out - batch.eps) / batch.x_t.shape[0]
    g_w, g_b, dinput = net.backward(dout, cache)
    g_table = np.zeros_like(net.emb_table)
    np.add.at(g_table, rows, net.input_embedding_grad(dinput))
    grads = [*g_w, *g_b, g_table]

    params = net.parameters()
    sizes = [p.size for p in params]
    total = int(np.sum(sizes))
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_params, total), replace=False)
    offsets = np.cumsum([0, *sizes])

    worst = 0.0
    for flat_idx in picks:
        arr_i = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        local = int(flat_idx - offsets[arr_i])
        p = params[arr_i]
        idx = np.unravel_index(local, p.shape)
        orig = p[idx]
        p[idx] = orig + step
        hi = batch_loss(net, batch)
        p[idx] = orig - step
        lo = batch_loss(net, batch)
        p[idx] = orig
        fd = (hi - lo) / (2.0 * step)
        analytic = grads[arr_i][idx]
        denom = max(abs(fd), abs(analytic), 1e-10)
        worst = max(worst, abs(fd - analytic) / denom)
    return worst


# ----------------------------------------------------------------------
# checkpoint format: a flat .npz archive (version, shape metadata, weight
# arrays `w{i}`/`b{i}`, embedding table, schedule digest). Float64 arrays
# round-trip bit-exactly.


def save_checkpoint(net: DenoiserMLP, sched: NoiseSchedule, path) -> None:
    payload = {
        "format_version": np.array([CHECKPOINT_VERSION]),
        "data_dim": np.array([net.data_dim]),
        "n_classes": np.array([net.n_classes]),
        "T": np.array([net.T]),
        "widths": np.array(net.widths, dtype=int),
        "time_freqs": np.array([net.time_freqs]),
        "emb_table": net.emb_table,
        "schedule_digest": np.array([sched.digest()]),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        payload[f"w{i}"] = w
        payload[f"b{i}"] = b
    np.savez(path, **payload)


def load_checkpoint(path) -> tuple[DenoiserMLP, str]:
    """Returns the network and the digest of the schedule it was trained on."""
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"][0])
        if version != CHECKPOINT_VERSION:
            raise ParameterError(f"unsupported checkpoint version {version}")
        widths = tuple(int(w) for w in z["widths"])
        n_layers = len(widths) + 1
        weights = [z[f"w{i}"] for i in range(n_layers)]
        biases = [z[f"b{i}"] for i in range(n_layers)]
        net = DenoiserMLP(
            int(z["data_dim"][0]),
            int(z["n_classes"][0]),
            int(z["T"][0]),
            widths,
            weights,
            biases,
            z["emb_table"],
            int(z["time_freqs"][0]),
        )
        return net, str(z["schedule_digest"][0])
