"""Binary-gaussian RBM: block Gibbs sampling, CD-k gradients and training.

Energy (spins ``s`` in {-1,+1}^N, real hidden ``lam`` in R^p)::

    H(s, lam) = 1/2 |lam - c|^2 - b.s - s^T W lam

sampled at inverse temperature ``beta``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class GaussBernRBM:
    W: np.ndarray
    b: np.ndarray | None = None
    c: np.ndarray | None = None
    beta: float = 1.0

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64, ndmin=2)
        n, p = self.W.shape
        self.b = np.zeros(n) if self.b is None else np.array(self.b, dtype=np.float64)
        self.c = np.zeros(p) if self.c is None else np.array(self.c, dtype=np.float64)
        if self.b.shape != (n,) or self.c.shape != (p,):
            raise ValueError("bias shapes must match W")
        if not (np.all(np.isfinite(self.W)) and np.isfinite(self.beta) and self.beta > 0):
            raise ValueError("RBM parameters must be finite with beta > 0")

    @property
    def n_visible(self) -> int:
        return self.W.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "GaussBernRBM":
        return GaussBernRBM(self.W.copy(), self.b.copy(), self.c.copy(), self.beta)

    def hamiltonian(self, s, lam):
        s = np.asarray(s, dtype=np.float64)
        lam = np.asarray(lam, dtype=np.float64)
        return (
            0.5 * np.sum((lam - self.c) ** 2, axis=-1)
            - s @ self.b
            - np.einsum("...i,ij,...j->...", s, self.W, lam)
        )


def mean_hidden(rbm: GaussBernRBM, s) -> np.ndarray:
    """Conditional mean of the hidden layer, ``W^T s + c``."""
    return np.asarray(s, dtype=np.float64) @ rbm.W + rbm.c


def sample_hidden(rbm: GaussBernRBM, s, rng: np.random.Generator) -> np.ndarray:
    """Draw ``lam ~ Normal(W^T s + c, 1/beta)`` independently per unit."""
    mu = mean_hidden(rbm, s)
    return mu + rng.standard_normal(mu.shape) / np.sqrt(rbm.beta)


def visible_prob(rbm: GaussBernRBM, lam) -> np.ndarray:
    """``P(s_i = +1 | lam) = 1 / (1 + exp(-2 beta x_i))``, ``x = W lam + b``."""
    x = np.asarray(lam, dtype=np.float64) @ rbm.W.T + rbm.b
    return 0.5 * (1.0 + np.tanh(rbm.beta * x))


def sample_visible(rbm: GaussBernRBM, lam, rng: np.random.Generator) -> np.ndarray:
    prob = visible_prob(rbm, lam)
    return np.where(rng.random(prob.shape) < prob, 1.0, -1.0)


def gibbs_chain(rbm: GaussBernRBM, s, steps: int, rng: np.random.Generator, mean_field_hidden: bool = False):
    """Run ``steps`` full s -> lam -> s sweeps and return ``(s_K, lam_K)``.

    ``lam_K`` is drawn from ``p(lam | s_K)`` (or set to its mean when
    ``mean_field_hidden``).
    """
    s = np.asarray(s, dtype=np.float64)
    for _ in range(steps):
        s = sample_visible(rbm, sample_hidden(rbm, s, rng), rng)
    lam = mean_hidden(rbm, s) if mean_field_hidden else sample_hidden(rbm, s, rng)
    return s, lam


def cd_k_gradient(
    rbm: GaussBernRBM,
    batch,
    K: int,
    rng: np.random.Generator,
    mean_field_hidden: bool = False,
    chain_start=None,
):
    """Contrastive-divergence estimate of the weight gradient.

    ``<s_i (W^T s + c)_mu>_batch - <s_i^(K) lam_mu^(K)>`` where the negative
    phase runs K block-Gibbs steps from each data sample (or from
    ``chain_start`` for persistent chains).  No ``beta`` prefactor: it is
    absorbed in the learning rate.  Returns ``(dW, s_K)``.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    m = len(batch)
    positive = batch.T @ mean_hidden(rbm, batch) / m
    start = batch if chain_start is None else chain_start
    s_k, lam_k = gibbs_chain(rbm, start, K, rng, mean_field_hidden)
    negative = s_k.T @ lam_k / len(s_k)
    return positive - negative, s_k


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 100
    cd_steps: int = 20
    epochs: int = 1
    seed: int = 0
    beta: float | None = None  # overrides rbm.beta when set
    train_biases: bool = False
    persistent: bool = False
    mean_field_hidden: bool = False
    lr_schedule: Callable[[int], float] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.cd_steps < 1 or self.epochs < 0:
            raise ValueError(f"invalid training config {self}")

    def as_metadata(self) -> dict:
        d = asdict(self)
        d.pop("lr_schedule")
        return d


def train(rbm: GaussBernRBM, data, config: TrainConfig, callbacks=()):
    """Mini-batch CD-k gradient ascent on the weights.

    Every epoch reshuffles the data and sweeps it in mini-batches, applying
    ``W += lr * dW``.  Biases stay frozen unless ``config.train_biases``.
    Each callback is called as ``cb(epoch, rbm, metrics)`` after every epoch
    (and once with ``epoch=0`` before training); returned dicts are merged
    into the epoch's metrics.  Returns ``(trained_rbm, log)`` where ``log``
    is a list of per-epoch metric dicts.
    """
    model = rbm.copy()
    if config.beta is not None:
        model.beta = float(config.beta)
    samples = data.samples if hasattr(data, "samples") else np.asarray(data)
    samples = np.asarray(samples, dtype=np.float64)
    m = len(samples)
    history = []

    def _emit(epoch, metrics):
        for cb in callbacks:
            extra = cb(epoch, model, metrics)
            if extra:
                metrics.update(extra)
        history.append(metrics)

    _emit(0, {"epoch": 0, "weight_norm": float(np.linalg.norm(model.W))})
    root = np.random.SeedSequence(config.seed)
    epoch_seeds = root.spawn(config.epochs)
    persistent_state = None
    for epoch in range(1, config.epochs + 1):
        lr = config.lr_schedule(epoch) if config.lr_schedule else config.lr
        shuffle_seed, batch_root = epoch_seeds[epoch - 1].spawn(2)
        order = np.random.default_rng(shuffle_seed).permutation(m)
        n_batches = -(-m // config.batch_size)
        batch_seeds = batch_root.spawn(n_batches)
        w_start = model.W.copy()
        for j in range(n_batches):
            idx = order[j * config.batch_size : (j + 1) * config.batch_size]
            batch = samples[idx]
            rng = np.random.default_rng(batch_seeds[j])
            start = None
            if config.persistent:
                if persistent_state is None or len(persistent_state) != len(batch):
                    persistent_state = batch.copy()
                start = persistent_state
            dW, s_k = cd_k_gradient(model, batch, config.cd_steps, rng, config.mean_field_hidden, start)
            if config.persistent:
                persistent_state = s_k
            if config.train_biases:
                lam_pos = mean_hidden(model, batch)
                lam_k = mean_hidden(model, s_k)
                model.b += lr * (batch.mean(axis=0) - s_k.mean(axis=0))
                model.c += lr * (lam_pos.mean(axis=0) - lam_k.mean(axis=0))
            model.W += lr * dW
        if not np.all(np.isfinite(model.W)):
            raise FloatingPointError(f"weights diverged in epoch {epoch}")
        step = float(np.linalg.norm(model.W - w_start))
        log.debug("epoch %d: |dW| = %.4g", epoch, step)
        _emit(epoch, {"epoch": epoch, "weight_norm": float(np.linalg.norm(model.W)), "weight_step": step})
    return model, history


def generate_samples(rbm: GaussBernRBM, s0, steps: int, rng: np.random.Generator) -> np.ndarray:
    """Final visible state of a ``steps``-long block-Gibbs chain from ``s0``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    s, _ = gibbs_chain(rbm, s0, steps, rng)
    return s
