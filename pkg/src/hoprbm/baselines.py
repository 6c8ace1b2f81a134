"""Weight initializations compared against the Hopfield (QR) init."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankDeficient
from .forward_map import qr_orthogonalize
from .patterns import PatternMatrix, class_mean_patterns, class_subpatterns, subpattern_clusters

RANDOM_STD = 0.01
KINDS = ("hopfield_qr", "hebbian", "pca", "random")
ALIASES = {"hopfield": "hopfield_qr", "qr": "hopfield_qr"}


@dataclass
class InitSpec:
    kind: str
    k: int = 1  # sub-patterns per class (p = 10 k for a full-data model)
    seed: int = 0

    def __post_init__(self):
        self.kind = ALIASES.get(self.kind, self.kind)
        if self.kind not in KINDS:
            raise ValueError(f"unknown init kind {self.kind!r}")
        if self.k < 1:
            raise ValueError("k must be positive")


def pca_init(data, p: int) -> np.ndarray:
    """Top ``p`` principal directions of the (mean-centred) ±1 samples.

    Each column is flipped so that its largest-magnitude entry is positive.
    """
    x = np.asarray(data.samples if hasattr(data, "samples") else data, dtype=np.float64)
    m, n = x.shape
    if p > n or m < p:
        raise RankDeficient(f"cannot take {p} components from {m} samples of dimension {n}")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / max(m - 1, 1)
    w, v = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1][:p]
    comps = v[:, order]
    if w[order[-1]] <= 1e-12 * max(w[order[0]], 1e-300) and p > 1:
        raise RankDeficient("data spans fewer than p directions")
    pivot = np.argmax(np.abs(comps), axis=0)
    signs = np.sign(comps[pivot, np.arange(p)])
    return comps * signs


def hebbian_init(xi) -> np.ndarray:
    """``W = xi / sqrt(N)``."""
    x = xi.xi if isinstance(xi, PatternMatrix) else np.asarray(xi, dtype=np.float64)
    return x / np.sqrt(x.shape[0])


def random_init(n: int, p: int, seed: int = 0, std: float = RANDOM_STD) -> np.ndarray:
    return np.random.default_rng(seed).normal(0.0, std, size=(n, p))


def hopfield_init(xi):
    """QR-orthogonalized patterns; returns ``(W, R)``."""
    fac = qr_orthogonalize(xi)
    return fac.U, fac.R


def model_patterns(data, k: int, n_classes: int = 10) -> PatternMatrix:
    return class_mean_patterns(data, n_classes) if k == 1 else subpattern_clusters(data, k, n_classes)


def make_init(spec: InitSpec, data, n_classes: int = 10):
    """Initial weights for a model of all classes with ``p = n_classes * k``.

    Returns ``(W, extras)``; ``extras`` may hold ``xi`` and ``R``.
    """
    p = n_classes * spec.k
    if spec.kind == "random":
        return random_init(data.n_visible, p, spec.seed), {}
    if spec.kind == "pca":
        return pca_init(data, p), {}
    pm = model_patterns(data, spec.k, n_classes)
    labels = pm.class_of_column.tolist()
    if spec.kind == "hebbian":
        return hebbian_init(pm), {"xi": pm.xi, "class_of_column": labels}
    W, R = hopfield_init(pm)
    return W, {"xi": pm.xi, "R": R, "class_of_column": labels}


def make_expert_init(spec: InitSpec, class_samples) -> np.ndarray:
    """``N x k`` initial weights of one class expert."""
    x = np.asarray(class_samples, dtype=np.float64)
    if spec.kind == "random":
        return random_init(x.shape[1], spec.k, spec.seed)
    if spec.kind == "pca":
        return pca_init(x, spec.k)
    xi = class_subpatterns(x, spec.k)
    if spec.kind == "hebbian":
        return hebbian_init(xi)
    return hopfield_init(xi)[0]
