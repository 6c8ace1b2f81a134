"""Pattern matrices from labelled ±1 data: class means and Ward sub-patterns."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyClass, RankDeficient, TooFewSamples

RANK_RTOL = 1e-8


def sgn(x) -> np.ndarray:
    """Elementwise sign with ``sgn(0) = +1``; returns float ±1."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


@dataclass
class PatternMatrix:
    """Columns of ``xi`` are ±1 patterns; ``class_of_column[j]`` labels column j."""

    xi: np.ndarray
    class_of_column: np.ndarray

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=np.float64)
        if self.xi.ndim == 1:
            self.xi = self.xi[:, None]
        self.class_of_column = np.asarray(self.class_of_column, dtype=np.int64)
        if len(self.class_of_column) != self.xi.shape[1]:
            raise ValueError("class_of_column must have one entry per pattern")

    @property
    def n(self) -> int:
        return self.xi.shape[0]

    @property
    def p(self) -> int:
        return self.xi.shape[1]


def check_rank(xi: np.ndarray, rtol: float = RANK_RTOL) -> None:
    """Raise :class:`RankDeficient` unless ``xi`` has full column rank."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape[1] > xi.shape[0]:
        raise RankDeficient(f"p={xi.shape[1]} exceeds N={xi.shape[0]}")
    sv = np.linalg.svd(xi, compute_uv=False)
    if sv[-1] < rtol * sv[0]:
        raise RankDeficient(f"smallest singular value {sv[-1]:.3e} below {rtol:g} x largest")


def class_mean_patterns(data, n_classes: int = 10) -> PatternMatrix:
    """One pattern per class: the sign of the class-mean sample."""
    cols = []
    for c in range(n_classes):
        members = data.of_class(c)
        if len(members) == 0:
            raise EmptyClass(f"class {c} has no samples")
        cols.append(sgn(members.mean(axis=0)))
    return PatternMatrix(np.stack(cols, axis=1), np.arange(n_classes))


# --------------------------------------------------------------------------
# Ward linkage


def ward_linkage(points: np.ndarray) -> np.ndarray:
    """Agglomerative Ward clustering with Euclidean distance.

    Nearest-neighbour-chain search over a dense matrix of squared Ward
    dissimilarities, updated with the Lance-Williams recurrence.  Returns a
    scipy-style linkage matrix ``Z`` (rows ``[id_a, id_b, height, size]``,
    sorted by height) where ``height`` is the Ward distance, so that
    ``height**2 / 2`` is the increase in within-cluster sum of squares.
    """
    x = np.asarray(points, dtype=np.float64)
    n = len(x)
    if n < 2:
        return np.zeros((0, 4))
    sq = np.einsum("ij,ij->i", x, x)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, np.inf)
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    formed_at = np.zeros(n)

    merges = []  # (slot_a, slot_b, dissimilarity), slot_a keeps the merged cluster
    chain: list[int] = []
    for _ in range(n - 1):
        if not chain:
            chain.append(int(np.flatnonzero(active)[0]))
        while True:
            a = chain[-1]
            row = d[a]
            b = int(np.argmin(row))
            if len(chain) > 1 and row[chain[-2]] <= row[b]:
                b = chain[-2]
            if len(chain) > 1 and b == chain[-2]:
                break
            chain.append(b)
        a, b = chain.pop(), chain.pop()
        if a > b:
            a, b = b, a
        # rounding can nudge a merge below its children's heights; clamp it
        dab = max(d[a, b], formed_at[a], formed_at[b])
        formed_at[a] = dab
        merges.append((a, b, dab))
        na, nb = size[a], size[b]
        nk = size
        upd = ((na + nk) * d[a] + (nb + nk) * d[b] - nk * d[a, b]) / (na + nb + nk)
        upd[~active] = np.inf
        upd[a] = np.inf
        upd[b] = np.inf
        d[a, :] = upd
        d[:, a] = upd
        d[b, :] = np.inf
        d[:, b] = np.inf
        size[a] = na + nb
        active[b] = False

    return _relabel(merges, n)


def _relabel(merges, n: int) -> np.ndarray:
    """Sort NN-chain merges by height and replay them with union-find ids."""
    order = sorted(range(len(merges)), key=lambda i: (merges[i][2], i))
    parent = list(range(2 * n - 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    # slot -> a representative leaf; merged clusters stay in slot a
    leaf_of_slot = list(range(n))
    sizes = [1] * (2 * n - 1)
    z = np.zeros((n - 1, 4))
    for row, idx in enumerate(order):
        a, b, dab = merges[idx]
        ca, cb = find(leaf_of_slot[a]), find(leaf_of_slot[b])
        new = n + row
        parent[ca] = new
        parent[cb] = new
        sizes[new] = sizes[ca] + sizes[cb]
        z[row] = (min(ca, cb), max(ca, cb), np.sqrt(max(dab, 0.0)), sizes[new])
    return z


def cut_linkage(z: np.ndarray, k: int) -> np.ndarray:
    """Flat labels (0..k-1) from the first ``n - k`` merges of ``z``.

    Labels are ordered by descending cluster size, ties by the lowest
    contained sample index.
    """
    n = len(z) + 1
    parent = list(range(2 * n - 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for row in range(n - k):
        a, b = int(z[row, 0]), int(z[row, 1])
        parent[find(a)] = n + row
        parent[find(b)] = n + row
    roots = np.array([find(i) for i in range(n)])
    groups: dict[int, list[int]] = {}
    for i, r in enumerate(roots):
        groups.setdefault(int(r), []).append(i)
    ordered = sorted(groups.values(), key=lambda g: (-len(g), g[0]))
    labels = np.empty(n, dtype=np.int64)
    for lab, members in enumerate(ordered):
        labels[members] = lab
    return labels


def class_subpatterns(samples: np.ndarray, k: int) -> np.ndarray:
    """``N x k`` sub-patterns of one class: sign of each Ward cluster mean."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) < k:
        raise TooFewSamples(f"{len(samples)} samples cannot form {k} clusters")
    if k == 1:
        return sgn(samples.mean(axis=0))[:, None]
    labels = cut_linkage(ward_linkage(samples), k)
    return np.stack([sgn(samples[labels == j].mean(axis=0)) for j in range(k)], axis=1)


def subpattern_clusters(data, k: int, n_classes: int = 10, check: bool = True) -> PatternMatrix:
    """``k`` Ward sub-patterns per class, columns grouped by class.

    With ``check`` the resulting matrix must have full column rank; a
    :class:`RankDeficient` error carries the matrix as ``payload``.
    """
    if k < 1:
        raise ValueError("k must be positive")
    cols, owners = [], []
    for c in range(n_classes):
        members = data.of_class(c)
        if len(members) == 0:
            raise EmptyClass(f"class {c} has no samples")
        cols.append(class_subpatterns(members, k))
        owners.extend([c] * k)
    pm = PatternMatrix(np.concatenate(cols, axis=1), np.array(owners))
    if check:
        try:
            check_rank(pm.xi)
        except RankDeficient as exc:
            raise RankDeficient(str(exc), payload=pm) from None
    return pm
