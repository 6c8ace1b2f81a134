"""Projection-rule and Hebbian Hopfield networks and their dynamics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoRetrieval
from .patterns import PatternMatrix, check_rank


@dataclass
class HopfieldNetwork:
    """Couplings ``J`` (symmetric), visible field ``b`` and inverse temperature.

    ``factor`` optionally holds ``U`` with ``J = U U^T`` (true for projection
    nets); the batched dynamics use it to compute local fields in O(p).
    """

    J: np.ndarray
    b: np.ndarray | None = None
    beta: float = 1.0
    factor: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.J = np.asarray(self.J, dtype=np.float64)
        n = self.J.shape[0]
        self.b = np.zeros(n) if self.b is None else np.asarray(self.b, dtype=np.float64)

    @property
    def n(self) -> int:
        return self.J.shape[0]


def _xi(xi) -> np.ndarray:
    return xi.xi if isinstance(xi, PatternMatrix) else np.asarray(xi, dtype=np.float64)


def projection_couplings(xi, beta: float = 1.0, b=None, zero_diagonal: bool = False) -> HopfieldNetwork:
    """``J = xi (xi^T xi)^{-1} xi^T``; stores up to N independent patterns.

    Self-couplings are kept unless ``zero_diagonal``.
    """
    x = _xi(xi)
    check_rank(x)
    # J = U U^T for the orthonormal basis U of span(xi); cheaper and exactly symmetric
    u, _, _ = np.linalg.svd(x, full_matrices=False)
    J = u @ u.T
    J = 0.5 * (J + J.T)
    if zero_diagonal:
        np.fill_diagonal(J, 0.0)
        u = None
    return HopfieldNetwork(J, b, beta, factor=u)


def hebbian_couplings(xi, beta: float = 1.0, b=None, zero_diagonal: bool = False) -> HopfieldNetwork:
    """``J = xi xi^T / N``."""
    x = _xi(xi)
    n = x.shape[0]
    J = x @ x.T / n
    factor = x / np.sqrt(n)
    if zero_diagonal:
        np.fill_diagonal(J, 0.0)
        factor = None
    return HopfieldNetwork(J, b, beta, factor=factor)


def energy(net: HopfieldNetwork, s) -> np.ndarray | float:
    """``-1/2 s^T J s - b^T s``; ``s`` may be one state or a batch of rows."""
    s = np.asarray(s, dtype=np.float64)
    e = -0.5 * np.einsum("...i,ij,...j->...", s, net.J, s) - s @ net.b
    return float(e) if e.ndim == 0 else e


@dataclass
class OverlapState:
    m: np.ndarray  # overlaps xi^T s / N
    a: np.ndarray  # projections (xi^T xi)^{-1} xi^T s
    A: np.ndarray  # overlap matrix xi^T xi


def overlaps(xi, s) -> OverlapState:
    x = _xi(xi)
    check_rank(x)
    s = np.asarray(s, dtype=np.float64)
    A = x.T @ x
    m = x.T @ s / x.shape[0]
    a = np.linalg.solve(A, x.T @ s)
    return OverlapState(m, a, A)


def update_deterministic(net: HopfieldNetwork, s) -> np.ndarray:
    """One synchronous step ``s' = sgn(J s + b)``; a zero field keeps the spin.

    Accepts a single state or a batch of row states.
    """
    s = np.asarray(s, dtype=np.float64)
    h = s @ net.J + net.b  # J symmetric
    return np.where(h > 0, 1.0, np.where(h < 0, -1.0, s))


def update_stochastic(net: HopfieldNetwork, s, rng: np.random.Generator, scheme: str = "glauber") -> np.ndarray:
    """One sweep of single-site updates in a uniformly random order.

    Glauber: spin i becomes +1 with probability ``1/(1 + exp(-2 beta h_i))``
    where ``h_i`` is the field from the *other* spins plus ``b_i`` (the
    self-coupling only shifts the energy by a constant).  ``scheme="metropolis"``
    flips with probability ``min(1, exp(-beta dH))`` instead.
    """
    s = np.array(s, dtype=np.float64)
    beta = net.beta
    J, b = net.J, net.b
    order = rng.permutation(net.n)
    u = rng.random(net.n)
    for t, i in enumerate(order):
        h = J[i] @ s - J[i, i] * s[i] + b[i]
        if scheme == "glauber":
            s[i] = 1.0 if u[t] < _sigmoid(2.0 * beta * h) else -1.0
        elif scheme == "metropolis":
            dH = 2.0 * s[i] * h
            if dH <= 0 or u[t] < np.exp(-beta * dH):
                s[i] = -s[i]
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
    return s


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def run_to_fixed_point(net: HopfieldNetwork, s, max_sweeps: int = 100):
    """Iterate synchronous updates on a batch of states.

    Returns ``(states, status)`` where ``status`` is 1 for fixed points,
    2 for period-2 cycles and 0 when ``max_sweeps`` ran out.
    """
    cur = np.atleast_2d(np.asarray(s, dtype=np.float64)).copy()
    prev = np.full_like(cur, np.nan)
    status = np.zeros(len(cur), dtype=np.int8)
    live = np.ones(len(cur), dtype=bool)
    for _ in range(max_sweeps):
        if not live.any():
            break
        idx = np.flatnonzero(live)
        nxt = update_deterministic(net, cur[idx])
        fixed = np.all(nxt == cur[idx], axis=1)
        cycle = ~fixed & np.all(nxt == prev[idx], axis=1)
        status[idx[fixed]] = 1
        status[idx[cycle]] = 2
        prev[idx] = cur[idx]
        cur[idx] = nxt
        live[idx[fixed | cycle]] = False
    return cur, status


# --------------------------------------------------------------------------
# retrieval protocol


@dataclass
class RetrievalConfig:
    beta: float = 2.0
    ensemble: int = 20
    threshold: float = 0.7
    max_sweeps: int = 50
    max_fixed_point_sweeps: int = 100
    scheme: str = "glauber"


@dataclass
class RetrievalResult:
    label: int  # -1 when nothing was retrieved
    histogram: np.ndarray  # weight per class, sums to <= 1
    via_fixed_point: bool


def _match_pattern(states: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Column index of a stored pattern equal to ±state, else -1."""
    n = xi.shape[0]
    ov = states @ xi
    hit = np.abs(ov) == n
    return np.where(hit.any(axis=1), np.argmax(hit, axis=1), -1)


def _glauber_batch(states, U, diag, b, beta, rng, scheme):
    """One random-order sweep for every row of ``states`` in lock-step.

    Fields come from the low-rank factor, ``J = U U^T``.
    """
    m, n = states.shape
    q = states @ U
    rows = np.arange(m)
    order = np.argsort(rng.random((m, n)), axis=1)
    u = rng.random((m, n))
    for t in range(n):
        i = order[:, t]
        si = states[rows, i]
        h = np.einsum("ij,ij->i", U[i], q) - diag[i] * si + b[i]
        if scheme == "glauber":
            new = np.where(u[:, t] < _sigmoid(2.0 * beta * h), 1.0, -1.0)
        else:
            dH = 2.0 * si * h
            flip = (dH <= 0) | (u[:, t] < np.exp(-beta * np.maximum(dH, 0.0)))
            new = np.where(flip, -si, si)
        delta = new - si
        changed = delta != 0
        if changed.any():
            q[changed] += delta[changed, None] * U[i[changed]]
            states[rows[changed], i[changed]] = new[changed]
    return states


def retrieve_batch(
    net: HopfieldNetwork,
    patterns: PatternMatrix,
    s0,
    config: RetrievalConfig | None = None,
    seed: int = 0,
    chunk: int = 4000,
) -> list[RetrievalResult]:
    """Run the two-stage retrieval protocol on each row of ``s0``.

    Stage 1 iterates synchronous updates; a fixed point equal to a stored
    pattern (or its negation) retrieves that pattern's class with weight 1.
    Otherwise ``config.ensemble`` stochastic trajectories start from the
    stage-1 state; each stops once some overlap ``s . xi^mu / N`` exceeds the
    threshold and adds ``1/ensemble`` to that pattern's class.
    """
    cfg = config or RetrievalConfig()
    xi = patterns.xi
    n_classes = int(patterns.class_of_column.max()) + 1
    s0 = np.atleast_2d(np.asarray(s0, dtype=np.float64))
    fixed, _ = run_to_fixed_point(net, s0, cfg.max_fixed_point_sweeps)
    match = _match_pattern(fixed, xi)
    hist = np.zeros((len(s0), n_classes))
    done = match >= 0
    hist[done, patterns.class_of_column[match[done]]] = 1.0

    U = net.factor
    if U is None:
        w, v = np.linalg.eigh(net.J)
        keep = w > 1e-10 * max(w.max(), 1e-300)
        if np.any(w < -1e-10 * abs(w).max()):
            raise ValueError("stochastic retrieval needs positive semidefinite couplings")
        U = v[:, keep] * np.sqrt(w[keep])
    diag = np.einsum("ij,ij->i", U, U)

    pending = np.flatnonzero(~done)
    streams = np.random.SeedSequence(seed).spawn(max(1, -(-len(pending) * cfg.ensemble // chunk)))
    reps = cfg.ensemble
    per_chunk = max(1, chunk // reps)
    for c, start in enumerate(range(0, len(pending), per_chunk)):
        rng = np.random.default_rng(streams[c])
        idx = pending[start : start + per_chunk]
        states = np.repeat(fixed[idx], reps, axis=0)
        owner = np.repeat(np.arange(len(idx)), reps)
        active = np.ones(len(states), dtype=bool)
        for _ in range(cfg.max_sweeps):
            act = np.flatnonzero(active)
            if len(act) == 0:
                break
            states[act] = _glauber_batch(states[act], U, diag, net.b, cfg.beta, rng, cfg.scheme)
            ov = states[act] @ xi / xi.shape[0]
            best = np.argmax(ov, axis=1)
            hit = ov[np.arange(len(act)), best] > cfg.threshold
            for j, col in zip(act[hit], best[hit]):
                hist[idx[owner[j]], patterns.class_of_column[col]] += 1.0 / reps
            active[act[hit]] = False

    out = []
    for r in range(len(s0)):
        h = hist[r]
        label = int(np.argmax(h)) if h.sum() > 0 else -1
        out.append(RetrievalResult(label, h, bool(done[r])))
    return out


def retrieve(net, patterns: PatternMatrix, s0, config: RetrievalConfig | None = None, seed: int = 0) -> RetrievalResult:
    """Single-state retrieval; raises :class:`NoRetrieval` if no trajectory lands."""
    res = retrieve_batch(net, patterns, s0, config, seed)[0]
    if res.label < 0:
        raise NoRetrieval("no trajectory reached a stored pattern within max_sweeps")
    return res
