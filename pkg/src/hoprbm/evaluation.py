"""Log-partition and log-likelihood estimation for binary-gaussian RBMs.

Three routes to ``ln Z``: exact enumeration over the spins (hidden units
integrated analytically), adaptive quadrature over the hidden units after
summing out the spins, and annealed importance sampling on that same
continuous representation.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.special import logsumexp

from .errors import DegenerateSchedule, TooLarge
from .forward_map import log_cosh
from .rbm import GaussBernRBM

log = logging.getLogger(__name__)

MAX_ENUM_VISIBLE = 20
MAX_QUAD_HIDDEN = 3


@dataclass
class LnZEstimate:
    value: float
    method: str  # enumeration | quadrature | ais
    chains: int = 0
    steps: int = 0
    stderr: float = 0.0
    log_weights: np.ndarray | None = field(default=None, repr=False)


# --------------------------------------------------------------------------
# enumeration


def all_spin_states(n: int, chunk: int = 1 << 15):
    """Yield every state of ``n`` ±1 spins, in binary counting order, by chunks."""
    total = 1 << n
    bits = np.arange(n - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk), dtype=np.int64)
        yield np.where((idx[:, None] >> bits) & 1, 1.0, -1.0)


def logsumexp_chunks(fn, chunks) -> float:
    parts = [logsumexp(fn(s)) for s in chunks]
    return float(logsumexp(parts))


def log_unnormalized_visible(rbm: GaussBernRBM, s) -> np.ndarray:
    """``ln sum_lam``-marginal of the spins up to ``-ln Z``:
    ``beta (b.s + |c + W^T s|^2 / 2 - |c|^2 / 2)``."""
    s = np.asarray(s, dtype=np.float64)
    h = s @ rbm.W + rbm.c
    return rbm.beta * (s @ rbm.b + 0.5 * np.sum(h * h, axis=-1) - 0.5 * rbm.c @ rbm.c)


def lnZ_enumerate(rbm: GaussBernRBM, max_visible: int = MAX_ENUM_VISIBLE) -> LnZEstimate:
    n = rbm.n_visible
    if n > max_visible:
        raise TooLarge(f"N={n} exceeds enumeration limit {max_visible}")
    value = logsumexp_chunks(lambda s: log_unnormalized_visible(rbm, s), all_spin_states(n))
    return LnZEstimate(value, "enumeration")


def visible_log_probs(rbm: GaussBernRBM) -> np.ndarray:
    """Exact ``ln p(s)`` for all ``2^N`` states (binary counting order)."""
    lnz = lnZ_enumerate(rbm).value
    return np.concatenate([log_unnormalized_visible(rbm, s) for s in all_spin_states(rbm.n_visible)]) - lnz


# --------------------------------------------------------------------------
# quadrature


def _log_target(rbm: GaussBernRBM, lam: np.ndarray) -> np.ndarray:
    """Spin-summed log-integrand (unnormalised density of the hidden units)."""
    lam = np.atleast_2d(lam)
    d = lam - rbm.c
    x = lam @ rbm.W.T + rbm.b
    return -0.5 * rbm.beta * np.sum(d * d, axis=1) + np.sum(log_cosh(rbm.beta * x), axis=1)


def _find_modes(log_f, lo, hi, p, grid_n):
    """Approximate local maxima of ``log_f`` on a box: coarse grid + polish."""
    axes = [np.linspace(lo[d], hi[d], grid_n) for d in range(p)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, p)
    vals = log_f(mesh)
    top = mesh[np.argsort(vals)[::-1][: min(12, len(vals))]]
    modes = []
    for x0 in top:
        res = optimize.minimize(lambda z: -float(log_f(z[None, :])[0]), x0, method="Nelder-Mead",
                                options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 4000})
        if all(np.max(np.abs(res.x - m[1])) > 1e-3 for m in modes):
            modes.append((float(-res.fun), res.x))
    return modes


def log_integrate(log_f, center, radius, epsrel: float = 1e-11) -> float:
    """``ln int exp(log_f(lam)) dlam`` over the cube ``center +- radius``.

    Adaptive Gauss-Kronrod cubature after scaling by the maximum, which a
    grid search plus local polish locates.
    ``log_f`` takes an ``(m, p)`` batch.
    """
    center = np.atleast_1d(np.asarray(center, dtype=np.float64))
    p = len(center)
    if p > MAX_QUAD_HIDDEN:
        raise TooLarge(f"quadrature supports p <= {MAX_QUAD_HIDDEN}, got {p}")
    lo, hi = center - radius, center + radius
    grid_n = {1: 801, 2: 121, 3: 41}[p]
    modes = _find_modes(log_f, lo, hi, p, grid_n)
    fmax = max(m[0] for m in modes)

    def integrand(lam):
        return np.exp(log_f(lam) - fmax)

    res = integrate.cubature(integrand, lo, hi, rule="gk21", rtol=epsrel, atol=0.0, max_subdivisions=20000)
    if res.status != "converged":
        log.warning("quadrature did not reach rtol=%g (error estimate %.3g)", epsrel, res.error / res.estimate)
    val = res.estimate
    return fmax + float(np.log(val))


def lnZ_quadrature(rbm: GaussBernRBM, epsrel: float = 1e-11) -> LnZEstimate:
    p, n = rbm.n_hidden, rbm.n_visible
    if p > MAX_QUAD_HIDDEN:
        raise TooLarge(f"quadrature supports p <= {MAX_QUAD_HIDDEN}, got {p}")
    radius = np.sum(np.linalg.norm(rbm.W, axis=1)) + 12.0 / np.sqrt(rbm.beta)
    log_i = log_integrate(lambda lam: _log_target(rbm, lam), rbm.c, radius, epsrel)
    value = n * np.log(2.0) - 0.5 * p * np.log(2.0 * np.pi / rbm.beta) + log_i
    return LnZEstimate(float(value), "quadrature")


# --------------------------------------------------------------------------
# annealed importance sampling


def geometric_schedule(n_levels: int, t_min: float = 1e-3) -> np.ndarray:
    """``0`` followed by ``n_levels`` geometrically spaced exponents ending at 1."""
    if n_levels < 1:
        raise DegenerateSchedule("need at least one annealing level")
    return np.concatenate([[0.0], np.geomspace(t_min, 1.0, n_levels)])


def linear_schedule(n_levels: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_levels + 1)


@dataclass
class AISConfig:
    n_chains: int = 100
    n_steps: int = 1000
    schedule: np.ndarray | None = None  # overrides n_steps when given
    seed: int = 0
    mh_steps: int = 5
    target_accept: float = 0.5
    pilot_chains: int = 64
    t_min: float = 1e-3

    def levels(self) -> np.ndarray:
        sched = geometric_schedule(self.n_steps, self.t_min) if self.schedule is None else np.asarray(self.schedule, dtype=np.float64)
        if len(sched) < 2 or sched[0] != 0.0 or sched[-1] != 1.0 or np.any(np.diff(sched) <= 0):
            raise DegenerateSchedule("schedule must rise strictly from 0 to 1")
        return sched


FIG2_AIS = AISConfig(n_chains=500, n_steps=1000)
FIG4_AIS = AISConfig(n_chains=100, n_steps=1000)


def _log_proposal(lam):
    p = lam.shape[1]
    return -0.5 * np.sum(lam * lam, axis=1) - 0.5 * p * np.log(2.0 * np.pi)


def _ais_pass(rbm, sched, n_chains, mh_steps, rng, steps=None, target_accept=0.5):
    """One AIS sweep; adapts per-level step sizes when ``steps`` is None."""
    p, n = rbm.n_hidden, rbm.n_visible
    const = n * np.log(2.0) - 0.5 * p * np.log(2.0 * np.pi / rbm.beta)
    adapt = steps is None
    if adapt:
        steps = np.empty(len(sched))
        step = 1.0
    lam = rng.standard_normal((n_chains, p))
    f0 = _log_proposal(lam)
    f1 = _log_target(rbm, lam) + const
    logw = np.zeros(n_chains)
    for k in range(1, len(sched)):
        t = sched[k]
        logw += (t - sched[k - 1]) * (f1 - f0)
        if not adapt:
            step = steps[k]
        accepted = 0
        for _ in range(mh_steps):
            prop = lam + step * rng.standard_normal(lam.shape)
            g0 = _log_proposal(prop)
            g1 = _log_target(rbm, prop) + const
            log_ratio = (1.0 - t) * (g0 - f0) + t * (g1 - f1)
            acc = np.log(rng.random(n_chains)) < log_ratio
            lam[acc], f0[acc], f1[acc] = prop[acc], g0[acc], g1[acc]
            accepted += int(acc.sum())
        if adapt:
            steps[k] = step
            rate = accepted / (mh_steps * n_chains)
            step *= np.exp(rate - target_accept)
    return logw, steps


def lnZ_ais(rbm: GaussBernRBM, cfg: AISConfig | None = None) -> LnZEstimate:
    """AIS from ``N(0, I)`` to the spin-summed hidden-unit density.

    Intermediate densities are ``proposal^(1-t) * target^t``; each level
    applies ``cfg.mh_steps`` gaussian random-walk Metropolis moves whose
    per-level step sizes come from a separate pilot run tuned towards
    ``cfg.target_accept``.  The estimate is the log-mean of the chain
    weights; ``stderr`` is the delta-method standard error of that log.
    """
    cfg = cfg or AISConfig()
    sched = cfg.levels()
    pilot_seed, main_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    _, steps = _ais_pass(rbm, sched, min(cfg.pilot_chains, cfg.n_chains), cfg.mh_steps,
                         np.random.default_rng(pilot_seed), target_accept=cfg.target_accept)
    logw, _ = _ais_pass(rbm, sched, cfg.n_chains, cfg.mh_steps, np.random.default_rng(main_seed), steps)
    value = float(logsumexp(logw) - np.log(len(logw)))
    return LnZEstimate(value, "ais", chains=cfg.n_chains, steps=len(sched) - 1,
                       stderr=ais_stderr(logw), log_weights=logw)


def ais_stderr(logw: np.ndarray) -> float:
    """Standard error of ``ln mean(exp(logw))`` by the delta method."""
    n = len(logw)
    if n < 2:
        return 0.0
    w = np.exp(logw - logw.max())
    mean = w.mean()
    return float(w.std(ddof=1) / (np.sqrt(n) * mean))


# --------------------------------------------------------------------------
# likelihood


def mean_log_unnormalized(rbm: GaussBernRBM, samples, chunk: int = 10000) -> float:
    samples = samples.samples if hasattr(samples, "samples") else samples
    total, count = 0.0, 0
    for start in range(0, len(samples), chunk):
        block = np.asarray(samples[start : start + chunk], dtype=np.float64)
        total += float(np.sum(log_unnormalized_visible(rbm, block)))
        count += len(block)
    if count == 0:
        raise ValueError("dataset is empty")
    return total / count


def log_likelihood(rbm: GaussBernRBM, dataset, lnZ) -> float:
    """Mean log-probability per sample, in nats, given an estimate of ``ln Z``."""
    lnz = lnZ.value if isinstance(lnZ, LnZEstimate) else float(lnZ)
    return mean_log_unnormalized(rbm, dataset) - lnz


def estimate_lnZ(rbm: GaussBernRBM, method: str = "auto", ais: AISConfig | None = None) -> LnZEstimate:
    if method == "auto":
        method = "enumeration" if rbm.n_visible <= 16 else "ais"
    if method == "enumeration":
        return lnZ_enumerate(rbm)
    if method == "quadrature":
        return lnZ_quadrature(rbm)
    return lnZ_ais(rbm, ais)


def exact_model_correlation(rbm: GaussBernRBM) -> np.ndarray:
    """``<s_i lam_mu>`` under the model, by enumeration (hidden mean is exact)."""
    logp = visible_log_probs(rbm)
    out = np.zeros_like(rbm.W)
    offset = 0
    for s in all_spin_states(rbm.n_visible):
        pr = np.exp(logp[offset : offset + len(s)])
        out += (s * pr[:, None]).T @ (s @ rbm.W + rbm.c)
        offset += len(s)
    return out


def binary_states(n: int) -> np.ndarray:
    return np.array(list(itertools.product([-1.0, 1.0], repeat=n)))
