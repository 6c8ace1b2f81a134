"""RBM -> Hopfield direction.

Integrating out the gaussian hidden layer always yields an Ising model with
``J = W W^T``.  Reading that as a projection net needs binary patterns in
the column space of ``W``: we look for ``X`` with ``W X`` close to ±1 by
gradient descent on a tanh-softened binarization error, then rebuild ``J``
from the candidate patterns and check which of them are stable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, NotOrthogonal, RankDeficient, SingularX
from .hopfield import HopfieldNetwork, RetrievalConfig, projection_couplings, retrieve_batch
from .patterns import PatternMatrix, check_rank, sgn
from .rbm import GaussBernRBM

log = logging.getLogger(__name__)

ALPHA = 200.0
GAMMA = 0.05
TOL = 1e-8
MAX_ITERS = 50_000
COND_EVERY = 100
COND_MAX = 1e12
ORTHO_TOL = 1e-6


def integrate_out_hidden(rbm: GaussBernRBM) -> HopfieldNetwork:
    """Ising model on the visible units: ``J = W W^T`` and unchanged ``b``.

    The hidden bias only adds a constant and a field ``W c``; with ``c != 0``
    the field is folded into ``b``.
    """
    W = rbm.W
    J = W @ W.T
    J = 0.5 * (J + J.T)
    b = rbm.b + W @ rbm.c
    return HopfieldNetwork(J, b, rbm.beta, factor=W.copy())


# --------------------------------------------------------------------------
# binarization


@dataclass
class BinarizationSolution:
    X: np.ndarray
    B_p: np.ndarray  # W X
    E: np.ndarray  # B_p - sgn(B_p)
    objective: float  # ||E||_F
    trace: list = field(default_factory=list, repr=False)  # softened objective per iteration
    converged: bool = True
    iterations: int = 0
    grad_norm: float = 0.0

    @property
    def B(self) -> np.ndarray:
        return sgn(self.B_p)


def _solution(W, X, trace, converged, iterations, grad_norm) -> BinarizationSolution:
    B_p = W @ X
    E = B_p - sgn(B_p)
    return BinarizationSolution(X, B_p, E, float(np.linalg.norm(E)), trace, converged, iterations, grad_norm)


def binarization_objective(W, X, alpha: float = ALPHA) -> float:
    """Softened error ``||W X - tanh(alpha W X)||_F^2``."""
    Y = W @ X
    return float(np.sum((Y - np.tanh(alpha * Y)) ** 2))


def binarization_gradient(W, X, alpha: float = ALPHA) -> np.ndarray:
    """``d/dX ||W X - tanh(alpha W X)||_F^2 = 2 W^T (E - alpha E * sech^2(alpha W X))``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    Y = W @ X
    T = np.tanh(alpha * Y)
    E = Y - T
    return 2.0 * W.T @ (E - alpha * E * (1.0 - T * T))


def binarize_descent(
    W,
    X0,
    alpha: float = ALPHA,
    gamma: float = GAMMA,
    tol: float = TOL,
    max_iters: int = MAX_ITERS,
    raise_on_stall: bool = True,
) -> BinarizationSolution:
    """Plain gradient descent ``X <- X - gamma G(X)`` on the softened error.

    Stops once ``||G||_F < tol``.  The condition number of ``X`` is checked
    every ``COND_EVERY`` iterations.  Increases of the objective are logged,
    not prevented.  Hitting ``max_iters`` raises :class:`NoConvergence` with
    the last iterate attached as ``result`` (or returns it flagged
    ``converged=False`` when ``raise_on_stall`` is off).
    """
    W = np.asarray(W, dtype=np.float64)
    X = np.array(X0, dtype=np.float64)
    if X.shape != (W.shape[1], W.shape[1]):
        raise ValueError(f"X0 must be {W.shape[1]}x{W.shape[1]}")
    if not np.isfinite(np.linalg.cond(X)) or np.linalg.cond(X) > COND_MAX:
        raise SingularX("X0 is not invertible")
    trace = []
    prev = np.inf
    increases = 0
    g_norm = np.inf
    for it in range(max_iters + 1):
        Y = W @ X
        T = np.tanh(alpha * Y)
        E = Y - T
        with np.errstate(over="ignore"):
            obj = float(np.sum(E * E))
        if not np.isfinite(obj):
            raise SingularX(f"descent diverged at iteration {it}")
        trace.append(obj)
        if obj > prev * (1 + 1e-12) + 1e-300:
            increases += 1
        prev = obj
        G = 2.0 * W.T @ (E - alpha * E * (1.0 - T * T))
        g_norm = float(np.linalg.norm(G))
        if g_norm < tol:
            if increases:
                log.info("binarization objective rose on %d of %d iterations", increases, it)
            return _solution(W, X, trace, True, it, g_norm)
        if it == max_iters:
            break
        X = X - gamma * G
        if not np.all(np.isfinite(X)):
            raise SingularX(f"descent diverged at iteration {it + 1}")
        if (it + 1) % COND_EVERY == 0:
            cond = np.linalg.cond(X)
            if not np.isfinite(cond) or cond > COND_MAX:
                raise SingularX(f"cond(X) = {cond:.3e} at iteration {it + 1}")
    if increases:
        log.info("binarization objective rose on %d of %d iterations", increases, max_iters)
    sol = _solution(W, X, trace, False, max_iters, g_norm)
    if raise_on_stall:
        raise NoConvergence(f"|G| = {g_norm:.3e} after {max_iters} iterations", result=sol)
    return sol


def binarize_multistart(
    W,
    n_starts: int = 8,
    seed: int = 0,
    X0=None,
    **kwargs,
) -> BinarizationSolution:
    """Best (lowest ``||E||_F``) of several descents from random ``X0``.

    ``X0``, if given, is tried first.  Random starts are gaussian with
    columns scaled so ``W X0`` has unit-order entries.  No optimality claim.
    """
    W = np.asarray(W, dtype=np.float64)
    p = W.shape[1]
    kwargs.setdefault("raise_on_stall", False)
    rng = np.random.default_rng(seed)
    starts = [] if X0 is None else [np.asarray(X0, dtype=np.float64)]
    scale = 1.0 / max(np.sqrt(np.mean(np.sum(W * W, axis=1))), 1e-300)
    while len(starts) < n_starts:
        starts.append(rng.standard_normal((p, p)) * scale)
    best = None
    for x0 in starts:
        try:
            sol = binarize_descent(W, x0, **kwargs)
        except SingularX as exc:
            log.debug("start abandoned: %s", exc)
            continue
        if best is None or sol.objective < best.objective:
            best = sol
    if best is None:
        raise SingularX("every start became singular")
    return best


def initial_transform(kind: str, rbm: GaussBernRBM, R=None, seed: int = 0) -> np.ndarray:
    """``X0`` choices: ``qr-r`` (stored R factor), ``identity`` or ``random``."""
    p = rbm.n_hidden
    if kind == "qr-r":
        if R is None:
            raise ValueError("qr-r start needs the R factor from the forward map")
        return np.asarray(R, dtype=np.float64)
    if kind == "identity":
        return np.eye(p)
    if kind == "random":
        return np.random.default_rng(seed).standard_normal((p, p))
    raise ValueError(f"unknown X0 kind {kind!r}")


# --------------------------------------------------------------------------
# orthogonalization and reconstruction


def lowdin_orthogonalize(W) -> np.ndarray:
    """Closest matrix with orthonormal columns: ``U V^T`` from ``W = U S V^T``."""
    W = np.asarray(W, dtype=np.float64)
    check_rank(W)
    if np.allclose(W.T @ W, np.eye(W.shape[1]), rtol=0.0, atol=1e-14):
        return W.copy()
    u, _, vt = np.linalg.svd(W, full_matrices=False)
    return u @ vt


@dataclass
class FixedPointReport:
    small_error: np.ndarray  # (a) |(J E)_iu| < |(B_p)_iu|
    compatible_sign: np.ndarray  # (b) (J E)_iu (B_p)_iu < 0
    fraction_ok: float  # entries meeting (a) or (b)
    patterns_fixed: np.ndarray  # per column: sgn(J B) == B
    all_fixed: bool


def fixed_point_report(J, sol: BinarizationSolution) -> FixedPointReport:
    JE = J @ sol.E
    a = np.abs(JE) < np.abs(sol.B_p)
    b = JE * sol.B_p < 0
    B = sol.B
    fixed = np.all(np.where(J @ B >= 0, 1.0, -1.0) == B, axis=0)
    return FixedPointReport(a, b, float(np.mean(a | b)), fixed, bool(fixed.all()))


def reconstruct_hn(W, sol: BinarizationSolution, mode: str = "case1", beta: float = 1.0):
    """Hopfield couplings from the near-binary ``B_p = W X``.

    ``case1``: orthonormal ``W``, ``J = B_p (B_p^T B_p)^{-1} B_p^T``.
    ``case2``: general full-rank ``W``, ``J = B_p (B_p^T C B_p)^{-1} B_p^T``
    with ``C = (W^+)^T W^+``.  Returns ``(net, report)``.
    """
    W = np.asarray(W, dtype=np.float64)
    Bp = sol.B_p
    if mode == "case1":
        dev = np.max(np.abs(W.T @ W - np.eye(W.shape[1])))
        if dev > ORTHO_TOL:
            raise NotOrthogonal(f"max |W^T W - I| = {dev:.3e}; orthogonalize first or use case2")
        check_rank(Bp)
        M = Bp.T @ Bp
    elif mode == "case2":
        check_rank(W)
        W_pinv = np.linalg.pinv(W)
        C = W_pinv.T @ W_pinv
        M = Bp.T @ C @ Bp
    else:
        raise ValueError(f"unknown mode {mode!r}")
    try:
        J = Bp @ np.linalg.solve(M, Bp.T)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient(f"reconstruction matrix is singular: {exc}") from None
    J = 0.5 * (J + J.T)
    net = HopfieldNetwork(J, None, beta)
    return net, fixed_point_report(J, sol)


@dataclass
class ReverseReport:
    solution: BinarizationSolution
    patterns: PatternMatrix
    fixed_points: FixedPointReport
    retrieval_accuracy: float | None = None
    retrieved_fraction: float | None = None


def reverse_pipeline(
    rbm: GaussBernRBM,
    X0,
    heldout=None,
    class_of_column=None,
    alpha: float = ALPHA,
    gamma: float = GAMMA,
    tol: float = TOL,
    max_iters: int = MAX_ITERS,
    retrieval: RetrievalConfig | None = None,
    seed: int = 0,
) -> ReverseReport:
    """Binarize, threshold to ``B = sgn(W X)``, store ``B`` with the projection
    rule and (given labelled ``heldout`` data) score retrieval.

    Non-convergence of the descent is tolerated; the last iterate is used.
    """
    sol = binarize_descent(rbm.W, X0, alpha, gamma, tol, max_iters, raise_on_stall=False)
    if not sol.converged:
        log.warning("binarization stopped at |G| = %.3e; using last iterate", sol.grad_norm)
    B = sol.B
    labels = np.arange(B.shape[1]) if class_of_column is None else np.asarray(class_of_column)
    pm = PatternMatrix(B, labels)
    mode = "case1" if np.max(np.abs(rbm.W.T @ rbm.W - np.eye(rbm.n_hidden))) <= ORTHO_TOL else "case2"
    _, report = reconstruct_hn(rbm.W, sol, mode, rbm.beta)
    out = ReverseReport(sol, pm, report)
    if heldout is not None:
        acc, frac = retrieval_accuracy(pm, heldout, retrieval, seed)
        out.retrieval_accuracy, out.retrieved_fraction = acc, frac
    return out


def retrieval_accuracy(patterns: PatternMatrix, data, config: RetrievalConfig | None = None, seed: int = 0):
    """Fraction of ``data`` samples retrieving their own class through a
    projection net storing ``patterns``; also the fraction retrieving anything."""
    cfg = config or RetrievalConfig()
    net = projection_couplings(patterns, beta=cfg.beta)
    results = retrieve_batch(net, patterns, data.samples, cfg, seed)
    labels = np.array([r.label for r in results])
    return float(np.mean(labels == data.labels)), float(np.mean(labels >= 0))
