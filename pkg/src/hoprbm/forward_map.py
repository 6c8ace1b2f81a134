"""Hopfield -> RBM mappings.

Any ``U`` with orthonormal columns and ``U U^T = xi (xi^T xi)^{-1} xi^T``
turns the projection Hopfield net into a binary-gaussian RBM with weights
``U``.  Three such factors are provided (QR, symmetric square root, SVD),
plus the two non-restricted Boltzmann machines built on the overlap and
projection forms of the Hamiltonian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankDeficient
from .patterns import PatternMatrix, check_rank
from .rbm import GaussBernRBM

EIG_RTOL = 1e-10


@dataclass
class OrthogonalFactorization:
    U: np.ndarray
    method: str
    R: np.ndarray | None = None  # qr
    sigma: np.ndarray | None = None  # svd
    V: np.ndarray | None = None  # svd
    inv_sqrt: np.ndarray | None = None  # sqrt: (xi^T xi)^{-1/2}


def _xi(xi) -> np.ndarray:
    x = xi.xi if isinstance(xi, PatternMatrix) else np.asarray(xi, dtype=np.float64)
    return np.atleast_2d(x.T).T if x.ndim == 1 else x


def qr_orthogonalize(xi) -> OrthogonalFactorization:
    """Thin QR with the unique sign convention ``diag(R) > 0``."""
    x = _xi(xi)
    check_rank(x)
    q, r = np.linalg.qr(x)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return OrthogonalFactorization(q * signs, "qr", R=r * signs[:, None])


def sqrt_factorization(xi) -> OrthogonalFactorization:
    """``K = xi (xi^T xi)^{-1/2}`` via a symmetric eigendecomposition."""
    x = _xi(xi)
    if x.shape[1] > x.shape[0]:
        raise RankDeficient("more patterns than units")
    w, v = np.linalg.eigh(x.T @ x)
    if w[0] <= EIG_RTOL * w[-1]:
        raise RankDeficient(f"overlap matrix eigenvalue {w[0]:.3e} is numerically zero")
    inv_sqrt = (v / np.sqrt(w)) @ v.T
    return OrthogonalFactorization(x @ inv_sqrt, "sqrt", inv_sqrt=inv_sqrt)


def svd_factorization(xi) -> OrthogonalFactorization:
    """Thin SVD ``xi = U diag(sigma) V^T``; the left factor maps to the RBM."""
    x = _xi(xi)
    check_rank(x)
    u, sigma, vt = np.linalg.svd(x, full_matrices=False)
    return OrthogonalFactorization(u, "svd", sigma=sigma, V=vt.T)


FACTORIZATIONS = {"qr": qr_orthogonalize, "sqrt": sqrt_factorization, "svd": svd_factorization}


def hn_to_rbm(xi, beta: float, b=None, method: str = "qr") -> GaussBernRBM:
    """RBM whose visible marginal equals the projection net's Boltzmann law."""
    fac = FACTORIZATIONS[method](xi)
    return GaussBernRBM(fac.U, b=b, c=None, beta=beta)


# --------------------------------------------------------------------------
# Boltzmann machines with coupled continuous units


@dataclass
class ContinuousBM:
    """``H(s, lam) = 1/2 lam^T K lam - lam^T V^T s - b.s``.

    ``log_prefactor`` collects the determinant factor and the per-dimension
    gaussian normalisation so that
    ``ln Z_HN = log_prefactor + ln sum_s int exp(-beta H) dlam``.
    """

    K: np.ndarray  # hidden-hidden coupling, p x p, SPD
    V: np.ndarray  # visible-hidden coupling, N x p
    beta: float
    log_prefactor: float
    kind: str
    b: np.ndarray | None = None

    def __post_init__(self):
        if self.b is None:
            self.b = np.zeros(self.V.shape[0])

    @property
    def n_visible(self):
        return self.V.shape[0]

    @property
    def n_hidden(self):
        return self.V.shape[1]


def build_overlap_bm(xi, beta: float) -> ContinuousBM:
    """Overlap form: ``K = xi^T xi / N``, ``V = xi / sqrt(N)``."""
    x = _xi(xi)
    check_rank(x)
    n, p = x.shape
    A = x.T @ x
    _, logdet = np.linalg.slogdet(A)
    log_pref = 0.5 * logdet - 0.5 * p * np.log(2.0 * np.pi * n / beta)
    return ContinuousBM(A / n, x / np.sqrt(n), beta, log_pref, "overlap")


def build_projection_bm(xi, beta: float) -> ContinuousBM:
    """Projection form: ``K = (xi^T xi)^{-1}``, ``V = xi (xi^T xi)^{-1}``."""
    x = _xi(xi)
    check_rank(x)
    p = x.shape[1]
    A = x.T @ x
    A_inv = np.linalg.inv(A)
    A_inv = 0.5 * (A_inv + A_inv.T)
    _, logdet = np.linalg.slogdet(A)
    log_pref = -0.5 * logdet - 0.5 * p * np.log(2.0 * np.pi / beta)
    return ContinuousBM(A_inv, x @ A_inv, beta, log_pref, "projection")


def rbm_as_bm(rbm: GaussBernRBM) -> ContinuousBM:
    """Express an RBM (with ``c = 0``) in the generic coupled form."""
    if np.any(rbm.c != 0):
        raise ValueError("generic form assumes zero hidden bias")
    p = rbm.n_hidden
    return ContinuousBM(np.eye(p), rbm.W, rbm.beta, -0.5 * p * np.log(2.0 * np.pi / rbm.beta), "rbm", rbm.b)


def log_cosh(x):
    """Overflow-free ``ln cosh x``."""
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)


def f0_landscape(model, lam, return_grad: bool = False):
    """Free energy of the continuous units after summing out the spins.

    ``F0(lam) = 1/2 lam^T K lam - (1/beta) sum_i ln cosh(beta [(V lam)_i + b_i])``
    with ``K = I``, ``V = W`` and ``lam -> lam - c`` in the quadratic term for
    an RBM.  Optionally returns the analytic gradient.
    """
    lam = np.asarray(lam, dtype=np.float64)
    beta = model.beta
    if isinstance(model, GaussBernRBM):
        d = lam - model.c
        quad = 0.5 * d @ d
        grad_quad = d
        V, b = model.W, model.b
    else:
        quad = 0.5 * lam @ model.K @ lam
        grad_quad = model.K @ lam
        V, b = model.V, model.b
    x = V @ lam + b
    f = quad - np.sum(log_cosh(beta * x)) / beta
    if not return_grad:
        return float(f)
    return float(f), grad_quad - V.T @ np.tanh(beta * x)


def lnZ_bm_enumerate(bm: ContinuousBM, max_visible: int = 20) -> float:
    """Exact ``ln Z`` of a coupled BM: sum over spins, gaussian integral in ``lam``.

    For each ``s``: ``int exp(-beta/2 lam^T K lam + beta lam^T V^T s) dlam =
    (2 pi / beta)^{p/2} det(K)^{-1/2} exp(beta/2 t^T K^{-1} t)``, ``t = V^T s``.
    """
    from .evaluation import all_spin_states, logsumexp_chunks

    n, p = bm.V.shape
    if n > max_visible:
        from .errors import TooLarge

        raise TooLarge(f"N={n} exceeds enumeration limit {max_visible}")
    K_inv = np.linalg.inv(bm.K)
    _, logdet_k = np.linalg.slogdet(bm.K)
    const = 0.5 * p * np.log(2.0 * np.pi / bm.beta) - 0.5 * logdet_k

    def log_terms(s):
        t = s @ bm.V
        return bm.beta * (0.5 * np.einsum("ij,jk,ik->i", t, K_inv, t) + s @ bm.b)

    return bm.log_prefactor + const + logsumexp_chunks(log_terms, all_spin_states(n))


def lnZ_bm_quadrature(bm: ContinuousBM, epsrel: float = 1e-11) -> float:
    """``ln Z`` from the spin-summed integrand ``2^N exp(-beta F0(lam))`` (p <= 3)."""
    from .evaluation import log_integrate

    n = bm.n_visible

    def log_f(lam):
        lam = np.atleast_2d(lam)
        x = lam @ bm.V.T + bm.b
        quad = 0.5 * np.einsum("ij,jk,ik->i", lam, bm.K, lam)
        return -bm.beta * quad + np.sum(log_cosh(bm.beta * x), axis=1)

    w = np.linalg.eigvalsh(bm.K)
    radius = (np.sum(np.linalg.norm(bm.V, axis=1)) + np.linalg.norm(bm.b)) / w[0] + 12.0 / np.sqrt(bm.beta * w[0])
    return bm.log_prefactor + n * np.log(2.0) + log_integrate(log_f, np.zeros(bm.n_hidden), radius, epsrel)
