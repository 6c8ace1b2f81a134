"""Product-of-experts classifier: one small RBM per digit class feeding a
multinomial logistic-regression head.

The feature of expert mu on sample s is ``||s^T W^(mu)||^2``, i.e. its
unnormalised log-probability up to the constants ``beta`` and ``ln Z``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp, softmax

from .baselines import InitSpec, make_expert_init
from .errors import EmptyClass, NonConvergence
from .rbm import GaussBernRBM, TrainConfig, train

log = logging.getLogger(__name__)

N_CLASSES = 10
L2 = 1e-4
GRAD_TOL = 1e-8


@dataclass
class ExpertEnsemble:
    experts: list  # GaussBernRBM per class
    init: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = {e.W.shape for e in self.experts}
        if len(shapes) != 1:
            raise ValueError(f"experts disagree on (N, k): {shapes}")

    @property
    def k(self) -> int:
        return self.experts[0].n_hidden

    def stacked(self) -> np.ndarray:
        return np.concatenate([e.W for e in self.experts], axis=1)


def feature_map(ensemble: ExpertEnsemble, s, chunk: int = 10000) -> np.ndarray:
    """``f_mu(s) = sum_nu (sum_i W^(mu)_{i nu} s_i)^2`` for one state or a batch."""
    s = np.asarray(s, dtype=np.float64)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    W = ensemble.stacked()
    k, n_exp = ensemble.k, len(ensemble.experts)
    out = np.empty((len(s), n_exp))
    for start in range(0, len(s), chunk):
        h = s[start : start + chunk] @ W
        out[start : start + chunk] = np.sum((h * h).reshape(len(h), n_exp, k), axis=2)
    return out[0] if single else out


def _expert_seeds(seed: int, n: int):
    return [int(ss.generate_state(1)[0]) for ss in np.random.SeedSequence(seed).spawn(n)]


def init_experts(data, init: str, k: int, seed: int = 0, beta: float = 2.0, n_classes: int = N_CLASSES) -> ExpertEnsemble:
    seeds = _expert_seeds(seed, n_classes)
    experts = []
    for c in range(n_classes):
        members = data.of_class(c)
        if len(members) == 0:
            raise EmptyClass(f"class {c} has no samples")
        W = make_expert_init(InitSpec(init, k, seeds[c]), members)
        experts.append(GaussBernRBM(W, beta=beta))
    return ExpertEnsemble(experts, InitSpec(init, k).kind, {"k": k, "seed": seed, "epochs": 0})


def train_experts(data, init: str, k: int, config: TrainConfig, n_classes: int = N_CLASSES, callback=None):
    """Initialise the ten experts and train each on its own class only.

    Training proceeds one epoch at a time across all experts so that
    ``callback(epoch, ensemble)`` can observe every intermediate ensemble
    (including epoch 0).  Returns the final ensemble.
    """
    beta = config.beta if config.beta is not None else 2.0
    ens = init_experts(data, init, k, config.seed, beta, n_classes)
    if callback:
        callback(0, ens)
    class_data = [data.of_class(c) for c in range(n_classes)]
    epoch_seeds = np.random.SeedSequence([config.seed, 1]).spawn(config.epochs)
    for epoch in range(1, config.epochs + 1):
        seeds = _expert_seeds(int(epoch_seeds[epoch - 1].generate_state(1)[0]), n_classes)
        experts = []
        for c, rbm in enumerate(ens.experts):
            cfg = replace(config, epochs=1, seed=seeds[c], beta=beta)
            trained, _ = train(rbm, class_data[c], cfg)
            experts.append(trained)
        ens = ExpertEnsemble(experts, ens.init, {**ens.metadata, "epochs": epoch, **config.as_metadata()})
        if callback:
            callback(epoch, ens)
    return ens


# --------------------------------------------------------------------------
# logistic-regression head


@dataclass
class LogRegHead:
    weights: np.ndarray  # (n_classes, n_features), acts on standardized features
    intercepts: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    trained: bool = True
    grad_norm: float = 0.0
    iterations: int = 0
    split: str | None = None  # dataset split the head was fit on

    def __post_init__(self):
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.intercepts))):
            raise ValueError("head parameters must be finite")

    def logits(self, features) -> np.ndarray:
        z = (np.atleast_2d(features) - self.mean) / self.scale
        return z @ self.weights.T + self.intercepts

    def predict_proba(self, features) -> np.ndarray:
        return softmax(self.logits(features), axis=1)

    def predict(self, features) -> np.ndarray:
        return np.argmax(self.logits(features), axis=1)


def _objective(theta, Z1, Y, l2, n_cls):
    """Mean cross-entropy + ``l2/2 ||weights||^2`` with gradient and Hessian."""
    m, d1 = Z1.shape
    T = theta.reshape(n_cls, d1)
    logits = Z1 @ T.T
    lse = logsumexp(logits, axis=1)
    P = np.exp(logits - lse[:, None])
    reg_mask = np.ones(d1)
    reg_mask[-1] = 0.0  # intercept unpenalised
    f = float(np.mean(lse - np.sum(logits * Y, axis=1)) + 0.5 * l2 * np.sum(T * T * reg_mask))
    grad = ((P - Y).T @ Z1 / m + l2 * T * reg_mask).ravel()
    # Hessian blocks: sum_a (diag(p_a) - p_a p_a^T) (x) z_a z_a^T / m
    H = np.zeros((n_cls, d1, n_cls, d1))
    for c in range(n_cls):
        for e in range(c, n_cls):
            w = P[:, c] * ((c == e) - P[:, e])
            blk = (Z1 * w[:, None]).T @ Z1 / m
            H[c, :, e, :] = blk
            H[e, :, c, :] = blk.T
    H = H.reshape(n_cls * d1, n_cls * d1) + np.diag(np.tile(l2 * reg_mask, n_cls))
    return f, grad, H


def fit_logreg(features, labels, n_classes: int = N_CLASSES, l2: float = L2, tol: float = GRAD_TOL, max_iters: int = 100) -> LogRegHead:
    """Multinomial logistic regression by damped Newton iterations.

    Features are standardised with training-set statistics.  Newton steps
    use a least-squares solve (the softmax has a redundant direction) and a
    backtracking line search; iteration stops when the gradient norm drops
    below ``tol``.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z1 = np.hstack([(X - mean) / scale, np.ones((len(X), 1))])
    Y = np.eye(n_classes)[y]
    theta = np.zeros(n_classes * Z1.shape[1])
    f, g, H = _objective(theta, Z1, Y, l2, n_classes)
    g_norm = float(np.linalg.norm(g))
    for it in range(max_iters):
        if g_norm < tol:
            break
        step = np.linalg.lstsq(H, -g, rcond=None)[0]
        t = 1.0
        while True:
            cand = theta + t * step
            f_new, g_new, H_new = _objective(cand, Z1, Y, l2, n_classes)
            if f_new <= f + 1e-4 * t * (g @ step) or t < 1e-10:
                break
            t *= 0.5
        theta, f, g, H = cand, f_new, g_new, H_new
        g_norm = float(np.linalg.norm(g))
    else:
        if g_norm >= tol:
            raise NonConvergence(f"logistic regression stopped with |grad| = {g_norm:.3e}")
    T = theta.reshape(n_classes, Z1.shape[1])
    return LogRegHead(T[:, :-1].copy(), T[:, -1].copy(), mean, scale, True, g_norm, it)


def train_head(ensemble: ExpertEnsemble, data, **kwargs) -> LogRegHead:
    head = fit_logreg(feature_map(ensemble, data.samples), data.labels, len(ensemble.experts), **kwargs)
    return replace(head, split=getattr(data, "split", None))


def classify(ensemble: ExpertEnsemble, head: LogRegHead, s) -> np.ndarray | int:
    s = np.asarray(s)
    pred = head.predict(feature_map(ensemble, np.atleast_2d(s)))
    return int(pred[0]) if s.ndim == 1 else pred


def test_error(ensemble: ExpertEnsemble, head: LogRegHead, testset) -> float:
    """Misclassified fraction of ``testset``; it must not be the head's training split."""
    split = getattr(testset, "split", None)
    if head.split is not None and split == head.split:
        raise ValueError(f"head was fit on split {split!r}; evaluate on a different split")
    pred = classify(ensemble, head, testset.samples)
    return float(np.mean(pred != testset.labels))


test_error.__test__ = False  # keep pytest from collecting it
