"""Experiment driver: the generative, classification and reverse-map studies
at configurable scale, written out as CSV metrics, model archives, weight
images and a manifest of content hashes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .baselines import InitSpec, make_init, model_patterns
from .data_io import ModelArchive, load_model, load_mnist, save_model, write_metrics_csv
from .errors import ShapeUnknown
from .evaluation import AISConfig, lnZ_ais, log_likelihood
from .forward_map import hn_to_rbm, qr_orthogonalize
from .hopfield import RetrievalConfig
from .patterns import PatternMatrix
from .poe import feature_map, fit_logreg, train_experts
from .rbm import GaussBernRBM, TrainConfig, train
from .reverse_map import binarize_descent, reconstruct_hn, retrieval_accuracy

log = logging.getLogger(__name__)

EXPERIMENTS = ("fig2_beta_sweep", "fig4_generative", "fig5_poe", "figD1_reverse", "figD2_retrieval")

# desk-scale defaults per preset; any field can be overridden
PRESETS = {
    "fig2_beta_sweep": dict(subset=2000, runs=1, ks=(1, 2), betas=(0.5, 1.0, 2.0, 4.0), chains=100, ais_steps=1000),
    "fig4_generative": dict(subset=10000, runs=3, epochs=5, inits=("hopfield", "random", "pca", "hebbian"), chains=100),
    "fig5_poe": dict(subset=None, runs=1, epochs=1, inits=("hopfield", "pca", "random"), ks=(10,)),
    "figD1_reverse": dict(subset=10000, runs=1, epochs=5),
    "figD2_retrieval": dict(subset=10000, runs=1, epochs=5, test_subset=2000),
}


@dataclass
class ExperimentConfig:
    experiment: str
    out_dir: str = "runs"
    seed: int = 0
    subset: int | None = 10000  # training samples (None = full split)
    test_subset: int | None = None
    runs: int = 1
    epochs: int = 5
    ks: tuple = (1,)
    betas: tuple = (2.0,)
    inits: tuple = ("hopfield",)
    beta: float = 2.0
    lr: float = 1e-4
    batch: int = 100
    cd: int = 20
    chains: int = 100
    ais_steps: int = 1000
    alpha: float = 200.0
    gamma: float = 0.05
    max_iters: int = 50_000
    ensemble: int = 20
    threshold: float = 0.7
    data_root: str | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        for name in ("runs", "batch", "cd", "chains", "ais_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or (self.subset is not None and self.subset < 1):
            raise ValueError("scale knobs must be positive")
        self.ks = tuple(int(k) for k in self.ks)
        self.betas = tuple(float(b) for b in self.betas)
        self.inits = tuple(self.inits)

    @classmethod
    def preset(cls, experiment: str, **overrides) -> "ExperimentConfig":
        if experiment not in PRESETS:
            raise ValueError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
        kw = {**PRESETS[experiment], **{k: v for k, v in overrides.items() if v is not None}}
        return cls(experiment, **kw)

    def train_config(self, seed: int, epochs: int | None = None) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch, cd_steps=self.cd,
                           epochs=self.epochs if epochs is None else epochs, seed=seed, beta=self.beta)


def derive_seed(*keys) -> int:
    """Stable 32-bit seed from integer / string keys."""
    ints = [k if isinstance(k, int) else int.from_bytes(hashlib.sha256(str(k).encode()).digest()[:4], "little") for k in keys]
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


# --------------------------------------------------------------------------
# archives and images


def rbm_archive(rbm: GaussBernRBM, xi=None, R=None, **metadata) -> ModelArchive:
    mats = {"W": rbm.W, "b": rbm.b, "c": rbm.c}
    if xi is not None:
        mats["xi"] = np.asarray(xi, dtype=np.float64)
    if R is not None:
        mats["R"] = np.asarray(R, dtype=np.float64)
    return ModelArchive("rbm", rbm.W.shape, float(rbm.beta), mats, metadata)


def rbm_from_archive(arc: ModelArchive) -> GaussBernRBM:
    if arc.kind != "rbm":
        raise ValueError(f"expected an rbm archive, got {arc.kind!r}")
    m = arc.matrices
    return GaussBernRBM(m["W"], m.get("b"), m.get("c"), arc.beta)


def patterns_from_archive(arc: ModelArchive) -> PatternMatrix:
    xi = arc.matrices.get("xi")
    if xi is None:
        raise ValueError("archive stores no patterns")
    labels = arc.metadata.get("class_of_column", list(range(xi.shape[1])))
    return PatternMatrix(xi, np.asarray(labels))


def _tile_image(col: np.ndarray, shape) -> np.ndarray:
    lo, hi = float(col.min()), float(col.max())
    if hi - lo <= 0:
        return np.full(shape, 128, dtype=np.uint8)
    return np.round((col - lo) / (hi - lo) * 255.0).astype(np.uint8).reshape(shape)


def render_weights(archive, out, shape=None, pad: int = 1, ncols: int | None = None, matrix: str | None = None) -> Path:
    """Grid of grayscale tiles, one per column of ``W`` (or ``xi`` / ``matrix``).

    Each tile is min/max normalised on its own; a constant column becomes
    uniform gray.  ``shape`` defaults to a square image when ``N`` is a
    perfect square.
    """
    if isinstance(archive, (str, Path)):
        archive = load_model(archive)
    if isinstance(archive, ModelArchive):
        name = matrix or next(k for k in ("W", "xi", "J") if k in archive.matrices)
        M = archive.matrices[name]
    else:
        M = np.asarray(archive, dtype=np.float64)
    M = M[:, None] if M.ndim == 1 else M
    n, p = M.shape
    if shape is None:
        side = math.isqrt(n)
        if side * side != n:
            raise ShapeUnknown(f"N={n} is not a perfect square; pass an explicit (h, w)")
        shape = (side, side)
    h, w = shape
    if h * w != n:
        raise ShapeUnknown(f"tile shape {shape} does not hold N={n} pixels")
    ncols = ncols or min(p, 10)
    nrows = -(-p // ncols)
    canvas = np.zeros((nrows * (h + pad) + pad, ncols * (w + pad) + pad), dtype=np.uint8)
    for j in range(p):
        r, c = divmod(j, ncols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        canvas[y : y + h, x : x + w] = _tile_image(M[:, j], shape)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(canvas, mode="L").save(out, format="PNG")
    return out


# --------------------------------------------------------------------------
# output bookkeeping


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class OutputDir:
    """Tracks emitted files and writes ``manifest.json`` with their hashes."""

    def __init__(self, root, cfg: ExperimentConfig):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        if name not in self.files:
            self.files.append(name)
        return p

    def manifest(self, status: str, error: str | None = None) -> Path:
        cfg = asdict(self.cfg)
        cfg.pop("data_root", None)
        doc = {
            "experiment": self.cfg.experiment,
            "status": status,
            "config": cfg,
            "files": [{"path": f, "sha256": sha256_file(self.root / f)} for f in sorted(self.files) if (self.root / f).exists()],
        }
        if error:
            doc["error"] = error
        target = self.root / "manifest.json"
        target.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")
        return target


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (tuple, np.ndarray)):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


# --------------------------------------------------------------------------
# presets


def _load(cfg: ExperimentConfig, split: str, n: int | None, seed: int):
    data = load_mnist(split, cfg.data_root)
    return data if n is None or n >= len(data) else data.subset(n, seed)


def _ais_ll(model, data, cfg, seed):
    est = lnZ_ais(model, AISConfig(cfg.chains, cfg.ais_steps, seed=seed))
    return log_likelihood(model, data, est), est


def fig2_beta_sweep(cfg: ExperimentConfig, out: OutputDir) -> dict:
    """Log-likelihood of untrained Hopfield RBMs over k and beta."""
    rows = []
    for run in range(cfg.runs):
        data = _load(cfg, "train", cfg.subset, derive_seed(cfg.seed, run, "subset"))
        for k in cfg.ks:
            pm = model_patterns(data, k)
            for beta in cfg.betas:
                rbm = hn_to_rbm(pm, beta)
                ll, est = _ais_ll(rbm, data, cfg, derive_seed(cfg.seed, run, k, repr(beta), "ais"))
                rows.append({"k": k, "beta": beta, "run": run, "lnp": ll, "lnZ": est.value, "lnZ_stderr": est.stderr})
                log.info("fig2 run %d k=%d beta=%g: lnp=%.3f", run, k, beta, ll)
    write_metrics_csv(rows, out.path("fig2_beta_sweep.csv"), ("k", "beta", "run", "lnp", "lnZ", "lnZ_stderr"))
    return {"rows": len(rows)}


def fig4_generative(cfg: ExperimentConfig, out: OutputDir) -> dict:
    """CD-k training curves (AIS log-likelihood per epoch) for each initialization."""
    metrics = []
    k = cfg.ks[0]
    for run in range(cfg.runs):
        data = _load(cfg, "train", cfg.subset, derive_seed(cfg.seed, run, "subset"))
        for init in cfg.inits:
            spec = InitSpec(init, k, derive_seed(cfg.seed, run, init, "init"))
            W, extras = make_init(spec, data)
            rbm = GaussBernRBM(W, beta=cfg.beta)

            def on_epoch(epoch, model, m, init=init, run=run, extras=extras):
                ll, est = _ais_ll(model, data, cfg, derive_seed(cfg.seed, run, init, epoch, "ais"))
                metrics.append({"epoch": epoch, "run": run, "metric": f"lnp_{init}", "value": ll})
                metrics.append({"epoch": epoch, "run": run, "metric": f"lnZ_stderr_{init}", "value": est.stderr})
                arc = rbm_archive(model, extras.get("xi"), extras.get("R"), init=init, run=run, epoch=epoch,
                                  class_of_column=extras.get("class_of_column"))
                save_model(arc, out.path(f"checkpoints/{init}_run{run}_epoch{epoch:03d}.hrbm"))
                return {"lnp": ll}

            train(rbm, data, cfg.train_config(derive_seed(cfg.seed, run, init, "train")), [on_epoch])
    write_metrics_csv(metrics, out.path("metrics.csv"))
    return {"rows": len(metrics)}


def fig5_poe(cfg: ExperimentConfig, out: OutputDir) -> dict:
    """Per-epoch PoE test (and train) error for each init and k."""
    metrics = []
    for run in range(cfg.runs):
        data = _load(cfg, "train", cfg.subset, derive_seed(cfg.seed, run, "subset"))
        test = _load(cfg, "test", cfg.test_subset, derive_seed(cfg.seed, run, "test"))
        for init in cfg.inits:
            for k in cfg.ks:

                def on_epoch(epoch, ens, init=init, k=k, run=run):
                    head = fit_logreg(feature_map(ens, data.samples), data.labels)
                    test_err = float(np.mean(head.predict(feature_map(ens, test.samples)) != test.labels))
                    train_err = float(np.mean(head.predict(feature_map(ens, data.samples)) != data.labels))
                    metrics.append({"epoch": epoch, "run": run, "metric": f"test_error_{init}_k{k}", "value": test_err})
                    metrics.append({"epoch": epoch, "run": run, "metric": f"train_error_{init}_k{k}", "value": train_err})
                    log.info("poe %s k=%d epoch %d: test error %.4f", init, k, epoch, test_err)

                train_experts(data, init, k, cfg.train_config(derive_seed(cfg.seed, run, init, k, "train")), callback=on_epoch)
    write_metrics_csv(metrics, out.path("metrics.csv"))
    return {"rows": len(metrics)}


def _reverse_study(cfg: ExperimentConfig, out: OutputDir, with_retrieval: bool) -> dict:
    metrics = []
    for run in range(cfg.runs):
        data = _load(cfg, "train", cfg.subset, derive_seed(cfg.seed, run, "subset"))
        test = _load(cfg, "test", cfg.test_subset, derive_seed(cfg.seed, run, "test")) if with_retrieval else None
        pm = model_patterns(data, cfg.ks[0])
        fac = qr_orthogonalize(pm)
        rbm = GaussBernRBM(fac.U, beta=cfg.beta)
        rcfg = RetrievalConfig(beta=cfg.beta, ensemble=cfg.ensemble, threshold=cfg.threshold)
        render_weights(pm.xi, out.path(f"patterns_run{run}_epoch000.png"))

        def on_epoch(epoch, model, m, run=run):
            sol = binarize_descent(model.W, fac.R, cfg.alpha, cfg.gamma, max_iters=cfg.max_iters, raise_on_stall=False)
            mode = "case1" if np.allclose(model.W.T @ model.W, np.eye(model.n_hidden), atol=1e-6) else "case2"
            _, rep = reconstruct_hn(model.W, sol, mode, model.beta)
            row = {"binarization_error": sol.objective, "softened_objective": sol.trace[-1],
                   "bits_changed": int(np.sum(sol.B != pm.xi)), "fixed_point_fraction": rep.fraction_ok,
                   "patterns_fixed": int(rep.patterns_fixed.sum()), "descent_converged": int(sol.converged)}
            if with_retrieval:
                acc, frac = retrieval_accuracy(PatternMatrix(sol.B, pm.class_of_column), test, rcfg,
                                               derive_seed(cfg.seed, run, epoch, "retrieve"))
                row.update(retrieval_accuracy=acc, retrieved_fraction=frac)
            for name, value in row.items():
                metrics.append({"epoch": epoch, "run": run, "metric": name, "value": value})
            if epoch:
                render_weights(sol.B, out.path(f"patterns_run{run}_epoch{epoch:03d}.png"))
            if not with_retrieval:
                save_model(rbm_archive(model, pm.xi, fac.R, run=run, epoch=epoch,
                                       class_of_column=pm.class_of_column.tolist()),
                           out.path(f"checkpoints/hopfield_run{run}_epoch{epoch:03d}.hrbm"))

        train(rbm, data, cfg.train_config(derive_seed(cfg.seed, run, "train")), [on_epoch])
    write_metrics_csv(metrics, out.path("metrics.csv"))
    return {"rows": len(metrics)}


def figD1_reverse(cfg, out):
    """Binarization error and pattern drift of a training Hopfield RBM."""
    return _reverse_study(cfg, out, with_retrieval=False)


def figD2_retrieval(cfg, out):
    """Retrieval accuracy of reverse-mapped patterns per epoch (epoch 0 = encoded patterns)."""
    return _reverse_study(cfg, out, with_retrieval=True)


RUNNERS = {
    "fig2_beta_sweep": fig2_beta_sweep,
    "fig4_generative": fig4_generative,
    "fig5_poe": fig5_poe,
    "figD1_reverse": figD1_reverse,
    "figD2_retrieval": figD2_retrieval,
}


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run a preset, always leaving a manifest describing what was written."""
    out = OutputDir(cfg.out_dir, cfg)
    try:
        summary = RUNNERS[cfg.experiment](cfg, out)
    except BaseException as exc:
        out.manifest("failed", f"{type(exc).__name__}: {exc}")
        raise
    manifest = out.manifest("complete")
    return {"experiment": cfg.experiment, "out_dir": str(out.root), "manifest": str(manifest),
            "files": len(out.files), **summary}
