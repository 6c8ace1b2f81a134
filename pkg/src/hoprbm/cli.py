"""Command-line entry point: ``hoprbm <command> ...``.

Every command prints a JSON summary on stdout and exits 0; failures print
``{"error": code, "type": ..., "message": ...}`` on stderr and exit 1
(2 for usage errors).  The MNIST location comes from ``--data-root`` or
the ``HOPRBM_DATA`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "BLIS_NUM_THREADS")


def _floats(text):
    return tuple(float(x) for x in text.split(","))


def _ints(text):
    return tuple(int(x) for x in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hoprbm", description=__doc__.split("\n")[0])
    ap.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP worker threads")
    ap.add_argument("--data-root", default=None, help="MNIST IDX directory (default: $HOPRBM_DATA)")
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    # patterns build
    p = sub.add_parser("patterns", help="pattern matrices from MNIST")
    ps = p.add_subparsers(dest="action", required=True)
    b = ps.add_parser("build")
    b.add_argument("--k", type=int, default=1, help="sub-patterns per class (1 = class means)")
    b.add_argument("--out", required=True)
    b.add_argument("--subset", type=int, default=None)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--beta", type=float, default=1.0)

    # map hn2rbm
    p = sub.add_parser("map", help="Hopfield -> RBM mapping")
    ps = p.add_subparsers(dest="action", required=True)
    b = ps.add_parser("hn2rbm")
    b.add_argument("--patterns", required=True)
    b.add_argument("--method", choices=("qr", "sqrt", "svd"), default="qr")
    b.add_argument("--beta", type=float, default=2.0)
    b.add_argument("--out", required=True)

    # train
    b = sub.add_parser("train", help="CD-k training of a binary-gaussian RBM")
    b.add_argument("--init", choices=("hopfield", "hebbian", "pca", "random"), default="hopfield")
    b.add_argument("--k", type=int, default=1)
    b.add_argument("--epochs", type=int, default=50)
    b.add_argument("--batch", type=int, default=100)
    b.add_argument("--cd", type=int, default=20)
    b.add_argument("--beta", type=float, default=2.0)
    b.add_argument("--lr", type=float, default=1e-4)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--subset", type=int, default=None)
    b.add_argument("--out", required=True, help="archive of the final model")
    b.add_argument("--metrics", default=None, help="per-epoch metrics CSV")
    b.add_argument("--ais-chains", type=int, default=0, help="estimate log-likelihood each epoch when > 0")
    b.add_argument("--ais-steps", type=int, default=1000)

    # eval ais
    p = sub.add_parser("eval", help="partition-function estimation")
    ps = p.add_subparsers(dest="action", required=True)
    b = ps.add_parser("ais")
    b.add_argument("--model", required=True)
    b.add_argument("--chains", type=int, default=500)
    b.add_argument("--steps", type=int, default=1000)
    b.add_argument("--mh-steps", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None, help="per-chain log-weight CSV")
    b.add_argument("--loglik-subset", type=int, default=None, help="also report mean log-likelihood on this many training samples")

    # reverse binarize
    p = sub.add_parser("reverse", help="RBM -> Hopfield direction")
    ps = p.add_subparsers(dest="action", required=True)
    b = ps.add_parser("binarize")
    b.add_argument("--model", required=True)
    b.add_argument("--x0", choices=("qr-r", "identity", "random"), default="qr-r")
    b.add_argument("--alpha", type=float, default=200.0)
    b.add_argument("--gamma", type=float, default=0.05)
    b.add_argument("--tol", type=float, default=1e-8)
    b.add_argument("--max-iters", type=int, default=50_000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None, help="hopfield archive of the candidate patterns")

    # classify poe
    p = sub.add_parser("classify", help="product-of-experts classifier")
    ps = p.add_subparsers(dest="action", required=True)
    b = ps.add_parser("poe")
    b.add_argument("--init", choices=("hopfield", "hebbian", "pca", "random"), default="hopfield")
    b.add_argument("--k", type=int, default=10)
    b.add_argument("--epochs", type=int, default=50)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--batch", type=int, default=100)
    b.add_argument("--cd", type=int, default=20)
    b.add_argument("--beta", type=float, default=2.0)
    b.add_argument("--lr", type=float, default=1e-4)
    b.add_argument("--subset", type=int, default=None)
    b.add_argument("--test-subset", type=int, default=None)
    b.add_argument("--out", default=None, help="per-epoch error CSV")

    # retrieve
    b = sub.add_parser("retrieve", help="retrieval protocol on MNIST test images")
    b.add_argument("--model", required=True, help="hopfield or rbm archive giving the couplings")
    b.add_argument("--patterns", required=True, help="archive holding the stored patterns")
    b.add_argument("--beta", type=float, default=2.0)
    b.add_argument("--ensemble", type=int, default=20)
    b.add_argument("--threshold", type=float, default=0.7)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--test-subset", type=int, default=None)
    b.add_argument("--out", default=None, help="per-image CSV")

    # render
    b = sub.add_parser("render", help="draw archive columns as an image grid")
    b.add_argument("--model", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--matrix", default=None)
    b.add_argument("--shape", type=_ints, default=None, help="tile height,width")

    # experiment
    b = sub.add_parser("experiment", help="run an experiment preset")
    b.add_argument("preset", choices=("fig2_beta_sweep", "fig4_generative", "fig5_poe", "figD1_reverse", "figD2_retrieval"))
    b.add_argument("--out", default=None, help="output directory (default runs/<preset>)")
    b.add_argument("--seed", type=int, default=0)
    for name, typ in (("subset", int), ("test-subset", int), ("runs", int), ("epochs", int), ("chains", int),
                      ("ais-steps", int), ("beta", float), ("lr", float), ("batch", int), ("cd", int),
                      ("max-iters", int), ("ensemble", int)):
        b.add_argument(f"--{name}", type=typ, default=None)
    b.add_argument("--ks", type=_ints, default=None, help="comma-separated sub-pattern counts")
    b.add_argument("--betas", type=_floats, default=None, help="comma-separated beta grid")
    b.add_argument("--inits", type=lambda s: tuple(s.split(",")), default=None)
    return ap


# --------------------------------------------------------------------------
# commands (imports are deferred so --threads takes effect before numpy loads)


def _load_train(args, n, seed=0):
    from .data_io import load_mnist

    data = load_mnist("train", args.data_root)
    return data if n is None or n >= len(data) else data.subset(n, seed)


def cmd_patterns_build(args):
    from .baselines import model_patterns
    from .data_io import ModelArchive, save_model
    from .hopfield import projection_couplings

    data = _load_train(args, args.subset, args.seed)
    pm = model_patterns(data, args.k)
    net = projection_couplings(pm, args.beta)
    meta = {"k": args.k, "class_of_column": pm.class_of_column.tolist(), "subset": args.subset, "seed": args.seed}
    save_model(ModelArchive("hopfield", pm.xi.shape, args.beta, {"J": net.J, "b": net.b, "xi": pm.xi}, meta), args.out)
    return {"out": args.out, "N": pm.n, "p": pm.p}


def cmd_map_hn2rbm(args):
    from .data_io import load_model, save_model
    from .experiments import patterns_from_archive, rbm_archive
    from .forward_map import FACTORIZATIONS
    from .rbm import GaussBernRBM

    arc = load_model(args.patterns)
    pm = patterns_from_archive(arc)
    fac = FACTORIZATIONS[args.method](pm)
    rbm = GaussBernRBM(fac.U, beta=args.beta)
    save_model(rbm_archive(rbm, pm.xi, fac.R, method=args.method, class_of_column=pm.class_of_column.tolist()), args.out)
    return {"out": args.out, "N": pm.n, "p": pm.p, "method": args.method}


def cmd_train(args):
    import numpy as np

    from .baselines import InitSpec, make_init
    from .data_io import save_model, write_metrics_csv
    from .evaluation import AISConfig, lnZ_ais, log_likelihood
    from .experiments import rbm_archive
    from .rbm import GaussBernRBM, TrainConfig, train

    data = _load_train(args, args.subset, args.seed)
    W, extras = make_init(InitSpec(args.init, args.k, args.seed), data)
    cfg = TrainConfig(lr=args.lr, batch_size=args.batch, cd_steps=args.cd, epochs=args.epochs, seed=args.seed, beta=args.beta)
    rows = []

    def on_epoch(epoch, model, m):
        out = {}
        if args.ais_chains > 0:
            est = lnZ_ais(model, AISConfig(args.ais_chains, args.ais_steps, seed=args.seed + epoch))
            out = {"lnZ": est.value, "lnp": log_likelihood(model, data, est)}
        for name, value in {**m, **out}.items():
            if name != "epoch":
                rows.append({"epoch": epoch, "run": 0, "metric": name, "value": value})
        return out

    model, _ = train(GaussBernRBM(W, beta=args.beta), data, cfg, [on_epoch])
    meta = {"init": args.init, "k": args.k, **cfg.as_metadata(), "class_of_column": extras.get("class_of_column")}
    save_model(rbm_archive(model, extras.get("xi"), extras.get("R"), **meta), args.out)
    if args.metrics:
        write_metrics_csv(rows, args.metrics)
    return {"out": args.out, "epochs": args.epochs, "weight_norm": float(np.linalg.norm(model.W))}


def cmd_eval_ais(args):
    from .data_io import load_model, write_metrics_csv
    from .evaluation import AISConfig, lnZ_ais, log_likelihood
    from .experiments import rbm_from_archive

    rbm = rbm_from_archive(load_model(args.model))
    est = lnZ_ais(rbm, AISConfig(args.chains, args.steps, seed=args.seed, mh_steps=args.mh_steps))
    if args.out:
        rows = [{"chain": i, "log_weight": float(w)} for i, w in enumerate(est.log_weights)]
        write_metrics_csv(rows, args.out, ("chain", "log_weight"))
    out = {"value": est.value, "method": est.method, "chains": est.chains, "steps": est.steps, "stderr": est.stderr}
    if args.loglik_subset:
        out["loglik"] = log_likelihood(rbm, _load_train(args, args.loglik_subset, args.seed), est)
    return out


def cmd_reverse_binarize(args):
    import numpy as np

    from .data_io import ModelArchive, load_model, save_model
    from .experiments import rbm_from_archive
    from .reverse_map import ORTHO_TOL, binarize_descent, initial_transform, reconstruct_hn

    arc = load_model(args.model)
    rbm = rbm_from_archive(arc)
    X0 = initial_transform(args.x0, rbm, arc.matrices.get("R"), args.seed)
    sol = binarize_descent(rbm.W, X0, args.alpha, args.gamma, args.tol, args.max_iters, raise_on_stall=False)
    orthogonal = np.max(np.abs(rbm.W.T @ rbm.W - np.eye(rbm.n_hidden))) <= ORTHO_TOL
    net, report = reconstruct_hn(rbm.W, sol, "case1" if orthogonal else "case2", rbm.beta)
    out = {"converged": sol.converged, "iterations": sol.iterations, "grad_norm": sol.grad_norm,
           "binarization_error": sol.objective, "softened_objective": sol.trace[-1],
           "case": "case1" if orthogonal else "case2", "fixed_point_fraction": report.fraction_ok,
           "patterns_fixed": int(report.patterns_fixed.sum())}
    xi = arc.matrices.get("xi")
    if xi is not None and xi.shape == sol.B.shape:
        out["bits_changed"] = int(np.sum(sol.B != xi))
    if args.out:
        meta = {"source": os.path.basename(args.model), "x0": args.x0,
                "class_of_column": arc.metadata.get("class_of_column") or list(range(rbm.n_hidden))}
        save_model(ModelArchive("hopfield", sol.B.shape, rbm.beta, {"J": net.J, "b": net.b, "xi": sol.B}, meta), args.out)
        out["out"] = args.out
    return out


def cmd_classify_poe(args):
    from .data_io import load_mnist, write_metrics_csv
    from .poe import feature_map, fit_logreg, train_experts
    from .rbm import TrainConfig

    data = _load_train(args, args.subset, args.seed)
    test = load_mnist("test", args.data_root)
    if args.test_subset:
        test = test.subset(args.test_subset, args.seed)
    rows = []

    def on_epoch(epoch, ens):
        head = fit_logreg(feature_map(ens, data.samples), data.labels)
        for split, ds in (("test", test), ("train", data)):
            err = float((head.predict(feature_map(ens, ds.samples)) != ds.labels).mean())
            rows.append({"epoch": epoch, "run": 0, "metric": f"{split}_error", "value": err})

    cfg = TrainConfig(lr=args.lr, batch_size=args.batch, cd_steps=args.cd, epochs=args.epochs, seed=args.seed, beta=args.beta)
    train_experts(data, args.init, args.k, cfg, callback=on_epoch)
    if args.out:
        write_metrics_csv(rows, args.out)
    final = {r["metric"]: r["value"] for r in rows if r["epoch"] == args.epochs}
    return {"init": args.init, "k": args.k, "epochs": args.epochs, **final}


def cmd_retrieve(args):
    from .data_io import load_mnist, load_model, write_metrics_csv
    from .experiments import patterns_from_archive, rbm_from_archive
    from .hopfield import HopfieldNetwork, RetrievalConfig, retrieve_batch
    from .reverse_map import integrate_out_hidden

    arc = load_model(args.model)
    if arc.kind == "hopfield":
        net = HopfieldNetwork(arc.matrices["J"], arc.matrices.get("b"), args.beta)
    else:
        net = integrate_out_hidden(rbm_from_archive(arc))
        net.beta = args.beta
    pm = patterns_from_archive(load_model(args.patterns))
    test = load_mnist("test", args.data_root)
    if args.test_subset:
        test = test.subset(args.test_subset, args.seed)
    cfg = RetrievalConfig(beta=args.beta, ensemble=args.ensemble, threshold=args.threshold)
    results = retrieve_batch(net, pm, test.samples, cfg, args.seed)
    labels = [r.label for r in results]
    if args.out:
        rows = [{"index": i, "label": int(t), "retrieved": lab, "fixed_point": int(r.via_fixed_point)}
                for i, (t, lab, r) in enumerate(zip(test.labels, labels, results))]
        write_metrics_csv(rows, args.out, ("index", "label", "retrieved", "fixed_point"))
    correct = sum(int(a == b) for a, b in zip(labels, test.labels))
    return {"accuracy": correct / len(labels), "retrieved_fraction": sum(lab >= 0 for lab in labels) / len(labels),
            "images": len(labels)}


def cmd_render(args):
    from .experiments import render_weights

    return {"out": str(render_weights(args.model, args.out, args.shape, matrix=args.matrix))}


def cmd_experiment(args):
    from .experiments import ExperimentConfig, run_experiment

    overrides = {name: getattr(args, name) for name in
                 ("subset", "test_subset", "runs", "epochs", "chains", "ais_steps", "beta", "lr", "batch", "cd",
                  "max_iters", "ensemble", "ks", "betas", "inits")}
    cfg = ExperimentConfig.preset(args.preset, out_dir=args.out or os.path.join("runs", args.preset),
                                  seed=args.seed, data_root=args.data_root, **overrides)
    return run_experiment(cfg)


COMMANDS = {
    ("patterns", "build"): cmd_patterns_build,
    ("map", "hn2rbm"): cmd_map_hn2rbm,
    ("train", None): cmd_train,
    ("eval", "ais"): cmd_eval_ais,
    ("reverse", "binarize"): cmd_reverse_binarize,
    ("classify", "poe"): cmd_classify_poe,
    ("retrieve", None): cmd_retrieve,
    ("render", None): cmd_render,
    ("experiment", None): cmd_experiment,
}


def _error(exc: BaseException) -> dict:
    code = getattr(exc, "code", None)
    if not isinstance(code, str):
        code = {FileNotFoundError: "not_found", PermissionError: "io", ValueError: "invalid_argument"}.get(type(exc), "internal")
    return {"error": code, "type": type(exc).__name__, "message": str(exc)}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[(args.command, getattr(args, "action", None))]
    try:
        result = handler(args)
    except Exception as exc:  # reported as JSON, never as a traceback
        logging.getLogger("hoprbm").debug("command failed", exc_info=True)
        print(json.dumps(_error(exc)), file=sys.stderr)
        return 1
    print(json.dumps(result, default=float, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
