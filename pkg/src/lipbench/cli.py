"""Command-line entry point: ``lipbench <command> [--config FILE] [--key value ...]``.

Every command writes ``config.echo`` and ``summary.json`` into its output
directory, plus CSV rows. Exit codes: 0 success, 2 usage/config/missing
input, 3 numerical failure (training divergence).
"""
from __future__ import annotations

import argparse
import contextlib
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .cover import MarginConfigError, OneNNModel, required_samples, run_cover_experiment
from .datasets import AugmentConfig, LabeledDataset, subsample, write_cache
from .experiments import (ExperimentRecord, ScalingPlan, load_experiment_data, nn_distance_profile,
                          estimate_intrinsic_dim, IntrinsicDimError, run_compute_scaling, run_scaling,
                          summarize_records, svg_line_chart, write_rows_csv, write_summary_json)
from .hypercube import LEARNERS, run_no_free_robustness
from .lipnet import (LossSpec, TrainingDiverged, evaluate, load_checkpoint,
                     save_checkpoint, train)
from .numerics import RandomSource
from .pca import build_pca_datasets, fit_pca, normalize_indices
from .smoothing import SmoothingConfig, smooth_dataset

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
NAN = float("nan")

COMMON = {
    "seed": ("int", 0, "master random seed"),
    "out": ("str", "", "output directory (default runs/<command>)"),
    "threads": ("int", 0, "cap on BLAS threads (0 = library default)"),
    "data_root": ("str", "", "data folder (default $LIPBENCH_DATA or ./data)"),
    "timing": ("bool", False, "write real wall-clock seconds into rows.csv"),
}

MODEL = {
    "width": ("int", 256, "hidden width"),
    "depth": ("int", 8, "number of dense layers"),
    "kind": ("str", "aol", "layer type: aol, cpl or standard"),
    "init": ("str", "identity", "identity, orthogonal or uniform"),
    "loss": ("str", "offset-ce", "temperature-ce, offset-ce or selfnorm-ce"),
    "offset": ("float", 0.25, "offset of offset-ce"),
    "temperature": ("float", 0.25, "temperature of temperature-ce / offset-ce"),
    "tradeoff": ("float", 0.1, "trade-off t of selfnorm-ce"),
    "lr": ("float", 0.1, "peak learning rate"),
    "batch_size": ("int", 256, "minibatch size"),
    "epsilon": ("float", 36.0 / 255.0, "L2 radius for certified robust accuracy"),
    "augment": ("bool", False, "random crops (and the flip/erase options below)"),
    "crop_padding": ("int", 4, "zero padding for random crops"),
    "flip": ("bool", False, "random horizontal flips"),
    "erase": ("bool", False, "random erasing"),
    "noise_sigma": ("float", 0.0, "Gaussian input noise during training"),
}

SCHEMAS = {
    "nfr": {
        "n": ("int", 16, "training set size"),
        "trials": ("int", 200, "number of sampled labelings"),
        "learner": ("str", "memorize", "memorize, sign, oracle or all"),
        "test_per_trial": ("int", 1000, "test points per trial"),
        "delta": ("float", 0.1, "magnitude of the non-robust feature"),
        "d": ("int", 0, "dimension (0 = ceil(log2 n) + 7)"),
    },
    "cover": {
        "d": ("int", 2, "dimension"),
        "delta": ("float", 0.125, "L-inf margin"),
        "n": ("int", 0, "training set size (0 = 37 * ceil(1/delta)^d)"),
        "trials": ("int", 20, "independent training sets"),
        "test_per_trial": ("int", 1000, "test points per trial"),
        "cell": ("float", 0.5, "grid cell width of the label pattern"),
    },
    "train": {
        "dataset": ("str", "mnist32", "mnist32, mnist or cifar10"),
        "n": ("int", 2048, "training subsample size (0 = all)"),
        "test_n": ("int", 0, "test samples used (0 = all)"),
        "epochs": ("int", 40, "training epochs"),
        **MODEL,
    },
    "scale": {
        "dataset": ("str", "mnist32", "mnist32, mnist or cifar10"),
        "sizes": ("ints", (512, 2048, 8192), "ascending subsample sizes"),
        "seeds": ("ints", (0,), "seeds, one run per size and seed"),
        "base_epochs": ("int", 40, "epochs at the largest size"),
        "epoch_scaling": ("bool", True, "k-times smaller subsample trains k-times longer"),
        "compute_epochs": ("ints", (), "if set, vary epochs at the smallest size instead"),
        "test_n": ("int", 0, "test samples used (0 = all)"),
        **MODEL,
    },
    "pca": {
        "dataset": ("str", "cifar10", "mnist32, mnist or cifar10"),
        "ranges": ("str", "1-16", "';'-separated component sets, e.g. 1-16;513-3072;1-16,513-3072"),
        "epochs": ("int", 0, "train an MLP on each projected dataset when > 0"),
        "n": ("int", 0, "training subsample for the MLPs (0 = all)"),
        "test_n": ("int", 0, "test samples used (0 = all)"),
        "save_datasets": ("bool", False, "write projected datasets in the LBDS1 cache format"),
        **MODEL,
    },
    "smooth": {
        "dataset": ("str", "mnist32", "mnist32, mnist or cifar10"),
        "model": ("str", "1nn", "'1nn' or the path of a network checkpoint"),
        "n": ("int", 2048, "training subsample for the 1-NN base classifier"),
        "test_n": ("int", 100, "number of test points to certify"),
        "sigma": ("float", 0.125, "noise standard deviation"),
        "samples": ("int", 1000, "Monte-Carlo samples per point"),
        "epsilon": ("float", 36.0 / 255.0, "radius at which a point counts as certified"),
    },
    "nndist": {
        "dataset": ("str", "mnist32", "mnist32, mnist, cifar10 or uniform:<dim>"),
        "sizes": ("ints", (500, 1000, 2000, 4000, 8000), "nested training subset sizes"),
        "test_n": ("int", 1000, "test points"),
        "metric": ("str", "l2", "l2, linf or angular"),
    },
}

for _schema in SCHEMAS.values():
    _schema.update(COMMON)


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lipbench", description="Certified-robustness experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="flat key = value file; flags override it")
        for key, (kind, default, help_text) in schema.items():
            flag = "--" + key.replace("_", "-")
            shown = cfgmod.format_value(kind, default)
            p.add_argument(flag, dest=key, metavar=kind.upper(), help=f"{help_text} [{shown}]")
    return parser


def _params(args) -> dict:
    schema = SCHEMAS[args.command]
    cli_values = {k: v for k, v in vars(args).items() if k in schema}
    file_values = {}
    if getattr(args, "config", None):
        file_values = cfgmod.read_config_file(args.config)
        cmd = file_values.pop("command", args.command)
        if cmd != args.command:
            raise cfgmod.ConfigError(f"config file is for command {cmd!r}, not {args.command!r}")
    params = cfgmod.resolve(schema, file_values, cli_values)
    if not params["out"]:
        params["out"] = str(Path("runs") / args.command)
    return params


def _loss(p) -> LossSpec:
    return LossSpec(p["loss"], offset=p["offset"], temperature=p["temperature"], tradeoff=p["tradeoff"])


def _augment(p) -> AugmentConfig:
    if not p["augment"]:
        return AugmentConfig.off()
    return AugmentConfig(crop_padding=p["crop_padding"], horizontal_flip=p["flip"], random_erase=p["erase"])


def _data(p):
    train_ds, test_ds = load_experiment_data(p["dataset"], p["data_root"] or None)
    if p.get("test_n"):
        test_ds = test_ds.take(np.arange(min(p["test_n"], test_ds.n)))
    return train_ds, test_ds


def _plan(p, **extra) -> ScalingPlan:
    return ScalingPlan(dataset=p["dataset"], width=p["width"], depth=p["depth"], kind=p["kind"],
                       init=p["init"], loss=_loss(p), peak_lr=p["lr"], batch_size=p["batch_size"],
                       epsilon=p["epsilon"], augment=_augment(p), noise_sigma=p["noise_sigma"], **extra)


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def cmd_nfr(p, out):
    names = sorted(LEARNERS) if p["learner"] == "all" else [p["learner"]]
    if any(name not in LEARNERS for name in names):
        raise UsageError(f"unknown learner {p['learner']!r}; expected one of {sorted(LEARNERS)} or 'all'")
    rng = RandomSource(p["seed"]).split("nfr")
    rows, summary = [], {"learners": {}}
    for name in names:
        res = run_no_free_robustness(p["n"], p["trials"], p["test_per_trial"], LEARNERS[name](),
                                     rng, d=p["d"] or None, delta=p["delta"])
        for t in res.trials:
            rows.append(ExperimentRecord(f"nfr-{name}-d{res.d}", res.n, t.trial, t.clean_acc, t.adv_acc,
                                         t.train_acc, t.train_adv_acc, 0.0))
        summary["learners"][name] = {
            "d": res.d, "mean_adversarial_accuracy": res.mean_adv_acc, "ci95_half_width": res.half_width,
            "mean_clean_accuracy": res.mean_clean_acc, "analytic_ceiling": res.ceiling,
        }
        print(f"nfr {name}: n={res.n} d={res.d} adversarial accuracy {res.mean_adv_acc:.4f} "
              f"+/- {res.half_width:.4f}, clean {res.mean_clean_acc:.4f}, ceiling {res.ceiling:.4f}")
    return rows, summary, None


def cmd_cover(p, out):
    d, delta = p["d"], p["delta"]
    try:
        n = p["n"] or required_samples(delta, d)
    except ValueError as exc:
        raise MarginConfigError(str(exc)) from None
    print(f"cover: d={d} delta={delta} n={n}")
    rng = RandomSource(p["seed"]).split("cover")
    res = run_cover_experiment(d, delta, n, p["trials"], p["test_per_trial"], rng, cell_width=p["cell"])
    rows = []
    for t in res.trials:
        rows.append(ExperimentRecord(f"cover-d{d}", n, t.trial, t.clean_acc, t.robust_acc,
                                     t.train_acc, t.train_robust_acc, 0.0))
    print(f"cover: robust accuracy at L-inf radius delta/2 {res.mean_robust_acc:.4f} "
          f"+/- {res.half_width:.4f}; covering bound {res.bound:.4f}")
    summary = {"n": n, "mean_robust_accuracy": res.mean_robust_acc, "ci95_half_width": res.half_width,
               "covering_bound": res.bound,
               "mean_box_occupancy": float(np.mean([t.occupancy for t in res.trials]))}
    return rows, summary, None


def cmd_train(p, out):
    train_ds, test_ds = _data(p)
    n = p["n"] or train_ds.n
    sub = subsample(train_ds, n, p["seed"]) if n < train_ds.n else train_ds
    plan = _plan(p, sizes=(n,), base_epochs=p["epochs"], epoch_scaling=False, seeds=(p["seed"],))
    net = plan.make_net(train_ds.dim, train_ds.class_count, p["seed"])
    cfg = plan.train_config(n, p["seed"])
    t0 = time.perf_counter()
    history = []
    try:
        net, history = train(net, sub, cfg, log=lambda e: _log(
            f"epoch {e['epoch']}: loss {e['loss']:.4f} acc {e['batch_acc']:.4f} cra {e['batch_cra']:.4f}"))
    except TrainingDiverged as exc:
        rec = ExperimentRecord("train", n, p["seed"], NAN, NAN, NAN, NAN, time.perf_counter() - t0,
                               cfg.epochs, "diverged")
        return [rec], {"status": "diverged", "error": str(exc), "history": exc.history}, exc
    te = evaluate(net, test_ds, cfg.epsilon)
    save_checkpoint(net, out / "model.lnet")
    rec = ExperimentRecord("train", n, p["seed"], te["acc"], te["cra"], history[-1]["train_acc"],
                           history[-1]["train_cra"], time.perf_counter() - t0, cfg.epochs)
    print(f"train: test acc {te['acc']:.4f} cra {te['cra']:.4f}; "
          f"train acc {rec.train_acc:.4f} cra {rec.train_cra:.4f}")
    return [rec], {"status": "ok", "test": te, "history": history, "checkpoint": "model.lnet"}, None


def cmd_scale(p, out):
    train_ds, test_ds = _data(p)
    plan = _plan(p, sizes=p["sizes"], seeds=p["seeds"], base_epochs=p["base_epochs"],
                 epoch_scaling=p["epoch_scaling"])
    if p["compute_epochs"]:
        rows = run_compute_scaling(plan, train_ds, test_ds, plan.sizes[0], p["compute_epochs"], log=_log)
        series = {"test CRA": [(r.epochs, r.cra) for r in rows], "test acc": [(r.epochs, r.clean_acc) for r in rows]}
        xlabel = "epochs"
    else:
        rows = run_scaling(plan, train_ds, test_ds, log=_log)
        agg = summarize_records(rows)
        series = {"test CRA": [(int(k), v["cra"]) for k, v in agg.items()],
                  "test acc": [(int(k), v["clean_acc"]) for k, v in agg.items()]}
        xlabel = "training set size"
    svg_line_chart(out / "plot.svg", series, title=f"{p['dataset']} scaling", xlabel=xlabel, ylabel="accuracy")
    summary = {"per_size": summarize_records(rows),
               "epochs": {str(n): plan.epochs_for(n) for n in plan.sizes},
               "diverged": sum(r.status != "ok" for r in rows)}
    return rows, summary, None


def cmd_pca(p, out):
    train_ds, test_ds = _data(p)
    model = fit_pca(train_ds)
    specs = [s.strip() for s in p["ranges"].split(";") if s.strip()]
    for s in specs:
        normalize_indices(s, model.dim)
    pairs = build_pca_datasets(train_ds, test_ds, specs, model=model)
    summary = {"dimension": model.dim, "variance_fraction": {}}
    rows = []
    with open(out / "variance.csv", "w") as f:
        f.write("ranges,components,variance_fraction\n")
        for pair in pairs:
            f.write(f"{pair.ranges},{len(pair.indices)},{pair.variance_fraction:.6f}\n")
            summary["variance_fraction"][pair.ranges] = pair.variance_fraction
            print(f"pca: components {pair.ranges}: variance fraction {pair.variance_fraction:.4f}")
            tag = pair.ranges.replace(",", "+")
            if p["save_datasets"]:
                write_cache(pair.train, out / f"train_{tag}.lbds")
                write_cache(pair.test, out / f"test_{tag}.lbds")
            if p["epochs"] > 0:
                n = p["n"] or pair.train.n
                plan = _plan(p, sizes=(n,), base_epochs=p["epochs"], epoch_scaling=False,
                             seeds=(p["seed"],), experiment=f"pca-{tag}")
                rows += run_scaling(plan, pair.train, pair.test, log=_log)
    if any(r.status != "ok" for r in rows):
        return rows, summary, TrainingDiverged(0, 0, p["lr"], NAN, [])
    return rows, summary, None


def cmd_smooth(p, out):
    train_ds, test_ds = _data(p)
    if p["model"] == "1nn":
        base = OneNNModel.fit(subsample(train_ds, min(p["n"], train_ds.n), p["seed"]), "l2")

        def predict(X):
            return base.query(X)[0]
    else:
        path = Path(p["model"])
        if not path.exists():
            raise FileNotFoundError(f"checkpoint {path} not found")
        predict = load_checkpoint(path).predict
    scfg = SmoothingConfig(p["sigma"], p["samples"], p["seed"])
    results = smooth_dataset(predict, test_ds, scfg)
    with open(out / "samples.csv", "w") as f:
        f.write("sample_id,top_class,correct,radius\n")
        for r in results:
            f.write(f"{r.sample_id},{r.top_class},{int(r.correct)},{r.radius:.6f}\n")
    acc = float(np.mean([r.correct for r in results]))
    cert = float(np.mean([r.correct and r.radius > p["epsilon"] for r in results]))
    print(f"smooth: sigma={scfg.sigma} samples={scfg.samples}: smoothed accuracy {acc:.4f}, "
          f"certified at {p['epsilon']:.4f}: {cert:.4f}")
    rows = [ExperimentRecord("smooth", test_ds.n, p["seed"], acc, cert, NAN, NAN, 0.0)]
    summary = {"sigma": scfg.sigma, "samples": scfg.samples, "smoothed_accuracy": acc,
               "certified_accuracy": cert,
               "median_radius": float(np.median([r.radius for r in results]))}
    return rows, summary, None


def _uniform_data(spec, sizes, test_n, seed):
    try:
        dim = int(spec.split(":", 1)[1])
    except ValueError:
        raise UsageError(f"bad synthetic dataset {spec!r}; use uniform:<dim>") from None
    rng = RandomSource(seed).split("uniform")
    n = max(sizes)
    train_ds = LabeledDataset(rng.split("train").random((n, dim)), np.zeros(n, np.int64), (), 1)
    test_ds = LabeledDataset(rng.split("test").random((test_n, dim)), np.zeros(test_n, np.int64), (), 1)
    return train_ds, test_ds


def cmd_nndist(p, out):
    if p["dataset"].startswith("uniform:"):
        train_ds, test_ds = _uniform_data(p["dataset"], p["sizes"], p["test_n"], p["seed"])
    else:
        train_ds, test_ds = _data(p)
    profile = nn_distance_profile(train_ds, test_ds, p["sizes"], metric=p["metric"], seed=p["seed"])
    with open(out / "profile.csv", "w") as f:
        f.write("n,median_distance\n")
        f.writelines(f"{n},{r:.6f}\n" for n, r in profile)
    summary = {"metric": p["metric"], "profile": profile}
    try:
        summary["intrinsic_dimension"] = estimate_intrinsic_dim(profile)
        print(f"nndist: intrinsic dimension estimate {summary['intrinsic_dimension']:.3f}")
    except IntrinsicDimError as exc:
        summary["intrinsic_dimension"] = None
        summary["estimation_error"] = str(exc)
        print(f"nndist: {exc}")
    svg_line_chart(out / "plot.svg", {f"median {p['metric']} 1-NN distance": profile},
                   title=f"{p['dataset']} nearest-neighbour distances", xlabel="n", ylabel="distance")
    return None, summary, None


COMMANDS = {"nfr": cmd_nfr, "cover": cmd_cover, "train": cmd_train, "scale": cmd_scale,
            "pca": cmd_pca, "smooth": cmd_smooth, "nndist": cmd_nndist}


def _threads(n):
    if n and n > 0:
        from threadpoolctl import threadpool_limits
        return threadpool_limits(limits=n)
    return contextlib.nullcontext()


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        params = _params(args)
        out = Path(params["out"])
        out.mkdir(parents=True, exist_ok=True)
        schema = SCHEMAS[args.command]
        cfgmod.write_echo(out / "config.echo", args.command, schema, params)
        t0 = time.perf_counter()
        with _threads(params["threads"]):
            rows, summary, failure = COMMANDS[args.command](params, out)
    except (cfgmod.ConfigError, UsageError, MarginConfigError, FileNotFoundError, ValueError) as exc:
        print(f"lipbench {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"lipbench {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if rows is not None:
        write_rows_csv(out / "rows.csv", rows, timing=params["timing"])
        summary["wall_seconds_per_row"] = [r.wall_seconds for r in rows]
    summary.update({"command": args.command, "params": params,
                    "wall_seconds": time.perf_counter() - t0})
    write_summary_json(out / "summary.json", summary)
    if failure is not None:
        print(f"lipbench {args.command}: training diverged: {failure}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
