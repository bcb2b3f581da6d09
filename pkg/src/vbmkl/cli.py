"""Command-line entry point: kernels, train, predict, bench.

Every subcommand is deterministic given its inputs and --seed; config files
are flat ``key = value`` text and explicit flags override file values.
Exit status is 0 exactly when the requested artifact was fully written.
"""

import argparse
import json
import logging
import sys
import time

import numpy as np

from . import bench as bench_mod
from .bench import ExperimentConfig, load_dataset, run_benchmark, standardize
from .engine import HyperParams, fit
from .kernels import build_feature_bank, load_bundle, save_bundle
from .model import load_model, save_model
from .predict import format_predictions, predict, selected_kernels

__all__ = ["main", "entry", "build_parser", "parse_config_file"]


def parse_config_file(path):
    """Flat ``key = value`` text; blank lines and # comments ignored."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


# flag name -> (config key, conversion)
_CONFIG_KEYS = {
    "scenario": ("scenario", str),
    "nu": ("nu", float),
    "iterations": ("iterations", int),
    "seed": ("base_seed", int),
    "threads": ("threads", int),
    "replications": ("replications", int),
    "train_fraction": ("train_fraction", float),
    "dataset": ("dataset", str),
    "features": ("features", str),
    "test": ("test", str),
    "out": ("out", str),
}

_DEFAULTS = {
    "scenario": "non-sparse",
    "nu": 1.0,
    "iterations": 200,
    "seed": 0,
    "threads": 1,
    "replications": 20,
    "train_fraction": 0.7,
    "dataset": None,
    "features": None,
    "test": None,
    "out": None,
}


def _effective(args, names):
    """Merge defaults < config file < explicit flags for the given names."""
    file_values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    out = {}
    for name in names:
        cfg_key, conv = _CONFIG_KEYS[name]
        value = _DEFAULTS[name]
        if cfg_key in file_values:
            value = conv(file_values[cfg_key])
        flag = getattr(args, name, None)
        if flag is not None:
            value = flag
        out[name] = value
    return out


def _show_config(values):
    for key in sorted(values):
        print(f"{key} = {values[key]}")


def _require(value, flag):
    if value is None:
        raise ValueError(f"missing required flag {flag}")
    return value


def _read_labels(path):
    with open(path, "r", encoding="utf-8") as fh:
        entries = [ln.strip() for ln in fh if ln.strip()]
    if not entries:
        raise ValueError(f"label file {path} is empty")
    try:
        y = np.asarray([int(float(v)) for v in entries])
    except ValueError:
        raise ValueError("binary training labels must be -1/+1 numbers") from None
    return y


def _write_labels(path, labels):
    with open(path, "w", encoding="utf-8") as fh:
        for v in labels:
            fh.write(f"{v}\n")


def cmd_kernels(args):
    eff = _effective(args, ("features", "test", "out"))
    eff["normalize"] = not args.no_normalize
    if args.show_config:
        _show_config(eff)
        return 0
    features = _require(eff["features"], "--features")
    out = _require(eff["out"], "--out")

    data = load_dataset(features)
    test = load_dataset(eff["test"]) if eff["test"] else None
    data, test, _stats = standardize(data, test)
    t0 = time.perf_counter()
    bundle = build_feature_bank(data, test, normalize=not args.no_normalize)
    seconds = time.perf_counter() - t0
    save_bundle(bundle, out)
    if data.labels is not None:
        _write_labels(out + ".labels", data.labels)
    if test is not None and test.labels is not None:
        _write_labels(out + ".test-labels", test.labels)
    if args.no_normalize:
        print("spherical normalization skipped (--no-normalize)")
    print(f"P={bundle.n_kernels} N={bundle.n_train} N_test={bundle.n_test} "
          f"seconds={seconds:.3f}")
    return 0


def cmd_train(args):
    eff = _effective(args, ("scenario", "nu", "iterations", "seed"))
    hp = bench_mod.scenario_hyperparams(
        eff["scenario"], nu=eff["nu"], iterations=eff["iterations"]
    )
    if args.show_config:
        _show_config({"bundle": args.bundle, "labels": args.labels, "out": args.out,
                      "scenario": eff["scenario"], "nu": eff["nu"],
                      "iterations": eff["iterations"], "seed": eff["seed"],
                      "alpha_omega": hp.alpha_omega, "beta_omega": hp.beta_omega})
        return 0
    bundle_path = _require(args.bundle, "--bundle")
    out = _require(args.out, "--out")
    labels_path = args.labels or (bundle_path + ".labels")

    bundle = load_bundle(bundle_path)
    y = _read_labels(labels_path)
    print(f"scenario={eff['scenario']} alpha_omega={hp.alpha_omega:g} "
          f"beta_omega={hp.beta_omega:g} nu={hp.nu:g}")
    rng = np.random.default_rng(eff["seed"]) if args.random_init else None
    model = fit(bundle, y, hp, rng=rng)
    save_model(model, out)
    print(f"iterations={model.iterations_run} elbo={model.final_elbo:.6f} "
          f"seconds={model.meta['inference_seconds']:.3f}")
    return 0


def cmd_predict(args):
    if args.show_config:
        _show_config({"model": args.model, "bundle": args.bundle, "out": args.out})
        return 0
    model_path = _require(args.model, "--model")
    bundle_path = _require(args.bundle, "--bundle")
    out = _require(args.out, "--out")

    model = load_model(model_path)
    bundle = load_bundle(bundle_path)
    if bundle.n_kernels != model.n_kernels:
        raise ValueError(
            f"bundle has {bundle.n_kernels} kernels but model expects {model.n_kernels}"
        )
    if bundle.n_test > 0:
        kx = bundle.cross_kernels
        truth_path = bundle_path + ".test-labels"
    else:
        # no cross block: score the training points themselves
        kx = bundle.train_kernels
        truth_path = bundle_path + ".labels"
    with_g_var = model.posterior.a_cov is not None
    pred = predict(model, kx, with_g_var=with_g_var)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(format_predictions(pred))
    n_rows = np.atleast_1d(pred.f_mean).size
    print(f"rows={n_rows}")
    try:
        truth = _read_labels(truth_path)
    except (OSError, ValueError):
        truth = None
    if truth is not None and truth.size == n_rows:
        acc = float(np.mean(pred.label == truth))
        print(f"accuracy={acc:.4f}")
    return 0


def cmd_bench(args):
    eff = _effective(
        args,
        ("dataset", "scenario", "nu", "iterations", "seed", "threads",
         "replications", "train_fraction", "out"),
    )
    if args.show_config:
        _show_config(eff)
        return 0
    dataset = _require(eff["dataset"], "--config dataset entry")
    out = eff["out"] or "bench"
    config = ExperimentConfig(
        dataset=dataset,
        replications=eff["replications"],
        train_fraction=eff["train_fraction"],
        scenario=eff["scenario"],
        base_seed=eff["seed"],
        iterations=eff["iterations"],
        nu=eff["nu"],
        threads=eff["threads"],
    )
    result = run_benchmark(config)
    table_path = out + "_results.csv"
    summary_path = out + "_summary.json"
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write(result.table_text())
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(result.summary_dict(), fh, indent=2)
        fh.write("\n")
    agg = result.aggregates()
    print(f"replications={len(result.rows)} "
          f"accuracy={agg['accuracy_pct']['mean']:.2f}±{agg['accuracy_pct']['std']:.2f} "
          f"selected={agg['selected_count']['mean']:.2f}±{agg['selected_count']['std']:.2f} "
          f"seconds={agg['train_seconds']['mean']:.2f}")
    print(f"wrote {table_path} and {summary_path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vbmkl",
        description="Multiple kernel learning with variational Bayes: "
                    "build kernel banks, train, predict and benchmark.",
    )
    parser.add_argument("--verbose", action="store_true",
                        help="log per-iteration ELBO lines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kernels", help="build a kernel bundle from feature files")
    p.add_argument("--features", help="training feature file (label in last column)")
    p.add_argument("--test", help="optional test feature file")
    p.add_argument("--out", help="output bundle path")
    p.add_argument("--no-normalize", action="store_true",
                   help="skip spherical normalization")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--show-config", action="store_true",
                   help="print the effective configuration and exit")
    p.set_defaults(func=cmd_kernels)

    p = sub.add_parser("train", help="fit a binary model on a kernel bundle")
    p.add_argument("--bundle", help="kernel bundle path")
    p.add_argument("--labels", help="label file, one -1/+1 per line "
                                    "(default: <bundle>.labels)")
    p.add_argument("--out", help="output model path")
    p.add_argument("--model", help="alias for --out", dest="out_alias")
    p.add_argument("--scenario", choices=bench_mod.SCENARIOS,
                   help="hyperprior preset (default non-sparse)")
    p.add_argument("--nu", type=float, help="truncation margin (default 1)")
    p.add_argument("--iterations", type=int, help="sweep count (default 200)")
    p.add_argument("--seed", type=int, help="seed for --random-init (default 0)")
    p.add_argument("--random-init", action="store_true",
                   help="randomize the starting factor means")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--show-config", action="store_true",
                   help="print the effective configuration and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score a bundle with a trained model")
    p.add_argument("--model", help="trained model path")
    p.add_argument("--bundle", help="kernel bundle path")
    p.add_argument("--out", help="output prediction table path")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--show-config", action="store_true",
                   help="print the effective configuration and exit")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="run the replication benchmark protocol")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--dataset", help="dataset file (features + label column)")
    p.add_argument("--out", help="output path prefix (default 'bench')")
    p.add_argument("--scenario", choices=bench_mod.SCENARIOS,
                   help="hyperprior preset (default non-sparse)")
    p.add_argument("--replications", type=int, help="replication count (default 20)")
    p.add_argument("--train-fraction", type=float, dest="train_fraction",
                   help="training fraction (default 0.7)")
    p.add_argument("--nu", type=float, help="truncation margin (default 1)")
    p.add_argument("--iterations", type=int, help="sweep count (default 200)")
    p.add_argument("--seed", type=int, help="base seed (default 0)")
    p.add_argument("--threads", type=int, help="parallel replication workers (default 1)")
    p.add_argument("--show-config", action="store_true",
                   help="print the effective configuration and exit")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(name)s %(message)s",
    )
    if getattr(args, "out_alias", None) and not args.out:
        args.out = args.out_alias
    try:
        return args.func(args)
    except Exception as exc:  # CLI boundary: report, don't traceback
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
