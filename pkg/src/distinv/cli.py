"""Command-line harness: generate data, train models, evaluate over
environment grids, probe invariance, and sweep alpha0.

Every run directory is self-describing: the effective (post-default) config
is echoed next to the artifacts, and all numeric output uses 17 significant
digits so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, train_dro, train_erm
from .evaluation import env_error, evaluate, probe_invariance, alpha_sweep, sweep_to_csv
from .exploit import ExploitConfig
from .jsonio import dump17
from .kernels import KernelSpec
from .models import hidden_representation, load_predictor, save_predictor
from .synthdata import (
    Dataset,
    SelectionBiasSpec,
    SpuriousClassSpec,
    gen_selection_bias,
    gen_spurious_classification,
    load_csv,
    make_classification_suite,
    make_regression_suite,
    save_csv,
)
from .trainer import DilConfig, run_dil

CONFIG_DEFAULTS = {
    "seed": None,  # mandatory
    "model": {"arch": "linear", "hidden": 16},
    "dil": {
        "alpha0": 0.1,
        "lambda": None,  # None -> per-task default
        "T": 5,
        "inner_epochs": 500,
        "learning_rate": 0.05,
        "kernel": {"family": "rbf", "gamma": None, "degree": 2, "offset": 1.0, "beta": None},
        "exploit": {"steps": 200, "step_size": 0.5, "entropy_coeff": 1.0, "tol": 1e-7},
    },
    "baseline": {"alpha0": 0.1, "epochs": 2500, "learning_rate": 0.05},
}


def merge_config(user: dict, defaults: dict = CONFIG_DEFAULTS, path: str = "config") -> dict:
    """Overlay user keys on the defaults, rejecting unknown keys anywhere."""
    merged = copy.deepcopy(defaults)
    for key, value in user.items():
        if key not in defaults:
            raise ValueError(f"unknown key {path}.{key}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            merged[key] = merge_config(value, defaults[key], f"{path}.{key}")
        else:
            merged[key] = value
    return merged


def load_config(path) -> dict:
    with open(path) as fh:
        user = json.load(fh)
    cfg = merge_config(user)
    if cfg["seed"] is None:
        raise ValueError("config must set 'seed'")
    return cfg


def _dil_config(cfg: dict, variant: str) -> DilConfig:
    d = cfg["dil"]
    return DilConfig(
        alpha0=d["alpha0"], lam=d["lambda"], T=d["T"],
        inner_epochs=d["inner_epochs"], learning_rate=d["learning_rate"],
        variant=variant,
        kernel=KernelSpec(**d["kernel"]),
        exploit=ExploitConfig(**d["exploit"]),
        seed=cfg["seed"], arch=cfg["model"]["arch"], hidden=cfg["model"]["hidden"],
    )


def _baseline_config(cfg: dict, method: str) -> BaselineConfig:
    b = cfg["baseline"]
    return BaselineConfig(method=method, alpha0=b["alpha0"], epochs=b["epochs"],
                          learning_rate=b["learning_rate"], seed=cfg["seed"],
                          arch=cfg["model"]["arch"], hidden=cfg["model"]["hidden"])


def _echo_config(cfg: dict, outdir: Path, extra: dict) -> None:
    echo = copy.deepcopy(cfg)
    echo.update(extra)
    dump17(echo, outdir / "config.json")


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    if args.task == "selection-bias":
        spec = SelectionBiasSpec(n=args.n, r=args.r, seed=args.seed,
                                 noise_sd=args.noise_sd)
        data = gen_selection_bias(spec)
    else:
        spec = SpuriousClassSpec(n=args.n, r=args.r, d=args.d, seed=args.seed)
        data = gen_spurious_classification(spec)
    save_csv(data, args.out)
    return 0


def cmd_gen_suite(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.task == "regression":
        train, tests = make_regression_suite(args.r1, args.seed,
                                             n_major=args.n_train, n_minor=args.n_minor,
                                             n_test=args.n_test)
        save_csv(train, outdir / "train.csv")
        from .synthdata import REGRESSION_TEST_RATES
        for rate, env in zip(REGRESSION_TEST_RATES, tests):
            save_csv(env, outdir / f"test_r{rate:+.1f}.csv")
    else:
        train, test = make_classification_suite(args.r2, args.seed, d=args.d,
                                                n_train=args.n_train, n_test=args.n_test)
        save_csv(train, outdir / "train.csv")
        save_csv(test, outdir / "test_r+0.0.csv")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    data = load_csv(args.data)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    trace = None
    if args.method in ("erm", "dro"):
        bcfg = _baseline_config(cfg, args.method)
        model = train_erm(data, bcfg) if args.method == "erm" else train_dro(data, bcfg)
        extra = {"method": args.method}
    else:
        variant = "kl" if args.method == "dil-kl" else "mmd"
        dcfg = _dil_config(cfg, variant)
        model, trace = run_dil(data, dcfg)
        extra = {"method": args.method,
                 "resolved_lambda": dcfg.resolved_lambda(data.task)}
    save_predictor(model, outdir / "checkpoint.json")
    if trace is not None:
        trace.to_csv(outdir / "trace.csv")
    _echo_config(cfg, outdir, extra)
    return 0


def cmd_eval(args) -> int:
    model = load_predictor(args.model)
    files = sorted(Path(args.data_dir).glob("*.csv"))
    if not files:
        raise ValueError(f"no CSV environments found in {args.data_dir}")
    envs = [load_csv(f) for f in files]
    metrics = evaluate(model, envs)
    payload = metrics.to_dict()
    for entry, f in zip(payload["per_env"], files):
        entry["file"] = f.name
    dump17(payload, args.out)
    return 0


def cmd_probe(args) -> int:
    model = load_predictor(args.model)
    data = load_csv(args.data)
    phi = hidden_representation(model, data.x)
    n_classes = data.n_classes if data.task == "classification" else None
    probe = probe_invariance(
        phi, data.y, args.alpha0, KernelSpec(), ExploitConfig(seed=args.seed),
        task=data.task, n_classes=n_classes)
    dump17({"alpha0": args.alpha0, "delta_hat": probe.delta_hat,
            "support_size": probe.weights.support_size}, args.out)
    if args.weights_out:
        with open(args.weights_out, "w") as fh:
            fh.write("w\n")
            for v in probe.weights.w:
                fh.write(f"{v:.17g}\n")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    data = load_csv(args.data)
    test = load_csv(args.test)
    try:
        start, stop, step = (float(v) for v in args.alphas.split(":"))
    except ValueError as exc:
        raise ValueError(f"--alphas must be start:stop:step, got {args.alphas!r}") from exc
    alphas = np.arange(start, stop + 0.5 * step, step).round(12).tolist()
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    dcfg = _dil_config(cfg, "mmd")
    rows = alpha_sweep(data, test, alphas, methods, dcfg)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    sweep_to_csv(rows, outdir / "sweep.csv")
    _echo_config(cfg, outdir, {"methods": methods, "alphas": alphas})
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distinv",
                                     description="subpopulation-robust training harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate one synthetic environment as CSV")
    p.add_argument("--task", choices=["selection-bias", "spurious-class"], required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int, default=5, help="per-block dim (spurious-class)")
    p.add_argument("--noise-sd", type=float, default=SelectionBiasSpec(1, 1.5).noise_sd)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("gen-suite", help="generate a full train/test grid")
    p.add_argument("--task", choices=["regression", "classification"], required=True)
    p.add_argument("--r1", type=float, default=1.5, help="majority bias rate (regression)")
    p.add_argument("--r2", type=float, default=0.75, help="second-group rate (classification)")
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-minor", type=int, default=200)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_suite)

    p = sub.add_parser("train", help="train a model and write its run directory")
    p.add_argument("--method", choices=["erm", "dro", "dil-mmd", "dil-kl"], required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint over a directory of environments")
    p.add_argument("--model", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="estimate worst-subpopulation discrepancy for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--alpha0", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--weights-out", default=None)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("sweep", help="train methods across an alpha0 grid")
    p.add_argument("--alphas", required=True, help="start:stop:step")
    p.add_argument("--methods", required=True, help="comma-separated: dil-mmd,dil-kl,dro")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
