"""Metrics over environment grids, the distributional-invariance probe, and
the alpha sweep comparing the invariance learner against worst-fraction DRO.

Per-environment error is RMSE for regression (matching the scale of the
reference results) and softmax cross-entropy for classification, with
accuracy reported alongside. Mean/std/worst are taken over environments;
std uses the (|E|-1) divisor and is absent for a single environment.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .baselines import BaselineConfig, train_dro
from .exploit import ExploitConfig, SubpopWeights, _exploit_mmd
from .kernels import KernelSpec
from .models import Predictor, forward, per_sample_loss, predict_labels
from .synthdata import Dataset
from .trainer import DilConfig, run_dil

PROBE_RESTARTS = 4


@dataclass
class EnvMetrics:
    per_env: list
    mean_error: float
    std_error: float | None
    worst_error: float
    accuracy: float | None = None

    def to_dict(self) -> dict:
        out = {
            "per_env": self.per_env,
            "mean_error": self.mean_error,
            "std_error": self.std_error,
            "worst_error": self.worst_error,
        }
        if self.accuracy is not None:
            out["accuracy"] = self.accuracy
        return out


@dataclass
class InvarianceProbe:
    """Estimated worst-subpopulation discrepancy (a lower bound on the true
    supremum) and the weights achieving it."""

    delta_hat: float
    weights: SubpopWeights

    def __post_init__(self):
        if self.delta_hat < 0:
            raise ValueError("delta_hat must be nonnegative")


def env_error(model: Predictor, env: Dataset) -> dict:
    if env.n == 0:
        raise ValueError("empty environment")
    if model.task == "regression":
        resid = forward(model, env.x) - env.y
        return {"loss": float(np.sqrt(np.mean(resid ** 2)))}
    losses = per_sample_loss(model, env.x, env.y)
    acc = float(np.mean(predict_labels(model, env.x) == env.y))
    return {"loss": float(np.mean(losses)), "accuracy": acc}


def evaluate(model: Predictor, envs: list) -> EnvMetrics:
    """Mean, sample standard deviation, and max of per-environment errors."""
    if not envs:
        raise ValueError("evaluate needs at least one environment")
    per_env = []
    for i, env in enumerate(envs):
        entry = {"env": i}
        entry.update(env_error(model, env))
        per_env.append(entry)
    losses = np.array([e["loss"] for e in per_env])
    std = float(np.std(losses, ddof=1)) if len(losses) > 1 else None
    accuracy = None
    if model.task == "classification":
        accuracy = float(np.mean([e["accuracy"] for e in per_env]))
    return EnvMetrics(per_env, float(losses.mean()), std, float(losses.max()), accuracy)


def probe_invariance(phi, y, alpha0, spec: KernelSpec, cfg: ExploitConfig,
                     task: str = "regression", n_classes: int | None = None,
                     restarts: int = PROBE_RESTARTS) -> InvarianceProbe:
    """Lower-bound estimate of the worst-subpopulation conditional
    discrepancy at a fixed representation: best of `restarts` independently
    jittered ascents."""
    best_obj = -math.inf
    best_w = None
    for r in range(max(restarts, 1)):
        w, obj, _ = _exploit_mmd(phi, y, alpha0, spec,
                                 replace(cfg, seed=cfg.seed + 1000003 * r),
                                 task, n_classes=n_classes)
        if obj > best_obj:
            best_obj, best_w = obj, w
    return InvarianceProbe(max(best_obj, 0.0), best_w)


def alpha_sweep(data: Dataset, test: Dataset, alphas, methods, cfg: DilConfig) -> list:
    """Train each method at each alpha0 and record test metrics.

    Rows: {method, alpha0, test_acc, test_loss, seed}. Within a method the
    model warm-starts from the previous alpha0 cell (ascending order), which
    stabilizes the curve.
    """
    known = {"dil-mmd", "dil-kl", "dro"}
    methods = list(methods)
    for m in methods:
        if m not in known:
            raise ValueError(f"unknown sweep method {m!r}; expected one of {sorted(known)}")
    alphas = sorted(float(a) for a in alphas)
    rows = []
    for method in methods:
        model = None
        for alpha0 in alphas:
            if method == "dro":
                bcfg = BaselineConfig("dro", alpha0=alpha0,
                                      epochs=cfg.T * cfg.inner_epochs,
                                      learning_rate=cfg.learning_rate, seed=cfg.seed,
                                      arch=cfg.arch, hidden=cfg.hidden)
                model = train_dro(data, bcfg, init_model=model)
            else:
                dcfg = replace(cfg, alpha0=alpha0,
                               variant="kl" if method == "dil-kl" else "mmd")
                model, _trace = run_dil(data, dcfg, init_model=model)
            entry = env_error(model, test)
            rows.append({
                "method": method,
                "alpha0": alpha0,
                "test_acc": entry.get("accuracy"),
                "test_loss": entry["loss"],
                "seed": cfg.seed,
            })
    return rows


def sweep_to_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "alpha0", "test_acc", "test_loss", "seed"])
        for r in rows:
            acc = "" if r["test_acc"] is None else f"{r['test_acc']:.17g}"
            writer.writerow([r["method"], f"{r['alpha0']:.17g}", acc,
                             f"{r['test_loss']:.17g}", r["seed"]])
