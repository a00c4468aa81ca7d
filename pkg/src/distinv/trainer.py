"""Variation elimination and the full exploitation/elimination training loop.

Elimination minimizes  loss + lambda * ||grad loss(P) - grad loss(Q)||^2
by deterministic full-batch descent with backtracking; the penalty gradient
is 2 (H_P - H_Q)(g_P - g_Q), realized with Hessian-vector products.

The outer loop alternates exploitation on the current representation (raw
inputs for linear models, hidden activations for mlp2) with elimination,
warm-starting both the weights and the model across rounds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .exploit import ExploitConfig, SubpopWeights, _exploit_kl, _exploit_mmd
from .kernels import KernelSpec
from .models import (
    Batch,
    Predictor,
    grad_params,
    hidden_representation,
    init_predictor,
    loss,
    loss_hvp,
)
from .optim import descend
from .rng import derive_stream
from .synthdata import Dataset

DEFAULT_LAMBDA = {"regression": 10.0, "classification": 2.0}


@dataclass
class DilConfig:
    """Full run recipe: subpopulation scale, penalty weight, loop sizes,
    kernel and ascent settings, model architecture, seed.

    lam=None resolves to the per-task default (see DEFAULT_LAMBDA); the CLI
    key for it is "lambda".
    """

    alpha0: float
    lam: float | None = None
    T: int = 5
    inner_epochs: int = 500
    learning_rate: float = 0.05
    variant: str = "mmd"
    kernel: KernelSpec = field(default_factory=KernelSpec)
    exploit: ExploitConfig = field(default_factory=ExploitConfig)
    seed: int = 0
    arch: str = "linear"
    hidden: int = 16

    def __post_init__(self):
        if not 0.0 < self.alpha0 < 0.5:
            raise ValueError(f"alpha0 must lie in (0, 0.5), got {self.alpha0}")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.T < 1 or self.inner_epochs < 1:
            raise ValueError("T and inner_epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.variant not in ("mmd", "kl"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.arch not in ("linear", "mlp2"):
            raise ValueError(f"unknown architecture {self.arch!r}")

    def resolved_lambda(self, task: str) -> float:
        return DEFAULT_LAMBDA[task] if self.lam is None else self.lam


@dataclass
class DilTrace:
    """Per-outer-round observability: exploited objective, penalty and
    training loss after elimination, and the weight support size."""

    t: list = field(default_factory=list)
    exploit_objective: list = field(default_factory=list)
    penalty: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    support_size: list = field(default_factory=list)

    def append(self, t, objective, penalty, train_loss, support):
        self.t.append(int(t))
        self.exploit_objective.append(float(objective))
        self.penalty.append(float(penalty))
        self.train_loss.append(float(train_loss))
        self.support_size.append(int(support))

    def __len__(self):
        return len(self.t)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "exploit_objective", "penalty", "train_loss", "support_size"])
            for i in range(len(self.t)):
                writer.writerow([
                    self.t[i], f"{self.exploit_objective[i]:.17g}",
                    f"{self.penalty[i]:.17g}", f"{self.train_loss[i]:.17g}",
                    self.support_size[i],
                ])


def _check_same_samples(full: Batch, weighted: Batch):
    if full.x.shape != weighted.x.shape or not (
            full.x is weighted.x or np.array_equal(full.x, weighted.x)):
        raise ValueError("full and weighted batches must cover the same samples")


def invariance_penalty(model: Predictor, full: Batch, weighted: Batch, params=None) -> float:
    """Squared norm of the gradient misalignment between the pooled batch and
    the reweighted batch."""
    _check_same_samples(full, weighted)
    diff = grad_params(model, full, params) - grad_params(model, weighted, params)
    return float(diff @ diff)


def penalty_grad(model: Predictor, full: Batch, weighted: Batch, params=None) -> np.ndarray:
    """Gradient of invariance_penalty: 2 (H_P - H_Q) (g_P - g_Q) via
    Hessian-vector products; no Hessian is materialized."""
    _check_same_samples(full, weighted)
    m = model if params is None else model.with_params(params)
    diff = grad_params(m, full) - grad_params(m, weighted)
    return 2.0 * (loss_hvp(m, full, diff) - loss_hvp(m, weighted, diff))


def eliminate(model: Predictor, data: Dataset, w: SubpopWeights, cfg: DilConfig) -> Predictor:
    """One elimination stage: descend loss + lambda * penalty for
    cfg.inner_epochs full-batch epochs (monotone by backtracking)."""
    if w.w.shape[0] != data.n:
        raise ValueError("weights do not match the dataset size")
    full = Batch(data.x, data.y)
    weighted = Batch(data.x, data.y, weights=w.w)
    lam = cfg.resolved_lambda(data.task)

    if lam == 0.0:
        def value(p):
            return loss(model, full, params=p)

        def grad(p):
            return grad_params(model, full, params=p)
    else:
        def value(p):
            return (loss(model, full, params=p)
                    + lam * invariance_penalty(model, full, weighted, params=p))

        def grad(p):
            return (grad_params(model, full, params=p)
                    + lam * penalty_grad(model, full, weighted, params=p))

    params, _ = descend(model.params, value, grad, cfg.inner_epochs, cfg.learning_rate)
    return model.with_params(params)


def _train_reference(model: Predictor, data: Dataset, cfg: DilConfig) -> Predictor:
    full = Batch(data.x, data.y)
    params, _ = descend(model.params,
                        lambda p: loss(model, full, params=p),
                        lambda p: grad_params(model, full, params=p),
                        cfg.inner_epochs, cfg.learning_rate)
    return model.with_params(params)


def run_dil(data: Dataset, cfg: DilConfig, init_model: Predictor | None = None):
    """Full training loop: T rounds of exploitation on the current
    representation followed by elimination. Returns (model, DilTrace).

    The KL variant exploits on raw inputs against a reference model
    ERM-trained once at the start; the MMD variant exploits on the evolving
    representation with weights warm-started across rounds.
    """
    if data.n < 2:
        raise ValueError("training needs at least two samples")
    n_classes = data.n_classes if data.task == "classification" else 2
    if cfg.variant == "kl" and data.task != "regression":
        raise ValueError("the kl variant is defined for regression tasks")
    model = init_model if init_model is not None else init_predictor(
        cfg.arch, data.x.shape[1], data.task, n_classes, cfg.hidden,
        seed=cfg.seed)
    reference = _train_reference(model, data, cfg) if cfg.variant == "kl" else None

    full = Batch(data.x, data.y)
    trace = DilTrace()
    w_prev = None
    for t in range(1, cfg.T + 1):
        round_seed = cfg.seed ^ derive_stream("exploit-round", t)
        exp_cfg = replace(cfg.exploit, seed=round_seed)
        if cfg.variant == "mmd":
            phi = hidden_representation(model, data.x)
            weights, objective, _ = _exploit_mmd(
                phi, data.y, cfg.alpha0, cfg.kernel, exp_cfg, data.task,
                n_classes=n_classes, w_init=w_prev)
        else:
            weights, objective, _ = _exploit_kl(
                data.x, data.y, cfg.alpha0, reference, exp_cfg)
        model = eliminate(model, data, weights, cfg)
        weighted = Batch(data.x, data.y, weights=weights.w)
        trace.append(t, objective,
                     invariance_penalty(model, full, weighted),
                     loss(model, full), weights.support_size)
        w_prev = weights.w
    return model, trace
