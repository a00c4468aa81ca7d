"""Reference learners: ERM and worst-fraction (CVaR) DRO.

DRO's inner step is the exact maximizer of sum(w * losses) over the capped
simplex (cap mass on the largest losses, ties broken by lowest index), so
each descent step minimizes the mean of the worst alpha0-fraction of
per-sample losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exploit import topk_capped_weights
from .models import Batch, Predictor, grad_params, init_predictor, loss, per_sample_loss
from .optim import descend
from .synthdata import Dataset


@dataclass
class BaselineConfig:
    method: str = "erm"
    alpha0: float | None = None
    epochs: int = 2500
    learning_rate: float = 0.05
    seed: int = 0
    arch: str = "linear"
    hidden: int = 16

    def __post_init__(self):
        if self.method not in ("erm", "dro"):
            raise ValueError(f"unknown baseline method {self.method!r}")
        if self.method == "dro":
            if self.alpha0 is None or not 0.0 < self.alpha0 < 0.5:
                raise ValueError(f"dro needs alpha0 in (0, 0.5), got {self.alpha0}")
        if self.epochs < 1 or not self.learning_rate > 0:
            raise ValueError("epochs must be >= 1 and learning_rate positive")


def _init(data: Dataset, cfg: BaselineConfig) -> Predictor:
    n_classes = data.n_classes if data.task == "classification" else 2
    return init_predictor(cfg.arch, data.x.shape[1], data.task, n_classes,
                          cfg.hidden, seed=cfg.seed)


def train_erm(data: Dataset, cfg: BaselineConfig, init_model: Predictor | None = None) -> Predictor:
    """Full-batch descent on the unweighted loss."""
    model = init_model if init_model is not None else _init(data, cfg)
    full = Batch(data.x, data.y)
    params, _ = descend(model.params,
                        lambda p: loss(model, full, params=p),
                        lambda p: grad_params(model, full, params=p),
                        cfg.epochs, cfg.learning_rate)
    return model.with_params(params)


def dro_objective(model: Predictor, data: Dataset, alpha0: float, params=None) -> float:
    """Worst alpha0-fraction risk: max over the capped simplex of the
    weighted mean per-sample loss."""
    losses = per_sample_loss(model, data.x, data.y, params)
    cap = 1.0 / (alpha0 * data.n)
    return float(losses @ topk_capped_weights(losses, cap))


def train_dro(data: Dataset, cfg: BaselineConfig, init_model: Predictor | None = None) -> Predictor:
    """Descent on the CVaR objective; the gradient holds the inner maximizer
    fixed (exact subgradient), while backtracking re-evaluates the true
    worst-fraction objective at every trial point."""
    if cfg.method != "dro":
        raise ValueError("config method must be 'dro'")
    if cfg.alpha0 * data.n < 1.0:
        raise ValueError(f"infeasible alpha0={cfg.alpha0} for N={data.n}")
    model = init_model if init_model is not None else _init(data, cfg)
    cap = 1.0 / (cfg.alpha0 * data.n)

    def value(p):
        losses = per_sample_loss(model, data.x, data.y, p)
        return float(losses @ topk_capped_weights(losses, cap))

    def grad(p):
        losses = per_sample_loss(model, data.x, data.y, p)
        w = topk_capped_weights(losses, cap)
        return grad_params(model, Batch(data.x, data.y, weights=w), params=p)

    params, _ = descend(model.params, value, grad, cfg.epochs, cfg.learning_rate)
    return model.with_params(params)
