"""Subpopulation-robust training: worst-subpopulation exploitation via a
weighted conditional-discrepancy objective, gradient-alignment elimination,
and reference ERM / CVaR-DRO baselines on synthetic shift benchmarks."""

from .kernels import KernelSpec, GramPair, gram, mmd_sq, cmmd_sq, cmmd_weight_gradient
from .exploit import (
    SubpopWeights,
    ExploitConfig,
    project_capped_simplex,
    exploit_mmd,
    exploit_kl,
    marginal_kl,
)
from .models import Predictor, Batch, forward, loss, grad_params, save_predictor, load_predictor
from .trainer import DilConfig, DilTrace, invariance_penalty, penalty_grad, eliminate, run_dil
from .baselines import BaselineConfig, train_erm, train_dro
from .synthdata import (
    Dataset,
    SelectionBiasSpec,
    SpuriousClassSpec,
    gen_selection_bias,
    gen_spurious_classification,
    save_csv,
    load_csv,
)
from .evaluation import EnvMetrics, InvarianceProbe, evaluate, probe_invariance, alpha_sweep

__all__ = [
    "KernelSpec", "GramPair", "gram", "mmd_sq", "cmmd_sq", "cmmd_weight_gradient",
    "SubpopWeights", "ExploitConfig", "project_capped_simplex", "exploit_mmd",
    "exploit_kl", "marginal_kl",
    "Predictor", "Batch", "forward", "loss", "grad_params", "save_predictor",
    "load_predictor",
    "DilConfig", "DilTrace", "invariance_penalty", "penalty_grad", "eliminate", "run_dil",
    "BaselineConfig", "train_erm", "train_dro",
    "Dataset", "SelectionBiasSpec", "SpuriousClassSpec", "gen_selection_bias",
    "gen_spurious_classification", "save_csv", "load_csv",
    "EnvMetrics", "InvarianceProbe", "evaluate", "probe_invariance", "alpha_sweep",
]
