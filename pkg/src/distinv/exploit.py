"""Variation exploitation: worst-case subpopulation weights on the capped simplex.

Two routes:
  * exploit_mmd — projected gradient ascent on the weighted conditional
    discrepancy (plus a marginal-KL penalty for classification).
  * exploit_kl — exact alternating maximization of the Gaussian-KL surrogate
    for regression: a closed-form top-k weight step and a weighted
    least-squares refit.

At uniform weights the discrepancy objective sits at its global minimum
(zero gradient), so ascent starts from a small deterministic data-keyed
jitter of the uniform point; steps=0 still returns exact uniform weights.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .kernels import (
    CmmdObjective,
    KernelSpec,
    _smoother,
    _smoother_apply,
    exploitation_target_features,
    gram,
)
from .models import Predictor, forward
from .rng import data_keyed_uniforms

_CAP_SLACK = 1e-12
_SUM_SLACK = 1e-9


@dataclass
class SubpopWeights:
    """A candidate subpopulation as sample weights on the capped simplex:
    0 <= w_i <= 1/(alpha0 N) and sum(w) = 1."""

    w: np.ndarray
    alpha0: float

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.ndim != 1 or self.w.size == 0:
            raise ValueError("weights must be a nonempty vector")
        if not 0.0 < self.alpha0 <= 1.0:
            raise ValueError(f"alpha0 must lie in (0, 1], got {self.alpha0}")
        cap = self.cap
        if np.any(self.w < -_CAP_SLACK) or np.any(self.w > cap + _CAP_SLACK):
            raise ValueError(f"weights leave [0, {cap:g}]")
        total = self.w.sum()
        if abs(total - 1.0) > _SUM_SLACK:
            raise ValueError(f"weights sum to {total!r}, expected 1")

    @property
    def cap(self) -> float:
        return 1.0 / (self.alpha0 * self.w.size)

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.w > 0))


@dataclass
class ExploitConfig:
    """Ascent settings. steps is a budget; tol stops early once the relative
    objective gain stays below it for three accepted steps."""

    steps: int = 200
    step_size: float = 0.5
    entropy_coeff: float = 1.0
    seed: int = 0
    tol: float = 1e-6

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.entropy_coeff < 0:
            raise ValueError("entropy_coeff must be nonnegative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


def _project(v: np.ndarray, cap: float) -> np.ndarray:
    """Euclidean projection onto {0 <= w <= cap, sum w = 1} by bisection on
    the shift tau in clip(v - tau, 0, cap)."""
    lo = float(v.min()) - cap
    hi = float(v.max())
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.clip(v - mid, 0.0, cap).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    return np.clip(v - 0.5 * (lo + hi), 0.0, cap)


def project_capped_simplex(v: np.ndarray, cap: float) -> SubpopWeights:
    """argmin ||w - v||^2 over the capped simplex; rejects cap * N < 1."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("v must be a nonempty vector")
    if not cap > 0:
        raise ValueError("cap must be positive")
    if cap * v.size < 1.0 - _CAP_SLACK:
        raise ValueError(f"infeasible: cap*N = {cap * v.size:g} < 1")
    return SubpopWeights(_project(v, cap), alpha0=min(1.0, 1.0 / (cap * v.size)))


def marginal_kl(w, y: np.ndarray, n_classes: int) -> float:
    """KL(Q_Y || P_Y) between the reweighted and empirical label marginals;
    zero terms where Q(Y=i) = 0. Rejects classes absent from the sample."""
    w = np.asarray(getattr(w, "w", w), dtype=float)
    labels = np.asarray(y, dtype=int)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    p = np.bincount(labels, minlength=n_classes) / labels.size
    if np.any(p == 0):
        missing = int(np.nonzero(p == 0)[0][0])
        raise ValueError(f"class {missing} absent from the sample")
    q = np.bincount(labels, weights=w, minlength=n_classes)
    mask = q > 0
    return float(np.sum(q[mask] * np.log(q[mask] / p[mask])))


def _marginal_kl_grad(w: np.ndarray, labels: np.ndarray, p: np.ndarray, n_classes: int) -> np.ndarray:
    q = np.maximum(np.bincount(labels, weights=w, minlength=n_classes), 1e-300)
    return np.log(q / p)[labels] + 1.0


def _jittered_uniform(phi, y, seed, cap):
    """Uniform weights with a +-25% data-keyed multiplicative jitter,
    projected back onto the feasible set. The jitter breaks out of the
    zero-gradient uniform start while staying permutation-equivariant."""
    n = phi.shape[0]
    u = data_keyed_uniforms(phi, np.asarray(y, dtype=float), seed)
    return _project((1.0 + 0.5 * (u - 0.5)) / n, cap)


_START_AMPLITUDES = (0.5, 2.0, 8.0)
_START_RIDGE_SCALES = (1.0, 0.1)
_ALTERNATION_ROUNDS = 6


def _candidate_starts(k_x, y_feat, beta, cap):
    """Deterministic ascent starts built from conditional-embedding residuals.

    For two ridge scales: graded pushes of the residual profile, the top-k
    vertex of the residuals, and the fixpoint of alternating between top-k
    selection on (reference residual^2 - Q-weighted residual^2) and the
    Q-weighted embedding refit. The ascent landscape is multi-modal and flat
    around uniform, so these structured starts decide which basin is reached;
    the final pick is by achieved objective only.
    """
    n = k_x.shape[0]
    uniform = np.full(n, 1.0 / n)
    starts = []
    for ridge in _START_RIDGE_SCALES:
        factor, d = _smoother(k_x, uniform, beta * ridge)
        ref_resid = ((y_feat - k_x @ _smoother_apply(factor, d, y_feat)) ** 2).sum(axis=1)
        if not ref_resid.max() > 0:
            continue
        profile = ref_resid / ref_resid.max()
        for amp in _START_AMPLITUDES:
            starts.append(_project(uniform + amp * cap * profile, cap))
        w_alt = topk_capped_weights(ref_resid, cap)
        starts.append(w_alt)
        for _ in range(_ALTERNATION_ROUNDS):
            fq, dq = _smoother(k_x, w_alt, beta)
            q_resid = ((y_feat - k_x @ _smoother_apply(fq, dq, y_feat)) ** 2).sum(axis=1)
            w_next = topk_capped_weights(ref_resid - q_resid, cap)
            if np.allclose(w_next, w_alt):
                break
            w_alt = w_next
        starts.append(w_alt)
    return starts


def _ascend(value_and_grad, w, cap, cfg: ExploitConfig):
    """Monotone projected gradient ascent with backtracking halving and
    tol-based early stop. Returns (w, objective, per-accepted-step trace)."""
    f, g = value_and_grad(w)
    trace = [f]
    step = cfg.step_size
    stall = 0
    for _ in range(cfg.steps):
        gmax = float(np.max(np.abs(g)))
        if gmax == 0.0:
            break
        direction = g / gmax
        accepted = None
        s = step
        for _ in range(40):
            trial = _project(w + s * cap * direction, cap)
            ft, gt = value_and_grad(trial)
            if np.isfinite(ft) and ft >= f:
                accepted = (trial, ft, gt, s)
                break
            s *= 0.5
        if accepted is None:
            break
        gain = accepted[1] - f
        w, f, g, s_used = accepted
        trace.append(f)
        step = min(max(s_used * 2.0, 1e-6), 4.0)
        if gain <= cfg.tol * max(1.0, abs(f)):
            stall += 1
            if stall >= 3:
                break
        else:
            stall = 0
    return w, f, trace


def _exploit_mmd(phi, y, alpha0, spec: KernelSpec, cfg: ExploitConfig, task: str,
                 n_classes: int | None = None, w_init: np.ndarray | None = None):
    """Full-result exploitation; returns (SubpopWeights, objective, trace).

    Fresh runs ascend from the jittered-uniform start plus every residual
    candidate and keep the best final objective; a provided w_init switches
    to pure continuation (single ascent from w_init).
    """
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    y = np.asarray(y)
    n = phi.shape[0]
    if n < 2:
        raise ValueError("exploitation needs at least two samples")
    if not 0.0 < alpha0 <= 1.0 or alpha0 * n < 1.0:
        raise ValueError(f"infeasible alpha0={alpha0} for N={n}")
    cap = 1.0 / (alpha0 * n)
    uniform = np.full(n, 1.0 / n)
    if cfg.steps == 0:
        return SubpopWeights(uniform, alpha0), 0.0, [0.0]
    if np.all(phi == phi[0]) and np.all(y == y[0]):
        warnings.warn("all (phi, y) pairs identical; discrepancy objective is flat",
                      stacklevel=2)
        return SubpopWeights(uniform, alpha0), 0.0, [0.0]

    spec = spec.resolve(phi)
    k_x = gram(phi, spec)
    feats = exploitation_target_features(y, task, spec, n_classes)
    objective = CmmdObjective(k_x, feats, spec.beta)

    if task == "classification" and cfg.entropy_coeff > 0:
        labels = np.asarray(y, dtype=int)
        k = feats.shape[1]
        p_y = np.bincount(labels, minlength=k) / n
        eta = cfg.entropy_coeff

        def value_and_grad(w):
            f, g = objective.value_and_grad(w)
            f -= eta * marginal_kl(w, labels, k)
            g -= eta * _marginal_kl_grad(w, labels, p_y, k)
            return f, g
    else:
        value_and_grad = objective.value_and_grad

    if w_init is not None:
        w, f, trace = _ascend(value_and_grad, np.clip(w_init, 0.0, cap), cap, cfg)
        return SubpopWeights(w, alpha0), f, trace

    candidates = [_jittered_uniform(phi, y, cfg.seed, cap)]
    for cand in _candidate_starts(k_x, feats, spec.beta, cap):
        if not any(np.allclose(cand, seen) for seen in candidates):
            candidates.append(cand)

    # two-phase search: a short exploratory ascent ranks the basins, then the
    # best one gets the remaining budget
    probe_cfg = replace(cfg, steps=min(cfg.steps, 15))
    best = None
    for w0 in candidates:
        w, f, trace = _ascend(value_and_grad, w0, cap, probe_cfg)
        if best is None or f > best[1]:
            best = (w, f, trace)
    w, f, trace = best
    if cfg.steps > probe_cfg.steps:
        w, f, tail = _ascend(value_and_grad, w, cap,
                             replace(cfg, steps=cfg.steps - probe_cfg.steps))
        trace = trace + tail[1:]
    return SubpopWeights(w, alpha0), f, trace


def exploit_mmd(phi, y, alpha0, spec: KernelSpec, cfg: ExploitConfig, task: str,
                n_classes: int | None = None, w_init: np.ndarray | None = None) -> SubpopWeights:
    """Worst-subpopulation weights maximizing the conditional discrepancy
    (minus entropy_coeff * marginal KL for classification) over the capped
    simplex, by monotone projected gradient ascent from (jittered) uniform."""
    weights, _, _ = _exploit_mmd(phi, y, alpha0, spec, cfg, task, n_classes, w_init)
    return weights


def topk_capped_weights(scores: np.ndarray, cap: float) -> np.ndarray:
    """Exact maximizer of sum(w * scores) over the capped simplex: cap mass on
    the floor(1/cap) highest scores, remainder on the next (ties: lowest
    index first)."""
    n = scores.shape[0]
    k = int(np.floor(1.0 / cap + 1e-12))
    order = np.argsort(-scores, kind="stable")
    w = np.zeros(n)
    w[order[:k]] = cap
    rem = 1.0 - k * cap
    if rem > _CAP_SLACK and k < n:
        w[order[k]] = rem
    return w


def _fit_weighted(reference: Predictor, phi: np.ndarray, y: np.ndarray,
                  w: np.ndarray, seed: int) -> Predictor:
    """theta_q step: argmin sum w_i (y_i - f(phi_i))^2 in the reference's
    architecture. Exact weighted least squares for linear; seeded weighted
    descent for mlp2."""
    if reference.arch == "linear":
        mask = w > 0
        sw = np.sqrt(w[mask])
        design = np.hstack([phi[mask], np.ones((int(mask.sum()), 1))])
        coef, *_ = np.linalg.lstsq(design * sw[:, None], y[mask] * sw, rcond=None)
        return reference.with_params(coef)
    from .models import Batch, grad_params, loss
    from .optim import descend
    batch = Batch(phi, y, weights=w)
    model = reference
    params, _ = descend(model.params,
                        lambda p: loss(model, batch, params=p),
                        lambda p: grad_params(model, batch, params=p),
                        epochs=300, learning_rate=0.05)
    return model.with_params(params)


def _exploit_kl(phi, y, alpha0, trained_reference: Predictor, cfg: ExploitConfig):
    """Alternating KL exploitation (sigma1 = sigma2 = 1); returns
    (SubpopWeights, objective, per-round objective trace)."""
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    y = np.asarray(y, dtype=float)
    n = phi.shape[0]
    if trained_reference.task != "regression":
        raise ValueError("exploit_kl is defined for regression tasks")
    if not 0.0 < alpha0 <= 1.0 or alpha0 * n < 1.0:
        raise ValueError(f"infeasible alpha0={alpha0} for N={n}")
    cap = 1.0 / (alpha0 * n)

    ref_sq = (y - forward(trained_reference, phi)) ** 2
    # all scores are zero when theta_q starts at the reference fit, so seed
    # the first support from the reference's largest residuals
    w = topk_capped_weights(ref_sq, cap)
    trace = []
    objective = 0.0
    for round_idx in range(max(cfg.steps, 1)):
        theta_q = _fit_weighted(trained_reference, phi, y, w, cfg.seed)
        scores = ref_sq - (y - forward(theta_q, phi)) ** 2
        w_new = topk_capped_weights(scores, cap)
        objective = 0.5 * float(scores @ w_new)
        trace.append(objective)
        if np.array_equal(w_new > 0, w > 0) and np.allclose(w_new, w):
            w = w_new
            break
        w = w_new
    return SubpopWeights(w, alpha0), objective, trace


def exploit_kl(phi, y, alpha0, trained_reference: Predictor,
               cfg: ExploitConfig) -> SubpopWeights:
    """Worst-subpopulation weights for the Gaussian-KL surrogate: alternates
    the exact linear-in-w top-k step with a weighted least-squares refit until
    the support stabilizes or the step budget runs out."""
    weights, _, _ = _exploit_kl(phi, y, alpha0, trained_reference, cfg)
    return weights
