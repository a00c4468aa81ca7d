"""Linear and two-layer tanh predictors over a flat parameter vector.

Gradients are hand-written backprop; Hessian-vector products come from a
complex-step directional derivative of that gradient, which is exact to
machine precision for these analytic architectures and never materializes a
Hessian. Checkpoints are JSON with parameters at 17 significant digits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .jsonio import dump17
from .rng import philox

CHECKPOINT_VERSION = 1


@dataclass
class Predictor:
    """Flat-parameter predictor.

    Parameter layout (layer-major, row-major weights then biases):
      linear: [W (d_in x n_out), b (n_out)]
      mlp2:   [W1 (d_in x hidden), b1 (hidden), W2 (hidden x n_out), b2 (n_out)]
    n_out is 1 for regression and n_classes (softmax logits) for classification.
    """

    arch: str
    d_in: int
    task: str
    n_classes: int = 2
    hidden: int = 16
    params: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.arch not in ("linear", "mlp2"):
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.params is None:
            self.params = np.zeros(self.n_params)
        self.params = np.asarray(self.params)
        if self.params.shape != (self.n_params,):
            raise ValueError(
                f"parameter vector has {self.params.size} entries, "
                f"expected {self.n_params} for {self.arch}")
        if not np.all(np.isfinite(self.params)):
            raise ValueError("parameters must be finite")

    @property
    def n_out(self) -> int:
        return 1 if self.task == "regression" else self.n_classes

    @property
    def n_params(self) -> int:
        if self.arch == "linear":
            return self.d_in * self.n_out + self.n_out
        return (self.d_in * self.hidden + self.hidden
                + self.hidden * self.n_out + self.n_out)

    def with_params(self, params: np.ndarray) -> "Predictor":
        return replace(self, params=params)

    def unpack(self, params=None):
        p = self.params if params is None else params
        if self.arch == "linear":
            w = p[: self.d_in * self.n_out].reshape(self.d_in, self.n_out)
            b = p[self.d_in * self.n_out:]
            return w, b
        h, k = self.hidden, self.n_out
        i = 0
        w1 = p[i:i + self.d_in * h].reshape(self.d_in, h); i += self.d_in * h
        b1 = p[i:i + h]; i += h
        w2 = p[i:i + h * k].reshape(h, k); i += h * k
        b2 = p[i:i + k]
        return w1, b1, w2, b2


def init_predictor(arch, d_in, task, n_classes=2, hidden=16, seed=0) -> Predictor:
    """Seeded uniform [-a, a] init with a = 1/sqrt(fan_in) per layer."""
    model = Predictor(arch, d_in, task, n_classes, hidden)
    rng = philox(seed, "model-init")
    if arch == "linear":
        a = 1.0 / np.sqrt(d_in)
        parts = [rng.uniform(-a, a, d_in * model.n_out), rng.uniform(-a, a, model.n_out)]
    else:
        a1 = 1.0 / np.sqrt(d_in)
        a2 = 1.0 / np.sqrt(hidden)
        parts = [rng.uniform(-a1, a1, d_in * hidden), rng.uniform(-a1, a1, hidden),
                 rng.uniform(-a2, a2, hidden * model.n_out), rng.uniform(-a2, a2, model.n_out)]
    return model.with_params(np.concatenate(parts))


@dataclass
class Batch:
    """Samples with optional nonnegative weights (normalized internally)."""

    x: np.ndarray
    y: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        self.y = np.asarray(self.y)
        if self.y.shape[0] != self.x.shape[0]:
            raise ValueError(f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]}")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (self.x.shape[0],):
                raise ValueError("weights length must match the batch")
            if np.any(self.weights < 0):
                raise ValueError("weights must be nonnegative")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def normalized_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        total = self.weights.sum()
        if total <= 0:
            raise ValueError("weights must have positive sum")
        return self.weights / total


def _check_dims(model: Predictor, x: np.ndarray):
    if x.shape[1] != model.d_in:
        raise ValueError(f"input has {x.shape[1]} features, model expects {model.d_in}")


def forward(model: Predictor, x: np.ndarray, params=None):
    """Predictions for regression (n,) or logits for classification (n, K).

    Complex parameter vectors propagate through (used by the complex-step
    Hessian-vector product).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    _check_dims(model, x)
    if model.arch == "linear":
        w, b = model.unpack(params)
        z = x @ w + b
    else:
        w1, b1, w2, b2 = model.unpack(params)
        z = np.tanh(x @ w1 + b1) @ w2 + b2
    return z[:, 0] if model.task == "regression" else z


def hidden_representation(model: Predictor, x: np.ndarray) -> np.ndarray:
    """The representation handed to exploitation: raw inputs for linear
    models, current hidden-layer activations for mlp2."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if model.arch == "linear":
        return x
    w1, b1, _, _ = model.unpack()
    return np.tanh(x @ w1 + b1)


def _softmax_ce(logits, labels):
    """Per-sample softmax cross-entropy, complex-safe (the max shift uses the
    real part only, which cancels exactly)."""
    shift = np.max(logits.real, axis=1, keepdims=True)
    z = logits - shift
    lse = np.log(np.exp(z).sum(axis=1))
    return lse - z[np.arange(z.shape[0]), np.asarray(labels, dtype=int)]


def per_sample_loss(model: Predictor, x: np.ndarray, y: np.ndarray, params=None) -> np.ndarray:
    pred = forward(model, x, params)
    if model.task == "regression":
        return (pred - np.asarray(y, dtype=float)) ** 2
    return _softmax_ce(pred, y)


def loss(model: Predictor, batch: Batch, params=None):
    """Weighted mean of per-sample losses: squared error for regression,
    softmax cross-entropy for classification."""
    return (batch.normalized_weights() * per_sample_loss(model, batch.x, batch.y, params)).sum()


def predict_labels(model: Predictor, x: np.ndarray) -> np.ndarray:
    if model.task != "classification":
        raise ValueError("predict_labels is for classification models")
    return np.argmax(forward(model, x), axis=1)


def grad_params(model: Predictor, batch: Batch, params=None) -> np.ndarray:
    """Exact gradient of loss() w.r.t. the flat parameter vector (backprop)."""
    p = model.params if params is None else params
    x, wn = batch.x, batch.normalized_weights()
    if model.arch == "linear":
        w, b = model.unpack(p)
        z = x @ w + b
        dz = _dloss_dlogits(model, z, batch.y, wn)
        return np.concatenate([(x.T @ dz).ravel(), dz.sum(axis=0)])
    w1, b1, w2, b2 = model.unpack(p)
    h = np.tanh(x @ w1 + b1)
    z = h @ w2 + b2
    dz = _dloss_dlogits(model, z, batch.y, wn)
    dh = dz @ w2.T
    dpre = dh * (1.0 - h * h)
    return np.concatenate([
        (x.T @ dpre).ravel(), dpre.sum(axis=0),
        (h.T @ dz).ravel(), dz.sum(axis=0),
    ])


def _dloss_dlogits(model, z, y, wn):
    if model.task == "regression":
        r = z[:, 0] - np.asarray(y, dtype=float)
        return (2.0 * wn * r)[:, None]
    shift = np.max(z.real, axis=1, keepdims=True)
    e = np.exp(z - shift)
    prob = e / e.sum(axis=1, keepdims=True)
    labels = np.asarray(y, dtype=int)
    prob[np.arange(z.shape[0]), labels] -= 1.0
    return wn[:, None] * prob


_CSTEP = 1e-150


def loss_hvp(model: Predictor, batch: Batch, direction: np.ndarray) -> np.ndarray:
    """Hessian-vector product of loss() via a complex step on the gradient:
    H v = Im(grad(p + i h v)) / h, exact for these analytic models."""
    p = model.params.astype(complex) + 1j * _CSTEP * np.asarray(direction, dtype=float)
    return grad_params(model, batch, params=p).imag / _CSTEP


def save_predictor(model: Predictor, path) -> None:
    dump17({
        "version": CHECKPOINT_VERSION,
        "arch": model.arch,
        "d_in": model.d_in,
        "task": model.task,
        "n_classes": model.n_classes,
        "hidden": model.hidden,
        "params": [float(v) for v in model.params],
    }, path)


def load_predictor(path) -> Predictor:
    try:
        payload = json.loads(open(path).read())
    except json.JSONDecodeError as exc:
        raise ValueError(f"checkpoint {path} is truncated or malformed: {exc}") from exc
    missing = {"version", "arch", "d_in", "task", "n_classes", "hidden", "params"} - payload.keys()
    if missing:
        raise ValueError(f"checkpoint {path} is missing keys {sorted(missing)}")
    if payload["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {payload['version']} unsupported "
                         f"(expected {CHECKPOINT_VERSION})")
    model = Predictor(payload["arch"], int(payload["d_in"]), payload["task"],
                      int(payload["n_classes"]), int(payload["hidden"]))
    params = np.asarray(payload["params"], dtype=float)
    if params.shape != (model.n_params,):
        raise ValueError(f"checkpoint has {params.size} parameters, "
                         f"expected {model.n_params}")
    return model.with_params(params)
