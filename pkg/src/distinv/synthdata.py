"""Synthetic shift benchmarks: selection-biased regression and
spurious-correlation classification, plus CSV persistence.

Regression: X = [S, V], Y = theta_s' S + S1 S2 S3 + eps, with acceptance
probability |r|^(-5 |y - sign(r) v_b|) tying the first variant coordinate to
Y (strength and sign set by r, |r| > 1). The auxiliary draws Z, V use
standard deviation 2.0; the label noise defaults to variance 0.1.

Classification: Y uniform on {+1,-1} (stored as classes {0,1}), spurious
attribute A = Y with probability r, S|Y ~ N(Y 1, 3 I_d), V|A ~ N(A 1, 0.3 I_d),
X = [S, V].

Environment tags are evaluation-only; no training interface accepts them.
All draws come from per-environment Philox streams, so generation is
bit-deterministic per (spec, seed) and environments are independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import philox

THETA_CYCLE = (0.5, -1.0, 1.0, -0.5, 1.0, -1.0)

REGRESSION_TEST_RATES = (-1.9, -2.1, -2.3, -2.5, -2.7, -2.9)
REGRESSION_MINORITY_RATE = -1.1
CLASSIFICATION_MAJORITY_RATE = 0.9
CLASSIFICATION_TEST_RATE = 0.0


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    task: str
    env: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        self.y = np.asarray(self.y, dtype=float if self.task == "regression" else int)
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.y.shape[0] != self.x.shape[0]:
            raise ValueError("x and y row counts differ")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset entries must be finite")
        if self.env is not None:
            self.env = np.asarray(self.env, dtype=int)
            if self.env.shape[0] != self.x.shape[0]:
                raise ValueError("env tag length must match the sample count")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def n_classes(self) -> int:
        if self.task != "classification":
            raise ValueError("n_classes is defined for classification data")
        return int(self.y.max()) + 1


@dataclass(frozen=True)
class SelectionBiasSpec:
    n: int
    r: float
    n_s: int = 5
    n_v: int = 5
    noise_sd: float = math.sqrt(0.1)
    seed: int = 0

    def __post_init__(self):
        if abs(self.r) <= 1.0:
            raise ValueError(f"selection bias needs |r| > 1, got {self.r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.n_s < 3:
            raise ValueError("n_s must be >= 3 (the cubic term uses S1 S2 S3)")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")


@dataclass(frozen=True)
class SpuriousClassSpec:
    """Spurious-correlation classification. The default variances follow the
    reference experiments' accuracy levels (sigma_s = 3.0, sigma_v = 0.3 as
    standard deviations)."""

    n: int
    r: float
    d: int = 5
    sigma_s_sq: float = 9.0
    sigma_v_sq: float = 0.09
    seed: int = 0

    def __post_init__(self):
        # training groups use r in (0, 1]; r = 0 is the fully reversed test group
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"bias rate must lie in [0, 1], got {self.r}")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be >= 1")


def theta_s(n_s: int) -> np.ndarray:
    reps = -(-n_s // len(THETA_CYCLE))
    return np.array((THETA_CYCLE * reps)[:n_s])


AUX_SD = 2.0


def gen_selection_bias(spec: SelectionBiasSpec, stream: int = 0) -> Dataset:
    """Rejection-sample n points under the |r|-exponent acceptance rule."""
    rng = philox(spec.seed, "selection-bias", stream, spec.r)
    theta = theta_s(spec.n_s)
    sd = AUX_SD
    xs, ys = [], []
    accepted = drawn = 0
    while accepted < spec.n:
        chunk = max(4 * spec.n, 4096)
        z = rng.normal(0.0, sd, size=(chunk, spec.n_s + 1))
        v = rng.normal(0.0, sd, size=(chunk, spec.n_v))
        s = 0.8 * z[:, :spec.n_s] + 0.2 * z[:, 1:]
        eps = rng.normal(0.0, spec.noise_sd, size=chunk) if spec.noise_sd > 0 else 0.0
        y = s @ theta + s[:, 0] * s[:, 1] * s[:, 2] + eps
        p_accept = np.abs(spec.r) ** (-5.0 * np.abs(y - np.sign(spec.r) * v[:, 0]))
        keep = rng.uniform(size=chunk) <= p_accept
        drawn += chunk
        accepted += int(keep.sum())
        xs.append(np.hstack([s[keep], v[keep]]))
        ys.append(y[keep])
        if drawn >= 1_000_000 and accepted < drawn * 1e-6:
            raise RuntimeError(
                f"acceptance rate {accepted / drawn:.2e} after {drawn} draws; "
                f"r={spec.r} is pathological")
    x = np.vstack(xs)[: spec.n]
    y = np.concatenate(ys)[: spec.n]
    return Dataset(x, y, "regression")


def gen_spurious_classification(spec: SpuriousClassSpec, stream: int = 0) -> Dataset:
    rng = philox(spec.seed, "spurious-class", stream, spec.r)
    y_pm = np.where(rng.uniform(size=spec.n) < 0.5, 1.0, -1.0)
    a = np.where(rng.uniform(size=spec.n) < spec.r, y_pm, -y_pm)
    s = y_pm[:, None] + rng.normal(0.0, math.sqrt(spec.sigma_s_sq), size=(spec.n, spec.d))
    v = a[:, None] + rng.normal(0.0, math.sqrt(spec.sigma_v_sq), size=(spec.n, spec.d))
    return Dataset(np.hstack([s, v]), (y_pm > 0).astype(int), "classification")


def make_regression_suite(r1: float, seed: int, n_major: int = 2000, n_minor: int = 200,
                          n_test: int = 1000):
    """Training mixture (n_major at r1 plus n_minor at r = -1.1, env-tagged)
    and the six test environments at r in {-1.9, ..., -2.9}."""
    major = gen_selection_bias(SelectionBiasSpec(n_major, r1, seed=seed), stream=0)
    minor = gen_selection_bias(SelectionBiasSpec(n_minor, REGRESSION_MINORITY_RATE, seed=seed),
                               stream=1)
    train = Dataset(
        np.vstack([major.x, minor.x]),
        np.concatenate([major.y, minor.y]),
        "regression",
        env=np.concatenate([np.zeros(n_major, dtype=int), np.ones(n_minor, dtype=int)]),
    )
    tests = [
        gen_selection_bias(SelectionBiasSpec(n_test, r, seed=seed), stream=10 + i)
        for i, r in enumerate(REGRESSION_TEST_RATES)
    ]
    return train, tests


def make_classification_suite(r2: float, seed: int, d: int = 5, n_train: int = 2000,
                              n_test: int = 1000):
    """Training mixture (half at r = 0.9, half at r2, env-tagged) and the
    fully reversed test environment at r = 0."""
    half = n_train // 2
    e1 = gen_spurious_classification(
        SpuriousClassSpec(half, CLASSIFICATION_MAJORITY_RATE, d=d, seed=seed), stream=0)
    e2 = gen_spurious_classification(
        SpuriousClassSpec(n_train - half, r2, d=d, seed=seed), stream=1)
    train = Dataset(
        np.vstack([e1.x, e2.x]),
        np.concatenate([e1.y, e2.y]),
        "classification",
        env=np.concatenate([np.zeros(half, dtype=int), np.ones(n_train - half, dtype=int)]),
    )
    test = gen_spurious_classification(
        SpuriousClassSpec(n_test, CLASSIFICATION_TEST_RATE, d=d, seed=seed), stream=2)
    return train, test


# ---------------------------------------------------------------------------
# persistence


def save_csv(data: Dataset, path) -> None:
    d = data.x.shape[1]
    cols = [f"x{i}" for i in range(d)] + ["y"] + (["env"] if data.env is not None else [])
    with open(path, "w") as fh:
        fh.write(f"# task={data.task}\n")
        fh.write(",".join(cols) + "\n")
        for i in range(data.n):
            row = [f"{v:.17g}" for v in data.x[i]]
            row.append(f"{data.y[i]:.17g}" if data.task == "regression" else str(int(data.y[i])))
            if data.env is not None:
                row.append(str(int(data.env[i])))
            fh.write(",".join(row) + "\n")


def load_csv(path) -> Dataset:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# task="):
        raise ValueError(f"{path}: missing '# task=...' header comment")
    task = lines[0].split("=", 1)[1].strip()
    if len(lines) < 2:
        raise ValueError(f"{path}: missing column header")
    cols = lines[1].split(",")
    has_env = cols[-1] == "env"
    feat_cols = cols[:-2] if has_env else cols[:-1]
    y_col = cols[-2] if has_env else cols[-1]
    if y_col != "y":
        raise ValueError(f"{path}: missing column 'y'")
    for i, c in enumerate(feat_cols):
        if c != f"x{i}":
            raise ValueError(f"{path}: missing column 'x{i}' (found {c!r})")
    d = len(feat_cols)
    width = len(cols)
    xs = np.empty((len(lines) - 2, d))
    ys = np.empty(len(lines) - 2)
    envs = np.empty(len(lines) - 2, dtype=int) if has_env else None
    for j, line in enumerate(lines[2:], start=3):
        parts = line.split(",")
        if len(parts) != width:
            raise ValueError(f"{path}:{j}: expected {width} fields, found {len(parts)}")
        try:
            xs[j - 3] = [float(p) for p in parts[:d]]
            ys[j - 3] = float(parts[d])
            if has_env:
                envs[j - 3] = int(parts[d + 1])
        except ValueError as exc:
            raise ValueError(f"{path}:{j}: {exc}") from exc
    return Dataset(xs, ys, task, env=envs)
