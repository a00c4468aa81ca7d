import numpy as np
import pytest

from distinv.exploit import ExploitConfig, SubpopWeights
from distinv.kernels import KernelSpec
from distinv.models import Batch, Predictor, grad_params, init_predictor, loss
from distinv.synthdata import Dataset
from distinv.trainer import (
    DEFAULT_LAMBDA,
    DilConfig,
    DilTrace,
    eliminate,
    invariance_penalty,
    penalty_grad,
    run_dil,
)
from distinv.baselines import BaselineConfig, train_erm


def fd_grad(f, p, step=1e-4):
    g = np.zeros_like(p)
    for i in range(p.size):
        e = np.zeros_like(p)
        e[i] = step
        g[i] = (f(p + e) - f(p - e)) / (2 * step)
    return g


def toy_regression(seed=0, n=24):
    """x0 carries the stable relation; x1 mimics y for most samples and is
    flipped for the final quarter."""
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=n)
    y = x0 + 0.05 * rng.normal(size=n)
    x1 = y.copy()
    k = n // 4
    x1[-k:] = -y[-k:]
    x = np.column_stack([x0, x1])
    w = np.zeros(n)
    w[-k:] = 1.0 / k
    return Dataset(x, y, "regression"), w


# ---------------------------------------------------------------------------
# invariance penalty


def test_penalty_uniform_weights_zero():
    rng = np.random.default_rng(1)
    for arch, task in (("linear", "regression"), ("mlp2", "classification")):
        m = init_predictor(arch, 3, task, seed=int(rng.integers(1 << 31)))
        x = rng.normal(size=(8, 3))
        y = rng.normal(size=8) if task == "regression" else rng.integers(0, 2, 8)
        full = Batch(x, y)
        weighted = Batch(x, y, weights=np.full(8, 1.0 / 8))
        assert invariance_penalty(m, full, weighted) < 1e-12
        np.testing.assert_allclose(penalty_grad(m, full, weighted), 0.0, atol=1e-12)


def test_penalty_two_sample_hand_computation():
    # linear model, w = (1, 0): penalty = ||g_avg - g_1||^2 with per-sample
    # gradients g_i = 2 (yhat_i - y_i) [x_i, 1]
    m = Predictor("linear", 1, "regression", params=np.array([0.7, -0.2]))
    x = np.array([[1.0], [2.0]])
    y = np.array([0.5, 3.0])
    g = [2.0 * (0.7 * xi[0] - 0.2 - yi) * np.array([xi[0], 1.0]) for xi, yi in zip(x, y)]
    want = np.sum(((g[0] + g[1]) / 2 - g[0]) ** 2)
    got = invariance_penalty(m, Batch(x, y), Batch(x, y, weights=np.array([1.0, 0.0])))
    assert got == pytest.approx(want, rel=1e-12)


def test_penalty_nonnegative():
    rng = np.random.default_rng(2)
    m = init_predictor("mlp2", 2, "regression", seed=3)
    x = rng.normal(size=(10, 2))
    y = rng.normal(size=10)
    w = rng.dirichlet(np.ones(10))
    assert invariance_penalty(m, Batch(x, y), Batch(x, y, weights=w)) >= 0.0


def test_penalty_requires_same_samples():
    m = init_predictor("linear", 1, "regression", seed=0)
    a = Batch(np.ones((3, 1)), np.ones(3))
    b = Batch(np.zeros((3, 1)), np.ones(3), weights=np.ones(3))
    with pytest.raises(ValueError, match="same samples"):
        invariance_penalty(m, a, b)


def test_penalty_grad_linear_explicit_hessian():
    # for linear regression the batch Hessians are constant 2 Xt' diag(w) Xt,
    # so the penalty gradient is exactly 2 (H_P - H_Q)(g_P - g_Q)
    rng = np.random.default_rng(3)
    m = init_predictor("linear", 2, "regression", seed=7)
    x = rng.normal(size=(9, 2))
    y = rng.normal(size=9)
    w = rng.dirichlet(np.ones(9))
    full, weighted = Batch(x, y), Batch(x, y, weights=w)
    xt = np.hstack([x, np.ones((9, 1))])
    h_p = 2.0 * xt.T @ xt / 9
    h_q = 2.0 * xt.T @ (w[:, None] * xt)
    diff = grad_params(m, full) - grad_params(m, weighted)
    want = 2.0 * (h_p - h_q) @ diff
    np.testing.assert_allclose(penalty_grad(m, full, weighted), want, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("arch,task", [("linear", "regression"), ("mlp2", "regression"),
                                        ("mlp2", "classification")])
def test_penalty_grad_matches_finite_differences(arch, task):
    rng = np.random.default_rng(4)
    m = init_predictor(arch, 2, task, hidden=4, seed=11)
    x = rng.normal(size=(8, 2))
    y = rng.normal(size=8) if task == "regression" else rng.integers(0, 2, 8)
    w = rng.dirichlet(np.ones(8))
    full, weighted = Batch(x, y), Batch(x, y, weights=w)
    got = penalty_grad(m, full, weighted)
    want = fd_grad(lambda p: invariance_penalty(m, full, weighted, params=p),
                   m.params.copy())
    assert np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-10) <= 1e-3


# ---------------------------------------------------------------------------
# eliminate


def test_eliminate_lambda_zero_is_erm_descent():
    data, w = toy_regression()
    cfg = DilConfig(alpha0=0.25, lam=0.0, inner_epochs=50, seed=5)
    m0 = init_predictor("linear", 2, "regression", seed=5)
    full = Batch(data.x, data.y)
    before = loss(m0, full)
    m1 = eliminate(m0, data, SubpopWeights(w, 0.25), cfg)
    assert loss(m1, full) <= before


def test_eliminate_uniform_weights_matches_erm_trajectory():
    data, _ = toy_regression()
    n = data.n
    cfg = DilConfig(alpha0=0.25, lam=3.0, inner_epochs=40, seed=9)
    m0 = init_predictor("linear", 2, "regression", seed=9)
    uniform = SubpopWeights(np.full(n, 1.0 / n), 0.25)
    m_dil = eliminate(m0, data, uniform, cfg)
    bcfg = BaselineConfig("erm", epochs=40, seed=9)
    m_erm = train_erm(data, bcfg, init_model=m0)
    np.testing.assert_array_equal(m_dil.params, m_erm.params)


def test_eliminate_large_lambda_shrinks_flipped_coordinate():
    data, w = toy_regression(seed=7, n=40)
    sw = SubpopWeights(w, 0.25)
    m0 = init_predictor("linear", 2, "regression", seed=2)
    free = eliminate(m0, data, sw, DilConfig(alpha0=0.25, lam=0.0, inner_epochs=400, seed=2))
    tied = eliminate(m0, data, sw, DilConfig(alpha0=0.25, lam=1e6, inner_epochs=400, seed=2))
    coef_free = abs(free.params[1])
    coef_tied = abs(tied.params[1])
    assert coef_tied < coef_free
    # the invariant coordinate dominates the flipped one under the penalty
    assert abs(tied.params[0]) > coef_tied


def test_eliminate_rejects_mismatched_weights():
    data, _ = toy_regression()
    cfg = DilConfig(alpha0=0.25, seed=0)
    m0 = init_predictor("linear", 2, "regression", seed=0)
    with pytest.raises(ValueError, match="match"):
        eliminate(m0, data, SubpopWeights(np.full(5, 0.2), 0.25), cfg)


# ---------------------------------------------------------------------------
# run_dil


def _fast_exploit(steps=40):
    return ExploitConfig(steps=steps, tol=1e-6)


def test_run_dil_lambda_zero_equals_erm():
    data, _ = toy_regression(seed=3, n=30)
    cfg = DilConfig(alpha0=0.2, lam=0.0, T=1, inner_epochs=60, seed=21,
                    exploit=_fast_exploit())
    model, trace = run_dil(data, cfg)
    erm = train_erm(data, BaselineConfig("erm", epochs=60, seed=21))
    np.testing.assert_array_equal(model.params, erm.params)
    assert len(trace) == 1


def test_run_dil_lambda_zero_multi_round_equals_erm():
    data, _ = toy_regression(seed=4, n=30)
    cfg = DilConfig(alpha0=0.2, lam=0.0, T=3, inner_epochs=25, seed=13,
                    exploit=_fast_exploit())
    model, _ = run_dil(data, cfg)
    erm = train_erm(data, BaselineConfig("erm", epochs=75, seed=13))
    np.testing.assert_array_equal(model.params, erm.params)


def test_run_dil_bit_deterministic():
    data, _ = toy_regression(seed=5, n=30)
    cfg = DilConfig(alpha0=0.2, T=2, inner_epochs=30, seed=17, exploit=_fast_exploit())
    m1, t1 = run_dil(data, cfg)
    m2, t2 = run_dil(data, cfg)
    np.testing.assert_array_equal(m1.params, m2.params)
    assert t1.exploit_objective == t2.exploit_objective
    assert t1.support_size == t2.support_size


def test_run_dil_trace_shape_and_csv(tmp_path):
    data, _ = toy_regression(seed=6, n=30)
    cfg = DilConfig(alpha0=0.2, T=3, inner_epochs=20, seed=1, exploit=_fast_exploit(20))
    _, trace = run_dil(data, cfg)
    assert len(trace) == 3
    assert trace.t == [1, 2, 3]
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,exploit_objective,penalty,train_loss,support_size"
    assert len(lines) == 4


def test_run_dil_kl_variant_regression_only():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(20, 2))
    data = Dataset(x, (x[:, 0] > 0).astype(int), "classification")
    cfg = DilConfig(alpha0=0.2, variant="kl", seed=0)
    with pytest.raises(ValueError, match="regression"):
        run_dil(data, cfg)


def test_run_dil_kl_variant_runs():
    data, _ = toy_regression(seed=9, n=30)
    cfg = DilConfig(alpha0=0.2, variant="kl", T=2, inner_epochs=30, seed=3,
                    exploit=ExploitConfig(steps=10))
    model, trace = run_dil(data, cfg)
    assert len(trace) == 2
    assert np.all(np.isfinite(model.params))


def test_default_lambda_per_task():
    cfg = DilConfig(alpha0=0.2)
    assert cfg.resolved_lambda("regression") == DEFAULT_LAMBDA["regression"]
    assert cfg.resolved_lambda("classification") == DEFAULT_LAMBDA["classification"]
    assert DilConfig(alpha0=0.2, lam=7.5).resolved_lambda("regression") == 7.5


def test_dil_config_validation():
    with pytest.raises(ValueError, match="alpha0"):
        DilConfig(alpha0=0.6)
    with pytest.raises(ValueError, match="variant"):
        DilConfig(alpha0=0.2, variant="foo")
