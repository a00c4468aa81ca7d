import numpy as np
import pytest

from distinv.kernels import (
    CmmdObjective,
    GramPair,
    KernelSpec,
    cmmd_sq,
    cmmd_weight_gradient,
    gram,
    mmd_sq,
    target_features,
    target_gram,
)


# ---------------------------------------------------------------------------
# oracles


def explicit_features(x, spec):
    """Explicit finite-dimensional feature map matching gram() for linear and
    degree-2 polynomial kernels: phi(a) . phi(b) == k(a, b)."""
    x = np.asarray(x, dtype=float)
    if spec.family == "linear":
        return x
    assert spec.family == "poly" and spec.degree == 2
    n, d = x.shape
    quad = (x[:, :, None] * x[:, None, :]).reshape(n, d * d)
    lin = np.sqrt(2.0 * spec.offset) * x
    const = np.full((n, 1), spec.offset)
    return np.hstack([quad, lin, const])


def explicit_operator(w, x_feat, y_feat, beta):
    """Weighted conditional embedding as an actual (d_y, d_x) matrix:
    Yf^T H (H Kx H + beta I)^{-1} H Xf."""
    n = x_feat.shape[0]
    h = np.diag(np.sqrt(w))
    kx = x_feat @ x_feat.T
    m = h @ kx @ h + beta * np.eye(n)
    return y_feat.T @ h @ np.linalg.solve(m, h @ x_feat)


def explicit_cmmd(w, x_feat, y_feat, beta):
    n = x_feat.shape[0]
    c_w = explicit_operator(w, x_feat, y_feat, beta)
    c_u = explicit_operator(np.full(n, 1.0 / n), x_feat, y_feat, beta)
    return float(np.sum((c_w - c_u) ** 2))


def random_capped_weights(rng, n, alpha0=0.25):
    cap = 1.0 / (alpha0 * n)
    w = rng.dirichlet(np.ones(n))
    w = np.minimum(w, cap)
    w += (1.0 - w.sum()) * (w < cap) / max((w < cap).sum(), 1)
    return np.clip(w, 0.0, cap)


# ---------------------------------------------------------------------------
# gram


def test_gram_zero_distance():
    k = gram(np.array([[0.0], [0.0]]), KernelSpec("rbf", gamma=1.0))
    assert np.allclose(k, 1.0)


def test_gram_rbf_direct_formula():
    k = gram(np.array([[0.0], [1.0]]), KernelSpec("rbf", gamma=1.0))
    assert k[0, 1] == pytest.approx(np.exp(-1.0), abs=1e-12)
    assert k[0, 0] == 1.0 and k[1, 1] == 1.0


def test_gram_rbf_range_and_diagonal():
    rng = np.random.default_rng(0)
    k = gram(rng.normal(size=(12, 4)), KernelSpec("rbf", gamma=0.3))
    assert np.all(k > 0.0) and np.all(k <= 1.0)
    assert np.allclose(np.diag(k), 1.0)


@pytest.mark.parametrize("spec", [
    KernelSpec("rbf", gamma=0.5),
    KernelSpec("linear"),
    KernelSpec("poly", degree=2, offset=1.0),
])
@pytest.mark.parametrize("n", [2, 8, 64])
def test_gram_symmetric_psd(spec, n):
    rng = np.random.default_rng(n)
    k = gram(rng.normal(size=(n, 3)), spec)
    assert np.max(np.abs(k - k.T)) <= 1e-12 * max(1.0, np.max(np.abs(k)))
    assert np.linalg.eigvalsh(k).min() >= -1e-9


def test_gram_rejects_nonfinite():
    x = np.ones((4, 2))
    x[2, 1] = np.nan
    with pytest.raises(ValueError, match="row 2"):
        gram(x, KernelSpec("rbf", gamma=1.0))


def test_median_heuristic_resolution():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(20, 2))
    spec = KernelSpec("rbf").resolve(x)
    d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    med = np.median(d2[np.triu_indices(20, 1)])
    assert spec.gamma == pytest.approx(1.0 / med)
    assert spec.beta == pytest.approx(1e-3 * 20)


# ---------------------------------------------------------------------------
# mmd


def test_mmd_identical_samples_zero():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(7, 3))
    for spec in (KernelSpec("rbf", gamma=0.7), KernelSpec("linear")):
        assert abs(mmd_sq(x, x, spec)) <= 1e-12


def test_mmd_linear_mean_difference():
    # identity feature map: squared distance of sample means
    assert mmd_sq(np.array([[0.0]]), np.array([[2.0]]), KernelSpec("linear")) == pytest.approx(4.0)


def test_mmd_matches_double_sum_oracle():
    spec = KernelSpec("rbf", gamma=1.0)
    x = np.array([[0.0], [1.0]])
    z = np.array([[2.0]])

    def k(a, b):
        return np.exp(-1.0 * np.sum((a - b) ** 2))

    direct = (
        sum(k(a, b) for a in x for b in x) / 4.0
        - 2.0 * sum(k(a, b) for a in x for b in z) / 2.0
        + sum(k(a, b) for a in z for b in z) / 1.0
    )
    assert mmd_sq(x, z, spec) == pytest.approx(direct, rel=1e-12)


def test_mmd_nonnegative_random():
    rng = np.random.default_rng(5)
    for trial in range(20):
        x = rng.normal(size=(rng.integers(1, 9), 2))
        z = rng.normal(size=(rng.integers(1, 9), 2)) + rng.normal()
        assert mmd_sq(x, z, KernelSpec("rbf", gamma=0.4)) >= -1e-12


def test_mmd_rejects_empty():
    with pytest.raises(ValueError):
        mmd_sq(np.empty((0, 2)), np.ones((3, 2)), KernelSpec("linear"))


# ---------------------------------------------------------------------------
# cmmd trace form


def _grams(x, y, spec, task="regression"):
    return GramPair(gram(x, spec), target_gram(y, task))


def test_cmmd_uniform_weights_zero():
    rng = np.random.default_rng(7)
    for spec in (KernelSpec("rbf", gamma=0.5), KernelSpec("linear"),
                 KernelSpec("poly", degree=2, offset=0.5)):
        x = rng.normal(size=(9, 3))
        y = rng.normal(size=9)
        gp = _grams(x, y, spec)
        assert abs(cmmd_sq(np.full(9, 1.0 / 9), gp, beta=0.01)) < 1e-10


def test_cmmd_linear_explicit_operator_oracle():
    # N=6 with explicit 2-D features: trace value equals the Frobenius norm of
    # the difference of the two embedding operators
    rng = np.random.default_rng(11)
    x = rng.normal(size=(6, 2))
    y = rng.normal(size=6)
    w = random_capped_weights(rng, 6)
    spec = KernelSpec("linear")
    gp = _grams(x, y, spec)
    got = cmmd_sq(w, gp, beta=0.05)
    want = explicit_cmmd(w, explicit_features(x, spec), target_features(y, "regression"), 0.05)
    assert got == pytest.approx(want, rel=1e-10)


@pytest.mark.parametrize("spec", [KernelSpec("linear"), KernelSpec("poly", degree=2, offset=1.3)])
def test_cmmd_trace_equals_explicit_frobenius(spec):
    rng = np.random.default_rng(13)
    for trial in range(25):
        n = int(rng.integers(3, 21))
        x = rng.normal(size=(n, int(rng.integers(1, 4))))
        y = rng.normal(size=n)
        w = random_capped_weights(rng, n)
        beta = float(rng.uniform(0.01, 0.5))
        gp = _grams(x, y, spec)
        got = cmmd_sq(w, gp, beta)
        want = explicit_cmmd(w, explicit_features(x, spec),
                             target_features(y, "regression"), beta)
        assert got == pytest.approx(want, rel=1e-8, abs=1e-12)


def test_cmmd_2x2_symbolic_oracle():
    sympy = pytest.importorskip("sympy")
    kx = sympy.Matrix([[2, 1], [1, 3]])
    ky = sympy.Matrix([[1, -1], [-1, 1]])
    beta = sympy.Rational(1, 10)
    w1, w2 = sympy.Rational(3, 4), sympy.Rational(1, 4)

    def smoother(a, b):
        h = sympy.diag(sympy.sqrt(a), sympy.sqrt(b))
        return h * (h * kx * h + beta * sympy.eye(2)).inv() * h

    g_w = smoother(w1, w2)
    g_u = smoother(sympy.Rational(1, 2), sympy.Rational(1, 2))
    expr = ((g_w * ky * g_w * kx).trace()
            - 2 * (g_w * ky * g_u * kx).trace()
            + (g_u * ky * g_u * kx).trace())
    want = float(expr)
    gp = GramPair(np.array([[2.0, 1.0], [1.0, 3.0]]), np.array([[1.0, -1.0], [-1.0, 1.0]]))
    got = cmmd_sq(np.array([0.75, 0.25]), gp, beta=0.1)
    assert got == pytest.approx(want, rel=1e-12)


def test_cmmd_singular_solve_diagnostic():
    gp = GramPair(np.ones((5, 5)) * 1e20, np.eye(5))
    with pytest.raises(ValueError, match="cond"):
        cmmd_sq(np.full(5, 0.2), gp, beta=1e-300)


# ---------------------------------------------------------------------------
# gradient


def fd_gradient(f, w, step=1e-5):
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = step
        g[i] = (f(w + e) - f(w - e)) / (2.0 * step)
    return g


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(17)
    for trial in range(6):
        n = int(rng.integers(4, 31))
        x = rng.normal(size=(n, 2))
        y = rng.normal(size=n)
        beta = float(rng.uniform(0.05, 0.3))
        gp = _grams(x, y, KernelSpec("rbf", gamma=0.5))
        w = random_capped_weights(rng, n)
        got = cmmd_weight_gradient(w, gp, beta)
        want = fd_gradient(lambda v: cmmd_sq(v, gp, beta), w)
        denom = max(np.linalg.norm(want), 1e-10)
        assert np.linalg.norm(got - want) / denom <= 1e-4


def test_gradient_symmetry_for_identical_points():
    # two identical (x, y) pairs: swapping them leaves the grams invariant,
    # so their gradient components agree
    x = np.array([[0.5, 0.1], [0.5, 0.1], [1.5, -2.0], [-0.3, 0.9]])
    y = np.array([1.0, 1.0, -2.0, 0.4])
    gp = _grams(x, y, KernelSpec("rbf", gamma=0.8))
    w = np.full(4, 0.25)
    g = cmmd_weight_gradient(w, gp, beta=0.05)
    assert g[0] == pytest.approx(g[1], rel=1e-9, abs=1e-12)


def test_gradient_ascent_step_does_not_decrease():
    rng = np.random.default_rng(23)
    x = rng.normal(size=(12, 2))
    y = rng.normal(size=12)
    gp = _grams(x, y, KernelSpec("rbf", gamma=0.5))
    w = random_capped_weights(rng, 12, alpha0=0.2)
    # strictly interior start so a small tangent step stays feasible
    w = 0.5 * w + 0.5 / 12
    beta = 0.1
    g = cmmd_weight_gradient(w, gp, beta)
    tangent = g - g.mean()
    before = cmmd_sq(w, gp, beta)
    after = cmmd_sq(w + 1e-7 * tangent, gp, beta)
    assert after >= before - 1e-14


# ---------------------------------------------------------------------------
# fast path


@pytest.mark.parametrize("task,klass", [("regression", None), ("classification", 3)])
def test_fast_path_matches_trace_form(task, klass):
    rng = np.random.default_rng(29)
    n = 14
    x = rng.normal(size=(n, 3))
    if task == "regression":
        y = rng.normal(size=n)
    else:
        y = rng.integers(0, klass, size=n)
    kx = gram(x, KernelSpec("rbf", gamma=0.4))
    gp = GramPair(kx, target_gram(y, task, klass))
    obj = CmmdObjective(kx, target_features(y, task, klass), beta=0.07)
    for trial in range(5):
        w = random_capped_weights(rng, n)
        v, g = obj.value_and_grad(w)
        assert v == pytest.approx(cmmd_sq(w, gp, 0.07), rel=1e-9, abs=1e-12)
        assert obj.value(w) == pytest.approx(v, rel=1e-12)
        np.testing.assert_allclose(g, cmmd_weight_gradient(w, gp, 0.07), rtol=1e-7, atol=1e-11)
