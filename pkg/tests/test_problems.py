import numpy as np
import pytest

from csgd.errors import ConfigError
from csgd.numkit import RngStream
from csgd.problems import (
    Lasso,
    LeastSquares,
    LinearStochasticApprox,
    LogisticRegression,
    QuadraticSemiStochastic,
    Svm,
    UniformlyConvex,
    dump_dataset,
    load_dataset,
    make_problem,
)


# ---------------------------------------------------------------- make_problem


def test_make_problem_least_squares_constants():
    prob = make_problem("least_squares", d=5, n=2000, seed=1)
    # R² is the trace of the input covariance: Σ 1/j
    assert prob.R_sq == pytest.approx(sum(1.0 / j for j in range(1, 6)))
    assert prob.L == pytest.approx(1.0)
    assert prob.mu == pytest.approx(0.2)


def test_make_problem_svm_mu_is_lambda():
    prob = make_problem("svm", d=20, n=500, seed=2, lam_reg=0.1)
    assert prob.mu == 0.1


def test_make_problem_lasso_exact_sparsity():
    prob = make_problem("lasso", d=100, n=300, seed=3, sparsity=60, lam_reg=1e-4)
    assert int(np.count_nonzero(prob.theta_sparse)) == 60


def test_make_problem_rejects_bad_overrides():
    with pytest.raises(ConfigError):
        make_problem("lasso", d=10, n=100, sparsity=60)  # s > d
    with pytest.raises(ConfigError):
        make_problem("nope", d=3)
    with pytest.raises(ConfigError):
        make_problem("svm", d=5, n=0)


# ------------------------------------------------------------------- logistic


def test_logistic_zero_input_zero_gradient():
    prob = LogisticRegression(d=3, n=0, seed=4)
    g = prob.grad(np.ones(3), (np.zeros(3), 1.0))
    assert np.array_equal(g, np.zeros(3))


def test_logistic_sigmoid_half_at_origin():
    prob = LogisticRegression(d=3, n=0, seed=4)
    g = prob.grad(np.zeros(3), (np.array([1.0, 0.0, 0.0]), 1.0))
    assert g == pytest.approx([-0.5, 0.0, 0.0])


def test_logistic_batch_average_linearity():
    prob = LogisticRegression(d=4, n=500, seed=5)
    rng = RngStream(6, 0)
    idx = rng.integers(16, 500)
    theta = rng.normals(4)
    batch_g = prob.grad(theta, idx)
    singles = np.mean([prob.grad(theta, int(i)) for i in idx], axis=0)
    assert np.allclose(batch_g, singles, atol=1e-14)


def test_logistic_reference_gradient_norm():
    prob = LogisticRegression(d=5, n=20_000, seed=7)
    ref = prob.reference
    g0 = np.linalg.norm(prob.full_grad(np.zeros(5)))
    assert ref.grad_norm <= 1e-8 * max(1.0, g0)
    assert ref.provenance == "high-accuracy-solve"


def test_logistic_streaming_reference_is_planted():
    prob = LogisticRegression(d=4, n=0, seed=8)
    assert np.array_equal(prob.theta_star, prob.theta_planted)


# -------------------------------------------------------------- least squares


def test_ls_fixed_point_no_noise():
    prob = LeastSquares(d=3, n=0, seed=9, noise_sigma=0.0)
    x = RngStream(10, 0).normals(3)
    g = prob.grad(prob.theta_star, (x, float(x @ prob.theta_star)))
    assert np.allclose(g, 0.0, atol=1e-15)


def test_ls_single_sample_direct():
    prob = LeastSquares(d=2, n=0, seed=11)
    g = prob.grad(np.zeros(2), (np.array([1.0, 0.0]), 2.0))
    assert g == pytest.approx([-2.0, 0.0])


def test_ls_reference_normal_equations():
    prob = LeastSquares(d=5, n=4000, seed=12)
    X, y = prob.dataset()
    direct = np.linalg.solve(X.T @ X, X.T @ y)
    assert np.allclose(prob.theta_star, direct, atol=1e-10)


def test_ls_stochastic_grad_mean_matches_population():
    # E over fresh samples ≈ H(θ - θ*) within 3 standard errors
    prob = LeastSquares(d=4, n=0, seed=13)
    rng = RngStream(14, 0)
    theta = np.array([1.0, -0.5, 0.25, 2.0])
    m = 100_000
    X = rng.normals(m * 4).reshape(m, 4) * np.sqrt(prob.h_diag)
    y = X @ prob.theta_planted + prob.noise_sigma * rng.normals(m)
    per = (X @ theta - y)[:, None] * X
    mean = per.mean(axis=0)
    se = per.std(axis=0, ddof=1) / np.sqrt(m)
    target = prob.h_diag * (theta - prob.theta_planted)
    assert np.all(np.abs(mean - target) <= 3.0 * se + 1e-12)


# ------------------------------------------------------------------------ svm


def test_svm_inactive_hinge():
    prob = Svm(d=3, n=200, seed=15, lam_reg=0.1)
    theta = np.array([5.0, 0.0, 0.0])
    x = np.array([1.0, 0.0, 0.0])
    i = 0
    prob._X[i] = x
    prob._y[i] = 1.0  # margin 5 > 1
    g = prob.grad(theta, i)
    assert np.allclose(g, prob.lam_reg * theta)


def test_svm_active_hinge_at_origin():
    prob = Svm(d=3, n=200, seed=15, lam_reg=0.1)
    prob._X[1] = np.array([1.0, 0.0, 0.0])
    prob._y[1] = 1.0
    g = prob.grad(np.zeros(3), 1)
    assert g == pytest.approx([-1.0, 0.0, 0.0])


def test_svm_margin_tie_takes_ridge_branch():
    prob = Svm(d=2, n=100, seed=16, lam_reg=0.5)
    prob._X[2] = np.array([1.0, 0.0])
    prob._y[2] = 1.0
    theta = np.array([1.0, 3.0])  # margin exactly 1
    g = prob.grad(theta, 2)
    assert np.allclose(g, prob.lam_reg * theta)


def test_svm_subgradient_inequality_full_batch():
    # f(θ') >= f(θ) + <g, θ'-θ> for the empirical objective
    prob = Svm(d=5, n=400, seed=17, lam_reg=0.1)
    rng = RngStream(18, 0)
    for _ in range(200):
        t1 = rng.normals(5)
        t2 = rng.normals(5)
        g = prob.full_grad(t1)
        assert prob.loss(t2) >= prob.loss(t1) + float(g @ (t2 - t1)) - 1e-10


def test_svm_reference_duality_gap():
    prob = Svm(d=6, n=1500, seed=19, lam_reg=0.1)
    ref = prob.reference
    assert ref.grad_norm <= 1e-8  # duality gap


# ---------------------------------------------------------------------- lasso


def test_lasso_zero_at_kink():
    prob = Lasso(d=3, n=100, seed=20, lam_reg=0.1, sparsity=2)
    prob._X[0] = np.zeros(3)
    prob._y[0] = 0.0
    g = prob.grad(np.zeros(3), 0)
    assert np.array_equal(g, np.zeros(3))


def test_lasso_sign_subgradient():
    prob = Lasso(d=2, n=100, seed=21, lam_reg=0.3, sparsity=1)
    theta = np.array([1.0, -1.0])
    prob._X[0] = np.zeros(2)
    prob._y[0] = 0.0  # zero residual contribution
    g = prob.grad(theta, 0)
    assert np.allclose(g, 0.3 * np.array([1.0, -1.0]))


def test_lasso_subgradient_inequality_full_batch():
    prob = Lasso(d=6, n=300, seed=22, lam_reg=1e-2, sparsity=3)
    rng = RngStream(23, 0)
    for _ in range(200):
        t1 = rng.normals(6)
        t2 = rng.normals(6)
        g = prob.full_grad(t1)
        assert prob.loss(t2) >= prob.loss(t1) + float(g @ (t2 - t1)) - 1e-10


def test_lasso_reference_prox_residual():
    prob = Lasso(d=20, n=800, seed=24, lam_reg=1e-3, sparsity=5)
    ref = prob.reference
    # optimality: the prox-gradient mapping vanishes at θ*
    assert ref.grad_norm < 1e-8


# ----------------------------------------------------------- uniformly convex


def test_uconvex_zero_gradient_at_origin():
    prob = UniformlyConvex(d=3, seed=25, noise_scale=0.0)
    g = prob.grad(np.zeros(3), np.zeros(3))
    assert np.array_equal(g, np.zeros(3))


def test_uconvex_unit_vector():
    prob = UniformlyConvex(d=3, seed=26, p_exp=2.5, noise_scale=0.0)
    e1 = np.array([1.0, 0.0, 0.0])
    assert prob.grad(e1, np.zeros(3)) == pytest.approx(e1)


def test_uconvex_finite_difference_gradient():
    prob = UniformlyConvex(d=4, seed=27, p_exp=2.5)
    rng = RngStream(28, 0)
    h = 1e-6
    for _ in range(100):
        theta = rng.normals(4)
        if np.linalg.norm(theta) < 0.1:
            continue
        g = prob.full_grad(theta)
        fd = np.empty(4)
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            fd[j] = (prob.loss(theta + e) - prob.loss(theta - e)) / (2 * h)
        assert np.linalg.norm(fd - g) <= 1e-5 * max(1.0, np.linalg.norm(g))


def test_uconvex_reference_is_origin():
    prob = UniformlyConvex(d=7, seed=29)
    assert np.array_equal(prob.theta_star, np.zeros(7))
    assert prob.f_star == 0.0
    assert prob.tau_exp == pytest.approx(1.0 - 2.0 / 2.5)


# ------------------------------------------------------------------ quadratic


def test_quadratic_identity_hessian():
    prob = QuadraticSemiStochastic(d=3, seed=30, H=np.eye(3), noise_diag=0.0)
    v = np.array([1.0, 2.0, 3.0])
    assert np.allclose(prob.grad(v, np.zeros(3)), v)


def test_quadratic_coupling_identity():
    # same token at two points differs exactly by H(θ1 - θ2)
    prob = QuadraticSemiStochastic(d=4, seed=31)
    rng = RngStream(32, 0)
    t1, t2 = rng.normals(4), rng.normals(4)
    token = prob.draw_token(rng)
    diff = prob.grad(t1, token) - prob.grad(t2, token)
    assert np.allclose(diff, prob.H @ (t1 - t2), atol=1e-12)


def test_quadratic_unbiased():
    prob = QuadraticSemiStochastic(d=3, seed=33, noise_diag=0.04)
    rng = RngStream(34, 0)
    theta = np.array([0.3, -0.2, 0.9])
    m = 100_000
    draws = rng.normals(3 * m).reshape(m, 3) * np.sqrt(prob.noise_diag)
    grads = prob.full_grad(theta)[None, :] + draws
    se = grads.std(axis=0, ddof=1) / np.sqrt(m)
    assert np.all(np.abs(grads.mean(axis=0) - prob.full_grad(theta)) <= 3 * se + 1e-12)


def test_quadratic_requires_spd():
    with pytest.raises(ConfigError):
        QuadraticSemiStochastic(d=2, seed=35, H=np.diag([1.0, -1.0]))


# ------------------------------------------------------------------------ lsa


@pytest.fixture(scope="module")
def lsa():
    return LinearStochasticApprox(d=5, seed=36)


def test_lsa_fixed_point(lsa):
    # averaged direction vanishes at θ*
    avg = sum(
        lsa.pi_chain[s] * lsa.direction(lsa.theta_star, s)
        for s in range(lsa.n_states)
    )
    assert np.allclose(avg, 0.0, atol=1e-10)


def test_lsa_single_state_chain():
    prob = LinearStochasticApprox(d=3, seed=37, n_states=1)
    # deterministic linear recursion with fixed point -A⁻¹ b
    expected = np.linalg.solve(prob.A_table[0], -prob.b_table[0])
    assert np.allclose(prob.theta_star, expected, atol=1e-10)


def test_lsa_invariants(lsa):
    assert np.abs(lsa.P.sum(axis=1) - 1.0).max() <= 1e-12
    assert np.all(np.linalg.matrix_power(lsa.P, lsa.n_states) > 0)
    sym = 0.5 * (lsa.A_bar + lsa.A_bar.T)
    assert np.linalg.eigvalsh(sym).max() < -0.1
    assert np.linalg.norm(lsa.A_bar @ lsa.theta_star + lsa.b_bar) <= 1e-10


def test_lsa_occupancy_matches_stationary(lsa):
    rng = RngStream(38, 0)
    state = lsa.init_sampler(rng)
    counts = np.zeros(lsa.n_states)
    steps = 1_000_000
    for _ in range(steps):
        token, state = lsa.next_token(rng, state)
        counts[token] += 1
    tv = 0.5 * np.abs(counts / steps - lsa.pi_chain).sum()
    assert tv < 0.01, tv


def test_lsa_invalid_state(lsa):
    with pytest.raises(ValueError):
        lsa.direction(np.zeros(5), 99)


# -------------------------------------------------- spot-check property tests


@pytest.mark.parametrize(
    "factory",
    [
        lambda: LeastSquares(d=5, n=0, seed=40),
        lambda: QuadraticSemiStochastic(d=5, seed=41),
        lambda: LogisticRegression(d=5, n=20_000, seed=42),
    ],
    ids=["least_squares", "quadratic", "logistic"],
)
def test_smoothness_spot_check(factory):
    prob = factory()
    L = prob.L
    rng = RngStream(43, 0)
    for _ in range(1000):
        t1 = rng.normals(prob.d)
        t2 = rng.normals(prob.d)
        lhs = np.linalg.norm(prob.full_grad(t1) - prob.full_grad(t2))
        assert lhs <= L * np.linalg.norm(t1 - t2) * (1 + 1e-12)


@pytest.mark.parametrize(
    "factory",
    [
        lambda: LeastSquares(d=5, n=0, seed=44),
        lambda: QuadraticSemiStochastic(d=5, seed=45),
    ],
    ids=["least_squares", "quadratic"],
)
def test_strong_convexity_spot_check(factory):
    prob = factory()
    mu = prob.mu
    assert mu > 0
    rng = RngStream(46, 0)
    for _ in range(1000):
        t1 = rng.normals(prob.d)
        t2 = rng.normals(prob.d)
        gap = prob.full_grad(t1) - prob.full_grad(t2)
        diff = t1 - t2
        assert float(gap @ diff) >= mu * float(diff @ diff) * (1 - 1e-12)


def test_logistic_local_strong_convexity_on_ball():
    prob = LogisticRegression(d=4, n=20_000, seed=47)
    mu = prob.mu
    assert mu > 0
    center = prob.theta_star
    radius = 2.0 * np.linalg.norm(center)
    rng = RngStream(48, 0)
    for _ in range(300):
        u1 = rng.normals(4)
        u2 = rng.normals(4)
        t1 = center + radius * float(rng.uniforms(1)[0]) * u1 / np.linalg.norm(u1)
        t2 = center + radius * float(rng.uniforms(1)[0]) * u2 / np.linalg.norm(u2)
        gap = prob.full_grad(t1) - prob.full_grad(t2)
        diff = t1 - t2
        assert float(gap @ diff) >= mu * float(diff @ diff) * (1 - 1e-10)


def test_unbiasedness_logistic_dataset():
    prob = LogisticRegression(d=4, n=5000, seed=49)
    rng = RngStream(50, 0)
    theta = rng.normals(4)
    m = 100_000
    idx = rng.integers(m, prob.n)
    X, y = prob._X[idx], prob._y[idx]
    from csgd.problems import _sigmoid

    per = (-y * _sigmoid(-y * (X @ theta)))[:, None] * X
    se = per.std(axis=0, ddof=1) / np.sqrt(m)
    full = prob.full_grad(theta)
    assert np.all(np.abs(per.mean(axis=0) - full) <= 4 * se + 1e-12)


def test_noise_sharing_same_token_identical():
    for prob in [
        LeastSquares(d=3, n=0, seed=51),
        LogisticRegression(d=3, n=100, seed=52),
        QuadraticSemiStochastic(d=3, seed=53),
        UniformlyConvex(d=3, seed=54),
    ]:
        rng = RngStream(55, 0)
        token = prob.draw_token(rng)
        theta = np.array([0.5, -1.0, 0.25])
        g1 = prob.grad(theta, token)
        g2 = prob.grad(theta, token)
        assert np.array_equal(g1, g2), prob.kind


# ------------------------------------------------------------- dataset dump


def test_dataset_dump_roundtrip(tmp_path):
    prob = LeastSquares(d=3, n=50, seed=56)
    path = tmp_path / "data.csgd"
    dump_dataset(prob, path)
    X, y = load_dataset(path)
    assert np.array_equal(X, prob._X)
    assert np.array_equal(y, prob._y)
    raw = path.read_bytes()
    assert raw[:4] == b"CSGD"


def test_dataset_dump_streaming_rejected(tmp_path):
    prob = LeastSquares(d=3, n=0, seed=57)
    with pytest.raises(ConfigError):
        dump_dataset(prob, tmp_path / "x.csgd")
