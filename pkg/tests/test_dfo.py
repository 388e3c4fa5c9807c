import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsum.core import ConstraintSpec, RegressionData, is_feasible, objective
from sparsum.dfo import (
    DfoConfig,
    dfo_solve,
    dfo_step,
    gradient,
    lipschitz_constant,
    power_iteration,
)
from sparsum.l1path import forward_stepwise, solve_l1_unit_sum
from sparsum.ortho import project, solve_orthogonal


def random_data(rng, t, m, noise=0.5):
    X = rng.standard_normal((t, m))
    beta = np.zeros(m)
    beta[: min(3, m)] = [0.7, 0.5, -0.2][: min(3, m)]
    beta[0] += 1.0 - beta.sum()
    return RegressionData(X, X @ beta + noise * rng.standard_normal(t))


def orthonormal(rng, t, m):
    q, _ = np.linalg.qr(rng.standard_normal((t, m)))
    return q


def test_lipschitz_examples():
    assert lipschitz_constant(RegressionData(np.eye(4), np.zeros(4))) == pytest.approx(1.0, rel=1e-10)
    assert lipschitz_constant(RegressionData(np.diag([2.0, 1.0]), np.zeros(2))) == pytest.approx(
        4.0, rel=1e-10
    )


@pytest.mark.parametrize("shape", [(10, 6), (6, 10), (30, 50)])
def test_lipschitz_matches_eigh(shape):
    rng = np.random.default_rng(sum(shape))
    X = rng.standard_normal(shape)
    truth = np.linalg.eigvalsh(X.T @ X)[-1]
    assert lipschitz_constant(RegressionData(X, np.zeros(shape[0]))) == pytest.approx(truth, rel=1e-8)


def test_lipschitz_rejects_zero_design():
    with pytest.raises(ValueError):
        lipschitz_constant(RegressionData(np.zeros((3, 2)), np.zeros(3)))


def test_power_iteration_zero_matrix():
    assert power_iteration(np.zeros((3, 3))) == 0.0


def test_gradient_vanishes_at_least_squares():
    rng = np.random.default_rng(0)
    data = random_data(rng, 20, 5)
    ls = np.linalg.lstsq(data.X, data.y, rcond=None)[0]
    assert np.abs(gradient(data, ls)).max() < 1e-10


def test_gradient_identity_design():
    v = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(gradient(RegressionData(np.eye(3), np.zeros(3)), v), v)
    with pytest.raises(ValueError):
        gradient(RegressionData(np.eye(3), np.zeros(3)), np.zeros(2))


def test_gradient_finite_differences():
    rng = np.random.default_rng(1)
    data = random_data(rng, 15, 6)
    w = rng.standard_normal(6)
    h = 1e-6

    def f(b):
        return 0.5 * objective(data, b)

    fd = np.array([(f(w + h * e) - f(w - h * e)) / (2 * h) for e in np.eye(6)])
    np.testing.assert_allclose(gradient(data, w), fd, atol=1e-5)


def test_step_fixed_point():
    rng = np.random.default_rng(2)
    data = random_data(rng, 30, 8)
    spec = ConstraintSpec(3, 0.3)
    L = lipschitz_constant(data) * (1 + 1e-6)
    w, _ = dfo_solve(data, spec, forward_stepwise(data, spec), DfoConfig(epsilon=1e-14))
    np.testing.assert_allclose(dfo_step(data, spec, w, L), w, atol=1e-12)


def test_step_orthogonal_design_is_exact():
    rng = np.random.default_rng(3)
    X = orthonormal(rng, 12, 6)
    y = rng.standard_normal(12)
    data = RegressionData(X, y)
    spec = ConstraintSpec(3, 0.4)
    start = project(np.ones(6) / 6, spec)
    exact, _ = solve_orthogonal(X.T @ y, spec)
    np.testing.assert_allclose(dfo_step(data, spec, start, 1.0), exact, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.floats(0, 1))
def test_step_never_increases_objective(seed, k, s):
    rng = np.random.default_rng(seed)
    data = random_data(rng, 12, 8)
    spec = ConstraintSpec(k, s)
    w = project(rng.standard_normal(8), spec)
    L = lipschitz_constant(data) * (1 + 1e-6)
    nxt = dfo_step(data, spec, w, L)
    assert objective(data, nxt) <= objective(data, w) + 1e-12
    assert is_feasible(nxt, spec)


def test_orthogonal_design_converges_in_two_iterations():
    rng = np.random.default_rng(4)
    X = orthonormal(rng, 10, 5)
    data = RegressionData(X, rng.standard_normal(10))
    spec = ConstraintSpec(2, 0.2)
    exact, rep_exact = solve_orthogonal(X.T @ data.y, spec)
    beta, rep = dfo_solve(data, spec, np.eye(5)[4])
    assert rep.iterations <= 2
    np.testing.assert_allclose(beta, exact, atol=1e-10)


def test_convex_case_matches_convex_solver():
    rng = np.random.default_rng(5)
    data = random_data(rng, 30, 8)
    spec = ConstraintSpec(8, 0.3)
    _, rep_dfo = dfo_solve(data, spec, project(np.ones(8) / 8, spec), DfoConfig(epsilon=1e-12))
    _, rep_cvx = solve_l1_unit_sum(data, 0.3)
    assert rep_dfo.objective == pytest.approx(rep_cvx.objective, abs=1e-6)


def test_infinite_epsilon_takes_one_step():
    rng = np.random.default_rng(6)
    data = random_data(rng, 20, 6)
    spec = ConstraintSpec(2, 0.1)
    init = np.eye(6)[0]
    beta, rep = dfo_solve(data, spec, init, DfoConfig(epsilon=np.inf))
    L = lipschitz_constant(data) * (1 + 1e-6)
    assert rep.iterations == 1
    np.testing.assert_allclose(beta, dfo_step(data, spec, init, L), atol=1e-12)
    assert rep.trace[0] == objective(data, init)


def test_rejects_infeasible_start_and_bad_config():
    data = RegressionData(np.eye(3), np.ones(3))
    with pytest.raises(ValueError):
        dfo_solve(data, ConstraintSpec(1, 0.0), np.array([0.5, 0.5, 0.0]))
    for kwargs in [{"epsilon": 0.0}, {"max_iterations": 0}, {"lipschitz_override": -1.0}]:
        with pytest.raises(ValueError):
            DfoConfig(**kwargs)


def test_iteration_limit_status():
    rng = np.random.default_rng(7)
    data = random_data(rng, 30, 20)
    spec = ConstraintSpec(5, 0.5)
    _, rep = dfo_solve(data, spec, np.eye(20)[19], DfoConfig(epsilon=1e-300, max_iterations=2))
    assert rep.status.value == "IterationLimit" and rep.iterations == 2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.floats(0, 1), st.sampled_from([1.0, 10.0]))
def test_descent_and_feasibility_along_path(seed, k, s, scale):
    rng = np.random.default_rng(seed)
    data = random_data(rng, 15, 10)
    spec = ConstraintSpec(k, s)
    L = scale * lipschitz_constant(data) * (1 + 1e-6)
    w = project(rng.standard_normal(10), spec)
    f_prev = objective(data, w)
    for _ in range(25):
        w = dfo_step(data, spec, w, L)
        assert is_feasible(w, spec)
        f = objective(data, w)
        assert f <= f_prev + 1e-12
        f_prev = f
    _, rep = dfo_solve(data, spec, project(np.ones(10) / 10, spec), DfoConfig(lipschitz_override=L))
    assert np.all(np.diff(rep.trace) <= 0)


def test_normal_equations_when_l1_slack():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((60, 5))
    y = X @ np.array([0.4, 0.3, 0.2, 0.1, 0.0]) + 0.1 * rng.standard_normal(60)
    data = RegressionData(X, y)
    spec = ConstraintSpec(5, 10.0)
    beta, _ = dfo_solve(data, spec, np.ones(5) / 5, DfoConfig(epsilon=1e-15, max_iterations=100_000))
    g = gradient(data, beta)
    # projected gradient on the hyperplane sum b = 1
    assert np.linalg.norm(g - g.mean()) <= 1e-5
