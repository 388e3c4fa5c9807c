import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsum.core import ConstraintSpec, RegressionData, is_feasible, negative_sum, nonzeros
from sparsum.experiments import (
    Method,
    SimConfig,
    covariance,
    gen_beta_star,
    gen_design,
    gen_response,
    noise_variance,
    relative_risk,
    replication_streams,
    run_experiment,
    s_grid,
    tune_grid,
)

SMALL = SimConfig(t=30, m=15, k_star=3, p_pos=2, n_neg=1, s_star=0.5, replications=2, k_max=6, s_steps=4)


def test_beta_star_paper_split():
    cfg = SimConfig(s_star=2 / 3)
    beta = gen_beta_star(cfg, np.random.default_rng(0))
    assert np.allclose(np.sort(beta[beta > 0]), [1 / 3] * 5)
    assert np.allclose(beta[beta < 0], [-1 / 3] * 2)


def test_beta_star_single_entry():
    cfg = SimConfig(m=10, k_star=1, p_pos=1, n_neg=0, s_star=0.0)
    beta = gen_beta_star(cfg, np.random.default_rng(1))
    assert beta.sum() == 1.0 and nonzeros(beta) == 1


@settings(max_examples=50)
@given(st.integers(1, 5), st.integers(0, 4), st.floats(0.01, 2), st.integers(0, 2**32 - 1))
def test_beta_star_construction(p, n, s_star, seed):
    s_star = s_star if n else 0.0
    cfg = SimConfig(m=12, k_star=p + n, p_pos=p, n_neg=n, s_star=s_star)
    beta = gen_beta_star(cfg, np.random.default_rng(seed))
    assert beta.sum() == pytest.approx(1.0, abs=1e-12)
    assert nonzeros(beta) == p + n
    assert negative_sum(beta) == pytest.approx(s_star if n else 0.0, abs=1e-12)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_neg": 2, "s_star": 0.0},
        {"p_pos": 7, "n_neg": 0, "s_star": 0.5},
        {"p_pos": 4, "n_neg": 2},
        {"k_star": 200, "p_pos": 198},
        {"rho": 1.0},
        {"snr": 0.0},
        {"replications": 0},
    ],
)
def test_config_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        SimConfig(**kwargs)


def test_covariance_examples():
    np.testing.assert_array_equal(covariance(4, 0.0), np.eye(4))
    sigma = covariance(5, 0.2)
    assert sigma[0, 1] == pytest.approx(0.2) and sigma[0, 2] == pytest.approx(0.04)


def test_design_sample_covariance():
    cfg = SimConfig(t=50_000, m=3, k_star=1, p_pos=1, n_neg=0, s_star=0.0, rho=0.5)
    X, sigma = gen_design(cfg, np.random.default_rng(2))
    assert np.abs(np.cov(X, rowvar=False) - sigma).max() < 0.02


def test_response_noise_levels():
    cfg = SimConfig()
    rng = np.random.default_rng(3)
    beta = gen_beta_star(cfg, rng)
    X, sigma = gen_design(cfg, rng)
    y = gen_response(X, beta, 1e12, sigma, rng)
    assert np.sqrt(np.mean((y - X @ beta) ** 2)) < 1e-4
    assert noise_variance(beta, sigma, 1.0) == pytest.approx(beta @ sigma @ beta)
    resid = np.concatenate([gen_response(X, beta, 2.0, sigma, rng) - X @ beta for _ in range(400)])
    assert resid.var() == pytest.approx(noise_variance(beta, sigma, 2.0), rel=0.05)
    with pytest.raises(ValueError):
        gen_response(X, np.zeros(cfg.m), 1.0, sigma, rng)


def test_relative_risk_anchors():
    beta = np.array([0.6, 0.6, -0.2, 0.0])
    sigma = covariance(4, 0.2)
    assert relative_risk(beta, beta, sigma) == 0.0
    assert relative_risk(np.zeros(4), beta, sigma) == 1.0
    assert relative_risk([2.0, 0.0], [1.0, 0.0], np.eye(2)) == 1.0
    with pytest.raises(ValueError):
        relative_risk(beta, np.zeros(4), sigma)


def test_s_grid():
    np.testing.assert_allclose(s_grid(0.5, 10), np.linspace(0, 1, 11))
    np.testing.assert_array_equal(s_grid(0.0), [0.0])


def test_streams_are_distinct_and_reproducible():
    a = replication_streams(7, 3)
    b = replication_streams(7, 3)
    draws = [g.random() for rep in a for g in rep.values()]
    assert len(set(draws)) == len(draws)
    assert draws == [g.random() for rep in b for g in rep.values()]


def _train_val(seed, snr=2.0):
    streams = replication_streams(seed, 1)[0]
    beta = gen_beta_star(SMALL, streams["beta"])
    X, sigma = gen_design(SMALL, streams["design"])
    Xv, _ = gen_design(SMALL, streams["validation"])
    train = RegressionData(X, gen_response(X, beta, snr, sigma, streams["noise"]))
    val = RegressionData(Xv, gen_response(Xv, beta, snr, sigma, streams["validation"]))
    return train, val


def test_tune_grid_method_shapes():
    train, val = _train_val(0)
    l1 = tune_grid(train, val, Method.L1, 0.5, k_max=6, s_steps=4)
    assert l1.k == train.m and l1.s in set(s_grid(0.5, 4))
    l0 = tune_grid(train, val, Method.L0, 0.5, k_max=6, s_steps=4)
    assert l0.s == float(train.m) and 1 <= l0.k <= 6
    both = tune_grid(train, val, "L0L1", 0.5, k_max=6, s_steps=4)
    for fit in (l1, l0, both):
        assert is_feasible(fit.beta, ConstraintSpec(fit.k, fit.s))


def test_tune_grid_realizable_noiseless():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((30, 8))
    beta = np.array([0.7, 0.5, -0.2, 0, 0, 0, 0, 0])
    data = RegressionData(X, X @ beta)
    fit = tune_grid(data, data, Method.L0L1, 0.2, k_max=5, s_steps=4)
    assert fit.validation_error < 1e-10
    assert fit.k == 3 and fit.s == pytest.approx(0.2)


def test_tune_grid_tie_prefers_small_k_then_small_s():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((20, 6))
    data = RegressionData(X, X[:, 2].copy())
    fit = tune_grid(data, data, Method.L0L1, 0.3, k_max=4, s_steps=3)
    assert (fit.k, fit.s) == (1, 0.0)


def test_run_experiment_deterministic_and_feasible():
    cfg = dataclasses.replace(SMALL, replications=1)
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert [repr(r.row()) for r in a.summary()] == [repr(r.row()) for r in b.summary()]
    for fits in a.fits:
        for fit in fits.values():
            assert is_feasible(fit.beta, ConstraintSpec(fit.k, fit.s))
            assert negative_sum(fit.beta) <= fit.s + 1e-8
    for row in a.summary():
        assert row.reps == 1 and np.isnan(row.stderr)


def test_results_independent_of_worker_count():
    serial = run_experiment(SMALL, jobs=1)
    pooled = run_experiment(SMALL, jobs=2)
    assert [repr(r.row()) for r in serial.summary()] == [repr(r.row()) for r in pooled.summary()]


def test_risk_falls_with_snr():
    cfg = dataclasses.replace(SMALL, replications=6, methods=(Method.L0L1,))
    low = run_experiment(dataclasses.replace(cfg, snr=0.25)).mean(Method.L0L1, "relative_risk")
    high = run_experiment(dataclasses.replace(cfg, snr=10.0)).mean(Method.L0L1, "relative_risk")
    assert high < low


def test_metadata_labels_split_source():
    assert "not a published value" in SimConfig().metadata()["p_n_split_source"]
    assert SMALL.metadata()["p_n_split_source"] == "user supplied"
