import numpy as np
import pytest

from lfgnn.causality import (TAU_AUDIT, SignificanceConfig, analyze, estimate_information_flow, granger_causality,
                             information_flow_cofactor, normalize_flow, significance_test,
                             stationary_bootstrap_indices)
from lfgnn.data import coupled_pair, generate_var
from lfgnn.errors import ConfigError, InsufficientData, InvalidOrder, SingularCovariance
from lfgnn.numerics import TimeSeriesSet, covariance, cross_covariance
from lfgnn.rng import CounterRNG

from oracles import bivariate_flow


def test_bivariate_closed_form():
    X, _ = generate_var(coupled_pair(0.5, 5000, seed=7))
    F = estimate_information_flow(X)
    t12, t21 = bivariate_flow(X.data[0], X.data[1])
    assert F.flow[0, 1] == pytest.approx(t12, rel=1e-12)
    assert F.flow[1, 0] == pytest.approx(t21, rel=1e-10)
    # frozen from the oracle above
    assert F.flow[0, 1] == pytest.approx(0.0959641539817336, rel=1e-12)
    assert F.flow[1, 0] == pytest.approx(-0.008358092196886812, rel=1e-10)
    assert F.flow[0, 0] == 0.0 and F.flow[1, 1] == 0.0


def test_cofactor_agrees_with_regression():
    r = CounterRNG(4)
    for _ in range(10):
        X = TimeSeriesSet(np.cumsum(r.normal((4, 400)), axis=1) * 0.1 + r.normal((4, 400)), 1.0)
        F = estimate_information_flow(X)
        x, dx = X.data[:, :-1], np.diff(X.data, axis=1)
        T = information_flow_cofactor(covariance(x.T), cross_covariance(x.T, dx.T))
        assert np.allclose(T, F.flow, rtol=1e-8, atol=1e-14)


def test_tau_bounded_and_zero_budget():
    X, _ = generate_var(coupled_pair(0.5, 3000, seed=1))
    before = TAU_AUDIT["checks"]
    F = normalize_flow(estimate_information_flow(X))
    assert np.all(np.abs(F.tau) <= 1.0)
    assert TAU_AUDIT["checks"] == before + 1


def test_stationary_bootstrap_blocks():
    idx = stationary_bootstrap_indices(CounterRNG(0), 1000, 50.0, 4)
    assert idx.shape == (4, 1000)
    assert idx.min() >= 0 and idx.max() < 1000
    # contiguous runs: most successive steps advance by one (mod n)
    step = (np.diff(idx, axis=1) % 1000) == 1
    assert step.mean() > 0.95
    one = stationary_bootstrap_indices(CounterRNG(0), 1000, 1.0, 2)
    assert ((np.diff(one, axis=1) % 1000) == 1).mean() < 0.01


def test_planted_direction_is_significant():
    X, _ = generate_var(coupled_pair(0.5, 20000, seed=3))
    F = analyze(X, SignificanceConfig(alpha=0.01, surrogate_count=200, seed=3))
    assert F.p_values[0, 1] <= 0.01
    assert F.p_values[1, 0] > 0.01
    assert F.p_values[0, 0] == 1.0


def test_significance_is_seeded():
    X, _ = generate_var(coupled_pair(0.3, 3000, seed=2))
    cfg = SignificanceConfig(surrogate_count=100, seed=5)
    F = estimate_information_flow(X)
    assert np.array_equal(significance_test(X, F, cfg).p_values, significance_test(X, F, cfg).p_values)


def test_source_method_runs():
    X, _ = generate_var(coupled_pair(0.5, 5000, seed=4))
    F = analyze(X, SignificanceConfig(surrogate_count=100, method="source"))
    assert F.p_values.shape == (2, 2)


def test_config_validation():
    with pytest.raises(ConfigError):
        SignificanceConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        SignificanceConfig(surrogate_count=10)
    assert SignificanceConfig(alpha=1.0).alpha == 1.0
    assert SignificanceConfig().block_for(200.0) == 100


def test_too_short_and_collinear():
    with pytest.raises(InsufficientData):
        estimate_information_flow(TimeSeriesSet(np.ones((3, 20)), 1.0))
    x = CounterRNG(0).normal(500)
    X = TimeSeriesSet(np.vstack([x, 2 * x, CounterRNG(1).normal(500)]), 1.0, ["a", "b", "c"])
    with pytest.raises(SingularCovariance) as err:
        estimate_information_flow(X)
    assert set(err.value.pair) == {"a", "b"}


def test_granger_direction():
    X, _ = generate_var(coupled_pair(0.5, 5000, seed=5))
    Fs, p = granger_causality(X, order=2)
    assert p[0, 1] < 1e-6 and p[1, 0] > 0.001
    assert Fs[0, 0] == 0.0 and p[1, 1] == 0.0
    with pytest.raises(InvalidOrder):
        granger_causality(X, order=0)
