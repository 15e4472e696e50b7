import numpy as np
import pytest
from scipy.special import expit

from nbsreg.costs import (LogNormalCostFit, ZeroInflatedCostFit, fit_lognormal_cost,
                          fit_zero_inflated_cost, sample_cost)
from nbsreg.data import Dataset
from nbsreg.design import Formula
from nbsreg.errors import DegenerateModelError, FitError, RankDeficientError, SeparationError

from conftest import make_dataset


def test_unit_weights_match_ols():
    d = make_dataset(300, 1, censor_scale=1e9)
    assert not d.cost_censored.any()
    fit = fit_lognormal_cost(d, np.ones(d.n), ["A", "l", "Z"])
    X = Formula(["A", "l", "Z"]).matrix(d.columns())
    beta, *_ = np.linalg.lstsq(X, np.log(d.cost), rcond=None)
    np.testing.assert_allclose(fit.mean_coefficients, beta, atol=1e-10)
    resid = np.log(d.cost) - X @ beta
    assert fit.sigma2 == pytest.approx(resid @ resid / (d.n - 4))


def test_weighted_normal_equations_exact(small_dataset):
    d = small_dataset
    w = np.where(d.cost_observed, np.random.default_rng(1).uniform(1, 3, d.n), 0.0)
    fit = fit_lognormal_cost(d, w, ["A", "Z"])
    X = Formula(["A", "Z"]).matrix(d.columns())[w > 0]
    ww = w[w > 0]
    ly = np.log(d.cost[w > 0])
    np.testing.assert_allclose((X * ww[:, None]).T @ (ly - X @ fit.mean_coefficients), 0, atol=1e-9)


def test_lognormal_errors(small_dataset):
    with pytest.raises(FitError, match="all weights are zero"):
        fit_lognormal_cost(small_dataset, np.zeros(small_dataset.n), ["A"])
    d = Dataset.from_arrays([0, 1, 0, 1, 0], [1, 2, 3, 4, 5], [0.0, 1, 2, 3, 4], [0] * 5)
    with pytest.raises(FitError, match="fit_zero_inflated_cost"):
        fit_lognormal_cost(d, np.ones(5), ["A"])
    d2 = Dataset.from_arrays(small_dataset.treatment, small_dataset.observed_time, small_dataset.cost,
                             small_dataset.cost_censored, l={"l": small_dataset.column("l"),
                                                             "l2": small_dataset.column("l")})
    with pytest.raises(RankDeficientError):
        fit_lognormal_cost(d2, np.where(d2.cost_observed, 1.0, 0.0), ["l", "l2"])


def test_lognormal_sampling_mean():
    fit = LogNormalCostFit(np.array([1.0]), 0.25, Formula([]), np.eye(1), 1, 1.0)
    draws = fit.sample({"A": np.zeros(100_000)}, np.random.default_rng(2))
    assert draws.mean() == pytest.approx(np.exp(1.0 + 0.125), rel=0.01)
    assert sample_cost(fit, 0, rng=3) == sample_cost(fit, 0, rng=3)


def zi_data(n, seed):
    rng = np.random.default_rng(seed)
    a = (rng.random(n) < 0.5).astype(int)
    y = np.exp(1 + 0.3 * a + 0.5 * rng.standard_normal(n))
    y = np.where(rng.random(n) < expit(-1), 0.0, y)
    return Dataset.from_arrays(a, np.ones(n), y, np.zeros(n, bool))


def test_zero_inflated_recovers_intercept():
    d = zi_data(5000, 4)
    fit = fit_zero_inflated_cost(d, np.ones(d.n), ["A"], zero_terms=[])
    se = np.sqrt(fit.zero_covariance[0, 0])
    assert abs(fit.zero_logit_coefficients[0] + 1) < 2.5 * se


def test_zero_inflated_equal_weights_scale_free():
    d = zi_data(500, 5)
    f1 = fit_zero_inflated_cost(d, np.ones(d.n), ["A"])
    f2 = fit_zero_inflated_cost(d, np.full(d.n, 3.0), ["A"])
    np.testing.assert_allclose(f1.zero_logit_coefficients, f2.zero_logit_coefficients, rtol=1e-8)
    np.testing.assert_allclose(f1.positive_part.mean_coefficients, f2.positive_part.mean_coefficients)


def test_zero_inflated_degenerate_stages():
    d = Dataset.from_arrays([0, 1, 0, 1], [1] * 4, [1.0, 2, 3, 4], [0] * 4)
    with pytest.raises(DegenerateModelError, match="zero-cost stage"):
        fit_zero_inflated_cost(d, np.ones(4), ["A"])
    d0 = Dataset.from_arrays([0, 1, 0, 1], [1] * 4, [0.0] * 4, [0] * 4)
    with pytest.raises(DegenerateModelError, match="positive-cost stage"):
        fit_zero_inflated_cost(d0, np.ones(4), ["A"])


def test_zero_inflated_separation():
    a = np.r_[np.zeros(20), np.ones(20)].astype(int)
    y = np.where(a == 1, 0.0, np.exp(np.linspace(0, 1, 40)))
    d = Dataset.from_arrays(a, np.ones(40), y, np.zeros(40, bool))
    with pytest.raises(SeparationError):
        fit_zero_inflated_cost(d, np.ones(40), [], zero_terms=["A"])


def test_zero_probability_one_gives_zero():
    pos = LogNormalCostFit(np.array([1.0]), 0.1, Formula([]), np.eye(1), 1, 1.0)
    fit = ZeroInflatedCostFit(np.array([50.0]), Formula([]), np.eye(1), pos)
    assert np.all(fit.sample({"A": np.zeros(1000)}, np.random.default_rng(0)) == 0)


def test_zero_inflated_round_trip():
    fit = fit_zero_inflated_cost(zi_data(300, 6), np.ones(300), ["A"])
    back = ZeroInflatedCostFit.from_dict(fit.to_dict())
    cols = {"A": np.array([0.0, 1.0])}
    np.testing.assert_allclose(back.zero_probability(cols), fit.zero_probability(cols))
