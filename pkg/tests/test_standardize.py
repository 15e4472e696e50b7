import numpy as np
import pytest
from scipy import stats

from nbsreg.data import Dataset
from nbsreg.pipeline import PipelineSpec, run_with_models
from nbsreg.regression import wilcoxon_nbs
from nbsreg.simulation import ScenarioConfig, generate_scenario_data, true_models
from nbsreg.standardize import (StandardizationConfig, draw_baseline, generate_pseudo_population,
                                standardize, write_pseudo_populations)


def test_config_validation():
    with pytest.raises(ValueError):
        StandardizationConfig(m_draws=0)
    with pytest.raises(ValueError):
        StandardizationConfig(lambdas=(0.0,))
    assert StandardizationConfig(lambdas=2).lambdas == (2.0,)


def test_single_row_dataset_draws():
    d = Dataset.from_arrays([1], [2.0], [3.0], [False], x={"x": [1.0]}, l={"l": [0.7]})
    b = draw_baseline(d, 50, 0)
    assert np.all(b.covariates == [[1.0, 0.7]])


def test_joint_rows_and_frequency():
    d = generate_scenario_data(ScenarioConfig(n=4000), np.random.default_rng(1))
    b = draw_baseline(d, 100_000, np.random.default_rng(2))
    np.testing.assert_array_equal(b.covariates, d.covariates[b.rows])
    assert abs(b.columns()["x"].mean() - d.column("x").mean()) < 0.01
    assert abs(d.column("x").mean() - 0.25) < 0.03


def test_baseline_deterministic():
    d = generate_scenario_data(ScenarioConfig(n=100), 3)
    np.testing.assert_array_equal(draw_baseline(d, 20, 5).rows, draw_baseline(d, 20, 5).rows)


def test_exchangeable_arms_give_half():
    cfg = ScenarioConfig(n=2000)
    d = generate_scenario_data(cfg, 4)
    surv, cost = true_models(cfg, treatment_effect=False)
    c = StandardizationConfig(100_000, (2.0,), 9)
    p0, p1 = standardize(d, surv, cost, c)
    assert abs(wilcoxon_nbs(p1.inb(2.0), p0.inb(2.0)) - 0.5) < 0.01


def test_arm_streams_are_fixed_by_seed_and_arm():
    cfg = ScenarioConfig(n=300)
    d = generate_scenario_data(cfg, 5)
    surv, cost = true_models(cfg)
    c = StandardizationConfig(1000, (2.0,), 11)
    a = generate_pseudo_population(d, surv, cost, 1, c)
    b = generate_pseudo_population(d, surv, cost, 1, c)
    np.testing.assert_array_equal(a.inb(2.0), b.inb(2.0))
    assert len(a) == 1000


def test_confounder_balance_ks():
    # x is binary, so compare the continuous confounder l across arms
    cfg = ScenarioConfig(n=1000)
    d = generate_scenario_data(cfg, 6)
    surv, cost = true_models(cfg)
    rejections = 0
    for seed in range(50):
        p0, p1 = standardize(d, surv, cost, StandardizationConfig(2000, (2.0,), seed))
        l0 = p0.covariates[:, p0.covariate_names.index("l")]
        l1 = p1.covariates[:, p1.covariate_names.index("l")]
        rejections += stats.ks_2samp(l0, l1).pvalue < 0.01
    assert rejections <= 3


def test_oracle_models_recover_theta():
    cfg = ScenarioConfig(n=20_000)
    d = generate_scenario_data(cfg, 7)
    surv, cost = true_models(cfg)
    spec = PipelineSpec(lambdas=(2.0,), profiles=({"x": 1},), m_draws=50_000, quantile_mode="empirical")
    res = run_with_models(d, surv, cost, spec)
    assert res.thetas[0, 0] == pytest.approx(0.588, abs=0.01)


def test_pseudo_population_csv(tmp_path):
    cfg = ScenarioConfig(n=100)
    d = generate_scenario_data(cfg, 8)
    surv, cost = true_models(cfg)
    pops = standardize(d, surv, cost, StandardizationConfig(10, (2.0,), 1))
    path = tmp_path / "pops.csv"
    write_pseudo_populations(path, pops, 2.0)
    lines = path.read_text().splitlines()
    assert lines[0] == "arm,inb,x" and len(lines) == 21
