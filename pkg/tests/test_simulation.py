import numpy as np
import pytest

from nbsreg.regression import wilcoxon_nbs
from nbsreg.simulation import (GAMMA, ScenarioConfig, censoring_fraction, generate_scenario_data,
                               generate_zero_inflated_analogue, run_study, true_theta_oracle)


@pytest.mark.parametrize("effect,target", [(True, 0.10), (True, 0.30), (True, 0.50),
                                           (False, 0.10), (False, 0.30), (False, 0.50)])
def test_gamma_calibration(effect, target):
    frac = censoring_fraction(ScenarioConfig(censoring_target=target, effect_present=effect), 100_000, 1)
    assert abs(frac - target) < 0.01


def test_printed_effect_constants_censor_nearly_everyone():
    # the digit-shifted constants cannot give 10% or 30% censoring
    frac = censoring_fraction(ScenarioConfig(gamma=0.5119), 20_000, 2)
    assert frac > 0.99


def test_dataset_structure_and_determinism():
    cfg = ScenarioConfig(n=300)
    a = generate_scenario_data(cfg, 3)
    b = generate_scenario_data(cfg, 3)
    np.testing.assert_array_equal(a.observed_time, b.observed_time)
    assert np.all(np.isnan(a.cost) == a.cost_censored)
    assert a.x_names == ("x",) and a.l_names == ("l",)


def test_oracle_null_identical_across_x():
    cfg = ScenarioConfig(effect_present=False)
    assert true_theta_oracle(cfg, 2.0, 0, 20_000) == true_theta_oracle(cfg, 2.0, 1, 20_000)


def test_oracle_agrees_with_randomized_wilcoxon():
    cfg = ScenarioConfig(effect_present=True)
    rng = np.random.default_rng(4)
    n = 400_000
    inb = []
    for a in (0, 1):
        l = rng.standard_normal(n)
        t = np.exp(4.05 + 0.15 * a + 0.2 * l + 0.1 + 0.5 * a) * rng.weibull(2.0, n)
        y = np.exp(4.2 + 0.002 * t + 0.5 * a + 0.4 * rng.standard_normal(n))
        inb.append(12 * t - y)
    assert abs(wilcoxon_nbs(inb[1], inb[0]) - true_theta_oracle(cfg, 12.0, 1, 400_000)) < 0.005


def test_smoke_study_one_sim():
    cfg = ScenarioConfig(n=300, n_sims=1, n_boot=2, m_draws=500)
    rep = run_study(cfg, n_oracle=10_000)
    assert len(rep.rows) == 4 and rep.rows[0].n_ok == 1
    assert all(0 <= r.rejection_rate <= 1 for r in rep.rows)
    assert "pr_reject" in rep.to_text()


def test_report_csv(tmp_path):
    rep = run_study(ScenarioConfig(n=300, n_sims=2, n_boot=0, m_draws=500), n_oracle=10_000)
    rep.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].startswith("cens,n,lambda,x,theta") and len(lines) == 5


def test_zero_inflated_analogue():
    d = generate_zero_inflated_analogue(2000, 5)
    obs = ~np.isnan(d.cost)
    assert 0.05 < np.mean(d.cost[obs] == 0) < 0.5
    assert d.levels["charlson"] == ("0", "1", "2+")


def test_unknown_gamma_rejected():
    with pytest.raises(ValueError):
        ScenarioConfig(censoring_target=0.2)
    assert ScenarioConfig(censoring_target=0.3).gamma == GAMMA[True][0.30]
