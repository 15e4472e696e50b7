import numpy as np
import pytest

from nbsreg.pipeline import PipelineSpec, default_profiles, run_pipeline
from nbsreg.serialize import dumps, model_from_dict, model_to_dict
from nbsreg.simulation import ScenarioConfig, generate_scenario_data, generate_zero_inflated_analogue


def test_resolve_defaults():
    d = generate_scenario_data(ScenarioConfig(n=200), 1)
    spec = PipelineSpec().resolve(d)
    assert spec.survival_terms == ("A", "x", "l", "A:x")
    assert spec.cost_terms == ("A", "x", "l", "Z")
    assert spec.nbs_terms == ("x",)
    assert spec.profiles == ({"x": 0}, {"x": 1})


def test_spec_round_trip():
    spec = PipelineSpec(lambdas=(2, 12), profiles=({"x": 1},), m_draws=100)
    assert PipelineSpec.from_dict(spec.to_dict()) == spec


def test_spec_validation():
    with pytest.raises(ValueError):
        PipelineSpec(m_draws=0)
    with pytest.raises(ValueError):
        PipelineSpec(cost_model="gamma")


def test_pipeline_estimates_reasonable():
    d = generate_scenario_data(ScenarioConfig(n=3000), 2)
    res = run_pipeline(d, PipelineSpec(lambdas=(2, 12), m_draws=5000))
    np.testing.assert_allclose(res.thetas, [[0.353, 0.588], [0.527, 0.746]], atol=0.06)
    assert res.theta(12, {"x": 1}) == res.thetas[1, 1]


def test_zero_inflated_pipeline_categorical():
    d = generate_zero_inflated_analogue(800, 3)
    res = run_pipeline(d, PipelineSpec(lambdas=(5,), cost_model="zero_inflated", m_draws=2000))
    assert len(res.spec.profiles) == 6
    assert "charlson[2+]" in res.coefficient_names


def test_default_profiles_continuous_uses_mean():
    d = generate_scenario_data(ScenarioConfig(n=50), 4)
    from nbsreg.data import Dataset
    d2 = Dataset.from_arrays(d.treatment, d.observed_time, d.cost, d.cost_censored, x={"l": d.column("l")})
    assert default_profiles(d2) == [{"l": pytest.approx(d.column("l").mean())}]


def test_model_serialization_round_trip():
    d = generate_scenario_data(ScenarioConfig(n=500), 5)
    res = run_pipeline(d, PipelineSpec(lambdas=(2,), m_draws=500))
    for m in (res.survival_fit, res.censoring_model, res.cost_fit, res.nbs_fits[0]):
        back = model_from_dict(model_to_dict(m))
        assert type(back) is type(m)
    assert '"type": "WeibullFit"' in dumps(model_to_dict(res.survival_fit))
    assert dumps({"a": float("nan")}) == '{"a": "nan"}'
