import numpy as np
import pytest

from nbsreg.errors import BootstrapError
from nbsreg.inference import (BootstrapConfig, BootstrapResult, _interval, bootstrap_pipeline,
                              coefficient_test)
from nbsreg.pipeline import PipelineSpec, run_pipeline
from nbsreg.simulation import ScenarioConfig, generate_scenario_data

SPEC = PipelineSpec(lambdas=(2.0, 12.0), profiles=({"x": 0}, {"x": 1}), m_draws=1000, quantile_mode="empirical")


@pytest.fixture(scope="module")
def data():
    return generate_scenario_data(ScenarioConfig(n=400), np.random.default_rng(3))


def test_config_validation():
    with pytest.raises(ValueError):
        BootstrapConfig(n_replicates=1)
    with pytest.raises(ValueError):
        BootstrapConfig(alpha=1.0)


def test_minimal_bootstrap(data):
    res = bootstrap_pipeline(data, SPEC, BootstrapConfig(2, seed=1))
    assert res.replicate_coefficients.shape == (2, 2, 3)
    assert res.replicate_thetas.shape == (2, 2, 2)
    assert np.all(res.theta_se >= 0)


def test_bootstrap_deterministic_and_worker_independent(data):
    a = bootstrap_pipeline(data, SPEC, BootstrapConfig(4, seed=5))
    b = bootstrap_pipeline(data, SPEC, BootstrapConfig(4, seed=5))
    c = bootstrap_pipeline(data, SPEC, BootstrapConfig(4, seed=5, n_jobs=2))
    np.testing.assert_array_equal(a.replicate_thetas, b.replicate_thetas)
    np.testing.assert_array_equal(a.replicate_thetas, c.replicate_thetas)


def test_ci_contains_estimate(data):
    res = bootstrap_pipeline(data, SPEC, BootstrapConfig(30, seed=2))
    ci = res.theta_ci()
    assert np.all(ci[..., 0] <= res.point.thetas) and np.all(res.point.thetas <= ci[..., 1])
    normal = res.theta_ci(method="normal")
    assert normal.shape == ci.shape


def test_se_invariant_to_replicate_order():
    rng = np.random.default_rng(0)
    reps = rng.standard_normal((50, 1, 2))
    perm = reps[rng.permutation(50)]
    np.testing.assert_allclose(reps.std(0, ddof=1), perm.std(0, ddof=1))
    np.testing.assert_allclose(_interval(np.zeros((1, 2)), reps, 0.05, "symmetric"),
                               _interval(np.zeros((1, 2)), perm, 0.05, "symmetric"))


def fake_result(point_coefs, reps, names=("(Intercept)", "x", "probit(omega)")):
    point = run_pipeline.__globals__["PipelineResult"](SPEC, names, np.asarray(point_coefs, float)[None, :],
                                                       np.zeros((1, 2)), None, None, None, None, ())
    return BootstrapResult(point, BootstrapConfig(len(reps)), np.asarray(reps, float)[:, None, :],
                           np.zeros((len(reps), 1, 2)))


def test_test_all_zero_replicates_gives_p_one():
    res = fake_result([0.0, 0.0, 1.0], np.tile([0.0, 0.0, 1.0], (10, 1)))
    t = coefficient_test(res, ["x"])
    assert t.p_value == 1.0 and not t.reject


def test_symmetric_p_value_inverts_interval():
    rng = np.random.default_rng(1)
    reps = np.column_stack([np.zeros(200), 0.3 + 0.1 * rng.standard_normal(200), np.ones(200)])
    res = fake_result([0.0, 0.3, 1.0], reps)
    t = coefficient_test(res, ["x"])
    assert t.p_value == pytest.approx(np.mean(np.abs(reps[:, 1] - 0.3) >= 0.3))
    lo, hi = res.coefficient_ci()[0, 1]
    assert t.reject == (not lo <= 0 <= hi)


def test_wald_and_singular():
    rng = np.random.default_rng(2)
    reps = np.column_stack([rng.standard_normal(100), rng.standard_normal(100), np.ones(100)])
    res = fake_result([0.1, 0.1, 1.0], reps)
    t = coefficient_test(res, ["(Intercept)", "x"])
    assert t.method == "wald" and 0 < t.p_value < 1
    with pytest.raises(BootstrapError, match="increase"):
        coefficient_test(res, ["x", "probit(omega)"])
    with pytest.raises(KeyError):
        coefficient_test(res, ["nope"])


def test_failures_abort(data, monkeypatch):
    import nbsreg.inference as inf
    from nbsreg.errors import FitError

    def boom(*a, **k):
        raise FitError("synthetic failure")
    monkeypatch.setattr(inf, "_replicate", boom)
    point = run_pipeline(data, SPEC)
    with pytest.raises(BootstrapError, match="synthetic failure"):
        bootstrap_pipeline(data, SPEC, BootstrapConfig(10), point=point)
