"""Simulate one observational cohort and estimate conditional NBS.

The cohort has a binary effect modifier ``x`` and a measured confounder
``l``.  After fitting and standardizing we print the NBS at two
willingness-to-pay values for both levels of ``x`` next to the truth.

    python demos/quickstart.py
"""

import numpy as np

from nbsreg import BootstrapConfig, bootstrap_pipeline, coefficient_test, run_pipeline
from nbsreg.simulation import ScenarioConfig, generate_scenario_data, true_theta_oracle

cfg = ScenarioConfig(n=500, censoring_target=0.10, lambdas=(2.0, 12.0))
data = generate_scenario_data(cfg, np.random.default_rng(1))
spec = cfg.pipeline_spec()

point = run_pipeline(data, spec)
print(f"{data.n} subjects, {data.cost_censored.mean():.0%} censored")
print(f"Weibull shape {point.survival_fit.shape_k:.3f}")

boot = bootstrap_pipeline(data, spec, BootstrapConfig(n_replicates=100, seed=2), point=point)
ci = boot.theta_ci()
for i, lam in enumerate(spec.lambdas):
    for j, prof in enumerate(spec.profiles):
        truth = true_theta_oracle(cfg, lam, prof["x"], 200_000)
        lo, hi = ci[i, j]
        print(f"lambda={lam:>4g}  x={prof['x']}  theta={point.thetas[i, j]:.3f}  "
              f"95% CI [{lo:.3f}, {hi:.3f}]  truth {truth:.3f}")
    test = coefficient_test(boot, ["x"], lam_index=i)
    print(f"  H0: no modification by x at lambda={lam:g}: p={test.p_value:.3f}")
